#include "ahamask/transformer.hpp"

#include <cmath>
#include <string>

#include "ahamask/error.hpp"
#include "ahamask/rng.hpp"

namespace ahamask {

using grad::Graph;
using grad::Tensor;
using grad::Var;

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (n_layers <= 0 || n_heads <= 0) fail("n_layers and n_heads must be positive");
  if (d_model <= 0 || d_ffn <= 0) fail("d_model and d_ffn must be positive");
  if (d_model % n_heads != 0) fail("d_model must equal n_heads * d_head");
  if (vocab_size <= 0 || max_seq_len <= 0) fail("vocab_size and max_seq_len must be positive");
  if (n_layers > 0xFFFF || n_heads > 0xFFFF) fail("n_layers and n_heads must fit in 16 bits");
}

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

Tensor filled(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = value;
  return t;
}

Tensor gaussian(std::vector<std::size_t> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace

ModelWeights ModelWeights::allocate(const ModelConfig& config) {
  config.validate();
  const std::size_t d = sz(config.d_model), dh = sz(config.d_head()), f = sz(config.d_ffn);
  ModelWeights w;
  w.config = config;
  w.token_embedding = Tensor({sz(config.vocab_size), d});
  w.pos_embedding = Tensor({sz(config.max_seq_len), d});
  w.layers.resize(sz(config.n_layers));
  for (auto& L : w.layers) {
    L.ln1_gain = Tensor({d});
    L.ln1_bias = Tensor({d});
    for (int h = 0; h < config.n_heads; ++h) {
      L.wq.emplace_back(std::vector<std::size_t>{d, dh});
      L.wk.emplace_back(std::vector<std::size_t>{d, dh});
      L.wv.emplace_back(std::vector<std::size_t>{d, dh});
      L.wo.emplace_back(std::vector<std::size_t>{dh, d});
    }
    L.ln2_gain = Tensor({d});
    L.ln2_bias = Tensor({d});
    L.ffn_w1 = Tensor({d, f});
    L.ffn_b1 = Tensor({f});
    L.ffn_w2 = Tensor({f, d});
    L.ffn_b2 = Tensor({d});
  }
  w.final_gain = Tensor({d});
  w.final_bias = Tensor({d});
  return w;
}

ModelWeights ModelWeights::initialize(const ModelConfig& config) {
  ModelWeights w = allocate(config);
  Rng rng(config.seed);
  const std::size_t d = sz(config.d_model), dh = sz(config.d_head()), f = sz(config.d_ffn);
  constexpr double base = 0.02;
  const double resid = base / std::sqrt(2.0 * config.n_layers);
  w.token_embedding = gaussian({sz(config.vocab_size), d}, rng, base);
  w.pos_embedding = gaussian({sz(config.max_seq_len), d}, rng, base);
  const double attn_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& L : w.layers) {
    L.ln1_gain = filled({d}, 1.0);
    for (int h = 0; h < config.n_heads; ++h) {
      L.wq[sz(h)] = gaussian({d, dh}, rng, attn_std);
      L.wk[sz(h)] = gaussian({d, dh}, rng, attn_std);
      L.wv[sz(h)] = gaussian({d, dh}, rng, attn_std);
      L.wo[sz(h)] = gaussian({dh, d}, rng, resid);
    }
    L.ln2_gain = filled({d}, 1.0);
    L.ffn_w1 = gaussian({d, f}, rng, attn_std);
    L.ffn_w2 = gaussian({f, d}, rng, resid);
  }
  w.final_gain = filled({d}, 1.0);
  return w;
}

std::vector<Tensor*> ModelWeights::parameters() {
  std::vector<Tensor*> out{&token_embedding, &pos_embedding};
  for (auto& L : layers) {
    out.push_back(&L.ln1_gain);
    out.push_back(&L.ln1_bias);
    for (auto* group : {&L.wq, &L.wk, &L.wv, &L.wo}) {
      for (auto& t : *group) out.push_back(&t);
    }
    for (Tensor* t : {&L.ln2_gain, &L.ln2_bias, &L.ffn_w1, &L.ffn_b1, &L.ffn_w2, &L.ffn_b2}) {
      out.push_back(t);
    }
  }
  out.push_back(&final_gain);
  out.push_back(&final_bias);
  return out;
}

std::vector<const Tensor*> ModelWeights::parameters() const {
  auto mut = const_cast<ModelWeights*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

void ModelWeights::set_trainable(bool on) {
  for (Tensor* t : parameters()) t->set_requires_grad(on);
}

bool ModelWeights::any_trainable() const {
  for (const Tensor* t : parameters()) {
    if (t->requires_grad()) return true;
  }
  return false;
}

bool ModelWeights::all_finite() const {
  for (const Tensor* t : parameters()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

bool operator==(const ModelWeights& a, const ModelWeights& b) {
  if (!(a.config == b.config)) return false;
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!(*pa[i] == *pb[i])) return false;
  }
  return true;
}

Var attention_head(Graph& g, const ModelWeights& model, Var x, int layer, int head) {
  const auto& L = model.layers.at(sz(layer));
  const std::size_t l = g.value(x).rows();
  if (l > sz(model.config.max_seq_len)) {
    throw LengthError("sequence of length " + std::to_string(l) + " exceeds max_seq_len " +
                      std::to_string(model.config.max_seq_len));
  }
  Var q = g.matmul(x, g.parameter(L.wq.at(sz(head))));
  Var k = g.matmul(x, g.parameter(L.wk.at(sz(head))));
  Var v = g.matmul(x, g.parameter(L.wv.at(sz(head))));
  Var scores = g.scale(g.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(model.config.d_head())));
  Var att = g.softmax_rows(scores, /*causal=*/true);
  return g.matmul(att, v);
}

Var masked_mha(Graph& g, const ModelWeights& model, Var x, int layer,
               std::optional<Var> mask) {
  const int h = model.config.n_heads;
  const auto& L = model.layers.at(sz(layer));
  const bool mask_grad = mask && g.needs_grad(*mask);
  if (mask) {
    const Tensor& m = g.value(*mask);
    if (m.size() != sz(model.config.n_layers) * sz(h)) {
      throw DimensionError("mask shape " + m.shape_string() + " does not match model");
    }
  }
  std::optional<Var> out;
  for (int j = 0; j < h; ++j) {
    const std::size_t flat = sz(layer) * sz(h) + sz(j);
    double m = 1.0;
    if (mask) m = g.value(*mask)[flat];
    if (!mask_grad && m == 0.0) continue;
    Var contribution = g.matmul(attention_head(g, model, x, layer, j), g.parameter(L.wo[sz(j)]));
    if (mask && (mask_grad || m != 1.0)) contribution = g.scale_by(contribution, *mask, flat);
    out = out ? g.add(*out, contribution) : contribution;
  }
  if (!out) {
    const Tensor& xv = g.value(x);
    return g.constant(Tensor({xv.rows(), xv.cols()}));
  }
  return *out;
}

Var forward(Graph& g, const ModelWeights& model, std::span<const int> tokens,
            std::optional<Var> mask) {
  const ModelConfig& c = model.config;
  if (tokens.empty()) throw LengthError("forward: empty token sequence");
  if (tokens.size() > sz(c.max_seq_len)) {
    throw LengthError("sequence of length " + std::to_string(tokens.size()) +
                      " exceeds max_seq_len " + std::to_string(c.max_seq_len));
  }
  std::vector<int> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  Var embed = g.parameter(model.token_embedding);
  Var x = g.add(g.embedding(embed, tokens), g.embedding(g.parameter(model.pos_embedding), positions));
  for (int i = 0; i < c.n_layers; ++i) {
    const auto& L = model.layers[sz(i)];
    Var h1 = g.layernorm(x, g.parameter(L.ln1_gain), g.parameter(L.ln1_bias));
    x = g.add(x, masked_mha(g, model, h1, i, mask));
    Var h2 = g.layernorm(x, g.parameter(L.ln2_gain), g.parameter(L.ln2_bias));
    Var f = g.gelu(g.add_row(g.matmul(h2, g.parameter(L.ffn_w1)), g.parameter(L.ffn_b1)));
    f = g.add_row(g.matmul(f, g.parameter(L.ffn_w2)), g.parameter(L.ffn_b2));
    x = g.add(x, f);
  }
  Var out = g.layernorm(x, g.parameter(model.final_gain), g.parameter(model.final_bias));
  return g.matmul_nt(out, embed);
}

Var mask_constant(Graph& g, const HeadMask& mask) {
  Tensor t({mask.size()});
  for (std::size_t i = 0; i < mask.size(); ++i) t[i] = mask.at(i) ? 1.0 : 0.0;
  return g.constant(std::move(t));
}

Var mask_constant(Graph& g, const SoftMask& mask) {
  return g.constant(Tensor({mask.values.size()}, mask.values));
}

namespace {

void check_mask_shape(const ModelWeights& model, int layers, int heads) {
  if (layers != model.config.n_layers || heads != model.config.n_heads) {
    throw DimensionError("mask shape " + std::to_string(layers) + "x" + std::to_string(heads) +
                         " does not match model " + std::to_string(model.config.n_layers) + "x" +
                         std::to_string(model.config.n_heads));
  }
}

}  // namespace

Tensor forward_logits(const ModelWeights& model, std::span<const int> tokens,
                      const HeadMask* mask) {
  Graph g;
  std::optional<Var> m;
  if (mask) {
    check_mask_shape(model, mask->layers(), mask->heads());
    m = mask_constant(g, *mask);
  }
  return g.value(forward(g, model, tokens, m));
}

Tensor forward_logits(const ModelWeights& model, std::span<const int> tokens,
                      const SoftMask& mask) {
  check_mask_shape(model, mask.layers, mask.heads);
  Graph g;
  return g.value(forward(g, model, tokens, mask_constant(g, mask)));
}

int argmax(std::span<const double> row) {
  int best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[sz(best)]) best = static_cast<int>(j);
  }
  return best;
}

namespace {

// Incremental forward pass for binary masks. Keys and values of earlier
// positions are cached; every arithmetic step mirrors forward() row by row
// through the same kernels, so each logits row equals the matching row of a
// full recomputation bit for bit.
class CachedDecoder {
 public:
  CachedDecoder(const ModelWeights& model, const HeadMask* mask) : m_(model), mask_(mask) {
    const ModelConfig& c = model.config;
    const std::size_t cells = sz(c.n_layers) * sz(c.n_heads);
    keys_.resize(cells);
    values_.resize(cells);
  }

  std::size_t size() const noexcept { return pos_; }

  // Appends `token` and returns the logits row it produces.
  const std::vector<double>& push(int token) {
    const ModelConfig& c = m_.config;
    const std::size_t d = sz(c.d_model), dh = sz(c.d_head()), ff = sz(c.d_ffn);
    const std::size_t V = sz(c.vocab_size), h = sz(c.n_heads);
    if (pos_ >= sz(c.max_seq_len)) {
      throw LengthError("sequence exceeds max_seq_len " + std::to_string(c.max_seq_len));
    }
    if (token < 0 || sz(token) >= V) throw ContractError("token id outside the vocabulary");
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c.d_head()));

    std::vector<double> x(d), h1(d), q(dh), y(dh), contrib(d), mha(d), f(ff), f2(d);
    const double* te = m_.token_embedding.data().data() + sz(token) * d;
    const double* pe = m_.pos_embedding.data().data() + pos_ * d;
    for (std::size_t j = 0; j < d; ++j) x[j] = te[j] + pe[j];
    const std::size_t n = pos_ + 1;
    std::vector<double> scores(n), att(n);

    for (std::size_t layer = 0; layer < sz(c.n_layers); ++layer) {
      const LayerWeights& L = m_.layers[layer];
      grad::kernels::layernorm_row(x.data(), L.ln1_gain.data().data(), L.ln1_bias.data().data(),
                                   h1.data(), nullptr, d, 1e-5);
      bool any = false;
      for (std::size_t j = 0; j < h; ++j) {
        const std::size_t cell = layer * h + j;
        if (mask_ && !mask_->at(cell)) continue;
        auto& K = keys_[cell];
        auto& Vc = values_[cell];
        K.resize(n * dh, 0.0);
        Vc.resize(n * dh, 0.0);
        std::fill(q.begin(), q.end(), 0.0);
        grad::kernels::gemm_nn(h1.data(), L.wq[j].data().data(), q.data(), 1, d, dh);
        grad::kernels::gemm_nn(h1.data(), L.wk[j].data().data(), K.data() + pos_ * dh, 1, d, dh);
        grad::kernels::gemm_nn(h1.data(), L.wv[j].data().data(), Vc.data() + pos_ * dh, 1, d, dh);
        std::fill(scores.begin(), scores.end(), 0.0);
        grad::kernels::gemm_nt(q.data(), K.data(), scores.data(), 1, dh, n);
        for (double& v : scores) v *= inv_sqrt;
        grad::kernels::softmax_row(scores.data(), att.data(), n);
        std::fill(y.begin(), y.end(), 0.0);
        grad::kernels::gemm_nn(att.data(), Vc.data(), y.data(), 1, n, dh);
        std::fill(contrib.begin(), contrib.end(), 0.0);
        grad::kernels::gemm_nn(y.data(), L.wo[j].data().data(), contrib.data(), 1, dh, d);
        if (!any) {
          mha = contrib;
          any = true;
        } else {
          for (std::size_t t = 0; t < d; ++t) mha[t] += contrib[t];
        }
      }
      if (!any) std::fill(mha.begin(), mha.end(), 0.0);
      for (std::size_t t = 0; t < d; ++t) x[t] += mha[t];

      grad::kernels::layernorm_row(x.data(), L.ln2_gain.data().data(), L.ln2_bias.data().data(),
                                   h1.data(), nullptr, d, 1e-5);
      std::fill(f.begin(), f.end(), 0.0);
      grad::kernels::gemm_nn(h1.data(), L.ffn_w1.data().data(), f.data(), 1, d, ff);
      for (std::size_t t = 0; t < ff; ++t) f[t] += L.ffn_b1[t];
      for (double& v : f) v = grad::kernels::gelu(v);
      std::fill(f2.begin(), f2.end(), 0.0);
      grad::kernels::gemm_nn(f.data(), L.ffn_w2.data().data(), f2.data(), 1, ff, d);
      for (std::size_t t = 0; t < d; ++t) f2[t] += L.ffn_b2[t];
      for (std::size_t t = 0; t < d; ++t) x[t] += f2[t];
    }
    grad::kernels::layernorm_row(x.data(), m_.final_gain.data().data(), m_.final_bias.data().data(),
                                 h1.data(), nullptr, d, 1e-5);
    logits_.assign(V, 0.0);
    grad::kernels::gemm_nt(h1.data(), m_.token_embedding.data().data(), logits_.data(), 1, d, V);
    for (double v : logits_) {
      if (!std::isfinite(v)) throw NumericError("decoder produced a non-finite logit");
    }
    ++pos_;
    return logits_;
  }

 private:
  const ModelWeights& m_;
  const HeadMask* mask_;
  std::size_t pos_ = 0;
  std::vector<std::vector<double>> keys_, values_;  // per (layer, head), position-major
  std::vector<double> logits_;
};

}  // namespace

std::vector<int> greedy_decode(const ModelWeights& model, const HeadMask* mask,
                               std::span<const int> prompt, int max_new, int stop_token) {
  if (prompt.empty()) throw ContractError("greedy_decode: prompt must be non-empty");
  if (mask) check_mask_shape(model, mask->layers(), mask->heads());
  if (prompt.size() > sz(model.config.max_seq_len)) {
    throw LengthError("prompt of length " + std::to_string(prompt.size()) + " exceeds max_seq_len " +
                      std::to_string(model.config.max_seq_len));
  }
  CachedDecoder dec(model, mask);
  const std::vector<double>* row = nullptr;
  for (int t : prompt) row = &dec.push(t);
  std::vector<int> out;
  const std::size_t limit = sz(model.config.max_seq_len);
  while (static_cast<int>(out.size()) < max_new) {
    const int tok = argmax(*row);
    out.push_back(tok);
    if (tok == stop_token || dec.size() >= limit) break;
    row = &dec.push(tok);
  }
  return out;
}

std::vector<int> greedy_decode_uncached(const ModelWeights& model, const HeadMask* mask,
                                        std::span<const int> prompt, int max_new, int stop_token) {
  if (prompt.empty()) throw ContractError("greedy_decode: prompt must be non-empty");
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> out;
  const std::size_t limit = sz(model.config.max_seq_len);
  while (static_cast<int>(out.size()) < max_new && seq.size() <= limit) {
    const Tensor logits = forward_logits(model, seq, mask);
    const std::size_t V = logits.cols();
    const int tok = argmax(logits.data().subspan((logits.rows() - 1) * V, V));
    out.push_back(tok);
    if (tok == stop_token || seq.size() == limit) break;
    seq.push_back(tok);
  }
  return out;
}

bool greedy_matches(const ModelWeights& model, const HeadMask* mask,
                    std::span<const int> prompt, std::span<const int> expected) {
  if (prompt.empty()) throw ContractError("greedy_matches: prompt must be non-empty");
  if (expected.empty()) return true;
  std::vector<int> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), expected.begin(), expected.end() - 1);
  if (seq.size() > sz(model.config.max_seq_len)) return false;
  const Tensor logits = forward_logits(model, seq, mask);
  const std::size_t V = logits.cols();
  for (std::size_t t = 0; t < expected.size(); ++t) {
    const std::size_t row = prompt.size() - 1 + t;
    if (argmax(logits.data().subspan(row * V, V)) != expected[t]) return false;
  }
  return true;
}

}  // namespace ahamask
