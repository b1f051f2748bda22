#include <doctest.h>

#include <cmath>

#include "ahamask/error.hpp"
#include "ahamask/transformer.hpp"
#include "fd_check.hpp"

using namespace ahamask;
using namespace ahamask::grad;

namespace {

ModelConfig tiny_config(std::uint64_t seed) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ffn = 12;
  c.vocab_size = 11;
  c.max_seq_len = 8;
  c.seed = seed;
  return c;
}

std::vector<int> random_tokens(Rng& rng, std::size_t n, int vocab) {
  std::vector<int> t(n);
  for (auto& x : t) x = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
  return t;
}

// Scales every parameter up so that finite differences see curvature in all
// of them rather than a near-linear model.
void spread(ModelWeights& w, Rng& rng) {
  for (Tensor* t : w.parameters()) {
    for (double& v : t->data()) v += 0.5 * (rng.uniform01() - 0.5);
  }
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.d_head() == 32);
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("sequence longer than max_seq_len is a length error") {
  auto w = ModelWeights::initialize(tiny_config(1));
  std::vector<int> t(9, 1);
  CHECK_THROWS_AS(forward_logits(w, t), LengthError);
}

TEST_CASE("mask shape mismatch is rejected") {
  auto w = ModelWeights::initialize(tiny_config(1));
  std::vector<int> t{1, 2, 3};
  HeadMask bad(3, 2);
  CHECK_THROWS_AS(forward_logits(w, t, &bad), DimensionError);
}

TEST_CASE("all-ones mask reproduces the unmasked forward") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    auto w = ModelWeights::initialize(tiny_config(static_cast<std::uint64_t>(trial)));
    spread(w, rng);
    const auto t = random_tokens(rng, 1 + rng.below(8), 11);
    const HeadMask ones = HeadMask::all_ones(2, 2);
    const Tensor a = forward_logits(w, t);
    const Tensor b = forward_logits(w, t, &ones);
    SoftMask soft{2, 2, std::vector<double>(4, 1.0)};
    const Tensor c = forward_logits(w, t, soft);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i] == b[i]);
      CHECK(std::abs(a[i] - c[i]) <= 1e-12);
    }
  }
}

TEST_CASE("binary and real-valued paths agree on arbitrary masks") {
  Rng rng(78);
  for (int trial = 0; trial < 50; ++trial) {
    auto w = ModelWeights::initialize(tiny_config(100 + static_cast<std::uint64_t>(trial)));
    const auto t = random_tokens(rng, 6, 11);
    HeadMask m(2, 2);
    for (std::size_t i = 0; i < 4; ++i) m.set_flat(i, rng.below(2) == 1);
    SoftMask soft{2, 2, {}};
    for (std::size_t i = 0; i < 4; ++i) soft.values.push_back(m.at(i) ? 1.0 : 0.0);
    const Tensor a = forward_logits(w, t, &m);
    const Tensor b = forward_logits(w, t, soft);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
  }
}

TEST_CASE("a masked head does not influence the output") {
  Rng rng(9);
  auto w = ModelWeights::initialize(tiny_config(3));
  const auto t = random_tokens(rng, 6, 11);
  HeadMask m = HeadMask::all_ones(2, 2);
  m.set(1, 0, false);
  const Tensor before = forward_logits(w, t, &m);
  for (double& v : w.layers[1].wv[0].data()) v *= -3.0;
  for (double& v : w.layers[1].wq[0].data()) v += 0.25;
  const Tensor after = forward_logits(w, t, &m);
  CHECK(before == after);
  const Tensor unmasked = forward_logits(w, t);
  CHECK_FALSE(unmasked == after);
}

TEST_CASE("finite-difference oracle through the whole model") {
  Rng rng(123);
  for (int trial = 0; trial < 5; ++trial) {
    auto w = ModelWeights::initialize(tiny_config(500 + static_cast<std::uint64_t>(trial)));
    spread(w, rng);
    w.set_trainable(true);
    const auto t = random_tokens(rng, 6, 11);
    std::vector<int> targets(t.begin() + 1, t.end());
    targets.push_back(3);
    std::vector<std::uint8_t> lm{0, 1, 1, 0, 1, 1};
    Tensor mask({2, 2}, {0.9, 0.2, 0.6, 0.35}, true);

    auto loss = [&](Graph& g) {
      auto m = g.parameter(mask);
      return g.cross_entropy(forward(g, w, t, m), targets, lm);
    };
    for (Tensor* p : w.parameters()) p->zero_grad();
    mask.zero_grad();
    {
      Graph g;
      g.backward(loss(g));
    }
    std::vector<Tensor*> all = w.parameters();
    all.push_back(&mask);
    double worst = 0.0;
    for (Tensor* p : all) {
      const std::vector<double> analytic(p->grad().begin(), p->grad().end());
      double d2 = 0.0, a2 = 0.0, n2 = 0.0;
      for (std::size_t i = 0; i < p->size(); ++i) {
        const double keep = (*p)[i];
        (*p)[i] = keep + 1e-6;
        double up, down;
        {
          Graph g;
          up = g.value(loss(g))[0];
        }
        (*p)[i] = keep - 1e-6;
        {
          Graph g;
          down = g.value(loss(g))[0];
        }
        (*p)[i] = keep;
        const double num = (up - down) / 2e-6;
        d2 += (num - analytic[i]) * (num - analytic[i]);
        a2 += analytic[i] * analytic[i];
        n2 += num * num;
      }
      if (a2 + n2 > 0) worst = std::max(worst, std::sqrt(d2) / (std::sqrt(a2) + std::sqrt(n2)));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("frozen model: only the mask receives gradient") {
  auto w = ModelWeights::initialize(tiny_config(4));
  w.set_trainable(false);
  Tensor mask({2, 2}, {1, 0, 1, 1}, true);
  std::vector<int> t{1, 2, 3, 4};
  std::vector<int> y{2, 3, 4, 5};
  std::vector<std::uint8_t> lm{1, 1, 1, 1};
  Graph g;
  g.backward(g.cross_entropy(forward(g, w, t, g.parameter(mask)), y, lm));
  for (const Tensor* p : w.parameters()) CHECK_FALSE(p->has_grad());
  bool any = false;
  for (double v : mask.grad()) any = any || v != 0.0;
  CHECK(any);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  std::vector<double> r{0.1, 0.7, 0.7, -1};
  CHECK(argmax(r) == 1);
}

TEST_CASE("greedy decoding") {
  auto w = ModelWeights::initialize(tiny_config(6));
  std::vector<int> prompt{1, 2, 3};
  const auto out = greedy_decode(w, nullptr, prompt, 4, 10);
  CHECK(out.size() <= 4);
  CHECK(greedy_matches(w, nullptr, prompt, out));
  if (!out.empty()) {
    auto wrong = out;
    wrong.back() = (wrong.back() + 1) % 11;
    CHECK_FALSE(greedy_matches(w, nullptr, prompt, wrong));
  }

  // Force the stop token: a huge embedding for token 10 makes it dominate
  // every tied-output logit.
  auto forced = w;
  for (std::size_t j = 0; j < 8; ++j) forced.final_bias[j] = 0.0;
  for (std::size_t j = 0; j < 8; ++j) forced.final_gain[j] = 0.0;
  for (std::size_t j = 0; j < 8; ++j) forced.final_bias[j] = 1.0;
  for (std::size_t j = 0; j < 8; ++j) forced.token_embedding(10, j) = 5.0;
  const auto stopped = greedy_decode(forced, nullptr, prompt, 4, 10);
  CHECK(stopped == std::vector<int>{10});
}

TEST_CASE("teacher-forced check matches incremental decoding") {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    auto w = ModelWeights::initialize(tiny_config(900 + static_cast<std::uint64_t>(trial)));
    spread(w, rng);
    HeadMask m(2, 2);
    for (std::size_t i = 0; i < 4; ++i) m.set_flat(i, rng.below(2) == 1);
    const auto prompt = random_tokens(rng, 3, 11);
    const auto out = greedy_decode(w, &m, prompt, 5, 0);
    CHECK(greedy_matches(w, &m, prompt, out));
  }
}

TEST_CASE("initialisation is deterministic") {
  CHECK(ModelWeights::initialize(tiny_config(5)) == ModelWeights::initialize(tiny_config(5)));
  CHECK_FALSE(ModelWeights::initialize(tiny_config(5)) == ModelWeights::initialize(tiny_config(6)));
}

TEST_CASE("cached decoding equals full recomputation") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    auto w = ModelWeights::initialize(tiny_config(1300 + static_cast<std::uint64_t>(trial)));
    spread(w, rng);
    HeadMask m(2, 2);
    for (std::size_t i = 0; i < 4; ++i) m.set_flat(i, rng.below(3) != 0);
    const auto prompt = random_tokens(rng, 1 + rng.below(4), 11);
    const int stop = static_cast<int>(rng.below(11));
    for (const HeadMask* mask : std::vector<const HeadMask*>{nullptr, &m}) {
      CHECK(greedy_decode(w, mask, prompt, 10, stop) == greedy_decode_uncached(w, mask, prompt, 10, stop));
    }
  }
}
