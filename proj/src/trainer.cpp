#include "ahamask/trainer.hpp"

#include <cmath>
#include <numbers>

#include "ahamask/error.hpp"

namespace ahamask {

using grad::Graph;
using grad::Tensor;

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw DimensionError("Adam: parameter/gradient size mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
  }
}

void MaskTrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("mask training config: " + m); };
  if (!(tau_start > 0.0 && tau_end > 0.0)) fail("temperatures must be positive");
  if (tau_end > tau_start) fail("tau_end must not exceed tau_start");
  if (tau_anneal_steps < 0) fail("tau_anneal_steps must be nonnegative");
  if (!(lr_warmup_start > 0.0 && lr_peak > 0.0 && lr_min > 0.0)) fail("rates must be positive");
  if (total_steps < 0 || warmup_steps < 0) fail("step counts must be nonnegative");
  if (warmup_steps > total_steps) fail("warmup_steps must not exceed total_steps");
  if (!(lambda_penalty >= 0.0)) fail("lambda_penalty must be nonnegative");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (!(init_std >= 0.0)) fail("init_std must be nonnegative");
  if (log_every <= 0) fail("log_every must be positive");
}

double temperature_at(int step, const MaskTrainConfig& cfg) {
  if (step < 0) throw ParameterError("temperature_at: negative step");
  if (cfg.tau_anneal_steps == 0 || step >= cfg.tau_anneal_steps) return cfg.tau_end;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.tau_anneal_steps);
  return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac;
}

namespace {

double warmup_cosine(int step, int warmup, int total, double start, double peak, double floor) {
  if (step < warmup) {
    const double frac = static_cast<double>(step) / static_cast<double>(warmup);
    return start + (peak - start) * frac;
  }
  if (step >= total) return floor;
  if (total == warmup) return peak;
  const double frac =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace

double lr_at(int step, const MaskTrainConfig& cfg) {
  if (step < 0) throw ParameterError("lr_at: negative step");
  return warmup_cosine(step, cfg.warmup_steps, cfg.total_steps, cfg.lr_warmup_start, cfg.lr_peak,
                       cfg.lr_min);
}

double mask_objective(double cross_entropy, const HeadMask& hard, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("mask_objective: lambda must be nonnegative");
  if (lambda == 0.0) return cross_entropy;
  return cross_entropy + lambda * static_cast<double>(hard.popcount());
}

MaskLogits initial_logits(int layers, int heads, const MaskTrainConfig& cfg) {
  Rng rng(cfg.seed);
  MaskLogits m{layers, heads, {}, cfg.seed};
  m.values.resize(static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads));
  for (double& v : m.values) v = rng.normal(cfg.init_mean, cfg.init_std);
  return m;
}

MaskTrainResult train_mask(const ModelWeights& model, const TaskSpec& task,
                           const MaskTrainConfig& cfg, const RecordSink& sink) {
  cfg.validate();
  if (model.any_trainable()) {
    throw ContractError("train_mask: backbone weights must be frozen (requires_grad off)");
  }
  const int L = model.config.n_layers, H = model.config.n_heads;
  MaskTrainResult result;
  result.logits = initial_logits(L, H, cfg);
  MaskLogits& M = result.logits;

  // Independent streams for Gumbel noise and training data.
  Rng noise_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  Rng data_rng(split_seed(cfg.seed, Split::train));
  Adam adam(M.size());

  auto emit = [&](const TrainRecord& r) {
    result.records.push_back(r);
    if (sink) sink(r);
  };

  for (int step = 0; step < cfg.total_steps; ++step) {
    const double tau = temperature_at(step, cfg);
    const double lr = lr_at(step, cfg);
    const GumbelNoise noise = sample_gumbel(noise_rng, L, H);
    const SoftMask soft = soft_mask(M, noise, tau);
    const HeadMask hard = harden(soft);

    Tensor hard_t({hard.size()}, /*requires_grad=*/true);
    for (std::size_t i = 0; i < hard.size(); ++i) hard_t[i] = hard.at(i) ? 1.0 : 0.0;
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
    double ce = 0.0;
    try {
      for (int b = 0; b < cfg.batch_size; ++b) {
        const TrainingRow row = training_row(generate_example(task, data_rng, false));
        Graph g;
        auto logits = forward(g, model, row.inputs, g.parameter(hard_t));
        auto loss = g.cross_entropy(logits, row.labels, row.loss_mask);
        ce += g.value(loss)[0] * inv_batch;
        g.backward(g.scale(loss, inv_batch));
      }
    } catch (const NumericError& e) {
      TrainRecord diag{step, std::nan(""), 0.0, hard.popcount(), tau, lr, "non-finite"};
      emit(diag);
      throw NumericError("train_mask aborted at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(ce)) {
      emit(TrainRecord{step, ce, 0.0, hard.popcount(), tau, lr, "non-finite"});
      throw NumericError("train_mask aborted at step " + std::to_string(step) +
                         ": non-finite loss");
    }

    std::vector<double> dhard(hard_t.grad().begin(), hard_t.grad().end());
    // d(lambda * sum m)/dm = lambda on every entry, grafted like the CE term.
    for (double& v : dhard) v += cfg.lambda_penalty;
    const std::vector<double> dM = ste_grad(dhard, soft, tau);
    if (cfg.optimizer == OptimizerKind::adam) {
      adam.step(M.values, dM, lr);
    } else {
      for (std::size_t i = 0; i < M.size(); ++i) M.values[i] -= lr * dM[i];
    }

    if (step % cfg.log_every == 0 || step + 1 == cfg.total_steps) {
      const double total = mask_objective(ce, hard, cfg.lambda_penalty);
      emit(TrainRecord{step, ce, total - ce, hard.popcount(), tau, lr, "ok"});
    }
  }
  return result;
}

void PretrainConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& m) { throw ConfigError("pretraining config: " + m); };
  if (max_steps <= 0 || batch_size <= 0) fail("max_steps and batch_size must be positive");
  if (!(lr_peak > 0.0 && lr_min > 0.0)) fail("rates must be positive");
  if (warmup_steps < 0 || warmup_steps > max_steps) fail("warmup_steps out of range");
  if (eval_every <= 0 || eval_examples <= 0) fail("evaluation cadence must be positive");
  if (!(target_accuracy >= 0.0 && target_accuracy <= 1.0)) fail("target_accuracy in [0, 1]");
  if (model.vocab_size < vocab::kUsed) fail("vocab_size too small for the task suite");
}

double instructed_accuracy(const ModelWeights& model, const TaskSpec& task, std::size_t n,
                           std::uint64_t seed) {
  const auto examples = make_examples(task, n, seed, Split::eval, true);
  std::size_t hits = 0;
  for (const Example& ex : examples) {
    std::vector<int> expected = ex.target_tokens;
    expected.push_back(vocab::kEos);
    hits += greedy_matches(model, nullptr, ex.prompt(), expected) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

PretrainResult pretrain(const std::vector<TaskSpec>& tasks, const PretrainConfig& cfg,
                        const std::function<void(const PretrainLog&)>& sink) {
  cfg.validate();
  if (tasks.empty()) throw ConfigError("pretraining needs at least one task");
  PretrainResult res;
  res.weights = ModelWeights::initialize(cfg.model);
  ModelWeights& w = res.weights;
  w.set_trainable(true);
  auto params = w.parameters();
  std::vector<Adam> adams;
  for (Tensor* p : params) adams.emplace_back(p->size());

  Rng data_rng(split_seed(cfg.data_seed, Split::train));
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);

  auto evaluate = [&](PretrainLog& log) {
    w.set_trainable(false);
    bool all = true;
    for (const auto& t : tasks) {
      const double acc = instructed_accuracy(w, t, static_cast<std::size_t>(cfg.eval_examples),
                                             cfg.data_seed);
      log.accuracy[t.name] = acc;
      all = all && acc >= cfg.target_accuracy;
    }
    w.set_trainable(true);
    return all;
  };

  for (int step = 0; step < cfg.max_steps; ++step) {
    for (Tensor* p : params) p->zero_grad();
    double loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const TaskSpec& t = tasks[data_rng.below(tasks.size())];
      const TrainingRow row = training_row(generate_example(t, data_rng, true));
      Graph g;
      auto logits = forward(g, w, row.inputs);
      auto l = g.cross_entropy(logits, row.labels, row.loss_mask);
      loss += g.value(l)[0] * inv_batch;
      g.backward(g.scale(l, inv_batch));
    }
    double norm2 = 0.0;
    for (Tensor* p : params) {
      for (double v : p->grad()) norm2 += v * v;
    }
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw NumericError("pretraining gradient is not finite");
    const double clip = norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;
    const double lr = warmup_cosine(step, cfg.warmup_steps, cfg.max_steps, cfg.lr_peak * 0.01,
                                    cfg.lr_peak, cfg.lr_min);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto gspan = params[i]->grad();
      if (clip != 1.0) {
        for (double& v : gspan) v *= clip;
      }
      adams[i].step(params[i]->data(), gspan, lr);
    }
    res.steps = step + 1;

    const bool eval_now = (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.max_steps;
    if (eval_now || step % cfg.log_every == 0) {
      PretrainLog log{step, loss, lr, {}};
      bool done = false;
      if (eval_now) {
        done = evaluate(log);
        res.final_accuracy = log.accuracy;
      }
      res.log.push_back(log);
      if (sink) sink(log);
      if (done) {
        res.converged = true;
        break;
      }
    }
  }
  w.set_trainable(false);
  return res;
}

ModelWeights pretrain_backbone(const std::vector<TaskSpec>& tasks, const PretrainConfig& cfg) {
  PretrainResult r = pretrain(tasks, cfg);
  if (!r.converged) {
    std::string detail;
    for (const auto& [name, acc] : r.final_accuracy) {
      detail += " " + name + "=" + std::to_string(acc);
    }
    throw UnconvergedError("backbone unconverged after " + std::to_string(r.steps) +
                           " steps; held-out instructed accuracy:" + detail);
  }
  return std::move(r.weights);
}

}  // namespace ahamask
