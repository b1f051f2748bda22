#include <doctest.h>

#include <cmath>

#include "ahamask/error.hpp"
#include "ahamask/trainer.hpp"

using namespace ahamask;

namespace {

ModelWeights tiny_model() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ffn = 16;
  c.vocab_size = vocab::kUsed;
  c.max_seq_len = 64;
  c.seed = 3;
  auto w = ModelWeights::initialize(c);
  w.set_trainable(false);
  return w;
}

MaskTrainConfig short_config() {
  MaskTrainConfig c;
  c.total_steps = 6;
  c.warmup_steps = 2;
  c.tau_anneal_steps = 3;
  c.batch_size = 2;
  c.log_every = 1;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("temperature schedule") {
  MaskTrainConfig c;
  CHECK(temperature_at(0, c) == 4.0);
  CHECK(temperature_at(1500, c) == doctest::Approx(2.25).epsilon(1e-15));
  CHECK(temperature_at(3000, c) == 0.5);
  CHECK(temperature_at(1000000, c) == 0.5);
  CHECK(std::abs(temperature_at(2999, c) + (temperature_at(2999, c) - temperature_at(2998, c)) -
                 temperature_at(3000, c)) <= 1e-12);
}

TEST_CASE("learning-rate schedule") {
  MaskTrainConfig c;
  CHECK(lr_at(0, c) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(lr_at(3000, c) == doctest::Approx(1e-2).epsilon(1e-12));
  CHECK(lr_at(c.total_steps, c) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(c.total_steps + 500, c) == doctest::Approx(1e-4).epsilon(1e-12));
  const double mid = lr_at((3000 + c.total_steps) / 2, c);
  CHECK(mid == doctest::Approx(1e-4 + 0.5 * (1e-2 - 1e-4)).epsilon(1e-9));
  // Continuity at the warm-up boundary: the ramp slope is tiny, so adjacent
  // steps differ by less than one ramp increment.
  const double slope = (1e-2 - 1e-6) / 3000.0;
  CHECK(std::abs(lr_at(3001, c) - lr_at(3000, c)) < slope);
  CHECK(std::abs(lr_at(2999, c) - lr_at(3000, c)) <= slope + 1e-12);
}

TEST_CASE("config validation") {
  MaskTrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.warmup_steps = c.total_steps + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = MaskTrainConfig{};
  c.tau_end = 5.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = MaskTrainConfig{};
  c.lambda_penalty = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("penalty arithmetic") {
  CHECK(mask_objective(0.731, HeadMask::all_ones(2, 2), 0.0) == 0.731);
  CHECK(mask_objective(0.0, HeadMask::all_ones(40, 40), 1e-4) == doctest::Approx(0.16).epsilon(1e-12));
  HeadMask m = HeadMask::zeros(40, 40);
  for (std::size_t i = 0; i < 640; ++i) m.set_flat(i, true);
  CHECK(mask_objective(0.0, m, 1e-5) == doctest::Approx(0.0064).epsilon(1e-12));
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
  Adam a(3);
  std::vector<double> p{1.0, -2.0, 0.5};
  const auto before = p;
  const std::vector<double> g(3, 0.0);
  a.step(p, g, 1e-2);
  CHECK(p == before);
}

TEST_CASE("initial logits activate every head") {
  const MaskLogits m = initial_logits(4, 4, MaskTrainConfig{});
  CHECK(infer_mask(m) == HeadMask::all_ones(4, 4));
  for (double v : m.values) CHECK(std::abs(v - 4.0) < 0.2);
}

TEST_CASE("mask training keeps the backbone frozen and is deterministic") {
  const ModelWeights w = tiny_model();
  const ModelWeights copy = w;
  const TaskSpec copy_task = task_by_name("COPY");
  const auto cfg = short_config();
  const auto a = train_mask(w, copy_task, cfg);
  const auto b = train_mask(w, copy_task, cfg);
  CHECK(w == copy);
  CHECK(a.logits == b.logits);
  CHECK(a.records.size() == 6);
  for (const auto& r : a.records) {
    CHECK(r.active_head_count <= 4);
    CHECK(r.penalty == 0.0);
    CHECK(r.status == "ok");
  }
  CHECK(a.records.front().tau == 4.0);
  CHECK(a.records.back().tau == 0.5);
}

TEST_CASE("penalty record matches the active count") {
  const ModelWeights w = tiny_model();
  auto cfg = short_config();
  cfg.lambda_penalty = 0.01;
  const auto r = train_mask(w, task_by_name("MAJ"), cfg);
  for (const auto& rec : r.records) {
    CHECK(rec.penalty == doctest::Approx(0.01 * static_cast<double>(rec.active_head_count)));
  }
}

TEST_CASE("zero-step training leaves all heads active") {
  const ModelWeights w = tiny_model();
  auto cfg = short_config();
  cfg.total_steps = 0;
  cfg.warmup_steps = 0;
  const auto r = train_mask(w, task_by_name("COPY"), cfg);
  CHECK(infer_mask(r.logits) == HeadMask::all_ones(2, 2));
  CHECK(r.records.empty());
}

TEST_CASE("mask training refuses a trainable backbone") {
  ModelWeights w = tiny_model();
  w.set_trainable(true);
  CHECK_THROWS_AS(train_mask(w, task_by_name("COPY"), short_config()), ContractError);
}

TEST_CASE("pretraining is deterministic and reports non-convergence") {
  PretrainConfig pc;
  pc.model = tiny_model().config;
  pc.max_steps = 3;
  pc.batch_size = 2;
  pc.warmup_steps = 1;
  pc.eval_every = 3;
  pc.eval_examples = 2;
  const std::vector<TaskSpec> tasks{task_by_name("COPY")};
  const auto a = pretrain(tasks, pc);
  const auto b = pretrain(tasks, pc);
  CHECK(a.weights == b.weights);
  CHECK_FALSE(a.converged);
  CHECK_THROWS_AS(pretrain_backbone(tasks, pc), UnconvergedError);
}
