#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ahamask/head_mask.hpp"
#include "ahamask/maskgate.hpp"
#include "ahamask/tasks.hpp"
#include "ahamask/transformer.hpp"

namespace ahamask {

// Adaptive-moment optimiser over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<double> params, std::span<const double> grads, double lr);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

enum class OptimizerKind { adam, sgd };

struct MaskTrainConfig {
  double tau_start = 4.0;
  double tau_end = 0.5;
  int tau_anneal_steps = 3000;
  double lr_warmup_start = 1e-6;
  double lr_peak = 1e-2;
  double lr_min = 1e-4;
  int warmup_steps = 3000;
  int total_steps = 20000;
  double lambda_penalty = 0.0;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double init_mean = 4.0;
  double init_std = 0.02;
  int log_every = 10;
  OptimizerKind optimizer = OptimizerKind::adam;

  void validate() const;
};

struct TrainRecord {
  int step = 0;
  double loss_ce = 0.0;
  double penalty = 0.0;
  std::size_t active_head_count = 0;
  double tau = 0.0;
  double lr = 0.0;
  std::string status = "ok";  // "non-finite" on the diagnostic record of an aborted run
};

// Linear 4.0 -> 0.5 ramp over the anneal window, constant afterwards.
double temperature_at(int step, const MaskTrainConfig& cfg);
// Linear warm-up, then cosine decay to lr_min at total_steps; lr_min after.
double lr_at(int step, const MaskTrainConfig& cfg);

// L = L_CE + lambda * (number of active heads in the hardened mask).
double mask_objective(double cross_entropy, const HeadMask& hard, double lambda);

struct MaskTrainResult {
  MaskLogits logits;
  std::vector<TrainRecord> records;
};

using RecordSink = std::function<void(const TrainRecord&)>;

// Trains mask logits on instruction-free examples of `task` with the
// Gumbel-sigmoid straight-through estimator. The model must be frozen.
// Throws NumericError after emitting a diagnostic record if the loss stops
// being finite.
MaskTrainResult train_mask(const ModelWeights& model, const TaskSpec& task,
                           const MaskTrainConfig& cfg, const RecordSink& sink = {});

// Initial logits: N(init_mean, init_std) per head.
MaskLogits initial_logits(int layers, int heads, const MaskTrainConfig& cfg);

struct PretrainConfig {
  ModelConfig model;
  int max_steps = 6000;
  int batch_size = 16;
  double lr_peak = 3e-3;
  double lr_min = 1e-4;
  int warmup_steps = 200;
  double grad_clip = 1.0;
  int eval_every = 250;
  int eval_examples = 100;
  double target_accuracy = 0.99;
  std::uint64_t data_seed = 1;
  int log_every = 50;

  void validate() const;
};

struct PretrainLog {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::map<std::string, double> accuracy;  // filled on evaluation steps only
};

struct PretrainResult {
  ModelWeights weights;
  bool converged = false;
  int steps = 0;
  std::map<std::string, double> final_accuracy;
  std::vector<PretrainLog> log;
};

// Teacher-forced exact-match accuracy with the instruction present; equal to
// greedy-decoding accuracy by construction.
double instructed_accuracy(const ModelWeights& model, const TaskSpec& task, std::size_t n,
                           std::uint64_t seed);

// Trains every weight on the instruction-conditioned mixture of `tasks`
// (uniform over tasks) until each task's held-out instructed accuracy reaches
// the target or max_steps is hit. The result is returned either way.
PretrainResult pretrain(const std::vector<TaskSpec>& tasks, const PretrainConfig& cfg,
                        const std::function<void(const PretrainLog&)>& sink = {});

// As pretrain(), but throws UnconvergedError when the targets are missed.
ModelWeights pretrain_backbone(const std::vector<TaskSpec>& tasks, const PretrainConfig& cfg);

}  // namespace ahamask
