#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ahamask/maskgate.hpp"
#include "ahamask/trainer.hpp"
#include "ahamask/transformer.hpp"

namespace ahamask {

struct EvalSettings {
  std::size_t n_examples = 100;
  std::uint64_t seed = 1000;
  int max_new = 32;
  int random_masks = 20;
};

// Everything an experiment needs, read from one JSON file. See README for
// the key set; unknown keys are rejected so typos fail loudly.
struct ExperimentConfig {
  std::filesystem::path output_dir = "runs/default";
  PretrainConfig pretrain;  // pretrain.model holds the model config
  MaskTrainConfig mask;
  std::vector<std::string> tasks;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> lambdas{0.0, 1e-5, 1e-4};
  std::vector<double> q_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  EvalSettings eval;

  const ModelConfig& model() const noexcept { return pretrain.model; }
};

// Relative output_dir values are resolved against `base_dir`.
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// File naming inside an experiment directory.
struct ArtifactLayout {
  std::filesystem::path root;

  std::filesystem::path checkpoint() const { return root / "backbone.ckpt"; }
  std::filesystem::path pretrain_log() const { return root / "pretrain_log.ndjson"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path mask(const std::string& task, double lambda, std::uint64_t seed) const;
  std::filesystem::path logits(const std::string& task, double lambda, std::uint64_t seed) const;
  std::filesystem::path train_log(const std::string& task, double lambda, std::uint64_t seed) const;
  std::filesystem::path report(const std::string& name) const { return root / "reports" / name; }
  std::filesystem::path analysis(const std::string& name) const { return root / "analysis" / name; }
};

// File-name-safe task tag ("COPY|MAJ" -> "COPY-MAJ").
std::string task_tag(const std::string& task);
std::string lambda_tag(double lambda);

// manifest.json maps every produced file (relative to the experiment root)
// to the command that produced it. Entries are replaced, never duplicated.
void record_artifact(const ArtifactLayout& layout, const std::filesystem::path& file,
                     const std::string& command);

using ProgressFn = std::function<void(const std::string&)>;

// Loads the checkpoint if present, otherwise pretrains, saves it and logs
// progress. Throws UnconvergedError when pretraining misses its targets.
ModelWeights ensure_backbone(const ExperimentConfig& cfg, const ProgressFn& progress = {});

// Loads cached logits for (task, lambda, seed) or trains and saves them
// together with the binary mask and the training log.
MaskLogits ensure_mask(const ExperimentConfig& cfg, const ModelWeights& backbone,
                       const std::string& task, double lambda, std::uint64_t seed,
                       const ProgressFn& progress = {});

}  // namespace ahamask
