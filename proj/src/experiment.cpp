#include "ahamask/experiment.hpp"

#include <cstdio>
#include <set>

#include <json.hpp>

#include "ahamask/artifacts_io.hpp"
#include "ahamask/error.hpp"

namespace ahamask {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads known keys out of a JSON object, remembering which were used so the
// rest can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + path(key) + "' has the wrong type (" +
                        j_.at(key).dump() + ")");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }
  std::string path(const char* key) const { return name_.empty() ? key : name_ + "." + key; }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!used_.count(k)) throw ConfigError("config: unknown key '" + path(k.c_str()) + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> used_;
};

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section top(j, "");
  std::string out = c.output_dir.string();
  top.get("output_dir", out);
  c.output_dir = (fs::path(out).is_absolute() ? fs::path(out) : base_dir / out).lexically_normal();
  top.get("tasks", c.tasks);
  top.get("seeds", c.seeds);
  top.get("lambdas", c.lambdas);
  top.get("q_grid", c.q_grid);

  if (top.has("model")) {
    Section s(top.raw("model"), "model");
    ModelConfig& m = c.pretrain.model;
    s.get("n_layers", m.n_layers);
    s.get("n_heads", m.n_heads);
    s.get("d_model", m.d_model);
    s.get("d_ffn", m.d_ffn);
    s.get("vocab_size", m.vocab_size);
    s.get("max_seq_len", m.max_seq_len);
    s.get("seed", m.seed);
    s.finish();
  }
  if (top.has("pretrain")) {
    Section s(top.raw("pretrain"), "pretrain");
    PretrainConfig& p = c.pretrain;
    s.get("max_steps", p.max_steps);
    s.get("batch_size", p.batch_size);
    s.get("lr_peak", p.lr_peak);
    s.get("lr_min", p.lr_min);
    s.get("warmup_steps", p.warmup_steps);
    s.get("grad_clip", p.grad_clip);
    s.get("eval_every", p.eval_every);
    s.get("eval_examples", p.eval_examples);
    s.get("target_accuracy", p.target_accuracy);
    s.get("data_seed", p.data_seed);
    s.get("log_every", p.log_every);
    s.finish();
  }
  if (top.has("mask_train")) {
    Section s(top.raw("mask_train"), "mask_train");
    MaskTrainConfig& m = c.mask;
    s.get("tau_start", m.tau_start);
    s.get("tau_end", m.tau_end);
    s.get("tau_anneal_steps", m.tau_anneal_steps);
    s.get("lr_warmup_start", m.lr_warmup_start);
    s.get("lr_peak", m.lr_peak);
    s.get("lr_min", m.lr_min);
    s.get("warmup_steps", m.warmup_steps);
    s.get("total_steps", m.total_steps);
    s.get("batch_size", m.batch_size);
    s.get("init_mean", m.init_mean);
    s.get("init_std", m.init_std);
    s.get("log_every", m.log_every);
    std::string opt = m.optimizer == OptimizerKind::adam ? "adam" : "sgd";
    s.get("optimizer", opt);
    if (opt == "adam") {
      m.optimizer = OptimizerKind::adam;
    } else if (opt == "sgd") {
      m.optimizer = OptimizerKind::sgd;
    } else {
      throw ConfigError("config: mask_train.optimizer must be \"adam\" or \"sgd\", got \"" + opt + "\"");
    }
    s.finish();
  }
  if (top.has("eval")) {
    Section s(top.raw("eval"), "eval");
    s.get("n_examples", c.eval.n_examples);
    s.get("seed", c.eval.seed);
    s.get("max_new", c.eval.max_new);
    s.get("random_masks", c.eval.random_masks);
    s.finish();
  }
  top.finish();

  if (c.tasks.empty()) {
    for (const auto& t : all_tasks()) c.tasks.push_back(t.name);
  }
  for (const auto& t : c.tasks) task_by_name(t);
  if (c.seeds.empty()) throw ConfigError("config: 'seeds' must not be empty");
  for (double l : c.lambdas) {
    if (!(l >= 0.0)) throw ConfigError("config: lambdas must be nonnegative");
  }
  for (double q : c.q_grid) {
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("config: q_grid values must lie in [0, 1]");
  }
  if (c.model().vocab_size < vocab::kUsed) {
    throw ConfigError("config: model.vocab_size must be at least " + std::to_string(vocab::kUsed));
  }
  c.model().validate();
  c.pretrain.validate();
  c.mask.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const MissingArtifactError&) {
    throw ConfigError("config file not found: " + path.string());
  }
  return parse_experiment_config(text, path.parent_path());
}

std::string task_tag(const std::string& task) {
  std::string out = task;
  for (char& ch : out) {
    if (ch == '|') ch = '-';
  }
  return out;
}

std::string lambda_tag(double lambda) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", lambda);
  return buf;
}

namespace {

std::string stem(const std::string& task, double lambda, std::uint64_t seed) {
  return task_tag(task) + "_lambda" + lambda_tag(lambda) + "_seed" + std::to_string(seed);
}

}  // namespace

fs::path ArtifactLayout::mask(const std::string& task, double lambda, std::uint64_t seed) const {
  return root / "masks" / (stem(task, lambda, seed) + ".mask");
}
fs::path ArtifactLayout::logits(const std::string& task, double lambda, std::uint64_t seed) const {
  return root / "masks" / (stem(task, lambda, seed) + ".logits");
}
fs::path ArtifactLayout::train_log(const std::string& task, double lambda, std::uint64_t seed) const {
  return root / "masks" / (stem(task, lambda, seed) + ".train.ndjson");
}

void record_artifact(const ArtifactLayout& layout, const fs::path& file, const std::string& command) {
  json manifest = {{"files", json::object()}};
  if (fs::exists(layout.manifest())) {
    try {
      manifest = json::parse(io::read_text(layout.manifest()));
    } catch (const json::exception& e) {
      throw FormatError(FormatCode::bad_header, "manifest is not valid JSON: " + std::string(e.what()));
    }
  }
  manifest["files"][fs::relative(file, layout.root).generic_string()] = command;
  io::write_file_atomic(layout.manifest(), manifest.dump(2) + "\n");
}

ModelWeights ensure_backbone(const ExperimentConfig& cfg, const ProgressFn& progress) {
  const ArtifactLayout layout{cfg.output_dir};
  if (fs::exists(layout.checkpoint())) {
    ModelWeights w = io::load_checkpoint(layout.checkpoint());
    if (!(w.config == cfg.model())) {
      throw ConfigError("existing checkpoint " + layout.checkpoint().string() +
                        " was trained with a different model config");
    }
    return w;
  }
  std::vector<TaskSpec> tasks = all_tasks();
  std::string log_text;
  auto sink = [&](const PretrainLog& l) {
    json j{{"step", l.step}, {"loss", io::round_sig6(l.loss)}, {"lr", io::round_sig6(l.lr)}};
    if (!l.accuracy.empty()) {
      json acc = json::object();
      for (const auto& [k, v] : l.accuracy) acc[k] = io::round_sig6(v);
      j["accuracy"] = acc;
    }
    log_text += j.dump() + "\n";
    if (progress && !l.accuracy.empty()) progress("pretrain " + j.dump());
  };
  PretrainResult r = pretrain(tasks, cfg.pretrain, sink);
  io::write_file_atomic(layout.pretrain_log(), log_text);
  record_artifact(layout, layout.pretrain_log(), "pretrain");
  if (!r.converged) {
    std::string detail;
    for (const auto& [name, acc] : r.final_accuracy) detail += " " + name + "=" + std::to_string(acc);
    throw UnconvergedError("backbone unconverged after " + std::to_string(r.steps) +
                           " steps; held-out instructed accuracy:" + detail);
  }
  io::save_checkpoint(layout.checkpoint(), r.weights);
  record_artifact(layout, layout.checkpoint(), "pretrain");
  return std::move(r.weights);
}

MaskLogits ensure_mask(const ExperimentConfig& cfg, const ModelWeights& backbone,
                       const std::string& task, double lambda, std::uint64_t seed,
                       const ProgressFn& progress) {
  const ArtifactLayout layout{cfg.output_dir};
  const fs::path logits_path = layout.logits(task, lambda, seed);
  if (fs::exists(logits_path)) return io::load_logits(logits_path);

  MaskTrainConfig mc = cfg.mask;
  mc.lambda_penalty = lambda;
  mc.seed = seed;
  MaskTrainResult r = train_mask(backbone, task_by_name(task), mc);
  const std::string command = "train-mask --task " + task + " --lambda " + lambda_tag(lambda) +
                              " --seed " + std::to_string(seed);
  io::write_file_atomic(layout.train_log(task, lambda, seed), io::render_train_records(r.records));
  io::save_mask(layout.mask(task, lambda, seed), infer_mask(r.logits));
  io::save_logits(logits_path, r.logits);
  for (const auto& p : {layout.train_log(task, lambda, seed), layout.mask(task, lambda, seed), logits_path}) {
    record_artifact(layout, p, command);
  }
  if (progress) {
    progress("trained mask " + task + " lambda=" + lambda_tag(lambda) + " seed=" +
             std::to_string(seed) + ": " + infer_mask(r.logits).to_string());
  }
  return r.logits;
}

}  // namespace ahamask
