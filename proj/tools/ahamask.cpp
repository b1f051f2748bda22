// Command-line driver: pretrain, train-mask, eval, analyze, export-corpus.
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "ahamask/analysis.hpp"
#include "ahamask/artifacts_io.hpp"
#include "ahamask/error.hpp"
#include "ahamask/experiment.hpp"

using namespace ahamask;
namespace fs = std::filesystem;

namespace {

enum ExitCode {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kMissingArtifact = 3,
  kUnconverged = 4,
  kNumericFailure = 5,
  kFormatError = 6,
};

struct Options {
  std::string config_path;
  std::string task = "COPY";
  double lambda = 0.0;
  std::uint64_t seed = 1;
  std::string mask_source = "trained";
  std::string mask_path;
  std::vector<double> q_grid;
  std::vector<std::uint64_t> seeds;
  std::string split = "eval";
  std::size_t n = 100;
  bool with_instruction = false;
  bool quiet = false;
};

void say(const Options& o, const std::string& msg) {
  if (!o.quiet) std::cerr << msg << "\n";
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

HeadMask trained_mask(const ArtifactLayout& layout, const Options& o, std::uint64_t seed) {
  return io::load_mask(layout.mask(o.task, o.lambda, seed));
}

void write_tracked(const ArtifactLayout& layout, const fs::path& path, const std::string& text,
                   const std::string& command) {
  io::write_file_atomic(path, text);
  record_artifact(layout, path, command);
}

int cmd_pretrain(const ExperimentConfig& cfg, const Options& o) {
  const ArtifactLayout layout{cfg.output_dir};
  if (fs::exists(layout.checkpoint())) {
    say(o, "checkpoint already present: " + layout.checkpoint().string());
    return kOk;
  }
  ensure_backbone(cfg, [&](const std::string& m) { say(o, m); });
  say(o, "wrote " + layout.checkpoint().string());
  return kOk;
}

int cmd_train_mask(const ExperimentConfig& cfg, const Options& o) {
  const ArtifactLayout layout{cfg.output_dir};
  if (!fs::exists(layout.checkpoint())) {
    throw MissingArtifactError("no backbone checkpoint at " + layout.checkpoint().string() +
                               "; run 'pretrain' first");
  }
  const ModelWeights w = io::load_checkpoint(layout.checkpoint());
  const MaskLogits logits = ensure_mask(cfg, w, o.task, o.lambda, o.seed, [&](const std::string& m) { say(o, m); });
  std::cout << infer_mask(logits).to_string() << "\n";
  return kOk;
}

int cmd_eval(const ExperimentConfig& cfg, const Options& o) {
  const ArtifactLayout layout{cfg.output_dir};
  if (!fs::exists(layout.checkpoint())) {
    throw MissingArtifactError("no backbone checkpoint at " + layout.checkpoint().string());
  }
  const ModelWeights w = io::load_checkpoint(layout.checkpoint());
  const TaskSpec spec = task_by_name(o.task);
  const MaskSource::Kind kind = mask_kind_from_name(o.mask_source);
  EvalOptions eo;
  eo.max_new = cfg.eval.max_new;

  auto load = [&]() {
    return o.mask_path.empty() ? trained_mask(layout, o, o.seed) : io::load_mask(o.mask_path);
  };
  std::vector<EvalReport> reports;
  std::string name = task_tag(o.task) + "_" + o.mask_source;
  switch (kind) {
    case MaskSource::Kind::instruction:
      reports.push_back(run_eval(w, MaskSource::instruction(), spec, cfg.eval.n_examples, cfg.eval.seed, eo));
      break;
    case MaskSource::Kind::none:
      reports.push_back(run_eval(w, MaskSource::none(), spec, cfg.eval.n_examples, cfg.eval.seed, eo));
      break;
    case MaskSource::Kind::trained:
      reports.push_back(run_eval(w, MaskSource::trained(load()), spec, cfg.eval.n_examples, cfg.eval.seed, eo));
      name += "_lambda" + lambda_tag(o.lambda) + "_seed" + std::to_string(o.seed);
      break;
    case MaskSource::Kind::intersection:
      reports.push_back(
          run_eval(w, MaskSource::intersection(load()), spec, cfg.eval.n_examples, cfg.eval.seed, eo));
      break;
    case MaskSource::Kind::random: {
      // Cardinality is read from the trained mask so the comparison is matched.
      const std::size_t k = load().popcount();
      Rng rng(o.seed);
      for (int i = 0; i < cfg.eval.random_masks; ++i) {
        HeadMask m = random_mask(w.config.n_layers, w.config.n_heads, k, rng);
        reports.push_back(run_eval(w, MaskSource::random(m), spec, cfg.eval.n_examples, cfg.eval.seed, eo));
      }
      name += "_seed" + std::to_string(o.seed);
      break;
    }
    case MaskSource::Kind::quantile: {
      const MaskLogits logits = io::load_logits(layout.logits(o.task, o.lambda, o.seed));
      for (double q : o.q_grid.empty() ? cfg.q_grid : o.q_grid) {
        reports.push_back(run_eval(w, MaskSource::quantile(quantile_mask(logits, q), q), spec,
                                   cfg.eval.n_examples, cfg.eval.seed, eo));
      }
      name += "_lambda" + lambda_tag(o.lambda) + "_seed" + std::to_string(o.seed);
      break;
    }
  }
  const fs::path out = layout.report(name + ".ndjson");
  io::write_report(out, reports);
  record_artifact(layout, out, "eval --task " + o.task + " --mask-source " + o.mask_source);
  for (const auto& r : reports) {
    std::cout << r.task << " " << r.mask_source << " accuracy=" << num(r.accuracy)
              << " ter=" << num(r.token_error_rate);
    if (r.ifr) std::cout << " ifr=" << num(*r.ifr);
    std::cout << " heads=" << r.active_head_count << "\n";
  }
  return kOk;
}

std::vector<std::uint64_t> seeds_of(const ExperimentConfig& cfg, const Options& o) {
  return o.seeds.empty() ? cfg.seeds : o.seeds;
}

int cmd_analyze(const ExperimentConfig& cfg, const Options& o, const std::string& what) {
  const ArtifactLayout layout{cfg.output_dir};
  const std::string lam = lambda_tag(o.lambda);
  if (what == "jaccard") {
    std::map<std::string, HeadMask> masks;
    for (const auto& t : cfg.tasks) masks[t] = io::load_mask(layout.mask(t, o.lambda, o.seed));
    const fs::path out = layout.analysis("jaccard_lambda" + lam + "_seed" + std::to_string(o.seed) + ".csv");
    write_tracked(layout, out, similarity_csv(similarity_matrix(masks)), "analyze jaccard");
    std::cout << io::read_text(out);
  } else if (what == "sweep") {
    const ModelWeights w = io::load_checkpoint(layout.checkpoint());
    const MaskLogits logits = io::load_logits(layout.logits(o.task, o.lambda, o.seed));
    const TaskSpec spec = task_by_name(o.task);
    EvalOptions eo;
    eo.max_new = cfg.eval.max_new;
    std::string decodes;
    const auto curve = sweep_quantiles(logits, o.q_grid.empty() ? cfg.q_grid : o.q_grid, [&](const HeadMask& m) {
      const EvalReport r = run_eval(w, MaskSource::trained(m), spec, cfg.eval.n_examples, cfg.eval.seed, eo);
      decodes += "heads=" + std::to_string(m.popcount()) + " first_output_stage=" +
                 std::string(r.stages.empty() ? "none" : stage_name(r.stages.front())) + "\n";
      return spec.kind == TaskKind::maj ? r.accuracy : r.token_error_rate;
    });
    const std::string stem = "sweep_" + task_tag(o.task) + "_lambda" + lam + "_seed" + std::to_string(o.seed);
    write_tracked(layout, layout.analysis(stem + ".csv"), sweep_csv(curve), "analyze sweep --task " + o.task);
    write_tracked(layout, layout.analysis(stem + ".stages.txt"), decodes, "analyze sweep --task " + o.task);
    std::cout << sweep_csv(curve);
  } else if (what == "intersect") {
    std::vector<HeadMask> masks;
    for (auto s : seeds_of(cfg, o)) masks.push_back(trained_mask(layout, o, s));
    const HeadMask m = intersect(masks);
    const fs::path out = layout.analysis("intersect_" + task_tag(o.task) + "_lambda" + lam + ".mask");
    io::save_mask(out, m);
    record_artifact(layout, out, "analyze intersect --task " + o.task);
    std::cout << m.to_string() << " popcount=" << m.popcount() << "\n";
  } else if (what == "diffratio") {
    const auto seeds = seeds_of(cfg, o);
    const HeadMask ref = trained_mask(layout, o, seeds.front());
    std::string csv = "seed,active_count,diff_ratio\n";
    for (auto s : seeds) {
      const HeadMask m = trained_mask(layout, o, s);
      csv += std::to_string(s) + "," + std::to_string(m.popcount()) + "," + num(diff_ratio(m, ref)) + "\n";
    }
    const fs::path out = layout.analysis("diffratio_" + task_tag(o.task) + "_lambda" + lam + ".csv");
    write_tracked(layout, out, csv, "analyze diffratio --task " + o.task);
    std::cout << csv;
  } else {
    throw ConfigError("unknown analysis '" + what + "'");
  }
  return kOk;
}

int cmd_export(const ExperimentConfig& cfg, const Options& o) {
  const ArtifactLayout layout{cfg.output_dir};
  Split split;
  if (o.split == "train") {
    split = Split::train;
  } else if (o.split == "eval") {
    split = Split::eval;
  } else {
    throw ConfigError("--split must be 'train' or 'eval'");
  }
  const auto ex = make_examples(task_by_name(o.task), o.n, o.seed, split, o.with_instruction);
  const fs::path out = layout.root / "corpus" /
                       (task_tag(o.task) + "_" + o.split + "_seed" + std::to_string(o.seed) + ".ndjson");
  write_tracked(layout, out, io::render_corpus(ex), "export-corpus --task " + o.task);
  std::cout << out.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-head mask experiments on a toy transformer"};
  app.require_subcommand(1);
  Options o;
  app.add_option("-c,--config", o.config_path, "experiment configuration (JSON)")->required();
  app.add_flag("-q,--quiet", o.quiet, "suppress progress messages");

  auto* pre = app.add_subcommand("pretrain", "train the backbone and write its checkpoint");
  auto* tm = app.add_subcommand("train-mask", "train a head mask for one task");
  tm->add_option("--task", o.task);
  tm->add_option("--lambda", o.lambda, "sparsity penalty");
  tm->add_option("--seed", o.seed);
  auto* ev = app.add_subcommand("eval", "evaluate a task under a mask source");
  ev->add_option("--task", o.task);
  ev->add_option("--mask-source", o.mask_source,
                 "instruction | none | trained | random | quantile | intersection");
  ev->add_option("--mask", o.mask_path, "explicit mask file (default: the trained mask)");
  ev->add_option("--lambda", o.lambda);
  ev->add_option("--seed", o.seed);
  ev->add_option("--q-grid", o.q_grid)->delimiter(',');
  auto* an = app.add_subcommand("analyze", "mask analytics");
  an->require_subcommand(1);
  for (const char* what : {"jaccard", "sweep", "intersect", "diffratio"}) {
    auto* s = an->add_subcommand(what);
    s->add_option("--task", o.task);
    s->add_option("--lambda", o.lambda);
    s->add_option("--seed", o.seed);
    s->add_option("--seeds", o.seeds)->delimiter(',');
    s->add_option("--q-grid", o.q_grid)->delimiter(',');
  }
  auto* ex = app.add_subcommand("export-corpus", "write generated examples as NDJSON");
  ex->add_option("--task", o.task);
  ex->add_option("--split", o.split, "train | eval");
  ex->add_option("--n", o.n);
  ex->add_option("--seed", o.seed);
  ex->add_flag("--with-instruction", o.with_instruction);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    const ExperimentConfig cfg = load_experiment_config(o.config_path);
    if (pre->parsed()) return cmd_pretrain(cfg, o);
    if (tm->parsed()) return cmd_train_mask(cfg, o);
    if (ev->parsed()) return cmd_eval(cfg, o);
    if (ex->parsed()) return cmd_export(cfg, o);
    for (auto* s : an->get_subcommands()) return cmd_analyze(cfg, o, s->get_name());
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const UnconvergedError& e) {
    std::cerr << e.what() << "\n";
    return kUnconverged;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const FormatError& e) {
    std::cerr << "malformed artifact: " << e.what() << "\n";
    return kFormatError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
