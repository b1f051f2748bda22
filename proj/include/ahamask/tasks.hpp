#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ahamask/head_mask.hpp"
#include "ahamask/rng.hpp"

namespace ahamask {

struct ModelWeights;

// Token layout shared by every task. Content symbols come first so that a
// symbol id doubles as its index in the alphabet.
namespace vocab {
inline constexpr int kAlphabet = 16;  // s0 .. s15
inline constexpr int kBos = 16;
inline constexpr int kSep = 17;   // end of prompt
inline constexpr int kEos = 18;   // end of response
inline constexpr int kPipe = 19;  // composite field separator
inline constexpr int kInstructionBase = 20;  // one per task kind, 20 .. 26
inline constexpr int kClass0 = 27;
inline constexpr int kClass1 = 28;
inline constexpr int kDigitBase = 29;  // digits 0 .. 9
inline constexpr int kUsed = 39;       // smallest vocabulary that covers the suite
}  // namespace vocab

enum class TaskKind { copy, rev, shift, maj, count, copy_maj, maj_copy };

struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  std::string name;
  int instruction_token = 0;
  int min_len = 8;
  int max_len = 24;

  bool composite() const noexcept {
    return kind == TaskKind::copy_maj || kind == TaskKind::maj_copy;
  }
  std::vector<int> target(std::span<const int> input) const;
};

// Looks up a task by name ("COPY", "REV", "SHIFT", "MAJ", "COUNT", "COPY|MAJ",
// "MAJ|COPY"); throws ConfigError for anything else.
TaskSpec task_by_name(std::string_view name);
const std::vector<TaskSpec>& all_tasks();
std::vector<TaskSpec> single_tasks();

struct Example {
  std::string task_name;
  std::vector<int> input_tokens;
  std::vector<int> instruction_tokens;  // empty for instruction-free examples
  std::vector<int> target_tokens;

  // [BOS] [instruction] input [SEP]. The instruction precedes the input so
  // deleting it leaves every input-to-response distance unchanged.
  std::vector<int> prompt() const;
  // prompt + target + [EOS]
  std::vector<int> full_sequence() const;
  friend bool operator==(const Example&, const Example&) = default;
};

Example generate_example(const TaskSpec& spec, Rng& rng, bool with_instruction = true);

// Training split draws from stream seed 2*seed, evaluation from 2*seed + 1.
enum class Split { train, eval };
std::uint64_t split_seed(std::uint64_t seed, Split split);

std::vector<Example> make_examples(const TaskSpec& spec, std::size_t n, std::uint64_t seed,
                                   Split split, bool with_instruction);

// Next-token training pair for one example: inputs are the sequence without
// its last token, labels the sequence shifted by one, and only positions that
// predict a response token (or the final EOS) carry loss.
struct TrainingRow {
  std::vector<int> inputs;
  std::vector<int> labels;
  std::vector<std::uint8_t> loss_mask;  // 1 = position carries loss
};
TrainingRow training_row(const Example& ex);

// ---- metrics ----

double accuracy(const std::vector<std::vector<int>>& preds,
                const std::vector<std::vector<int>>& targets);
std::size_t edit_distance(std::span<const int> a, std::span<const int> b);
double token_error_rate(std::span<const int> hyp, std::span<const int> ref);

struct IfrResult {
  double rate = 0.0;
  std::vector<std::size_t> following;  // indices of outputs that parse
};
// An output follows the composite format iff it holds exactly one separator
// with a non-empty field on each side.
bool follows_format(std::span<const int> output, int separator);
IfrResult ifr(const std::vector<std::vector<int>>& outputs, int separator);

// Coarse shape of a decoded response, used to trace staged behaviour as heads
// are switched on.
enum class OutputStage { empty, garbage, task_shaped, correct };
std::string_view stage_name(OutputStage s);
OutputStage classify_output(const TaskSpec& spec, const Example& ex,
                            std::span<const int> response);

// ---- evaluation ----

struct MaskSource {
  enum class Kind { instruction, none, random, trained, quantile, intersection };
  Kind kind = Kind::none;
  std::optional<HeadMask> mask;
  double q = 1.0;  // quantile sources only

  static MaskSource instruction() { return {Kind::instruction, std::nullopt, 1.0}; }
  static MaskSource none() { return {Kind::none, std::nullopt, 1.0}; }
  static MaskSource trained(HeadMask m) { return {Kind::trained, std::move(m), 1.0}; }
  static MaskSource random(HeadMask m) { return {Kind::random, std::move(m), 1.0}; }
  static MaskSource quantile(HeadMask m, double q) { return {Kind::quantile, std::move(m), q}; }
  static MaskSource intersection(HeadMask m) { return {Kind::intersection, std::move(m), 1.0}; }

  std::string label() const;
};

MaskSource::Kind mask_kind_from_name(std::string_view name);

struct EvalReport {
  std::string task;
  std::string mask_source;
  double accuracy = 0.0;
  double token_error_rate = 0.0;
  std::optional<double> ifr;                  // composite tasks only
  std::map<std::string, double> sub_metrics;  // composite fields, IFR-passing outputs only
  std::size_t active_head_count = 0;
  std::size_t n_examples = 0;

  // Decoded responses (EOS stripped) in example order; not serialised.
  std::vector<std::vector<int>> outputs;
  std::vector<OutputStage> stages;
};

struct EvalOptions {
  int max_new = 32;
};

// Greedy-decodes `n_examples` held-out examples of `spec`. The instruction
// token is present only for MaskSource::Kind::instruction; every other source
// decodes from the bare [BOS] input [SEP] prompt, masked when a mask is given.
EvalReport run_eval(const ModelWeights& model, const MaskSource& source, const TaskSpec& spec,
                    std::size_t n_examples, std::uint64_t seed, const EvalOptions& options = {});

}  // namespace ahamask
