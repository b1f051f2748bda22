#include "ahamask/tasks.hpp"

#include <algorithm>
#include <numeric>

#include "ahamask/error.hpp"
#include "ahamask/transformer.hpp"

namespace ahamask {

namespace {

bool is_content(int t) { return t >= 0 && t < vocab::kAlphabet; }
bool is_digit(int t) { return t >= vocab::kDigitBase && t < vocab::kDigitBase + 10; }
bool is_class(int t) { return t == vocab::kClass0 || t == vocab::kClass1; }

std::vector<int> majority_target(std::span<const int> input) {
  // Symbols s0..s7 form class 0, s8..s15 class 1; ties go to class 0.
  const auto low = std::count_if(input.begin(), input.end(),
                                 [](int t) { return t < vocab::kAlphabet / 2; });
  const auto high = static_cast<std::ptrdiff_t>(input.size()) - low;
  return {low >= high ? vocab::kClass0 : vocab::kClass1};
}

std::vector<int> count_target(std::span<const int> input) {
  const auto n = std::count(input.begin(), input.end(), 0);
  std::vector<int> out;
  for (char c : std::to_string(n)) out.push_back(vocab::kDigitBase + (c - '0'));
  return out;
}

std::vector<TaskSpec> build_roster() {
  const std::pair<TaskKind, const char*> kinds[] = {
      {TaskKind::copy, "COPY"},         {TaskKind::rev, "REV"},
      {TaskKind::shift, "SHIFT"},       {TaskKind::maj, "MAJ"},
      {TaskKind::count, "COUNT"},       {TaskKind::copy_maj, "COPY|MAJ"},
      {TaskKind::maj_copy, "MAJ|COPY"},
  };
  std::vector<TaskSpec> out;
  int i = 0;
  for (const auto& [kind, name] : kinds) {
    TaskSpec s;
    s.kind = kind;
    s.name = name;
    s.instruction_token = vocab::kInstructionBase + i++;
    out.push_back(s);
  }
  return out;
}

}  // namespace

std::vector<int> TaskSpec::target(std::span<const int> input) const {
  for (int t : input) {
    if (!is_content(t)) throw ContractError("task input must consist of content symbols");
  }
  switch (kind) {
    case TaskKind::copy:
      return {input.begin(), input.end()};
    case TaskKind::rev:
      return {input.rbegin(), input.rend()};
    case TaskKind::shift: {
      std::vector<int> out(input.begin(), input.end());
      for (int& t : out) t = (t + 1) % vocab::kAlphabet;
      return out;
    }
    case TaskKind::maj:
      return majority_target(input);
    case TaskKind::count:
      return count_target(input);
    case TaskKind::copy_maj: {
      std::vector<int> out(input.begin(), input.end());
      out.push_back(vocab::kPipe);
      out.push_back(majority_target(input)[0]);
      return out;
    }
    case TaskKind::maj_copy: {
      std::vector<int> out = majority_target(input);
      out.push_back(vocab::kPipe);
      out.insert(out.end(), input.begin(), input.end());
      return out;
    }
  }
  throw ContractError("unknown task kind");
}

const std::vector<TaskSpec>& all_tasks() {
  static const std::vector<TaskSpec> roster = build_roster();
  return roster;
}

std::vector<TaskSpec> single_tasks() {
  std::vector<TaskSpec> out;
  for (const auto& t : all_tasks()) {
    if (!t.composite()) out.push_back(t);
  }
  return out;
}

TaskSpec task_by_name(std::string_view name) {
  for (const auto& t : all_tasks()) {
    if (t.name == name) return t;
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

std::vector<int> Example::prompt() const {
  std::vector<int> p{vocab::kBos};
  p.insert(p.end(), instruction_tokens.begin(), instruction_tokens.end());
  p.insert(p.end(), input_tokens.begin(), input_tokens.end());
  p.push_back(vocab::kSep);
  return p;
}

std::vector<int> Example::full_sequence() const {
  std::vector<int> s = prompt();
  s.insert(s.end(), target_tokens.begin(), target_tokens.end());
  s.push_back(vocab::kEos);
  return s;
}

Example generate_example(const TaskSpec& spec, Rng& rng, bool with_instruction) {
  Example ex;
  ex.task_name = spec.name;
  const int len = rng.uniform_int(spec.min_len, spec.max_len);
  ex.input_tokens.resize(static_cast<std::size_t>(len));
  for (int& t : ex.input_tokens) t = static_cast<int>(rng.below(vocab::kAlphabet));
  if (with_instruction) ex.instruction_tokens = {spec.instruction_token};
  ex.target_tokens = spec.target(ex.input_tokens);
  return ex;
}

std::uint64_t split_seed(std::uint64_t seed, Split split) {
  return 2 * seed + (split == Split::eval ? 1 : 0);
}

std::vector<Example> make_examples(const TaskSpec& spec, std::size_t n, std::uint64_t seed,
                                   Split split, bool with_instruction) {
  Rng rng(split_seed(seed, split));
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_example(spec, rng, with_instruction));
  return out;
}

TrainingRow training_row(const Example& ex) {
  const std::vector<int> seq = ex.full_sequence();
  const std::size_t prompt_len = ex.prompt().size();
  TrainingRow row;
  row.inputs.assign(seq.begin(), seq.end() - 1);
  row.labels.assign(seq.begin() + 1, seq.end());
  row.loss_mask.resize(row.labels.size());
  for (std::size_t i = 0; i < row.labels.size(); ++i) row.loss_mask[i] = i + 1 >= prompt_len ? 1 : 0;
  return row;
}

double accuracy(const std::vector<std::vector<int>>& preds,
                const std::vector<std::vector<int>>& targets) {
  if (preds.size() != targets.size()) {
    throw ContractError("accuracy: prediction and target counts differ");
  }
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == targets[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double token_error_rate(std::span<const int> hyp, std::span<const int> ref) {
  if (ref.empty()) throw ContractError("token_error_rate: reference must be non-empty");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

bool follows_format(std::span<const int> output, int separator) {
  const auto n = std::count(output.begin(), output.end(), separator);
  if (n != 1) return false;
  const auto pos = static_cast<std::size_t>(std::find(output.begin(), output.end(), separator) -
                                            output.begin());
  return pos > 0 && pos + 1 < output.size();
}

IfrResult ifr(const std::vector<std::vector<int>>& outputs, int separator) {
  IfrResult r;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (follows_format(outputs[i], separator)) r.following.push_back(i);
  }
  r.rate = outputs.empty() ? 0.0
                           : static_cast<double>(r.following.size()) /
                                 static_cast<double>(outputs.size());
  return r;
}

std::string_view stage_name(OutputStage s) {
  switch (s) {
    case OutputStage::empty: return "empty";
    case OutputStage::garbage: return "garbage";
    case OutputStage::task_shaped: return "task_shaped";
    case OutputStage::correct: return "correct";
  }
  return "?";
}

namespace {

bool well_formed(TaskKind kind, std::span<const int> r, std::size_t input_len) {
  switch (kind) {
    case TaskKind::copy:
    case TaskKind::rev:
    case TaskKind::shift:
      return r.size() == input_len && std::all_of(r.begin(), r.end(), is_content);
    case TaskKind::maj:
      return r.size() == 1 && is_class(r[0]);
    case TaskKind::count:
      return !r.empty() && r.size() <= 2 && std::all_of(r.begin(), r.end(), is_digit);
    case TaskKind::copy_maj:
    case TaskKind::maj_copy: {
      if (!follows_format(r, vocab::kPipe)) return false;
      const auto pos = static_cast<std::size_t>(std::find(r.begin(), r.end(), vocab::kPipe) - r.begin());
      const auto left = r.subspan(0, pos);
      const auto right = r.subspan(pos + 1);
      if (kind == TaskKind::copy_maj) {
        return well_formed(TaskKind::copy, left, input_len) && well_formed(TaskKind::maj, right, 0);
      }
      return well_formed(TaskKind::maj, left, 0) && well_formed(TaskKind::copy, right, input_len);
    }
  }
  return false;
}

std::pair<std::vector<int>, std::vector<int>> split_fields(std::span<const int> r) {
  const auto it = std::find(r.begin(), r.end(), vocab::kPipe);
  return {std::vector<int>(r.begin(), it), std::vector<int>(it + 1, r.end())};
}

}  // namespace

OutputStage classify_output(const TaskSpec& spec, const Example& ex,
                            std::span<const int> response) {
  if (response.empty()) return OutputStage::empty;
  if (std::equal(response.begin(), response.end(), ex.target_tokens.begin(),
                 ex.target_tokens.end())) {
    return OutputStage::correct;
  }
  return well_formed(spec.kind, response, ex.input_tokens.size()) ? OutputStage::task_shaped
                                                                   : OutputStage::garbage;
}

std::string MaskSource::label() const {
  switch (kind) {
    case Kind::instruction: return "instruction";
    case Kind::none: return "none";
    case Kind::random: return "random";
    case Kind::trained: return "trained";
    case Kind::quantile: {
      std::string s = std::to_string(q);
      s.erase(s.find_last_not_of('0') + 1);
      if (!s.empty() && s.back() == '.') s.pop_back();
      return "quantile " + s;
    }
    case Kind::intersection: return "intersection";
  }
  return "?";
}

MaskSource::Kind mask_kind_from_name(std::string_view name) {
  using K = MaskSource::Kind;
  if (name == "instruction") return K::instruction;
  if (name == "none") return K::none;
  if (name == "random") return K::random;
  if (name == "trained") return K::trained;
  if (name == "quantile") return K::quantile;
  if (name == "intersection") return K::intersection;
  throw ConfigError("unknown mask source '" + std::string(name) + "'");
}

EvalReport run_eval(const ModelWeights& model, const MaskSource& source, const TaskSpec& spec,
                    std::size_t n_examples, std::uint64_t seed, const EvalOptions& options) {
  using K = MaskSource::Kind;
  const bool needs_mask = source.kind != K::instruction && source.kind != K::none;
  if (needs_mask && !source.mask) {
    throw ConfigError("mask source '" + source.label() + "' requires a mask artifact");
  }
  if (!needs_mask && source.mask) {
    throw ConfigError("mask source '" + source.label() + "' does not take a mask");
  }
  const HeadMask* mask = source.mask ? &*source.mask : nullptr;
  const bool instructed = source.kind == K::instruction;

  EvalReport rep;
  rep.task = spec.name;
  rep.mask_source = source.label();
  rep.n_examples = n_examples;
  rep.active_head_count = mask ? mask->popcount()
                               : static_cast<std::size_t>(model.config.n_layers) *
                                     static_cast<std::size_t>(model.config.n_heads);

  const auto examples = make_examples(spec, n_examples, seed, Split::eval, instructed);
  std::vector<std::vector<int>> targets;
  std::size_t edits = 0, ref_tokens = 0;
  for (const Example& ex : examples) {
    const std::vector<int> prompt = ex.prompt();
    std::vector<int> expected = ex.target_tokens;
    expected.push_back(vocab::kEos);
    std::vector<int> out;
    if (static_cast<int>(expected.size()) <= options.max_new &&
        greedy_matches(model, mask, prompt, expected)) {
      out = std::move(expected);
    } else {
      out = greedy_decode(model, mask, prompt, options.max_new, vocab::kEos);
    }
    if (!out.empty() && out.back() == vocab::kEos) out.pop_back();
    edits += edit_distance(out, ex.target_tokens);
    ref_tokens += ex.target_tokens.size();
    rep.stages.push_back(classify_output(spec, ex, out));
    rep.outputs.push_back(std::move(out));
    targets.push_back(ex.target_tokens);
  }
  rep.accuracy = accuracy(rep.outputs, targets);
  rep.token_error_rate =
      ref_tokens ? static_cast<double>(edits) / static_cast<double>(ref_tokens) : 0.0;

  if (spec.composite()) {
    const IfrResult r = ifr(rep.outputs, vocab::kPipe);
    rep.ifr = r.rate;
    if (!r.following.empty()) {
      const bool copy_first = spec.kind == TaskKind::copy_maj;
      std::size_t copy_hits = 0, maj_hits = 0, copy_edits = 0, copy_ref = 0;
      for (std::size_t i : r.following) {
        auto [left, right] = split_fields(rep.outputs[i]);
        auto [tleft, tright] = split_fields(targets[i]);
        const auto& copy_out = copy_first ? left : right;
        const auto& copy_ref_tokens = copy_first ? tleft : tright;
        const auto& maj_out = copy_first ? right : left;
        const auto& maj_ref = copy_first ? tright : tleft;
        copy_hits += copy_out == copy_ref_tokens ? 1 : 0;
        maj_hits += maj_out == maj_ref ? 1 : 0;
        copy_edits += edit_distance(copy_out, copy_ref_tokens);
        copy_ref += copy_ref_tokens.size();
      }
      const double n = static_cast<double>(r.following.size());
      rep.sub_metrics["COPY.accuracy"] = static_cast<double>(copy_hits) / n;
      rep.sub_metrics["COPY.token_error_rate"] =
          static_cast<double>(copy_edits) / static_cast<double>(copy_ref);
      rep.sub_metrics["MAJ.accuracy"] = static_cast<double>(maj_hits) / n;
    }
  }
  return rep;
}

}  // namespace ahamask
