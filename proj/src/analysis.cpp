#include "ahamask/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "ahamask/error.hpp"

namespace ahamask {

namespace {

void require_same_shape(const HeadMask& a, const HeadMask& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": masks have different shapes");
  }
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

double jaccard(const HeadMask& a, const HeadMask& b) {
  require_same_shape(a, b, "jaccard");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a.at(i) && b.at(i)) ? 1 : 0;
    uni += (a.at(i) || b.at(i)) ? 1 : 0;
  }
  if (uni == 0) throw ContractError("jaccard: undefined for two empty masks");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double diff_ratio(const HeadMask& mask, const HeadMask& reference) {
  require_same_shape(mask, reference, "diff_ratio");
  const std::size_t ref_count = reference.popcount();
  if (ref_count == 0) throw ContractError("diff_ratio: reference mask has no active heads");
  std::size_t diff = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) diff += mask.at(i) != reference.at(i) ? 1 : 0;
  return static_cast<double>(diff) / static_cast<double>(ref_count);
}

HeadMask intersect(const std::vector<HeadMask>& masks) {
  if (masks.size() < 2) throw ContractError("intersect: needs at least two masks");
  HeadMask out = masks.front();
  for (std::size_t k = 1; k < masks.size(); ++k) {
    require_same_shape(out, masks[k], "intersect");
    for (std::size_t i = 0; i < out.size(); ++i) out.set_flat(i, out.at(i) && masks[k].at(i));
  }
  return out;
}

HeadMask random_mask(int layers, int heads, std::size_t cardinality, Rng& rng) {
  HeadMask out = HeadMask::zeros(layers, heads);
  if (cardinality > out.size()) {
    throw ParameterError("random_mask: cardinality " + std::to_string(cardinality) +
                         " exceeds head count " + std::to_string(out.size()));
  }
  // Partial Fisher-Yates: the first `cardinality` slots are a uniform sample.
  std::vector<std::size_t> idx(out.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < cardinality; ++i) {
    const std::size_t j = i + rng.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
    out.set_flat(idx[i], true);
  }
  return out;
}

SimilarityMatrix similarity_matrix(const std::map<std::string, HeadMask>& masks) {
  SimilarityMatrix m;
  for (const auto& [name, _] : masks) m.task_names.push_back(name);
  const std::size_t n = m.task_names.size();
  m.values.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = jaccard(masks.at(m.task_names[i]), masks.at(m.task_names[j]));
      m.values[i][j] = v;
      m.values[j][i] = v;
    }
  }
  return m;
}

SweepCurve sweep_quantiles(const MaskLogits& logits, const std::vector<double>& q_values,
                           const std::function<double(const HeadMask&)>& eval_fn) {
  if (!std::is_sorted(q_values.begin(), q_values.end())) {
    throw ParameterError("sweep_quantiles: q values must be ascending");
  }
  SweepCurve c;
  for (double q : q_values) {
    const HeadMask m = quantile_mask(logits, q);
    c.q_values.push_back(q);
    c.active_counts.push_back(m.popcount());
    c.metric_values.push_back(eval_fn(m));
  }
  return c;
}

std::string similarity_csv(const SimilarityMatrix& m) {
  std::string out = "task";
  for (const auto& n : m.task_names) out += "," + n;
  out += "\n";
  for (std::size_t i = 0; i < m.task_names.size(); ++i) {
    out += m.task_names[i];
    for (double v : m.values[i]) out += "," + num(v);
    out += "\n";
  }
  return out;
}

std::string sweep_csv(const SweepCurve& c) {
  std::string out = "q,active_count,metric\n";
  for (std::size_t i = 0; i < c.q_values.size(); ++i) {
    out += num(c.q_values[i]) + "," + std::to_string(c.active_counts[i]) + "," +
           num(c.metric_values[i]) + "\n";
  }
  return out;
}

}  // namespace ahamask
