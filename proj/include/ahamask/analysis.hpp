#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ahamask/head_mask.hpp"
#include "ahamask/maskgate.hpp"
#include "ahamask/rng.hpp"

namespace ahamask {

// |A and B| / |A or B|. Undefined (ContractError) when both masks are empty.
double jaccard(const HeadMask& a, const HeadMask& b);
// Hamming distance to the reference divided by the reference's active count.
double diff_ratio(const HeadMask& mask, const HeadMask& reference);
// Bitwise AND of two or more equally shaped masks.
HeadMask intersect(const std::vector<HeadMask>& masks);
// Exactly `cardinality` active heads drawn uniformly without replacement.
HeadMask random_mask(int layers, int heads, std::size_t cardinality, Rng& rng);

struct SimilarityMatrix {
  std::vector<std::string> task_names;  // alphabetical
  std::vector<std::vector<double>> values;
};
SimilarityMatrix similarity_matrix(const std::map<std::string, HeadMask>& masks);

struct SweepCurve {
  std::vector<double> q_values;
  std::vector<double> metric_values;
  std::vector<std::size_t> active_counts;
};
// Evaluates quantile_mask(logits, q) for every q (ascending).
SweepCurve sweep_quantiles(const MaskLogits& logits, const std::vector<double>& q_values,
                           const std::function<double(const HeadMask&)>& eval_fn);

// Comma-separated exports with a one-line header.
//   similarity: task,<name_1>,...,<name_k>   then one row per task
//   sweep:      q,active_count,metric
std::string similarity_csv(const SimilarityMatrix& m);
std::string sweep_csv(const SweepCurve& c);

}  // namespace ahamask
