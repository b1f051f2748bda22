#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ahamask/head_mask.hpp"
#include "ahamask/rng.hpp"

namespace ahamask {

// Real-valued mask logits, one per head, layer-major. The sole trainable
// parameter of mask training.
struct MaskLogits {
  int layers = 0;
  int heads = 0;
  std::vector<double> values;
  std::uint64_t rng_seed = 0;

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const MaskLogits&, const MaskLogits&) = default;
};

struct GumbelNoise {
  int layers = 0;
  int heads = 0;
  std::vector<double> values;
};

inline constexpr double kUniformClamp = 1e-12;

// g = -log(-log(eps)) with eps clamped to [1e-12, 1 - 1e-12].
double gumbel_from_uniform(double eps);
GumbelNoise sample_gumbel(Rng& rng, int layers, int heads);

double sigmoid(double x);

// S = sigmoid((M + G) / tau). Throws ParameterError unless tau > 0.
SoftMask soft_mask(const MaskLogits& logits, const GumbelNoise& noise, double tau);
// Bit set iff S >= 0.5.
HeadMask harden(const SoftMask& soft);
// Straight-through estimator: the hard-mask gradient is copied onto S, then
// chained through the sigmoid: dL/dM = dL/dHard * S (1 - S) / tau.
std::vector<double> ste_grad(std::span<const double> dloss_dhard, const SoftMask& soft,
                             double tau);
// Inference mask: bit set iff M >= 0.
HeadMask infer_mask(const MaskLogits& logits);
// Activates exactly ceil(q * n * h) heads with the largest logits; ties are
// resolved toward the lower (layer, head) index.
HeadMask quantile_mask(const MaskLogits& logits, double q);
std::size_t quantile_count(std::size_t total, double q);

// Zero noise of the given shape.
GumbelNoise zero_noise(int layers, int heads);

}  // namespace ahamask
