#include "ahamask/maskgate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ahamask/error.hpp"

namespace ahamask {

double gumbel_from_uniform(double eps) {
  eps = std::clamp(eps, kUniformClamp, 1.0 - kUniformClamp);
  return -std::log(-std::log(eps));
}

GumbelNoise sample_gumbel(Rng& rng, int layers, int heads) {
  GumbelNoise g{layers, heads, {}};
  g.values.resize(static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads));
  for (double& v : g.values) v = gumbel_from_uniform(rng.uniform01());
  return g;
}

GumbelNoise zero_noise(int layers, int heads) {
  return {layers, heads,
          std::vector<double>(static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads),
                              0.0)};
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

SoftMask soft_mask(const MaskLogits& logits, const GumbelNoise& noise, double tau) {
  if (!(tau > 0.0)) throw ParameterError("soft_mask: temperature must be positive");
  if (logits.values.size() != noise.values.size()) {
    throw DimensionError("soft_mask: logits and noise shapes differ");
  }
  SoftMask s{logits.layers, logits.heads, std::vector<double>(logits.values.size())};
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    s.values[i] = sigmoid((logits.values[i] + noise.values[i]) / tau);
  }
  return s;
}

HeadMask harden(const SoftMask& soft) {
  std::vector<std::uint8_t> bits(soft.values.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = soft.values[i] >= 0.5 ? 1 : 0;
  return HeadMask(soft.layers, soft.heads, std::move(bits));
}

std::vector<double> ste_grad(std::span<const double> dloss_dhard, const SoftMask& soft,
                             double tau) {
  if (!(tau > 0.0)) throw ParameterError("ste_grad: temperature must be positive");
  if (dloss_dhard.size() != soft.values.size()) {
    throw DimensionError("ste_grad: gradient and soft mask shapes differ");
  }
  std::vector<double> out(soft.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = soft.values[i];
    out[i] = dloss_dhard[i] * s * (1.0 - s) / tau;
  }
  return out;
}

HeadMask infer_mask(const MaskLogits& logits) {
  std::vector<std::uint8_t> bits(logits.values.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = logits.values[i] >= 0.0 ? 1 : 0;
  return HeadMask(logits.layers, logits.heads, std::move(bits));
}

std::size_t quantile_count(std::size_t total, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("quantile fraction must lie in [0, 1]");
  // Guard against q * total landing a hair above an integer through rounding
  // of q itself (e.g. 0.3 * 10).
  const double raw = q * static_cast<double>(total);
  const double nearest = std::round(raw);
  const double k = std::abs(raw - nearest) < 1e-9 ? nearest : std::ceil(raw);
  return std::min(total, static_cast<std::size_t>(k));
}

HeadMask quantile_mask(const MaskLogits& logits, double q) {
  const std::size_t total = logits.values.size();
  const std::size_t k = quantile_count(total, q);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return logits.values[a] > logits.values[b];
  });
  std::vector<std::uint8_t> bits(total, 0);
  for (std::size_t i = 0; i < k; ++i) bits[order[i]] = 1;
  return HeadMask(logits.layers, logits.heads, std::move(bits));
}

}  // namespace ahamask
