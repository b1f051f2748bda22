#include "ahamask/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>

#include "ahamask/error.hpp"

namespace ahamask::grad {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2, got " + std::to_string(shape.size()));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + grad::shape_string(shape));
  }
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_string(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  data_.assign(element_count(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
  if (element_count(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + grad::shape_string(shape_));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return Tensor({values.size()}, std::vector<double>(values), requires_grad);
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (!on) grad_.reset();
}

std::span<double> Tensor::grad() {
  if (!requires_grad_) throw ContractError("grad() on a tensor that does not require gradients");
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw ContractError("grad() on a tensor without a gradient buffer");
  return *grad_;
}

void Tensor::accumulate_grad(std::span<const double> g) const {
  if (!requires_grad_) return;
  if (g.size() != data_.size()) throw DimensionError("accumulate_grad: size mismatch");
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) (*grad_)[i] += g[i];
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

bool Tensor::all_finite() const noexcept {
  // Branch-free exponent test so the loop vectorises; an all-ones exponent
  // marks both infinities and NaNs.
  constexpr std::uint64_t exp_mask = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : data_) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    bad |= static_cast<std::uint64_t>((bits & exp_mask) == exp_mask);
  }
  return bad == 0;
}

std::string Tensor::shape_string() const { return grad::shape_string(shape_); }

}  // namespace ahamask::grad
