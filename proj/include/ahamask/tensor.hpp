#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ahamask::grad {

// Dense row-major tensor of doubles, rank 1 or 2. A rank-1 tensor of length d
// behaves as a 1 x d matrix for the purposes of rows()/cols().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, bool requires_grad = false);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad = false);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                          bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on);

  // The gradient buffer exists only for tensors that require gradients; it is
  // allocated on first use and always has the same shape as the data.
  bool has_grad() const noexcept { return grad_.has_value(); }
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  // Adds `g` into the gradient buffer. The buffer is accumulator state, so
  // this is allowed through a const reference; it is a no-op for tensors that
  // do not require gradients.
  void accumulate_grad(std::span<const double> g) const;

  bool all_finite() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  mutable std::optional<std::vector<double>> grad_;
};

std::string shape_string(std::span<const std::size_t> shape);

}  // namespace ahamask::grad
