#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "ahamask/tensor.hpp"

namespace ahamask::grad {

// Handle to a value recorded on a Graph.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const noexcept { return id != UINT32_MAX; }
};

// Tape-style reverse-mode differentiation. Operations are recorded in
// creation order and `backward` replays them in exact reverse order, adding
// gradient contributions into each input. Nodes that cannot reach a tensor
// with requires_grad() record no backward step at all, so a frozen model
// costs nothing extra during mask training.
//
// A Graph is single-use: one forward, at most one backward. Parameters
// registered with `parameter()` are referenced, not copied, and must outlive
// the graph; their gradient buffers receive this graph's contribution
// additively when `backward` finishes.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var parameter(const Tensor& t);
  Var constant(Tensor t);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const;
  // Gradient of the loss with respect to `v` as accumulated by backward().
  // Zero-filled if nothing flowed into `v`.
  std::vector<double> grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);     // [l x d] * [d x k]
  Var matmul_nt(Var a, Var b);  // [l x d] * [k x d]^T
  Var add(Var a, Var b);
  Var add_row(Var x, Var bias);  // x[l x d] + bias[d] on every row
  Var mul(Var a, Var b);
  Var scale(Var x, double factor);
  // x * s[index], differentiable in both x and the scalar entry of s.
  Var scale_by(Var x, Var s, std::size_t index);
  Var sum(Var x);
  // Row-wise softmax. With `causal`, row i only covers columns 0..i and the
  // remaining entries are exactly zero.
  Var softmax_rows(Var x, bool causal = false);
  Var layernorm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var gelu(Var x);
  Var embedding(Var table, std::span<const int> ids);
  // Mean negative log-likelihood of `targets` over rows with loss_mask set.
  Var cross_entropy(Var logits, std::span<const int> targets, std::span<const std::uint8_t> loss_mask);

  void backward(Var loss);
  bool backward_done() const noexcept { return backward_done_; }

 private:
  struct Node {
    Tensor own;
    const Tensor* external = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    std::function<void(Graph&, std::uint32_t)> backward;
  };

  const Tensor& val(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.own;
  }
  std::vector<double>& grad_buffer(std::uint32_t id);
  const Node& node(Var v) const;
  Var push(Tensor out, bool needs_grad, std::string_view op,
           std::function<void(Graph&, std::uint32_t)> backward);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

namespace kernels {
// C[l x k] += A[l x d] * B[d x k]; zero entries of A are skipped.
void gemm_nn(const double* a, const double* b, double* c, std::size_t l, std::size_t d,
             std::size_t k);
// C[l x k] += A[l x d] * B[k x d]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t l, std::size_t d,
             std::size_t k);
// C[d x k] += A[l x d]^T * B[l x k]
void gemm_tn(const double* a, const double* b, double* c, std::size_t l, std::size_t d,
             std::size_t k);
// Row kernels shared by the graph ops and the cached decoder so both produce
// identical bits.
void softmax_row(const double* x, double* y, std::size_t n);
// Returns 1 / sigma; `xhat` may be null.
double layernorm_row(const double* x, const double* gain, const double* bias, double* y,
                     double* xhat, std::size_t d, double eps);
double gelu(double v);
}  // namespace kernels

}  // namespace ahamask::grad
