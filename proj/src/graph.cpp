#include "ahamask/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ahamask/error.hpp"

namespace ahamask::grad {

namespace kernels {

void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c,
             std::size_t l, std::size_t d, std::size_t k) {
  for (std::size_t i = 0; i < l; ++i) {
    double* ci = c + i * k;
    const double* ai = a + i * d;
    for (std::size_t p = 0; p < d; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * k;
      for (std::size_t j = 0; j < k; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt(const double* __restrict a, const double* __restrict b, double* __restrict c,
             std::size_t l, std::size_t d, std::size_t k) {
  // Transposing B first turns the dot products into the vectorisable gemm_nn
  // loop; the summation order over d is unchanged.
  thread_local std::vector<double> bt;
  bt.resize(d * k);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t p = 0; p < d; ++p) bt[p * k + j] = b[j * d + p];
  }
  gemm_nn(a, bt.data(), c, l, d, k);
}

void gemm_tn(const double* __restrict a, const double* __restrict b, double* __restrict c,
             std::size_t l, std::size_t d, std::size_t k) {
  for (std::size_t r = 0; r < l; ++r) {
    const double* ar = a + r * d;
    const double* br = b + r * k;
    for (std::size_t p = 0; p < d; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      double* cp = c + p * k;
      for (std::size_t j = 0; j < k; ++j) cp[j] += av * br[j];
    }
  }
}

}  // namespace kernels

namespace {

void require_matrix(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + t.shape_string());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

}  // namespace

Var Graph::parameter(const Tensor& t) {
  Node n;
  n.external = &t;
  n.needs_grad = t.requires_grad();
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor t) {
  if (!t.all_finite()) throw NumericError("constant: non-finite input");
  Node n;
  n.own = std::move(t);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("Var does not belong to this graph");
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const {
  node(v);
  return val(v.id);
}

bool Graph::needs_grad(Var v) const { return node(v).needs_grad; }

std::vector<double> Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return std::vector<double>(val(v.id).size(), 0.0);
  return n.grad;
}

std::vector<double>& Graph::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(val(id).size(), 0.0);
  return n.grad;
}

Var Graph::push(Tensor out, bool needs_grad, std::string_view op,
                std::function<void(Graph&, std::uint32_t)> backward) {
  if (backward_done_) throw ContractError("graph already differentiated; build a new graph");
  if (!out.all_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value");
  }
  Node n;
  n.own = std::move(out);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + A.shape_string() + " x " +
                         B.shape_string());
  }
  const std::size_t l = A.rows(), d = A.cols(), k = B.cols();
  Tensor C({l, k});
  kernels::gemm_nn(A.data().data(), B.data().data(), C.data().data(), l, d, k);
  const bool ng = needs_grad(a) || needs_grad(b);
  return push(std::move(C), ng, "matmul", [a, b, l, d, k](Graph& g, std::uint32_t self) {
    const auto& gc = g.nodes_[self].grad;
    if (g.nodes_[a.id].needs_grad) {
      kernels::gemm_nt(gc.data(), g.val(b.id).data().data(), g.grad_buffer(a.id).data(), l, k, d);
    }
    if (g.nodes_[b.id].needs_grad) {
      kernels::gemm_tn(g.val(a.id).data().data(), gc.data(), g.grad_buffer(b.id).data(), l, d, k);
    }
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_matrix(A, "matmul_nt");
  require_matrix(B, "matmul_nt");
  if (A.cols() != B.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ " + A.shape_string() + " x " +
                         B.shape_string() + "^T");
  }
  const std::size_t l = A.rows(), d = A.cols(), k = B.rows();
  Tensor C({l, k});
  kernels::gemm_nt(A.data().data(), B.data().data(), C.data().data(), l, d, k);
  const bool ng = needs_grad(a) || needs_grad(b);
  return push(std::move(C), ng, "matmul_nt", [a, b, l, d, k](Graph& g, std::uint32_t self) {
    const auto& gc = g.nodes_[self].grad;
    if (g.nodes_[a.id].needs_grad) {
      kernels::gemm_nn(gc.data(), g.val(b.id).data().data(), g.grad_buffer(a.id).data(), l, k, d);
    }
    if (g.nodes_[b.id].needs_grad) {
      kernels::gemm_tn(gc.data(), g.val(a.id).data().data(), g.grad_buffer(b.id).data(), l, k, d);
    }
  });
}

Var Graph::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_same_shape(A, B, "add");
  Tensor C = A;
  C.set_requires_grad(false);
  auto cd = C.data();
  auto bd = B.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
  const bool ng = needs_grad(a) || needs_grad(b);
  return push(std::move(C), ng, "add", [a, b](Graph& g, std::uint32_t self) {
    const auto& gc = g.nodes_[self].grad;
    for (Var in : {a, b}) {
      if (!g.nodes_[in.id].needs_grad) continue;
      auto& gi = g.grad_buffer(in.id);
      for (std::size_t i = 0; i < gc.size(); ++i) gi[i] += gc[i];
    }
  });
}

Var Graph::add_row(Var x, Var bias) {
  const Tensor& X = value(x);
  const Tensor& Bv = value(bias);
  if (Bv.size() != X.cols()) {
    throw DimensionError("add_row: bias " + Bv.shape_string() + " does not match " +
                         X.shape_string());
  }
  const std::size_t l = X.rows(), d = X.cols();
  Tensor Y = X;
  Y.set_requires_grad(false);
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < d; ++j) Y(i, j) += Bv[j];
  }
  const bool ng = needs_grad(x) || needs_grad(bias);
  return push(std::move(Y), ng, "add_row", [x, bias, l, d](Graph& g, std::uint32_t self) {
    const auto& gy = g.nodes_[self].grad;
    if (g.nodes_[x.id].needs_grad) {
      auto& gx = g.grad_buffer(x.id);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (g.nodes_[bias.id].needs_grad) {
      auto& gb = g.grad_buffer(bias.id);
      for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = 0; j < d; ++j) gb[j] += gy[i * d + j];
      }
    }
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_same_shape(A, B, "mul");
  Tensor C = A;
  C.set_requires_grad(false);
  auto cd = C.data();
  auto bd = B.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] *= bd[i];
  const bool ng = needs_grad(a) || needs_grad(b);
  return push(std::move(C), ng, "mul", [a, b](Graph& g, std::uint32_t self) {
    const auto& gc = g.nodes_[self].grad;
    if (g.nodes_[a.id].needs_grad) {
      auto bd = g.val(b.id).data();
      auto& ga = g.grad_buffer(a.id);
      for (std::size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] * bd[i];
    }
    if (g.nodes_[b.id].needs_grad) {
      auto ad = g.val(a.id).data();
      auto& gb = g.grad_buffer(b.id);
      for (std::size_t i = 0; i < gc.size(); ++i) gb[i] += gc[i] * ad[i];
    }
  });
}

Var Graph::scale(Var x, double factor) {
  Tensor Y = value(x);
  Y.set_requires_grad(false);
  for (double& v : Y.data()) v *= factor;
  return push(std::move(Y), needs_grad(x), "scale", [x, factor](Graph& g, std::uint32_t self) {
    const auto& gy = g.nodes_[self].grad;
    auto& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * factor;
  });
}

Var Graph::scale_by(Var x, Var s, std::size_t index) {
  const Tensor& S = value(s);
  if (index >= S.size()) throw DimensionError("scale_by: index out of range");
  const double factor = S[index];
  Tensor Y = value(x);
  Y.set_requires_grad(false);
  for (double& v : Y.data()) v *= factor;
  const bool ng = needs_grad(x) || needs_grad(s);
  return push(std::move(Y), ng, "scale_by", [x, s, index](Graph& g, std::uint32_t self) {
    const auto& gy = g.nodes_[self].grad;
    if (g.nodes_[x.id].needs_grad) {
      const double f = g.val(s.id)[index];
      auto& gx = g.grad_buffer(x.id);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * f;
    }
    if (g.nodes_[s.id].needs_grad) {
      auto xd = g.val(x.id).data();
      double acc = 0.0;
      for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xd[i];
      g.grad_buffer(s.id)[index] += acc;
    }
  });
}

Var Graph::sum(Var x) {
  double acc = 0.0;
  for (double v : value(x).data()) acc += v;
  Tensor Y({1}, std::vector<double>{acc});
  return push(std::move(Y), needs_grad(x), "sum", [x](Graph& g, std::uint32_t self) {
    const double gy = g.nodes_[self].grad[0];
    for (double& v : g.grad_buffer(x.id)) v += gy;
  });
}

Var Graph::softmax_rows(Var x, bool causal) {
  const Tensor& X = value(x);
  const std::size_t l = X.rows(), k = X.cols();
  if (causal && l > k) throw DimensionError("softmax_rows: causal softmax needs rows <= cols");
  Tensor Y(X.shape());
  for (std::size_t i = 0; i < l; ++i) {
    const std::size_t n = causal ? i + 1 : k;
    kernels::softmax_row(X.data().data() + i * k, Y.data().data() + i * k, n);
  }
  return push(std::move(Y), needs_grad(x), "softmax_rows", [x, l, k](Graph& g, std::uint32_t self) {
    const auto& gy = g.nodes_[self].grad;
    const auto y = g.nodes_[self].own.data();
    auto& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < l; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += gy[i * k + j] * y[i * k + j];
      for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += y[i * k + j] * (gy[i * k + j] - dot);
    }
  });
}

Var Graph::layernorm(Var x, Var gain, Var bias, double eps) {
  const Tensor& X = value(x);
  const Tensor& G = value(gain);
  const Tensor& B = value(bias);
  const std::size_t l = X.rows(), d = X.cols();
  if (d < 2) throw DimensionError("layernorm: needs at least 2 features");
  if (G.size() != d || B.size() != d) {
    throw DimensionError("layernorm: gain/bias must have " + std::to_string(d) + " entries");
  }
  Tensor Y(X.shape());
  std::vector<double> xhat(l * d);
  std::vector<double> inv_sigma(l);
  for (std::size_t i = 0; i < l; ++i) {
    inv_sigma[i] = kernels::layernorm_row(X.data().data() + i * d, G.data().data(), B.data().data(),
                                          Y.data().data() + i * d, xhat.data() + i * d, d, eps);
  }
  const bool ng = needs_grad(x) || needs_grad(gain) || needs_grad(bias);
  if (!ng) return push(std::move(Y), false, "layernorm", {});
  return push(std::move(Y), true, "layernorm",
              [x, gain, bias, l, d, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](
                  Graph& g, std::uint32_t self) {
                const auto& gy = g.nodes_[self].grad;
                if (g.nodes_[gain.id].needs_grad) {
                  auto& gg = g.grad_buffer(gain.id);
                  for (std::size_t i = 0; i < l; ++i)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += gy[i * d + j] * xhat[i * d + j];
                }
                if (g.nodes_[bias.id].needs_grad) {
                  auto& gb = g.grad_buffer(bias.id);
                  for (std::size_t i = 0; i < l; ++i)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += gy[i * d + j];
                }
                if (g.nodes_[x.id].needs_grad) {
                  auto gain_d = g.val(gain.id).data();
                  auto& gx = g.grad_buffer(x.id);
                  const double inv_d = 1.0 / static_cast<double>(d);
                  for (std::size_t i = 0; i < l; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dh = gy[i * d + j] * gain_d[j];
                      m1 += dh;
                      m2 += dh * xhat[i * d + j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dh = gy[i * d + j] * gain_d[j];
                      gx[i * d + j] += inv_sigma[i] * (dh - m1 - xhat[i * d + j] * m2);
                    }
                  }
                }
              });
}

Var Graph::gelu(Var x) {
  Tensor Y = value(x);
  Y.set_requires_grad(false);
  for (double& v : Y.data()) v = kernels::gelu(v);
  return push(std::move(Y), needs_grad(x), "gelu", [x](Graph& g, std::uint32_t self) {
    const auto& gy = g.nodes_[self].grad;
    auto xd = g.val(x.id).data();
    auto& gx = g.grad_buffer(x.id);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const double v = xd[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += gy[i] * (cdf + v * pdf);
    }
  });
}

Var Graph::embedding(Var table, std::span<const int> ids) {
  const Tensor& T = value(table);
  require_matrix(T, "embedding");
  if (ids.empty()) throw DimensionError("embedding: empty id sequence");
  const std::size_t d = T.cols();
  Tensor Y({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows()) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(T.rows()) + " rows");
    }
    std::copy_n(T.data().data() + static_cast<std::size_t>(ids[i]) * d, d,
                Y.data().data() + i * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return push(std::move(Y), needs_grad(table), "embedding",
              [table, d, idv = std::move(idv)](Graph& g, std::uint32_t self) {
                const auto& gy = g.nodes_[self].grad;
                auto& gt = g.grad_buffer(table.id);
                for (std::size_t i = 0; i < idv.size(); ++i) {
                  double* row = gt.data() + static_cast<std::size_t>(idv[i]) * d;
                  for (std::size_t j = 0; j < d; ++j) row[j] += gy[i * d + j];
                }
              });
}

Var Graph::cross_entropy(Var logits, std::span<const int> targets,
                         std::span<const std::uint8_t> loss_mask) {
  const Tensor& X = value(logits);
  const std::size_t l = X.rows(), V = X.cols();
  if (targets.size() != l || loss_mask.size() != l) {
    throw DimensionError("cross_entropy: targets/loss_mask length must equal logits rows");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < l; ++i) {
    if (!loss_mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V) {
      throw ContractError("cross_entropy: target id out of range");
    }
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: every position is loss-masked (empty loss)");
  std::vector<double> probs(l * V, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    if (!loss_mask[i]) continue;
    const double* xi = X.data().data() + i * V;
    double m = xi[0];
    for (std::size_t j = 1; j < V; ++j) m = std::max(m, xi[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
      probs[i * V + j] = std::exp(xi[j] - m);
      z += probs[i * V + j];
    }
    for (std::size_t j = 0; j < V; ++j) probs[i * V + j] /= z;
    total += (m + std::log(z)) - xi[targets[i]];
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  Tensor Y({1}, std::vector<double>{total * inv_count});
  std::vector<int> tv(targets.begin(), targets.end());
  std::vector<std::uint8_t> mv(loss_mask.begin(), loss_mask.end());
  return push(std::move(Y), needs_grad(logits), "cross_entropy",
              [logits, l, V, inv_count, probs = std::move(probs), tv = std::move(tv),
               mv = std::move(mv)](Graph& g, std::uint32_t self) {
                const double gy = g.nodes_[self].grad[0] * inv_count;
                auto& gx = g.grad_buffer(logits.id);
                for (std::size_t i = 0; i < l; ++i) {
                  if (!mv[i]) continue;
                  for (std::size_t j = 0; j < V; ++j) gx[i * V + j] += gy * probs[i * V + j];
                  gx[i * V + static_cast<std::size_t>(tv[i])] -= gy;
                }
              });
}

void Graph::backward(Var loss) {
  if (backward_done_) throw ContractError("backward called twice on the same graph");
  const Tensor& L = value(loss);
  if (L.size() != 1) {
    throw ContractError("backward requires a scalar loss, got " + L.shape_string());
  }
  backward_done_ = true;
  if (!nodes_[loss.id].needs_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
  }
  for (Node& n : nodes_) {
    if (n.external && n.needs_grad && !n.grad.empty()) n.external->accumulate_grad(n.grad);
  }
}

namespace kernels {

void softmax_row(const double* x, double* y, std::size_t n) {
  double m = x[0];
  for (std::size_t j = 1; j < n; ++j) m = std::max(m, x[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - m);
    z += y[j];
  }
  const double inv = 1.0 / z;
  for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
}

double layernorm_row(const double* x, const double* gain, const double* bias, double* y,
                     double* xhat, std::size_t d, double eps) {
  double mean = 0.0;
  for (std::size_t j = 0; j < d; ++j) mean += x[j];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
  var /= static_cast<double>(d);
  const double is = 1.0 / std::sqrt(var + eps);
  for (std::size_t j = 0; j < d; ++j) {
    const double h = (x[j] - mean) * is;
    if (xhat) xhat[j] = h;
    y[j] = h * gain[j] + bias[j];
  }
  return is;
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5)); }

}  // namespace kernels

}  // namespace ahamask::grad
