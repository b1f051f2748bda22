#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ahamask/graph.hpp"
#include "ahamask/rng.hpp"

namespace fdcheck {

using ahamask::grad::Graph;
using ahamask::grad::Tensor;
using ahamask::grad::Var;

inline Tensor random_tensor(ahamask::Rng& rng, std::vector<std::size_t> shape, bool rg = true) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> v(n);
  for (auto& x : v) x = -2.0 + 4.0 * rng.uniform01();
  return Tensor(std::move(shape), std::move(v), rg);
}

// Builds a scalar loss from the given leaves. Leaves are registered as
// parameters so gradients land in their grad buffers.
using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

inline double eval(const Builder& f, std::vector<Tensor>& leaves) {
  Graph g;
  std::vector<Var> vars;
  for (auto& t : leaves) vars.push_back(g.parameter(t));
  return g.value(f(g, vars))[0];
}

// ||analytic - numeric|| / (||analytic|| + ||numeric||), central differences.
inline double max_relative_error(const Builder& f, std::vector<Tensor>& leaves, double step = 1e-6) {
  for (auto& t : leaves) t.zero_grad();
  {
    Graph g;
    std::vector<Var> vars;
    for (auto& t : leaves) vars.push_back(g.parameter(t));
    g.backward(f(g, vars));
  }
  double worst = 0.0;
  for (auto& t : leaves) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t[i];
      t.data()[i] = keep + step;
      const double up = eval(f, leaves);
      t.data()[i] = keep - step;
      const double down = eval(f, leaves);
      t.data()[i] = keep;
      const double numeric = (up - down) / (2.0 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::sqrt(a2) + std::sqrt(n2);
    if (denom > 0.0) worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

}  // namespace fdcheck
