#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Core>

namespace bnlab {

struct NelderMeadOptions {
  double initial_step = 0.1;
  double f_tol = 1e-24;   // spread of simplex values
  double x_tol = 1e-12;   // simplex diameter
  int max_iterations = 20000;
};

template <typename Scalar, int Dim>
struct NelderMeadResult {
  Eigen::Matrix<Scalar, Dim, 1> x;
  Scalar value;
  int iterations = 0;
  bool converged = false;
};

/// Derivative-free minimization with the standard reflection / expansion / contraction /
/// shrink moves (coefficients 1, 2, 1/2, 1/2). Infeasible points may return +inf.
template <typename Scalar, int Dim>
NelderMeadResult<Scalar, Dim> nelder_mead(
    const std::function<Scalar(const Eigen::Matrix<Scalar, Dim, 1>&)>& f, const Eigen::Matrix<Scalar, Dim, 1>& x0,
    const NelderMeadOptions& opt = {}) {
  using Vec = Eigen::Matrix<Scalar, Dim, 1>;
  const Eigen::Index n = x0.size();
  std::vector<Vec> simplex(n + 1, x0);
  std::vector<Scalar> values(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) simplex[i + 1](i) += Scalar(opt.initial_step);
  for (Eigen::Index i = 0; i <= n; ++i) values[i] = f(simplex[i]);

  std::vector<Eigen::Index> order(n + 1);
  NelderMeadResult<Scalar, Dim> out;
  for (out.iterations = 0; out.iterations < opt.max_iterations; ++out.iterations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    const Eigen::Index best = order.front();
    const Eigen::Index worst = order.back();
    const Eigen::Index second = order[n - 1];

    Scalar diameter = 0;
    for (Eigen::Index i = 0; i <= n; ++i) diameter = std::max(diameter, (simplex[i] - simplex[best]).norm());
    if (std::abs(values[worst] - values[best]) <= opt.f_tol && diameter <= opt.x_tol) {
      out.converged = true;
      break;
    }
    if (diameter <= opt.x_tol * 1e-3) {
      out.converged = true;
      break;
    }

    Vec centroid = Vec::Zero(n);
    for (Eigen::Index i = 0; i <= n; ++i)
      if (i != worst) centroid += simplex[i];
    centroid /= Scalar(n);

    const Vec reflected = centroid + (centroid - simplex[worst]);
    const Scalar fr = f(reflected);
    if (fr < values[best]) {
      const Vec expanded = centroid + Scalar(2) * (centroid - simplex[worst]);
      const Scalar fe = f(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const Vec contracted = outside ? Vec(centroid + Scalar(0.5) * (reflected - centroid))
                                   : Vec(centroid + Scalar(0.5) * (simplex[worst] - centroid));
    const Scalar fc = f(contracted);
    if (fc < (outside ? fr : values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (Eigen::Index i = 0; i <= n; ++i) {
      if (i == best) continue;
      simplex[i] = simplex[best] + Scalar(0.5) * (simplex[i] - simplex[best]);
      values[i] = f(simplex[i]);
    }
  }
  const auto best = std::min_element(values.begin(), values.end()) - values.begin();
  out.x = simplex[best];
  out.value = values[best];
  return out;
}

}  // namespace bnlab
