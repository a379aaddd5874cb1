#pragma once

// Finite-difference verification of backward rules. Central differences with
// in-place perturbation; reports the worst relative error over all input
// coordinates:
//
//   max_i |analytic_i - numeric_i| / max(1e-8, |analytic_i| + |numeric_i|)
//
// Any non-finite evaluation (function value, analytic gradient, or a
// perturbed evaluation) is an error, not a large mismatch.

#include <frontsr/autodiff.hpp>
#include <frontsr/tensor.hpp>
#include <frontsr/util.hpp>

#include <cmath>
#include <utility>
#include <vector>

namespace frontsr {

template <class F>
double gradcheck(F&& fn, std::vector<Tensor> inputs, double eps = 1e-5) {
  check(!inputs.empty(), "gradcheck: no inputs");

  std::vector<ad::Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(ad::leaf(t));
  ad::Var out = fn(leaves);
  check_runtime(out.value().size() == 1, "gradcheck: function must return a scalar");
  check_runtime(std::isfinite(out.value()[0]), "gradcheck: non-finite function value");
  ad::backward(out);

  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (const ad::Var& v : leaves) {
    Tensor g = v.node()->grad_ready ? v.node()->grad : Tensor(v.value().shape());
    check_runtime(g.all_finite(), "gradcheck: non-finite analytic gradient");
    analytic.push_back(std::move(g));
  }

  auto eval = [&fn](const std::vector<Tensor>& ts) {
    std::vector<ad::Var> consts;
    consts.reserve(ts.size());
    for (const Tensor& t : ts) consts.push_back(ad::constant(t));
    ad::Var y = fn(consts);
    check_runtime(y.value().size() == 1, "gradcheck: function must return a scalar");
    const double val = y.value()[0];
    check_runtime(std::isfinite(val), "gradcheck: non-finite evaluation at perturbed point");
    return val;
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + eps;
      const double fp = eval(inputs);
      inputs[k][i] = orig - eps;
      const double fm = eval(inputs);
      inputs[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double rel = std::fabs(analytic[k][i] - numeric) /
                         std::max(1e-8, std::fabs(analytic[k][i]) + std::fabs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace frontsr
