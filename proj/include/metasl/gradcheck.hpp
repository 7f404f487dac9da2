// Central finite-difference verification of reverse-mode gradients.

#ifndef METASL_GRADCHECK_HPP
#define METASL_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "metasl/autodiff.hpp"
#include "metasl/optim.hpp"

namespace metasl {

/// Builds a scalar from a single input node.
using ScalarFn = std::function<ad::Var(ad::Graph&, ad::Var)>;

/// Builds a scalar loss; the callable binds whatever parameters it needs.
using ParamLossFn = std::function<ad::Var(ad::Graph&)>;

inline double relative_error(double analytic, double numeric)
{
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

namespace detail {

inline double eval_scalar(const ScalarFn& f, const Tensor& x)
{
  ad::Graph g;
  Tensor copy = x;
  copy.set_requires_grad(false);
  auto out = f(g, g.constant(std::move(copy)));
  if (g.value(out).size() != 1)
    throw std::invalid_argument("grad_check: function is not scalar-valued");
  return g.value(out).item();
}

inline double eval_loss(const ParamLossFn& f)
{
  ad::Graph g;
  return g.value(f(g)).item();
}

}  // namespace detail

/// Max over coordinates of |analytic - central| / max(1, |analytic|, |central|).
inline double grad_check(const ScalarFn& f, const Tensor& point, double step = 1e-5)
{
  if (!(step > 0.0))
    throw std::invalid_argument("grad_check: step must be positive");

  Tensor x = point;
  x.set_requires_grad(true);
  x.clear_grad();
  {
    ad::Graph g;
    auto out = f(g, g.param(x));
    if (g.value(out).size() != 1)
      throw std::invalid_argument("grad_check: function is not scalar-valued");
    g.backward(out);
  }
  const std::vector<double> analytic = x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                                     : std::vector<double>(x.size(), 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor plus = point, minus = point;
    plus[i] += step;
    minus[i] -= step;
    const double numeric = (detail::eval_scalar(f, plus) - detail::eval_scalar(f, minus)) / (2.0 * step);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

struct GroupError {
  std::string name;
  double max_rel_error = 0.0;
};

/// Per-group check of every parameter in `params` against central differences.
/// `loss` must bind the tensors of `params` through Graph::param.
inline std::vector<GroupError> grad_check_params(ParamSet& params, const ParamLossFn& loss, double step = 1e-5)
{
  if (!(step > 0.0))
    throw std::invalid_argument("grad_check: step must be positive");
  params.zero_grad();
  {
    ad::Graph g;
    auto out = loss(g);
    if (g.value(out).size() != 1)
      throw std::invalid_argument("grad_check: loss is not scalar-valued");
    g.backward(out);
  }
  const GradientSet analytic = params.gradients();

  std::vector<GroupError> report;
  for (std::size_t gi = 0; gi < params.groups(); ++gi) {
    auto& t = params.entry(gi).tensor;
    GroupError ge{params.entry(gi).name, 0.0};
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + step;
      const double fp = detail::eval_loss(loss);
      t[i] = orig - step;
      const double fm = detail::eval_loss(loss);
      t[i] = orig;
      ge.max_rel_error = std::max(ge.max_rel_error, relative_error(analytic[gi][i], (fp - fm) / (2.0 * step)));
    }
    report.push_back(ge);
  }
  return report;
}

}  // namespace metasl

#endif  // METASL_GRADCHECK_HPP
