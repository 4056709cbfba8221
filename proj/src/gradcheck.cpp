// SPDX-License-Identifier: Apache-2.0

#include "gret/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace gret {
namespace {

double scalar_value(const Tensor& t) {
  if (t.numel() != 1) throw ContractError("finite_difference_check: f must return a scalar");
  return t.item();
}

double evaluate(const std::function<Tensor()>& f) {
  autodiff::NoGradGuard guard;
  return scalar_value(f());
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

void check_eps(double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_difference_check: eps must be positive");
}

void check_deterministic(const std::function<Tensor()>& f) {
  const double first = evaluate(f);
  const double second = evaluate(f);
  if (first != second && !(std::isnan(first) && std::isnan(second))) {
    throw OracleError("finite_difference_check: f is not deterministic");
  }
}

}  // namespace

double finite_difference_check_params(const std::function<Tensor()>& f,
                                      std::span<Tensor> params, double eps) {
  check_eps(eps);
  check_deterministic(f);

  for (auto& p : params) p.zero_grad();
  autodiff::Graph::current().clear();
  backward(f());

  double worst = 0.0;
  for (auto& p : params) {
    const auto analytic = p.grad();
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(f);
      values[i] = saved - eps;
      const double down = evaluate(f);
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
    p.zero_grad();
  }
  return worst;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double eps) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  Tensor params[] = {leaf};
  return finite_difference_check_params([&] { return f(leaf); }, params, eps);
}

}  // namespace gret
