// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient oracle.

#pragma once

#include <functional>
#include <span>
#include <stdexcept>

#include "gret/tensor.hpp"

namespace gret {

struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
/// for the scalar function f at x. Throws OracleError when f is not
/// deterministic and ContractError when eps <= 0 or f is not scalar.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double eps = 1e-5);

/// Same measure over every coordinate of each tensor in `params`, which f()
/// reads implicitly (layer weights). Parameters are perturbed in place and
/// restored bitwise.
double finite_difference_check_params(const std::function<Tensor()>& f,
                                      std::span<Tensor> params, double eps = 1e-5);

}  // namespace gret
