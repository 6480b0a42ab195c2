// Copyright 2026 The flasep Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLASEP_GRADCHECK_HPP_
#define FLASEP_GRADCHECK_HPP_

// Central-difference gradient checker for scalar functions built on the tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "flasep/autodiff.hpp"
#include "flasep/error.hpp"
#include "flasep/tensor.hpp"

namespace flasep {

using TensorMap = std::map<std::string, Tensor>;
using VarMap = std::map<std::string, Var>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

using MultiScalarFn = std::function<Var(Tape&, const VarMap&)>;
using ScalarFn = std::function<Var(Tape&, const Var&)>;

namespace detail {

inline double evaluate_scalar(const MultiScalarFn& f, const TensorMap& point) {
  Tape tape;
  VarMap vars;
  for (const auto& [name, value] : point) {
    vars.emplace(name, tape.constant(value));
  }
  const double v = f(tape, vars).value().item();
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: function is not finite at a probe point");
  }
  return v;
}

}  // namespace detail

// Compares the tape gradient of f at `point` with central differences of
// step h on every coordinate of every named input. Per coordinate the error
// is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline GradCheckReport grad_check(const MultiScalarFn& f, const TensorMap& point,
                                  double h = 1e-5) {
  GradMap analytic;
  {
    Tape tape;
    VarMap vars;
    for (const auto& [name, value] : point) {
      vars.emplace(name, tape.parameter(name, value));
    }
    const Var loss = f(tape, vars);
    if (!std::isfinite(loss.value().item())) {
      throw NumericError("grad_check: function is not finite at the point");
    }
    analytic = backward(tape, loss);
  }

  GradCheckReport report;
  TensorMap probe = point;
  for (auto& [name, value] : probe) {
    const Tensor& grad = analytic.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + h;
      const double fp = detail::evaluate_scalar(f, probe);
      value[i] = saved - h;
      const double fm = detail::evaluate_scalar(f, probe);
      value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = grad[i];
      const double err = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++report.coordinates;
      if (err > report.max_relative_error || report.coordinates == 1) {
        report.max_relative_error = err;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

inline double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5) {
  const MultiScalarFn wrapped = [&f](Tape& tape, const VarMap& vars) {
    return f(tape, vars.at("x"));
  };
  return grad_check(wrapped, TensorMap{{"x", x}}, h).max_relative_error;
}

}  // namespace flasep

#endif  // FLASEP_GRADCHECK_HPP_
