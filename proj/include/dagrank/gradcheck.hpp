// Copyright 2026 The dagrank Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Central finite-difference check of reverse-mode gradients. The oracle only
// evaluates the loss; it never touches the tape's backward pass.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "dagrank/autodiff.hpp"
#include "dagrank/error.hpp"

namespace dagrank::ad {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  std::size_t checked = 0;
};

namespace detail {

inline void record_error(GradCheckResult& result, const std::string& name, Eigen::Index i, double analytic,
                         double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  const double err = std::abs(analytic - numeric) / denom;
  ++result.checked;
  if (err > result.max_rel_error || result.worst_index < 0) {
    result.max_rel_error = err;
    result.worst_parameter = name;
    result.worst_index = i;
  }
}

inline void analytic_gradients(ParameterSet<double>& params,
                               const std::function<Value<double>(Tape<double>&)>& loss) {
  params.zero_grad();
  Tape<double> tape;
  tape.backward(loss(tape));
}

}  // namespace detail

/// Copies values (and frozen flags) between two parameter sets of the same layout.
template <typename From, typename To>
void copy_values(const ParameterSet<From>& from, ParameterSet<To>& to) {
  if (from.size() != to.size()) throw ShapeError("copy_values: parameter sets differ in size");
  for (std::size_t k = 0; k < from.size(); ++k) {
    if (from[k].name != to[k].name || from[k].value.rows() != to[k].value.rows() ||
        from[k].value.cols() != to[k].value.cols())
      throw ShapeError("copy_values: layout mismatch at " + from[k].name);
    to[k].value = from[k].value.template cast<To>();
    to[k].frozen = from[k].frozen;
  }
}

/// `loss` builds a fresh tape from the current parameter values and returns
/// the scalar loss. Numeric derivatives are two-point central differences.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckResult gradient_check(ParameterSet<double>& params,
                                      const std::function<Value<double>(Tape<double>&)>& loss,
                                      double step = 1e-5, double floor = 1e-8) {
  detail::analytic_gradients(params, loss);
  auto evaluate = [&] {
    Tape<double> tape;
    return loss(tape).item();
  };
  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (p.frozen) continue;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + step;
      const double up = evaluate();
      x = saved - step;
      const double down = evaluate();
      x = saved;
      detail::record_error(result, p.name, i, p.grad.data()[i], (up - down) / (2 * step), floor);
    }
  }
  params.zero_grad();
  return result;
}

/// As above, but the central differences are taken on `reference`, which must
/// evaluate the same loss in long double from `mirror`. The mirror is loaded
/// from `params` first. With 64-bit mantissas the roundoff of a difference
/// quotient stays far below the step-squared truncation, so gradients much
/// smaller than the loss itself are still resolved.
inline GradCheckResult gradient_check(ParameterSet<double>& params,
                                      const std::function<Value<double>(Tape<double>&)>& loss,
                                      ParameterSet<long double>& mirror,
                                      const std::function<Value<long double>(Tape<long double>&)>& reference,
                                      long double step = 1e-6L, double floor = 1e-8) {
  detail::analytic_gradients(params, loss);
  copy_values(params, mirror);
  auto evaluate = [&] {
    Tape<long double> tape;
    return reference(tape).item();
  };
  GradCheckResult result;
  for (std::size_t k = 0; k < mirror.size(); ++k) {
    auto& p = mirror[k];
    if (p.frozen) continue;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      long double& x = p.value.data()[i];
      const long double saved = x;
      const long double hi = saved + step, lo = saved - step;
      x = hi;
      const long double up = evaluate();
      x = lo;
      const long double down = evaluate();
      x = saved;
      const auto numeric = static_cast<double>((up - down) / (hi - lo));
      detail::record_error(result, p.name, i, params[k].grad.data()[i], numeric, floor);
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace dagrank::ad
