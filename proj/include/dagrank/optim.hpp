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
#pragma once

#include <vector>

#include "dagrank/autodiff.hpp"

namespace dagrank::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over every non-frozen parameter of a set. Moment
/// buffers are allocated on first use and keyed by parameter position, so a
/// given optimizer must always be stepped with the same set.
template <typename Real>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// Applies one update and zeroes the gradients. Throws NumericalError naming
  /// the first parameter whose gradient is not finite; no parameter is
  /// modified in that case.
  void step(ParameterSet<Real>& params);

  long steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  long t_ = 0;
  std::vector<Matrix<Real>> m_;
  std::vector<Matrix<Real>> v_;
};

/// L2 norm over the gradients of every non-frozen parameter.
template <typename Real>
double grad_norm(const ParameterSet<Real>& params);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace dagrank::ad
