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
#include "dagrank/optim.hpp"

#include <cmath>

namespace dagrank::ad {

template <typename Real>
void Adam<Real>::step(ParameterSet<Real>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!p.frozen && !p.grad.allFinite()) throw NumericalError("adam: non-finite gradient in parameter " + p.name);
  }
  if (m_.size() != params.size()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = Matrix<Real>::Zero(params[i].value.rows(), params[i].value.cols());
      v_[i] = Matrix<Real>::Zero(params[i].value.rows(), params[i].value.cols());
    }
  }
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const Real c1 = static_cast<Real>(1.0 - std::pow(b1, static_cast<double>(t_)));
  const Real c2 = static_cast<Real>(1.0 - std::pow(b2, static_cast<double>(t_)));
  const Real lr = static_cast<Real>(options_.lr);
  const Real eps = static_cast<Real>(options_.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.frozen) continue;
    m_[i] = Real(b1) * m_[i] + Real(1 - b1) * p.grad;
    v_[i] = Real(b2) * v_[i] + Real(1 - b2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    p.grad.setZero();
  }
}

template <typename Real>
double grad_norm(const ParameterSet<Real>& params) {
  double total = 0;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params[i].frozen) total += params[i].grad.template cast<double>().squaredNorm();
  return std::sqrt(total);
}

template class Adam<float>;
template class Adam<double>;
template double grad_norm(const ParameterSet<float>&);
template double grad_norm(const ParameterSet<double>&);

}  // namespace dagrank::ad
