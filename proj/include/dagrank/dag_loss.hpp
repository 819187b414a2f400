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
// Path-marginalized likelihood of a slate under the DAG decoder.
//
// Vertices are 0-based here: a path over g vertices with m steps starts at 0,
// ends at g - 1 and is strictly increasing. At step t the successor of u is
// restricted to the vertices from which the remaining m - 1 - t steps can
// still reach g - 1 (the final step goes to g - 1 itself). Under
// TransitionNorm::kAdmissible a transition probability is renormalized over
// that admissible set, which makes the model a proper distribution over
// length-m slates; kRaw uses E as is.
#pragma once

#include <span>
#include <vector>

#include "dagrank/autodiff.hpp"
#include "dagrank/model.hpp"

namespace dagrank::dag {

using Path = std::vector<int>;

enum class TransitionNorm { kAdmissible, kRaw };

struct VertexRange {
  int lo = 0;  // inclusive
  int hi = -1; // inclusive; empty when hi < lo
  bool empty() const { return hi < lo; }
};

/// Successors of `from` allowed at step `step` (1 <= step < m). With
/// `free_endpoint` the final step may land on any later vertex.
VertexRange admissible_successors(int from, int step, int g, int m, bool free_endpoint = false);

/// Throws ConfigError unless `path` has m strictly increasing entries from 0 to g - 1.
void validate_path(const Path& path, int g, int m);

/// log P(step-th vertex = to | previous = from) under `norm`; -inf outside the admissible set.
double transition_log_prob(const model::TransitionMatrix& e, int from, int to, int step, int m,
                           TransitionNorm norm = TransitionNorm::kAdmissible, bool free_endpoint = false);

/// log P_g[y_1][a_1] + sum over steps of (log transition + log emission).
double path_log_prob(const Path& path, std::span<const int> slate, const model::TransitionMatrix& e,
                     const model::EmissionMatrix& p, TransitionNorm norm = TransitionNorm::kAdmissible);

/// log of the slate probability summed over every valid path, by a forward
/// pass in log space restricted to the reachable band of each step.
double dag_log_marginal(std::span<const int> slate, const model::TransitionMatrix& e, const model::EmissionMatrix& p,
                        TransitionNorm norm = TransitionNorm::kAdmissible);

/// All valid paths in lexicographic order. Throws ConfigError when there
/// would be more than 10^6 of them.
std::vector<Path> enumerate_paths(int g, int m);

/// Number of valid paths, C(g - 2, m - 2), saturating at `cap + 1`.
long long path_count(int g, int m, long long cap = 1000000);

/// Batched, differentiable marginal. `log_transition` is (B*g) x g and
/// `log_emission` (B*g) x n as produced by model::Generator; `targets[b]`
/// holds the m candidate indices of sample b. Returns a B x 1 value whose
/// gradient comes from the forward-backward posteriors.
template <typename Real>
ad::Value<Real> dag_log_marginal(ad::Tape<Real>& tape, const ad::Value<Real>& log_transition,
                                 const ad::Value<Real>& log_emission, const std::vector<std::vector<int>>& targets,
                                 TransitionNorm norm = TransitionNorm::kAdmissible);

/// Mean negative log-marginal over the batch. Throws NumericalError naming the
/// first batch element whose likelihood is not finite.
template <typename Real>
ad::Value<Real> gen_loss(ad::Tape<Real>& tape, const model::ForwardPass<Real>& pass,
                         const std::vector<std::vector<int>>& targets, TransitionNorm norm = TransitionNorm::kAdmissible);

}  // namespace dagrank::dag
