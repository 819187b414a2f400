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
// Evaluator network and the generator-evaluator training objectives.
//
// The evaluator scores a slate per item and per task (show, click,
// next_slide). During generator training it is frozen and judges slates
// drawn from the generator through a Gumbel-softmax relaxation of the
// emission rows along a sampled vertex path, so its verdict is
// differentiable with respect to the generator's emissions.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dagrank/autodiff.hpp"
#include "dagrank/dag_loss.hpp"
#include "dagrank/data.hpp"
#include "dagrank/model.hpp"
#include "dagrank/rng.hpp"

namespace dagrank::cascade {

struct EvaluatorConfig {
  std::vector<std::string> tasks = {"show", "click", "next_slide"};
  // Target used for each task when judging generated slates.
  std::vector<double> polarity = {1.0, 1.0, 0.0};
  int d = 32;
  int heads = 2;
  int tower_hidden = 32;
  bool positional = true;
  int m = 4;
  int d_u = 8;
  int d_x = 16;

  int k() const { return static_cast<int>(tasks.size()); }
  void validate() const;
};

template <typename Real>
class Evaluator {
 public:
  Evaluator(EvaluatorConfig config, std::uint64_t init_seed);

  const EvaluatorConfig& config() const { return config_; }
  ad::ParameterSet<Real>& params() { return params_; }
  const ad::ParameterSet<Real>& params() const { return params_; }

  /// `slates` is (B*m) x d_x item features, `users` B x d_u. Returns the
  /// (B*m) x k pre-sigmoid scores.
  ad::Value<Real> logits(ad::Tape<Real>& tape, const ad::Value<Real>& slates, const ad::Matrix<Real>& users);
  /// Sigmoid of logits(); entries lie strictly inside (0, 1).
  ad::Value<Real> scores(ad::Tape<Real>& tape, const ad::Value<Real>& slates, const ad::Matrix<Real>& users);

 private:
  EvaluatorConfig config_;
  ad::ParameterSet<Real> params_;
};

/// Per-request inputs stacked for a batch of B requests.
template <typename Real>
struct CascadeInputs {
  ad::Matrix<Real> candidate_features;  // (B*n) x d_x
  ad::Matrix<Real> users;               // B x d_u
};

template <typename Real>
CascadeInputs<Real> cascade_inputs(std::span<const data::RerankRequest* const> requests);

/// Features of the logged slates, (B*m) x d_x, in display order.
template <typename Real>
ad::Matrix<Real> logged_slate_features(std::span<const data::Record* const> records);
/// Logged labels, (B*m) x k.
template <typename Real>
ad::Matrix<Real> logged_labels(std::span<const data::Record* const> records);

/// Summed binary cross-entropy over items and tasks, averaged over the batch.
template <typename Real>
ad::Value<Real> eval_loss(ad::Tape<Real>& tape, Evaluator<Real>& evaluator, const ad::Value<Real>& slates,
                          const ad::Matrix<Real>& users, const ad::Matrix<Real>& labels);

/// r = -log(-log(u)), u ~ Uniform(0, 1).
template <typename Real>
ad::Matrix<Real> gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Row-wise softmax((logits + noise) / tau). Gradient reaches `logits` only.
template <typename Real>
ad::Value<Real> gumbel_relaxed_sample(ad::Tape<Real>& tape, const ad::Value<Real>& logits,
                                      const ad::Matrix<Real>& noise, double tau);

/// Row i of the result is relaxed-row i times the candidate features of
/// its request: (B*m) x n against (B*n) x d_x, blockwise.
template <typename Real>
ad::Value<Real> relaxed_slate_embeddings(ad::Tape<Real>& tape, const ad::Value<Real>& relaxed,
                                         const ad::Value<Real>& candidate_features, Eigen::Index batch);

/// The random choices behind one consistency-loss evaluation: a vertex path
/// per request and Gumbel noise for every (slot, candidate).
struct ConsistencyDraw {
  std::vector<dag::Path> paths;
  ad::Matrix<double> noise;  // (B*m) x n
};

template <typename Real>
ConsistencyDraw draw_consistency(const model::ForwardPass<Real>& pass, int m, Rng& path_rng, Rng& gumbel_rng);

/// Cross-entropy of the frozen evaluator's scores of the relaxed slates
/// against the per-task polarity targets, summed over items and tasks and
/// averaged over the batch. Evaluator parameters must be frozen.
template <typename Real>
ad::Value<Real> consistency_loss(ad::Tape<Real>& tape, Evaluator<Real>& evaluator,
                                 const model::ForwardPass<Real>& pass, const CascadeInputs<Real>& inputs,
                                 const ConsistencyDraw& draw, double tau);

/// consistency + alpha * generative.
template <typename Real>
ad::Value<Real> total_loss(ad::Tape<Real>& tape, const ad::Value<Real>& consistency, const ad::Value<Real>& generative,
                           double alpha);

/// Evaluator-predicted utility of a hard slate: mean over items and tasks of
/// the score agreeing with each task's polarity (s for polarity 1, 1 - s for 0).
template <typename Real>
std::vector<double> slate_utility(Evaluator<Real>& evaluator, std::span<const data::RerankRequest* const> requests,
                                  const std::vector<std::vector<int>>& slates);

extern template class Evaluator<float>;
extern template class Evaluator<double>;
extern template class Evaluator<long double>;

}  // namespace dagrank::cascade
