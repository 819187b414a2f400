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
// Generator network: a transformer encoder over the candidate set and a
// decoder whose g = lambda * m position vertices form a DAG. The decoder
// yields a strictly-forward transition matrix between vertices and, for each
// vertex, a distribution over the candidates.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dagrank/autodiff.hpp"
#include "dagrank/data.hpp"

namespace dagrank::model {

struct ModelConfig {
  int d = 32;
  int blocks = 2;
  int n = 20;
  int m = 4;
  int lambda = 4;
  int heads = 2;
  int ffn_mult = 4;
  int d_u = 8;
  int d_x = 16;

  int g() const { return lambda * m; }
  /// Throws ConfigError on the first violated constraint.
  void validate() const;
};

/// g x g probabilities; entry (i, j) is zero for j <= i and the last row is
/// all zero.
struct TransitionMatrix {
  Eigen::MatrixXd probs;
};

/// n x g probabilities; column j is the candidate distribution at vertex j.
struct EmissionMatrix {
  Eigen::MatrixXd probs;
};

/// Tape values for a batch of B requests, stacked request-major.
template <typename Real>
struct ForwardPass {
  Eigen::Index batch = 0;
  ad::Value<Real> candidate_states;  // (B*n) x d
  ad::Value<Real> vertex_states;     // (B*g) x d
  ad::Value<Real> log_transition;    // (B*g) x g, -inf where masked
  ad::Value<Real> log_emission;      // (B*g) x n, row v = log of emission column v
};

/// Boolean (rows*blocks) x cols mask that hides j <= i inside each g x g block.
ad::Mask forward_dag_mask(Eigen::Index g, Eigen::Index blocks);

template <typename Real>
class Generator {
 public:
  Generator(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  ad::ParameterSet<Real>& params() { return params_; }
  const ad::ParameterSet<Real>& params() const { return params_; }

  /// Rows are candidate features followed by the user features.
  ad::Matrix<Real> input_matrix(std::span<const data::RerankRequest* const> requests) const;

  ad::Value<Real> encode(ad::Tape<Real>& tape, const ad::Value<Real>& inputs, Eigen::Index batch);
  ad::Value<Real> decode_vertices(ad::Tape<Real>& tape, const ad::Value<Real>& candidate_states, Eigen::Index batch);
  ad::Value<Real> log_transition(ad::Tape<Real>& tape, const ad::Value<Real>& vertex_states, Eigen::Index batch);
  ad::Value<Real> log_emission(ad::Tape<Real>& tape, const ad::Value<Real>& candidate_states,
                               const ad::Value<Real>& vertex_states, Eigen::Index batch);

  ForwardPass<Real> forward(ad::Tape<Real>& tape, std::span<const data::RerankRequest* const> requests);

 private:
  ModelConfig config_;
  ad::ParameterSet<Real> params_;
};

/// Dense double views of request `index` within a forward pass.
template <typename Real>
TransitionMatrix transition_of(const ForwardPass<Real>& pass, Eigen::Index index);
template <typename Real>
EmissionMatrix emission_of(const ForwardPass<Real>& pass, Eigen::Index index);

/// Emission matrices (n x m) of a vanilla generator, i.e. one built with
/// lambda = 1 whose transitions are never consulted.
template <typename Real>
std::vector<EmissionMatrix> vanilla_forward(Generator<Real>& generator,
                                            std::span<const data::RerankRequest* const> requests);

extern template class Generator<float>;
extern template class Generator<double>;
extern template class Generator<long double>;

}  // namespace dagrank::model
