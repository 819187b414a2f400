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
// Inference-time slate construction over a generator's transition and
// emission matrices. All strategies emit exactly m distinct candidates.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dagrank/dag_loss.hpp"
#include "dagrank/data.hpp"
#include "dagrank/model.hpp"
#include "dagrank/rng.hpp"

namespace dagrank::decode {

struct DecodeResult {
  std::vector<int> slate;  // candidate indices, distinct
  dag::Path path;          // 0-based vertices
  double joint_log_prob = 0;
  // Number of vertex-to-vertex moves taken; m - 1 for the graph strategies.
  std::size_t transition_decisions = 0;
};

struct DecodeOptions {
  // Stop after m emissions wherever the path is instead of forcing the last
  // vertex to g - 1.
  bool free_endpoint = false;
  dag::TransitionNorm norm = dag::TransitionNorm::kAdmissible;
};

/// Greedy joint search: the first item is the best candidate at vertex 0;
/// each later step picks the (vertex, candidate) pair maximizing
/// E[prev][v] * P[c][v] over admissible v and not-yet-emitted c. Ties go to
/// the lowest vertex, then the lowest candidate.
DecodeResult lookahead_decode(const model::TransitionMatrix& e, const model::EmissionMatrix& p, int m,
                              const DecodeOptions& options = {});

/// Ancestral sampling: each vertex from the admissible part of its
/// predecessor's row, each item from the vertex's column over unemitted
/// candidates; both distributions are sharpened as p^(1/temperature).
DecodeResult sample_decode(const model::TransitionMatrix& e, const model::EmissionMatrix& p, int m, double temperature,
                           Rng& rng, const DecodeOptions& options = {});

/// Position j emits the best unemitted candidate of column j; transitions
/// are ignored and the path is 0..m-1.
DecodeResult vanilla_decode(const model::EmissionMatrix& p, int m);

/// Vertex path drawn from the admissible-renormalized transitions.
dag::Path sample_path(const model::TransitionMatrix& e, int m, Rng& rng, double temperature = 1.0,
                      bool free_endpoint = false);

/// Throws Error if `result` breaks the DecodeResult invariants.
void check_result(const DecodeResult& result, const model::TransitionMatrix& e, const model::EmissionMatrix& p, int m,
                  const DecodeOptions& options = {});

enum class Strategy { kLookahead, kSample, kVanilla };

Strategy parse_strategy(std::string_view name);
std::string_view strategy_name(Strategy s);

struct BatchOptions {
  Strategy strategy = Strategy::kLookahead;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  // Requests per forward pass.
  std::size_t chunk = 256;
  // Threads decoding chunks concurrently.
  std::size_t workers = 1;
  DecodeOptions decode;
};

/// One forward pass per chunk of requests, then per-request decoding. For
/// kSample, request i of the list draws from sub-stream i of `seed`.
template <typename Real>
std::vector<DecodeResult> batch_decode(model::Generator<Real>& generator,
                                       std::span<const data::RerankRequest* const> requests,
                                       const BatchOptions& options);

/// Per-request matrices kept alongside decode results for ranking metrics.
struct DecodedRequest {
  DecodeResult result;
  model::TransitionMatrix transition;
  model::EmissionMatrix emission;
};

template <typename Real>
std::vector<DecodedRequest> batch_decode_with_matrices(model::Generator<Real>& generator,
                                                       std::span<const data::RerankRequest* const> requests,
                                                       const BatchOptions& options);

}  // namespace dagrank::decode
