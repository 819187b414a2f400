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
// Shared fixtures and independent reference implementations for the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "dagrank/data.hpp"
#include "dagrank/model.hpp"
#include "dagrank/rng.hpp"

namespace testing {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline dagrank::model::TransitionMatrix random_transition(int g, dagrank::Rng& rng, double spread = 1.5) {
  std::normal_distribution<double> normal(0.0, spread);
  dagrank::model::TransitionMatrix e{Eigen::MatrixXd::Zero(g, g)};
  for (int i = 0; i + 1 < g; ++i) {
    double total = 0;
    for (int j = i + 1; j < g; ++j) total += e.probs(i, j) = std::exp(normal(rng));
    e.probs.row(i) /= total;
  }
  return e;
}

inline dagrank::model::EmissionMatrix random_emission(int n, int g, dagrank::Rng& rng, double spread = 1.5) {
  std::normal_distribution<double> normal(0.0, spread);
  dagrank::model::EmissionMatrix p{Eigen::MatrixXd(n, g)};
  for (int j = 0; j < g; ++j) {
    for (int i = 0; i < n; ++i) p.probs(i, j) = std::exp(normal(rng));
    p.probs.col(j) /= p.probs.col(j).sum();
  }
  return p;
}

inline double logsumexp(const std::vector<double>& xs) {
  double top = kNegInf;
  for (double x : xs) top = std::max(top, x);
  if (top == kNegInf) return kNegInf;
  double s = 0;
  for (double x : xs) s += std::exp(x - top);
  return top + std::log(s);
}

/// Strictly increasing 0-based sequences from 0 to g-1 of length m, built by
/// recursion rather than by combination enumeration.
inline std::vector<std::vector<int>> all_paths(int g, int m) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur = {0};
  std::function<void()> grow = [&] {
    if (static_cast<int>(cur.size()) == m - 1) {
      if (cur.back() < g - 1) {
        cur.push_back(g - 1);
        out.push_back(cur);
        cur.pop_back();
      }
      return;
    }
    for (int v = cur.back() + 1; v < g - 1; ++v) {
      cur.push_back(v);
      grow();
      cur.pop_back();
    }
  };
  if (m == 1) {
    if (g == 1) out.push_back({0});
    return out;
  }
  grow();
  return out;
}

/// Probability of moving u -> v when v is the t-th vertex (0-based) of a
/// length-m path through g vertices, E renormalized over the successors from
/// which the path can still finish at g-1.
inline double admissible_prob(const dagrank::model::TransitionMatrix& e, int u, int v, int t, int m) {
  const int g = static_cast<int>(e.probs.rows());
  const int lo = t == m - 1 ? g - 1 : u + 1;
  const int hi = g - 1 - (m - 1 - t);
  if (v < lo || v > hi) return 0.0;
  double z = 0;
  for (int w = lo; w <= hi; ++w) z += e.probs(u, w);
  return e.probs(u, v) / z;
}

inline double path_prob(const std::vector<int>& path, const std::vector<int>& slate,
                        const dagrank::model::TransitionMatrix& e, const dagrank::model::EmissionMatrix& p,
                        bool renormalize = true) {
  double prob = p.probs(slate[0], path[0]);
  for (std::size_t i = 1; i < path.size(); ++i) {
    const int t = static_cast<int>(i);
    const double step = renormalize ? admissible_prob(e, path[i - 1], path[i], t, static_cast<int>(path.size()))
                                    : e.probs(path[i - 1], path[i]);
    prob *= step * p.probs(slate[i], path[i]);
  }
  return prob;
}

inline dagrank::data::RerankRequest random_request(int n, int d_u, int d_x, dagrank::Rng& rng, std::int64_t id = 1) {
  std::normal_distribution<double> normal;
  dagrank::data::RerankRequest r;
  r.request_id = id;
  for (int j = 0; j < d_u; ++j) r.user.push_back(normal(rng));
  for (int i = 0; i < n; ++i) {
    dagrank::data::Candidate c;
    c.id = id * 1000 + i;
    for (int j = 0; j < d_x; ++j) c.features.push_back(normal(rng));
    r.candidates.push_back(std::move(c));
  }
  return r;
}

inline dagrank::model::ModelConfig tiny_model(int n = 3, int m = 2, int lambda = 2) {
  dagrank::model::ModelConfig c;
  c.d = 8;
  c.blocks = 1;
  c.n = n;
  c.m = m;
  c.lambda = lambda;
  c.heads = 2;
  c.ffn_mult = 2;
  c.d_u = 2;
  c.d_x = 3;
  return c;
}

/// 3-sigma band of a binomial proportion.
inline double three_sigma(double p, double draws) { return 3.0 * std::sqrt(p * (1 - p) / draws); }

}  // namespace testing
