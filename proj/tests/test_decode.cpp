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
#include <doctest.h>

#include <map>
#include <set>

#include "dagrank/decode.hpp"
#include "dagrank/metrics.hpp"
#include "support.hpp"

using namespace dagrank;

namespace {

struct Step {
  int vertex;
  int item;
};

// Exhaustive argmax of E[u][v] * P[c][v] over admissible v and unused c,
// scanning in (v, c) order so that ties go to the first pair.
Step best_step(const model::TransitionMatrix& e, const model::EmissionMatrix& p, int u, int t, int m,
               const std::vector<int>& used) {
  const int g = static_cast<int>(e.probs.rows());
  Step best{-1, -1};
  double score = -1;
  for (int v = 0; v < g; ++v) {
    const bool admissible = v > u && (t == m - 1 ? v == g - 1 : v <= g - 1 - (m - 1 - t));
    if (!admissible) continue;
    for (int c = 0; c < p.probs.rows(); ++c) {
      if (std::find(used.begin(), used.end(), c) != used.end()) continue;
      const double s = e.probs(u, v) * p.probs(c, v);
      if (s > score) {
        score = s;
        best = {v, c};
      }
    }
  }
  return best;
}

}  // namespace

TEST_SUITE("decode") {

TEST_CASE("degenerate graph decodes column by column") {
  Rng rng(1);
  const auto e = testing::random_transition(4, rng);
  const auto p = testing::random_emission(6, 4, rng);
  const auto r = decode::lookahead_decode(e, p, 4);
  CHECK(r.path == dag::Path{0, 1, 2, 3});
  CHECK(r.slate == decode::vanilla_decode(p, 4).slate);
}

TEST_CASE("hand-built instance picks the nearer vertex") {
  model::TransitionMatrix e{Eigen::MatrixXd::Zero(4, 4)};
  e.probs.row(0) << 0, 0.6, 0.3, 0.1;
  e.probs.row(1) << 0, 0, 0.5, 0.5;
  e.probs.row(2) << 0, 0, 0, 1;
  // Step 2: vertex 1 with item 1 scores 0.6 * 0.7, ahead of any pair at
  // vertex 2 (at most 0.3 * 0.4). Step 3 is forced to the sink.
  model::EmissionMatrix p3{Eigen::MatrixXd(3, 4)};
  p3.probs.row(0) << 0.8, 0.1, 0.4, 0.3;
  p3.probs.row(1) << 0.1, 0.7, 0.4, 0.3;
  p3.probs.row(2) << 0.1, 0.2, 0.2, 0.4;
  const auto r = decode::lookahead_decode(e, p3, 3);
  CHECK(r.path == dag::Path{0, 1, 3});
  CHECK(r.slate == std::vector<int>{0, 1, 2});
  const double expect = std::log(0.8) + std::log(0.6 / 0.9) + std::log(0.7) + std::log(1.0) + std::log(0.4);
  CHECK(r.joint_log_prob == doctest::Approx(expect).epsilon(1e-12));
  CHECK(r.transition_decisions == 2);
  model::EmissionMatrix two{p3.probs.topRows(2)};
  CHECK_THROWS_AS(decode::lookahead_decode(e, two, 3), ConfigError);
}

TEST_CASE("every lookahead step is the exhaustive argmax") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int g = std::uniform_int_distribution<int>(2, 12)(rng);
    const int m = std::uniform_int_distribution<int>(2, std::min(g, 6))(rng);
    const int n = std::uniform_int_distribution<int>(m, 9)(rng);
    const auto e = testing::random_transition(g, rng);
    const auto p = testing::random_emission(n, g, rng);
    const auto r = decode::lookahead_decode(e, p, m);
    CHECK_NOTHROW(decode::check_result(r, e, p, m));
    int first = 0;
    for (int c = 1; c < n; ++c)
      if (p.probs(c, 0) > p.probs(first, 0)) first = c;
    CHECK(r.slate[0] == first);
    std::vector<int> used = {first};
    for (int t = 1; t < m; ++t) {
      const auto s = best_step(e, p, r.path[static_cast<std::size_t>(t - 1)], t, m, used);
      CHECK(r.path[static_cast<std::size_t>(t)] == s.vertex);
      CHECK(r.slate[static_cast<std::size_t>(t)] == s.item);
      used.push_back(s.item);
    }
    CHECK(r.transition_decisions == static_cast<std::size_t>(m - 1));
    const auto again = decode::lookahead_decode(e, p, m);
    CHECK(again.slate == r.slate);
    CHECK(again.path == r.path);
  }
}

TEST_CASE("ties resolve to the lowest vertex and candidate") {
  model::TransitionMatrix e{Eigen::MatrixXd::Zero(4, 4)};
  e.probs.row(0) << 0, 0.5, 0.5, 0;
  e.probs.row(1) << 0, 0, 0.5, 0.5;
  e.probs.row(2) << 0, 0, 0, 1;
  model::EmissionMatrix p{Eigen::MatrixXd::Constant(4, 4, 0.25)};
  const auto r = decode::lookahead_decode(e, p, 3);
  CHECK(r.path == dag::Path{0, 1, 3});
  CHECK(r.slate == std::vector<int>{0, 1, 2});
}

TEST_CASE("free endpoint stops anywhere") {
  Rng rng(3);
  const auto e = testing::random_transition(8, rng);
  const auto p = testing::random_emission(5, 8, rng);
  decode::DecodeOptions free;
  free.free_endpoint = true;
  const auto r = decode::lookahead_decode(e, p, 3, free);
  CHECK(r.path.size() == 3);
  CHECK_NOTHROW(decode::check_result(r, e, p, 3, free));
}

TEST_CASE("sampling at a vanishing temperature is greedy") {
  Rng rng(4);
  int agreements = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int g = 8, m = 4, n = 6;
    const auto e = testing::random_transition(g, rng, 3.0);
    const auto p = testing::random_emission(n, g, rng, 3.0);
    auto srng = make_stream(7, "pathsample", static_cast<std::uint64_t>(trial));
    const auto s = decode::sample_decode(e, p, m, 1e-4, srng);
    // Sequential greedy reference: best admissible vertex, then best unused item.
    std::vector<int> used;
    dag::Path path = {0};
    std::vector<int> slate;
    auto pick_item = [&](int v) {
      int best = -1;
      for (int c = 0; c < n; ++c)
        if (std::find(used.begin(), used.end(), c) == used.end() && (best < 0 || p.probs(c, v) > p.probs(best, v)))
          best = c;
      used.push_back(best);
      slate.push_back(best);
    };
    pick_item(0);
    for (int t = 1; t < m; ++t) {
      const auto range = dag::admissible_successors(path.back(), t, g, m);
      int best = range.lo;
      for (int v = range.lo; v <= range.hi; ++v)
        if (e.probs(path.back(), v) > e.probs(path.back(), best)) best = v;
      path.push_back(best);
      pick_item(best);
    }
    CHECK(s.path == path);
    CHECK(s.slate == slate);
    const auto l = decode::lookahead_decode(e, p, m);
    if (l.path == path && l.slate == slate) {
      ++agreements;
      CHECK(s.slate == l.slate);
    }
  }
  CHECK(agreements > 0);
}

TEST_CASE("sampling with g = m only varies items") {
  Rng rng(5);
  const auto e = testing::random_transition(3, rng);
  const auto p = testing::random_emission(6, 3, rng, 0.1);
  std::set<std::vector<int>> slates;
  for (int i = 0; i < 50; ++i) {
    const auto r = decode::sample_decode(e, p, 3, 1.0, rng);
    CHECK(r.path == dag::Path{0, 1, 2});
    CHECK_NOTHROW(decode::check_result(r, e, p, 3));
    slates.insert(r.slate);
  }
  CHECK(slates.size() > 1);
}

TEST_CASE("sampled paths follow the renormalized transitions") {
  Rng rng(6);
  const auto e = testing::random_transition(4, rng, 0.8);
  const auto p = testing::random_emission(4, 4, rng);
  const int draws = 10000;

  // m = 3: the middle vertex is 1 or 2.
  std::map<int, int> counts;
  for (int i = 0; i < draws; ++i) ++counts[decode::sample_decode(e, p, 3, 1.0, rng).path[1]];
  for (int v : {1, 2}) {
    const double q = testing::admissible_prob(e, 0, v, 1, 3);
    CHECK(std::abs(counts[v] / double(draws) - q) <= testing::three_sigma(q, draws));
  }

  // m = 2 with a free endpoint: the row of E itself.
  decode::DecodeOptions free;
  free.free_endpoint = true;
  counts.clear();
  for (int i = 0; i < draws; ++i) ++counts[decode::sample_decode(e, p, 2, 1.0, rng, free).path[1]];
  for (int v : {1, 2, 3}) {
    const double q = e.probs(0, v);
    CHECK(std::abs(counts[v] / double(draws) - q) <= testing::three_sigma(q, draws));
  }
}

TEST_CASE("sampled results are admissible and consistent") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int g = std::uniform_int_distribution<int>(2, 12)(rng);
    const int m = std::uniform_int_distribution<int>(2, std::min(g, 6))(rng);
    const int n = std::uniform_int_distribution<int>(m, 9)(rng);
    const auto e = testing::random_transition(g, rng);
    const auto p = testing::random_emission(n, g, rng);
    const auto r = decode::sample_decode(e, p, m, 0.7, rng);
    CHECK_NOTHROW(decode::check_result(r, e, p, m));
    CHECK(r.transition_decisions == static_cast<std::size_t>(m - 1));
  }
  CHECK_THROWS_AS(decode::sample_decode(testing::random_transition(4, rng), testing::random_emission(4, 4, rng), 2,
                                        0.0, rng),
                  ConfigError);
}

TEST_CASE("strategy names round-trip") {
  for (auto s : {decode::Strategy::kLookahead, decode::Strategy::kSample, decode::Strategy::kVanilla})
    CHECK(decode::parse_strategy(decode::strategy_name(s)) == s);
  CHECK_THROWS_AS(decode::parse_strategy("beam"), ConfigError);
}

TEST_CASE("batch decoding") {
  Rng rng(8);
  model::ModelConfig c;
  c.n = 8;
  c.m = 3;
  c.lambda = 3;
  c.blocks = 1;
  model::Generator<float> gen(c, 2);
  const auto base = testing::random_request(c.n, c.d_u, c.d_x, rng, 5);
  std::vector<data::RerankRequest> same(100, base);
  std::vector<const data::RerankRequest*> ptrs;
  for (const auto& r : same) ptrs.push_back(&r);

  decode::BatchOptions look;
  look.chunk = 32;
  const auto a = decode::batch_decode(gen, ptrs, look);
  REQUIRE(a.size() == 100);
  for (const auto& r : a) {
    CHECK(r.slate == a.front().slate);
    CHECK(r.transition_decisions == 2);
  }

  look.workers = 3;
  const auto threaded = decode::batch_decode(gen, ptrs, look);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(threaded[i].slate == a[i].slate);

  decode::BatchOptions sample;
  sample.strategy = decode::Strategy::kSample;
  sample.seed = 3;
  const auto s = decode::batch_decode(gen, ptrs, sample);
  metrics::SlateSet sets;
  for (const auto& r : s) sets.emplace_back(r.slate.begin(), r.slate.end());
  CHECK(metrics::diversity_score(sets) > 0);
  const auto s2 = decode::batch_decode(gen, ptrs, sample);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i].slate == s2[i].slate);

  CHECK(decode::batch_decode(gen, std::span<const data::RerankRequest* const>{}, look).empty());

  auto broken = testing::random_request(c.n - 2, c.d_u, c.d_x, rng, 4242);
  const std::vector<const data::RerankRequest*> bad = {&broken};
  try {
    decode::batch_decode(gen, bad, look);
    FAIL("expected an error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("4242") != std::string::npos);
  }
}

}  // TEST_SUITE
