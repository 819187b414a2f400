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

#include <chrono>

#include "dagrank/dag_loss.hpp"
#include "dagrank/gradcheck.hpp"
#include "support.hpp"

using namespace dagrank;
using Mat = ad::Matrix<double>;

namespace {

double brute_marginal(const std::vector<int>& y, const model::TransitionMatrix& e, const model::EmissionMatrix& p,
                      bool renormalize = true) {
  std::vector<double> terms;
  for (const auto& path : testing::all_paths(static_cast<int>(e.probs.rows()), static_cast<int>(y.size())))
    terms.push_back(std::log(testing::path_prob(path, y, e, p, renormalize)));
  return testing::logsumexp(terms);
}

// Stacked log matrices of one request, as the model emits them.
std::pair<Mat, Mat> log_mats(const model::TransitionMatrix& e, const model::EmissionMatrix& p) {
  Mat le = e.probs.array().log().matrix();
  Mat lp = p.probs.transpose().array().log().matrix();
  return {le, lp};
}

}  // namespace

TEST_SUITE("dag-loss") {

TEST_CASE("path enumeration") {
  CHECK(dag::enumerate_paths(4, 3) == std::vector<dag::Path>{{0, 1, 3}, {0, 2, 3}});
  CHECK(dag::enumerate_paths(5, 5) == std::vector<dag::Path>{{0, 1, 2, 3, 4}});
  CHECK(dag::enumerate_paths(8, 4).size() == 15);
  CHECK(dag::path_count(8, 4) == 15);
  for (int g = 2; g <= 10; ++g)
    for (int m = 2; m <= std::min(g, 5); ++m) CHECK(dag::enumerate_paths(g, m) == testing::all_paths(g, m));
  CHECK_THROWS(dag::enumerate_paths(60, 12));
}

TEST_CASE("path validation") {
  CHECK_NOTHROW(dag::validate_path({0, 2, 3}, 4, 3));
  CHECK_THROWS(dag::validate_path({0, 2, 2}, 4, 3));
  CHECK_THROWS(dag::validate_path({1, 2, 3}, 4, 3));
  CHECK_THROWS(dag::validate_path({0, 1, 2}, 4, 3));
  CHECK_THROWS(dag::validate_path({0, 3}, 4, 3));
}

TEST_CASE("two-vertex path probability") {
  Rng rng(1);
  const auto e = testing::random_transition(2, rng);
  const auto p = testing::random_emission(3, 2, rng);
  const std::vector<int> y = {2, 0};
  CHECK(dag::path_log_prob({0, 1}, y, e, p) ==
        doctest::Approx(std::log(p.probs(2, 0)) + std::log(1.0) + std::log(p.probs(0, 1))).epsilon(1e-14));
}

TEST_CASE("a zero transition gives minus infinity") {
  Rng rng(2);
  auto e = testing::random_transition(4, rng);
  const auto p = testing::random_emission(2, 4, rng);
  e.probs(0, 1) = 0.0;
  const std::vector<int> y = {0, 1, 1};
  CHECK(dag::path_log_prob({0, 1, 3}, y, e, p, dag::TransitionNorm::kRaw) == testing::kNegInf);
  CHECK(dag::path_log_prob({0, 1, 3}, y, e, p) == testing::kNegInf);
  CHECK_THROWS(dag::path_log_prob({0, 0, 3}, y, e, p));
}

TEST_CASE("path probability matches the direct product") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int g = 7, m = 4, n = 5;
    const auto e = testing::random_transition(g, rng);
    const auto p = testing::random_emission(n, g, rng);
    const std::vector<int> y = {1, 4, 0, 4};
    for (const auto& path : testing::all_paths(g, m)) {
      CHECK(dag::path_log_prob(path, y, e, p) ==
            doctest::Approx(std::log(testing::path_prob(path, y, e, p))).epsilon(1e-12));
      CHECK(dag::path_log_prob(path, y, e, p, dag::TransitionNorm::kRaw) ==
            doctest::Approx(std::log(testing::path_prob(path, y, e, p, false))).epsilon(1e-12));
    }
  }
}

TEST_CASE("single-path and two-path marginals") {
  Rng rng(4);
  auto e = testing::random_transition(3, rng);
  auto p = testing::random_emission(4, 3, rng);
  std::vector<int> y = {3, 0, 2};
  CHECK(dag::dag_log_marginal(y, e, p) == doctest::Approx(dag::path_log_prob({0, 1, 2}, y, e, p)).epsilon(1e-14));

  e = testing::random_transition(4, rng);
  p = testing::random_emission(4, 4, rng);
  const double a = dag::path_log_prob({0, 1, 3}, y, e, p);
  const double b = dag::path_log_prob({0, 2, 3}, y, e, p);
  CHECK(dag::dag_log_marginal(y, e, p) == doctest::Approx(testing::logsumexp({a, b})).epsilon(1e-14));
}

TEST_CASE("marginal equals brute-force enumeration") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int g = std::uniform_int_distribution<int>(2, 10)(rng);
    const int m = std::uniform_int_distribution<int>(2, std::min(g, 5))(rng);
    const int n = std::uniform_int_distribution<int>(2, 6)(rng);
    const auto e = testing::random_transition(g, rng);
    const auto p = testing::random_emission(n, g, rng);
    std::vector<int> y(static_cast<std::size_t>(m));
    for (auto& c : y) c = std::uniform_int_distribution<int>(0, n - 1)(rng);
    for (auto norm : {dag::TransitionNorm::kAdmissible, dag::TransitionNorm::kRaw}) {
      const double brute = brute_marginal(y, e, p, norm == dag::TransitionNorm::kAdmissible);
      const double dp = dag::dag_log_marginal(y, e, p, norm);
      CHECK(std::abs(dp - brute) <= 1e-9 * std::abs(brute));
      for (const auto& path : testing::all_paths(g, m)) CHECK(dp >= dag::path_log_prob(path, y, e, p, norm) - 1e-12);
    }
  }
}

TEST_CASE("the model defines a distribution over slates") {
  Rng rng(6);
  for (const auto& [n, m, g] : std::vector<std::tuple<int, int, int>>{{3, 3, 6}, {2, 3, 5}, {3, 2, 4}, {3, 3, 3}}) {
    const auto e = testing::random_transition(g, rng);
    const auto p = testing::random_emission(n, g, rng);
    double total = 0;
    std::vector<int> y(static_cast<std::size_t>(m), 0);
    for (;;) {
      total += std::exp(dag::dag_log_marginal(y, e, p));
      std::size_t i = 0;
      while (i < y.size() && ++y[i] == n) y[i++] = 0;
      if (i == y.size()) break;
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
}

TEST_CASE("tape marginal agrees with the scalar version") {
  Rng rng(7);
  const int g = 6, m = 3, n = 4;
  std::vector<model::TransitionMatrix> es;
  std::vector<model::EmissionMatrix> ps;
  Mat le(2 * g, g), lp(2 * g, n);
  for (int b = 0; b < 2; ++b) {
    es.push_back(testing::random_transition(g, rng));
    ps.push_back(testing::random_emission(n, g, rng));
    const auto [a, c] = log_mats(es.back(), ps.back());
    le.middleRows(b * g, g) = a;
    lp.middleRows(b * g, g) = c;
  }
  const std::vector<std::vector<int>> ys = {{0, 1, 3}, {2, 2, 1}};
  ad::Tape<double> t;
  const auto out = dag::dag_log_marginal(t, t.constant(le), t.constant(lp), ys);
  for (int b = 0; b < 2; ++b)
    CHECK(out.data()(b, 0) == doctest::Approx(dag::dag_log_marginal(ys[static_cast<std::size_t>(b)],
                                                                      es[static_cast<std::size_t>(b)],
                                                                      ps[static_cast<std::size_t>(b)]))
                                  .epsilon(1e-12));
}

TEST_CASE("uniform emissions give m log n") {
  Rng rng(8);
  const int g = 8, m = 4, n = 5;
  ad::ParameterSet<double> ps;
  model::ForwardPass<double> pass;
  ad::Tape<double> t;
  const auto e = testing::random_transition(g, rng);
  pass.batch = 1;
  pass.log_transition = t.constant(e.probs.array().log().matrix());
  pass.log_emission = t.constant(Mat::Constant(g, n, -std::log(double(n))));
  const auto loss = dag::gen_loss(t, pass, {{0, 1, 2, 3}});
  CHECK(loss.item() == doctest::Approx(m * std::log(double(n))).epsilon(1e-12));
  model::EmissionMatrix p{Eigen::MatrixXd::Constant(n, g, 1.0 / n)};
  CHECK(loss.item() == doctest::Approx(-dag::dag_log_marginal(std::vector<int>{0, 1, 2, 3}, e, p)).epsilon(1e-12));
}

TEST_CASE("non-finite likelihood names the batch index") {
  const int g = 4, n = 3;
  ad::Tape<double> t;
  Mat le(2 * g, g);
  Rng rng(1);
  for (int b = 0; b < 2; ++b) le.middleRows(b * g, g) = testing::random_transition(g, rng).probs.array().log().matrix();
  Mat lp = Mat::Constant(2 * g, n, -std::log(3.0));
  lp.block(g, 0, g, 1).setConstant(testing::kNegInf);
  model::ForwardPass<double> pass;
  pass.batch = 2;
  pass.log_transition = t.constant(le);
  pass.log_emission = t.constant(lp);
  try {
    dag::gen_loss(t, pass, {{1, 1}, {0, 1}});
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("batch index 1") != std::string::npos);
  }
}

TEST_CASE("marginal gradient matches finite differences on g=8, m=3, n=5") {
  Rng rng(9);
  const int g = 8, n = 5;
  ad::ParameterSet<double> ps;
  std::normal_distribution<double> normal;
  Mat a(2 * g, g), b(2 * g, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = normal(rng);
  auto& tl = ps.add("transition_logits", a);
  auto& el = ps.add("emission_logits", b);
  for (auto norm : {dag::TransitionNorm::kAdmissible, dag::TransitionNorm::kRaw}) {
    const auto res = ad::gradient_check(ps, [&](ad::Tape<double>& t) {
      model::ForwardPass<double> pass;
      pass.batch = 2;
      pass.log_transition =
          t.log_softmax_rows(t.masked_fill(t.param(tl), model::forward_dag_mask(g, 2), testing::kNegInf));
      pass.log_emission = t.log_softmax_rows(t.param(el));
      return dag::gen_loss(t, pass, {{4, 0, 2}, {1, 1, 3}}, norm);
    });
    CHECK(res.max_rel_error <= 1e-4);
  }
}

TEST_CASE("generator gradient of the generative loss matches finite differences") {
  Rng rng(10);
  const auto c = testing::tiny_model(4, 3, 2);
  model::Generator<double> gen(c, 3);
  const std::vector<data::RerankRequest> rs = {testing::random_request(4, c.d_u, c.d_x, rng, 1),
                                               testing::random_request(4, c.d_u, c.d_x, rng, 2)};
  const std::vector<const data::RerankRequest*> ptrs = {&rs[0], &rs[1]};
  const auto res = ad::gradient_check(gen.params(), [&](ad::Tape<double>& t) {
    return dag::gen_loss(t, gen.forward(t, ptrs), {{0, 3, 1}, {2, 1, 0}});
  });
  CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("dynamic program grows at most quadratically in g") {
  Rng rng(11);
  const int m = 4, n = 6;
  auto time_for = [&](int g) {
    const auto e = testing::random_transition(g, rng);
    const auto p = testing::random_emission(n, g, rng);
    const std::vector<int> y = {0, 1, 2, 3};
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      const auto start = std::chrono::steady_clock::now();
      double sink = 0;
      for (int k = 0; k < 20; ++k) sink += dag::dag_log_marginal(y, e, p);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      CHECK(std::isfinite(sink));
    }
    return best;
  };
  const double small = time_for(64);
  const double large = time_for(256);
  // Quadratic growth predicts a factor of 16; allow timing slack.
  CHECK(large / small <= 16.0 * 2.0);
}

}  // TEST_SUITE
