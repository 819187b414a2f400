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

#include <numeric>

#include "dagrank/decode.hpp"
#include "dagrank/model.hpp"
#include "support.hpp"

using namespace dagrank;
using Mat = ad::Matrix<double>;

namespace {

std::vector<const data::RerankRequest*> ptrs(const std::vector<data::RerankRequest>& rs) {
  std::vector<const data::RerankRequest*> out;
  for (const auto& r : rs) out.push_back(&r);
  return out;
}

Mat encode(model::Generator<double>& gen, const std::vector<data::RerankRequest>& rs) {
  ad::Tape<double> t;
  const auto p = ptrs(rs);
  return gen.encode(t, t.constant(gen.input_matrix(p)), static_cast<Eigen::Index>(rs.size())).data();
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config invariants") {
  model::ModelConfig c;
  CHECK(c.g() == 16);
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.m = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("encoder output shape is n x d and finite") {
  Rng rng(1);
  model::ModelConfig c;
  model::Generator<double> gen(c, 7);
  const std::vector<data::RerankRequest> rs = {testing::random_request(c.n, c.d_u, c.d_x, rng)};
  const auto h = encode(gen, rs);
  CHECK(h.rows() == c.n);
  CHECK(h.cols() == c.d);
  CHECK(h.allFinite());
}

TEST_CASE("single-candidate attention ignores queries and keys") {
  Rng rng(2);
  auto c = testing::tiny_model(1, 2, 2);
  model::Generator<double> gen(c, 3);
  const std::vector<data::RerankRequest> rs = {testing::random_request(1, c.d_u, c.d_x, rng)};
  const auto before = encode(gen, rs);
  gen.params().at("generator/encoder0/attn/q/w").value.setRandom();
  gen.params().at("generator/encoder0/attn/k/w").value *= 5.0;
  CHECK(encode(gen, rs).isApprox(before, 1e-12));
}

TEST_CASE("identical candidates encode identically") {
  Rng rng(4);
  model::ModelConfig c;
  model::Generator<double> gen(c, 5);
  auto r = testing::random_request(c.n, c.d_u, c.d_x, rng);
  r.candidates[3].features = r.candidates[7].features;
  const auto h = encode(gen, {r});
  CHECK((h.row(3) - h.row(7)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("encoder is permutation equivariant") {
  Rng rng(6);
  model::ModelConfig c;
  model::Generator<double> gen(c, 8);
  const auto r = testing::random_request(c.n, c.d_u, c.d_x, rng);
  std::vector<int> perm(static_cast<std::size_t>(c.n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto shuffled = r;
  for (int i = 0; i < c.n; ++i) shuffled.candidates[static_cast<std::size_t>(i)] = r.candidates[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  const auto h = encode(gen, {r});
  const auto hp = encode(gen, {shuffled});
  for (int i = 0; i < c.n; ++i) CHECK((hp.row(i) - h.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("wrong candidate count or width is rejected") {
  Rng rng(1);
  model::ModelConfig c;
  model::Generator<double> gen(c, 1);
  auto r = testing::random_request(c.n - 1, c.d_u, c.d_x, rng);
  CHECK_THROWS_AS(encode(gen, {r}), ShapeError);
  r = testing::random_request(c.n, c.d_u, c.d_x + 1, rng);
  CHECK_THROWS_AS(encode(gen, {r}), ShapeError);
}

TEST_CASE("vertex states from zero candidate states are finite") {
  auto c = testing::tiny_model(4, 2, 3);
  model::Generator<double> gen(c, 1);
  for (std::size_t i = 0; i < gen.params().size(); ++i)
    if (gen.params()[i].name.find("/cross/") != std::string::npos) gen.params()[i].value.setZero();
  ad::Tape<double> t;
  const auto hv = gen.decode_vertices(t, t.constant(Mat::Zero(c.n, c.d)), 1);
  CHECK(hv.rows() == c.g());
  CHECK(hv.cols() == c.d);
  CHECK(hv.data().allFinite());
}

TEST_CASE("duplicating a candidate keeps vertex states finite") {
  Rng rng(3);
  model::ModelConfig c;
  model::Generator<double> gen(c, 2);
  auto r = testing::random_request(c.n, c.d_u, c.d_x, rng);
  r.candidates[1] = r.candidates[0];
  r.candidates[1].id = 99999;
  ad::Tape<double> t;
  const auto pass = gen.forward(t, ptrs({r}));
  CHECK(pass.vertex_states.rows() == c.g());
  CHECK(pass.vertex_states.data().allFinite());
}

TEST_CASE("two vertices force the single transition") {
  Rng rng(5);
  auto c = testing::tiny_model(3, 2, 1);
  model::Generator<double> gen(c, 4);
  ad::Tape<double> t;
  const auto pass = gen.forward(t, ptrs({testing::random_request(3, c.d_u, c.d_x, rng)}));
  const auto e = model::transition_of(pass, 0);
  CHECK(e.probs(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(e.probs.row(1).isZero());
}

TEST_CASE("equal logits spread evenly over successors") {
  auto c = testing::tiny_model(3, 3, 1);
  model::Generator<double> gen(c, 4);
  gen.params().at("generator/transition/q/w").value.setZero();
  ad::Tape<double> t;
  const auto lt = gen.log_transition(t, t.constant(Mat::Random(3, c.d)), 1);
  const Mat e = ad::exact_exp(lt.data().array()).matrix();
  CHECK(e(0, 0) == 0.0);
  CHECK(e(0, 1) == doctest::Approx(0.5));
  CHECK(e(0, 2) == doctest::Approx(0.5));
}

TEST_CASE("transition and emission invariants on random passes") {
  Rng rng(9);
  model::ModelConfig c;
  c.n = 7;
  c.m = 3;
  c.lambda = 3;
  model::Generator<double> gen(c, 10);
  std::vector<data::RerankRequest> rs;
  for (int i = 0; i < 5; ++i) rs.push_back(testing::random_request(c.n, c.d_u, c.d_x, rng, i));
  ad::Tape<double> t;
  const auto pass = gen.forward(t, ptrs(rs));
  for (Eigen::Index b = 0; b < 5; ++b) {
    const auto e = model::transition_of(pass, b);
    const auto p = model::emission_of(pass, b);
    const int g = c.g();
    for (int i = 0; i < g; ++i) {
      for (int j = 0; j <= i; ++j) CHECK(e.probs(i, j) == 0.0);
      if (i < g - 1) CHECK(std::abs(e.probs.row(i).sum() - 1.0) <= 1e-6);
    }
    CHECK(e.probs.row(g - 1).isZero());
    for (int j = 0; j < g; ++j) CHECK(std::abs(p.probs.col(j).sum() - 1.0) <= 1e-6);
  }
}

TEST_CASE("a single candidate gets every column") {
  Rng rng(1);
  auto c = testing::tiny_model(1, 2, 2);
  model::Generator<double> gen(c, 2);
  ad::Tape<double> t;
  const auto p = model::emission_of(gen.forward(t, ptrs({testing::random_request(1, c.d_u, c.d_x, rng)})), 0);
  CHECK(p.probs.isOnes());
}

TEST_CASE("identical candidates have equal emission probabilities") {
  Rng rng(12);
  model::ModelConfig c;
  model::Generator<double> gen(c, 3);
  auto r = testing::random_request(c.n, c.d_u, c.d_x, rng);
  r.candidates[4].features = r.candidates[11].features;
  ad::Tape<double> t;
  const auto p = model::emission_of(gen.forward(t, ptrs({r})), 0);
  CHECK((p.probs.row(4) - p.probs.row(11)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("forward cost does not depend on the slate length") {
  Rng rng(1);
  std::vector<std::size_t> nodes;
  for (int m : {2, 3, 5}) {
    auto c = testing::tiny_model(6, m, 2);
    model::Generator<double> gen(c, 1);
    ad::Tape<double> t;
    gen.forward(t, ptrs({testing::random_request(6, c.d_u, c.d_x, rng)}));
    nodes.push_back(t.size());
  }
  CHECK(nodes[0] == nodes[1]);
  CHECK(nodes[1] == nodes[2]);
}

TEST_CASE("vanilla forward needs lambda one") {
  Rng rng(1);
  auto c = testing::tiny_model(5, 3, 2);
  model::Generator<double> graph(c, 1);
  const std::vector<data::RerankRequest> rs = {testing::random_request(5, c.d_u, c.d_x, rng)};
  CHECK_THROWS_AS(model::vanilla_forward(graph, ptrs(rs)), ConfigError);
  c.lambda = 1;
  model::Generator<double> vanilla(c, 1);
  const auto ps = model::vanilla_forward(vanilla, ptrs(rs));
  REQUIRE(ps.size() == 1);
  CHECK(ps[0].probs.rows() == 5);
  CHECK(ps[0].probs.cols() == 3);
}

TEST_CASE("vanilla decoding suppresses duplicates") {
  model::EmissionMatrix p{Eigen::MatrixXd(4, 1)};
  p.probs << 0.1, 0.5, 0.3, 0.1;
  CHECK(decode::vanilla_decode(p, 1).slate == std::vector<int>{1});

  model::EmissionMatrix same{Eigen::MatrixXd(4, 3)};
  for (int j = 0; j < 3; ++j) same.probs.col(j) << 0.1, 0.4, 0.2, 0.3;
  CHECK(decode::vanilla_decode(same, 3).slate == std::vector<int>({1, 3, 2}));

  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto rp = testing::random_emission(6, 4, rng);
    auto slate = decode::vanilla_decode(rp, 4).slate;
    // Brute force: walk columns, take the best unused candidate.
    std::vector<bool> used(6, false);
    for (int j = 0; j < 4; ++j) {
      int best = -1;
      for (int c = 0; c < 6; ++c)
        if (!used[static_cast<std::size_t>(c)] && (best < 0 || rp.probs(c, j) > rp.probs(best, j))) best = c;
      used[static_cast<std::size_t>(best)] = true;
      CHECK(slate[static_cast<std::size_t>(j)] == best);
    }
    std::sort(slate.begin(), slate.end());
    CHECK(std::adjacent_find(slate.begin(), slate.end()) == slate.end());
  }
}

}  // TEST_SUITE
