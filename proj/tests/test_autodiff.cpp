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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "dagrank/autodiff.hpp"
#include "dagrank/checkpoint.hpp"
#include "dagrank/gradcheck.hpp"
#include "dagrank/optim.hpp"
#include "dagrank/rng.hpp"

using namespace dagrank;
using Mat = ad::Matrix<double>;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dagrank_test_" + name);
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("softmax of a zero row is uniform") {
  ad::Tape<double> t;
  const auto s = t.softmax_rows(t.constant(Mat::Zero(1, 2)));
  CHECK(s.data()(0, 0) == doctest::Approx(0.5));
  CHECK(s.data()(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("logsumexp of log 2 and log 6 is log 8") {
  ad::Tape<double> t;
  Mat x(1, 2);
  x << std::log(2.0), std::log(6.0);
  CHECK(t.logsumexp_rows(t.constant(x)).item() == doctest::Approx(std::log(8.0)).epsilon(1e-14));
}

TEST_CASE("matmul shapes and mismatch") {
  ad::Tape<double> t;
  const auto a = t.constant(Mat::Ones(2, 3));
  CHECK(t.matmul(a, t.constant(Mat::Ones(3, 4))).rows() == 2);
  CHECK(t.matmul(a, t.constant(Mat::Ones(3, 4))).cols() == 4);
  try {
    t.matmul(a, t.constant(Mat::Ones(2, 4)));
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("matmul") != std::string::npos);
    CHECK(what.find("2x3") != std::string::npos);
    CHECK(what.find("2x4") != std::string::npos);
  }
  CHECK_THROWS_AS(t.add(a, t.constant(Mat::Ones(3, 2))), ShapeError);
}

TEST_CASE("grad of sum is all ones and the loss grad is one") {
  ad::ParameterSet<double> ps;
  auto& x = ps.add("x", Mat::Random(3, 4));
  ad::Tape<double> t;
  const auto loss = t.sum(t.param(x));
  t.backward(loss);
  CHECK(x.grad.isApprox(Mat::Ones(3, 4)));
  CHECK(loss.grad()(0, 0) == 1.0);
}

TEST_CASE("sigmoid derivative at zero") {
  ad::ParameterSet<double> ps;
  auto& w = ps.add("w", Mat::Zero(1, 1));
  ad::Tape<double> t;
  t.backward(t.sigmoid(t.param(w)));
  CHECK(w.grad(0, 0) == doctest::Approx(0.25));
}

TEST_CASE("backward rejects a non-scalar loss") {
  ad::Tape<double> t;
  CHECK_THROWS_AS(t.backward(t.constant(Mat::Ones(2, 1))), ShapeError);
}

TEST_CASE("masked softmax zeroes masked entries and rows sum to one") {
  Rng rng(3);
  ad::Tape<double> t;
  ad::Mask mask(4, 5);
  mask.setConstant(false);
  mask(0, 1) = mask(2, 0) = mask(2, 4) = true;
  mask.row(3).setConstant(true);
  const auto s = t.softmax_rows(t.masked_fill(t.constant(random_mat(4, 5, rng)), mask,
                                              -std::numeric_limits<double>::infinity()));
  CHECK(s.data()(0, 1) == 0.0);
  CHECK(s.data()(2, 0) == 0.0);
  CHECK(s.data()(2, 4) == 0.0);
  for (int r = 0; r < 3; ++r) CHECK(std::abs(s.data().row(r).sum() - 1.0) <= 1e-6);
  CHECK(s.data().row(3).isZero());
}

TEST_CASE("fully masked rows stay finite through the backward pass") {
  ad::ParameterSet<double> ps;
  auto& x = ps.add("x", Mat::Ones(2, 3));
  ad::Mask mask(2, 3);
  mask.setConstant(false);
  mask.row(1).setConstant(true);
  ad::Tape<double> t;
  const auto masked = t.masked_fill(t.param(x), mask, -std::numeric_limits<double>::infinity());
  const auto loss = t.sum(t.softmax_rows(masked));
  t.backward(loss);
  CHECK(x.grad.allFinite());
  CHECK(std::isinf(t.logsumexp_rows(masked).data()(1, 0)));
}

TEST_CASE("composed expression matches central differences") {
  Rng rng(11);
  ad::ParameterSet<double> ps;
  auto& a = ps.add("a", random_mat(3, 4, rng));
  auto& b = ps.add("b", random_mat(4, 2, rng));
  auto& c = ps.add("c", random_mat(1, 2, rng));
  const auto res = ad::gradient_check(ps, [&](ad::Tape<double>& t) {
    const auto h = t.add_row(t.matmul(t.param(a), t.param(b)), t.param(c));
    const auto s = t.sigmoid(h);
    const auto mixed = t.mul(s, t.exp(t.scale(h, 0.3)));
    return t.mean(t.log(t.add(mixed, t.constant(Mat::Constant(3, 2, 1.5)))));
  });
  CHECK(res.checked == 3 * 4 + 4 * 2 + 2);
  CHECK(res.max_rel_error <= 1e-6);
}

TEST_CASE("every primitive passes the finite-difference check") {
  Rng rng(5);
  ad::ParameterSet<double> ps;
  auto& a = ps.add("a", random_mat(4, 3, rng));
  auto& b = ps.add("b", random_mat(4, 3, rng));
  auto& row = ps.add("row", random_mat(1, 3, rng));
  auto& sq = ps.add("sq", random_mat(3, 3, rng));
  auto& tall = ps.add("tall", random_mat(6, 2, rng));
  Mat w = random_mat(4, 3, rng);
  Mat targets(4, 3);
  for (Eigen::Index i = 0; i < targets.size(); ++i) targets.data()[i] = static_cast<double>(i % 2);
  ad::Mask mask(4, 3);
  mask.setConstant(false);
  mask(1, 2) = true;

  using Fn = std::function<ad::Value<double>(ad::Tape<double>&)>;
  auto weighted = [&](ad::Tape<double>& t, const ad::Value<double>& v) {
    return t.sum(t.mul(v, t.constant(w.topLeftCorner(v.rows(), v.cols()))));
  };
  const std::vector<std::pair<const char*, Fn>> cases = {
      {"matmul", [&](auto& t) { return t.sum(t.matmul(t.param(a), t.param(sq))); }},
      {"transpose", [&](auto& t) { return t.sum(t.matmul(t.transpose(t.param(a)), t.param(b))); }},
      {"add", [&](auto& t) { return weighted(t, t.add(t.param(a), t.param(b))); }},
      {"sub", [&](auto& t) { return weighted(t, t.sub(t.param(a), t.param(b))); }},
      {"mul", [&](auto& t) { return weighted(t, t.mul(t.param(a), t.param(b))); }},
      {"div", [&](auto& t) {
         return weighted(t, t.div(t.param(a), t.add(t.exp(t.param(b)), t.constant(Mat::Ones(4, 3)))));
       }},
      {"scale", [&](auto& t) { return weighted(t, t.scale(t.param(a), -1.7)); }},
      {"add_row", [&](auto& t) { return weighted(t, t.add_row(t.param(a), t.param(row))); }},
      {"mul_row", [&](auto& t) { return weighted(t, t.mul_row(t.param(a), t.param(row))); }},
      {"softmax_rows", [&](auto& t) { return weighted(t, t.softmax_rows(t.param(a))); }},
      {"log_softmax_rows", [&](auto& t) { return weighted(t, t.log_softmax_rows(t.param(a))); }},
      {"logsumexp_rows", [&](auto& t) { return t.sum(t.mul(t.logsumexp_rows(t.param(a)), t.logsumexp_rows(t.param(b)))); }},
      {"masked_fill", [&](auto& t) { return weighted(t, t.softmax_rows(t.masked_fill(t.param(a), mask, -1e300))); }},
      {"sigmoid", [&](auto& t) { return weighted(t, t.sigmoid(t.param(a))); }},
      {"log", [&](auto& t) { return weighted(t, t.log(t.exp(t.param(a)))); }},
      {"exp", [&](auto& t) { return weighted(t, t.exp(t.param(a))); }},
      {"relu", [&](auto& t) { return weighted(t, t.relu(t.param(a))); }},
      {"slice_cols", [&](auto& t) { return t.sum(t.exp(t.slice_cols(t.param(a), 1, 2))); }},
      {"mean", [&](auto& t) { return t.mean(t.exp(t.param(a))); }},
      {"sum_rows", [&](auto& t) { return t.sum(t.exp(t.sum_rows(t.param(a)))); }},
      {"layer_norm_rows", [&](auto& t) { return weighted(t, t.layer_norm_rows(t.param(a))); }},
      {"bce_with_logits", [&](auto& t) { return t.sum(t.bce_with_logits(t.param(a), targets)); }},
      {"group_matmul", [&](auto& t) { return weighted(t, t.group_matmul(t.param(a), t.param(tall), 2)); }},
      {"group_matmul_nt", [&](auto& t) { return weighted(t, t.group_matmul_nt(t.param(a), t.param(b), 2)); }},
      {"tile_rows", [&](auto& t) { return weighted(t, t.tile_rows(t.param(row), 4)); }},
      {"gather_rows", [&](auto& t) { return weighted(t, t.gather_rows(t.param(a), {3, 0, 3})); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    const auto res = ad::gradient_check(ps, fn);
    CHECK(res.max_rel_error <= 1e-4);
  }
  const Mat cw = random_mat(4, 6, rng);
  const auto res = ad::gradient_check(ps, [&](ad::Tape<double>& t) {
    const ad::Value<double> parts[] = {t.param(a), t.param(b)};
    return t.sum(t.mul(t.concat_cols(parts), t.constant(cw)));
  });
  CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("identical tapes give bit-identical results") {
  Rng rng(9);
  const Mat x = random_mat(5, 5, rng);
  auto run = [&] {
    ad::ParameterSet<double> ps;
    auto& p = ps.add("p", x);
    ad::Tape<double> t;
    const auto loss = t.sum(t.log_softmax_rows(t.matmul(t.param(p), t.param(p))));
    t.backward(loss);
    return std::make_pair(loss.item(), Mat(p.grad));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("frozen parameters receive no gradient") {
  ad::ParameterSet<double> ps;
  auto& a = ps.add("a", Mat::Ones(2, 2));
  auto& b = ps.add("b", Mat::Ones(2, 2));
  b.frozen = true;
  ad::Tape<double> t;
  t.backward(t.sum(t.mul(t.param(a), t.param(b))));
  CHECK(a.grad.isApprox(Mat::Ones(2, 2)));
  CHECK(b.grad.isZero());
}

}  // TEST_SUITE

TEST_SUITE("optim") {

TEST_CASE("first Adam step moves by the learning rate") {
  ad::ParameterSet<double> ps;
  auto& w = ps.add("w", Mat::Constant(1, 1, 0.5));
  w.grad(0, 0) = 1.0;
  ad::Adam<double> adam;
  adam.step(ps);
  CHECK(w.value(0, 0) == doctest::Approx(0.5 - 1e-3).epsilon(1e-9));
  CHECK(w.grad(0, 0) == 0.0);
}

TEST_CASE("zero gradient leaves the parameter unchanged") {
  ad::ParameterSet<double> ps;
  auto& w = ps.add("w", Mat::Constant(2, 2, 0.25));
  ad::Adam<double> adam;
  adam.step(ps);
  CHECK(w.value == Mat::Constant(2, 2, 0.25));
}

TEST_CASE("Adam on w^2 shrinks |w| every step") {
  ad::ParameterSet<double> ps;
  auto& w = ps.add("w", Mat::Ones(1, 1));
  ad::Adam<double> adam;
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    ad::Tape<double> t;
    const auto x = t.param(w);
    t.backward(t.sum(t.mul(x, x)));
    adam.step(ps);
    CHECK(std::abs(w.value(0, 0)) < prev);
    prev = std::abs(w.value(0, 0));
  }
}

TEST_CASE("non-finite gradient is reported by parameter name") {
  ad::ParameterSet<double> ps;
  auto& ok = ps.add("fine", Mat::Ones(1, 1));
  auto& bad = ps.add("broken/weight", Mat::Ones(1, 2));
  ok.grad(0, 0) = 1.0;
  bad.grad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  ad::Adam<double> adam;
  try {
    adam.step(ps);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("broken/weight") != std::string::npos);
  }
  CHECK(ok.value(0, 0) == 1.0);
}

}  // TEST_SUITE

TEST_SUITE("checkpoint") {

TEST_CASE("parameters round-trip exactly") {
  Rng rng(2);
  ad::ParameterSet<double> a;
  a.add("generator/w", random_mat(3, 4, rng));
  a.add("generator/b", random_mat(1, 4, rng));
  const auto path = temp_file("roundtrip.ckpt");
  ad::save_parameters(path, a);
  ad::ParameterSet<double> b;
  b.add("generator/w", Mat::Zero(3, 4));
  b.add("generator/b", Mat::Zero(1, 4));
  ad::load_parameters(path, b);
  CHECK(b.at("generator/w").value == a.at("generator/w").value);
  CHECK(b.at("generator/b").value == a.at("generator/b").value);
  std::filesystem::remove(path);
}

TEST_CASE("unknown version, bad magic and truncation are rejected") {
  ad::ParameterSet<double> a;
  a.add("x", Mat::Ones(2, 2));
  const auto path = temp_file("version.ckpt");
  ad::save_parameters(path, a);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& s) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  };
  auto versioned = bytes;
  versioned[4] = 2;
  write(versioned);
  CHECK_THROWS_AS(ad::read_checkpoint(path), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  write(magic);
  CHECK_THROWS_AS(ad::read_checkpoint(path), FormatError);
  write(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(ad::read_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("shape mismatch names both shapes") {
  ad::ParameterSet<double> a;
  a.add("x", Mat::Ones(2, 3));
  const auto path = temp_file("shape.ckpt");
  ad::save_parameters(path, a);
  ad::ParameterSet<float> b;
  b.add("x", ad::Matrix<float>::Ones(3, 3));
  try {
    ad::load_parameters(path, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("2x3") != std::string::npos);
    CHECK(what.find("3x3") != std::string::npos);
  }
  std::filesystem::remove(path);
}

}  // TEST_SUITE
