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
// Transformer building blocks shared by the generator and the evaluator.
// Every layer reads its weights from a ParameterSet by name, so the same
// code serves training tapes and read-only inference.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dagrank/autodiff.hpp"
#include "dagrank/rng.hpp"

namespace dagrank::layers {

template <typename Real>
ad::Matrix<Real> xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  ad::Matrix<Real> w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Real>(dist(rng));
  return w;
}

template <typename Real>
void add_linear(ad::ParameterSet<Real>& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                bool bias = true) {
  ps.add(name + "/w", xavier_uniform<Real>(in, out, rng));
  if (bias) ps.add(name + "/b", ad::Matrix<Real>::Zero(1, out));
}

template <typename Real>
void add_layer_norm(ad::ParameterSet<Real>& ps, const std::string& name, Eigen::Index width) {
  ps.add(name + "/gain", ad::Matrix<Real>::Ones(1, width));
  ps.add(name + "/bias", ad::Matrix<Real>::Zero(1, width));
}

/// Query/key/value/output projections; `values` false leaves values
/// unprojected (the key source itself is attended).
template <typename Real>
void add_attention(ad::ParameterSet<Real>& ps, const std::string& name, Eigen::Index d, Rng& rng, bool values = true) {
  add_linear(ps, name + "/q", d, d, rng, false);
  add_linear(ps, name + "/k", d, d, rng, false);
  if (values) add_linear(ps, name + "/v", d, d, rng, false);
  add_linear(ps, name + "/o", d, d, rng, false);
}

template <typename Real>
void add_feed_forward(ad::ParameterSet<Real>& ps, const std::string& name, Eigen::Index d, Eigen::Index hidden,
                      Rng& rng) {
  add_linear(ps, name + "/in", d, hidden, rng);
  add_linear(ps, name + "/out", hidden, d, rng);
}

template <typename Real>
ad::Value<Real> linear(ad::Tape<Real>& t, ad::ParameterSet<Real>& ps, const std::string& name,
                       const ad::Value<Real>& x) {
  auto y = t.matmul(x, t.param(ps.at(name + "/w")));
  if (auto* b = ps.find(name + "/b")) y = t.add_row(y, t.param(*b));
  return y;
}

template <typename Real>
ad::Value<Real> layer_norm(ad::Tape<Real>& t, ad::ParameterSet<Real>& ps, const std::string& name,
                           const ad::Value<Real>& x) {
  auto y = t.layer_norm_rows(x);
  y = t.mul_row(y, t.param(ps.at(name + "/gain")));
  return t.add_row(y, t.param(ps.at(name + "/bias")));
}

template <typename Real>
ad::Value<Real> feed_forward(ad::Tape<Real>& t, ad::ParameterSet<Real>& ps, const std::string& name,
                             const ad::Value<Real>& x) {
  return linear(t, ps, name + "/out", t.relu(linear(t, ps, name + "/in", x)));
}

/// Multi-head scaled dot-product attention over `groups` independent row
/// blocks: block i of `queries` attends only to block i of `source`.
template <typename Real>
ad::Value<Real> attention(ad::Tape<Real>& t, ad::ParameterSet<Real>& ps, const std::string& name,
                          const ad::Value<Real>& queries, const ad::Value<Real>& source, Eigen::Index heads,
                          Eigen::Index groups) {
  const Eigen::Index d = queries.cols();
  const Eigen::Index dh = d / heads;
  const auto q = linear(t, ps, name + "/q", queries);
  const auto k = linear(t, ps, name + "/k", source);
  const auto v = ps.find(name + "/v/w") != nullptr ? linear(t, ps, name + "/v", source) : source;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));

  std::vector<ad::Value<Real>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (Eigen::Index h = 0; h < heads; ++h) {
    const auto qh = heads == 1 ? q : t.slice_cols(q, h * dh, dh);
    const auto kh = heads == 1 ? k : t.slice_cols(k, h * dh, dh);
    const auto vh = heads == 1 ? v : t.slice_cols(v, h * dh, dh);
    const auto weights = t.softmax_rows(t.scale(t.group_matmul_nt(qh, kh, groups), scale));
    outs.push_back(t.group_matmul(weights, vh, groups));
  }
  const auto merged = heads == 1 ? outs.front() : t.concat_cols(outs);
  return linear(t, ps, name + "/o", merged);
}

}  // namespace dagrank::layers
