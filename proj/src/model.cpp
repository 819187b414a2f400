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
#include "dagrank/model.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "dagrank/error.hpp"
#include "dagrank/layers.hpp"
#include "dagrank/rng.hpp"

namespace dagrank::model {

namespace {

const std::string kPrefix = "generator/";

std::string block_name(const char* stack, int l) {
  return kPrefix + stack + std::to_string(l);
}

}  // namespace

void ModelConfig::validate() const {
  if (d < 1 || blocks < 1 || heads < 1 || ffn_mult < 1) throw ConfigError("model: d, blocks, heads and ffn_mult must be >= 1");
  if (d % heads != 0) throw ConfigError("model: d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
  if (m < 2) throw ConfigError("model: m must be >= 2");
  if (lambda < 1) throw ConfigError("model: lambda must be >= 1");
  if (n < 1) throw ConfigError("model: n must be >= 1");
  if (d_u < 1 || d_x < 1) throw ConfigError("model: feature widths must be >= 1");
}

ad::Mask forward_dag_mask(Eigen::Index g, Eigen::Index blocks) {
  ad::Mask mask(g * blocks, g);
  for (Eigen::Index b = 0; b < blocks; ++b)
    for (Eigen::Index i = 0; i < g; ++i)
      for (Eigen::Index j = 0; j < g; ++j) mask(b * g + i, j) = j <= i;
  return mask;
}

template <typename Real>
Generator<Real>::Generator(ModelConfig config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  auto rng = make_stream(init_seed, "init-generator");
  const Eigen::Index d = config_.d;
  const Eigen::Index hidden = static_cast<Eigen::Index>(config_.d) * config_.ffn_mult;

  layers::add_linear(params_, kPrefix + "input", config_.d_x + config_.d_u, d, rng);
  for (int l = 0; l < config_.blocks; ++l) {
    const auto b = block_name("encoder", l);
    layers::add_attention(params_, b + "/attn", d, rng);
    layers::add_layer_norm(params_, b + "/ln1", d);
    layers::add_feed_forward(params_, b + "/ffn", d, hidden, rng);
    layers::add_layer_norm(params_, b + "/ln2", d);
  }

  std::normal_distribution<double> normal(0.0, 0.02);
  ad::Matrix<Real> vertices(config_.g(), d);
  for (Eigen::Index i = 0; i < vertices.size(); ++i) vertices.data()[i] = static_cast<Real>(normal(rng));
  params_.add(kPrefix + "vertices", std::move(vertices));

  for (int l = 0; l < config_.blocks; ++l) {
    const auto b = block_name("decoder", l);
    layers::add_attention(params_, b + "/self", d, rng);
    layers::add_layer_norm(params_, b + "/ln1", d);
    layers::add_attention(params_, b + "/cross", d, rng, /*values=*/false);
    layers::add_layer_norm(params_, b + "/ln2", d);
    layers::add_feed_forward(params_, b + "/ffn", d, hidden, rng);
    layers::add_layer_norm(params_, b + "/ln3", d);
  }
  layers::add_linear(params_, kPrefix + "transition/q", d, d, rng, false);
  layers::add_linear(params_, kPrefix + "transition/k", d, d, rng, false);
}

template <typename Real>
ad::Matrix<Real> Generator<Real>::input_matrix(std::span<const data::RerankRequest* const> requests) const {
  const Eigen::Index n = config_.n, dx = config_.d_x, du = config_.d_u;
  ad::Matrix<Real> x(static_cast<Eigen::Index>(requests.size()) * n, dx + du);
  for (std::size_t b = 0; b < requests.size(); ++b) {
    const auto& r = *requests[b];
    if (static_cast<Eigen::Index>(r.candidates.size()) != n)
      throw ShapeError("encode: request " + std::to_string(r.request_id) + " has " + std::to_string(r.candidates.size()) +
                       " candidates, model expects " + std::to_string(n));
    if (static_cast<Eigen::Index>(r.user.size()) != du)
      throw ShapeError("encode: request " + std::to_string(r.request_id) + " user width " + std::to_string(r.user.size()) +
                       ", model expects " + std::to_string(du));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& c = r.candidates[static_cast<std::size_t>(i)];
      if (static_cast<Eigen::Index>(c.features.size()) != dx)
        throw ShapeError("encode: request " + std::to_string(r.request_id) + " candidate width " +
                         std::to_string(c.features.size()) + ", model expects " + std::to_string(dx));
      const Eigen::Index row = static_cast<Eigen::Index>(b) * n + i;
      for (Eigen::Index j = 0; j < dx; ++j) x(row, j) = static_cast<Real>(c.features[static_cast<std::size_t>(j)]);
      for (Eigen::Index j = 0; j < du; ++j) x(row, dx + j) = static_cast<Real>(r.user[static_cast<std::size_t>(j)]);
    }
  }
  return x;
}

template <typename Real>
ad::Value<Real> Generator<Real>::encode(ad::Tape<Real>& t, const ad::Value<Real>& inputs, Eigen::Index batch) {
  if (inputs.cols() != config_.d_x + config_.d_u || inputs.rows() != batch * config_.n)
    throw ShapeError("encode: input " + ad::shape_string(inputs.rows(), inputs.cols()) + ", expected " +
                     ad::shape_string(batch * config_.n, config_.d_x + config_.d_u));
  auto h = layers::linear(t, params_, kPrefix + "input", inputs);
  for (int l = 0; l < config_.blocks; ++l) {
    const auto b = block_name("encoder", l);
    h = layers::layer_norm(t, params_, b + "/ln1", t.add(h, layers::attention(t, params_, b + "/attn", h, h, config_.heads, batch)));
    h = layers::layer_norm(t, params_, b + "/ln2", t.add(h, layers::feed_forward(t, params_, b + "/ffn", h)));
  }
  return h;
}

template <typename Real>
ad::Value<Real> Generator<Real>::decode_vertices(ad::Tape<Real>& t, const ad::Value<Real>& hc, Eigen::Index batch) {
  if (hc.cols() != config_.d || hc.rows() != batch * config_.n)
    throw ShapeError("decode_vertices: candidate states " + ad::shape_string(hc.rows(), hc.cols()) + ", expected " +
                     ad::shape_string(batch * config_.n, config_.d));
  auto h = t.tile_rows(t.param(params_.at(kPrefix + "vertices")), batch);
  for (int l = 0; l < config_.blocks; ++l) {
    const auto b = block_name("decoder", l);
    h = layers::layer_norm(t, params_, b + "/ln1", t.add(h, layers::attention(t, params_, b + "/self", h, h, config_.heads, batch)));
    h = layers::layer_norm(t, params_, b + "/ln2", t.add(h, layers::attention(t, params_, b + "/cross", h, hc, config_.heads, batch)));
    h = layers::layer_norm(t, params_, b + "/ln3", t.add(h, layers::feed_forward(t, params_, b + "/ffn", h)));
  }
  return h;
}

template <typename Real>
ad::Value<Real> Generator<Real>::log_transition(ad::Tape<Real>& t, const ad::Value<Real>& hv, Eigen::Index batch) {
  const Eigen::Index g = config_.g();
  if (hv.cols() != config_.d || hv.rows() != batch * g)
    throw ShapeError("transition_matrix: vertex states " + ad::shape_string(hv.rows(), hv.cols()) + ", expected " +
                     ad::shape_string(batch * g, config_.d));
  const auto q = layers::linear(t, params_, kPrefix + "transition/q", hv);
  const auto k = layers::linear(t, params_, kPrefix + "transition/k", hv);
  auto logits = t.scale(t.group_matmul_nt(q, k, batch), Real(1) / std::sqrt(static_cast<Real>(config_.d)));
  logits = t.masked_fill(logits, forward_dag_mask(g, batch), -std::numeric_limits<Real>::infinity());
  return t.log_softmax_rows(logits);
}

template <typename Real>
ad::Value<Real> Generator<Real>::log_emission(ad::Tape<Real>& t, const ad::Value<Real>& hc, const ad::Value<Real>& hv,
                                              Eigen::Index batch) {
  return t.log_softmax_rows(t.group_matmul_nt(hv, hc, batch));
}

template <typename Real>
ForwardPass<Real> Generator<Real>::forward(ad::Tape<Real>& t, std::span<const data::RerankRequest* const> requests) {
  ForwardPass<Real> pass;
  pass.batch = static_cast<Eigen::Index>(requests.size());
  if (pass.batch == 0) throw ShapeError("forward: empty batch");
  const auto inputs = t.constant(input_matrix(requests));
  pass.candidate_states = encode(t, inputs, pass.batch);
  pass.vertex_states = decode_vertices(t, pass.candidate_states, pass.batch);
  pass.log_transition = log_transition(t, pass.vertex_states, pass.batch);
  pass.log_emission = log_emission(t, pass.candidate_states, pass.vertex_states, pass.batch);
  return pass;
}

template <typename Real>
TransitionMatrix transition_of(const ForwardPass<Real>& pass, Eigen::Index index) {
  const auto& lt = pass.log_transition.data();
  const Eigen::Index g = lt.cols();
  TransitionMatrix e;
  e.probs = ad::exact_exp(lt.middleRows(index * g, g).template cast<double>().array()).matrix();
  return e;
}

template <typename Real>
EmissionMatrix emission_of(const ForwardPass<Real>& pass, Eigen::Index index) {
  const auto& le = pass.log_emission.data();
  const Eigen::Index g = le.rows() / pass.batch;
  EmissionMatrix p;
  p.probs = ad::exact_exp(le.middleRows(index * g, g).transpose().template cast<double>().array()).matrix();
  return p;
}

template <typename Real>
std::vector<EmissionMatrix> vanilla_forward(Generator<Real>& generator,
                                            std::span<const data::RerankRequest* const> requests) {
  if (generator.config().lambda != 1)
    throw ConfigError("vanilla_forward: generator must be built with lambda=1, got lambda=" +
                      std::to_string(generator.config().lambda));
  std::vector<EmissionMatrix> out;
  if (requests.empty()) return out;
  ad::Tape<Real> tape;
  const auto pass = generator.forward(tape, requests);
  for (Eigen::Index b = 0; b < pass.batch; ++b) out.push_back(emission_of(pass, b));
  return out;
}

template class Generator<float>;
template class Generator<double>;
template class Generator<long double>;
template TransitionMatrix transition_of(const ForwardPass<float>&, Eigen::Index);
template TransitionMatrix transition_of(const ForwardPass<double>&, Eigen::Index);
template TransitionMatrix transition_of(const ForwardPass<long double>&, Eigen::Index);
template EmissionMatrix emission_of(const ForwardPass<float>&, Eigen::Index);
template EmissionMatrix emission_of(const ForwardPass<double>&, Eigen::Index);
template EmissionMatrix emission_of(const ForwardPass<long double>&, Eigen::Index);
template std::vector<EmissionMatrix> vanilla_forward(Generator<float>&, std::span<const data::RerankRequest* const>);
template std::vector<EmissionMatrix> vanilla_forward(Generator<double>&, std::span<const data::RerankRequest* const>);

}  // namespace dagrank::model
