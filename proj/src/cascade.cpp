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
#include "dagrank/cascade.hpp"

#include <cmath>
#include <string>

#include "dagrank/decode.hpp"
#include "dagrank/error.hpp"
#include "dagrank/layers.hpp"

namespace dagrank::cascade {

namespace {

const std::string kPrefix = "evaluator/";

std::string tower_name(int j) {
  return kPrefix + "tower" + std::to_string(j);
}

}  // namespace

void EvaluatorConfig::validate() const {
  if (tasks.empty()) throw ConfigError("evaluator: at least one task is required");
  if (polarity.size() != tasks.size()) throw ConfigError("evaluator: one polarity per task is required");
  for (double p : polarity)
    if (p != 0.0 && p != 1.0) throw ConfigError("evaluator: polarities must be 0 or 1");
  if (d < 1 || heads < 1 || d % heads != 0) throw ConfigError("evaluator: d must be a positive multiple of heads");
  if (tower_hidden < 1 || m < 1 || d_u < 1 || d_x < 1) throw ConfigError("evaluator: widths and m must be >= 1");
}

template <typename Real>
Evaluator<Real>::Evaluator(EvaluatorConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  auto rng = make_stream(init_seed, "init-evaluator");
  const Eigen::Index d = config_.d;
  layers::add_linear(params_, kPrefix + "input", config_.d_x + config_.d_u, d, rng);
  if (config_.positional) {
    std::normal_distribution<double> normal(0.0, 0.02);
    ad::Matrix<Real> pos(config_.m, d);
    for (Eigen::Index i = 0; i < pos.size(); ++i) pos.data()[i] = static_cast<Real>(normal(rng));
    params_.add(kPrefix + "position", std::move(pos));
  }
  layers::add_attention(params_, kPrefix + "shared/attn", d, rng);
  layers::add_layer_norm(params_, kPrefix + "shared/ln1", d);
  layers::add_feed_forward(params_, kPrefix + "shared/ffn", d, 2 * d, rng);
  layers::add_layer_norm(params_, kPrefix + "shared/ln2", d);
  for (int j = 0; j < config_.k(); ++j) {
    layers::add_linear(params_, tower_name(j) + "/hidden", d, config_.tower_hidden, rng);
    layers::add_linear(params_, tower_name(j) + "/out", config_.tower_hidden, 1, rng);
  }
}

template <typename Real>
ad::Value<Real> Evaluator<Real>::logits(ad::Tape<Real>& t, const ad::Value<Real>& slates, const ad::Matrix<Real>& users) {
  const Eigen::Index m = config_.m;
  const Eigen::Index batch = users.rows();
  if (slates.rows() != batch * m || slates.cols() != config_.d_x || users.cols() != config_.d_u)
    throw ShapeError("evaluator: slates " + ad::shape_string(slates.rows(), slates.cols()) + " and users " +
                     ad::shape_string(users.rows(), users.cols()) + " do not fit m=" + std::to_string(m) +
                     ", d_x=" + std::to_string(config_.d_x) + ", d_u=" + std::to_string(config_.d_u));
  ad::Matrix<Real> user_rows(batch * m, users.cols());
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index i = 0; i < m; ++i) user_rows.row(b * m + i) = users.row(b);

  const ad::Value<Real> parts[] = {slates, t.constant(std::move(user_rows))};
  auto h = layers::linear(t, params_, kPrefix + "input", t.concat_cols(parts));
  if (config_.positional) h = t.add(h, t.tile_rows(t.param(params_.at(kPrefix + "position")), batch));
  h = layers::layer_norm(t, params_, kPrefix + "shared/ln1",
                         t.add(h, layers::attention(t, params_, kPrefix + "shared/attn", h, h, config_.heads, batch)));
  h = layers::layer_norm(t, params_, kPrefix + "shared/ln2",
                         t.add(h, layers::feed_forward(t, params_, kPrefix + "shared/ffn", h)));

  std::vector<ad::Value<Real>> towers;
  for (int j = 0; j < config_.k(); ++j) {
    const auto hidden = t.relu(layers::linear(t, params_, tower_name(j) + "/hidden", h));
    towers.push_back(layers::linear(t, params_, tower_name(j) + "/out", hidden));
  }
  return towers.size() == 1 ? towers.front() : t.concat_cols(towers);
}

template <typename Real>
ad::Value<Real> Evaluator<Real>::scores(ad::Tape<Real>& t, const ad::Value<Real>& slates, const ad::Matrix<Real>& users) {
  return t.sigmoid(logits(t, slates, users));
}

template <typename Real>
CascadeInputs<Real> cascade_inputs(std::span<const data::RerankRequest* const> requests) {
  CascadeInputs<Real> in;
  if (requests.empty()) return in;
  const auto n = static_cast<Eigen::Index>(requests.front()->candidates.size());
  const auto dx = static_cast<Eigen::Index>(requests.front()->candidates.front().features.size());
  const auto du = static_cast<Eigen::Index>(requests.front()->user.size());
  const auto batch = static_cast<Eigen::Index>(requests.size());
  in.candidate_features.resize(batch * n, dx);
  in.users.resize(batch, du);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto& r = *requests[static_cast<std::size_t>(b)];
    if (static_cast<Eigen::Index>(r.candidates.size()) != n || static_cast<Eigen::Index>(r.user.size()) != du)
      throw ShapeError("cascade: request " + std::to_string(r.request_id) + " does not match the batch shape");
    for (Eigen::Index j = 0; j < du; ++j) in.users(b, j) = static_cast<Real>(r.user[static_cast<std::size_t>(j)]);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& f = r.candidates[static_cast<std::size_t>(i)].features;
      if (static_cast<Eigen::Index>(f.size()) != dx)
        throw ShapeError("cascade: request " + std::to_string(r.request_id) + " candidate width mismatch");
      for (Eigen::Index j = 0; j < dx; ++j) in.candidate_features(b * n + i, j) = static_cast<Real>(f[static_cast<std::size_t>(j)]);
    }
  }
  return in;
}

template <typename Real>
ad::Matrix<Real> logged_slate_features(std::span<const data::Record* const> records) {
  if (records.empty()) return {};
  const auto m = static_cast<Eigen::Index>(records.front()->outcome.exposed.size());
  const auto dx = static_cast<Eigen::Index>(records.front()->request.candidates.front().features.size());
  ad::Matrix<Real> out(static_cast<Eigen::Index>(records.size()) * m, dx);
  for (std::size_t b = 0; b < records.size(); ++b) {
    const auto& rec = *records[b];
    for (Eigen::Index i = 0; i < m; ++i) {
      const int ci = data::candidate_index(rec.request, rec.outcome.exposed[static_cast<std::size_t>(i)]);
      if (ci < 0) throw FormatError("request " + std::to_string(rec.request.request_id) + ": exposed item not a candidate");
      const auto& f = rec.request.candidates[static_cast<std::size_t>(ci)].features;
      for (Eigen::Index j = 0; j < dx; ++j)
        out(static_cast<Eigen::Index>(b) * m + i, j) = static_cast<Real>(f[static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

template <typename Real>
ad::Matrix<Real> logged_labels(std::span<const data::Record* const> records) {
  if (records.empty()) return {};
  const auto m = static_cast<Eigen::Index>(records.front()->outcome.labels.size());
  ad::Matrix<Real> out(static_cast<Eigen::Index>(records.size()) * m, data::kTaskCount);
  for (std::size_t b = 0; b < records.size(); ++b)
    for (Eigen::Index i = 0; i < m; ++i)
      for (int j = 0; j < data::kTaskCount; ++j)
        out(static_cast<Eigen::Index>(b) * m + i, j) =
            static_cast<Real>(records[b]->outcome.labels[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
  return out;
}

template <typename Real>
ad::Value<Real> eval_loss(ad::Tape<Real>& t, Evaluator<Real>& evaluator, const ad::Value<Real>& slates,
                          const ad::Matrix<Real>& users, const ad::Matrix<Real>& labels) {
  const auto z = evaluator.logits(t, slates, users);
  if (labels.rows() != z.rows() || labels.cols() != z.cols())
    throw ShapeError("eval_loss: labels " + ad::shape_string(labels.rows(), labels.cols()) + " vs scores " +
                     ad::shape_string(z.rows(), z.cols()));
  const auto loss = t.scale(t.sum(t.bce_with_logits(z, labels)), Real(1) / static_cast<Real>(users.rows()));
  if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericalError("eval_loss: non-finite loss");
  return loss;
}

template <typename Real>
ad::Matrix<Real> gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  ad::Matrix<Real> r(rows, cols);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = static_cast<Real>(-std::log(-std::log(open_uniform(rng))));
  return r;
}

template <typename Real>
ad::Value<Real> gumbel_relaxed_sample(ad::Tape<Real>& t, const ad::Value<Real>& logits, const ad::Matrix<Real>& noise,
                                      double tau) {
  if (!(tau > 0)) throw ConfigError("gumbel_relaxed_sample: tau must be > 0, got " + std::to_string(tau));
  const auto perturbed = t.add(logits, t.constant(noise));
  return t.softmax_rows(t.scale(perturbed, static_cast<Real>(1.0 / tau)));
}

template <typename Real>
ad::Value<Real> relaxed_slate_embeddings(ad::Tape<Real>& t, const ad::Value<Real>& relaxed,
                                         const ad::Value<Real>& candidate_features, Eigen::Index batch) {
  return t.group_matmul(relaxed, candidate_features, batch);
}

template <typename Real>
ConsistencyDraw draw_consistency(const model::ForwardPass<Real>& pass, int m, Rng& path_rng, Rng& gumbel_rng) {
  ConsistencyDraw draw;
  for (Eigen::Index b = 0; b < pass.batch; ++b)
    draw.paths.push_back(decode::sample_path(model::transition_of(pass, b), m, path_rng));
  draw.noise = gumbel_noise<double>(pass.batch * m, pass.log_emission.cols(), gumbel_rng);
  return draw;
}

template <typename Real>
ad::Value<Real> consistency_loss(ad::Tape<Real>& t, Evaluator<Real>& evaluator, const model::ForwardPass<Real>& pass,
                                 const CascadeInputs<Real>& inputs, const ConsistencyDraw& draw, double tau) {
  for (std::size_t i = 0; i < evaluator.params().size(); ++i)
    if (!evaluator.params()[i].frozen)
      throw ConfigError("consistency_loss: evaluator parameter " + evaluator.params()[i].name + " is not frozen");
  const Eigen::Index batch = pass.batch;
  const int m = evaluator.config().m;
  const Eigen::Index g = pass.log_transition.cols();
  if (static_cast<Eigen::Index>(draw.paths.size()) != batch || draw.noise.rows() != batch * m)
    throw ShapeError("consistency_loss: draw does not match the batch");

  std::vector<Eigen::Index> rows;
  rows.reserve(static_cast<std::size_t>(batch * m));
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto& path = draw.paths[static_cast<std::size_t>(b)];
    if (static_cast<int>(path.size()) != m) throw ShapeError("consistency_loss: path length differs from m");
    for (int v : path) rows.push_back(b * g + v);
  }
  const auto logits = t.gather_rows(pass.log_emission, std::move(rows));
  const auto relaxed = gumbel_relaxed_sample(t, logits, ad::Matrix<Real>(draw.noise.template cast<Real>()), tau);
  const auto slates = relaxed_slate_embeddings(t, relaxed, t.constant(inputs.candidate_features), batch);
  const auto z = evaluator.logits(t, slates, inputs.users);

  ad::Matrix<Real> targets(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    targets.col(j).setConstant(static_cast<Real>(evaluator.config().polarity[static_cast<std::size_t>(j)]));
  return t.scale(t.sum(t.bce_with_logits(z, targets)), Real(1) / static_cast<Real>(batch));
}

template <typename Real>
ad::Value<Real> total_loss(ad::Tape<Real>& t, const ad::Value<Real>& consistency, const ad::Value<Real>& generative,
                           double alpha) {
  if (!(alpha >= 0)) throw ConfigError("total_loss: alpha must be >= 0");
  return t.add(consistency, t.scale(generative, static_cast<Real>(alpha)));
}

template <typename Real>
std::vector<double> slate_utility(Evaluator<Real>& evaluator, std::span<const data::RerankRequest* const> requests,
                                  const std::vector<std::vector<int>>& slates) {
  std::vector<double> out;
  if (requests.empty()) return out;
  const auto m = static_cast<Eigen::Index>(evaluator.config().m);
  const auto inputs = cascade_inputs<Real>(requests);
  const Eigen::Index n = inputs.candidate_features.rows() / static_cast<Eigen::Index>(requests.size());
  ad::Matrix<Real> features(static_cast<Eigen::Index>(requests.size()) * m, inputs.candidate_features.cols());
  for (std::size_t b = 0; b < requests.size(); ++b) {
    if (static_cast<Eigen::Index>(slates[b].size()) != m) throw ShapeError("slate_utility: slate length differs from m");
    for (Eigen::Index i = 0; i < m; ++i)
      features.row(static_cast<Eigen::Index>(b) * m + i) =
          inputs.candidate_features.row(static_cast<Eigen::Index>(b) * n + slates[b][static_cast<std::size_t>(i)]);
  }
  ad::Tape<Real> t;
  const auto s = evaluator.scores(t, t.constant(std::move(features)), inputs.users).data();
  const auto& pol = evaluator.config().polarity;
  for (std::size_t b = 0; b < requests.size(); ++b) {
    double total = 0;
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < s.cols(); ++j) {
        const double v = static_cast<double>(s(static_cast<Eigen::Index>(b) * m + i, j));
        total += pol[static_cast<std::size_t>(j)] == 1.0 ? v : 1.0 - v;
      }
    out.push_back(total / static_cast<double>(m * s.cols()));
  }
  return out;
}

#define DAGRANK_INSTANTIATE(Real)                                                                                   \
  template class Evaluator<Real>;                                                                                   \
  template CascadeInputs<Real> cascade_inputs(std::span<const data::RerankRequest* const>);                        \
  template ad::Matrix<Real> logged_slate_features(std::span<const data::Record* const>);                           \
  template ad::Matrix<Real> logged_labels(std::span<const data::Record* const>);                                   \
  template ad::Value<Real> eval_loss(ad::Tape<Real>&, Evaluator<Real>&, const ad::Value<Real>&,                    \
                                     const ad::Matrix<Real>&, const ad::Matrix<Real>&);                             \
  template ad::Matrix<Real> gumbel_noise(Eigen::Index, Eigen::Index, Rng&);                                        \
  template ad::Value<Real> gumbel_relaxed_sample(ad::Tape<Real>&, const ad::Value<Real>&, const ad::Matrix<Real>&, \
                                                 double);                                                           \
  template ad::Value<Real> relaxed_slate_embeddings(ad::Tape<Real>&, const ad::Value<Real>&,                       \
                                                    const ad::Value<Real>&, Eigen::Index);                          \
  template ConsistencyDraw draw_consistency(const model::ForwardPass<Real>&, int, Rng&, Rng&);                     \
  template ad::Value<Real> consistency_loss(ad::Tape<Real>&, Evaluator<Real>&, const model::ForwardPass<Real>&,    \
                                            const CascadeInputs<Real>&, const ConsistencyDraw&, double);            \
  template ad::Value<Real> total_loss(ad::Tape<Real>&, const ad::Value<Real>&, const ad::Value<Real>&, double);    \
  template std::vector<double> slate_utility(Evaluator<Real>&, std::span<const data::RerankRequest* const>,         \
                                             const std::vector<std::vector<int>>&);

DAGRANK_INSTANTIATE(float)
DAGRANK_INSTANTIATE(double)
DAGRANK_INSTANTIATE(long double)

#undef DAGRANK_INSTANTIATE

}  // namespace dagrank::cascade
