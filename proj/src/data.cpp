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
#include "dagrank/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <string>

#include <json.hpp>

#include "dagrank/error.hpp"

namespace dagrank::data {

using Json = nlohmann::ordered_json;

double SyntheticWorld::affinity(std::span<const double> user, std::span<const double> item) const {
  const Eigen::Map<const Eigen::VectorXd> u(user.data(), static_cast<Eigen::Index>(user.size()));
  const Eigen::Map<const Eigen::VectorXd> x(item.data(), static_cast<Eigen::Index>(item.size()));
  const double bilinear = u.dot(interaction * x) / std::sqrt(static_cast<double>(u.size()));
  return (bilinear + quality.dot(x)) / std::sqrt(2.0);
}

SyntheticWorld make_world(const SyntheticConfig& config) {
  auto rng = make_stream(config.seed, "world");
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticWorld world;
  world.catalog.resize(config.catalog_size, config.d_x);
  for (Eigen::Index i = 0; i < world.catalog.size(); ++i) world.catalog.data()[i] = normal(rng);
  const double s = 1.0 / std::sqrt(static_cast<double>(config.d_x));
  world.interaction.resize(config.d_u, config.d_x);
  for (Eigen::Index i = 0; i < world.interaction.size(); ++i) world.interaction.data()[i] = s * normal(rng);
  world.quality.resize(config.d_x);
  for (Eigen::Index i = 0; i < world.quality.size(); ++i) world.quality(i) = s * normal(rng);
  return world;
}

std::vector<double> position_biases(int m, double span) {
  std::vector<double> bias(static_cast<std::size_t>(m), 0.0);
  if (m == 1) return bias;
  for (int i = 0; i < m; ++i) bias[static_cast<std::size_t>(i)] = span * (0.5 - static_cast<double>(i) / (m - 1));
  return bias;
}

double click_probability(double affinity, double bias) {
  return 1.0 / (1.0 + std::exp(-(affinity + bias)));
}

double next_slide_probability(double affinity) {
  return 1.0 / (1.0 + std::exp(affinity));
}

namespace {

void check_config(const SyntheticConfig& c) {
  if (c.num_requests < 1) throw ConfigError("synthetic: num_requests must be >= 1");
  if (c.n < 1 || c.m < 1) throw ConfigError("synthetic: n and m must be >= 1");
  if (c.m > c.n) throw ConfigError("synthetic: m must not exceed n");
  if (c.catalog_size < c.n) throw ConfigError("synthetic: catalog_size must be >= n");
  if (c.d_u < 1 || c.d_x < 1) throw ConfigError("synthetic: feature widths must be >= 1");
  if (c.policy_noise < 0) throw ConfigError("synthetic: policy_noise must be >= 0");
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
  check_config(config);
  const SyntheticWorld world = make_world(config);
  const auto bias = position_biases(config.m, config.position_bias);

  Dataset ds;
  ds.manifest = {kFormatVersion, config.num_requests, config.catalog_size, config.n, config.m,
                 kTaskCount,     config.d_u,          config.d_x,          config.seed};
  ds.records.reserve(static_cast<std::size_t>(config.num_requests));

  std::vector<std::int64_t> pool(static_cast<std::size_t>(config.catalog_size));
  for (std::int64_t r = 0; r < config.num_requests; ++r) {
    auto rng = make_stream(config.seed, "data", static_cast<std::uint64_t>(r));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Record rec;
    rec.request.request_id = r;
    rec.request.user.resize(static_cast<std::size_t>(config.d_u));
    for (auto& v : rec.request.user) v = normal(rng);

    std::iota(pool.begin(), pool.end(), std::int64_t{0});
    for (int i = 0; i < config.n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
    }

    std::vector<double> aff(static_cast<std::size_t>(config.n));
    std::vector<double> score(static_cast<std::size_t>(config.n));
    for (int i = 0; i < config.n; ++i) {
      const std::int64_t id = pool[static_cast<std::size_t>(i)];
      Candidate c;
      c.id = id;
      c.features.assign(world.catalog.row(id).data(), world.catalog.row(id).data() + config.d_x);
      aff[static_cast<std::size_t>(i)] = world.affinity(rec.request.user, c.features);
      rec.request.candidates.push_back(std::move(c));
    }
    for (int i = 0; i < config.n; ++i) {
      const double noise = normal(rng);
      score[static_cast<std::size_t>(i)] = aff[static_cast<std::size_t>(i)] + config.policy_noise * noise;
    }

    std::vector<std::size_t> order(static_cast<std::size_t>(config.n));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

    for (int pos = 0; pos < config.m; ++pos) {
      const std::size_t ci = order[static_cast<std::size_t>(pos)];
      rec.outcome.exposed.push_back(rec.request.candidates[ci].id);
      const int click = unif(rng) < click_probability(aff[ci], bias[static_cast<std::size_t>(pos)]) ? 1 : 0;
      const int next = unif(rng) < next_slide_probability(aff[ci]) ? 1 : 0;
      rec.outcome.labels.push_back({1, click, next});
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

int candidate_index(const RerankRequest& request, std::int64_t item_id) {
  for (std::size_t i = 0; i < request.candidates.size(); ++i)
    if (request.candidates[i].id == item_id) return static_cast<int>(i);
  return -1;
}

void validate(const Dataset& ds) {
  const auto& mf = ds.manifest;
  if (mf.version != kFormatVersion) throw FormatError("dataset: unsupported version " + std::to_string(mf.version));
  if (mf.k != kTaskCount) throw FormatError("dataset: expected k=3 tasks, manifest says " + std::to_string(mf.k));
  if (static_cast<std::int64_t>(ds.records.size()) != mf.requests)
    throw FormatError("dataset: manifest says " + std::to_string(mf.requests) + " requests, stream has " +
                      std::to_string(ds.records.size()));
  for (const auto& rec : ds.records) {
    const std::string where = "dataset: request " + std::to_string(rec.request.request_id) + ": ";
    if (static_cast<int>(rec.request.user.size()) != mf.d_u) throw FormatError(where + "user feature width mismatch");
    if (static_cast<int>(rec.request.candidates.size()) != mf.n)
      throw FormatError(where + "expected " + std::to_string(mf.n) + " candidates, got " +
                        std::to_string(rec.request.candidates.size()));
    std::set<std::int64_t> ids;
    for (const auto& c : rec.request.candidates) {
      if (static_cast<int>(c.features.size()) != mf.d_x) throw FormatError(where + "candidate feature width mismatch");
      if (c.id < 0 || c.id >= mf.catalog) throw FormatError(where + "item id " + std::to_string(c.id) + " outside catalog");
      if (!ids.insert(c.id).second) throw FormatError(where + "duplicate candidate id " + std::to_string(c.id));
    }
    if (static_cast<int>(rec.outcome.exposed.size()) != mf.m || static_cast<int>(rec.outcome.labels.size()) != mf.m)
      throw FormatError(where + "expected " + std::to_string(mf.m) + " exposed items with labels");
    std::set<std::int64_t> shown;
    for (auto id : rec.outcome.exposed) {
      if (!ids.contains(id)) throw FormatError(where + "exposed item " + std::to_string(id) + " is not a candidate");
      if (!shown.insert(id).second) throw FormatError(where + "exposed item " + std::to_string(id) + " repeated");
    }
    for (const auto& row : rec.outcome.labels)
      for (int v : row)
        if (v != 0 && v != 1) throw FormatError(where + "labels must be binary");
  }
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  validate(ds);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("dataset: cannot open " + path.string() + " for writing");
  const auto& mf = ds.manifest;
  Json manifest = {{"version", mf.version}, {"requests", mf.requests}, {"catalog", mf.catalog},
                   {"n", mf.n},             {"m", mf.m},               {"k", mf.k},
                   {"d_u", mf.d_u},         {"d_x", mf.d_x},           {"seed", mf.seed}};
  out << manifest.dump() << '\n';
  for (const auto& rec : ds.records) {
    Json candidates = Json::array();
    for (const auto& c : rec.request.candidates) candidates.push_back({{"id", c.id}, {"x", c.features}});
    Json labels = Json::array();
    for (const auto& row : rec.outcome.labels) labels.push_back(row);
    Json line = {{"request_id", rec.request.request_id},
                 {"user", rec.request.user},
                 {"candidates", std::move(candidates)},
                 {"exposed", rec.outcome.exposed},
                 {"labels", std::move(labels)}};
    out << line.dump() << '\n';
  }
  if (!out) throw FormatError("dataset: write to " + path.string() + " failed");
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("dataset: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset: " + path.string() + " is empty");

  Dataset ds;
  try {
    const Json mf = Json::parse(line);
    ds.manifest.version = mf.at("version").get<int>();
    if (ds.manifest.version != kFormatVersion)
      throw FormatError("dataset: unsupported version " + std::to_string(ds.manifest.version));
    ds.manifest.requests = mf.at("requests").get<std::int64_t>();
    ds.manifest.catalog = mf.at("catalog").get<std::int64_t>();
    ds.manifest.n = mf.at("n").get<int>();
    ds.manifest.m = mf.at("m").get<int>();
    ds.manifest.k = mf.at("k").get<int>();
    ds.manifest.d_u = mf.at("d_u").get<int>();
    ds.manifest.d_x = mf.at("d_x").get<int>();
    ds.manifest.seed = mf.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset: bad manifest line: " + std::string(e.what()));
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      Record rec;
      rec.request.request_id = j.at("request_id").get<std::int64_t>();
      rec.request.user = j.at("user").get<std::vector<double>>();
      for (const auto& c : j.at("candidates"))
        rec.request.candidates.push_back({c.at("id").get<std::int64_t>(), c.at("x").get<std::vector<double>>()});
      rec.outcome.exposed = j.at("exposed").get<std::vector<std::int64_t>>();
      for (const auto& row : j.at("labels")) {
        const auto v = row.get<std::vector<int>>();
        if (v.size() != static_cast<std::size_t>(kTaskCount))
          throw FormatError("dataset: line " + std::to_string(line_no) + ": label row must have 3 entries");
        rec.outcome.labels.push_back({v[0], v[1], v[2]});
      }
      ds.records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("dataset: line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate(ds);
  return ds;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> indices, std::size_t batch_size,
                                                    std::uint64_t shuffle_seed, std::uint64_t epoch) {
  if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  auto rng = make_stream(shuffle_seed, "shuffle", epoch);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t at = 0; at < order.size(); at += batch_size) {
    const std::size_t end = std::min(order.size(), at + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Split holdout_split(std::size_t size, double fraction) {
  if (fraction < 0 || fraction >= 1) throw ConfigError("holdout fraction must be in [0, 1)");
  std::size_t held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(size)));
  if (held >= size && size > 0) held = size - 1;
  Split s;
  for (std::size_t i = 0; i < size; ++i) (i + held < size ? s.train : s.heldout).push_back(i);
  return s;
}

}  // namespace dagrank::data
