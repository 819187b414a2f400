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
// Synthetic interaction logs, their JSON-lines file format and batching.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dagrank/rng.hpp"

namespace dagrank::data {

inline constexpr int kTaskCount = 3;
inline constexpr std::array<std::string_view, kTaskCount> kTaskNames = {"show", "click", "next_slide"};
inline constexpr int kFormatVersion = 1;

struct Candidate {
  std::int64_t id = 0;
  std::vector<double> features;

  bool operator==(const Candidate&) const = default;
};

struct RerankRequest {
  std::int64_t request_id = 0;
  std::vector<double> user;
  std::vector<Candidate> candidates;

  bool operator==(const RerankRequest&) const = default;
};

/// Items shown for a request, in display order, with per-task binary labels.
struct LoggedOutcome {
  std::vector<std::int64_t> exposed;
  std::vector<std::array<int, kTaskCount>> labels;

  bool operator==(const LoggedOutcome&) const = default;
};

struct Record {
  RerankRequest request;
  LoggedOutcome outcome;

  bool operator==(const Record&) const = default;
};

struct DatasetManifest {
  int version = kFormatVersion;
  std::int64_t requests = 0;
  std::int64_t catalog = 0;
  int n = 0;
  int m = 0;
  int k = kTaskCount;
  int d_u = 0;
  int d_x = 0;
  std::uint64_t seed = 0;

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Record> records;

  bool operator==(const Dataset&) const = default;
};

struct SyntheticConfig {
  std::int64_t num_requests = 20000;
  std::int64_t catalog_size = 500;
  int n = 20;
  int m = 4;
  int d_u = 8;
  int d_x = 16;
  std::uint64_t seed = 1;
  // Std-dev of the Gaussian noise the logging policy adds to affinities.
  double policy_noise = 0.5;
  // Click logit offset falls linearly from +span/2 at the first slot to
  // -span/2 at the last.
  double position_bias = 1.0;
};

/// Hidden preference model behind a synthetic dataset. Affinity mixes a
/// global item quality with a user-item bilinear term, scaled to unit
/// variance for standard-normal inputs.
struct SyntheticWorld {
  Eigen::MatrixXd catalog;      // catalog_size x d_x
  Eigen::MatrixXd interaction;  // d_u x d_x
  Eigen::VectorXd quality;      // d_x

  double affinity(std::span<const double> user, std::span<const double> item) const;
};

SyntheticWorld make_world(const SyntheticConfig& config);
std::vector<double> position_biases(int m, double span);
double click_probability(double affinity, double bias);
double next_slide_probability(double affinity);

/// Fully determined by `config` (including its seed).
Dataset generate_synthetic(const SyntheticConfig& config);

void validate(const Dataset& dataset);
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Position of `item_id` among the request's candidates, or -1.
int candidate_index(const RerankRequest& request, std::int64_t item_id);

/// Record indices of one epoch split into batches. The order is a function of
/// (shuffle_seed, epoch) only; the last batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> indices, std::size_t batch_size,
                                                    std::uint64_t shuffle_seed, std::uint64_t epoch);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> heldout;
};

/// The trailing `fraction` of records (at least one when fraction > 0) is held out.
Split holdout_split(std::size_t size, double fraction);

}  // namespace dagrank::data
