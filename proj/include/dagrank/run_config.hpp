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
// Flat key=value run configuration shared by every command.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dagrank/cascade.hpp"
#include "dagrank/dag_loss.hpp"
#include "dagrank/data.hpp"
#include "dagrank/decode.hpp"
#include "dagrank/model.hpp"
#include "dagrank/optim.hpp"

namespace dagrank {

enum class Precision { kFloat32, kFloat64 };

enum class TrainMode { kEvaluator, kGenOnly, kConOnly, kTotal, kVanilla };

TrainMode parse_mode(std::string_view name);
std::string_view mode_name(TrainMode mode);

struct RunConfig {
  // Data.
  std::int64_t requests = 20000;
  std::int64_t catalog = 500;
  int n = 20;
  int m = 4;
  int d_u = 8;
  int d_x = 16;
  double policy_noise = 0.5;
  double position_bias = 1.0;
  double holdout = 0.1;

  // Generator.
  int d = 32;
  int blocks = 2;
  int lambda = 4;
  int heads = 2;
  int ffn_mult = 4;
  std::string transition_norm = "admissible";

  // Evaluator.
  int eval_d = 32;
  int eval_heads = 2;
  int tower_hidden = 32;
  bool eval_positional = true;
  std::string polarity = "1,1,0";

  // Optimization.
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double alpha = 0.5;
  double tau = 0.3;
  int epochs = 8;
  int eval_epochs = 4;
  int batch_size = 64;
  int cascade_every = 1;
  std::uint64_t seed = 1;
  std::string precision = "f32";
  std::string mode = "generator-total";

  // Decoding and reporting.
  std::string strategy = "lookahead";
  double temperature = 1.0;
  bool free_endpoint = false;
  bool distinct2_per_list = false;
  int diversity_requests = 200;
  int diversity_samples = 10;
  int workers = 1;
  std::string lambdas = "1,2,4,6";

  // Paths.
  std::string dataset = "data.jsonl";
  std::string out_dir = "out";
  std::string checkpoint;
  std::string evaluator_checkpoint;

  /// Assigns one field from text. Throws ConfigError naming the key when it
  /// is unknown or the value does not parse.
  void set(std::string_view key, std::string_view value);
  /// Throws ConfigError on the first invalid field.
  void validate() const;
  /// key=value lines in declaration order.
  std::string to_text() const;

  model::ModelConfig model_config() const;
  cascade::EvaluatorConfig evaluator_config() const;
  data::SyntheticConfig synthetic_config() const;
  ad::AdamOptions adam_options() const;
  dag::TransitionNorm norm() const;
  decode::DecodeOptions decode_options() const;
  Precision precision_mode() const;
  TrainMode train_mode() const;
  std::vector<int> lambda_list() const;
};

/// Known keys in declaration order.
std::vector<std::string_view> config_keys();

/// Applies `key = value` lines; '#' starts a comment, blank lines are skipped.
void apply_config_file(RunConfig& config, const std::filesystem::path& path);
/// Applies `--key value` or `--key=value` overrides.
void apply_overrides(RunConfig& config, std::span<const std::string> args);

}  // namespace dagrank
