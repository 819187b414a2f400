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
#include "dagrank/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <utility>
#include <variant>

#include "dagrank/error.hpp"

namespace dagrank {

namespace {

using Field = std::variant<int RunConfig::*, std::int64_t RunConfig::*, std::uint64_t RunConfig::*,
                           double RunConfig::*, bool RunConfig::*, std::string RunConfig::*>;

const std::vector<std::pair<std::string_view, Field>>& fields() {
  static const std::vector<std::pair<std::string_view, Field>> table = {
      {"requests", &RunConfig::requests},
      {"catalog", &RunConfig::catalog},
      {"n", &RunConfig::n},
      {"m", &RunConfig::m},
      {"d_u", &RunConfig::d_u},
      {"d_x", &RunConfig::d_x},
      {"policy_noise", &RunConfig::policy_noise},
      {"position_bias", &RunConfig::position_bias},
      {"holdout", &RunConfig::holdout},
      {"d", &RunConfig::d},
      {"blocks", &RunConfig::blocks},
      {"lambda", &RunConfig::lambda},
      {"heads", &RunConfig::heads},
      {"ffn_mult", &RunConfig::ffn_mult},
      {"transition_norm", &RunConfig::transition_norm},
      {"eval_d", &RunConfig::eval_d},
      {"eval_heads", &RunConfig::eval_heads},
      {"tower_hidden", &RunConfig::tower_hidden},
      {"eval_positional", &RunConfig::eval_positional},
      {"polarity", &RunConfig::polarity},
      {"lr", &RunConfig::lr},
      {"beta1", &RunConfig::beta1},
      {"beta2", &RunConfig::beta2},
      {"adam_eps", &RunConfig::adam_eps},
      {"alpha", &RunConfig::alpha},
      {"tau", &RunConfig::tau},
      {"epochs", &RunConfig::epochs},
      {"eval_epochs", &RunConfig::eval_epochs},
      {"batch_size", &RunConfig::batch_size},
      {"cascade_every", &RunConfig::cascade_every},
      {"seed", &RunConfig::seed},
      {"precision", &RunConfig::precision},
      {"mode", &RunConfig::mode},
      {"strategy", &RunConfig::strategy},
      {"temperature", &RunConfig::temperature},
      {"free_endpoint", &RunConfig::free_endpoint},
      {"distinct2_per_list", &RunConfig::distinct2_per_list},
      {"diversity_requests", &RunConfig::diversity_requests},
      {"diversity_samples", &RunConfig::diversity_samples},
      {"workers", &RunConfig::workers},
      {"lambdas", &RunConfig::lambdas},
      {"dataset", &RunConfig::dataset},
      {"out_dir", &RunConfig::out_dir},
      {"checkpoint", &RunConfig::checkpoint},
      {"evaluator_checkpoint", &RunConfig::evaluator_checkpoint},
  };
  return table;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" + std::string(text) + "'");
}

std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    out.push_back(trim(text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

TrainMode parse_mode(std::string_view name) {
  if (name == "evaluator") return TrainMode::kEvaluator;
  if (name == "generator-gen-only") return TrainMode::kGenOnly;
  if (name == "generator-con-only") return TrainMode::kConOnly;
  if (name == "generator-total") return TrainMode::kTotal;
  if (name == "vanilla") return TrainMode::kVanilla;
  throw ConfigError("unknown training mode: " + std::string(name));
}

std::string_view mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kEvaluator: return "evaluator";
    case TrainMode::kGenOnly: return "generator-gen-only";
    case TrainMode::kConOnly: return "generator-con-only";
    case TrainMode::kTotal: return "generator-total";
    case TrainMode::kVanilla: return "vanilla";
  }
  return "?";
}

std::vector<std::string_view> config_keys() {
  std::vector<std::string_view> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto& table = fields();
  const auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == key; });
  if (it == table.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  value = trim(value);
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          this->*member = std::string(value);
        } else if constexpr (std::is_same_v<T, bool>) {
          this->*member = parse_bool(key, value);
        } else {
          this->*member = parse_number<T>(key, value);
        }
      },
      it->second);
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& [key, field] : fields()) {
    out << key << " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, bool>)
            out << (this->*member ? "true" : "false");
          else
            out << this->*member;
        },
        field);
    out << '\n';
  }
  return out.str();
}

void RunConfig::validate() const {
  require(requests >= 1, "requests must be >= 1");
  require(catalog >= n, "catalog must be >= n");
  require(n >= m, "n must be >= m");
  require(std::isfinite(policy_noise) && policy_noise >= 0, "policy_noise must be >= 0");
  require(std::isfinite(position_bias), "position_bias must be finite");
  require(holdout > 0 && holdout < 1, "holdout must lie in (0, 1)");
  model_config().validate();
  evaluator_config().validate();
  norm();
  require(lr > 0 && std::isfinite(lr), "lr must be > 0");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "beta1 and beta2 must lie in [0, 1)");
  require(adam_eps > 0, "adam_eps must be > 0");
  require(alpha >= 0 && std::isfinite(alpha), "alpha must be >= 0");
  require(tau > 0 && std::isfinite(tau), "tau must be > 0");
  require(epochs >= 0 && eval_epochs >= 0, "epochs must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(cascade_every >= 1, "cascade_every must be >= 1");
  precision_mode();
  train_mode();
  decode::parse_strategy(strategy);
  require(temperature > 0 && std::isfinite(temperature), "temperature must be > 0");
  require(diversity_requests >= 0, "diversity_requests must be >= 0");
  require(diversity_samples >= 2, "diversity_samples must be >= 2");
  require(workers >= 1, "workers must be >= 1");
  lambda_list();
}

model::ModelConfig RunConfig::model_config() const {
  model::ModelConfig c;
  c.d = d;
  c.blocks = blocks;
  c.n = n;
  c.m = m;
  c.lambda = train_mode() == TrainMode::kVanilla ? 1 : lambda;
  c.heads = heads;
  c.ffn_mult = ffn_mult;
  c.d_u = d_u;
  c.d_x = d_x;
  return c;
}

cascade::EvaluatorConfig RunConfig::evaluator_config() const {
  cascade::EvaluatorConfig c;
  c.polarity.clear();
  for (auto p : split_list(polarity)) c.polarity.push_back(parse_number<double>("polarity", p));
  c.d = eval_d;
  c.heads = eval_heads;
  c.tower_hidden = tower_hidden;
  c.positional = eval_positional;
  c.m = m;
  c.d_u = d_u;
  c.d_x = d_x;
  return c;
}

data::SyntheticConfig RunConfig::synthetic_config() const {
  data::SyntheticConfig c;
  c.num_requests = requests;
  c.catalog_size = catalog;
  c.n = n;
  c.m = m;
  c.d_u = d_u;
  c.d_x = d_x;
  c.seed = seed;
  c.policy_noise = policy_noise;
  c.position_bias = position_bias;
  return c;
}

ad::AdamOptions RunConfig::adam_options() const { return {lr, beta1, beta2, adam_eps}; }

dag::TransitionNorm RunConfig::norm() const {
  if (transition_norm == "admissible") return dag::TransitionNorm::kAdmissible;
  if (transition_norm == "raw") return dag::TransitionNorm::kRaw;
  throw ConfigError("transition_norm must be admissible or raw, got '" + transition_norm + "'");
}

decode::DecodeOptions RunConfig::decode_options() const {
  decode::DecodeOptions o;
  o.free_endpoint = free_endpoint;
  o.norm = norm();
  return o;
}

Precision RunConfig::precision_mode() const {
  if (precision == "f32") return Precision::kFloat32;
  if (precision == "f64") return Precision::kFloat64;
  throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
}

TrainMode RunConfig::train_mode() const { return parse_mode(mode); }

std::vector<int> RunConfig::lambda_list() const {
  std::vector<int> out;
  for (auto item : split_list(lambdas)) {
    const int l = parse_number<int>("lambdas", item);
    require(l >= 1, "lambdas entries must be >= 1");
    out.push_back(l);
  }
  require(!out.empty(), "lambdas must not be empty");
  return out;
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected key = value");
    config.set(trim(view.substr(0, eq)), view.substr(eq + 1));
  }
}

void apply_overrides(RunConfig& config, std::span<const std::string> args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string_view arg = args[i];
    if (!arg.starts_with("--")) throw ConfigError("unexpected argument '" + std::string(arg) + "'");
    arg.remove_prefix(2);
    if (const auto eq = arg.find('='); eq != std::string_view::npos) {
      config.set(arg.substr(0, eq), arg.substr(eq + 1));
      continue;
    }
    if (i + 1 >= args.size()) throw ConfigError("config key '" + std::string(arg) + "' is missing a value");
    config.set(arg, args[++i]);
  }
}

}  // namespace dagrank
