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
// dagrank command-line entry point.
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dagrank/error.hpp"
#include "dagrank/pipeline.hpp"
#include "dagrank/run_config.hpp"

namespace {

using Command = int (*)(const dagrank::RunConfig&, std::ostream&);

struct Subcommand {
  const char* name;
  const char* help;
  Command run;
};

const Subcommand kCommands[] = {
    {"gen-data", "Generate a synthetic dataset", dagrank::pipeline::cmd_gen_data},
    {"train", "Train the evaluator or a generator (see mode)", dagrank::pipeline::cmd_train},
    {"decode", "Decode slates with a trained generator and report metrics", dagrank::pipeline::cmd_decode},
    {"eval", "Evaluate checkpoints on the held-out split", dagrank::pipeline::cmd_eval},
    {"sweep-lambda", "Train one generator per graph size factor", dagrank::pipeline::cmd_sweep_lambda},
    {"oracle-check", "Run brute-force and gradient checks", dagrank::pipeline::cmd_oracle_check},
};

std::string key_list() {
  std::string out = "Config keys (set in --config FILE or as --key value):\n ";
  int width = 1;
  for (auto key : dagrank::config_keys()) {
    if (width + key.size() + 1 > 78) {
      out += "\n ";
      width = 1;
    }
    out += ' ';
    out += key;
    width += static_cast<int>(key.size()) + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-structured generative reranking"};
  app.require_subcommand(1);
  app.footer(key_list());

  std::string config_file;
  std::vector<std::pair<CLI::App*, Command>> subs;
  for (const auto& c : kCommands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_file, "Flat key = value config file");
    sub->allow_extras();
    subs.emplace_back(sub, c.run);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (auto& [sub, run] : subs) {
    if (!sub->parsed()) continue;
    try {
      dagrank::RunConfig config;
      if (!config_file.empty()) dagrank::apply_config_file(config, config_file);
      dagrank::apply_overrides(config, sub->remaining());
      return run(config, std::cout);
    } catch (const dagrank::NumericalError& e) {
      std::cerr << "numerical error: " << e.what() << '\n';
      return 2;
    } catch (const dagrank::ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return 1;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    }
  }
  return 1;
}
