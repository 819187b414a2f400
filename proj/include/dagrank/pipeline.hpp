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
// Training loops, evaluation reports and the command implementations.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "dagrank/cascade.hpp"
#include "dagrank/data.hpp"
#include "dagrank/decode.hpp"
#include "dagrank/metrics.hpp"
#include "dagrank/model.hpp"
#include "dagrank/run_config.hpp"

namespace dagrank::pipeline {

/// One row of a training log. Columns that do not apply to a mode are NaN.
struct EpochLog {
  int epoch = 0;
  double l_gen = 0;
  double l_con = 0;
  double l_total = 0;
  double grad_norm = 0;
  double wall_clock = 0;
  double l_eval = 0;
};

void write_train_log(const std::filesystem::path& path, std::span<const EpochLog> rows);

std::vector<const data::Record*> select(const data::Dataset& dataset, std::span<const std::size_t> indices);
std::vector<const data::RerankRequest*> requests_of(std::span<const data::Record* const> records);
/// Logged exposed lists as candidate indices.
std::vector<std::vector<int>> target_indices(std::span<const data::Record* const> records);

template <typename Real>
std::vector<EpochLog> train_evaluator(const RunConfig& config, const data::Dataset& dataset,
                                      std::span<const std::size_t> train, cascade::Evaluator<Real>& evaluator,
                                      std::ostream* progress = nullptr);

/// `evaluator` may be null only for generator-gen-only, and for vanilla,
/// which then trains on the generative loss alone. The evaluator is frozen
/// on entry.
template <typename Real>
std::vector<EpochLog> train_generator(const RunConfig& config, const data::Dataset& dataset,
                                      std::span<const std::size_t> train, TrainMode mode,
                                      model::Generator<Real>& generator, cascade::Evaluator<Real>* evaluator,
                                      std::ostream* progress = nullptr);

struct DecodeReport {
  std::vector<decode::DecodeResult> results;
  metrics::SlateSet slates;  // item ids
  double recall_m = 0;
  double recall_m4 = 0;
  double diversity = 0;
  double repetition = 0;
  double coverage = 0;
  double distinct2 = 0;
  // Diversity among repeated sampled slates for the same request, averaged
  // over requests.
  double resample_diversity = 0;
  double resample_repetition = 0;
  double decode_seconds = 0;
};

template <typename Real>
DecodeReport evaluate_generator(const RunConfig& config, model::Generator<Real>& generator,
                                const data::Dataset& dataset, std::span<const std::size_t> indices,
                                decode::Strategy strategy);

std::vector<metrics::MetricRow> report_rows(const DecodeReport& report, int m, const std::string& name);

/// Held-out AUC of one evaluator task against the logged labels.
template <typename Real>
double evaluator_auc(cascade::Evaluator<Real>& evaluator, std::span<const data::Record* const> records, int task);

template <typename Real>
double mean_utility(cascade::Evaluator<Real>& evaluator, std::span<const data::Record* const> records,
                    const std::vector<std::vector<int>>& slates);

/// Mean Recall@m of uniformly random slates: m / n.
double random_recall(int m, int n);

// Commands. Each validates the config, echoes it into out_dir and returns
// the process exit code.
int cmd_gen_data(const RunConfig& config, std::ostream& out);
int cmd_train(const RunConfig& config, std::ostream& out);
int cmd_decode(const RunConfig& config, std::ostream& out);
int cmd_eval(const RunConfig& config, std::ostream& out);
int cmd_sweep_lambda(const RunConfig& config, std::ostream& out);
int cmd_oracle_check(const RunConfig& config, std::ostream& out);

}  // namespace dagrank::pipeline
