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
#include "dagrank/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <limits>
#include <set>
#include <string>

#include <json.hpp>

#include "dagrank/checkpoint.hpp"
#include "dagrank/dag_loss.hpp"
#include "dagrank/error.hpp"
#include "dagrank/gradcheck.hpp"
#include "dagrank/optim.hpp"

namespace dagrank::pipeline {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kEvalChunk = 256;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename F>
decltype(auto) with_precision(const RunConfig& config, F&& f) {
  if (config.precision_mode() == Precision::kFloat64) return f.template operator()<double>();
  return f.template operator()<float>();
}

void echo_config(const RunConfig& config) {
  std::filesystem::create_directories(config.out_dir);
  std::ofstream out(std::filesystem::path(config.out_dir) / "config.txt");
  if (!out) throw Error("cannot write config echo into " + config.out_dir);
  out << config.to_text();
}

data::Dataset load_matching(const RunConfig& config) {
  auto ds = data::load_dataset(config.dataset);
  const auto& mf = ds.manifest;
  auto check = [](const char* key, long long have, long long want) {
    if (have != want)
      throw ConfigError("dataset " + std::string(key) + "=" + std::to_string(have) + " but config " + key + "=" +
                        std::to_string(want));
  };
  check("n", mf.n, config.n);
  check("m", mf.m, config.m);
  check("d_u", mf.d_u, config.d_u);
  check("d_x", mf.d_x, config.d_x);
  return ds;
}

std::filesystem::path generator_path(const RunConfig& config) {
  return config.checkpoint.empty() ? std::filesystem::path(config.out_dir) / "generator.ckpt"
                                   : std::filesystem::path(config.checkpoint);
}

std::filesystem::path evaluator_path(const RunConfig& config) {
  return config.evaluator_checkpoint.empty() ? std::filesystem::path(config.out_dir) / "evaluator.ckpt"
                                             : std::filesystem::path(config.evaluator_checkpoint);
}

template <typename Real>
void load_evaluator(const RunConfig& config, cascade::Evaluator<Real>& evaluator) {
  if (config.evaluator_checkpoint.empty())
    throw ConfigError("mode " + config.mode + " requires evaluator_checkpoint");
  if (!std::filesystem::exists(config.evaluator_checkpoint))
    throw ConfigError("evaluator checkpoint not found: " + config.evaluator_checkpoint);
  ad::load_parameters(config.evaluator_checkpoint, evaluator.params());
}

bool uses_consistency(TrainMode mode, bool have_evaluator) {
  switch (mode) {
    case TrainMode::kConOnly:
    case TrainMode::kTotal: return true;
    case TrainMode::kVanilla: return have_evaluator;
    default: return false;
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

}  // namespace

void write_train_log(const std::filesystem::path& path, std::span<const EpochLog> rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "epoch,L_gen,L_con,L_total,grad_norm,wall_clock,L_eval\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << fmt(r.l_gen) << ',' << fmt(r.l_con) << ',' << fmt(r.l_total) << ',' << fmt(r.grad_norm)
        << ',' << fmt(r.wall_clock) << ',' << fmt(r.l_eval) << '\n';
}

std::vector<const data::Record*> select(const data::Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<const data::Record*> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(&dataset.records.at(i));
  return out;
}

std::vector<const data::RerankRequest*> requests_of(std::span<const data::Record* const> records) {
  std::vector<const data::RerankRequest*> out;
  out.reserve(records.size());
  for (const auto* r : records) out.push_back(&r->request);
  return out;
}

std::vector<std::vector<int>> target_indices(std::span<const data::Record* const> records) {
  std::vector<std::vector<int>> out;
  out.reserve(records.size());
  for (const auto* r : records) {
    std::vector<int> t;
    for (auto id : r->outcome.exposed) {
      const int c = data::candidate_index(r->request, id);
      if (c < 0) throw FormatError("request " + std::to_string(r->request.request_id) + ": exposed item " +
                                   std::to_string(id) + " is not a candidate");
      t.push_back(c);
    }
    out.push_back(std::move(t));
  }
  return out;
}

template <typename Real>
std::vector<EpochLog> train_evaluator(const RunConfig& config, const data::Dataset& dataset,
                                      std::span<const std::size_t> train, cascade::Evaluator<Real>& evaluator,
                                      std::ostream* progress) {
  evaluator.params().set_frozen(false);
  ad::Adam<Real> adam(config.adam_options());
  std::vector<EpochLog> log;
  const auto start = Clock::now();
  for (int epoch = 1; epoch <= config.eval_epochs; ++epoch) {
    double loss_sum = 0, norm_sum = 0;
    std::size_t steps = 0;
    const auto batches = data::epoch_batches(train, static_cast<std::size_t>(config.batch_size), config.seed,
                                             static_cast<std::uint64_t>(epoch));
    for (const auto& batch : batches) {
      const auto records = select(dataset, batch);
      const auto requests = requests_of(records);
      const auto inputs = cascade::cascade_inputs<Real>(requests);
      ad::Tape<Real> tape;
      const auto loss = cascade::eval_loss(tape, evaluator, tape.constant(cascade::logged_slate_features<Real>(records)),
                                           inputs.users, cascade::logged_labels<Real>(records));
      tape.backward(loss);
      norm_sum += ad::grad_norm(evaluator.params());
      try {
        adam.step(evaluator.params());
      } catch (const NumericalError& e) {
        throw NumericalError("evaluator epoch " + std::to_string(epoch) + " step " + std::to_string(steps + 1) +
                             ": " + e.what());
      }
      loss_sum += static_cast<double>(loss.item());
      ++steps;
    }
    EpochLog row{epoch, kNaN, kNaN, kNaN, norm_sum / static_cast<double>(std::max<std::size_t>(steps, 1)),
                 seconds_since(start), loss_sum / static_cast<double>(std::max<std::size_t>(steps, 1))};
    log.push_back(row);
    if (progress)
      *progress << "evaluator epoch " << epoch << " L_eval " << row.l_eval << " (" << std::fixed
                << std::setprecision(1) << row.wall_clock << "s)" << std::defaultfloat << std::setprecision(6) << '\n';
  }
  return log;
}

template <typename Real>
std::vector<EpochLog> train_generator(const RunConfig& config, const data::Dataset& dataset,
                                      std::span<const std::size_t> train, TrainMode mode,
                                      model::Generator<Real>& generator, cascade::Evaluator<Real>* evaluator,
                                      std::ostream* progress) {
  if (mode == TrainMode::kEvaluator) throw ConfigError("train_generator: mode evaluator trains no generator");
  if ((mode == TrainMode::kConOnly || mode == TrainMode::kTotal) && evaluator == nullptr)
    throw ConfigError("mode " + std::string(mode_name(mode)) + " requires an evaluator");
  const bool con = uses_consistency(mode, evaluator != nullptr);
  const bool gen_in_objective = mode != TrainMode::kConOnly;
  if (evaluator) evaluator->params().set_frozen(true);

  const int m = generator.config().m;
  const auto norm = config.norm();
  ad::Adam<Real> adam(config.adam_options());
  std::vector<EpochLog> log;
  const auto start = Clock::now();
  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    auto path_rng = make_stream(config.seed, "pathsample-train", static_cast<std::uint64_t>(epoch));
    auto gumbel_rng = make_stream(config.seed, "gumbel", static_cast<std::uint64_t>(epoch));
    double gen_sum = 0, con_sum = 0, total_sum = 0, norm_sum = 0;
    std::size_t steps = 0, con_steps = 0;
    const auto batches = data::epoch_batches(train, static_cast<std::size_t>(config.batch_size), config.seed,
                                             static_cast<std::uint64_t>(epoch));
    for (const auto& batch : batches) {
      ++step;
      const auto records = select(dataset, batch);
      const auto requests = requests_of(records);
      const bool con_now = con && (step - 1) % config.cascade_every == 0;
      if (!gen_in_objective && !con_now) continue;
      try {
        ad::Tape<Real> tape;
        const auto pass = generator.forward(tape, requests);
        const auto l_gen = dag::gen_loss(tape, pass, target_indices(records), norm);
        std::optional<ad::Value<Real>> objective;
        if (con_now) {
          const auto inputs = cascade::cascade_inputs<Real>(requests);
          const auto draw = cascade::draw_consistency(pass, m, path_rng, gumbel_rng);
          const auto l_con = cascade::consistency_loss(tape, *evaluator, pass, inputs, draw, config.tau);
          con_sum += static_cast<double>(l_con.item());
          ++con_steps;
          objective = gen_in_objective ? cascade::total_loss(tape, l_con, l_gen, config.alpha) : l_con;
        } else {
          objective = mode == TrainMode::kGenOnly || !con ? l_gen : tape.scale(l_gen, static_cast<Real>(config.alpha));
        }
        const double value = static_cast<double>(objective->item());
        if (!std::isfinite(value)) throw NumericalError("non-finite objective");
        tape.backward(*objective);
        norm_sum += ad::grad_norm(generator.params());
        adam.step(generator.params());
        gen_sum += static_cast<double>(l_gen.item());
        total_sum += value;
        ++steps;
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " + e.what());
      }
    }
    const double denom = static_cast<double>(std::max<std::size_t>(steps, 1));
    EpochLog row{epoch,
                 gen_sum / denom,
                 con_steps ? con_sum / static_cast<double>(con_steps) : kNaN,
                 total_sum / denom,
                 norm_sum / denom,
                 seconds_since(start),
                 kNaN};
    log.push_back(row);
    if (progress)
      *progress << mode_name(mode) << " epoch " << epoch << " L_gen " << row.l_gen << " L_con " << row.l_con
                << " L_total " << row.l_total << " (" << std::fixed << std::setprecision(1) << row.wall_clock << "s)"
                << std::defaultfloat << std::setprecision(6) << '\n';
  }
  return log;
}

double random_recall(int m, int n) { return static_cast<double>(m) / static_cast<double>(n); }

template <typename Real>
DecodeReport evaluate_generator(const RunConfig& config, model::Generator<Real>& generator,
                                const data::Dataset& dataset, std::span<const std::size_t> indices,
                                decode::Strategy strategy) {
  const auto records = select(dataset, indices);
  const auto requests = requests_of(records);
  const int m = generator.config().m;
  decode::BatchOptions options;
  options.strategy = strategy;
  options.temperature = config.temperature;
  options.seed = config.seed;
  options.chunk = kEvalChunk;
  options.workers = static_cast<std::size_t>(config.workers);
  options.decode = config.decode_options();

  DecodeReport report;
  const auto start = Clock::now();
  auto decoded = decode::batch_decode_with_matrices(generator, requests, options);
  report.decode_seconds = seconds_since(start);

  double recall_m = 0, recall_m4 = 0;
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    const auto& r = *records[i];
    const auto& d = decoded[i];
    std::vector<std::int64_t> ranked;
    for (int c : metrics::rank_candidates(d.result.slate, d.result.path, d.emission))
      ranked.push_back(r.request.candidates[static_cast<std::size_t>(c)].id);
    recall_m += metrics::recall_at_k(ranked, r.outcome.exposed, m);
    recall_m4 += metrics::recall_at_k(ranked, r.outcome.exposed, m + 4);
    report.slates.emplace_back(ranked.begin(), ranked.begin() + m);
    report.results.push_back(d.result);
  }
  if (!decoded.empty()) {
    recall_m /= static_cast<double>(decoded.size());
    recall_m4 /= static_cast<double>(decoded.size());
  }
  report.recall_m = recall_m;
  report.recall_m4 = recall_m4;
  if (report.slates.size() >= 2) {
    report.diversity = metrics::diversity_score(report.slates);
    report.repetition = metrics::repetition_rate(report.slates);
  }
  if (!report.slates.empty()) {
    report.coverage = metrics::item_coverage(report.slates, dataset.manifest.catalog);
    if (m >= 2) report.distinct2 = metrics::distinct2(report.slates, config.distinct2_per_list);
  }

  const auto probe = std::min<std::size_t>(static_cast<std::size_t>(config.diversity_requests), requests.size());
  if (probe > 0) {
    std::vector<metrics::SlateSet> samples(probe);
    const auto head = std::span(requests).first(probe);
    for (int s = 0; s < config.diversity_samples; ++s) {
      auto opts = options;
      opts.strategy = decode::Strategy::kSample;
      opts.seed = stream_seed(config.seed, "diversity", static_cast<std::uint64_t>(s));
      const auto drawn = decode::batch_decode(generator, head, opts);
      for (std::size_t i = 0; i < probe; ++i) {
        metrics::Slate ids;
        for (int c : drawn[i].slate) ids.push_back(head[i]->candidates[static_cast<std::size_t>(c)].id);
        samples[i].push_back(std::move(ids));
      }
    }
    for (const auto& set : samples) {
      report.resample_diversity += metrics::diversity_score(set);
      report.resample_repetition += metrics::repetition_rate(set);
    }
    report.resample_diversity /= static_cast<double>(probe);
    report.resample_repetition /= static_cast<double>(probe);
  }
  return report;
}

std::vector<metrics::MetricRow> report_rows(const DecodeReport& report, int m, const std::string& name) {
  return {
      {"recall@" + std::to_string(m), name, report.recall_m},
      {"recall@" + std::to_string(m + 4), name, report.recall_m4},
      {"diversity", name, report.diversity},
      {"repetition", name, report.repetition},
      {"coverage", name, report.coverage},
      {"distinct2", name, report.distinct2},
      {"resample_diversity", name, report.resample_diversity},
      {"resample_repetition", name, report.resample_repetition},
      {"decode_seconds", name, report.decode_seconds},
  };
}

template <typename Real>
double evaluator_auc(cascade::Evaluator<Real>& evaluator, std::span<const data::Record* const> records, int task) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t at = 0; at < records.size(); at += kEvalChunk) {
    const auto part = records.subspan(at, std::min(kEvalChunk, records.size() - at));
    const auto requests = requests_of(part);
    const auto inputs = cascade::cascade_inputs<Real>(requests);
    ad::Tape<Real> tape;
    const auto s = evaluator.scores(tape, tape.constant(cascade::logged_slate_features<Real>(part)), inputs.users);
    const auto y = cascade::logged_labels<Real>(part);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      scores.push_back(static_cast<double>(s.data()(r, task)));
      labels.push_back(static_cast<int>(y(r, task)));
    }
  }
  return metrics::auc(scores, labels);
}

template <typename Real>
double mean_utility(cascade::Evaluator<Real>& evaluator, std::span<const data::Record* const> records,
                    const std::vector<std::vector<int>>& slates) {
  if (records.empty()) return kNaN;
  double total = 0;
  for (std::size_t at = 0; at < records.size(); at += kEvalChunk) {
    const auto n = std::min(kEvalChunk, records.size() - at);
    const auto requests = requests_of(records.subspan(at, n));
    const std::vector<std::vector<int>> part(slates.begin() + static_cast<std::ptrdiff_t>(at),
                                             slates.begin() + static_cast<std::ptrdiff_t>(at + n));
    for (double u : cascade::slate_utility(evaluator, requests, part)) total += u;
  }
  return total / static_cast<double>(records.size());
}

int cmd_gen_data(const RunConfig& config, std::ostream& out) {
  config.validate();
  echo_config(config);
  const auto ds = data::generate_synthetic(config.synthetic_config());
  const std::filesystem::path path(config.dataset);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  data::write_dataset(ds, path);
  const auto& mf = ds.manifest;
  out << "wrote " << path.string() << ": version " << mf.version << ", requests " << mf.requests << ", catalog "
      << mf.catalog << ", n " << mf.n << ", m " << mf.m << ", k " << mf.k << ", d_u " << mf.d_u << ", d_x " << mf.d_x
      << ", seed " << mf.seed << '\n';
  return 0;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  echo_config(config);
  const auto mode = config.train_mode();
  const auto ds = load_matching(config);
  const auto split = data::holdout_split(ds.records.size(), config.holdout);
  const std::filesystem::path log_path =
      std::filesystem::path(config.out_dir) / ("train_" + std::string(mode_name(mode)) + ".csv");
  return with_precision(config, [&]<typename Real>() {
    cascade::Evaluator<Real> evaluator(config.evaluator_config(), config.seed);
    if (mode == TrainMode::kEvaluator) {
      const auto log = train_evaluator(config, ds, split.train, evaluator, &out);
      write_train_log(log_path, log);
      const auto path = evaluator_path(config);
      ad::save_parameters(path, evaluator.params());
      const auto held = select(ds, split.heldout);
      out << "held-out AUC click " << evaluator_auc(evaluator, held, 1) << ", next_slide "
          << evaluator_auc(evaluator, held, 2) << '\n'
          << "wrote " << path.string() << '\n';
      return 0;
    }
    const bool need = mode == TrainMode::kConOnly || mode == TrainMode::kTotal;
    cascade::Evaluator<Real>* judge = nullptr;
    if (need || !config.evaluator_checkpoint.empty()) {
      load_evaluator(config, evaluator);
      judge = &evaluator;
    }
    model::Generator<Real> generator(config.model_config(), config.seed);
    const auto log = train_generator(config, ds, split.train, mode, generator, judge, &out);
    write_train_log(log_path, log);
    const auto path = generator_path(config);
    ad::save_parameters(path, generator.params());
    out << "wrote " << path.string() << " and " << log_path.string() << '\n';
    return 0;
  });
}

int cmd_decode(const RunConfig& config, std::ostream& out) {
  config.validate();
  echo_config(config);
  const auto ds = load_matching(config);
  const auto split = data::holdout_split(ds.records.size(), config.holdout);
  const auto strategy = decode::parse_strategy(config.strategy);
  return with_precision(config, [&]<typename Real>() {
    model::Generator<Real> generator(config.model_config(), config.seed);
    const auto ckpt = generator_path(config);
    if (!std::filesystem::exists(ckpt)) throw ConfigError("generator checkpoint not found: " + ckpt.string());
    ad::load_parameters(ckpt, generator.params());

    std::vector<std::size_t> all(ds.records.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto records = select(ds, all);
    const auto requests = requests_of(records);
    decode::BatchOptions options;
    options.strategy = strategy;
    options.temperature = config.temperature;
    options.seed = config.seed;
    options.chunk = kEvalChunk;
    options.workers = static_cast<std::size_t>(config.workers);
    options.decode = config.decode_options();
    const auto results = decode::batch_decode(generator, requests, options);

    const auto slates_path = std::filesystem::path(config.out_dir) / "slates.jsonl";
    std::ofstream slates(slates_path);
    if (!slates) throw Error("cannot open " + slates_path.string());
    for (std::size_t i = 0; i < results.size(); ++i) {
      nlohmann::ordered_json line;
      line["request_id"] = requests[i]->request_id;
      auto& items = line["slate"] = nlohmann::json::array();
      for (int c : results[i].slate) items.push_back(requests[i]->candidates[static_cast<std::size_t>(c)].id);
      auto& path = line["path"] = nlohmann::json::array();
      for (int v : results[i].path) path.push_back(v + 1);
      line["joint_log_prob"] = results[i].joint_log_prob;
      slates << line.dump() << '\n';
    }

    const auto report = evaluate_generator(config, generator, ds, split.heldout, strategy);
    const auto rows = report_rows(report, config.m, config.strategy);
    const auto metrics_path = std::filesystem::path(config.out_dir) / "metrics.csv";
    metrics::write_metrics_csv(metrics_path, rows);
    for (const auto& r : rows) out << r.metric << ' ' << r.value << '\n';
    out << "wrote " << slates_path.string() << " and " << metrics_path.string() << '\n';
    return 0;
  });
}

int cmd_eval(const RunConfig& config, std::ostream& out) {
  config.validate();
  echo_config(config);
  const auto ds = load_matching(config);
  const auto split = data::holdout_split(ds.records.size(), config.holdout);
  const auto held = select(ds, split.heldout);
  return with_precision(config, [&]<typename Real>() {
    std::vector<metrics::MetricRow> rows;
    std::vector<std::vector<int>> slates;
    const auto ckpt = generator_path(config);
    const bool have_generator = std::filesystem::exists(ckpt);
    if (have_generator) {
      model::Generator<Real> generator(config.model_config(), config.seed);
      ad::load_parameters(ckpt, generator.params());
      const auto report = evaluate_generator(config, generator, ds, split.heldout, decode::parse_strategy(config.strategy));
      rows = report_rows(report, config.m, config.strategy);
      for (const auto& r : report.results) slates.push_back(r.slate);
    }
    if (!config.evaluator_checkpoint.empty()) {
      cascade::Evaluator<Real> evaluator(config.evaluator_config(), config.seed);
      load_evaluator(config, evaluator);
      for (int task = 1; task < data::kTaskCount; ++task)
        rows.push_back({"auc_" + std::string(data::kTaskNames[static_cast<std::size_t>(task)]), "evaluator",
                        evaluator_auc(evaluator, held, task)});
      rows.push_back({"utility", "logged", mean_utility(evaluator, held, target_indices(held))});
      if (have_generator) rows.push_back({"utility", config.strategy, mean_utility(evaluator, held, slates)});
    }
    if (rows.empty()) throw ConfigError("eval needs a generator checkpoint or evaluator_checkpoint");
    const auto path = std::filesystem::path(config.out_dir) / "eval.csv";
    metrics::write_metrics_csv(path, rows);
    for (const auto& r : rows) out << r.metric << ' ' << r.name << ' ' << r.value << '\n';
    return 0;
  });
}

int cmd_sweep_lambda(const RunConfig& config, std::ostream& out) {
  config.validate();
  echo_config(config);
  std::vector<int> lambdas;
  for (int l : config.lambda_list()) {
    if (std::find(lambdas.begin(), lambdas.end(), l) != lambdas.end()) {
      out << "warning: duplicate lambda " << l << " ignored\n";
      continue;
    }
    lambdas.push_back(l);
  }
  const auto ds = load_matching(config);
  const auto split = data::holdout_split(ds.records.size(), config.holdout);
  return with_precision(config, [&]<typename Real>() {
    cascade::Evaluator<Real> evaluator(config.evaluator_config(), config.seed);
    if (config.evaluator_checkpoint.empty()) {
      write_train_log(std::filesystem::path(config.out_dir) / "train_evaluator.csv",
                      train_evaluator(config, ds, split.train, evaluator, &out));
    } else {
      load_evaluator(config, evaluator);
    }
    const auto csv_path = std::filesystem::path(config.out_dir) / "sweep.csv";
    std::ofstream csv(csv_path);
    if (!csv) throw Error("cannot open " + csv_path.string());
    csv << "lambda,recall_at_m,wall_clock\n" << std::setprecision(10);
    for (int l : lambdas) {
      auto run = config;
      run.lambda = l;
      run.mode = "generator-total";
      model::Generator<Real> generator(run.model_config(), run.seed);
      const auto log = train_generator(run, ds, split.train, TrainMode::kTotal, generator, &evaluator, &out);
      const double wall = log.empty() ? 0.0 : log.back().wall_clock;
      const auto report = evaluate_generator(run, generator, ds, split.heldout, decode::Strategy::kLookahead);
      write_train_log(std::filesystem::path(config.out_dir) / ("train_lambda" + std::to_string(l) + ".csv"), log);
      csv << l << ',' << report.recall_m << ',' << wall << '\n';
      out << "lambda " << l << " recall@" << config.m << ' ' << report.recall_m << " wall_clock " << wall << "s\n";
    }
    out << "wrote " << csv_path.string() << '\n';
    return 0;
  });
}

namespace {

model::TransitionMatrix random_transition(int g, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.5);
  model::TransitionMatrix e{Eigen::MatrixXd::Zero(g, g)};
  for (int i = 0; i + 1 < g; ++i) {
    double total = 0;
    for (int j = i + 1; j < g; ++j) total += e.probs(i, j) = std::exp(normal(rng));
    e.probs.row(i) /= total;
  }
  return e;
}

model::EmissionMatrix random_emission(int n, int g, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.5);
  model::EmissionMatrix p{Eigen::MatrixXd(n, g)};
  for (int j = 0; j < g; ++j) {
    for (int i = 0; i < n; ++i) p.probs(i, j) = std::exp(normal(rng));
    p.probs.col(j) /= p.probs.col(j).sum();
  }
  return p;
}

double logsumexp(const std::vector<double>& xs) {
  const double top = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(top)) return top;
  double s = 0;
  for (double x : xs) s += std::exp(x - top);
  return top + std::log(s);
}

data::RerankRequest tiny_request(int n, int d_u, int d_x, Rng& rng, std::int64_t id) {
  std::normal_distribution<double> normal;
  data::RerankRequest r;
  r.request_id = id;
  for (int j = 0; j < d_u; ++j) r.user.push_back(normal(rng));
  for (int i = 0; i < n; ++i) {
    data::Candidate c;
    c.id = id * 100 + i;
    for (int j = 0; j < d_x; ++j) c.features.push_back(normal(rng));
    r.candidates.push_back(std::move(c));
  }
  return r;
}

}  // namespace

int cmd_oracle_check(const RunConfig& config, std::ostream& out) {
  config.validate();
  auto rng = make_stream(config.seed, "oracle");
  bool all = true;
  auto report = [&](bool ok, const std::string& name, const std::string& detail) {
    all = all && ok;
    out << (ok ? "[PASS] " : "[FAIL] ") << name << ": " << detail << '\n';
  };

  {
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const int g = std::uniform_int_distribution<int>(4, 10)(rng);
      const int m = std::uniform_int_distribution<int>(2, std::min(5, g))(rng);
      const int n = std::uniform_int_distribution<int>(2, 6)(rng);
      const auto e = random_transition(g, rng);
      const auto p = random_emission(n, g, rng);
      std::vector<int> y(static_cast<std::size_t>(m));
      for (auto& c : y) c = std::uniform_int_distribution<int>(0, n - 1)(rng);
      std::vector<double> terms;
      for (const auto& path : dag::enumerate_paths(g, m)) terms.push_back(dag::path_log_prob(path, y, e, p));
      const double brute = logsumexp(terms);
      const double dp = dag::dag_log_marginal(y, e, p);
      worst = std::max(worst, std::abs(dp - brute) / std::max(std::abs(brute), 1e-300));
    }
    report(worst <= 1e-9, "marginal-vs-enumeration", "max relative error " + fmt(worst));
  }

  {
    const int n = 3, g = 6;
    const auto e = random_transition(g, rng);
    const auto p = random_emission(n, g, rng);
    double total = 0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < n; ++c) total += std::exp(dag::dag_log_marginal(std::vector<int>{a, b, c}, e, p));
    report(std::abs(total - 1.0) <= 1e-6, "slate-distribution-sum", "sum " + fmt(total));
  }

  {
    bool ok = true;
    for (int trial = 0; trial < 100 && ok; ++trial) {
      const int g = std::uniform_int_distribution<int>(3, 10)(rng);
      const int m = std::uniform_int_distribution<int>(2, std::min(5, g))(rng);
      const int n = std::uniform_int_distribution<int>(m, 8)(rng);
      const auto e = random_transition(g, rng);
      const auto p = random_emission(n, g, rng);
      const auto r = decode::lookahead_decode(e, p, m);
      std::vector<bool> used(static_cast<std::size_t>(n), false);
      int best_c = 0;
      for (int c = 1; c < n; ++c)
        if (p.probs(c, 0) > p.probs(best_c, 0)) best_c = c;
      ok = r.path[0] == 0 && r.slate[0] == best_c;
      used[static_cast<std::size_t>(best_c)] = true;
      for (int step = 1; step < m && ok; ++step) {
        const int u = r.path[static_cast<std::size_t>(step - 1)];
        const int hi = step == m - 1 ? g - 1 : g - 1 - (m - 1 - step);
        const int lo = step == m - 1 ? g - 1 : u + 1;
        double best = -1;
        int bv = -1, bc = -1;
        for (int v = lo; v <= hi; ++v)
          for (int c = 0; c < n; ++c) {
            if (used[static_cast<std::size_t>(c)]) continue;
            const double score = e.probs(u, v) * p.probs(c, v);
            if (score > best) {
              best = score;
              bv = v;
              bc = c;
            }
          }
        ok = r.path[static_cast<std::size_t>(step)] == bv && r.slate[static_cast<std::size_t>(step)] == bc;
        used[static_cast<std::size_t>(bc)] = true;
      }
    }
    report(ok, "lookahead-per-step-argmax", ok ? "100 instances" : "mismatch");
  }

  {
    model::ModelConfig mc;
    mc.d = 8;
    mc.blocks = 1;
    mc.n = 3;
    mc.m = 2;
    mc.lambda = 2;
    mc.heads = 2;
    mc.ffn_mult = 2;
    mc.d_u = 2;
    mc.d_x = 3;
    cascade::EvaluatorConfig ec;
    ec.d = 8;
    ec.heads = 2;
    ec.tower_hidden = 4;
    ec.m = 2;
    ec.d_u = 2;
    ec.d_x = 3;
    model::Generator<double> generator(mc, config.seed);
    cascade::Evaluator<double> evaluator(ec, config.seed);
    std::vector<data::RerankRequest> reqs = {tiny_request(3, 2, 3, rng, 1), tiny_request(3, 2, 3, rng, 2)};
    const std::vector<const data::RerankRequest*> ptrs = {&reqs[0], &reqs[1]};
    const std::vector<std::vector<int>> targets = {{0, 2}, {1, 0}};

    // Numeric references run in long double on mirrors of the same layout.
    model::Generator<long double> generator_ref(mc, config.seed);
    cascade::Evaluator<long double> evaluator_ref(ec, config.seed);
    const auto gen = ad::gradient_check(
        generator.params(), [&](ad::Tape<double>& t) { return dag::gen_loss(t, generator.forward(t, ptrs), targets); },
        generator_ref.params(),
        [&](ad::Tape<long double>& t) { return dag::gen_loss(t, generator_ref.forward(t, ptrs), targets); });
    report(gen.max_rel_error <= 1e-4, "gradcheck-L_gen",
           "max relative error " + fmt(gen.max_rel_error) + " at " + gen.worst_parameter);

    ad::Matrix<double> slates(4, 3), labels(4, 3);
    std::normal_distribution<double> normal;
    for (Eigen::Index i = 0; i < slates.size(); ++i) slates.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < labels.size(); ++i) labels.data()[i] = std::bernoulli_distribution(0.5)(rng);
    const auto inputs = cascade::cascade_inputs<double>(ptrs);
    const auto inputs_ref = cascade::cascade_inputs<long double>(ptrs);
    const ad::Matrix<long double> slates_ref = slates.cast<long double>(), labels_ref = labels.cast<long double>();
    const auto ev = ad::gradient_check(
        evaluator.params(),
        [&](ad::Tape<double>& t) {
          return cascade::eval_loss(t, evaluator, t.constant(slates), inputs.users, labels);
        },
        evaluator_ref.params(),
        [&](ad::Tape<long double>& t) {
          return cascade::eval_loss(t, evaluator_ref, t.constant(slates_ref), inputs_ref.users, labels_ref);
        });
    report(ev.max_rel_error <= 1e-4, "gradcheck-L_eval",
           "max relative error " + fmt(ev.max_rel_error) + " at " + ev.worst_parameter);

    evaluator.params().set_frozen(true);
    cascade::ConsistencyDraw draw;
    {
      ad::Tape<double> t;
      auto path_rng = make_stream(config.seed, "pathsample");
      auto gumbel_rng = make_stream(config.seed, "gumbel");
      draw = cascade::draw_consistency(generator.forward(t, ptrs), mc.m, path_rng, gumbel_rng);
    }
    ad::copy_values(evaluator.params(), evaluator_ref.params());
    const auto con = ad::gradient_check(
        generator.params(),
        [&](ad::Tape<double>& t) {
          return cascade::consistency_loss(t, evaluator, generator.forward(t, ptrs), inputs, draw, config.tau);
        },
        generator_ref.params(),
        [&](ad::Tape<long double>& t) {
          return cascade::consistency_loss(t, evaluator_ref, generator_ref.forward(t, ptrs), inputs_ref, draw,
                                           config.tau);
        });
    report(con.max_rel_error <= 1e-4, "gradcheck-L_con",
           "max relative error " + fmt(con.max_rel_error) + " at " + con.worst_parameter);
  }
  return all ? 0 : 2;
}

#define DAGRANK_INSTANTIATE(Real)                                                                                      \
  template std::vector<EpochLog> train_evaluator(const RunConfig&, const data::Dataset&, std::span<const std::size_t>, \
                                                 cascade::Evaluator<Real>&, std::ostream*);                            \
  template std::vector<EpochLog> train_generator(const RunConfig&, const data::Dataset&, std::span<const std::size_t>, \
                                                 TrainMode, model::Generator<Real>&, cascade::Evaluator<Real>*,        \
                                                 std::ostream*);                                                       \
  template DecodeReport evaluate_generator(const RunConfig&, model::Generator<Real>&, const data::Dataset&,           \
                                           std::span<const std::size_t>, decode::Strategy);                            \
  template double evaluator_auc(cascade::Evaluator<Real>&, std::span<const data::Record* const>, int);                \
  template double mean_utility(cascade::Evaluator<Real>&, std::span<const data::Record* const>,                       \
                               const std::vector<std::vector<int>>&);

DAGRANK_INSTANTIATE(float)
DAGRANK_INSTANTIATE(double)

#undef DAGRANK_INSTANTIATE

}  // namespace dagrank::pipeline
