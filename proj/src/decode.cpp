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
#include "dagrank/decode.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <limits>
#include <string>

#include "dagrank/error.hpp"

namespace dagrank::decode {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double x) {
  return x > 0 ? std::log(x) : kNegInf;
}

void check_inputs(const model::TransitionMatrix& e, const model::EmissionMatrix& p, int m) {
  const auto g = e.probs.rows();
  if (e.probs.cols() != g || p.probs.cols() != g)
    throw ShapeError("decode: transition " + ad::shape_string(g, e.probs.cols()) + " does not match emission " +
                     ad::shape_string(p.probs.rows(), p.probs.cols()));
  if (m < 1 || m > g) throw ConfigError("decode: need 1 <= m <= g, got m=" + std::to_string(m) + ", g=" + std::to_string(g));
  if (p.probs.rows() < m)
    throw ConfigError("decode: " + std::to_string(p.probs.rows()) + " candidates cannot fill " + std::to_string(m) +
                      " distinct slots");
}

/// Index drawn with probability proportional to exp((logw - max) / temperature).
int draw_tempered(const std::vector<double>& logw, double temperature, Rng& rng) {
  double mx = kNegInf;
  for (double x : logw) mx = std::max(mx, x);
  if (mx == kNegInf) throw NumericalError("decode: no admissible choice has positive probability");
  std::vector<double> w(logw.size());
  double total = 0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    w[i] = logw[i] == kNegInf ? 0.0 : std::exp((logw[i] - mx) / temperature);
    total += w[i];
  }
  double u = open_uniform(rng) * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    if (u < w[i]) return static_cast<int>(i);
    u -= w[i];
  }
  for (std::size_t i = w.size(); i-- > 0;)
    if (w[i] > 0.0) return static_cast<int>(i);
  return 0;
}

int draw_item(const model::EmissionMatrix& p, int v, const std::vector<bool>& emitted, double temperature, Rng& rng) {
  std::vector<double> logw(static_cast<std::size_t>(p.probs.rows()));
  for (Eigen::Index c = 0; c < p.probs.rows(); ++c)
    logw[static_cast<std::size_t>(c)] = emitted[static_cast<std::size_t>(c)] ? kNegInf : safe_log(p.probs(c, v));
  return draw_tempered(logw, temperature, rng);
}

int draw_vertex(const model::TransitionMatrix& e, int from, int step, int m, double temperature, bool free_endpoint,
                Rng& rng) {
  const int g = static_cast<int>(e.probs.rows());
  const auto adm = dag::admissible_successors(from, step, g, m, free_endpoint);
  if (adm.empty()) throw ConfigError("decode: no admissible vertex after " + std::to_string(from));
  std::vector<double> logw;
  for (int v = adm.lo; v <= adm.hi; ++v) logw.push_back(safe_log(e.probs(from, v)));
  return adm.lo + draw_tempered(logw, temperature, rng);
}

double joint_log_prob(const DecodeResult& r, const model::TransitionMatrix& e, const model::EmissionMatrix& p, int m,
                      const DecodeOptions& options) {
  double total = safe_log(p.probs(r.slate[0], r.path[0]));
  for (int t = 1; t < m; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    total += dag::transition_log_prob(e, r.path[ti - 1], r.path[ti], t, m, options.norm, options.free_endpoint);
    total += safe_log(p.probs(r.slate[ti], r.path[ti]));
  }
  return total;
}

int best_candidate(const model::EmissionMatrix& p, int v, const std::vector<bool>& emitted) {
  int best = -1;
  double best_p = -1;
  for (Eigen::Index c = 0; c < p.probs.rows(); ++c) {
    if (emitted[static_cast<std::size_t>(c)]) continue;
    if (p.probs(c, v) > best_p) {
      best_p = p.probs(c, v);
      best = static_cast<int>(c);
    }
  }
  return best;
}

template <typename E>
[[noreturn]] void rethrow_for_request(const E& e, std::int64_t request_id) {
  throw E("request " + std::to_string(request_id) + ": " + e.what());
}

}  // namespace

DecodeResult lookahead_decode(const model::TransitionMatrix& e, const model::EmissionMatrix& p, int m,
                              const DecodeOptions& options) {
  check_inputs(e, p, m);
  const int g = static_cast<int>(e.probs.rows());
  std::vector<bool> emitted(static_cast<std::size_t>(p.probs.rows()), false);
  DecodeResult r;
  r.path.push_back(0);
  r.slate.push_back(best_candidate(p, 0, emitted));
  emitted[static_cast<std::size_t>(r.slate[0])] = true;

  for (int i = 1; i < m; ++i) {
    const int prev = r.path.back();
    const auto adm = dag::admissible_successors(prev, i, g, m, options.free_endpoint);
    if (adm.empty()) throw ConfigError("lookahead_decode: no admissible vertex after " + std::to_string(prev));
    int best_v = -1, best_c = -1;
    double best = -1;
    for (int v = adm.lo; v <= adm.hi; ++v) {
      const double tr = e.probs(prev, v);
      for (Eigen::Index c = 0; c < p.probs.rows(); ++c) {
        if (emitted[static_cast<std::size_t>(c)]) continue;
        const double score = tr * p.probs(c, v);
        if (score > best) {
          best = score;
          best_v = v;
          best_c = static_cast<int>(c);
        }
      }
    }
    r.path.push_back(best_v);
    r.slate.push_back(best_c);
    emitted[static_cast<std::size_t>(best_c)] = true;
    ++r.transition_decisions;
  }
  r.joint_log_prob = joint_log_prob(r, e, p, m, options);
  return r;
}

DecodeResult sample_decode(const model::TransitionMatrix& e, const model::EmissionMatrix& p, int m, double temperature,
                           Rng& rng, const DecodeOptions& options) {
  if (!(temperature > 0)) throw ConfigError("sample_decode: temperature must be > 0");
  check_inputs(e, p, m);
  std::vector<bool> emitted(static_cast<std::size_t>(p.probs.rows()), false);
  DecodeResult r;
  r.path.push_back(0);
  r.slate.push_back(draw_item(p, 0, emitted, temperature, rng));
  emitted[static_cast<std::size_t>(r.slate[0])] = true;
  for (int i = 1; i < m; ++i) {
    const int v = draw_vertex(e, r.path.back(), i, m, temperature, options.free_endpoint, rng);
    const int c = draw_item(p, v, emitted, temperature, rng);
    r.path.push_back(v);
    r.slate.push_back(c);
    emitted[static_cast<std::size_t>(c)] = true;
    ++r.transition_decisions;
  }
  r.joint_log_prob = joint_log_prob(r, e, p, m, options);
  return r;
}

DecodeResult vanilla_decode(const model::EmissionMatrix& p, int m) {
  if (m < 1 || m > p.probs.cols()) throw ConfigError("vanilla_decode: m exceeds the emission column count");
  if (p.probs.rows() < m) throw ConfigError("vanilla_decode: not enough candidates for m distinct slots");
  std::vector<bool> emitted(static_cast<std::size_t>(p.probs.rows()), false);
  DecodeResult r;
  r.joint_log_prob = 0;
  for (int j = 0; j < m; ++j) {
    const int c = best_candidate(p, j, emitted);
    emitted[static_cast<std::size_t>(c)] = true;
    r.path.push_back(j);
    r.slate.push_back(c);
    r.joint_log_prob += safe_log(p.probs(c, j));
  }
  return r;
}

dag::Path sample_path(const model::TransitionMatrix& e, int m, Rng& rng, double temperature, bool free_endpoint) {
  if (!(temperature > 0)) throw ConfigError("sample_path: temperature must be > 0");
  const int g = static_cast<int>(e.probs.rows());
  if (m < 1 || m > g) throw ConfigError("sample_path: need 1 <= m <= g");
  dag::Path path{0};
  for (int i = 1; i < m; ++i) path.push_back(draw_vertex(e, path.back(), i, m, temperature, free_endpoint, rng));
  return path;
}

void check_result(const DecodeResult& r, const model::TransitionMatrix& e, const model::EmissionMatrix& p, int m,
                  const DecodeOptions& options) {
  const int g = static_cast<int>(e.probs.rows());
  if (static_cast<int>(r.slate.size()) != m || static_cast<int>(r.path.size()) != m)
    throw Error("decode result: expected " + std::to_string(m) + " items and vertices");
  if (options.free_endpoint) {
    if (r.path.front() != 0) throw Error("decode result: path must start at vertex 0");
    for (std::size_t i = 1; i < r.path.size(); ++i)
      if (r.path[i] <= r.path[i - 1] || r.path[i] >= g) throw Error("decode result: path not strictly increasing");
  } else {
    dag::validate_path(r.path, g, m);
  }
  std::vector<bool> seen(static_cast<std::size_t>(p.probs.rows()), false);
  for (int c : r.slate) {
    if (c < 0 || c >= p.probs.rows()) throw Error("decode result: candidate index out of range");
    if (seen[static_cast<std::size_t>(c)]) throw Error("decode result: repeated candidate " + std::to_string(c));
    seen[static_cast<std::size_t>(c)] = true;
  }
  const double expect = options.free_endpoint ? joint_log_prob(r, e, p, m, options)
                                              : dag::path_log_prob(r.path, r.slate, e, p, options.norm);
  if (std::abs(expect - r.joint_log_prob) > 1e-9 * std::max(1.0, std::abs(expect)))
    throw Error("decode result: joint_log_prob " + std::to_string(r.joint_log_prob) + " disagrees with " +
                std::to_string(expect));
}

Strategy parse_strategy(std::string_view name) {
  if (name == "lookahead") return Strategy::kLookahead;
  if (name == "sample") return Strategy::kSample;
  if (name == "vanilla") return Strategy::kVanilla;
  throw ConfigError("unknown decode strategy: " + std::string(name));
}

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kLookahead: return "lookahead";
    case Strategy::kSample: return "sample";
    case Strategy::kVanilla: return "vanilla";
  }
  return "?";
}

namespace {

template <typename Real>
std::vector<DecodedRequest> decode_chunk(model::Generator<Real>& generator,
                                         std::span<const data::RerankRequest* const> part, std::size_t start,
                                         const BatchOptions& options) {
  std::vector<DecodedRequest> out;
  out.reserve(part.size());
  const int m = generator.config().m;
  ad::Tape<Real> tape;
  const auto pass = [&] {
    try {
      return generator.forward(tape, part);
    } catch (const ShapeError& e) {
      rethrow_for_request(e, part.front()->request_id);
    }
  }();
  for (std::size_t i = 0; i < part.size(); ++i) {
    const auto b = static_cast<Eigen::Index>(i);
    DecodedRequest d;
    d.transition = model::transition_of(pass, b);
    d.emission = model::emission_of(pass, b);
    try {
      switch (options.strategy) {
        case Strategy::kLookahead:
          d.result = lookahead_decode(d.transition, d.emission, m, options.decode);
          break;
        case Strategy::kSample: {
          auto rng = make_stream(options.seed, "pathsample", start + i);
          d.result = sample_decode(d.transition, d.emission, m, options.temperature, rng, options.decode);
          break;
        }
        case Strategy::kVanilla:
          d.result = vanilla_decode(d.emission, m);
          if (generator.config().g() == m)
            d.result.joint_log_prob =
                dag::path_log_prob(d.result.path, d.result.slate, d.transition, d.emission, options.decode.norm);
          break;
      }
    } catch (const ConfigError& e) {
      rethrow_for_request(e, part[i]->request_id);
    } catch (const NumericalError& e) {
      rethrow_for_request(e, part[i]->request_id);
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace

template <typename Real>
std::vector<DecodedRequest> batch_decode_with_matrices(model::Generator<Real>& generator,
                                                       std::span<const data::RerankRequest* const> requests,
                                                       const BatchOptions& options) {
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
  const std::size_t chunks = (requests.size() + chunk - 1) / chunk;
  std::vector<std::vector<DecodedRequest>> parts(chunks);
  auto run = [&](std::size_t c) {
    const std::size_t start = c * chunk;
    parts[c] = decode_chunk(generator, requests.subspan(start, std::min(chunk, requests.size() - start)), start,
                            options);
  };
  const std::size_t workers = std::min(std::max<std::size_t>(1, options.workers), chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run(c);
  } else {
    // Forward passes only read parameters, so chunks decode independently.
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w)
      jobs.push_back(std::async(std::launch::async, [&] {
        for (std::size_t c = next++; c < chunks; c = next++) run(c);
      }));
    for (auto& j : jobs) j.get();
  }
  std::vector<DecodedRequest> out;
  out.reserve(requests.size());
  for (auto& p : parts)
    for (auto& d : p) out.push_back(std::move(d));
  return out;
}

template <typename Real>
std::vector<DecodeResult> batch_decode(model::Generator<Real>& generator,
                                       std::span<const data::RerankRequest* const> requests,
                                       const BatchOptions& options) {
  auto full = batch_decode_with_matrices(generator, requests, options);
  std::vector<DecodeResult> out;
  out.reserve(full.size());
  for (auto& d : full) out.push_back(std::move(d.result));
  return out;
}

template std::vector<DecodeResult> batch_decode(model::Generator<float>&, std::span<const data::RerankRequest* const>,
                                                const BatchOptions&);
template std::vector<DecodeResult> batch_decode(model::Generator<double>&, std::span<const data::RerankRequest* const>,
                                                const BatchOptions&);
template std::vector<DecodedRequest> batch_decode_with_matrices(model::Generator<float>&,
                                                                std::span<const data::RerankRequest* const>,
                                                                const BatchOptions&);
template std::vector<DecodedRequest> batch_decode_with_matrices(model::Generator<double>&,
                                                                std::span<const data::RerankRequest* const>,
                                                                const BatchOptions&);

}  // namespace dagrank::decode
