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
#include "dagrank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <unordered_set>
#include <utility>

#include "dagrank/error.hpp"

namespace dagrank::metrics {

namespace {

Slate as_set(const Slate& s) {
  Slate out = s;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::size_t intersection_size(const Slate& a, const Slate& b) {
  std::size_t count = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++count;
      ++i;
      ++j;
    }
  }
  return count;
}

void require_pairs(const SlateSet& slates, const char* what) {
  if (slates.size() < 2) throw Error(std::string(what) + ": at least two slates are required");
  for (const auto& s : slates)
    if (s.empty()) throw Error(std::string(what) + ": empty slate");
}

}  // namespace

double recall_at_k(std::span<const std::int64_t> ranked, std::span<const std::int64_t> exposed, int k) {
  if (k < 1) throw Error("recall_at_k: K must be >= 1, got " + std::to_string(k));
  if (exposed.empty()) throw Error("recall_at_k: exposed set is empty");
  const std::unordered_set<std::int64_t> target(exposed.begin(), exposed.end());
  const auto top = std::min(ranked.size(), static_cast<std::size_t>(k));
  std::unordered_set<std::int64_t> hits;
  for (std::size_t i = 0; i < top; ++i)
    if (target.contains(ranked[i])) hits.insert(ranked[i]);
  return static_cast<double>(hits.size()) / static_cast<double>(target.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0;
  double positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t r = i; r < j; ++r) {
      const int y = labels[order[r]];
      if (y != 0 && y != 1) throw Error("auc: labels must be 0 or 1");
      if (y == 1) {
        positive_rank_sum += mid_rank;
        positives += 1;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(scores.size()) - positives;
  if (positives == 0 || negatives == 0) throw Error("auc: needs at least one positive and one negative label");
  return (positive_rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives);
}

double ndcg(std::span<const int> ranked_labels, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > ranked_labels.size())
    throw Error("ndcg: K=" + std::to_string(k) + " outside [1, " + std::to_string(ranked_labels.size()) + "]");
  auto dcg = [k](std::span<const int> labels) {
    double total = 0;
    for (int i = 0; i < k; ++i) total += (std::exp2(labels[static_cast<std::size_t>(i)]) - 1.0) / std::log2(i + 2.0);
    return total;
  };
  std::vector<int> ideal(ranked_labels.begin(), ranked_labels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double best = dcg(ideal);
  return best == 0 ? 0.0 : dcg(ranked_labels) / best;
}

double jaccard(const Slate& a, const Slate& b) {
  const auto sa = as_set(a);
  const auto sb = as_set(b);
  const auto inter = intersection_size(sa, sb);
  const auto uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double mean_jaccard(const SlateSet& slates) {
  require_pairs(slates, "mean_jaccard");
  std::vector<Slate> sets;
  sets.reserve(slates.size());
  for (const auto& s : slates) sets.push_back(as_set(s));
  double total = 0;
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      const auto inter = intersection_size(sets[i], sets[j]);
      total += static_cast<double>(inter) / static_cast<double>(sets[i].size() + sets[j].size() - inter);
    }
  const double pairs = static_cast<double>(sets.size()) * static_cast<double>(sets.size() - 1) / 2.0;
  return total / pairs;
}

double diversity_score(const SlateSet& slates) { return 1.0 - mean_jaccard(slates); }

double repetition_rate(const SlateSet& slates) {
  require_pairs(slates, "repetition_rate");
  const auto m = slates.front().size();
  std::vector<Slate> sets;
  for (const auto& s : slates) {
    if (s.size() != m) throw Error("repetition_rate: slates differ in length");
    sets.push_back(as_set(s));
  }
  double total = 0;
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (std::size_t j = i + 1; j < sets.size(); ++j)
      total += static_cast<double>(intersection_size(sets[i], sets[j])) / static_cast<double>(m);
  const double pairs = static_cast<double>(sets.size()) * static_cast<double>(sets.size() - 1) / 2.0;
  return total / pairs;
}

double item_coverage(const SlateSet& slates, std::int64_t catalog_size) {
  if (catalog_size < 1) throw Error("item_coverage: catalog size must be >= 1");
  std::unordered_set<std::int64_t> seen;
  for (const auto& s : slates) seen.insert(s.begin(), s.end());
  if (static_cast<std::int64_t>(seen.size()) > catalog_size)
    throw Error("item_coverage: " + std::to_string(seen.size()) + " distinct items exceed catalog size " +
                std::to_string(catalog_size));
  return static_cast<double>(seen.size()) / static_cast<double>(catalog_size);
}

double distinct2(const SlateSet& slates, bool per_list) {
  if (slates.empty()) throw Error("distinct2: empty slate set");
  using Bigram = std::pair<std::int64_t, std::int64_t>;
  std::set<Bigram> pooled;
  std::size_t total = 0;
  double ratio_sum = 0;
  for (const auto& s : slates) {
    if (s.size() < 2) throw Error("distinct2: slate shorter than 2");
    std::set<Bigram> own;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      own.emplace(s[i], s[i + 1]);
      pooled.emplace(s[i], s[i + 1]);
    }
    total += s.size() - 1;
    ratio_sum += static_cast<double>(own.size()) / static_cast<double>(s.size() - 1);
  }
  if (per_list) return ratio_sum / static_cast<double>(slates.size());
  return static_cast<double>(pooled.size()) / static_cast<double>(total);
}

std::vector<int> rank_candidates(std::span<const int> slate, const dag::Path& path, const model::EmissionMatrix& p) {
  const auto n = static_cast<int>(p.probs.rows());
  std::vector<double> best(static_cast<std::size_t>(n), -1.0);
  for (int v : path)
    for (int c = 0; c < n; ++c) best[static_cast<std::size_t>(c)] = std::max(best[static_cast<std::size_t>(c)], p.probs(c, v));
  std::vector<int> out(slate.begin(), slate.end());
  std::vector<char> pinned(static_cast<std::size_t>(n), 0);
  for (int c : slate) {
    if (c < 0 || c >= n) throw Error("rank_candidates: slate index " + std::to_string(c) + " out of range");
    pinned[static_cast<std::size_t>(c)] = 1;
  }
  std::vector<int> rest;
  for (int c = 0; c < n; ++c)
    if (!pinned[static_cast<std::size_t>(c)]) rest.push_back(c);
  std::stable_sort(rest.begin(), rest.end(), [&](int a, int b) {
    return best[static_cast<std::size_t>(a)] > best[static_cast<std::size_t>(b)];
  });
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "metric,name,value\n" << std::setprecision(10);
  for (const auto& r : rows) out << r.metric << ',' << r.name << ',' << r.value << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace dagrank::metrics
