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
// Accuracy and slate-set diversity metrics.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dagrank/dag_loss.hpp"
#include "dagrank/model.hpp"

namespace dagrank::metrics {

using Slate = std::vector<std::int64_t>;
using SlateSet = std::vector<Slate>;

/// |top-K of ranked ∩ exposed| / |exposed|.
double recall_at_k(std::span<const std::int64_t> ranked, std::span<const std::int64_t> exposed, int k);

/// Rank-sum AUC; tied scores count one half.
double auc(std::span<const double> scores, std::span<const int> labels);

/// NDCG@K with gain 2^rel - 1 and discount log2(position + 1).
double ndcg(std::span<const int> ranked_labels, int k);

double jaccard(const Slate& a, const Slate& b);
double mean_jaccard(const SlateSet& slates);
double diversity_score(const SlateSet& slates);
double repetition_rate(const SlateSet& slates);
double item_coverage(const SlateSet& slates, std::int64_t catalog_size);
/// Unique ordered bigrams over total bigrams, pooled over the set unless
/// `per_list`, which averages the per-slate ratios instead.
double distinct2(const SlateSet& slates, bool per_list = false);

/// All n candidate indices: the slate first in slate order, then the rest by
/// descending maximum emission probability over the path's vertices (ties to
/// the lower index).
std::vector<int> rank_candidates(std::span<const int> slate, const dag::Path& path, const model::EmissionMatrix& p);

struct MetricRow {
  std::string metric;
  std::string name;
  double value = 0;
};

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);

}  // namespace dagrank::metrics
