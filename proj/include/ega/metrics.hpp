#pragma once

// Retrieval metrics: Label Precision@K (semantic), ANNS Recall@K (index
// fidelity), worst-case aggregation, and distance histograms.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ega/embeddings.hpp"
#include "ega/ivf.hpp"

namespace ega {

/// Mean over queries of (matching labels among the first K neighbors) / K.
/// Missing neighbors count as misses.
double label_precision(const SearchResult& results, std::span<const std::uint32_t> query_labels,
                       std::span<const std::uint32_t> base_labels, std::size_t k);

/// Mean over queries of |exact top-K ∩ approx top-K| / K.
double anns_recall(const SearchResult& approx, const SearchResult& exact, std::size_t k);

/// Minimum value and its key.
std::pair<double, std::string> worst_case_lp(const std::map<std::string, double>& per_benchmark);

inline constexpr std::size_t kHistogramBins = 50;
inline constexpr double kHistogramMax = 2.0;

struct DistanceHistograms {
  double bin_width = kHistogramMax / kHistogramBins;
  std::vector<std::size_t> topk;        // exact top-K distances
  std::vector<std::size_t> background;  // distances to sampled background points
  double mean_topk = 0.0;
  double mean_background = 0.0;

  /// mean background distance minus mean top-K distance
  double separation() const { return mean_background - mean_topk; }
  std::string to_csv() const;
};

/// `n_background` distinct base points are drawn uniformly without
/// replacement; every query contributes its distances to all of them.
DistanceHistograms distance_histograms(const EmbeddingSet& base, const EmbeddingSet& queries,
                                       std::size_t k, std::size_t n_background,
                                       std::uint64_t seed);

// ---------------------------------------------------------------------------

struct MetricCell {
  std::size_t k = 0;
  std::size_t nprobe = 0;
  double lp = 0.0;
  double ar = 0.0;
};

struct MetricsReport {
  std::vector<std::size_t> ks{1, 3, 5, 10};
  std::vector<std::size_t> nprobes{1, 5, 10};
  std::size_t nlist = 10;
  std::vector<MetricCell> cells;          // K-major, nprobe-minor
  std::map<std::string, std::string> metadata;
  std::map<std::string, double> worst_case;  // per-benchmark LP@1 when comparing
  std::string worst_case_benchmark;
  double worst_case_lp1 = 0.0;

  const MetricCell& at(std::size_t k, std::size_t nprobe) const;
  std::string to_json() const;
  std::string to_csv() const;
};

struct EvalOptions {
  std::vector<std::size_t> ks{1, 3, 5, 10};
  std::vector<std::size_t> nprobes{1, 5, 10};
  std::size_t nlist = 10;
  std::uint64_t seed = 42;
};

/// Builds an IVF index over `database` and fills the K x nprobe grid.
MetricsReport evaluate_retrieval(const EmbeddingSet& database, const EmbeddingSet& queries,
                                 const EvalOptions& opt);

}  // namespace ega
