#include "ega/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "ega/error.hpp"

namespace ega {

double label_precision(const SearchResult& results, std::span<const std::uint32_t> query_labels,
                       std::span<const std::uint32_t> base_labels, std::size_t k) {
  if (results.query_count() == 0) throw DataError("label_precision: empty query set");
  if (query_labels.size() != results.query_count()) {
    throw DimensionError("label_precision: query label count mismatch");
  }
  if (k == 0) throw ConfigError("label_precision: K must be >= 1");
  double total = 0.0;
  for (std::size_t q = 0; q < results.query_count(); ++q) {
    const auto& nn = results.indices[q];
    const std::size_t m = std::min(k, nn.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (base_labels[nn[i]] == query_labels[q]) ++hits;
    }
    total += static_cast<double>(hits) / static_cast<double>(k);
  }
  return total / static_cast<double>(results.query_count());
}

double anns_recall(const SearchResult& approx, const SearchResult& exact, std::size_t k) {
  if (approx.query_count() != exact.query_count()) {
    throw DimensionError("anns_recall: query counts differ");
  }
  if (approx.query_count() == 0) throw DataError("anns_recall: empty query set");
  if (k == 0) throw ConfigError("anns_recall: K must be >= 1");
  double total = 0.0;
  for (std::size_t q = 0; q < exact.query_count(); ++q) {
    const auto& ex = exact.indices[q];
    const auto& ap = approx.indices[q];
    std::unordered_set<std::uint32_t> truth(ex.begin(), ex.begin() + std::min(k, ex.size()));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ap.size()); ++i) hits += truth.count(ap[i]);
    total += static_cast<double>(hits) / static_cast<double>(k);
  }
  return total / static_cast<double>(exact.query_count());
}

std::pair<double, std::string> worst_case_lp(const std::map<std::string, double>& per_benchmark) {
  if (per_benchmark.empty()) throw DataError("worst_case_lp: no benchmarks");
  auto it = std::min_element(per_benchmark.begin(), per_benchmark.end(),
                             [](const auto& a, const auto& b) { return a.second < b.second; });
  return {it->second, it->first};
}

std::string DistanceHistograms::to_csv() const {
  std::string out = "bin_lo,bin_hi,topk_count,background_count\n";
  char buf[128];
  for (std::size_t b = 0; b < topk.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.4f,%.4f,%zu,%zu\n", b * bin_width, (b + 1) * bin_width,
                  topk[b], background[b]);
    out += buf;
  }
  return out;
}

DistanceHistograms distance_histograms(const EmbeddingSet& base, const EmbeddingSet& queries,
                                       std::size_t k, std::size_t n_background,
                                       std::uint64_t seed) {
  if (n_background > base.size()) {
    throw ConfigError("distance_histograms: n_background exceeds the database size");
  }
  DistanceHistograms h;
  h.topk.assign(kHistogramBins, 0);
  h.background.assign(kHistogramBins, 0);
  auto bin = [&](float dist) {
    auto b = static_cast<std::size_t>(std::floor(dist / h.bin_width));
    return std::min(b, kHistogramBins - 1);
  };

  const SearchResult exact = brute_force_knn(base, queries, k);
  std::size_t n_top = 0;
  for (const auto& row : exact.distances) {
    for (float dist : row) {
      ++h.topk[bin(dist)];
      h.mean_topk += dist;
      ++n_top;
    }
  }
  if (n_top > 0) h.mean_topk /= static_cast<double>(n_top);

  std::vector<std::size_t> pool(base.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> sample;
  std::sample(pool.begin(), pool.end(), std::back_inserter(sample), n_background, rng);
  std::size_t n_bg = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t i : sample) {
      const float dist = euclidean_distance<float>(queries.row(q), base.row(i));
      ++h.background[bin(dist)];
      h.mean_background += dist;
      ++n_bg;
    }
  }
  if (n_bg > 0) h.mean_background /= static_cast<double>(n_bg);
  return h;
}

// ---------------------------------------------------------------------------

const MetricCell& MetricsReport::at(std::size_t k, std::size_t nprobe) const {
  for (const auto& c : cells) {
    if (c.k == k && c.nprobe == nprobe) return c;
  }
  throw ConfigError("metrics report has no cell K=" + std::to_string(k) +
                    " nprobe=" + std::to_string(nprobe));
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["nlist"] = nlist;
  j["ks"] = ks;
  j["nprobes"] = nprobes;
  auto& grid = j["grid"] = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    grid.push_back({{"k", c.k}, {"nprobe", c.nprobe}, {"lp", c.lp}, {"ar", c.ar}});
  }
  if (!worst_case.empty()) {
    j["worst_case"] = {{"lp1", worst_case_lp1},
                       {"benchmark", worst_case_benchmark},
                       {"per_benchmark", worst_case}};
  }
  j["metadata"] = metadata;
  return j.dump(2) + "\n";
}

std::string MetricsReport::to_csv() const {
  std::string out = "k,nprobe,lp,ar\n";
  char buf[128];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f\n", c.k, c.nprobe, c.lp, c.ar);
    out += buf;
  }
  return out;
}

MetricsReport evaluate_retrieval(const EmbeddingSet& database, const EmbeddingSet& queries,
                                 const EvalOptions& opt) {
  if (opt.ks.empty() || opt.nprobes.empty()) throw ConfigError("evaluation grid is empty");
  MetricsReport report;
  report.ks = opt.ks;
  report.nprobes = opt.nprobes;
  report.nlist = opt.nlist;
  const std::size_t kmax = *std::max_element(opt.ks.begin(), opt.ks.end());
  if (kmax > database.size()) throw ConfigError("K exceeds database size");

  const IvfIndex index = IvfIndex::build(database, opt.nlist, opt.seed);
  const SearchResult exact = brute_force_knn(database, queries, kmax);
  // Top-K is a prefix of top-Kmax, so one search per nprobe covers every K.
  std::vector<SearchResult> approx;
  for (std::size_t np : opt.nprobes) approx.push_back(index.search(queries, kmax, np));
  for (std::size_t k : opt.ks) {
    for (std::size_t p = 0; p < opt.nprobes.size(); ++p) {
      report.cells.push_back({k, opt.nprobes[p],
                              label_precision(approx[p], queries.labels, database.labels, k),
                              anns_recall(approx[p], exact, k)});
    }
  }
  return report;
}

}  // namespace ega
