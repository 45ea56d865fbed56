#include "ega/ivf.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <utility>

#include "ega/error.hpp"

namespace ega {

namespace {

using Candidate = std::pair<float, std::uint32_t>;  // (distance, base index)

void assign_all(const EmbeddingSet& data, const Matrix<float>& centroids,
                std::vector<std::uint32_t>& assignment, double* inertia) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t c = nearest_centroid(centroids, data.row(i));
    assignment[i] = static_cast<std::uint32_t>(c);
    total += squared_distance<float>(data.row(i), centroids.row(c));
  }
  if (inertia) *inertia = total;
}

Matrix<float> seed_plus_plus(const EmbeddingSet& data, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = data.size();
  Matrix<float> centroids(k, data.dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<std::uint8_t> chosen(n, 0);

  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = first(rng);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (double v : d2) total += v;
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          target -= d2[i];
          if (target <= 0.0 && d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
        while (d2[pick] == 0.0 && pick > 0) --pick;
      } else {
        // Every remaining point coincides with a centroid; take any unused one.
        std::vector<std::size_t> unused;
        for (std::size_t i = 0; i < n; ++i) {
          if (!chosen[i]) unused.push_back(i);
        }
        std::uniform_int_distribution<std::size_t> u(0, unused.size() - 1);
        pick = unused[u(rng)];
      }
    }
    chosen[pick] = 1;
    std::copy(data.row(pick).begin(), data.row(pick).end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], static_cast<double>(squared_distance<float>(data.row(i), centroids.row(c))));
    }
  }
  return centroids;
}

void top_k(std::vector<Candidate>& cands, std::size_t k, std::vector<std::uint32_t>& idx,
           std::vector<float>& dist) {
  const std::size_t m = std::min(k, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(m), cands.end());
  idx.resize(m);
  dist.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    dist[i] = cands[i].first;
    idx[i] = cands[i].second;
  }
}

}  // namespace

std::size_t nearest_centroid(const Matrix<float>& centroids, std::span<const float> x) {
  std::size_t best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const float d = squared_distance<float>(x, centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

KMeansResult kmeans(const EmbeddingSet& data, std::size_t k, const KMeansOptions& opt) {
  const std::size_t n = data.size();
  const std::size_t d = data.dim;
  if (k == 0) throw ConfigError("kmeans: k must be positive");
  if (n < k) {
    throw DataError("kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(k) +
                    " clusters");
  }
  std::mt19937_64 rng(opt.seed);
  KMeansResult res;
  res.centroids = seed_plus_plus(data, k, rng);
  res.assignment.assign(n, 0);
  std::vector<std::uint32_t> previous(n, std::numeric_limits<std::uint32_t>::max());

  for (std::size_t it = 0; it < opt.iterations; ++it) {
    assign_all(data, res.centroids, res.assignment, nullptr);
    if (res.assignment == previous) break;
    previous = res.assignment;

    std::vector<double> sums(k * d, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = res.assignment[i];
      ++counts[c];
      auto r = data.row(i);
      for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += r[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) {
        res.centroids(c, j) = static_cast<float>(sums[c * d + j] / static_cast<double>(counts[c]));
      }
    }
    // Empty clusters take the farthest member of the current largest cluster.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const std::size_t largest = static_cast<std::size_t>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      std::size_t far = n;
      float far_d = -1.0f;
      for (std::size_t i = 0; i < n; ++i) {
        if (res.assignment[i] != largest) continue;
        const float dd = squared_distance<float>(data.row(i), res.centroids.row(largest));
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      if (far == n) break;
      std::copy(data.row(far).begin(), data.row(far).end(), res.centroids.row(c).begin());
      res.assignment[far] = static_cast<std::uint32_t>(c);
      --counts[largest];
      counts[c] = 1;
    }
  }
  assign_all(data, res.centroids, res.assignment, &res.inertia);
  return res;
}

IvfIndex IvfIndex::build(const EmbeddingSet& base, std::size_t nlist, std::uint64_t seed,
                         std::size_t kmeans_iterations) {
  KMeansResult km = kmeans(base, nlist, {kmeans_iterations, seed});
  IvfIndex index;
  index.centroids_ = std::move(km.centroids);
  index.lists_.assign(nlist, {});
  for (std::size_t i = 0; i < base.size(); ++i) {
    index.lists_[km.assignment[i]].push_back(static_cast<std::uint32_t>(i));
  }
  index.base_ = base;
  return index;
}

SearchResult IvfIndex::search(const EmbeddingSet& queries, std::size_t k,
                              std::size_t nprobe) const {
  if (nprobe < 1 || nprobe > nlist()) {
    throw ConfigError("nprobe " + std::to_string(nprobe) + " outside [1, " +
                      std::to_string(nlist()) + "]");
  }
  if (k < 1) throw ConfigError("search: K must be >= 1");
  if (queries.dim != base_.dim) throw DimensionError("search: query dim mismatch");

  SearchResult res;
  res.indices.resize(queries.size());
  res.distances.resize(queries.size());
  std::vector<std::pair<float, std::uint32_t>> coarse(nlist());
  std::vector<Candidate> cands;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    auto x = queries.row(q);
    for (std::size_t c = 0; c < nlist(); ++c) {
      coarse[c] = {squared_distance<float>(x, centroids_.row(c)), static_cast<std::uint32_t>(c)};
    }
    std::partial_sort(coarse.begin(), coarse.begin() + static_cast<std::ptrdiff_t>(nprobe),
                      coarse.end());
    cands.clear();
    for (std::size_t p = 0; p < nprobe; ++p) {
      for (std::uint32_t i : lists_[coarse[p].second]) {
        cands.emplace_back(euclidean_distance<float>(x, base_.row(i)), i);
      }
    }
    top_k(cands, k, res.indices[q], res.distances[q]);
  }
  return res;
}

SearchResult brute_force_knn(const EmbeddingSet& base, const EmbeddingSet& queries,
                             std::size_t k) {
  if (k < 1 || k > base.size()) throw ConfigError("brute_force_knn: K must be in [1, N]");
  if (queries.dim != base.dim) throw DimensionError("brute_force_knn: query dim mismatch");
  SearchResult res;
  res.indices.resize(queries.size());
  res.distances.resize(queries.size());
  std::vector<Candidate> cands(base.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t i = 0; i < base.size(); ++i) {
      cands[i] = {euclidean_distance<float>(queries.row(q), base.row(i)),
                  static_cast<std::uint32_t>(i)};
    }
    top_k(cands, k, res.indices[q], res.distances[q]);
  }
  return res;
}

}  // namespace ega
