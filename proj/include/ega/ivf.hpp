#pragma once

// IVF-Flat index: k-means coarse quantizer with exhaustive scans of the
// probed posting lists, plus the exact brute-force kNN it is checked against.
// Distances are Euclidean; ties break toward the lower base index.

#include <cstdint>
#include <vector>

#include "ega/embeddings.hpp"
#include "ega/tensor.hpp"

namespace ega {

struct KMeansOptions {
  std::size_t iterations = 25;
  std::uint64_t seed = 42;
};

struct KMeansResult {
  Matrix<float> centroids;              // k x d
  std::vector<std::uint32_t> assignment;  // nearest centroid per point
  double inertia = 0.0;                 // sum of squared distances to assigned centroids
};

/// k-means++ seeding, Lloyd iterations, empty clusters re-seeded from the
/// farthest member of the largest cluster.
KMeansResult kmeans(const EmbeddingSet& data, std::size_t k, const KMeansOptions& opt = {});

/// Index of the nearest row of `centroids` to `x` (lowest index on ties).
std::size_t nearest_centroid(const Matrix<float>& centroids, std::span<const float> x);

struct SearchResult {
  // Per query, sorted ascending by (distance, index).
  std::vector<std::vector<std::uint32_t>> indices;
  std::vector<std::vector<float>> distances;

  std::size_t query_count() const { return indices.size(); }
};

class IvfIndex {
 public:
  static IvfIndex build(const EmbeddingSet& base, std::size_t nlist, std::uint64_t seed = 42,
                        std::size_t kmeans_iterations = 25);

  std::size_t nlist() const { return centroids_.rows(); }
  std::size_t size() const { return base_.size(); }
  const Matrix<float>& centroids() const { return centroids_; }
  const std::vector<std::vector<std::uint32_t>>& posting_lists() const { return lists_; }
  const EmbeddingSet& base() const { return base_; }

  /// Scans the `nprobe` lists whose centroids are nearest each query.
  /// Fewer than K results are returned when the probed lists hold fewer.
  SearchResult search(const EmbeddingSet& queries, std::size_t k, std::size_t nprobe) const;

 private:
  Matrix<float> centroids_;
  std::vector<std::vector<std::uint32_t>> lists_;
  EmbeddingSet base_;
};

SearchResult brute_force_knn(const EmbeddingSet& base, const EmbeddingSet& queries, std::size_t k);

}  // namespace ega
