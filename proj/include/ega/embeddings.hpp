#pragma once

// Embedding sets, the EGAE binary format, synthetic data and split protocols.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ega {

/// N unit-norm d-vectors with integer class labels.
struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<float> vectors;  // N * dim, row-major
  std::vector<std::uint32_t> labels;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const { return {vectors.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {vectors.data() + i * dim, dim}; }

  std::size_t class_count() const;
  /// Rows `indices`, in order.
  EmbeddingSet subset(std::span<const std::size_t> indices) const;

  bool operator==(const EmbeddingSet&) const = default;
};

inline constexpr char kEmbeddingMagic[4] = {'E', 'G', 'A', 'E'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;
/// Rows whose norm deviates from 1 by more than this are logged on ingest.
inline constexpr double kRenormTolerance = 1e-3;

struct LoadStats {
  std::size_t renormalized = 0;  // rows corrected by more than kRenormTolerance
};

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_embeddings(const std::filesystem::path& path, LoadStats* stats = nullptr);

/// CSV rows of `label,v0,v1,...`; an optional header line starting with a
/// non-digit is skipped. Rows are re-normalized.
EmbeddingSet import_csv(const std::filesystem::path& path, LoadStats* stats = nullptr);

/// Class means uniform on the sphere; samples l2(mean + sigma * N(0, I)).
EmbeddingSet gen_synthetic(std::size_t dim, std::size_t n_classes, std::size_t n_per_class,
                           double sigma, std::uint64_t seed);

enum class SplitMode { id_7525, ood_class_disjoint };

struct SplitSpec {
  SplitMode mode = SplitMode::id_7525;
  double seen_fraction = 0.8;
  double db_fraction = 0.75;
  std::uint64_t seed = 42;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> database;
  std::vector<std::size_t> queries;
  std::vector<std::uint32_t> seen_classes;
  std::vector<std::uint32_t> unseen_classes;  // empty in id mode
};

Split make_split(const EmbeddingSet& set, const SplitSpec& spec);

const char* to_string(SplitMode mode);
SplitMode parse_split_mode(const std::string& s);

}  // namespace ega
