#pragma once

// Triplet margin loss with exact active-set semantics, and supervised InfoNCE.

#include <cstdint>
#include <span>
#include <vector>

#include "ega/tensor.hpp"

namespace ega {

struct Triple {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;

  bool operator==(const Triple&) const = default;
};

struct TripletBatch {
  std::vector<Triple> triples;
  std::vector<std::uint8_t> active;  // filled by triplet_loss
  double margin = 0.2;

  std::size_t size() const { return triples.size(); }
  bool empty() const { return triples.empty(); }
};

template <typename T>
struct LossOutput {
  T value = T(0);
  Matrix<T> grad;                // d loss / d embedding, one row per batch member
  std::size_t active_count = 0;  // active triples, or anchors with positives for InfoNCE
  std::size_t support = 0;       // rows with a non-zero gradient
};

/// Hinge term of one triple. A triple is active iff d(a,p) - d(a,n) + m > 0;
/// for an active triple the un-averaged gradients w.r.t. the three
/// embeddings are written to ga/gp/gn and true is returned. Inactive
/// triples leave the outputs untouched. The distance gradient at a zero
/// distance is taken as 0.
template <typename T>
bool triplet_term(MatrixView<const T> emb, const Triple& t, T margin, T& value, std::span<T> ga,
                  std::span<T> gp, std::span<T> gn);

/// Mean hinge loss over the batch. Gradients flow only through active
/// triples; inactive triples are skipped outright, so their contribution
/// is exactly zero. `mean_over` overrides the 1/|B| divisor (0 = |B|).
template <typename T>
LossOutput<T> triplet_loss(MatrixView<const T> emb, TripletBatch& batch, std::size_t mean_over = 0);

/// Fraction of active triples; requires a batch already scored by triplet_loss.
double active_ratio(const TripletBatch& batch);

/// Supervised contrastive InfoNCE with dot-product similarities:
///   L_i = -1/|P(i)| sum_{p in P(i)} log( exp(s_ip/tau) / sum_{a != i} exp(s_ia/tau) )
/// averaged over anchors that have at least one positive.
template <typename T>
LossOutput<T> supcon_infonce_loss(MatrixView<const T> emb, std::span<const std::uint32_t> labels,
                                  T temperature);

}  // namespace ega
