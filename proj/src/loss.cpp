#include "ega/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ega/error.hpp"

namespace ega {

namespace {

template <typename T>
std::size_t count_support(const Matrix<T>& g) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < g.rows(); ++r) {
    auto row = g.row(r);
    if (std::any_of(row.begin(), row.end(), [](T v) { return v != T(0); })) ++n;
  }
  return n;
}

}  // namespace

template <typename T>
bool triplet_term(MatrixView<const T> emb, const Triple& t, T margin, T& value, std::span<T> ga,
                  std::span<T> gp, std::span<T> gn) {
  auto a = emb.row(t.anchor);
  auto p = emb.row(t.positive);
  auto n = emb.row(t.negative);
  const T d_ap = euclidean_distance(a, p);
  const T d_an = euclidean_distance(a, n);
  const T slack = d_ap - d_an + margin;
  if (!(slack > T(0))) return false;
  value = slack;
  const T inv_ap = d_ap > T(0) ? T(1) / d_ap : T(0);
  const T inv_an = d_an > T(0) ? T(1) / d_an : T(0);
  for (std::size_t k = 0; k < emb.cols; ++k) {
    const T u = (a[k] - p[k]) * inv_ap;
    const T w = (a[k] - n[k]) * inv_an;
    ga[k] = u - w;
    gp[k] = -u;
    gn[k] = w;
  }
  return true;
}

template <typename T>
LossOutput<T> triplet_loss(MatrixView<const T> emb, TripletBatch& batch, std::size_t mean_over) {
  if (batch.empty()) throw DataError("triplet_loss: empty batch");
  if (!(batch.margin > 0.0)) throw ConfigError("triplet_loss: margin must be positive");
  for (const Triple& t : batch.triples) {
    if (t.anchor >= emb.rows || t.positive >= emb.rows || t.negative >= emb.rows) {
      throw DataError("triplet_loss: index out of range");
    }
  }
  const std::size_t d = emb.cols;
  const T scale = T(1) / static_cast<T>(mean_over ? mean_over : batch.size());
  const T margin = static_cast<T>(batch.margin);

  LossOutput<T> out;
  out.grad = Matrix<T>(emb.rows, d);
  batch.active.assign(batch.size(), 0);
  std::vector<T> ga(d), gp(d), gn(d);
  T sum = T(0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Triple& t = batch.triples[i];
    T value;
    if (!triplet_term<T>(emb, t, margin, value, ga, gp, gn)) continue;
    batch.active[i] = 1;
    ++out.active_count;
    sum += value;
    axpy<T>(scale, ga, out.grad.row(t.anchor));
    axpy<T>(scale, gp, out.grad.row(t.positive));
    axpy<T>(scale, gn, out.grad.row(t.negative));
  }
  out.value = sum * scale;
  out.support = count_support(out.grad);
  return out;
}

double active_ratio(const TripletBatch& batch) {
  if (batch.empty()) return 0.0;
  if (batch.active.size() != batch.size()) {
    throw DataError("active_ratio: batch has not been scored");
  }
  std::size_t n = 0;
  for (auto a : batch.active) n += a ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(batch.size());
}

template <typename T>
LossOutput<T> supcon_infonce_loss(MatrixView<const T> emb, std::span<const std::uint32_t> labels,
                                  T temperature) {
  if (!(temperature > T(0))) throw ConfigError("infonce: temperature must be positive");
  const std::size_t n = emb.rows;
  const std::size_t d = emb.cols;
  if (n < 2) throw DataError("infonce: batch needs at least two samples");
  if (labels.size() != n) throw DimensionError("infonce: label count mismatch");

  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && labels[j] == labels[i]) {
        anchors.push_back(i);
        break;
      }
    }
  }
  if (anchors.empty()) throw DataError("infonce: no anchor has an in-batch positive");

  Matrix<T> sim(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) sim(i, j) = dot(emb.row(i), emb.row(j));
  }

  LossOutput<T> out;
  out.grad = Matrix<T>(n, d);
  out.active_count = anchors.size();
  const T inv_tau = T(1) / temperature;
  const T inv_anchors = T(1) / static_cast<T>(anchors.size());
  std::vector<T> coeff(n);
  T total = T(0);
  for (std::size_t i : anchors) {
    T max_logit = -std::numeric_limits<T>::infinity();
    for (std::size_t a = 0; a < n; ++a) {
      if (a != i) max_logit = std::max(max_logit, sim(i, a) * inv_tau);
    }
    T denom = T(0);
    for (std::size_t a = 0; a < n; ++a) {
      if (a != i) denom += std::exp(sim(i, a) * inv_tau - max_logit);
    }
    const T lse = max_logit + std::log(denom);

    std::size_t n_pos = 0;
    T pos_sum = T(0);
    for (std::size_t a = 0; a < n; ++a) {
      if (a != i && labels[a] == labels[i]) {
        ++n_pos;
        pos_sum += sim(i, a) * inv_tau;
      }
    }
    const T inv_pos = T(1) / static_cast<T>(n_pos);
    total += lse - pos_sum * inv_pos;

    // dL_i/ds_ia = (softmax_ia - [a in P(i)]/|P(i)|) / tau
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) {
        coeff[a] = T(0);
        continue;
      }
      const T soft = std::exp(sim(i, a) * inv_tau - lse);
      const T target = labels[a] == labels[i] ? inv_pos : T(0);
      coeff[a] = (soft - target) * inv_tau * inv_anchors;
    }
    auto gi = out.grad.row(i);
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      axpy<T>(coeff[a], emb.row(a), gi);
      axpy<T>(coeff[a], emb.row(i), out.grad.row(a));
    }
  }
  out.value = total * inv_anchors;
  out.support = count_support(out.grad);
  return out;
}

#define EGA_INSTANTIATE_LOSS(T)                                                                  \
  template bool triplet_term<T>(MatrixView<const T>, const Triple&, T, T&, std::span<T>,         \
                                std::span<T>, std::span<T>);                                     \
  template LossOutput<T> triplet_loss<T>(MatrixView<const T>, TripletBatch&, std::size_t);       \
  template LossOutput<T> supcon_infonce_loss<T>(MatrixView<const T>,                             \
                                                std::span<const std::uint32_t>, T);

EGA_INSTANTIATE_LOSS(float)
EGA_INSTANTIATE_LOSS(double)

}  // namespace ega
