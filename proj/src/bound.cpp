#include "ega/bound.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ega/error.hpp"
#include "ega/loss.hpp"

namespace ega {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> as_eigen(const Matrix<double>& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()),
          static_cast<Eigen::Index>(m.cols())};
}

std::vector<double> to_double(std::span<const float> x) {
  return {x.begin(), x.end()};
}

double spectral_norm(const RowMatrix& m) {
  if (m.size() == 0) return 0.0;
  // The Gram matrix on the smaller side has the squared singular values.
  const RowMatrix gram = m.rows() <= m.cols() ? RowMatrix(m * m.transpose())
                                              : RowMatrix(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<RowMatrix> es(gram, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

}  // namespace

std::vector<DriftRecord> measure_drift(std::span<const Checkpoint> trajectory,
                                       const EmbeddingSet& unseen) {
  if (unseen.size() == 0) throw DataError("measure_drift: unseen set is empty");
  if (trajectory.empty()) throw ConfigError("measure_drift: empty trajectory");
  if (trajectory.front().epoch != 0) {
    throw ConfigError("measure_drift: trajectory must start at the epoch-0 checkpoint");
  }
  const std::size_t d = unseen.dim;
  const EmbeddingSet reference = apply_adapter(trajectory.front().adapter, unseen);

  std::vector<DriftRecord> out;
  for (const auto& ckpt : trajectory) {
    if (ckpt.adapter.dim() != d) throw DimensionError("measure_drift: dimension mismatch");
    const EmbeddingSet moved = apply_adapter(ckpt.adapter, unseen);
    DriftRecord rec;
    rec.epoch = ckpt.epoch;
    for (std::size_t i = 0; i < unseen.size(); ++i) {
      const double dist = euclidean_distance<double>(to_double(moved.row(i)),
                                                     to_double(reference.row(i)));
      rec.mean_drift += dist;
      rec.max_drift = std::max(rec.max_drift, dist);
    }
    rec.mean_drift /= static_cast<double>(unseen.size());
    out.push_back(rec);
  }
  return out;
}

BoundEstimate compute_bound(const TrainTelemetry& telemetry, double lipschitz) {
  BoundEstimate b;
  b.lipschitz = std::max(0.0, lipschitz);
  for (const auto& s : telemetry.steps) {
    b.grad_bound = std::max(b.grad_bound, s.max_triplet_grad_norm);
    b.rho_integral += s.rho;
    b.eta = std::max(b.eta, s.lr);
  }
  b.value = b.eta * b.lipschitz * b.grad_bound * b.rho_integral;
  return b;
}

void attach_bound(std::vector<DriftRecord>& records, const TrainTelemetry& telemetry,
                  const BoundEstimate& estimate) {
  const double scale = estimate.eta * estimate.lipschitz * estimate.grad_bound;
  for (auto& rec : records) {
    rec.rho_integral = 0.0;
    for (const auto& s : telemetry.steps) {
      if (s.epoch <= rec.epoch) rec.rho_integral += s.rho;
    }
    rec.bound = scale * rec.rho_integral;
  }
}

std::string bound_report_csv(const std::vector<DriftRecord>& records,
                             const BoundEstimate& estimate) {
  std::string out = "epoch,mean_drift,max_drift,rho_integral,L_hat,G_hat,bound_value\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.mean_drift,
                  r.max_drift, r.rho_integral, estimate.lipschitz, estimate.grad_bound, r.bound);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------

LipschitzEstimate jacobian_spectral_norm(const Adapter<double>& adapter, std::span<const double> z,
                                         const LipschitzOptions& opt) {
  const std::size_t d = adapter.dim();
  const bool by_params = opt.mode == JacobianMode::parameter;
  const std::size_t n = by_params ? adapter.param_count() : d;

  ForwardCache<double> cache;
  std::vector<double> f(d);
  adapter.forward(z, f, &cache);

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n), w(d), u(n);
  for (double& x : v) x = normal(rng);

  LipschitzEstimate est;
  est.converged = false;
  double previous = -1.0;
  for (std::size_t it = 0; it < opt.power_iterations; ++it) {
    const double vn = norm2<double>(v);
    if (vn == 0.0) {
      est.value = 0.0;
      est.converged = true;
      return est;
    }
    for (double& x : v) x /= vn;
    if (by_params) {
      adapter.jvp(cache, {}, v, w);
      std::fill(u.begin(), u.end(), 0.0);
      adapter.backward(cache, w, u);
    } else {
      adapter.jvp_input(cache, v, w);
      std::vector<double> scratch(adapter.param_count());
      adapter.backward(cache, w, scratch, u);
    }
    est.value = norm2<double>(w);
    est.converged = previous >= 0.0 && std::abs(est.value - previous) <= opt.tolerance * est.value;
    previous = est.value;
    v.swap(u);
  }
  return est;
}

LipschitzEstimate estimate_lipschitz(const Adapter<float>& adapter, const EmbeddingSet& probes,
                                     const LipschitzOptions& opt) {
  if (probes.size() == 0) throw DataError("estimate_lipschitz: probe set is empty");
  if (probes.dim != adapter.dim()) throw DimensionError("estimate_lipschitz: dimension mismatch");
  const Adapter<double> ad = adapter.cast<double>();
  LipschitzEstimate out;
  const std::size_t n = std::min(probes.size(), std::max<std::size_t>(opt.max_probes, 1));
  for (std::size_t i = 0; i < n; ++i) {
    LipschitzOptions o = opt;
    o.seed = opt.seed + i;
    const LipschitzEstimate e = jacobian_spectral_norm(ad, to_double(probes.row(i)), o);
    out.value = std::max(out.value, e.value);
    out.converged = out.converged && e.converged;
  }
  if (!out.converged) {
    spdlog::warn("Lipschitz power iteration did not converge in {} iterations; using last iterate",
                 opt.power_iterations);
  }
  return out;
}

Matrix<double> parameter_jacobian(const Adapter<double>& adapter, std::span<const double> z) {
  const std::size_t d = adapter.dim();
  ForwardCache<double> cache;
  std::vector<double> f(d);
  adapter.forward(z, f, &cache);
  Matrix<double> jac(d, adapter.param_count());
  std::vector<double> e(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    e[k] = 1.0;
    adapter.backward(cache, e, jac.row(k));
    e[k] = 0.0;
  }
  return jac;
}

// ---------------------------------------------------------------------------

Matrix<double> orthonormal_basis(std::span<const std::vector<double>> vectors) {
  if (vectors.empty()) return {};
  const std::size_t n = vectors.front().size();
  std::vector<std::vector<double>> basis;
  for (const auto& src : vectors) {
    if (src.size() != n) throw DimensionError("orthonormal_basis: vectors differ in length");
    const double original = norm2<double>(src);
    if (original == 0.0) continue;
    std::vector<double> v = src;
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : basis) axpy<double>(-dot<double>(q, v), q, v);
    }
    const double r = norm2<double>(v);
    if (r <= 1e-10 * original) continue;
    for (double& x : v) x /= r;
    basis.push_back(std::move(v));
  }
  Matrix<double> q(basis.size(), n);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    std::copy(basis[i].begin(), basis[i].end(), q.row(i).begin());
  }
  return q;
}

std::optional<double> active_subspace_projection(std::span<const std::vector<double>> gradients,
                                                 std::span<const Matrix<double>> jacobians) {
  if (jacobians.empty()) throw DataError("active_subspace_projection: no unseen Jacobians");
  const Matrix<double> q = orthonormal_basis(gradients);
  if (q.rows() == 0) return std::nullopt;
  const auto qe = as_eigen(q);
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& jac : jacobians) {
    if (jac.cols() != q.cols()) {
      throw DimensionError("active_subspace_projection: Jacobian width differs from gradient length");
    }
    const auto je = as_eigen(jac);
    const double full = spectral_norm(je);
    if (full == 0.0) continue;
    total += spectral_norm(je * qe.transpose()) / full;
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return total / static_cast<double>(counted);
}

ActiveSubspaceMonitor::ActiveSubspaceMonitor(const EmbeddingSet& unseen, std::size_t points,
                                             std::size_t capacity)
    : capacity_(capacity) {
  if (unseen.size() == 0) throw DataError("active subspace monitor: unseen set is empty");
  std::vector<std::size_t> idx(std::min(points, unseen.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  points_ = unseen.subset(idx);
}

void ActiveSubspaceMonitor::on_active_triplet_gradient(std::size_t /*step*/,
                                                       std::span<const float> grad) {
  if (capacity_ == 0) return;
  recent_.emplace_back(grad.begin(), grad.end());
  if (recent_.size() > capacity_) recent_.pop_front();
}

void ActiveSubspaceMonitor::on_epoch_end(std::size_t epoch, const Adapter<float>& adapter) {
  if (recent_.empty()) {
    ratios_.emplace_back(epoch, std::nullopt);
    return;
  }
  const Adapter<double> ad = adapter.cast<double>();
  std::vector<Matrix<double>> jacobians;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    jacobians.push_back(parameter_jacobian(ad, to_double(points_.row(i))));
  }
  const std::vector<std::vector<double>> grads(recent_.begin(), recent_.end());
  ratios_.emplace_back(epoch, active_subspace_projection(grads, jacobians));
}

// ---------------------------------------------------------------------------

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

Vec random_unit(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vec v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
  return v.normalized();
}

Vec noisy(const Vec& center, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vec v = center;
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += sigma * normal(rng);
  return v.normalized();
}

// Rows are samples.
Mat linear_forward(const Mat& w, const Mat& z) {
  Mat v = z + z * w.transpose();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double n = v.row(i).norm();
    if (n < kNormEpsilon) throw DegenerateNormError("linear adapter output has zero norm");
    v.row(i) /= n;
  }
  return v;
}

// d f(z)/dW contracted with an upstream gradient g: (P_v g / ||v||) z^T.
Mat linear_param_grad(const Mat& w, const Vec& z, const Vec& g) {
  const Vec v = z + w * z;
  const double n = v.norm();
  const Vec u = v / n;
  const Vec pg = (g - u * u.dot(g)) / n;
  return pg * z.transpose();
}

}  // namespace

bool LinearDemoReport::bound_holds() const {
  if (!std::isfinite(lipschitz)) return false;
  return std::all_of(checkpoints.begin(), checkpoints.end(),
                     [](const LinearCheckpoint& c) { return c.max_drift <= c.bound; });
}

std::string LinearDemoReport::to_csv() const {
  std::string out = "step,mean_drift,max_drift,path_length,rho_integral,bound\n";
  char buf[256];
  for (const auto& c : checkpoints) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", c.step, c.mean_drift,
                  c.max_drift, c.path_length, c.rho_integral, c.bound);
    out += buf;
  }
  return out;
}

std::string LinearDemoReport::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = options.seed;
  j["dim"] = options.dim;
  j["steps"] = options.steps;
  j["lr"] = options.lr;
  j["margin"] = options.margin;
  j["sigma"] = options.sigma;
  j["unseen_angle_deg"] = options.unseen_angle_deg;
  j["L"] = lipschitz;
  j["G"] = grad_bound;
  j["eta"] = eta;
  j["bound_holds"] = bound_holds();
  j["singular_values"] = singular_values;
  j["subspace_alignment"] = subspace_alignment;
  j["delta_w_zu"] = delta_w_zu;
  j["perturbation_in_span"] = perturbation.in_span;
  j["perturbation_orthogonal"] = perturbation.orthogonal;
  if (!checkpoints.empty()) {
    j["final_max_drift"] = checkpoints.back().max_drift;
    j["final_bound"] = checkpoints.back().bound;
  }
  return j.dump(2) + "\n";
}

double linear_perturbation(const Matrix<double>& m, std::span<const double> z) {
  if (m.cols() != z.size()) throw DimensionError("linear_perturbation: dimension mismatch");
  const Eigen::Map<const Vec> ze(z.data(), static_cast<Eigen::Index>(z.size()));
  return (as_eigen(m) * ze).norm();
}

SpanDecomposition decompose_against_span(std::span<const double> v, std::span<const double> a,
                                         std::span<const double> b) {
  if (a.size() != v.size() || b.size() != v.size()) {
    throw DimensionError("decompose_against_span: dimension mismatch");
  }
  const Matrix<double> q = orthonormal_basis(std::vector<std::vector<double>>{
      std::vector<double>(a.begin(), a.end()), std::vector<double>(b.begin(), b.end())});
  std::vector<double> in(v.size(), 0.0);
  for (std::size_t r = 0; r < q.rows(); ++r) axpy<double>(dot<double>(q.row(r), v), q.row(r), in);
  std::vector<double> orth(v.begin(), v.end());
  axpy<double>(-1.0, in, orth);
  return {norm2<double>(in), norm2<double>(orth)};
}

LinearDemoReport linear_illustration(const LinearDemoOptions& opt) {
  const std::size_t d = opt.dim;
  if (d < 3) throw ConfigError("linear_illustration: dim must be >= 3");
  if (opt.lr <= 0.0) throw ConfigError("linear_illustration: lr must be positive");
  if (opt.per_class < 2) throw ConfigError("linear_illustration: need >= 2 samples per class");
  const auto di = static_cast<Eigen::Index>(d);
  std::mt19937_64 rng(opt.seed);

  // Orthonormal directions: the seen plane is span(e1, e2), e3 is orthogonal to it.
  const Vec e1 = random_unit(d, rng);
  Vec e2 = random_unit(d, rng);
  e2 = (e2 - e1 * e1.dot(e2)).normalized();
  Vec e3 = random_unit(d, rng);
  e3 = (e3 - e1 * e1.dot(e3) - e2 * e2.dot(e3)).normalized();

  const double ca = opt.class_angle_deg * std::numbers::pi / 180.0;
  const double ua = opt.unseen_angle_deg * std::numbers::pi / 180.0;
  const Vec c1 = e1;
  const Vec c2 = std::cos(ca) * e1 + std::sin(ca) * e2;
  const Vec in_plane = (c1 + c2).normalized();
  const Vec zu = std::cos(ua) * in_plane + std::sin(ua) * e3;

  const std::size_t n_seen = 2 * opt.per_class;
  Mat seen(static_cast<Eigen::Index>(n_seen), di);
  std::vector<std::uint32_t> labels(n_seen);
  for (std::size_t i = 0; i < n_seen; ++i) {
    labels[i] = i < opt.per_class ? 0 : 1;
    seen.row(static_cast<Eigen::Index>(i)) = noisy(labels[i] == 0 ? c1 : c2, opt.sigma, rng);
  }
  Mat unseen(static_cast<Eigen::Index>(opt.unseen_count + 1), di);
  unseen.row(0) = zu;
  for (std::size_t i = 1; i <= opt.unseen_count; ++i) {
    unseen.row(static_cast<Eigen::Index>(i)) = noisy(zu, opt.sigma, rng);
  }

  LinearDemoReport rep;
  rep.options = opt;
  rep.eta = opt.lr;

  Mat w = Mat::Zero(di, di);
  const Mat f0 = linear_forward(w, unseen);
  Mat f_prev = f0;
  Vec path = Vec::Zero(unseen.rows());
  double rho_sum = 0.0;
  double lipschitz = 0.0;

  auto checkpoint = [&](std::size_t step) {
    LinearCheckpoint c;
    c.step = step;
    for (Eigen::Index i = 0; i < unseen.rows(); ++i) {
      const double dist = (f_prev.row(i) - f0.row(i)).norm();
      c.mean_drift += dist;
      c.max_drift = std::max(c.max_drift, dist);
    }
    c.mean_drift /= static_cast<double>(unseen.rows());
    c.path_length = path.maxCoeff();
    c.rho_integral = rho_sum;
    rep.checkpoints.push_back(c);
  };
  checkpoint(0);

  for (std::size_t step = 1; step <= opt.steps; ++step) {
    const Mat f = linear_forward(w, seen);
    const RowMatrix f_rows = f;
    TripletBatch batch = sample_triplets(labels, rng, opt.margin);
    Mat grad = Mat::Zero(di, di);
    if (!batch.empty()) {
      const MatrixView<const double> emb{f_rows.data(), n_seen, d};
      const LossOutput<double> loss = triplet_loss<double>(emb, batch);
      rho_sum += active_ratio(batch);
      for (std::size_t i = 0; i < n_seen; ++i) {
        const auto g = loss.grad.row(i);
        const Vec gv = Eigen::Map<const Vec>(g.data(), di);
        if (gv.squaredNorm() == 0.0) continue;
        grad += linear_param_grad(w, seen.row(static_cast<Eigen::Index>(i)).transpose(), gv);
      }
      std::vector<double> ga(d), gp(d), gn(d);
      for (std::size_t t = 0; t < batch.size(); ++t) {
        if (!batch.active[t]) continue;
        std::fill(ga.begin(), ga.end(), 0.0);
        std::fill(gp.begin(), gp.end(), 0.0);
        std::fill(gn.begin(), gn.end(), 0.0);
        double value = 0.0;
        const Triple& tr = batch.triples[t];
        triplet_term<double>(emb, tr, opt.margin, value, ga, gp, gn);
        auto zrow = [&](std::size_t k) -> Vec {
          return seen.row(static_cast<Eigen::Index>(k)).transpose();
        };
        const Mat gt = linear_param_grad(w, zrow(tr.anchor), Eigen::Map<const Vec>(ga.data(), di)) +
                       linear_param_grad(w, zrow(tr.positive), Eigen::Map<const Vec>(gp.data(), di)) +
                       linear_param_grad(w, zrow(tr.negative), Eigen::Map<const Vec>(gn.data(), di));
        rep.grad_bound = std::max(rep.grad_bound, gt.norm());
      }
    }
    const Mat delta = -opt.lr * grad;

    // On the segment W -> W + delta, ||(I + W + s delta) z|| >= ||(I + W) z|| - ||delta z||,
    // so ||z|| over that lower bound bounds ||df/dW|| at z along the whole step.
    for (Eigen::Index i = 0; i < unseen.rows(); ++i) {
      const Vec z = unseen.row(i).transpose();
      const double floor = (z + w * z).norm() - (delta * z).norm();
      lipschitz = floor > 0.0 ? std::max(lipschitz, z.norm() / floor)
                              : std::numeric_limits<double>::infinity();
    }

    w += delta;
    const Mat f_next = linear_forward(w, unseen);
    for (Eigen::Index i = 0; i < unseen.rows(); ++i) path(i) += (f_next.row(i) - f_prev.row(i)).norm();
    f_prev = f_next;
    if (step % std::max<std::size_t>(opt.checkpoint_every, 1) == 0 || step == opt.steps) {
      checkpoint(step);
    }
  }

  rep.lipschitz = lipschitz;
  for (auto& c : rep.checkpoints) c.bound = rep.eta * rep.lipschitz * rep.grad_bound * c.rho_integral;

  Eigen::JacobiSVD<Mat> svd(w, Eigen::ComputeFullV);
  const Vec sv = svd.singularValues();
  rep.singular_values.assign(sv.data(), sv.data() + sv.size());
  double align = 0.0;
  for (Eigen::Index k = 0; k < 2; ++k) {
    const Vec vk = svd.matrixV().col(k);
    align += std::pow(vk.dot(e1), 2) + std::pow(vk.dot(e2), 2);
  }
  rep.subspace_alignment = align / 2.0;

  rep.delta_w_zu = (w * zu).norm();
  const Vec shift = (f_prev.row(0) - f0.row(0)).transpose();
  rep.perturbation = decompose_against_span(std::span<const double>(shift.data(), d),
                                            std::span<const double>(c1.data(), d),
                                            std::span<const double>(c2.data(), d));
  return rep;
}

}  // namespace ega
