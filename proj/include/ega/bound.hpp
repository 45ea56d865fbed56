#pragma once

// Drift-bound analysis: unseen-set drift along a checkpoint trajectory,
// Jacobian spectral-norm estimates, the eta*L*G*sum(rho) perturbation bound,
// active-subspace projection ratios, and the linear two-class setting in
// which every constant of the bound is computed exactly.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ega/adapter.hpp"
#include "ega/embeddings.hpp"
#include "ega/train.hpp"

namespace ega {

struct Checkpoint {
  std::size_t epoch = 0;
  Adapter<float> adapter;
};

/// Copies the adapter at epoch 0 and at every `every`-th epoch end.
class CheckpointRecorder : public TrainObserver {
 public:
  explicit CheckpointRecorder(std::size_t every = 1) : every_(every ? every : 1) {}
  void on_epoch_end(std::size_t epoch, const Adapter<float>& adapter) override {
    if (epoch % every_ == 0) checkpoints_.push_back({epoch, adapter});
  }
  const std::vector<Checkpoint>& checkpoints() const { return checkpoints_; }

 private:
  std::size_t every_;
  std::vector<Checkpoint> checkpoints_;
};

struct DriftRecord {
  std::size_t epoch = 0;
  double mean_drift = 0.0;
  double max_drift = 0.0;
  double rho_integral = 0.0;  // sum of rho over steps up to this checkpoint
  double bound = 0.0;         // eta * L * G * rho_integral
};

/// Drift of each unseen embedding relative to its image under the first
/// (epoch-0) checkpoint, so the epoch-0 record is exactly zero.
std::vector<DriftRecord> measure_drift(std::span<const Checkpoint> trajectory,
                                       const EmbeddingSet& unseen);

struct BoundEstimate {
  double lipschitz = 0.0;     // L-hat
  double grad_bound = 0.0;    // G-hat, max per-triplet gradient norm
  double rho_integral = 0.0;  // sum_t rho_t, unit step
  double eta = 0.0;           // peak scheduled learning rate
  double value = 0.0;         // eta * L * G * rho_integral
};

BoundEstimate compute_bound(const TrainTelemetry& telemetry, double lipschitz);

/// Fills rho_integral and bound of each record from the steps logged up to
/// and including its epoch.
void attach_bound(std::vector<DriftRecord>& records, const TrainTelemetry& telemetry,
                  const BoundEstimate& estimate);

/// epoch,mean_drift,max_drift,rho_integral,L_hat,G_hat,bound_value
std::string bound_report_csv(const std::vector<DriftRecord>& records,
                             const BoundEstimate& estimate);

// ---------------------------------------------------------------------------

enum class JacobianMode {
  input,      // df/dz, d x d
  parameter,  // df/dtheta, d x P
};

struct LipschitzOptions {
  std::size_t power_iterations = 20;
  std::size_t max_probes = 64;
  JacobianMode mode = JacobianMode::input;
  double tolerance = 1e-6;  // relative change of the last iterate
  std::uint64_t seed = 42;
};

struct LipschitzEstimate {
  double value = 0.0;
  bool converged = true;  // false if any probe missed the tolerance
};

/// Power-iteration spectral norm of the Jacobian at one point (in double).
LipschitzEstimate jacobian_spectral_norm(const Adapter<double>& adapter, std::span<const double> z,
                                         const LipschitzOptions& opt);

/// Max spectral norm over the first `max_probes` rows of `probes`.
LipschitzEstimate estimate_lipschitz(const Adapter<float>& adapter, const EmbeddingSet& probes,
                                     const LipschitzOptions& opt = {});

/// Dense d x P parameter Jacobian at z, one backward pass per output row.
Matrix<double> parameter_jacobian(const Adapter<double>& adapter, std::span<const double> z);

// ---------------------------------------------------------------------------

/// Rows of an orthonormal basis for span(vectors), by twice-iterated
/// modified Gram-Schmidt; numerically dependent vectors are dropped.
Matrix<double> orthonormal_basis(std::span<const std::vector<double>> vectors);

/// Mean over Jacobians of ||J Q^T||_2 / ||J||_2, with Q an orthonormal basis
/// of the gradients. Empty gradient set gives nullopt.
std::optional<double> active_subspace_projection(std::span<const std::vector<double>> gradients,
                                                 std::span<const Matrix<double>> jacobians);

/// Keeps the most recent active-triplet gradients during training and
/// measures the projection ratio on a few unseen points at every epoch end.
class ActiveSubspaceMonitor : public TrainObserver {
 public:
  ActiveSubspaceMonitor(const EmbeddingSet& unseen, std::size_t points = 8,
                        std::size_t capacity = 256);

  void on_epoch_end(std::size_t epoch, const Adapter<float>& adapter) override;
  void on_active_triplet_gradient(std::size_t step, std::span<const float> grad) override;

  /// (epoch, ratio) per epoch end; ratio is nullopt before any active gradient.
  const std::vector<std::pair<std::size_t, std::optional<double>>>& ratios() const {
    return ratios_;
  }

 private:
  EmbeddingSet points_;
  std::size_t capacity_;
  std::deque<std::vector<double>> recent_;
  std::vector<std::pair<std::size_t, std::optional<double>>> ratios_;
};

// ---------------------------------------------------------------------------

/// Linear residual adapter z -> l2(z + W z) trained with the triplet loss
/// by constant-rate SGD on two seen classes, probed on one unseen class.
struct LinearDemoOptions {
  std::uint64_t seed = 42;
  std::size_t dim = 16;
  std::size_t per_class = 64;
  std::size_t unseen_count = 64;
  double sigma = 0.1;            // isotropic noise around each prototype
  double margin = 0.2;
  double lr = 0.05;
  std::size_t steps = 400;
  std::size_t checkpoint_every = 20;
  double class_angle_deg = 60.0;   // angle between c1 and c2
  double unseen_angle_deg = 60.0;  // angle between z_u and span(c1, c2)
};

struct LinearCheckpoint {
  std::size_t step = 0;
  double mean_drift = 0.0;
  double max_drift = 0.0;
  double path_length = 0.0;  // max over unseen points of the summed per-step displacement
  double rho_integral = 0.0;
  double bound = 0.0;
};

struct SpanDecomposition {
  double in_span = 0.0;
  double orthogonal = 0.0;
};

struct LinearDemoReport {
  LinearDemoOptions options;
  std::vector<LinearCheckpoint> checkpoints;
  double lipschitz = 0.0;   // exact segment-wise bound on ||df/dW||
  double grad_bound = 0.0;  // max per-triplet Frobenius gradient norm
  double eta = 0.0;
  std::vector<double> singular_values;  // of the cumulative Delta W
  double subspace_alignment = 0.0;      // mean squared projection of the top-2 right singular vectors onto span(c1, c2)
  double delta_w_zu = 0.0;              // ||Delta W z_u||
  SpanDecomposition perturbation;       // f_T(z_u) - f_0(z_u) split against span(c1, c2)

  bool bound_holds() const;
  std::string to_csv() const;   // step,mean_drift,max_drift,path_length,rho_integral,bound
  std::string to_json() const;
};

LinearDemoReport linear_illustration(const LinearDemoOptions& opt = {});

/// ||M z|| for a d x d matrix.
double linear_perturbation(const Matrix<double>& m, std::span<const double> z);

/// Splits v into its projection onto span(a, b) and the remainder.
SpanDecomposition decompose_against_span(std::span<const double> v, std::span<const double> a,
                                         std::span<const double> b);

}  // namespace ega
