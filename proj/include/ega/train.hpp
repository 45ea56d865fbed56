#pragma once

// Deterministic mini-batch training: in-batch triplet sampling, AdamW with
// decoupled weight decay, cosine-annealed learning rate, per-step telemetry.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ega/adapter.hpp"
#include "ega/embeddings.hpp"
#include "ega/loss.hpp"

namespace ega {

enum class LossKind { triplet, infonce };

const char* to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 256;
  double lr = 1e-4;
  double lr_min = 0.0;
  double weight_decay = 1e-4;
  double margin = 0.2;
  LossKind loss = LossKind::triplet;
  double temperature = 0.07;
  std::uint64_t seed = 42;
  /// Per-triplet parameter-gradient norms (costs three extra backward
  /// passes per active triplet).
  bool track_triplet_grad_norms = true;
};

/// 1e-4 for the EGA family, 1e-3 for LoRA.
double default_lr(Variant v);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double rho = 0.0;
  double max_triplet_grad_norm = 0.0;  // G-hat for this step
  double update_norm = 0.0;            // ||theta_{t+1} - theta_t||
  double lr = 0.0;
  double grad_norm = 0.0;              // ||batch gradient||
  std::size_t triples = 0;
  std::size_t active = 0;
};

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double mean_loss = 0.0;
  double mean_rho = 0.0;
};

struct TrainTelemetry {
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;
};

inline constexpr const char* kTelemetryHeader =
    "step,epoch,loss,rho,max_triplet_grad_norm,update_norm,lr,grad_norm";

std::string telemetry_csv_row(const StepRecord& r);
void write_telemetry_csv(const TrainTelemetry& t, const std::filesystem::path& path);
TrainTelemetry read_telemetry_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  std::vector<T> m;
  std::vector<T> v;
  std::size_t step = 0;

  explicit OptimizerState(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

/// theta <- theta (1 - lr wd) - lr mhat / (sqrt(vhat) + eps), with bias correction.
template <typename T>
void adamw_step(std::span<T> params, std::span<const T> grads, OptimizerState<T>& state,
                double lr, double weight_decay, const AdamWOptions& opt = {});

/// Decoupled decay only: theta <- theta (1 - lr wd). Moments are untouched.
template <typename T>
void weight_decay_step(std::span<T> params, double lr, double weight_decay);

/// lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi step / total_steps))
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min);

/// One triple per anchor that has an in-batch positive; positive and
/// negative drawn uniformly from the eligible batch members. Indices are
/// batch positions. A single-class batch yields an empty result.
TripletBatch sample_triplets(std::span<const std::uint32_t> batch_labels, std::mt19937_64& rng,
                             double margin);

// ---------------------------------------------------------------------------

/// Hooks for measurements that need more than the telemetry rows.
class TrainObserver {
 public:
  virtual ~TrainObserver() = default;
  /// Called with epoch 0 before the first step and after every epoch.
  virtual void on_epoch_end(std::size_t /*epoch*/, const Adapter<float>& /*adapter*/) {}
  virtual void on_step(const StepRecord& /*record*/) {}
  /// Un-averaged parameter gradient of one active triplet (triplet loss
  /// with track_triplet_grad_norms only).
  virtual void on_active_triplet_gradient(std::size_t /*step*/, std::span<const float> /*grad*/) {}
};

struct TrainResult {
  Adapter<float> adapter;
  TrainTelemetry telemetry;
};

/// Trains an adapter on `data`. When `telemetry_csv` is given, telemetry is
/// appended to it at every epoch end.
TrainResult train(const EmbeddingSet& data, const TrainConfig& cfg,
                  const AdapterConfig& adapter_cfg, TrainObserver* observer = nullptr,
                  const std::optional<std::filesystem::path>& telemetry_csv = std::nullopt);

/// Applies an adapter to every row of `set`.
EmbeddingSet apply_adapter(const Adapter<float>& adapter, const EmbeddingSet& set);

}  // namespace ega
