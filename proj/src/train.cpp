#include "ega/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "ega/error.hpp"

namespace ega {

const char* to_string(LossKind k) {
  return k == LossKind::triplet ? "triplet" : "infonce";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "triplet") return LossKind::triplet;
  if (s == "infonce") return LossKind::infonce;
  throw ConfigError("unknown loss '" + s + "' (expected triplet or infonce)");
}

double default_lr(Variant v) {
  return v == Variant::lora ? 1e-3 : 1e-4;
}

std::string telemetry_csv_row(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.step, r.epoch, r.loss,
                r.rho, r.max_triplet_grad_norm, r.update_norm, r.lr, r.grad_norm);
  return buf;
}

void write_telemetry_csv(const TrainTelemetry& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << kTelemetryHeader << '\n';
  for (const auto& r : t.steps) out << telemetry_csv_row(r) << '\n';
}

TrainTelemetry read_telemetry_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("step,epoch,loss,rho", 0) != 0) {
    throw FormatError(path.string() + ": not a telemetry CSV");
  }
  TrainTelemetry t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    StepRecord r;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf,%lf,%lf,%lf", &r.step, &r.epoch, &r.loss,
                    &r.rho, &r.max_triplet_grad_norm, &r.update_norm, &r.lr, &r.grad_norm) < 7) {
      throw FormatError(path.string() + ": malformed telemetry row");
    }
    t.steps.push_back(r);
  }
  return t;
}

// ---------------------------------------------------------------------------

template <typename T>
void adamw_step(std::span<T> params, std::span<const T> grads, OptimizerState<T>& state,
                double lr, double weight_decay, const AdamWOptions& opt) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw DimensionError("adamw_step: shape mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
    const double v = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    params[i] = static_cast<T>(params[i] * decay - lr * mhat / (std::sqrt(vhat) + opt.eps));
  }
}

template <typename T>
void weight_decay_step(std::span<T> params, double lr, double weight_decay) {
  if (weight_decay == 0.0) return;
  const double decay = 1.0 - lr * weight_decay;
  for (T& p : params) p = static_cast<T>(p * decay);
}

template void adamw_step<float>(std::span<float>, std::span<const float>, OptimizerState<float>&,
                                double, double, const AdamWOptions&);
template void adamw_step<double>(std::span<double>, std::span<const double>,
                                 OptimizerState<double>&, double, double, const AdamWOptions&);
template void weight_decay_step<float>(std::span<float>, double, double);
template void weight_decay_step<double>(std::span<double>, double, double);

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
  if (total_steps == 0) return lr_max;
  if (step >= total_steps) return lr_min;
  const double phase = std::numbers::pi * static_cast<double>(step) /
                       static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

TripletBatch sample_triplets(std::span<const std::uint32_t> labels, std::mt19937_64& rng,
                             double margin) {
  TripletBatch batch;
  batch.margin = margin;
  const std::size_t n = labels.size();
  std::vector<std::size_t> pos, neg;
  for (std::size_t a = 0; a < n; ++a) {
    pos.clear();
    neg.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      (labels[j] == labels[a] ? pos : neg).push_back(j);
    }
    if (pos.empty() || neg.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick_pos(0, pos.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_neg(0, neg.size() - 1);
    const std::size_t p = pos[pick_pos(rng)];
    const std::size_t q = neg[pick_neg(rng)];
    batch.triples.push_back({a, p, q});
  }
  return batch;
}

// ---------------------------------------------------------------------------

namespace {

double l2(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

void validate(const EmbeddingSet& data, const TrainConfig& cfg, const AdapterConfig& acfg) {
  if (cfg.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
  if (cfg.lr_min < 0.0 || cfg.lr_min > cfg.lr) throw ConfigError("lr_min must be in [0, lr]");
  if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(cfg.margin > 0.0)) throw ConfigError("margin must be positive");
  if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (data.dim != acfg.dim) {
    throw ConfigError("adapter dim " + std::to_string(acfg.dim) + " does not match data dim " +
                      std::to_string(data.dim));
  }
  if (data.class_count() < 2) throw DataError("training data must cover at least two classes");
}

}  // namespace

TrainResult train(const EmbeddingSet& data, const TrainConfig& cfg,
                  const AdapterConfig& adapter_cfg, TrainObserver* observer,
                  const std::optional<std::filesystem::path>& telemetry_csv) {
  validate(data, cfg, adapter_cfg);
  Adapter<float> adapter(adapter_cfg);
  TrainTelemetry telemetry;
  std::ofstream csv;
  if (telemetry_csv) {
    if (telemetry_csv->has_parent_path()) {
      std::filesystem::create_directories(telemetry_csv->parent_path());
    }
    csv.open(*telemetry_csv, std::ios::trunc);
    if (!csv) throw DataError("cannot write " + telemetry_csv->string());
    csv << kTelemetryHeader << '\n' << std::flush;
  }
  if (observer) observer->on_epoch_end(0, adapter);
  if (cfg.epochs == 0) return {std::move(adapter), std::move(telemetry)};

  const std::size_t n = data.size();
  const std::size_t d = data.dim;
  const std::size_t pcount = adapter.param_count();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  OptimizerState<float> opt(pcount);
  std::vector<float> grad(pcount), tgrad(pcount), before(pcount);
  std::vector<ForwardCache<float>> caches(cfg.batch_size);
  std::vector<float> ga(d), gp(d), gn(d);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t first_row = telemetry.steps.size();

    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
      const std::size_t bsize = std::min(cfg.batch_size, n - start);
      const double lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min);
      if (bsize < 2) continue;

      Matrix<float> emb(bsize, d);
      std::vector<std::uint32_t> labels(bsize);
      for (std::size_t i = 0; i < bsize; ++i) {
        const std::size_t idx = order[start + i];
        labels[i] = data.labels[idx];
        try {
          adapter.forward(data.row(idx), emb.row(i), &caches[i]);
        } catch (const DegenerateNormError& e) {
          throw NumericError("training aborted at step " + std::to_string(step) + " (sample " +
                             std::to_string(idx) + "): " + e.what());
        }
      }

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = lr;
      LossOutput<float> loss;
      TripletBatch batch;
      if (cfg.loss == LossKind::triplet) {
        batch = sample_triplets(labels, rng, cfg.margin);
        if (batch.empty()) {
          spdlog::warn("step {}: batch holds a single class, no triplets; step skipped", step);
          continue;
        }
        loss = triplet_loss<float>(emb.view(), batch);
        rec.rho = active_ratio(batch);
        rec.triples = batch.size();
        rec.active = loss.active_count;
      } else {
        loss = supcon_infonce_loss<float>(emb.view(), labels, static_cast<float>(cfg.temperature));
        rec.rho = 1.0;
        rec.triples = loss.active_count;
        rec.active = loss.active_count;
      }
      rec.loss = loss.value;

      std::fill(grad.begin(), grad.end(), 0.0f);
      for (std::size_t i = 0; i < bsize; ++i) {
        auto g = loss.grad.row(i);
        if (std::all_of(g.begin(), g.end(), [](float v) { return v == 0.0f; })) continue;
        adapter.backward(caches[i], g, grad);
      }
      rec.grad_norm = l2(grad);

      if (cfg.loss == LossKind::triplet && cfg.track_triplet_grad_norms) {
        const float margin = static_cast<float>(cfg.margin);
        for (std::size_t t = 0; t < batch.size(); ++t) {
          if (!batch.active[t]) continue;
          const Triple& tr = batch.triples[t];
          float value;
          triplet_term<float>(emb.view(), tr, margin, value, ga, gp, gn);
          std::fill(tgrad.begin(), tgrad.end(), 0.0f);
          adapter.backward(caches[tr.anchor], ga, tgrad);
          adapter.backward(caches[tr.positive], gp, tgrad);
          adapter.backward(caches[tr.negative], gn, tgrad);
          rec.max_triplet_grad_norm = std::max(rec.max_triplet_grad_norm, l2(tgrad));
          if (observer) observer->on_active_triplet_gradient(step, tgrad);
        }
      } else if (cfg.loss == LossKind::infonce) {
        // No hinge: the batch gradient itself stands in for G-hat.
        rec.max_triplet_grad_norm = rec.grad_norm;
      }

      auto params = adapter.params();
      std::copy(params.begin(), params.end(), before.begin());
      if (cfg.loss == LossKind::triplet && loss.active_count == 0) {
        weight_decay_step<float>(params, lr, cfg.weight_decay);
      } else {
        adamw_step<float>(params, grad, opt, lr, cfg.weight_decay);
      }
      if (!all_finite<float>(params)) {
        throw NumericError("training diverged at step " + std::to_string(step));
      }
      double du = 0.0;
      for (std::size_t i = 0; i < pcount; ++i) {
        const double diff = static_cast<double>(params[i]) - before[i];
        du += diff * diff;
      }
      rec.update_norm = std::sqrt(du);

      telemetry.steps.push_back(rec);
      if (observer) observer->on_step(rec);
    }

    EpochSummary summary;
    summary.epoch = epoch;
    for (std::size_t i = first_row; i < telemetry.steps.size(); ++i) {
      summary.mean_loss += telemetry.steps[i].loss;
      summary.mean_rho += telemetry.steps[i].rho;
      ++summary.steps;
    }
    if (summary.steps > 0) {
      summary.mean_loss /= static_cast<double>(summary.steps);
      summary.mean_rho /= static_cast<double>(summary.steps);
    }
    telemetry.epochs.push_back(summary);
    if (csv) {
      for (std::size_t i = first_row; i < telemetry.steps.size(); ++i) {
        csv << telemetry_csv_row(telemetry.steps[i]) << '\n';
      }
      csv.flush();
    }
    spdlog::debug("epoch {}: loss {:.5f} rho {:.4f}", epoch, summary.mean_loss, summary.mean_rho);
    if (observer) observer->on_epoch_end(epoch, adapter);
  }
  return {std::move(adapter), std::move(telemetry)};
}

EmbeddingSet apply_adapter(const Adapter<float>& adapter, const EmbeddingSet& set) {
  if (adapter.dim() != set.dim) throw ConfigError("adapter dim does not match embedding dim");
  EmbeddingSet out = set;
  for (std::size_t i = 0; i < set.size(); ++i) adapter.forward(set.row(i), out.row(i));
  return out;
}

}  // namespace ega
