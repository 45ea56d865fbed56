#include "commands.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "ega/bound.hpp"
#include "ega/error.hpp"
#include "ega/io.hpp"
#include "run_config.hpp"

namespace ega::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

std::string fmt_full(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// data and training plumbing

struct Prepared {
  EmbeddingSet full;
  Split split;
  EmbeddingSet train;
  EmbeddingSet database;
  EmbeddingSet queries;
  EmbeddingSet unseen;  // everything outside the training classes (ood) or the queries (id)
};

// Surfaces config errors before any data is read or training starts.
void validate(const RunConfig& cfg) {
  const Variant v = parse_variant(cfg.get("variant"));
  cfg.train_config(v);
  cfg.adapter_config(8);
  cfg.split_spec();
  cfg.eval_options();
  cfg.count("checkpoint-every");
}

Prepared prepare(const RunConfig& cfg, const std::string& data_path) {
  validate(cfg);
  if (data_path.empty()) throw ConfigError("no input data: pass --data or set data in the config");
  Prepared p;
  p.full = load_embeddings(data_path);
  p.split = make_split(p.full, cfg.split_spec());
  p.train = p.full.subset(p.split.train);
  p.database = p.full.subset(p.split.database);
  p.queries = p.full.subset(p.split.queries);
  if (p.split.unseen_classes.empty()) {
    p.unseen = p.queries;
  } else {
    std::vector<std::size_t> all = p.split.database;
    all.insert(all.end(), p.split.queries.begin(), p.split.queries.end());
    p.unseen = p.full.subset(all);
  }
  return p;
}

MetricsReport evaluate(const Adapter<float>* adapter, const Prepared& p, const RunConfig& cfg) {
  const EvalOptions opt = cfg.eval_options();
  if (adapter == nullptr) return evaluate_retrieval(p.database, p.queries, opt);
  return evaluate_retrieval(apply_adapter(*adapter, p.database), apply_adapter(*adapter, p.queries),
                            opt);
}

void write_metrics(const fs::path& dir, const MetricsReport& report) {
  write_text_atomic(dir / "metrics.json", report.to_json());
  write_text_atomic(dir / "metrics.csv", report.to_csv());
}

void fill_metadata(MetricsReport& r, const RunConfig& cfg, const std::string& command,
                   const Prepared& p) {
  r.metadata["command"] = command;
  r.metadata["config_hash"] = cfg.hash();
  r.metadata["seed"] = cfg.get("seed");
  r.metadata["split"] = cfg.get("split");
  r.metadata["provenance"] = p.full.provenance;
  r.metadata["n_train"] = std::to_string(p.train.size());
  r.metadata["n_database"] = std::to_string(p.database.size());
  r.metadata["n_queries"] = std::to_string(p.queries.size());
}

struct TrainOutcome {
  TrainResult result;
  MetricsReport frozen;
  MetricsReport adapted;
};

/// Trains, evaluates before and after, and writes every run artifact to `dir`.
TrainOutcome train_run(const RunConfig& cfg, const fs::path& dir, TrainObserver* observer) {
  const Prepared p = prepare(cfg, cfg.get("data"));
  const AdapterConfig ac = cfg.adapter_config(p.full.dim);
  const TrainConfig tc = cfg.train_config(ac.variant);

  fs::create_directories(dir);
  write_text_atomic(dir / "config.snapshot", cfg.snapshot());
  fs::remove(dir / "telemetry.csv");
  spdlog::info("training {} + {} on {} samples (d={}, {} epochs) -> {}", to_string(ac.variant),
               to_string(tc.loss), p.train.size(), p.full.dim, tc.epochs, dir.string());

  TrainOutcome o{train(p.train, tc, ac, observer, dir / "telemetry.csv"), {}, {}};
  save_params(o.result.adapter, dir / "params.egap");
  if (o.result.telemetry.steps.empty()) write_telemetry_csv(o.result.telemetry, dir / "telemetry.csv");

  o.frozen = evaluate(nullptr, p, cfg);
  o.adapted = evaluate(&o.result.adapter, p, cfg);
  fill_metadata(o.adapted, cfg, "train", p);
  o.adapted.metadata["variant"] = to_string(ac.variant);
  o.adapted.metadata["loss"] = to_string(tc.loss);
  o.adapted.metadata["ablate"] = cfg.get("ablate");
  o.adapted.metadata["param_count"] = std::to_string(o.result.adapter.param_count());
  o.adapted.metadata["frozen_lp1"] = fmt_real(o.frozen.cells.front().lp);
  if (!o.result.telemetry.epochs.empty()) {
    o.adapted.metadata["final_mean_rho"] = fmt_real(o.result.telemetry.epochs.back().mean_rho);
  }
  write_metrics(dir, o.adapted);
  return o;
}

void print_grid(std::ostream& out, const MetricsReport& r, const std::string& title) {
  out << title << "\n  K  nprobe      LP      AR\n";
  for (const auto& c : r.cells) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%3zu  %6zu  %.4f  %.4f\n", c.k, c.nprobe, c.lp, c.ar);
    out << buf;
  }
}

/// Broadcasts training callbacks to several observers.
class FanOut : public TrainObserver {
 public:
  void add(TrainObserver* o) { observers_.push_back(o); }
  void on_epoch_end(std::size_t e, const Adapter<float>& a) override {
    for (auto* o : observers_) o->on_epoch_end(e, a);
  }
  void on_step(const StepRecord& r) override {
    for (auto* o : observers_) o->on_step(r);
  }
  void on_active_triplet_gradient(std::size_t s, std::span<const float> g) override {
    for (auto* o : observers_) o->on_active_triplet_gradient(s, g);
  }

 private:
  std::vector<TrainObserver*> observers_;
};

// ---------------------------------------------------------------------------
// option registration

/// CLI flags bound to config keys; applied over the config file afterwards.
class KeyOptions {
 public:
  void add(CLI::App* app, const std::string& key, const std::string& flags = "") {
    auto& slot = slots_[{app, key}];
    const auto* info = find(key);
    slot.option = app->add_option(flags.empty() ? "--" + key : flags, slot.value,
                                  info ? info->help : "");
  }
  void add_all(CLI::App* app, std::initializer_list<const char*> keys) {
    for (const char* k : keys) add(app, k);
  }
  void apply(RunConfig& cfg) const {
    for (const auto& [where, slot] : slots_) {
      if (where.first->parsed() && slot.option->count() > 0) cfg.set(where.second, slot.value);
    }
  }

 private:
  static const KeyInfo* find(const std::string& key) {
    for (const auto& k : config_keys()) {
      if (key == k.key) return &k;
    }
    return nullptr;
  }
  struct Slot {
    std::string value;
    CLI::Option* option = nullptr;
  };
  std::map<std::pair<CLI::App*, std::string>, Slot> slots_;
};

const std::initializer_list<const char*> kTrainKeys{
    "data",   "variant", "loss",  "margin",    "temperature", "lr",         "lr-min",
    "weight-decay", "epochs", "batch-size", "hidden", "rank", "ablate", "split",
    "seen-fraction", "db-fraction", "nlist", "nprobes", "ks", "seed", "out", "run-id"};

// ---------------------------------------------------------------------------
// commands

int cmd_gen(const RunConfig& cfg, const std::string& out_file, const std::string& csv,
            std::ostream& out) {
  if (out_file.empty()) throw ConfigError("gen: --out is required");
  EmbeddingSet s;
  if (!csv.empty()) {
    LoadStats stats;
    s = import_csv(csv, &stats);
    s.provenance = "csv/" + fs::path(csv).filename().string();
  } else {
    s = gen_synthetic(cfg.count("dim"), cfg.count("classes"), cfg.count("per-class"),
                      cfg.real("sigma"), cfg.seed());
  }
  if (fs::path(out_file).has_parent_path()) fs::create_directories(fs::path(out_file).parent_path());
  save_embeddings(s, out_file);
  out << "wrote " << s.size() << " x " << s.dim << " embeddings (" << s.class_count()
      << " classes) to " << out_file << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = run_directory(cfg, "train");
  const TrainOutcome o = train_run(cfg, dir, nullptr);
  out << "run " << dir.string() << " (config " << cfg.hash() << ")\n";
  print_grid(out, o.adapted, "adapted");
  out << "frozen LP@1 " << fmt_real(o.frozen.cells.front().lp) << "\n";
  return kExitOk;
}

struct Benchmark {
  std::string name;
  std::string path;
};

std::vector<Benchmark> benchmarks_of(const RunConfig& cfg) {
  std::vector<Benchmark> out;
  std::stringstream in(cfg.get("benchmarks"));
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == item.size()) {
      throw ConfigError("benchmark entry '" + item + "' is not name:path");
    }
    out.push_back({item.substr(0, colon), item.substr(colon + 1)});
  }
  if (out.empty()) {
    if (!cfg.has_value("data")) throw ConfigError("eval --compare needs benchmarks or --data");
    out.push_back({"data", cfg.get("data")});
  }
  return out;
}

int cmd_compare(const RunConfig& cfg, const std::vector<std::string>& checkpoints,
                std::ostream& out) {
  RunConfig one = cfg;
  one.set("ks", "1");
  one.set("nprobes", "1");
  const auto benches = benchmarks_of(cfg);
  std::vector<Prepared> data;
  for (const auto& b : benches) data.push_back(prepare(cfg, b.path));

  std::vector<std::pair<std::string, std::optional<Adapter<float>>>> models;
  models.emplace_back("frozen", std::nullopt);
  for (const auto& c : checkpoints) models.emplace_back(c, load_params(c));

  std::string table = "checkpoint,benchmark,lp1\n";
  std::string worst = "checkpoint,worst_benchmark,worst_lp1\n";
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& [name, model] : models) {
    std::map<std::string, double> per;
    for (std::size_t b = 0; b < benches.size(); ++b) {
      const MetricsReport r = evaluate(model ? &*model : nullptr, data[b], one);
      per[benches[b].name] = r.cells.front().lp;
      table += name + "," + benches[b].name + "," + fmt_real(r.cells.front().lp) + "\n";
    }
    const auto [lp, bench] = worst_case_lp(per);
    worst += name + "," + bench + "," + fmt_real(lp) + "\n";
    j.push_back({{"checkpoint", name}, {"per_benchmark", per}, {"worst_benchmark", bench},
                 {"worst_lp1", lp}});
  }
  const fs::path dir = run_directory(cfg, "compare");
  fs::create_directories(dir);
  write_text_atomic(dir / "config.snapshot", cfg.snapshot());
  write_text_atomic(dir / "compare.csv", table);
  write_text_atomic(dir / "worst_case.csv", worst);
  write_text_atomic(dir / "compare.json", j.dump(2) + "\n");
  out << worst;
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::vector<std::string>& compare, std::ostream& out) {
  if (!compare.empty()) return cmd_compare(cfg, compare, out);
  const Prepared p = prepare(cfg, cfg.get("data"));
  std::optional<Adapter<float>> adapter;
  if (cfg.has_value("params")) {
    adapter = load_params(cfg.get("params"));
    if (adapter->dim() != p.full.dim) {
      throw ConfigError("adapter dimension " + std::to_string(adapter->dim()) +
                        " does not match the data (" + std::to_string(p.full.dim) + ")");
    }
  }
  MetricsReport r = evaluate(adapter ? &*adapter : nullptr, p, cfg);
  fill_metadata(r, cfg, "eval", p);
  r.metadata["params"] = adapter ? cfg.get("params") : "identity";

  const fs::path dir = run_directory(cfg, "eval");
  fs::create_directories(dir);
  write_text_atomic(dir / "config.snapshot", cfg.snapshot());
  write_metrics(dir, r);

  const EmbeddingSet db = adapter ? apply_adapter(*adapter, p.database) : p.database;
  const EmbeddingSet q = adapter ? apply_adapter(*adapter, p.queries) : p.queries;
  const auto ks = cfg.count_list("ks");
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  const DistanceHistograms h =
      distance_histograms(db, q, kmax, std::min(10 * q.size(), db.size()), cfg.seed());
  write_text_atomic(dir / "histograms.csv", h.to_csv());

  out << "run " << dir.string() << " (config " << cfg.hash() << ")\n";
  print_grid(out, r, adapter ? "adapted" : "frozen");
  out << "distance separation " << fmt_real(h.separation()) << "\n";
  return kExitOk;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

int cmd_sweep(const RunConfig& cfg, const std::string& param, const std::string& values,
              std::ostream& out) {
  if (param.empty() || values.empty()) throw ConfigError("sweep: --param and --values are required");
  if (param == "seed" || param == "out" || param == "run-id") {
    throw ConfigError("sweep: '" + param + "' cannot be swept");
  }
  cfg.get(param);  // rejects unknown keys before any run starts
  std::vector<std::string> vals;
  {
    std::stringstream in(values);
    std::string v;
    while (std::getline(in, v, ',')) {
      if (!v.empty()) vals.push_back(v);
    }
  }
  const auto seeds = cfg.seed_list();
  for (const auto& v : vals) {
    RunConfig probe = cfg;
    probe.set(param, v);
    validate(probe);
  }
  const std::string sweep_hash =
      hex64(fnv1a64(cfg.snapshot() + "sweep " + param + " = " + values + "\n")).substr(0, 12);
  const fs::path dir = output_root(cfg) / (cfg.has_value("run-id") ? cfg.get("run-id")
                                                                   : "sweep-" + param + "-" + sweep_hash);
  fs::create_directories(dir);
  write_text_atomic(dir / "config.snapshot",
                    cfg.snapshot() + "sweep.param = " + param + "\nsweep.values = " + values + "\n");

  std::string rows = "param,value,seed,config_hash,lp1,ar1,final_rho\n";
  std::string summary =
      "param,value,runs,lp1_mean,lp1_std,ar1_mean,ar1_std,final_rho_mean,final_rho_std\n";
  for (const auto& v : vals) {
    std::vector<double> lp, ar, rho;
    for (std::uint64_t s : seeds) {
      RunConfig run = cfg;
      run.set(param, v);
      run.set("seed", std::to_string(s));
      const fs::path run_dir = dir / (param + "-" + v + "-seed" + std::to_string(s));
      const TrainOutcome o = train_run(run, run_dir, nullptr);
      const MetricCell& c = o.adapted.cells.front();
      const double r = o.result.telemetry.epochs.empty() ? 0.0
                                                         : o.result.telemetry.epochs.back().mean_rho;
      lp.push_back(c.lp);
      ar.push_back(c.ar);
      rho.push_back(r);
      rows += param + "," + v + "," + std::to_string(s) + "," + run.hash() + "," + fmt_real(c.lp) +
              "," + fmt_real(c.ar) + "," + fmt_real(r) + "\n";
    }
    summary += param + "," + v + "," + std::to_string(seeds.size()) + "," + fmt_real(mean_of(lp)) +
               "," + fmt_real(std_of(lp)) + "," + fmt_real(mean_of(ar)) + "," +
               fmt_real(std_of(ar)) + "," + fmt_real(mean_of(rho)) + "," + fmt_real(std_of(rho)) +
               "\n";
  }
  write_text_atomic(dir / "sweep.csv", rows);
  write_text_atomic(dir / "sweep_summary.csv", summary);
  out << "sweep " << dir.string() << "\n" << summary;
  return kExitOk;
}

struct BoundRun {
  std::vector<DriftRecord> records;
  BoundEstimate estimate;
};

BoundRun bound_run(const RunConfig& cfg, const Prepared& p, const fs::path& dir,
                   bool active_subspace) {
  const AdapterConfig ac = cfg.adapter_config(p.full.dim);
  const TrainConfig tc = cfg.train_config(ac.variant);
  fs::create_directories(dir);
  write_text_atomic(dir / "config.snapshot", cfg.snapshot());
  fs::remove(dir / "telemetry.csv");

  CheckpointRecorder recorder(cfg.count("checkpoint-every"));
  std::unique_ptr<ActiveSubspaceMonitor> monitor;
  FanOut fan;
  fan.add(&recorder);
  if (active_subspace) {
    monitor = std::make_unique<ActiveSubspaceMonitor>(p.unseen);
    fan.add(monitor.get());
  }
  const TrainResult res = train(p.train, tc, ac, &fan, dir / "telemetry.csv");
  save_params(res.adapter, dir / "params.egap");

  LipschitzOptions lo;
  lo.power_iterations = cfg.count("power-iterations");
  lo.max_probes = cfg.count("probes");
  lo.seed = cfg.seed();
  const std::string& jm = cfg.get("jacobian");
  if (jm == "input") {
    lo.mode = JacobianMode::input;
  } else if (jm == "parameter") {
    lo.mode = JacobianMode::parameter;
  } else {
    throw ConfigError("jacobian must be parameter or input, got '" + jm + "'");
  }
  double lipschitz = 0.0;
  for (const auto& ck : recorder.checkpoints()) {
    lipschitz = std::max(lipschitz, estimate_lipschitz(ck.adapter, p.unseen, lo).value);
  }

  BoundRun b;
  b.records = measure_drift(recorder.checkpoints(), p.unseen);
  b.estimate = compute_bound(res.telemetry, lipschitz);
  attach_bound(b.records, res.telemetry, b.estimate);
  for (const auto& r : b.records) {
    if (r.max_drift > r.bound) {
      spdlog::warn("epoch {}: measured drift {:.4g} exceeds the estimated bound {:.4g}", r.epoch,
                   r.max_drift, r.bound);
    }
  }
  write_text_atomic(dir / "bound.csv", bound_report_csv(b.records, b.estimate));

  if (monitor) {
    std::string csv = "epoch,ratio\n";
    for (const auto& [e, ratio] : monitor->ratios()) {
      csv += std::to_string(e) + "," + (ratio ? fmt_full(*ratio) : std::string()) + "\n";
    }
    write_text_atomic(dir / "active_subspace.csv", csv);
  }
  return b;
}

int cmd_bound(const RunConfig& cfg, bool linear_demo, bool contrast, bool active_subspace,
              std::ostream& out) {
  if (linear_demo) {
    LinearDemoOptions o;
    o.seed = cfg.seed();
    const LinearDemoReport r = linear_illustration(o);
    const fs::path dir = run_directory(cfg, "linear-demo");
    fs::create_directories(dir);
    write_text_atomic(dir / "config.snapshot", cfg.snapshot());
    write_text_atomic(dir / "linear_demo.csv", r.to_csv());
    write_text_atomic(dir / "linear_demo.json", r.to_json());
    out << "linear demo " << dir.string() << "\n"
        << "  L " << fmt_real(r.lipschitz) << "  G " << fmt_real(r.grad_bound) << "  eta "
        << fmt_real(r.eta) << "\n"
        << "  final drift " << fmt_real(r.checkpoints.back().max_drift) << " <= bound "
        << fmt_real(r.checkpoints.back().bound) << (r.bound_holds() ? "  (holds)\n" : "  (VIOLATED)\n")
        << "  perturbation in-span " << fmt_real(r.perturbation.in_span) << " orthogonal "
        << fmt_real(r.perturbation.orthogonal) << "\n";
    return r.bound_holds() ? kExitOk : kExitNumeric;
  }

  const Prepared p = prepare(cfg, cfg.get("data"));
  const fs::path dir = run_directory(cfg, contrast ? "bound-contrast" : "bound");
  std::vector<std::string> losses{cfg.get("loss")};
  if (contrast) losses = {"triplet", "infonce"};

  std::vector<BoundRun> runs;
  for (const auto& loss : losses) {
    RunConfig run = cfg;
    run.set("loss", loss);
    runs.push_back(bound_run(run, p, contrast ? dir / loss : dir, active_subspace));
    const auto& last = runs.back().records.back();
    out << loss << ": final mean drift " << fmt_real(last.mean_drift) << ", max drift "
        << fmt_real(last.max_drift) << ", sum rho " << fmt_real(last.rho_integral) << ", bound "
        << fmt_real(last.bound) << "\n";
  }
  if (contrast) {
    write_text_atomic(dir / "config.snapshot", cfg.snapshot());
    std::string csv = "quantity,triplet,infonce\n";
    auto row = [&](const char* name, auto get) {
      csv += std::string(name) + "," + fmt_full(get(runs[0])) + "," + fmt_full(get(runs[1])) + "\n";
    };
    row("final_mean_drift", [](const BoundRun& r) { return r.records.back().mean_drift; });
    row("final_max_drift", [](const BoundRun& r) { return r.records.back().max_drift; });
    row("rho_integral", [](const BoundRun& r) { return r.estimate.rho_integral; });
    row("L_hat", [](const BoundRun& r) { return r.estimate.lipschitz; });
    row("G_hat", [](const BoundRun& r) { return r.estimate.grad_bound; });
    row("eta", [](const BoundRun& r) { return r.estimate.eta; });
    row("bound_value", [](const BoundRun& r) { return r.estimate.value; });
    write_text_atomic(dir / "contrast.csv", csv);
  }
  out << "results in " << dir.string() << "\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& save, std::ostream& out) {
  if (dirs.empty()) throw ConfigError("report: give at least one run directory");
  std::string md = "| run | config | K | nprobe | LP | AR |\n|---|---|---|---|---|---|\n";
  for (const auto& d : dirs) {
    const fs::path path = fs::path(d) / "metrics.json";
    std::ifstream in(path);
    if (!in) throw DataError("report: no metrics.json in " + d);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("report: " + path.string() + ": " + e.what());
    }
    const std::string hash = j["metadata"].value("config_hash", std::string("?"));
    for (const auto& c : j["grid"]) {
      md += "| " + fs::path(d).filename().string() + " | " + hash.substr(0, 12) + " | " +
            std::to_string(c["k"].get<std::size_t>()) + " | " +
            std::to_string(c["nprobe"].get<std::size_t>()) + " | " +
            fmt_real(c["lp"].get<double>()) + " | " + fmt_real(c["ar"].get<double>()) + " |\n";
    }
  }
  if (!save.empty()) write_text_atomic(save, md);
  out << md;
  return kExitOk;
}

void setup_logging(const std::string& level) {
  static bool done = false;
  if (!done) {
    auto logger = spdlog::stderr_color_mt("ega");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    done = true;
  }
  spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app{"Embedding adapter training and evaluation harness", "ega"};
  app.require_subcommand(1);
  std::string config_file, log_level = "info";
  app.add_option("--config", config_file, "key = value config file; flags override it");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  KeyOptions keys;

  auto* gen = app.add_subcommand("gen", "write a synthetic or imported EGAE embedding file");
  std::string gen_out, gen_csv;
  keys.add(gen, "dim", "--d,--dim");
  keys.add_all(gen, {"classes", "per-class", "sigma", "seed"});
  gen->add_option("--out", gen_out, "output .egae path")->required();
  gen->add_option("--from-csv", gen_csv, "import label,v0,v1,... rows instead of sampling");

  auto* train_cmd = app.add_subcommand("train", "train an adapter and evaluate it");
  keys.add_all(train_cmd, kTrainKeys);

  auto* eval = app.add_subcommand("eval", "evaluate raw or adapted embeddings on the K x nprobe grid");
  std::vector<std::string> compare;
  keys.add_all(eval, {"data", "params", "split", "seen-fraction", "db-fraction", "nlist",
                      "nprobes", "ks", "seed", "out", "run-id", "benchmarks"});
  eval->add_option("--compare", compare, "checkpoints to compare by worst-case LP@1");

  auto* sweep = app.add_subcommand("sweep", "train over a list of values of one key and seeds");
  std::string param, values;
  keys.add_all(sweep, kTrainKeys);
  keys.add(sweep, "seeds");
  sweep->add_option("--param", param, "config key to sweep")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();

  auto* bound = app.add_subcommand("bound", "drift versus perturbation bound");
  bool linear_demo = false, contrast = false, active = false;
  keys.add_all(bound, kTrainKeys);
  keys.add_all(bound, {"jacobian", "power-iterations", "probes", "checkpoint-every"});
  bound->add_flag("--linear-demo", linear_demo, "run the exact-constant linear two-class setting");
  bound->add_flag("--contrast", contrast, "train with triplet and with InfoNCE and compare");
  bound->add_flag("--active-subspace", active, "record active-subspace projection ratios");

  auto* report = app.add_subcommand("report", "tabulate metrics.json of finished runs");
  std::vector<std::string> report_dirs;
  std::string report_save;
  report->add_option("runs", report_dirs, "run directories")->required();
  report->add_option("--save", report_save, "also write the table to this file");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, std::cerr);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    setup_logging(log_level);
    RunConfig cfg;
    if (!config_file.empty()) cfg.merge_file(config_file);
    keys.apply(cfg);

    if (gen->parsed()) return cmd_gen(cfg, gen_out, gen_csv, out);
    if (train_cmd->parsed()) return cmd_train(cfg, out);
    if (eval->parsed()) return cmd_eval(cfg, compare, out);
    if (sweep->parsed()) return cmd_sweep(cfg, param, values, out);
    if (bound->parsed()) return cmd_bound(cfg, linear_demo, contrast, active, out);
    if (report->parsed()) return cmd_report(report_dirs, report_save, out);
    return kExitConfig;
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kExitData;
  } catch (const NumericError& e) {
    spdlog::error("numeric error: {}", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitOther;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout);
}

}  // namespace ega::cli
