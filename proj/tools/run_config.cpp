#include "run_config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ega/error.hpp"
#include "ega/io.hpp"

namespace ega::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("'" + key + "' must be a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' is out of range: '" + v + "'");
  }
}

// Keys that only say where results go.
bool is_location_key(const std::string& key) {
  return key == "out" || key == "run-id" || key == "config";
}

}  // namespace

const std::vector<KeyInfo>& config_keys() {
  static const std::vector<KeyInfo> keys{
      {"ablate", "none", "none, no-residual, no-zero-init or no-l2"},
      {"batch-size", "256", "training batch size"},
      {"benchmarks", "", "name:path.egae pairs for --compare, comma separated"},
      {"checkpoint-every", "1", "epochs between bound checkpoints"},
      {"classes", "10", "synthetic class count"},
      {"data", "", "input EGAE file"},
      {"db-fraction", "0.75", "database share of the evaluation pool"},
      {"dim", "64", "synthetic embedding dimension"},
      {"epochs", "50", "training epochs"},
      {"hidden", "auto", "EGA hidden width (auto: 4 x dim)"},
      {"jacobian", "parameter", "Lipschitz Jacobian for bound: parameter or input"},
      {"ks", "1,3,5,10", "K values of the metric grid"},
      {"loss", "triplet", "triplet or infonce"},
      {"lr", "auto", "peak learning rate (auto: 1e-4 EGA, 1e-3 LoRA)"},
      {"lr-min", "0", "final cosine learning rate"},
      {"margin", "0.2", "triplet margin"},
      {"nlist", "10", "IVF centroid count"},
      {"nprobes", "1,5,10", "nprobe values of the metric grid"},
      {"out", "runs", "output root (EGA_OUT_DIR wins)"},
      {"params", "", "adapter parameters (.egap) to evaluate"},
      {"per-class", "200", "synthetic samples per class"},
      {"power-iterations", "20", "power iterations per Lipschitz probe"},
      {"probes", "64", "Lipschitz probe points"},
      {"rank", "128", "LoRA rank"},
      {"run-id", "", "run directory name"},
      {"seed", "42", "seed for data, split, init and sampling"},
      {"seeds", "42,123,456", "seeds of a sweep"},
      {"seen-fraction", "0.8", "share of classes seen in an ood split"},
      {"sigma", "0.05", "synthetic noise level"},
      {"split", "ood", "id or ood"},
      {"temperature", "0.07", "InfoNCE temperature"},
      {"variant", "ega", "ega or lora"},
      {"weight-decay", "1e-4", "AdamW weight decay"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = trim(value);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';' || t[0] == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string value = trim(t.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    set(trim(t.substr(0, eq)), value);
  }
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(x)) {
    throw ConfigError("'" + key + "' must be a number, got '" + v + "'");
  }
  return x;
}

std::size_t RunConfig::count(const std::string& key) const {
  return static_cast<std::size_t>(parse_unsigned(key, get(key)));
}

std::uint64_t RunConfig::seed() const { return parse_unsigned("seed", get("seed")); }

std::vector<std::size_t> RunConfig::count_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(get(key))) {
    out.push_back(static_cast<std::size_t>(parse_unsigned(key, item)));
  }
  if (out.empty()) throw ConfigError("'" + key + "' must list at least one value");
  return out;
}

std::vector<std::uint64_t> RunConfig::seed_list() const {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(get("seeds"))) out.push_back(parse_unsigned("seeds", item));
  if (out.empty()) throw ConfigError("'seeds' must list at least one value");
  return out;
}

std::string RunConfig::snapshot() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    if (is_location_key(k)) continue;
    out += k + " = " + v + "\n";
  }
  return out;
}

std::string RunConfig::hash() const { return hex64(fnv1a64(snapshot())); }

AdapterConfig RunConfig::adapter_config(std::size_t dim) const {
  AdapterConfig c;
  c.variant = parse_variant(get("variant"));
  c.dim = dim;
  c.hidden = get("hidden") == "auto" ? 4 * dim : count("hidden");
  c.rank = count("rank");
  c.seed = seed();
  const std::string& ab = get("ablate");
  if (ab == "no-residual") {
    c.use_residual = false;
  } else if (ab == "no-zero-init") {
    c.use_zero_init = false;
  } else if (ab == "no-l2") {
    c.use_l2_norm = false;
  } else if (ab != "none") {
    throw ConfigError("unknown ablation '" + ab + "'");
  }
  return c;
}

TrainConfig RunConfig::train_config(Variant variant) const {
  TrainConfig t;
  t.epochs = count("epochs");
  t.batch_size = count("batch-size");
  t.lr = get("lr") == "auto" ? default_lr(variant) : real("lr");
  t.lr_min = real("lr-min");
  t.weight_decay = real("weight-decay");
  t.margin = real("margin");
  t.loss = parse_loss_kind(get("loss"));
  t.temperature = real("temperature");
  t.seed = seed();
  return t;
}

SplitSpec RunConfig::split_spec() const {
  return {parse_split_mode(get("split")), real("seen-fraction"), real("db-fraction"), seed()};
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions e;
  e.ks = count_list("ks");
  e.nprobes = count_list("nprobes");
  e.nlist = count("nlist");
  e.seed = seed();
  for (std::size_t np : e.nprobes) {
    if (np < 1 || np > e.nlist) {
      throw ConfigError("nprobe " + std::to_string(np) + " outside [1, nlist]");
    }
  }
  return e;
}

std::filesystem::path output_root(const RunConfig& cfg) {
  if (const char* env = std::getenv("EGA_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return cfg.get("out");
}

std::filesystem::path run_directory(const RunConfig& cfg, const std::string& command) {
  const std::string id = cfg.has_value("run-id") ? cfg.get("run-id")
                                                 : command + "-" + cfg.hash().substr(0, 12);
  return output_root(cfg) / id;
}

}  // namespace ega::cli
