#include "ega/embeddings.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "ega/error.hpp"
#include "ega/io.hpp"
#include "ega/tensor.hpp"

namespace ega {

std::size_t EmbeddingSet::class_count() const {
  return std::set<std::uint32_t>(labels.begin(), labels.end()).size();
}

EmbeddingSet EmbeddingSet::subset(std::span<const std::size_t> indices) const {
  EmbeddingSet out;
  out.dim = dim;
  out.provenance = provenance;
  out.vectors.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw DataError("subset index out of range");
    auto r = row(i);
    out.vectors.insert(out.vectors.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

namespace {

// Rows within this distance of unit norm are kept bit-for-bit.
constexpr double kRenormTouch = 1e-6;

void normalize_rows(EmbeddingSet& set, LoadStats* stats) {
  std::size_t logged = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto r = set.row(i);
    double sq = 0.0;
    for (float v : r) sq += static_cast<double>(v) * v;
    const double n = std::sqrt(sq);
    if (!(n > kNormEpsilon)) {
      throw DataError("embedding row " + std::to_string(i) + " has zero norm; cannot normalize");
    }
    const double dev = std::abs(n - 1.0);
    if (dev <= kRenormTouch) continue;
    for (float& v : r) v = static_cast<float>(v / n);
    if (dev > kRenormTolerance) {
      ++logged;
      if (stats) ++stats->renormalized;
    }
  }
  if (logged > 0) {
    spdlog::warn("re-normalized {} embedding rows whose norm deviated by more than {}", logged,
                 kRenormTolerance);
  }
}

}  // namespace

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  if (set.vectors.size() != set.size() * set.dim) {
    throw DataError("embedding set: vectors length does not match N*d");
  }
  ByteWriter w;
  w.bytes(kEmbeddingMagic, 4);
  w.u32(kEmbeddingVersion);
  w.u32(static_cast<std::uint32_t>(set.dim));
  w.u32(static_cast<std::uint32_t>(set.size()));
  for (float v : set.vectors) w.f32(v);
  for (std::uint32_t l : set.labels) w.u32(l);
  w.u32(static_cast<std::uint32_t>(set.provenance.size()));
  w.bytes(set.provenance.data(), set.provenance.size());
  write_file_atomic(path, w.buffer());
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, LoadStats* stats) {
  const std::vector<std::uint8_t> buf = read_file(path);
  ByteReader r(buf);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kEmbeddingMagic)) {
    throw FormatError(path.string() + ": bad magic, not an EGAE file");
  }
  const std::uint32_t version = r.u32();
  if (version != kEmbeddingVersion) {
    throw FormatError(path.string() + ": unsupported EGAE version " + std::to_string(version));
  }
  EmbeddingSet set;
  set.dim = r.u32();
  const std::uint64_t n = r.u32();
  if (set.dim == 0) throw FormatError(path.string() + ": zero dimension");
  const std::uint64_t body = n * set.dim * 4 + n * 4 + 4;
  if (r.remaining() < body) {
    throw FormatError(path.string() + ": file shorter than its header declares");
  }
  set.vectors.resize(n * set.dim);
  for (float& v : set.vectors) v = r.f32();
  set.labels.resize(n);
  for (std::uint32_t& l : set.labels) l = r.u32();
  const std::uint32_t plen = r.u32();
  if (r.remaining() != plen) {
    throw FormatError(path.string() + ": size mismatch in provenance block");
  }
  set.provenance.resize(plen);
  r.bytes(set.provenance.data(), plen);
  if (!all_finite<float>(set.vectors)) {
    throw DataError(path.string() + ": non-finite embedding values");
  }
  normalize_rows(set, stats);
  return set;
}

EmbeddingSet import_csv(const std::filesystem::path& path, LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  EmbeddingSet set;
  set.provenance = "csv/" + path.filename().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && !std::isdigit(static_cast<unsigned char>(line[0]))) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<float> row;
    std::getline(ss, cell, ',');
    const auto label = static_cast<std::uint32_t>(std::stoul(cell));
    while (std::getline(ss, cell, ',')) row.push_back(std::stof(cell));
    if (set.dim == 0) set.dim = row.size();
    if (row.size() != set.dim || row.empty()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": inconsistent row width");
    }
    set.vectors.insert(set.vectors.end(), row.begin(), row.end());
    set.labels.push_back(label);
  }
  if (set.size() == 0) throw DataError(path.string() + ": no rows");
  if (!all_finite<float>(set.vectors)) throw DataError(path.string() + ": non-finite values");
  normalize_rows(set, stats);
  return set;
}

EmbeddingSet gen_synthetic(std::size_t dim, std::size_t n_classes, std::size_t n_per_class,
                           double sigma, std::uint64_t seed) {
  if (dim < 2) throw ConfigError("gen_synthetic: dim must be >= 2");
  if (sigma < 0.0) throw ConfigError("gen_synthetic: sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto unit_gaussian = [&] {
    std::vector<double> v(dim);
    double n = 0.0;
    while (!(n > 1e-8)) {
      for (double& x : v) x = normal(rng);
      n = norm2<double>(v);
    }
    for (double& x : v) x /= n;
    return v;
  };

  std::vector<std::vector<double>> means;
  means.reserve(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) means.push_back(unit_gaussian());

  EmbeddingSet set;
  set.dim = dim;
  std::ostringstream prov;
  prov << "synthetic/d=" << dim << "/classes=" << n_classes << "/per_class=" << n_per_class
       << "/sigma=" << sigma << "/seed=" << seed;
  set.provenance = prov.str();
  set.vectors.reserve(n_classes * n_per_class * dim);
  set.labels.reserve(n_classes * n_per_class);

  std::vector<double> sample(dim);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      if (sigma == 0.0) {
        sample = means[c];
      } else {
        for (std::size_t k = 0; k < dim; ++k) sample[k] = means[c][k] + sigma * normal(rng);
        const double n = norm2<double>(sample);
        for (double& x : sample) x /= n;
      }
      for (double x : sample) set.vectors.push_back(static_cast<float>(x));
      set.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return set;
}

namespace {

void stratified_split(const EmbeddingSet& set, std::span<const std::uint32_t> classes,
                      double db_fraction, std::mt19937_64& rng, Split& out) {
  std::map<std::uint32_t, std::vector<std::size_t>> members;
  for (std::uint32_t c : classes) members[c];
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto it = members.find(set.labels[i]);
    if (it != members.end()) it->second.push_back(i);
  }
  for (auto& [label, idx] : members) {
    const auto n = static_cast<long>(idx.size());
    const long n_db = std::lround(db_fraction * static_cast<double>(n));
    if (n_db < 1 || n - n_db < 1) {
      throw DataError("class " + std::to_string(label) + " has " + std::to_string(n) +
                      " samples; needs enough for both database and query sides");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    out.database.insert(out.database.end(), idx.begin(), idx.begin() + n_db);
    out.queries.insert(out.queries.end(), idx.begin() + n_db, idx.end());
  }
  std::sort(out.database.begin(), out.database.end());
  std::sort(out.queries.begin(), out.queries.end());
}

}  // namespace

Split make_split(const EmbeddingSet& set, const SplitSpec& spec) {
  if (!(spec.db_fraction > 0.0 && spec.db_fraction < 1.0)) {
    throw ConfigError("db_fraction must be in (0, 1)");
  }
  std::set<std::uint32_t> class_set(set.labels.begin(), set.labels.end());
  std::vector<std::uint32_t> classes(class_set.begin(), class_set.end());
  std::mt19937_64 rng(spec.seed);
  Split out;

  if (spec.mode == SplitMode::id_7525) {
    out.seen_classes = classes;
    stratified_split(set, classes, spec.db_fraction, rng, out);
    out.train = out.database;
    return out;
  }

  if (!(spec.seen_fraction > 0.0 && spec.seen_fraction < 1.0)) {
    throw ConfigError("seen_fraction must be in (0, 1)");
  }
  const long n_seen = std::lround(spec.seen_fraction * static_cast<double>(classes.size()));
  if (n_seen < 1 || n_seen >= static_cast<long>(classes.size())) {
    throw DataError("ood split needs at least one seen and one unseen class");
  }
  std::vector<std::uint32_t> shuffled = classes;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  out.seen_classes.assign(shuffled.begin(), shuffled.begin() + n_seen);
  out.unseen_classes.assign(shuffled.begin() + n_seen, shuffled.end());
  std::sort(out.seen_classes.begin(), out.seen_classes.end());
  std::sort(out.unseen_classes.begin(), out.unseen_classes.end());

  const std::set<std::uint32_t> seen(out.seen_classes.begin(), out.seen_classes.end());
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (seen.count(set.labels[i])) out.train.push_back(i);
  }
  stratified_split(set, out.unseen_classes, spec.db_fraction, rng, out);
  return out;
}

const char* to_string(SplitMode mode) {
  return mode == SplitMode::id_7525 ? "id" : "ood";
}

SplitMode parse_split_mode(const std::string& s) {
  if (s == "id" || s == "id_7525") return SplitMode::id_7525;
  if (s == "ood" || s == "ood_class_disjoint") return SplitMode::ood_class_disjoint;
  throw ConfigError("unknown split mode '" + s + "' (expected id or ood)");
}

}  // namespace ega
