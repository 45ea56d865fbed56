#include "ega/adapter.hpp"

#include <cmath>
#include <random>

#include "ega/error.hpp"
#include "ega/io.hpp"

namespace ega {

namespace {

// Slice indices inside one EGA block, and the Refine slices after both blocks.
constexpr std::size_t kGateDownW = 0;
constexpr std::size_t kGateDownB = 1;
constexpr std::size_t kGateUpW = 2;
constexpr std::size_t kGateUpB = 3;
constexpr std::size_t kExpandW = 4;
constexpr std::size_t kExpandB = 5;
constexpr std::size_t kProjectW = 6;
constexpr std::size_t kProjectB = 7;
constexpr std::size_t kSlicesPerBlock = 8;
constexpr std::size_t kRefineW = 2 * kSlicesPerBlock;
constexpr std::size_t kRefineB = kRefineW + 1;

constexpr std::size_t kLoraA = 0;
constexpr std::size_t kLoraB = 1;

constexpr double kUnitTolerance = 1e-4;

template <typename T>
std::span<const T> cspan(const std::vector<T>& v) {
  return {v.data(), v.size()};
}

}  // namespace

const char* to_string(Variant v) {
  return v == Variant::ega ? "ega" : "lora";
}

Variant parse_variant(const std::string& s) {
  if (s == "ega") return Variant::ega;
  if (s == "lora") return Variant::lora;
  throw ConfigError("unknown adapter variant '" + s + "' (expected ega or lora)");
}

std::vector<ParamSlice> param_layout(const AdapterConfig& cfg) {
  const std::size_t d = cfg.dim;
  std::vector<ParamSlice> out;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    out.push_back({std::move(name), offset, rows, cols});
    offset += rows * cols;
  };

  if (cfg.variant == Variant::lora) {
    if (d == 0 || cfg.rank == 0) throw ConfigError("lora: dim and rank must be positive");
    add("lora.A", cfg.rank, d);
    add("lora.B", d, cfg.rank);
    return out;
  }

  if (d < 4 || d % 4 != 0) throw ConfigError("ega: dim must be a positive multiple of 4");
  if (cfg.hidden == 0) throw ConfigError("ega: hidden dim must be positive");
  const std::size_t q = d / 4;
  const std::size_t h = cfg.hidden;
  for (int b = 0; b < 2; ++b) {
    const std::string p = "block" + std::to_string(b + 1) + ".";
    add(p + "gate_down.weight", q, d);
    add(p + "gate_down.bias", q, 1);
    add(p + "gate_up.weight", d, q);
    add(p + "gate_up.bias", d, 1);
    add(p + "expand.weight", h, d);
    add(p + "expand.bias", h, 1);
    add(p + "project.weight", d, h);
    add(p + "project.bias", d, 1);
  }
  add("refine.weight", d, d);
  add("refine.bias", d, 1);
  return out;
}

template <typename T>
Adapter<T>::Adapter(const AdapterConfig& cfg) : cfg_(cfg), layout_(param_layout(cfg)) {
  const auto& last = layout_.back();
  params_.assign(last.offset + last.size(), T(0));
  initialize();
}

template <typename T>
Adapter<T>::Adapter(const AdapterConfig& cfg, std::vector<T> params)
    : cfg_(cfg), layout_(param_layout(cfg)), params_(std::move(params)) {
  const auto& last = layout_.back();
  if (params_.size() != last.offset + last.size()) {
    throw DimensionError("adapter parameter count does not match layout");
  }
}

template <typename T>
void Adapter<T>::initialize() {
  std::mt19937_64 rng(cfg_.seed);

  // Kaiming-uniform with fan-in, as nn.Linear does by default: U(-1/sqrt(fan_in), +).
  auto fill_uniform = [&](std::size_t k, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    auto s = slice(k);
    for (std::size_t i = 0; i < s.size(); ++i) s.data[i] = static_cast<T>(u(rng));
  };

  if (cfg_.variant == Variant::lora) {
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(cfg_.dim)));
    auto a = slice(kLoraA);
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] = static_cast<T>(n(rng));
    if (!cfg_.use_zero_init) fill_uniform(kLoraB, cfg_.rank);
    return;
  }

  const bool zero = cfg_.use_zero_init;
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t base = b * kSlicesPerBlock;
    fill_uniform(base + kGateDownW, cfg_.dim);
    fill_uniform(base + kGateUpW, cfg_.dim / 4);
    fill_uniform(base + kExpandW, cfg_.dim);
    if (!zero) {
      fill_uniform(base + kGateDownB, cfg_.dim);
      fill_uniform(base + kGateUpB, cfg_.dim / 4);
      fill_uniform(base + kExpandB, cfg_.dim);
      fill_uniform(base + kProjectW, cfg_.hidden);
      fill_uniform(base + kProjectB, cfg_.hidden);
    }
  }
  // Identity Refine only makes sense on top of a residual path; without one
  // the zero-initialized blocks emit exactly zero and Refine must not.
  if (zero && cfg_.use_residual) {
    auto r = slice(kRefineW);
    for (std::size_t i = 0; i < cfg_.dim; ++i) r(i, i) = T(1);
  } else {
    fill_uniform(kRefineW, cfg_.dim);
    fill_uniform(kRefineB, cfg_.dim);
  }
}

template <typename T>
MatrixView<T> Adapter<T>::slice(std::size_t k) {
  const auto& s = layout_.at(k);
  return {params_.data() + s.offset, s.rows, s.cols};
}

template <typename T>
MatrixView<const T> Adapter<T>::slice(std::size_t k) const {
  const auto& s = layout_.at(k);
  return {params_.data() + s.offset, s.rows, s.cols};
}

template <typename T>
std::size_t Adapter<T>::slice_index(const std::string& name) const {
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    if (layout_[i].name == name) return i;
  }
  throw ConfigError("no parameter slice named " + name);
}

namespace {

template <typename T>
std::span<const T> vec(MatrixView<const T> m) {
  return {m.data, m.size()};
}

template <typename T>
MatrixView<T> grad_view(std::span<T> grad, const ParamSlice& s) {
  return {grad.data() + s.offset, s.rows, s.cols};
}

template <typename T>
std::span<T> grad_vec(std::span<T> grad, const ParamSlice& s) {
  return grad.subspan(s.offset, s.size());
}

}  // namespace

template <typename T>
void Adapter<T>::block_forward(std::size_t b, std::span<const T> x,
                               typename ForwardCache<T>::Block& bc, std::span<T> y) const {
  const std::size_t base = b * kSlicesPerBlock;
  const std::size_t d = cfg_.dim;
  const std::size_t h = cfg_.hidden;
  bc.x.assign(x.begin(), x.end());
  bc.u.resize(d / 4);
  bc.gu.resize(d / 4);
  bc.s.resize(d);
  bc.g.resize(d);
  bc.e.resize(h);
  bc.ge.resize(h);

  matvec<T>(slice(base + kGateDownW), x, bc.u, vec(slice(base + kGateDownB)));
  gelu<T>(cspan(bc.u), bc.gu);
  matvec<T>(slice(base + kGateUpW), cspan(bc.gu), bc.s, vec(slice(base + kGateUpB)));
  for (std::size_t i = 0; i < d; ++i) {
    bc.s[i] = sigmoid(bc.s[i]);
    bc.g[i] = x[i] * bc.s[i];
  }
  matvec<T>(slice(base + kExpandW), cspan(bc.g), bc.e, vec(slice(base + kExpandB)));
  gelu<T>(cspan(bc.e), bc.ge);
  matvec<T>(slice(base + kProjectW), cspan(bc.ge), y, vec(slice(base + kProjectB)));
  if (cfg_.use_residual) {
    for (std::size_t i = 0; i < d; ++i) y[i] += x[i];
  }
}

template <typename T>
void Adapter<T>::ega_forward(std::span<const T> z, ForwardCache<T>& c) const {
  const std::size_t d = cfg_.dim;
  std::vector<T> y1(d);
  c.refine_in.resize(d);
  block_forward(0, z, c.blocks[0], y1);
  block_forward(1, cspan(y1), c.blocks[1], c.refine_in);
  c.pre_norm.resize(d);
  matvec<T>(slice(kRefineW), cspan(c.refine_in), c.pre_norm, vec(slice(kRefineB)));
}

template <typename T>
void Adapter<T>::lora_forward(std::span<const T> z, ForwardCache<T>& c) const {
  const std::size_t d = cfg_.dim;
  c.low_rank.resize(cfg_.rank);
  c.pre_norm.resize(d);
  matvec<T>(slice(kLoraA), z, c.low_rank);
  matvec<T>(slice(kLoraB), cspan(c.low_rank), c.pre_norm);
  if (cfg_.use_residual) {
    for (std::size_t i = 0; i < d; ++i) c.pre_norm[i] += z[i];
  }
}

template <typename T>
void Adapter<T>::forward(std::span<const T> z, std::span<T> out, ForwardCache<T>* cache) const {
  const std::size_t d = cfg_.dim;
  if (z.size() != d || out.size() != d) throw DimensionError("adapter forward: dimension mismatch");
  const double zn = static_cast<double>(norm2(z));
  if (std::abs(zn - 1.0) > kUnitTolerance) {
    throw DataError("adapter forward: input is not unit norm (|z| = " + std::to_string(zn) + ")");
  }
  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.filled = false;
  c.input.assign(z.begin(), z.end());
  if (cfg_.variant == Variant::ega) {
    ega_forward(z, c);
  } else {
    lora_forward(z, c);
  }
  c.output.resize(d);
  if (cfg_.use_l2_norm) {
    c.pre_norm_length = l2_normalize<T>(cspan(c.pre_norm), c.output);
  } else {
    c.output = c.pre_norm;
    c.pre_norm_length = T(1);
  }
  std::copy(c.output.begin(), c.output.end(), out.begin());
  c.filled = true;
}

template <typename T>
std::vector<T> Adapter<T>::forward(std::span<const T> z) const {
  std::vector<T> out(cfg_.dim);
  forward(z, out);
  return out;
}

template <typename T>
void Adapter<T>::block_backward(std::size_t b, const typename ForwardCache<T>::Block& bc,
                                std::span<const T> dy, std::span<T> grad,
                                std::span<T> dx) const {
  const std::size_t base = b * kSlicesPerBlock;
  const std::size_t d = cfg_.dim;
  const std::size_t h = cfg_.hidden;
  const auto& L = layout_;

  // project: r = Wout ge + bout
  outer_acc<T>(dy, cspan(bc.ge), grad_view(grad, L[base + kProjectW]));
  axpy<T>(T(1), dy, grad_vec(grad, L[base + kProjectB]));
  std::vector<T> de(h, T(0));
  matvec_transposed_acc<T>(slice(base + kProjectW), dy, de);
  for (std::size_t i = 0; i < h; ++i) de[i] *= gelu_grad(bc.e[i]);

  // expand: e = Win g + bin
  outer_acc<T>(cspan(de), cspan(bc.g), grad_view(grad, L[base + kExpandW]));
  axpy<T>(T(1), cspan(de), grad_vec(grad, L[base + kExpandB]));
  std::vector<T> dg(d, T(0));
  matvec_transposed_acc<T>(slice(base + kExpandW), cspan(de), dg);

  // gate: g = x * s, s = sigmoid(W2 gelu(W1 x + b1) + b2)
  std::vector<T> dv(d);
  for (std::size_t i = 0; i < d; ++i) {
    dx[i] = (cfg_.use_residual ? dy[i] : T(0)) + dg[i] * bc.s[i];
    dv[i] = dg[i] * bc.x[i] * bc.s[i] * (T(1) - bc.s[i]);
  }
  outer_acc<T>(cspan(dv), cspan(bc.gu), grad_view(grad, L[base + kGateUpW]));
  axpy<T>(T(1), cspan(dv), grad_vec(grad, L[base + kGateUpB]));
  std::vector<T> du(d / 4, T(0));
  matvec_transposed_acc<T>(slice(base + kGateUpW), cspan(dv), du);
  for (std::size_t i = 0; i < du.size(); ++i) du[i] *= gelu_grad(bc.u[i]);
  outer_acc<T>(cspan(du), cspan(bc.x), grad_view(grad, L[base + kGateDownW]));
  axpy<T>(T(1), cspan(du), grad_vec(grad, L[base + kGateDownB]));
  matvec_transposed_acc<T>(slice(base + kGateDownW), cspan(du), dx);
}

template <typename T>
void Adapter<T>::backward(const ForwardCache<T>& cache, std::span<const T> upstream,
                          std::span<T> param_grad, std::span<T> input_grad) const {
  if (!cache.filled) throw NumericError("adapter backward: no cached forward pass");
  const std::size_t d = cfg_.dim;
  if (upstream.size() != d || param_grad.size() != params_.size() ||
      (!input_grad.empty() && input_grad.size() != d)) {
    throw DimensionError("adapter backward: dimension mismatch");
  }

  std::vector<T> dq(d);
  if (cfg_.use_l2_norm) {
    l2_normalize_jvp<T>(cspan(cache.output), cache.pre_norm_length, upstream, dq);
  } else {
    std::copy(upstream.begin(), upstream.end(), dq.begin());
  }

  std::vector<T> dz(d, T(0));
  if (cfg_.variant == Variant::lora) {
    outer_acc<T>(cspan(dq), cspan(cache.low_rank), grad_view(param_grad, layout_[kLoraB]));
    std::vector<T> da(cfg_.rank, T(0));
    matvec_transposed_acc<T>(slice(kLoraB), cspan(dq), da);
    outer_acc<T>(cspan(da), cspan(cache.input), grad_view(param_grad, layout_[kLoraA]));
    if (!input_grad.empty()) {
      if (cfg_.use_residual) dz = dq;
      matvec_transposed_acc<T>(slice(kLoraA), cspan(da), dz);
    }
  } else {
    outer_acc<T>(cspan(dq), cspan(cache.refine_in), grad_view(param_grad, layout_[kRefineW]));
    axpy<T>(T(1), cspan(dq), grad_vec(param_grad, layout_[kRefineB]));
    std::vector<T> dy2(d, T(0));
    matvec_transposed_acc<T>(slice(kRefineW), cspan(dq), dy2);
    std::vector<T> dy1(d);
    block_backward(1, cache.blocks[1], cspan(dy2), param_grad, dy1);
    block_backward(0, cache.blocks[0], cspan(dy1), param_grad, dz);
  }
  if (!input_grad.empty()) std::copy(dz.begin(), dz.end(), input_grad.begin());
}

template <typename T>
void Adapter<T>::add_tangent(std::span<const T> dtheta, std::size_t weight, std::size_t bias,
                             std::span<const T> input, std::span<T> out) const {
  if (dtheta.empty()) return;
  const ParamSlice& w = layout_[weight];
  std::vector<T> tmp(out.size());
  if (bias < layout_.size()) {
    matvec<T>(MatrixView<const T>{dtheta.data() + w.offset, w.rows, w.cols}, input, tmp,
              dtheta.subspan(layout_[bias].offset, layout_[bias].size()));
  } else {
    matvec<T>(MatrixView<const T>{dtheta.data() + w.offset, w.rows, w.cols}, input, tmp);
  }
  axpy<T>(T(1), cspan(tmp), out);
}

template <typename T>
void Adapter<T>::block_jvp(std::size_t b, const typename ForwardCache<T>::Block& bc,
                           std::span<const T> dx, std::span<const T> dtheta,
                           std::span<T> dy) const {
  const std::size_t base = b * kSlicesPerBlock;
  const std::size_t d = cfg_.dim;
  const std::size_t h = cfg_.hidden;
  std::vector<T> du(d / 4);
  matvec<T>(slice(base + kGateDownW), dx, du);
  add_tangent(dtheta, base + kGateDownW, base + kGateDownB, cspan(bc.x), du);
  for (std::size_t i = 0; i < du.size(); ++i) du[i] *= gelu_grad(bc.u[i]);
  std::vector<T> dv(d);
  matvec<T>(slice(base + kGateUpW), cspan(du), dv);
  add_tangent(dtheta, base + kGateUpW, base + kGateUpB, cspan(bc.gu), dv);
  std::vector<T> dg(d);
  for (std::size_t i = 0; i < d; ++i) {
    dg[i] = dx[i] * bc.s[i] + bc.x[i] * bc.s[i] * (T(1) - bc.s[i]) * dv[i];
  }
  std::vector<T> de(h);
  matvec<T>(slice(base + kExpandW), cspan(dg), de);
  add_tangent(dtheta, base + kExpandW, base + kExpandB, cspan(bc.g), de);
  for (std::size_t i = 0; i < h; ++i) de[i] *= gelu_grad(bc.e[i]);
  matvec<T>(slice(base + kProjectW), cspan(de), dy);
  add_tangent(dtheta, base + kProjectW, base + kProjectB, cspan(bc.ge), dy);
  if (cfg_.use_residual) {
    for (std::size_t i = 0; i < d; ++i) dy[i] += dx[i];
  }
}

template <typename T>
void Adapter<T>::jvp(const ForwardCache<T>& cache, std::span<const T> dz,
                     std::span<const T> dtheta, std::span<T> out) const {
  if (!cache.filled) throw NumericError("adapter jvp: no cached forward pass");
  const std::size_t d = cfg_.dim;
  if ((!dz.empty() && dz.size() != d) || out.size() != d ||
      (!dtheta.empty() && dtheta.size() != params_.size())) {
    throw DimensionError("adapter jvp: dimension mismatch");
  }
  const std::vector<T> zeros(d, T(0));
  if (dz.empty()) dz = cspan(zeros);

  std::vector<T> dq(d);
  if (cfg_.variant == Variant::lora) {
    std::vector<T> da(cfg_.rank);
    matvec<T>(slice(kLoraA), dz, da);
    add_tangent(dtheta, kLoraA, layout_.size(), cspan(cache.input), da);
    matvec<T>(slice(kLoraB), cspan(da), dq);
    add_tangent(dtheta, kLoraB, layout_.size(), cspan(cache.low_rank), dq);
    if (cfg_.use_residual) axpy<T>(T(1), dz, dq);
  } else {
    std::vector<T> dy1(d), dy2(d);
    block_jvp(0, cache.blocks[0], dz, dtheta, dy1);
    block_jvp(1, cache.blocks[1], cspan(dy1), dtheta, dy2);
    matvec<T>(slice(kRefineW), cspan(dy2), dq);
    add_tangent(dtheta, kRefineW, kRefineB, cspan(cache.refine_in), dq);
  }
  if (cfg_.use_l2_norm) {
    l2_normalize_jvp<T>(cspan(cache.output), cache.pre_norm_length, cspan(dq), out);
  } else {
    std::copy(dq.begin(), dq.end(), out.begin());
  }
}

template class Adapter<float>;
template class Adapter<double>;

// ---------------------------------------------------------------------------

void save_params(const Adapter<float>& adapter, const std::filesystem::path& path) {
  const auto& cfg = adapter.config();
  ByteWriter w;
  w.bytes(kParamMagic, 4);
  w.u32(kParamVersion);
  w.u8(static_cast<std::uint8_t>(cfg.variant));
  w.u8(static_cast<std::uint8_t>((cfg.use_residual ? 1 : 0) | (cfg.use_zero_init ? 2 : 0) |
                                 (cfg.use_l2_norm ? 4 : 0)));
  w.u32(static_cast<std::uint32_t>(cfg.dim));
  w.u32(static_cast<std::uint32_t>(cfg.variant == Variant::ega ? cfg.hidden : cfg.rank));
  w.u64(cfg.seed);
  w.u64(adapter.param_count());
  for (float v : adapter.params()) w.f32(v);
  write_file_atomic(path, w.buffer());
}

Adapter<float> load_params(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> buf = read_file(path);
  ByteReader r(buf);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kParamMagic)) {
    throw FormatError(path.string() + ": bad magic, not an EGAP file");
  }
  const std::uint32_t version = r.u32();
  if (version != kParamVersion) {
    throw FormatError(path.string() + ": unsupported EGAP version " + std::to_string(version));
  }
  AdapterConfig cfg;
  const std::uint8_t tag = r.u8();
  if (tag != static_cast<std::uint8_t>(Variant::ega) &&
      tag != static_cast<std::uint8_t>(Variant::lora)) {
    throw FormatError(path.string() + ": unknown variant tag " + std::to_string(tag));
  }
  cfg.variant = static_cast<Variant>(tag);
  const std::uint8_t flags = r.u8();
  cfg.use_residual = flags & 1;
  cfg.use_zero_init = flags & 2;
  cfg.use_l2_norm = flags & 4;
  cfg.dim = r.u32();
  const std::uint32_t aux = r.u32();
  (cfg.variant == Variant::ega ? cfg.hidden : cfg.rank) = aux;
  cfg.seed = r.u64();
  const std::uint64_t count = r.u64();

  std::vector<ParamSlice> layout;
  try {
    layout = param_layout(cfg);
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": invalid dimensions (" + e.what() + ")");
  }
  const std::uint64_t expected = layout.back().offset + layout.back().size();
  if (count != expected) throw FormatError(path.string() + ": parameter count mismatch");
  if (r.remaining() != count * 4) {
    throw FormatError(path.string() + ": truncated or oversized parameter block");
  }
  std::vector<float> params(count);
  for (float& v : params) v = r.f32();
  return Adapter<float>(cfg, std::move(params));
}

Adapter<float> load_params(const std::filesystem::path& path, Variant expected) {
  Adapter<float> a = load_params(path);
  if (a.config().variant != expected) {
    throw VariantMismatchError(path.string() + ": holds a " + to_string(a.config().variant) +
                               " adapter, expected " + to_string(expected));
  }
  return a;
}

}  // namespace ega
