#pragma once

// Residual adapters applied on top of frozen unit-norm embeddings.
//
// Two variants share one parameter container:
//   * EGA: two gated residual blocks, a linear Refine projection and an
//     l2 projection back onto the unit sphere.
//       Gate(x)  = x * sigmoid(W2 gelu(W1 x + b1) + b2)        W1: d/4 x d
//       Block(x) = x + Wout gelu(Win Gate(x) + bin) + bout     Win: h x d
//       f(z)     = l2(Wr Block2(Block1(z)) + br)
//   * LoRA: f(z) = l2(z + B A z) with A: r x d, B: d x r.
//
// All weights live in one flat buffer described by a slice layout, so the
// optimizer, serializer and gradient norms work on plain spans.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ega/tensor.hpp"

namespace ega {

enum class Variant : std::uint8_t { ega = 1, lora = 2 };

const char* to_string(Variant v);
Variant parse_variant(const std::string& s);

struct AdapterConfig {
  Variant variant = Variant::ega;
  bool use_residual = true;
  bool use_zero_init = true;
  bool use_l2_norm = true;
  std::size_t dim = 512;
  std::size_t hidden = 2048;  // EGA only
  std::size_t rank = 128;     // LoRA only
  std::uint64_t seed = 42;

  bool operator==(const AdapterConfig&) const = default;
};

struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;  // 1 for bias vectors

  std::size_t size() const { return rows * cols; }
  bool operator==(const ParamSlice&) const = default;
};

/// Slice layout for a config, in serialization order.
std::vector<ParamSlice> param_layout(const AdapterConfig& cfg);

/// x * sigmoid(W2 gelu(W1 x + b1) + b2); empty biases are treated as zero.
template <typename T>
std::vector<T> gate_forward(MatrixView<const T> w1, std::span<const T> b1,
                            MatrixView<const T> w2, std::span<const T> b2,
                            std::span<const T> x) {
  std::vector<T> u(w1.rows), s(w2.rows);
  matvec<T>(w1, x, u, b1);
  const std::vector<T> gu = gelu<T>(u);
  matvec<T>(w2, gu, s, b2);
  if (s.size() != x.size()) throw DimensionError("gate_forward: gate width differs from input");
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = x[i] * sigmoid(s[i]);
  return s;
}

/// Activations saved by forward() for the backward and JVP passes.
template <typename T>
struct ForwardCache {
  struct Block {
    std::vector<T> x, u, gu, s, g, e, ge;
  };
  bool filled = false;
  std::array<Block, 2> blocks;
  std::vector<T> input;      // z
  std::vector<T> pre_norm;   // q, the vector handed to l2 normalization
  std::vector<T> refine_in;  // EGA: Block2 output
  std::vector<T> low_rank;   // LoRA: A z
  std::vector<T> output;
  T pre_norm_length = T(1);
};

template <typename T>
class Adapter {
 public:
  /// Builds and initializes the adapter deterministically from cfg.seed.
  explicit Adapter(const AdapterConfig& cfg);
  /// Wraps existing parameter values (length must match the layout).
  Adapter(const AdapterConfig& cfg, std::vector<T> params);

  const AdapterConfig& config() const { return cfg_; }
  const std::vector<ParamSlice>& layout() const { return layout_; }
  std::size_t dim() const { return cfg_.dim; }
  std::size_t param_count() const { return params_.size(); }

  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }

  MatrixView<T> slice(std::size_t k);
  MatrixView<const T> slice(std::size_t k) const;
  /// Index of a named slice; throws if absent.
  std::size_t slice_index(const std::string& name) const;

  /// out = f(z). `cache` (optional) receives the activations for backward().
  void forward(std::span<const T> z, std::span<T> out, ForwardCache<T>* cache = nullptr) const;
  std::vector<T> forward(std::span<const T> z) const;

  /// Accumulates d<upstream, f(z)>/dtheta into param_grad and, when
  /// input_grad is non-empty, writes d<upstream, f(z)>/dz into it.
  void backward(const ForwardCache<T>& cache, std::span<const T> upstream,
                std::span<T> param_grad, std::span<T> input_grad = {}) const;

  /// Forward-mode derivative at the cached point along an input tangent
  /// `dz` and a parameter tangent `dtheta`; either may be empty (zero).
  void jvp(const ForwardCache<T>& cache, std::span<const T> dz, std::span<const T> dtheta,
           std::span<T> out) const;
  /// out = (df/dz) v
  void jvp_input(const ForwardCache<T>& cache, std::span<const T> v, std::span<T> out) const {
    jvp(cache, v, {}, out);
  }

  template <typename U>
  Adapter<U> cast() const {
    std::vector<U> p(params_.begin(), params_.end());
    return Adapter<U>(cfg_, std::move(p));
  }

  bool operator==(const Adapter&) const = default;

 private:
  void initialize();
  void ega_forward(std::span<const T> z, ForwardCache<T>& c) const;
  void lora_forward(std::span<const T> z, ForwardCache<T>& c) const;
  void block_forward(std::size_t b, std::span<const T> x, typename ForwardCache<T>::Block& bc,
                     std::span<T> y) const;
  void block_backward(std::size_t b, const typename ForwardCache<T>::Block& bc,
                      std::span<const T> dy, std::span<T> grad, std::span<T> dx) const;
  void block_jvp(std::size_t b, const typename ForwardCache<T>::Block& bc, std::span<const T> dx,
                 std::span<const T> dtheta, std::span<T> dy) const;
  void add_tangent(std::span<const T> dtheta, std::size_t weight, std::size_t bias,
                   std::span<const T> input, std::span<T> out) const;

  AdapterConfig cfg_;
  std::vector<ParamSlice> layout_;
  std::vector<T> params_;
};

extern template class Adapter<float>;
extern template class Adapter<double>;

// ---------------------------------------------------------------------------
// EGAP parameter files.

inline constexpr char kParamMagic[4] = {'E', 'G', 'A', 'P'};
inline constexpr std::uint32_t kParamVersion = 1;

void save_params(const Adapter<float>& adapter, const std::filesystem::path& path);
Adapter<float> load_params(const std::filesystem::path& path);
/// As load_params, but throws VariantMismatchError if the file holds another variant.
Adapter<float> load_params(const std::filesystem::path& path, Variant expected);

}  // namespace ega
