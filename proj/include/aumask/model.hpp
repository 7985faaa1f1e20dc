#pragma once

// Desk-scale shifted-window attention classifier.
//
// Pipeline: patch embedding -> depth x [window block, shifted-window block]
// -> layer norm -> mean pool over tokens -> linear head (one logit per AU).
// Blocks are pre-norm residual: x += Attn(LN(x)); x += MLP(LN(x)).
//
// Token grids are stored as (tokens x features) matrices, token index
// r * grid + c for grid row r and column c.

#include "aumask/error.hpp"
#include "aumask/image.hpp"
#include "aumask/labelspace.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace aumask {

struct ModelConfig {
  int image_size = 32;
  int channels = 1;
  int patch_size = 4;
  int embed_dim = 32;
  int heads = 2;
  /// Tokens per window side.
  int window = 4;
  /// Number of (window, shifted-window) block pairs.
  int depth = 1;
  /// MLP hidden width = mlp_ratio * embed_dim.
  int mlp_ratio = 2;
  bool use_relative_bias = false;
  std::uint64_t seed = 0;

  int grid() const { return image_size / patch_size; }
  int tokens() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  int head_dim() const { return embed_dim / heads; }
  int hidden_dim() const { return mlp_ratio * embed_dim; }
  int shift() const { return window / 2; }
  int num_blocks() const { return 2 * depth; }
  int window_tokens() const { return window * window; }
  int windows_per_side() const { return grid() / window; }
  bool block_is_shifted(int block) const { return block % 2 == 1 && shift() > 0; }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || embed_dim <= 0 || heads <= 0 || window <= 0 ||
        depth < 0 || mlp_ratio <= 0) {
      throw ValidationError("model dimensions must be positive");
    }
    if (channels != 1 && channels != 3) throw ValidationError("channels must be 1 or 3");
    if (image_size % patch_size != 0) throw ValidationError("image_size must be divisible by patch_size");
    if (grid() % window != 0) throw ValidationError("token grid side must be divisible by window");
    if (embed_dim % heads != 0) throw ValidationError("embed_dim must be divisible by heads");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct BlockParams {
  RowVectorX<Scalar> norm1_weight, norm1_bias;
  MatrixX<Scalar> query_weight, key_weight, value_weight;
  RowVectorX<Scalar> query_bias, key_bias, value_bias;
  MatrixX<Scalar> proj_weight;
  RowVectorX<Scalar> proj_bias;
  /// ((2M-1)^2 x heads); empty when relative bias is disabled.
  MatrixX<Scalar> relative_bias;
  RowVectorX<Scalar> norm2_weight, norm2_bias;
  MatrixX<Scalar> fc1_weight;
  RowVectorX<Scalar> fc1_bias;
  MatrixX<Scalar> fc2_weight;
  RowVectorX<Scalar> fc2_bias;
};

template <typename Scalar>
struct ParameterSet {
  MatrixX<Scalar> patch_weight;  // patch_dim x D
  RowVectorX<Scalar> patch_bias;
  std::vector<BlockParams<Scalar>> blocks;
  RowVectorX<Scalar> norm_weight, norm_bias;
  MatrixX<Scalar> head_weight;  // D x kNumAus
  RowVectorX<Scalar> head_bias;
};

/// Calls f(name, t0, t1, ...) for each named tensor, walking several
/// parameter sets of the same layout in lockstep.
template <typename F, typename First, typename... Rest>
void for_each_tensor(F&& f, First& first, Rest&... rest) {
  f(std::string("patch.weight"), first.patch_weight, rest.patch_weight...);
  f(std::string("patch.bias"), first.patch_bias, rest.patch_bias...);
  for (std::size_t b = 0; b < first.blocks.size(); ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    auto& fb = first.blocks[b];
    f(p + "norm1.weight", fb.norm1_weight, rest.blocks[b].norm1_weight...);
    f(p + "norm1.bias", fb.norm1_bias, rest.blocks[b].norm1_bias...);
    f(p + "attn.query.weight", fb.query_weight, rest.blocks[b].query_weight...);
    f(p + "attn.query.bias", fb.query_bias, rest.blocks[b].query_bias...);
    f(p + "attn.key.weight", fb.key_weight, rest.blocks[b].key_weight...);
    f(p + "attn.key.bias", fb.key_bias, rest.blocks[b].key_bias...);
    f(p + "attn.value.weight", fb.value_weight, rest.blocks[b].value_weight...);
    f(p + "attn.value.bias", fb.value_bias, rest.blocks[b].value_bias...);
    f(p + "attn.proj.weight", fb.proj_weight, rest.blocks[b].proj_weight...);
    f(p + "attn.proj.bias", fb.proj_bias, rest.blocks[b].proj_bias...);
    if (fb.relative_bias.size() > 0) {
      f(p + "attn.relative_bias", fb.relative_bias, rest.blocks[b].relative_bias...);
    }
    f(p + "norm2.weight", fb.norm2_weight, rest.blocks[b].norm2_weight...);
    f(p + "norm2.bias", fb.norm2_bias, rest.blocks[b].norm2_bias...);
    f(p + "mlp.fc1.weight", fb.fc1_weight, rest.blocks[b].fc1_weight...);
    f(p + "mlp.fc1.bias", fb.fc1_bias, rest.blocks[b].fc1_bias...);
    f(p + "mlp.fc2.weight", fb.fc2_weight, rest.blocks[b].fc2_weight...);
    f(p + "mlp.fc2.bias", fb.fc2_bias, rest.blocks[b].fc2_bias...);
  }
  f(std::string("norm.weight"), first.norm_weight, rest.norm_weight...);
  f(std::string("norm.bias"), first.norm_bias, rest.norm_bias...);
  f(std::string("head.weight"), first.head_weight, rest.head_weight...);
  f(std::string("head.bias"), first.head_bias, rest.head_bias...);
}

template <typename Scalar>
Eigen::Index parameter_count(const ParameterSet<Scalar>& params) {
  Eigen::Index n = 0;
  for_each_tensor([&](const std::string&, const auto& t) { n += t.size(); }, params);
  return n;
}

/// Zero tensors shaped for `config`.
template <typename Scalar>
ParameterSet<Scalar> zero_parameters(const ModelConfig& config) {
  config.validate();
  const int d = config.embed_dim;
  const int hid = config.hidden_dim();
  ParameterSet<Scalar> p;
  p.patch_weight = MatrixX<Scalar>::Zero(config.patch_dim(), d);
  p.patch_bias = RowVectorX<Scalar>::Zero(d);
  p.blocks.resize(static_cast<std::size_t>(config.num_blocks()));
  for (auto& b : p.blocks) {
    b.norm1_weight = RowVectorX<Scalar>::Zero(d);
    b.norm1_bias = RowVectorX<Scalar>::Zero(d);
    b.query_weight = MatrixX<Scalar>::Zero(d, d);
    b.key_weight = MatrixX<Scalar>::Zero(d, d);
    b.value_weight = MatrixX<Scalar>::Zero(d, d);
    b.query_bias = RowVectorX<Scalar>::Zero(d);
    b.key_bias = RowVectorX<Scalar>::Zero(d);
    b.value_bias = RowVectorX<Scalar>::Zero(d);
    b.proj_weight = MatrixX<Scalar>::Zero(d, d);
    b.proj_bias = RowVectorX<Scalar>::Zero(d);
    if (config.use_relative_bias) {
      const int span = 2 * config.window - 1;
      b.relative_bias = MatrixX<Scalar>::Zero(span * span, config.heads);
    }
    b.norm2_weight = RowVectorX<Scalar>::Zero(d);
    b.norm2_bias = RowVectorX<Scalar>::Zero(d);
    b.fc1_weight = MatrixX<Scalar>::Zero(d, hid);
    b.fc1_bias = RowVectorX<Scalar>::Zero(hid);
    b.fc2_weight = MatrixX<Scalar>::Zero(hid, d);
    b.fc2_bias = RowVectorX<Scalar>::Zero(d);
  }
  p.norm_weight = RowVectorX<Scalar>::Zero(d);
  p.norm_bias = RowVectorX<Scalar>::Zero(d);
  p.head_weight = MatrixX<Scalar>::Zero(d, kNumAus);
  p.head_bias = RowVectorX<Scalar>::Zero(kNumAus);
  return p;
}

template <typename Scalar>
ParameterSet<Scalar> zeros_like(const ParameterSet<Scalar>& params) {
  ParameterSet<Scalar> z = params;
  for_each_tensor([](const std::string&, auto& t) { t.setZero(); }, z);
  return z;
}

/// Uniform in [0, 1) from the top 53 bits, identical on every platform.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); layer-norm scales
/// 1 and offsets 0; relative-bias tables 0. Seeded from config.seed.
template <typename Scalar>
ParameterSet<Scalar> init_parameters(const ModelConfig& config) {
  ParameterSet<Scalar> p = zero_parameters<Scalar>(config);
  std::mt19937_64 rng(config.seed);
  auto fill = [&](auto& t, Eigen::Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      t.data()[i] = Scalar((2.0 * unit_uniform(rng) - 1.0) * bound);
    }
  };
  fill(p.patch_weight, config.patch_dim());
  fill(p.patch_bias, config.patch_dim());
  for (auto& b : p.blocks) {
    b.norm1_weight.setOnes();
    fill(b.query_weight, config.embed_dim);
    fill(b.query_bias, config.embed_dim);
    fill(b.key_weight, config.embed_dim);
    fill(b.key_bias, config.embed_dim);
    fill(b.value_weight, config.embed_dim);
    fill(b.value_bias, config.embed_dim);
    fill(b.proj_weight, config.embed_dim);
    fill(b.proj_bias, config.embed_dim);
    b.norm2_weight.setOnes();
    fill(b.fc1_weight, config.embed_dim);
    fill(b.fc1_bias, config.embed_dim);
    fill(b.fc2_weight, config.hidden_dim());
    fill(b.fc2_bias, config.hidden_dim());
  }
  p.norm_weight.setOnes();
  fill(p.head_weight, config.embed_dim);
  fill(p.head_bias, config.embed_dim);
  return p;
}

/// Throws ValidationError unless every tensor has the shape `config` implies.
template <typename Scalar>
void check_parameter_shapes(const ParameterSet<Scalar>& params, const ModelConfig& config) {
  const ParameterSet<Scalar> ref = zero_parameters<Scalar>(config);
  if (params.blocks.size() != ref.blocks.size()) {
    throw ValidationError("parameter set has " + std::to_string(params.blocks.size()) +
                          " blocks, config expects " + std::to_string(ref.blocks.size()));
  }
  for (std::size_t b = 0; b < ref.blocks.size(); ++b) {
    if (params.blocks[b].relative_bias.size() != ref.blocks[b].relative_bias.size()) {
      throw ValidationError("relative bias presence does not match the config");
    }
  }
  for_each_tensor(
      [](const std::string& name, const auto& t, const auto& r) {
        if (t.rows() != r.rows() || t.cols() != r.cols()) {
          throw ValidationError("tensor " + name + " has shape " + std::to_string(t.rows()) + "x" +
                                std::to_string(t.cols()) + ", expected " + std::to_string(r.rows()) +
                                "x" + std::to_string(r.cols()));
        }
      },
      params, ref);
}

// ---------------------------------------------------------------------------
// Building blocks

/// (tokens x patch_dim) matrix of flattened non-overlapping patches. Within a
/// patch the layout is channel-major, then row, then column.
template <typename Scalar>
MatrixX<Scalar> extract_patches(const ImageT<Scalar>& image, const ModelConfig& config) {
  if (image.channels() != config.channels || image.height() != config.image_size ||
      image.width() != config.image_size) {
    throw ValidationError("image is " + std::to_string(image.height()) + "x" +
                          std::to_string(image.width()) + "x" + std::to_string(image.channels()) +
                          ", model expects " + std::to_string(config.image_size) + "x" +
                          std::to_string(config.image_size) + "x" + std::to_string(config.channels));
  }
  const int n = config.grid();
  const int ps = config.patch_size;
  MatrixX<Scalar> patches(config.tokens(), config.patch_dim());
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int tok = r * n + c;
      int col = 0;
      for (int ch = 0; ch < config.channels; ++ch) {
        const auto& plane = image.planes[static_cast<std::size_t>(ch)];
        for (int py = 0; py < ps; ++py) {
          for (int px = 0; px < ps; ++px) patches(tok, col++) = plane(r * ps + py, c * ps + px);
        }
      }
    }
  }
  return patches;
}

template <typename Scalar>
MatrixX<Scalar> patch_embed(const ImageT<Scalar>& image, const ParameterSet<Scalar>& params,
                            const ModelConfig& config) {
  MatrixX<Scalar> tokens = extract_patches(image, config) * params.patch_weight;
  tokens.rowwise() += params.patch_bias;
  return tokens;
}

/// Rolls a (grid x grid) token map by (-offset, -offset) with wraparound:
/// out(r, c) = in((r + offset) mod grid, (c + offset) mod grid).
template <typename Derived>
MatrixX<typename Derived::Scalar> cyclic_shift(const Eigen::MatrixBase<Derived>& tokens, int grid,
                                               int offset) {
  if (tokens.rows() != Eigen::Index(grid) * grid) {
    throw ValidationError("token count does not match grid side");
  }
  const int s = ((offset % grid) + grid) % grid;
  MatrixX<typename Derived::Scalar> out(tokens.rows(), tokens.cols());
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      out.row(r * grid + c) = tokens.row(((r + s) % grid) * grid + (c + s) % grid);
    }
  }
  return out;
}

/// Token indices of window w in grid order, row-major inside the window.
inline std::vector<int> window_token_indices(const ModelConfig& config, int w) {
  const int n = config.grid();
  const int m = config.window;
  const int wr = w / config.windows_per_side();
  const int wc = w % config.windows_per_side();
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(m * m));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) idx.push_back((wr * m + i) * n + wc * m + j);
  }
  return idx;
}

/// Region id per token of a shifted grid. Tokens from different regions
/// wrapped into the same window do not attend to each other.
inline std::vector<int> shifted_region_ids(const ModelConfig& config) {
  const int n = config.grid();
  const int m = config.window;
  const int s = config.shift();
  auto band = [&](int x) { return x < n - m ? 0 : (x < n - s ? 1 : 2); };
  std::vector<int> ids(static_cast<std::size_t>(n * n));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) ids[static_cast<std::size_t>(r * n + c)] = band(r) * 3 + band(c);
  }
  return ids;
}

/// Row of the relative-bias table for query (i_a, j_a) and key (i_b, j_b).
inline int relative_bias_index(int window, int a, int b) {
  const int ia = a / window, ja = a % window;
  const int ib = b / window, jb = b % window;
  return (ia - ib + window - 1) * (2 * window - 1) + (ja - jb + window - 1);
}

namespace detail {

/// Row-wise softmax of `scores` in place; entries equal to -inf get weight 0.
template <typename Scalar>
void softmax_rows(MatrixX<Scalar>& scores) {
  using std::exp;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const Scalar mx = scores.row(i).maxCoeff();
    Scalar total(0);
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      scores(i, j) = exp(scores(i, j) - mx);
      total += scores(i, j);
    }
    scores.row(i) /= total;
  }
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  using std::erf;
  return Scalar(0.5) * x * (Scalar(1) + erf(x / Scalar(std::sqrt(2.0))));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  using std::erf;
  using std::exp;
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + erf(x / Scalar(std::sqrt(2.0))));
  const Scalar pdf = exp(Scalar(-0.5) * x * x) / Scalar(std::sqrt(2.0 * 3.14159265358979323846));
  return cdf + x * pdf;
}

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer norm; also returns the normalized rows and 1/std per row.
template <typename Scalar>
MatrixX<Scalar> layer_norm(const MatrixX<Scalar>& x, const RowVectorX<Scalar>& weight,
                           const RowVectorX<Scalar>& bias, MatrixX<Scalar>* xhat_out,
                           VectorX<Scalar>* rstd_out) {
  using std::sqrt;
  const Eigen::Index d = x.cols();
  MatrixX<Scalar> xhat(x.rows(), d);
  VectorX<Scalar> rstd(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).sum() / Scalar(d);
    const auto centered = (x.row(i).array() - mean).matrix().eval();
    const Scalar var = centered.squaredNorm() / Scalar(d);
    rstd(i) = Scalar(1) / sqrt(var + Scalar(kLayerNormEps));
    xhat.row(i) = centered * rstd(i);
  }
  MatrixX<Scalar> y = (xhat.array().rowwise() * weight.array()).matrix();
  y.rowwise() += bias;
  if (xhat_out) *xhat_out = std::move(xhat);
  if (rstd_out) *rstd_out = std::move(rstd);
  return y;
}

template <typename Scalar>
MatrixX<Scalar> layer_norm_backward(const MatrixX<Scalar>& dy, const MatrixX<Scalar>& xhat,
                                    const VectorX<Scalar>& rstd, const RowVectorX<Scalar>& weight,
                                    RowVectorX<Scalar>& dweight, RowVectorX<Scalar>& dbias) {
  const Eigen::Index d = dy.cols();
  dweight += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const MatrixX<Scalar> dxhat = (dy.array().rowwise() * weight.array()).matrix();
  MatrixX<Scalar> dx(dy.rows(), d);
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const Scalar mean_dxhat = dxhat.row(i).sum() / Scalar(d);
    const Scalar mean_dxhat_xhat = dxhat.row(i).dot(xhat.row(i)) / Scalar(d);
    dx.row(i) = rstd(i) * (dxhat.row(i).array() - mean_dxhat - xhat.row(i).array() * mean_dxhat_xhat).matrix();
  }
  return dx;
}

template <typename Scalar>
void require_finite(const MatrixX<Scalar>& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace detail

/// Attention weights of one window, one matrix per head.
template <typename Scalar>
struct WindowAttentionTrace {
  std::vector<MatrixX<Scalar>> weights;
};

/// Multi-head attention over the tokens of one window.
///
/// `q`, `k`, `v` hold the window's projected tokens (n x D). `region`, when
/// non-null, gives a region id per token; pairs with different ids are
/// excluded. Returns the concatenated per-head outputs before the output
/// projection.
template <typename Scalar>
MatrixX<Scalar> attend_window(const MatrixX<Scalar>& q, const MatrixX<Scalar>& k,
                              const MatrixX<Scalar>& v, const BlockParams<Scalar>& block,
                              const ModelConfig& config, const std::vector<int>* region,
                              std::vector<MatrixX<Scalar>>* weights_out) {
  const Eigen::Index n = q.rows();
  const int dh = config.head_dim();
  const Scalar scale = Scalar(1) / Scalar(std::sqrt(static_cast<double>(dh)));
  const bool use_bias = block.relative_bias.size() > 0;
  MatrixX<Scalar> out(n, config.embed_dim);
  if (weights_out) weights_out->clear();
  for (int h = 0; h < config.heads; ++h) {
    MatrixX<Scalar> scores =
        q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
    if (use_bias) {
      for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
          scores(a, b) += block.relative_bias(
              relative_bias_index(config.window, static_cast<int>(a), static_cast<int>(b)), h);
        }
      }
    }
    if (region) {
      for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
          if ((*region)[static_cast<std::size_t>(a)] != (*region)[static_cast<std::size_t>(b)]) {
            scores(a, b) = -std::numeric_limits<Scalar>::infinity();
          }
        }
      }
    }
    detail::softmax_rows(scores);
    out.middleCols(h * dh, dh) = scores * v.middleCols(h * dh, dh);
    if (weights_out) weights_out->push_back(std::move(scores));
  }
  return out;
}

/// Attention sub-layer applied to the tokens of a single window (n x D,
/// already normalized): project, attend per head, concatenate, project out.
/// The window must hold exactly window^2 tokens.
template <typename Scalar>
MatrixX<Scalar> window_attention(const MatrixX<Scalar>& window_tokens,
                                 const BlockParams<Scalar>& block, const ModelConfig& config,
                                 WindowAttentionTrace<Scalar>* trace = nullptr,
                                 const std::vector<int>* region = nullptr) {
  if (window_tokens.rows() != config.window_tokens() || window_tokens.cols() != config.embed_dim) {
    throw ValidationError("window must hold window^2 tokens of embed_dim features");
  }
  MatrixX<Scalar> q = window_tokens * block.query_weight;
  q.rowwise() += block.query_bias;
  MatrixX<Scalar> k = window_tokens * block.key_weight;
  k.rowwise() += block.key_bias;
  MatrixX<Scalar> v = window_tokens * block.value_weight;
  v.rowwise() += block.value_bias;
  MatrixX<Scalar> out = attend_window(q, k, v, block, config, region,
                                      trace ? &trace->weights : nullptr);
  detail::require_finite(out, "window attention");
  MatrixX<Scalar> projected = out * block.proj_weight;
  projected.rowwise() += block.proj_bias;
  return projected;
}

// ---------------------------------------------------------------------------
// Forward with cached intermediates

template <typename Scalar>
struct BlockCache {
  MatrixX<Scalar> norm1_xhat;
  VectorX<Scalar> norm1_rstd;
  MatrixX<Scalar> attn_input;  // normalized tokens, in the (possibly shifted) frame
  MatrixX<Scalar> q, k, v;     // shifted frame
  std::vector<MatrixX<Scalar>> weights;  // window-major, then head
  MatrixX<Scalar> attn_concat;           // shifted frame, before output projection
  MatrixX<Scalar> norm2_xhat;
  VectorX<Scalar> norm2_rstd;
  MatrixX<Scalar> mlp_input;
  MatrixX<Scalar> fc1_pre;
  MatrixX<Scalar> fc1_act;
};

template <typename Scalar>
struct ForwardCache {
  MatrixX<Scalar> patches;
  std::vector<BlockCache<Scalar>> blocks;
  MatrixX<Scalar> norm_xhat;
  VectorX<Scalar> norm_rstd;
  RowVectorX<Scalar> pooled;
  RowVectorX<Scalar> logits;
};

namespace detail {

template <typename Scalar>
MatrixX<Scalar> block_forward(const MatrixX<Scalar>& x, const BlockParams<Scalar>& bp,
                              const ModelConfig& config, bool shifted,
                              const std::vector<int>& regions, BlockCache<Scalar>* cache) {
  const int n = config.grid();
  const int s = config.shift();
  MatrixX<Scalar> xhat1;
  VectorX<Scalar> rstd1;
  MatrixX<Scalar> h = layer_norm(x, bp.norm1_weight, bp.norm1_bias, &xhat1, &rstd1);
  if (shifted) h = cyclic_shift(h, n, s);

  MatrixX<Scalar> q = h * bp.query_weight;
  q.rowwise() += bp.query_bias;
  MatrixX<Scalar> k = h * bp.key_weight;
  k.rowwise() += bp.key_bias;
  MatrixX<Scalar> v = h * bp.value_weight;
  v.rowwise() += bp.value_bias;

  const int nw = config.windows_per_side() * config.windows_per_side();
  const int wt = config.window_tokens();
  MatrixX<Scalar> concat(config.tokens(), config.embed_dim);
  std::vector<MatrixX<Scalar>> all_weights;
  if (cache) all_weights.reserve(static_cast<std::size_t>(nw * config.heads));
  MatrixX<Scalar> qw(wt, config.embed_dim), kw(wt, config.embed_dim), vw(wt, config.embed_dim);
  std::vector<int> wregion(static_cast<std::size_t>(wt));
  std::vector<MatrixX<Scalar>> wweights;
  for (int w = 0; w < nw; ++w) {
    const auto idx = window_token_indices(config, w);
    for (int i = 0; i < wt; ++i) {
      const int t = idx[static_cast<std::size_t>(i)];
      qw.row(i) = q.row(t);
      kw.row(i) = k.row(t);
      vw.row(i) = v.row(t);
      wregion[static_cast<std::size_t>(i)] = regions[static_cast<std::size_t>(t)];
    }
    const MatrixX<Scalar> ow = attend_window(qw, kw, vw, bp, config, shifted ? &wregion : nullptr,
                                             cache ? &wweights : nullptr);
    for (int i = 0; i < wt; ++i) concat.row(idx[static_cast<std::size_t>(i)]) = ow.row(i);
    if (cache) {
      for (auto& m : wweights) all_weights.push_back(std::move(m));
    }
  }
  require_finite(concat, "attention");

  MatrixX<Scalar> attn = concat * bp.proj_weight;
  attn.rowwise() += bp.proj_bias;
  if (shifted) attn = cyclic_shift(attn, n, -s);
  MatrixX<Scalar> mid = x + attn;

  MatrixX<Scalar> xhat2;
  VectorX<Scalar> rstd2;
  MatrixX<Scalar> h2 = layer_norm(mid, bp.norm2_weight, bp.norm2_bias, &xhat2, &rstd2);
  MatrixX<Scalar> pre = h2 * bp.fc1_weight;
  pre.rowwise() += bp.fc1_bias;
  MatrixX<Scalar> act = pre.unaryExpr([](Scalar z) { return gelu(z); });
  MatrixX<Scalar> mlp = act * bp.fc2_weight;
  mlp.rowwise() += bp.fc2_bias;
  MatrixX<Scalar> out = mid + mlp;
  require_finite(out, "block output");

  if (cache) {
    cache->norm1_xhat = std::move(xhat1);
    cache->norm1_rstd = std::move(rstd1);
    cache->attn_input = std::move(h);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->weights = std::move(all_weights);
    cache->attn_concat = std::move(concat);
    cache->norm2_xhat = std::move(xhat2);
    cache->norm2_rstd = std::move(rstd2);
    cache->mlp_input = std::move(h2);
    cache->fc1_pre = std::move(pre);
    cache->fc1_act = std::move(act);
  }
  return out;
}

}  // namespace detail

/// Forward pass for one image; fills `cache` when non-null.
template <typename Scalar>
RowVectorX<Scalar> forward(const ImageT<Scalar>& image, const ParameterSet<Scalar>& params,
                           const ModelConfig& config, ForwardCache<Scalar>* cache = nullptr) {
  config.validate();
  MatrixX<Scalar> patches = extract_patches(image, config);
  MatrixX<Scalar> x = patches * params.patch_weight;
  x.rowwise() += params.patch_bias;

  const std::vector<int> regions = shifted_region_ids(config);
  if (cache) cache->blocks.resize(params.blocks.size());
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    x = detail::block_forward(x, params.blocks[b], config,
                              config.block_is_shifted(static_cast<int>(b)), regions,
                              cache ? &cache->blocks[b] : nullptr);
  }

  MatrixX<Scalar> xhat;
  VectorX<Scalar> rstd;
  const MatrixX<Scalar> normed = detail::layer_norm(x, params.norm_weight, params.norm_bias, &xhat, &rstd);
  RowVectorX<Scalar> pooled = normed.colwise().mean();
  RowVectorX<Scalar> logits = pooled * params.head_weight + params.head_bias;
  if (!logits.allFinite()) throw NumericError("non-finite logits");

  if (cache) {
    cache->patches = std::move(patches);
    cache->norm_xhat = std::move(xhat);
    cache->norm_rstd = std::move(rstd);
    cache->pooled = std::move(pooled);
    cache->logits = logits;
  }
  return logits;
}

/// Logits for a batch of images, one row per image.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, kNumAus, Eigen::RowMajor> forward_batch(
    const std::vector<ImageT<Scalar>>& images, const ParameterSet<Scalar>& params,
    const ModelConfig& config) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, kNumAus, Eigen::RowMajor> out(
      static_cast<Eigen::Index>(images.size()), kNumAus);
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = forward(images[i], params, config);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reverse mode

namespace detail {

template <typename Scalar>
MatrixX<Scalar> block_backward(const MatrixX<Scalar>& dout, const BlockParams<Scalar>& bp,
                               const BlockCache<Scalar>& c, const ModelConfig& config,
                               bool shifted, BlockParams<Scalar>& g) {
  const int n = config.grid();
  const int s = config.shift();
  const int dh = config.head_dim();
  const Scalar scale = Scalar(1) / Scalar(std::sqrt(static_cast<double>(dh)));

  // MLP branch: out = mid + fc2(gelu(fc1(LN2(mid)))).
  g.fc2_weight += c.fc1_act.transpose() * dout;
  g.fc2_bias += dout.colwise().sum();
  MatrixX<Scalar> dpre = dout * bp.fc2_weight.transpose();
  dpre.array() *= c.fc1_pre.unaryExpr([](Scalar z) { return gelu_grad(z); }).array();
  g.fc1_weight += c.mlp_input.transpose() * dpre;
  g.fc1_bias += dpre.colwise().sum();
  const MatrixX<Scalar> dh2 = dpre * bp.fc1_weight.transpose();
  MatrixX<Scalar> dmid =
      dout + layer_norm_backward(dh2, c.norm2_xhat, c.norm2_rstd, bp.norm2_weight, g.norm2_weight,
                                 g.norm2_bias);

  // Attention branch: mid = x + unshift(proj(attend(shift(LN1(x))))).
  const MatrixX<Scalar> dattn = shifted ? cyclic_shift(dmid, n, s) : dmid;
  g.proj_weight += c.attn_concat.transpose() * dattn;
  g.proj_bias += dattn.colwise().sum();
  const MatrixX<Scalar> dconcat = dattn * bp.proj_weight.transpose();

  MatrixX<Scalar> dq = MatrixX<Scalar>::Zero(config.tokens(), config.embed_dim);
  MatrixX<Scalar> dk = MatrixX<Scalar>::Zero(config.tokens(), config.embed_dim);
  MatrixX<Scalar> dv = MatrixX<Scalar>::Zero(config.tokens(), config.embed_dim);
  const int nw = config.windows_per_side() * config.windows_per_side();
  const int wt = config.window_tokens();
  const bool use_bias = bp.relative_bias.size() > 0;
  MatrixX<Scalar> qw(wt, dh), kw(wt, dh), vw(wt, dh), dow(wt, dh);
  for (int w = 0; w < nw; ++w) {
    const auto idx = window_token_indices(config, w);
    for (int h = 0; h < config.heads; ++h) {
      for (int i = 0; i < wt; ++i) {
        const int t = idx[static_cast<std::size_t>(i)];
        qw.row(i) = c.q.row(t).segment(h * dh, dh);
        kw.row(i) = c.k.row(t).segment(h * dh, dh);
        vw.row(i) = c.v.row(t).segment(h * dh, dh);
        dow.row(i) = dconcat.row(t).segment(h * dh, dh);
      }
      const MatrixX<Scalar>& p = c.weights[static_cast<std::size_t>(w * config.heads + h)];
      const MatrixX<Scalar> dp = dow * vw.transpose();
      const MatrixX<Scalar> dvw = p.transpose() * dow;
      const VectorX<Scalar> rowdot = (dp.array() * p.array()).rowwise().sum().matrix();
      MatrixX<Scalar> ds = (p.array() * (dp.colwise() - rowdot).array()).matrix();
      if (use_bias) {
        for (int a = 0; a < wt; ++a) {
          for (int b = 0; b < wt; ++b) g.relative_bias(relative_bias_index(config.window, a, b), h) += ds(a, b);
        }
      }
      ds *= scale;
      const MatrixX<Scalar> dqw = ds * kw;
      const MatrixX<Scalar> dkw = ds.transpose() * qw;
      for (int i = 0; i < wt; ++i) {
        const int t = idx[static_cast<std::size_t>(i)];
        dq.row(t).segment(h * dh, dh) += dqw.row(i);
        dk.row(t).segment(h * dh, dh) += dkw.row(i);
        dv.row(t).segment(h * dh, dh) += dvw.row(i);
      }
    }
  }
  g.query_weight += c.attn_input.transpose() * dq;
  g.query_bias += dq.colwise().sum();
  g.key_weight += c.attn_input.transpose() * dk;
  g.key_bias += dk.colwise().sum();
  g.value_weight += c.attn_input.transpose() * dv;
  g.value_bias += dv.colwise().sum();
  MatrixX<Scalar> dh1 = dq * bp.query_weight.transpose() + dk * bp.key_weight.transpose() +
                        dv * bp.value_weight.transpose();
  if (shifted) dh1 = cyclic_shift(dh1, n, -s);
  return dmid + layer_norm_backward(dh1, c.norm1_xhat, c.norm1_rstd, bp.norm1_weight,
                                    g.norm1_weight, g.norm1_bias);
}

}  // namespace detail

/// Adds d(loss)/d(params) to `grads` given the cache of a forward pass and
/// d(loss)/d(logits) for that image.
template <typename Scalar, typename DerivedG>
void accumulate_gradients(const ForwardCache<Scalar>& cache, const ParameterSet<Scalar>& params,
                          const ModelConfig& config, const Eigen::MatrixBase<DerivedG>& dlogits,
                          ParameterSet<Scalar>& grads) {
  if (dlogits.size() != kNumAus) {
    throw ValidationError("upstream gradient must have " + std::to_string(kNumAus) + " entries");
  }
  RowVectorX<Scalar> dl(kNumAus);
  for (Eigen::Index i = 0; i < kNumAus; ++i) dl(i) = Scalar(dlogits(i));
  grads.head_weight += cache.pooled.transpose() * dl;
  grads.head_bias += dl;
  const RowVectorX<Scalar> dpooled = dl * params.head_weight.transpose();
  const MatrixX<Scalar> dnormed =
      MatrixX<Scalar>::Ones(config.tokens(), 1) * (dpooled / Scalar(config.tokens()));
  MatrixX<Scalar> dx = detail::layer_norm_backward(dnormed, cache.norm_xhat, cache.norm_rstd,
                                                   params.norm_weight, grads.norm_weight,
                                                   grads.norm_bias);
  for (std::size_t b = params.blocks.size(); b-- > 0;) {
    dx = detail::block_backward(dx, params.blocks[b], cache.blocks[b], config,
                                config.block_is_shifted(static_cast<int>(b)), grads.blocks[b]);
  }
  grads.patch_weight += cache.patches.transpose() * dx;
  grads.patch_bias += dx.colwise().sum();
}

/// Gradient of <dlogits, forward(image)> with respect to every parameter.
template <typename Scalar, typename DerivedG>
ParameterSet<Scalar> backward(const ImageT<Scalar>& image, const ParameterSet<Scalar>& params,
                              const ModelConfig& config, const Eigen::MatrixBase<DerivedG>& dlogits) {
  if (dlogits.size() != kNumAus) {
    throw ValidationError("upstream gradient must have " + std::to_string(kNumAus) + " entries");
  }
  ForwardCache<Scalar> cache;
  forward(image, params, config, &cache);
  ParameterSet<Scalar> grads = zeros_like(params);
  accumulate_gradients(cache, params, config, dlogits, grads);
  return grads;
}

}  // namespace aumask
