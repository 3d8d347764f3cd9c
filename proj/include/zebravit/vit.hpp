#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "zebravit/image.hpp"
#include "zebravit/rng.hpp"
#include "zebravit/task.hpp"

namespace zebravit {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColumnVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class HeadActivation { sigmoid, softmax };

/// Architecture hyperparameters. Defaults are the full-size model; tests
/// and desk-scale runs shrink them.
struct ModelConfig {
  int image_height = 224;
  int image_width = 224;
  int channels = 3;
  int patch_size = 16;
  int hidden_dim = 768;
  int n_layers = 12;
  int n_heads = 12;
  int mlp_ratio = 4;
  double dropout = 0.2;
  int n_timesteps = 97;
  int n_classes = 1;
  HeadActivation head = HeadActivation::sigmoid;

  int grid_rows() const { return image_height / patch_size; }
  int grid_cols() const { return image_width / patch_size; }
  int n_patches() const { return grid_rows() * grid_cols(); }
  int n_tokens() const { return n_patches() + 1; }
  int patch_dim() const { return patch_size * patch_size * channels; }
  int head_dim() const { return hidden_dim / n_heads; }
  int mlp_dim() const { return mlp_ratio * hidden_dim; }

  void validate() const {
    if (patch_size <= 0 || image_height <= 0 || image_width <= 0 || channels <= 0)
      throw std::invalid_argument("image and patch dimensions must be positive");
    if (image_height % patch_size != 0 || image_width % patch_size != 0)
      throw std::invalid_argument("image size " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                                  " is not divisible by patch size " + std::to_string(patch_size));
    if (hidden_dim <= 0 || n_heads <= 0 || hidden_dim % n_heads != 0)
      throw std::invalid_argument("hidden_dim must be a positive multiple of n_heads");
    if (n_layers < 0 || mlp_ratio <= 0 || n_timesteps <= 0)
      throw std::invalid_argument("n_layers, mlp_ratio and n_timesteps must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
    if (n_classes == 1 && head != HeadActivation::sigmoid)
      throw std::invalid_argument("a single-output head must use sigmoid");
    if (n_classes == 2 && head != HeadActivation::softmax)
      throw std::invalid_argument("a two-output head must use softmax");
    if (n_classes != 1 && n_classes != 2) throw std::invalid_argument("n_classes must be 1 or 2");
  }

  /// Full-size configuration for a task (timesteps and head from the task).
  static ModelConfig for_task(const TaskSpec& spec) {
    ModelConfig c;
    c.image_height = spec.model_input_height;
    c.image_width = spec.model_input_width;
    c.channels = spec.model_input_channels;
    c.n_timesteps = spec.frames_per_sequence;
    c.n_classes = spec.n_output_classes;
    c.head = c.n_classes == 1 ? HeadActivation::sigmoid : HeadActivation::softmax;
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Preprocessed frame, row-major H x W x C.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> values;

  float at(int y, int x, int c) const {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

inline constexpr float kNormalizeMean = 0.5f;
inline constexpr float kNormalizeStd = 0.5f;

/// Bilinear resize (half-pixel centres, no aspect preservation) to the model
/// input size, scale to [0, 1], normalise each channel with mean/std 0.5.
inline ImageTensor preprocess(const Image8& raw, int out_height, int out_width) {
  if (raw.channels != 3) throw ImageError("preprocess expects an RGB image");
  if (raw.width <= 0 || raw.height <= 0) throw ImageError("empty image");
  ImageTensor out{out_height, out_width, 3, {}};
  out.values.resize(static_cast<std::size_t>(out_height) * out_width * 3);
  const double sy = static_cast<double>(raw.height) / out_height;
  const double sx = static_cast<double>(raw.width) / out_width;
  auto norm = [](double v) { return static_cast<float>((v / 255.0 - kNormalizeMean) / kNormalizeStd); };
  for (int y = 0; y < out_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(raw.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, raw.height - 1);
    const double ay = fy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(raw.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, raw.width - 1);
      const double ax = fx - x0;
      for (int c = 0; c < 3; ++c) {
        double v;
        if (ax == 0.0 && ay == 0.0) {
          v = raw.at(y0, x0, c);
        } else {
          const double top = raw.at(y0, x0, c) * (1 - ax) + raw.at(y0, x1, c) * ax;
          const double bottom = raw.at(y1, x0, c) * (1 - ax) + raw.at(y1, x1, c) * ax;
          v = top * (1 - ay) + bottom * ay;
        }
        out.values[(static_cast<std::size_t>(y) * out_width + x) * 3 + c] = norm(v);
      }
    }
  }
  return out;
}

inline ImageTensor preprocess(const Image8& raw, const ModelConfig& config) {
  if (config.channels != 3) throw ImageError("model expects " + std::to_string(config.channels) + " channels");
  return preprocess(raw, config.image_height, config.image_width);
}

/// Splits an image into non-overlapping P x P patches. Row i is the patch
/// at grid position (i / (W/P), i % (W/P)), flattened row-major,
/// channel-last.
template <class T>
Matrix<T> patchify(const ImageTensor& image, int patch) {
  if (patch <= 0 || image.height % patch != 0 || image.width % patch != 0)
    throw std::invalid_argument("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                " is not divisible into " + std::to_string(patch) + "x" + std::to_string(patch) +
                                " patches");
  const int gr = image.height / patch, gc = image.width / patch;
  Matrix<T> out(gr * gc, patch * patch * image.channels);
  for (int pr = 0; pr < gr; ++pr)
    for (int pc = 0; pc < gc; ++pc) {
      const int row = pr * gc + pc;
      int k = 0;
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx)
          for (int c = 0; c < image.channels; ++c) out(row, k++) = static_cast<T>(image.at(pr * patch + dy, pc * patch + dx, c));
    }
  return out;
}

/// Inverse of patchify.
template <class T>
ImageTensor unpatchify(const Matrix<T>& patches, int height, int width, int channels, int patch) {
  ImageTensor img{height, width, channels, std::vector<float>(static_cast<std::size_t>(height) * width * channels)};
  const int gc = width / patch;
  for (int row = 0; row < patches.rows(); ++row) {
    const int pr = row / gc, pc = row % gc;
    int k = 0;
    for (int dy = 0; dy < patch; ++dy)
      for (int dx = 0; dx < patch; ++dx)
        for (int c = 0; c < channels; ++c)
          img.values[(static_cast<std::size_t>(pr * patch + dy) * width + pc * patch + dx) * channels + c] =
              static_cast<float>(patches(row, k++));
  }
  return img;
}

template <class T>
struct EncoderBlock {
  Matrix<T> ln1_gamma, ln1_beta;
  Matrix<T> qkv_weight, qkv_bias;  // d x 3d, q | k | v column blocks
  Matrix<T> proj_weight, proj_bias;
  Matrix<T> ln2_gamma, ln2_beta;
  Matrix<T> fc1_weight, fc1_bias;
  Matrix<T> fc2_weight, fc2_bias;
};

template <class M>
struct NamedTensor {
  std::string name;
  M* tensor;
};

/// All learnable weights. Linear maps are stored input-major (y = x W + b)
/// except the head, which is o x d as in y = A(W h + b).
template <class T>
struct Parameters {
  Matrix<T> patch_weight, patch_bias;  // (P^2 C) x d, 1 x d
  Matrix<T> spatial_embedding;         // M x d
  Matrix<T> temporal_embedding;        // N x d
  Matrix<T> class_token;               // 1 x d
  std::vector<EncoderBlock<T>> blocks;
  Matrix<T> final_gamma, final_beta;
  Matrix<T> head_weight, head_bias;  // o x d, 1 x o

  static Parameters zeros(const ModelConfig& c) {
    const int d = c.hidden_dim, m = c.mlp_dim();
    Parameters p;
    p.patch_weight = Matrix<T>::Zero(c.patch_dim(), d);
    p.patch_bias = Matrix<T>::Zero(1, d);
    p.spatial_embedding = Matrix<T>::Zero(c.n_patches(), d);
    p.temporal_embedding = Matrix<T>::Zero(c.n_timesteps, d);
    p.class_token = Matrix<T>::Zero(1, d);
    p.blocks.resize(static_cast<std::size_t>(c.n_layers));
    for (auto& b : p.blocks) {
      b.ln1_gamma = Matrix<T>::Zero(1, d);
      b.ln1_beta = Matrix<T>::Zero(1, d);
      b.qkv_weight = Matrix<T>::Zero(d, 3 * d);
      b.qkv_bias = Matrix<T>::Zero(1, 3 * d);
      b.proj_weight = Matrix<T>::Zero(d, d);
      b.proj_bias = Matrix<T>::Zero(1, d);
      b.ln2_gamma = Matrix<T>::Zero(1, d);
      b.ln2_beta = Matrix<T>::Zero(1, d);
      b.fc1_weight = Matrix<T>::Zero(d, m);
      b.fc1_bias = Matrix<T>::Zero(1, m);
      b.fc2_weight = Matrix<T>::Zero(m, d);
      b.fc2_bias = Matrix<T>::Zero(1, d);
    }
    p.final_gamma = Matrix<T>::Zero(1, d);
    p.final_beta = Matrix<T>::Zero(1, d);
    p.head_weight = Matrix<T>::Zero(c.n_classes, d);
    p.head_bias = Matrix<T>::Zero(1, c.n_classes);
    return p;
  }

  /// Fixed enumeration order used by the optimizer and checkpoints.
  std::vector<NamedTensor<Matrix<T>>> tensors() { return collect<Matrix<T>>(*this); }
  std::vector<NamedTensor<const Matrix<T>>> tensors() const { return collect<const Matrix<T>>(*this); }

  void set_zero() {
    for (auto& nt : tensors()) nt.tensor->setZero();
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& nt : tensors()) n += static_cast<std::size_t>(nt.tensor->size());
    return n;
  }

  template <class U>
  Parameters<U> cast() const {
    Parameters<U> out;
    out.blocks.resize(blocks.size());
    const auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<U>();
    return out;
  }

 private:
  template <class M, class Self>
  static std::vector<NamedTensor<M>> collect(Self& self) {
    std::vector<NamedTensor<M>> out = {{"patch_weight", &self.patch_weight},
                                       {"patch_bias", &self.patch_bias},
                                       {"spatial_embedding", &self.spatial_embedding},
                                       {"temporal_embedding", &self.temporal_embedding},
                                       {"class_token", &self.class_token}};
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      auto& b = self.blocks[i];
      const std::string pre = "block" + std::to_string(i) + ".";
      out.push_back({pre + "ln1_gamma", &b.ln1_gamma});
      out.push_back({pre + "ln1_beta", &b.ln1_beta});
      out.push_back({pre + "qkv_weight", &b.qkv_weight});
      out.push_back({pre + "qkv_bias", &b.qkv_bias});
      out.push_back({pre + "proj_weight", &b.proj_weight});
      out.push_back({pre + "proj_bias", &b.proj_bias});
      out.push_back({pre + "ln2_gamma", &b.ln2_gamma});
      out.push_back({pre + "ln2_beta", &b.ln2_beta});
      out.push_back({pre + "fc1_weight", &b.fc1_weight});
      out.push_back({pre + "fc1_bias", &b.fc1_bias});
      out.push_back({pre + "fc2_weight", &b.fc2_weight});
      out.push_back({pre + "fc2_bias", &b.fc2_bias});
    }
    out.push_back({"final_gamma", &self.final_gamma});
    out.push_back({"final_beta", &self.final_beta});
    out.push_back({"head_weight", &self.head_weight});
    out.push_back({"head_bias", &self.head_bias});
    return out;
  }
};

/// Standard ViT initialisation: linear weights truncated normal (0.02),
/// embeddings and class token normal (0.02), biases zero, layer-norm gain 1.
template <class T>
Parameters<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto p = Parameters<T>::zeros(config);
  Rng rng(seed);
  auto trunc = [&](Matrix<T>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.truncated_normal(0.02));
  };
  auto normal = [&](Matrix<T>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal(0.0, 0.02));
  };
  trunc(p.patch_weight);
  normal(p.spatial_embedding);
  normal(p.temporal_embedding);
  normal(p.class_token);
  for (auto& b : p.blocks) {
    b.ln1_gamma.setOnes();
    b.ln2_gamma.setOnes();
    trunc(b.qkv_weight);
    trunc(b.proj_weight);
    trunc(b.fc1_weight);
    trunc(b.fc2_weight);
  }
  p.final_gamma.setOnes();
  trunc(p.head_weight);
  return p;
}

template <class T>
struct LayerNormCache {
  Matrix<T> normalized;
  ColumnVector<T> inv_std;
};

template <class T>
struct BlockCache {
  LayerNormCache<T> ln1, ln2;
  Matrix<T> ln1_out, qkv, attention_out, proj_mask;
  std::vector<Matrix<T>> attention;  // per head, S x S
  Matrix<T> ln2_out, fc1_out, hidden, hidden_mask, fc2_mask;
};

/// Intermediates of one forward pass, kept for backpropagation.
template <class T>
struct ForwardCache {
  Matrix<T> patches;
  int timestep = 0;
  std::vector<BlockCache<T>> blocks;
  LayerNormCache<T> final_ln;
  Matrix<T> representation;  // h, S x d
  Matrix<T> logits;          // 1 x o
  Matrix<T> probabilities;   // 1 x o
};

namespace vit_detail {

inline constexpr double kLayerNormEps = 1e-6;

template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta, LayerNormCache<T>& cache) {
  const auto d = static_cast<T>(x.cols());
  const ColumnVector<T> mean = x.rowwise().sum() / d;
  Matrix<T> centered = x.colwise() - mean;
  const ColumnVector<T> var = centered.array().square().rowwise().sum() / d;
  cache.inv_std = (var.array() + static_cast<T>(kLayerNormEps)).rsqrt();
  cache.normalized = centered.array().colwise() * cache.inv_std.array();
  return (cache.normalized.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
}

template <class T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& gamma, const LayerNormCache<T>& cache,
                              Matrix<T>& dgamma, Matrix<T>& dbeta) {
  const auto& xhat = cache.normalized;
  const auto d = static_cast<T>(dy.cols());
  dgamma.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbeta.row(0) += dy.colwise().sum();
  const Matrix<T> dxhat = dy.array().rowwise() * gamma.row(0).array();
  const ColumnVector<T> sum1 = dxhat.rowwise().sum();
  const ColumnVector<T> sum2 = (dxhat.array() * xhat.array()).rowwise().sum();
  Matrix<T> dx = (dxhat * d).colwise() - sum1;
  dx.array() -= xhat.array().colwise() * sum2.array();
  dx.array().colwise() *= cache.inv_std.array() / d;
  return dx;
}

template <class T>
void softmax_rows(Matrix<T>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

template <class T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

/// Inverted dropout mask (entries 0 or 1/(1-p)).
template <class T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix<T> mask(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < p ? T(0) : keep;
  return mask;
}

template <class T>
void add_bias(Matrix<T>& m, const Matrix<T>& bias) {
  m.rowwise() += bias.row(0);
}

}  // namespace vit_detail

/// Token matrix z_t: row 0 is class token + temporal embedding t, row i is
/// the projected patch i-1 plus its spatial embedding.
template <class T>
Matrix<T> embed_patches(const Matrix<T>& patches, int t, const Parameters<T>& params, const ModelConfig& config) {
  if (t < 0 || t >= config.n_timesteps)
    throw std::out_of_range("time index " + std::to_string(t) + " outside [0, " + std::to_string(config.n_timesteps) + ")");
  if (patches.rows() != config.n_patches() || patches.cols() != config.patch_dim())
    throw std::invalid_argument("patch matrix shape does not match the model configuration");
  Matrix<T> tokens(config.n_tokens(), config.hidden_dim);
  tokens.row(0) = params.class_token.row(0) + params.temporal_embedding.row(t);
  auto body = tokens.bottomRows(config.n_patches());
  body.noalias() = patches * params.patch_weight;
  body.rowwise() += params.patch_bias.row(0);
  body += params.spatial_embedding;
  return tokens;
}

template <class T>
Matrix<T> embed_frame(const ImageTensor& image, int t, const Parameters<T>& params, const ModelConfig& config) {
  if (image.height != config.image_height || image.width != config.image_width || image.channels != config.channels)
    throw std::invalid_argument("image shape does not match the model configuration");
  return embed_patches(patchify<T>(image, config.patch_size), t, params, config);
}

/// Pre-norm transformer encoder followed by the final layer norm.
/// Dropout is active iff `dropout` is non-null and the rate is positive.
template <class T>
Matrix<T> encode(const Matrix<T>& tokens, const Parameters<T>& params, const ModelConfig& config, Rng* dropout,
                 ForwardCache<T>* cache = nullptr) {
  using namespace vit_detail;
  if (tokens.rows() != config.n_tokens() || tokens.cols() != config.hidden_dim)
    throw std::invalid_argument("token matrix shape does not match the model configuration");
  if (params.blocks.size() != static_cast<std::size_t>(config.n_layers))
    throw std::invalid_argument("parameter block count does not match the model configuration");
  const bool drop = dropout != nullptr && config.dropout > 0.0;
  const int heads = config.n_heads, dh = config.head_dim(), d = config.hidden_dim;
  const auto S = tokens.rows();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  ForwardCache<T> scratch;
  ForwardCache<T>& fc = cache ? *cache : scratch;
  fc.blocks.resize(params.blocks.size());

  Matrix<T> x = tokens;
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const auto& w = params.blocks[l];
    auto& c = fc.blocks[l];

    c.ln1_out = layer_norm(x, w.ln1_gamma, w.ln1_beta, c.ln1);
    c.qkv.noalias() = c.ln1_out * w.qkv_weight;
    add_bias(c.qkv, w.qkv_bias);
    c.attention.resize(static_cast<std::size_t>(heads));
    c.attention_out.resize(S, d);
    for (int h = 0; h < heads; ++h) {
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(d + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
      auto& a = c.attention[static_cast<std::size_t>(h)];
      a.noalias() = q * k.transpose();
      a *= scale;
      softmax_rows(a);
      c.attention_out.middleCols(h * dh, dh).noalias() = a * v;
    }
    Matrix<T> proj = c.attention_out * w.proj_weight;
    add_bias(proj, w.proj_bias);
    if (drop) {
      c.proj_mask = dropout_mask<T>(S, d, config.dropout, *dropout);
      proj.array() *= c.proj_mask.array();
    } else {
      c.proj_mask.resize(0, 0);
    }
    x += proj;

    c.ln2_out = layer_norm(x, w.ln2_gamma, w.ln2_beta, c.ln2);
    c.fc1_out.noalias() = c.ln2_out * w.fc1_weight;
    add_bias(c.fc1_out, w.fc1_bias);
    c.hidden = c.fc1_out.unaryExpr([](T v) { return gelu(v); });
    if (drop) {
      c.hidden_mask = dropout_mask<T>(S, c.hidden.cols(), config.dropout, *dropout);
      c.hidden.array() *= c.hidden_mask.array();
    } else {
      c.hidden_mask.resize(0, 0);
    }
    Matrix<T> ffn = c.hidden * w.fc2_weight;
    add_bias(ffn, w.fc2_bias);
    if (drop) {
      c.fc2_mask = dropout_mask<T>(S, d, config.dropout, *dropout);
      ffn.array() *= c.fc2_mask.array();
    } else {
      c.fc2_mask.resize(0, 0);
    }
    x += ffn;
  }
  fc.representation = layer_norm(x, params.final_gamma, params.final_beta, fc.final_ln);
  return fc.representation;
}

/// Head logits W h[0] + b; only the class-token row is read.
template <class T>
Matrix<T> head_logits(const Matrix<T>& h, const Parameters<T>& params) {
  Matrix<T> logits = h.row(0) * params.head_weight.transpose();
  logits += params.head_bias;
  return logits;
}

template <class T>
Matrix<T> activate(const Matrix<T>& logits, HeadActivation head) {
  Matrix<T> y = logits;
  if (head == HeadActivation::sigmoid) {
    y = logits.unaryExpr([](T v) { return static_cast<T>(1) / (static_cast<T>(1) + std::exp(-v)); });
  } else {
    vit_detail::softmax_rows(y);
  }
  return y;
}

/// y = A(W h[0] + b): sigmoid for one output, softmax for two.
template <class T>
Matrix<T> classify(const Matrix<T>& h, const Parameters<T>& params, const ModelConfig& config) {
  return activate(head_logits(h, params), config.head);
}

/// Full forward pass from preprocessed patches; fills `cache` when given.
template <class T>
Matrix<T> forward_patches(const Matrix<T>& patches, int t, const Parameters<T>& params, const ModelConfig& config,
                          Rng* dropout = nullptr, ForwardCache<T>* cache = nullptr) {
  const Matrix<T> tokens = embed_patches(patches, t, params, config);
  const Matrix<T> h = encode(tokens, params, config, dropout, cache);
  Matrix<T> logits = head_logits(h, params);
  Matrix<T> y = activate(logits, config.head);
  if (cache) {
    cache->patches = patches;
    cache->timestep = t;
    cache->logits = logits;
    cache->probabilities = y;
  }
  return y;
}

template <class T>
Matrix<T> forward(const ImageTensor& image, int t, const Parameters<T>& params, const ModelConfig& config,
                  Rng* dropout = nullptr) {
  if (image.height != config.image_height || image.width != config.image_width || image.channels != config.channels)
    throw std::invalid_argument("image shape does not match the model configuration");
  return forward_patches(patchify<T>(image, config.patch_size), t, params, config, dropout);
}

/// Backpropagates d(loss)/d(logits) through a cached forward pass,
/// accumulating into `grads` (which must have the shape of `params`).
template <class T>
void backward(const ForwardCache<T>& fc, const Matrix<T>& dlogits, const Parameters<T>& params,
              const ModelConfig& config, Parameters<T>& grads) {
  using namespace vit_detail;
  const int heads = config.n_heads, dh = config.head_dim(), d = config.hidden_dim;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const auto& h = fc.representation;

  grads.head_weight.noalias() += dlogits.transpose() * h.row(0);
  grads.head_bias += dlogits;
  Matrix<T> dh_all = Matrix<T>::Zero(h.rows(), h.cols());
  dh_all.row(0).noalias() = dlogits * params.head_weight;

  Matrix<T> dx = layer_norm_backward(dh_all, params.final_gamma, fc.final_ln, grads.final_gamma, grads.final_beta);

  for (std::size_t li = params.blocks.size(); li-- > 0;) {
    const auto& w = params.blocks[li];
    auto& g = grads.blocks[li];
    const auto& c = fc.blocks[li];

    // x_out = x_mid + drop(fc2(drop(gelu(fc1(ln2(x_mid))))))
    Matrix<T> dffn = dx;
    if (c.fc2_mask.size()) dffn.array() *= c.fc2_mask.array();
    g.fc2_weight.noalias() += c.hidden.transpose() * dffn;
    g.fc2_bias += dffn.colwise().sum();
    Matrix<T> dhidden = dffn * w.fc2_weight.transpose();
    if (c.hidden_mask.size()) dhidden.array() *= c.hidden_mask.array();
    dhidden.array() *= c.fc1_out.unaryExpr([](T v) { return gelu_grad(v); }).array();
    g.fc1_weight.noalias() += c.ln2_out.transpose() * dhidden;
    g.fc1_bias += dhidden.colwise().sum();
    const Matrix<T> dln2 = dhidden * w.fc1_weight.transpose();
    dx += layer_norm_backward(dln2, w.ln2_gamma, c.ln2, g.ln2_gamma, g.ln2_beta);

    // x_mid = x_in + drop(proj(attention(ln1(x_in))))
    Matrix<T> dproj = dx;
    if (c.proj_mask.size()) dproj.array() *= c.proj_mask.array();
    g.proj_weight.noalias() += c.attention_out.transpose() * dproj;
    g.proj_bias += dproj.colwise().sum();
    const Matrix<T> dattn = dproj * w.proj_weight.transpose();
    Matrix<T> dqkv(c.qkv.rows(), c.qkv.cols());
    for (int hd = 0; hd < heads; ++hd) {
      const auto q = c.qkv.middleCols(hd * dh, dh);
      const auto k = c.qkv.middleCols(d + hd * dh, dh);
      const auto v = c.qkv.middleCols(2 * d + hd * dh, dh);
      const auto& a = c.attention[static_cast<std::size_t>(hd)];
      const auto dout = dattn.middleCols(hd * dh, dh);
      const Matrix<T> da = dout * v.transpose();
      dqkv.middleCols(2 * d + hd * dh, dh).noalias() = a.transpose() * dout;
      const ColumnVector<T> row_dot = (da.array() * a.array()).rowwise().sum();
      Matrix<T> dscores = a.array() * (da.array().colwise() - row_dot.array());
      dscores *= scale;
      dqkv.middleCols(hd * dh, dh).noalias() = dscores * k;
      dqkv.middleCols(d + hd * dh, dh).noalias() = dscores.transpose() * q;
    }
    g.qkv_weight.noalias() += c.ln1_out.transpose() * dqkv;
    g.qkv_bias += dqkv.colwise().sum();
    const Matrix<T> dln1 = dqkv * w.qkv_weight.transpose();
    dx += layer_norm_backward(dln1, w.ln1_gamma, c.ln1, g.ln1_gamma, g.ln1_beta);
  }

  grads.class_token.row(0) += dx.row(0);
  grads.temporal_embedding.row(fc.timestep) += dx.row(0);
  const auto dbody = dx.bottomRows(dx.rows() - 1);
  grads.spatial_embedding += dbody;
  grads.patch_bias += dbody.colwise().sum();
  grads.patch_weight.noalias() += fc.patches.transpose() * dbody;
}

/// A model is its configuration plus weights.
template <class T>
struct Model {
  ModelConfig config;
  Parameters<T> params;
};

}  // namespace zebravit
