#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blendlab/image.hpp"
#include "blendlab/rng.hpp"

namespace blendlab {

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) { data.assign(numel_of(shape), fill); }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
  }
  std::size_t numel() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  T* row(std::size_t i) { return data.data() + i * (data.size() / static_cast<std::size_t>(shape.at(0))); }
  const T* row(std::size_t i) const {
    return data.data() + i * (data.size() / static_cast<std::size_t>(shape.at(0)));
  }
};

/// Fixed architecture: conv3x3(8) -> ReLU -> pool2 -> conv3x3(16) -> ReLU -> pool2 -> affine(d_emb) -> L2.
struct EncoderShape {
  int image_size = 32;
  int channels = 3;
  int d_emb = 64;
  int num_classes = 200;

  static constexpr int kConv1Filters = 8;
  static constexpr int kConv2Filters = 16;

  int fc_in() const { return kConv2Filters * (image_size / 4) * (image_size / 4); }
  void validate() const;
  bool operator==(const EncoderShape&) const = default;
};

template <typename T>
struct EncoderParams {
  EncoderShape shape;
  Tensor<T> conv1_w;  // [8, 3*3*C], tap-major then channel
  Tensor<T> conv1_b;  // [8]
  Tensor<T> conv2_w;  // [16, 3*3*8]
  Tensor<T> conv2_b;  // [16]
  Tensor<T> fc_w;     // [fc_in, d_emb]
  Tensor<T> fc_b;     // [d_emb]
  Tensor<T> head;     // [K, d_emb] margin-head class weights

  static EncoderParams zeros(const EncoderShape& shape);
  static EncoderParams init(const EncoderShape& shape, std::uint64_t seed);

  // Checkpoint order: conv1.w, conv1.b, conv2.w, conv2.b, fc.w, fc.b, head.
  std::vector<std::pair<std::string, Tensor<T>*>> tensors();
  std::vector<std::pair<std::string, const Tensor<T>*>> tensors() const;

  template <typename U>
  EncoderParams<U> cast() const;

  void normalize_head_rows();
  bool all_finite() const;
};

template <typename T>
using ParamGrads = EncoderParams<T>;

/// Pre-normalisation norms below this get the same value added to the denominator.
inline constexpr double kNormGuard = 1e-8;

/// Per-sample intermediates kept for the backward pass.
template <typename T>
struct EncoderTrace {
  std::vector<T> col1, act1, pool1, col2, act2, pool2, feature, embedding;
  std::uint64_t relu_pattern = 0;  // hash of ReLU on/off states, used to spot kinks in finite differences
};

// Batch tensors are [N, H, W, C]; embeddings are [N, d_emb].
template <typename T>
Tensor<T> images_to_batch(std::span<const Image* const> images);

template <typename T>
void forward_one(const EncoderParams<T>& params, const T* image, EncoderTrace<T>& trace);

template <typename T>
Tensor<T> forward(const EncoderParams<T>& params, const Tensor<T>& batch);

/// Accumulates the gradient of <d_embedding, embedding> into grads; optionally writes d/d(image).
template <typename T>
void backward_one(const EncoderParams<T>& params, const EncoderTrace<T>& trace, const T* d_embedding,
                  ParamGrads<T>& grads, T* d_image);

template <typename T>
ParamGrads<T> backward(const EncoderParams<T>& params, const Tensor<T>& batch, const Tensor<T>& d_embeddings);

/// Gradient of <d_embedding, E(image)> with respect to the image pixels.
template <typename T>
std::vector<T> input_gradient(const EncoderParams<T>& params, std::span<const T> image, std::span<const T> d_embedding);

template <typename T>
void add_into(ParamGrads<T>& acc, const ParamGrads<T>& g);

// ---------------------------------------------------------------------------
// Finite-difference verification harness (64-bit).

struct Evaluation {
  double value = 0.0;
  std::uint64_t kink_signature = 0;  // differs across a non-smooth point
};

/// f(x, grad): returns the value and, when grad is non-null, fills the analytic gradient.
using VectorObjective = std::function<Evaluation(std::span<const double> x, std::vector<double>* grad)>;
using ParamObjective = std::function<Evaluation(const EncoderParams<double>& p, ParamGrads<double>* grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst;  // "<tensor>[index]"
};

double relative_error(double analytic, double numeric);

/// Central differences on `coords` sampled coordinates (all of them if x is smaller).
/// Coordinates whose +-h probes straddle a kink are skipped and counted.
GradCheckReport finite_diff_check(const VectorObjective& f, std::span<const double> x, double h, std::size_t coords,
                                  std::uint64_t seed, const std::vector<double>* analytic_override = nullptr);

/// Per-tensor variant: samples at least `coords_per_tensor` coordinates from every parameter tensor.
GradCheckReport finite_diff_check(const ParamObjective& f, const EncoderParams<double>& params, double h,
                                  std::size_t coords_per_tensor, std::uint64_t seed,
                                  const ParamGrads<double>* analytic_override = nullptr);

}  // namespace blendlab
