#include "blendlab/netcore.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <type_traits>

#include "blendlab/common.hpp"
#include "blendlab/parallel.hpp"

namespace blendlab {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

constexpr std::size_t kReductionChunk = 8;

int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

// col[(y*w + x), (ky*3 + kx)*c + ch] = in[reflect(y+ky-1), reflect(x+kx-1), ch]
template <typename T>
void im2col3x3(const T* in, int h, int w, int c, T* col) {
  const std::size_t row_len = 9 * static_cast<std::size_t>(c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      T* dst = col + (static_cast<std::size_t>(y) * w + x) * row_len;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = reflect(y + ky - 1, h);
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = reflect(x + kx - 1, w);
          const T* src = in + (static_cast<std::size_t>(sy) * w + sx) * c;
          std::copy(src, src + c, dst + (ky * 3 + kx) * c);
        }
      }
    }
}

template <typename T>
void col2im3x3(const T* col, int h, int w, int c, T* out) {
  std::fill(out, out + static_cast<std::size_t>(h) * w * c, T(0));
  const std::size_t row_len = 9 * static_cast<std::size_t>(c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const T* src = col + (static_cast<std::size_t>(y) * w + x) * row_len;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = reflect(y + ky - 1, h);
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = reflect(x + kx - 1, w);
          T* dst = out + (static_cast<std::size_t>(sy) * w + sx) * c;
          const T* s = src + (ky * 3 + kx) * c;
          for (int ch = 0; ch < c; ++ch) dst[ch] += s[ch];
        }
      }
    }
}

template <typename T>
void mean_pool2(const T* in, int h, int w, int c, T* out) {
  const int oh = h / 2;
  const int ow = w / 2;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int ch = 0; ch < c; ++ch) {
        auto at = [&](int yy, int xx) { return in[(static_cast<std::size_t>(yy) * w + xx) * c + ch]; };
        out[(static_cast<std::size_t>(y) * ow + x) * c + ch] =
            T(0.25) * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1));
      }
}

// d_act = unpool(d_pooled) / 4, zeroed where the ReLU output was not positive.
template <typename T>
void unpool_relu(const T* d_pooled, const T* act, int h, int w, int c, T* d_act) {
  const int ow = w / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t i = (static_cast<std::size_t>(y) * w + x) * c + ch;
        const T g = d_pooled[(static_cast<std::size_t>(y / 2) * ow + x / 2) * c + ch];
        d_act[i] = act[i] > T(0) ? T(0.25) * g : T(0);
      }
}

template <typename T>
std::uint64_t relu_in_place(T* v, std::size_t n, std::uint64_t h) {
  for (std::size_t i = 0; i < n; ++i) {
    const bool on = v[i] > T(0);
    if (!on) v[i] = T(0);
    if constexpr (std::is_same_v<T, double>) h = (h ^ static_cast<std::uint64_t>(on)) * 0x100000001B3ULL;
  }
  return h;
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (T& v : t.data) v = static_cast<T>(stddev * standard_normal(rng));
}

}  // namespace

void EncoderShape::validate() const {
  require(image_size >= 16 && image_size % 4 == 0, "encoder image size must be >= 16 and divisible by 4",
          ErrorCode::kConfig);
  require(channels >= 1, "encoder channels must be positive", ErrorCode::kConfig);
  require(d_emb >= 1, "d_emb must be positive", ErrorCode::kConfig);
  require(num_classes >= 2, "class count K must be >= 2", ErrorCode::kConfig);
}

template <typename T>
EncoderParams<T> EncoderParams<T>::zeros(const EncoderShape& s) {
  s.validate();
  EncoderParams p;
  p.shape = s;
  p.conv1_w = Tensor<T>({EncoderShape::kConv1Filters, 9 * s.channels});
  p.conv1_b = Tensor<T>({EncoderShape::kConv1Filters});
  p.conv2_w = Tensor<T>({EncoderShape::kConv2Filters, 9 * EncoderShape::kConv1Filters});
  p.conv2_b = Tensor<T>({EncoderShape::kConv2Filters});
  p.fc_w = Tensor<T>({s.fc_in(), s.d_emb});
  p.fc_b = Tensor<T>({s.d_emb});
  p.head = Tensor<T>({s.num_classes, s.d_emb});
  return p;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::init(const EncoderShape& s, std::uint64_t seed) {
  EncoderParams p = zeros(s);
  Rng rng(seed);
  fill_normal(p.conv1_w, rng, std::sqrt(2.0 / (9.0 * s.channels)));
  fill_normal(p.conv2_w, rng, std::sqrt(2.0 / (9.0 * EncoderShape::kConv1Filters)));
  fill_normal(p.fc_w, rng, std::sqrt(1.0 / s.fc_in()));
  fill_normal(p.head, rng, 1.0);
  p.normalize_head_rows();
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> EncoderParams<T>::tensors() {
  return {{"conv1.w", &conv1_w}, {"conv1.b", &conv1_b}, {"conv2.w", &conv2_w}, {"conv2.b", &conv2_b},
          {"fc.w", &fc_w},       {"fc.b", &fc_b},       {"head", &head}};
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> EncoderParams<T>::tensors() const {
  return {{"conv1.w", &conv1_w}, {"conv1.b", &conv1_b}, {"conv2.w", &conv2_w}, {"conv2.b", &conv2_b},
          {"fc.w", &fc_w},       {"fc.b", &fc_b},       {"head", &head}};
}

template <typename T>
template <typename U>
EncoderParams<U> EncoderParams<T>::cast() const {
  EncoderParams<U> out = EncoderParams<U>::zeros(shape);
  auto src = tensors();
  auto dst = out.tensors();
  for (std::size_t k = 0; k < src.size(); ++k)
    std::transform(src[k].second->data.begin(), src[k].second->data.end(), dst[k].second->data.begin(),
                   [](T v) { return static_cast<U>(v); });
  return out;
}

template <typename T>
void EncoderParams<T>::normalize_head_rows() {
  const auto k = static_cast<std::size_t>(shape.num_classes);
  const auto d = static_cast<std::size_t>(shape.d_emb);
  for (std::size_t r = 0; r < k; ++r) {
    T* row = head.data.data() + r * d;
    T norm = std::sqrt(std::inner_product(row, row + d, row, T(0)));
    if (norm < T(kNormGuard)) norm += T(kNormGuard);
    for (std::size_t i = 0; i < d; ++i) row[i] /= norm;
  }
}

template <typename T>
bool EncoderParams<T>::all_finite() const {
  for (const auto& [name, t] : tensors())
    for (T v : t->data)
      if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
Tensor<T> images_to_batch(std::span<const Image* const> images) {
  require(!images.empty(), "empty image batch");
  const Image& first = *images.front();
  Tensor<T> batch({static_cast<int>(images.size()), first.height, first.width, first.channels});
  const std::size_t per = first.size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(images[i]->same_shape(first), "images in a batch must share one shape");
    std::transform(images[i]->data.begin(), images[i]->data.end(), batch.data.begin() + i * per,
                   [](float v) { return static_cast<T>(v); });
  }
  return batch;
}

template <typename T>
void forward_one(const EncoderParams<T>& params, const T* image, EncoderTrace<T>& tr) {
  const EncoderShape& s = params.shape;
  const int n = s.image_size;
  const int h2 = n / 2;
  const int h4 = n / 4;
  const int c = s.channels;
  constexpr int f1 = EncoderShape::kConv1Filters;
  constexpr int f2 = EncoderShape::kConv2Filters;
  const std::size_t p1 = static_cast<std::size_t>(n) * n;
  const std::size_t p2 = static_cast<std::size_t>(h2) * h2;

  tr.col1.resize(p1 * 9 * c);
  tr.act1.resize(p1 * f1);
  tr.pool1.resize(p2 * f1);
  tr.col2.resize(p2 * 9 * f1);
  tr.act2.resize(p2 * f2);
  tr.pool2.resize(static_cast<std::size_t>(h4) * h4 * f2);
  tr.feature.resize(static_cast<std::size_t>(s.d_emb));
  tr.embedding.resize(static_cast<std::size_t>(s.d_emb));

  im2col3x3(image, n, n, c, tr.col1.data());
  MapMat<T> a1(tr.act1.data(), static_cast<Eigen::Index>(p1), f1);
  a1.noalias() = CMapMat<T>(tr.col1.data(), static_cast<Eigen::Index>(p1), 9 * c) *
                 CMapMat<T>(params.conv1_w.data.data(), f1, 9 * c).transpose();
  a1.rowwise() += CMapVec<T>(params.conv1_b.data.data(), f1).transpose();
  std::uint64_t pattern = relu_in_place(tr.act1.data(), tr.act1.size(), 0xCBF29CE484222325ULL);
  mean_pool2(tr.act1.data(), n, n, f1, tr.pool1.data());

  im2col3x3(tr.pool1.data(), h2, h2, f1, tr.col2.data());
  MapMat<T> a2(tr.act2.data(), static_cast<Eigen::Index>(p2), f2);
  a2.noalias() = CMapMat<T>(tr.col2.data(), static_cast<Eigen::Index>(p2), 9 * f1) *
                 CMapMat<T>(params.conv2_w.data.data(), f2, 9 * f1).transpose();
  a2.rowwise() += CMapVec<T>(params.conv2_b.data.data(), f2).transpose();
  pattern = relu_in_place(tr.act2.data(), tr.act2.size(), pattern);
  tr.relu_pattern = pattern;
  mean_pool2(tr.act2.data(), h2, h2, f2, tr.pool2.data());

  MapVec<T> feat(tr.feature.data(), s.d_emb);
  feat.noalias() = CMapMat<T>(params.fc_w.data.data(), s.fc_in(), s.d_emb).transpose() *
                   CMapVec<T>(tr.pool2.data(), s.fc_in());
  feat += CMapVec<T>(params.fc_b.data.data(), s.d_emb);

  T norm = feat.norm();
  const T denom = norm < T(kNormGuard) ? norm + T(kNormGuard) : norm;
  MapVec<T>(tr.embedding.data(), s.d_emb) = feat / denom;
}

template <typename T>
void backward_one(const EncoderParams<T>& params, const EncoderTrace<T>& tr, const T* d_embedding,
                  ParamGrads<T>& g, T* d_image) {
  const EncoderShape& s = params.shape;
  const int n = s.image_size;
  const int h2 = n / 2;
  const int c = s.channels;
  constexpr int f1 = EncoderShape::kConv1Filters;
  constexpr int f2 = EncoderShape::kConv2Filters;
  const auto p1 = static_cast<Eigen::Index>(n) * n;
  const auto p2 = static_cast<Eigen::Index>(h2) * h2;

  // Normalisation Jacobian: (I - e e^T)/|f| in the regular case, guarded denominator otherwise.
  CMapVec<T> feat(tr.feature.data(), s.d_emb);
  CMapVec<T> de(d_embedding, s.d_emb);
  const T norm = feat.norm();
  Eigen::Matrix<T, Eigen::Dynamic, 1> df;
  if (norm >= T(kNormGuard)) {
    CMapVec<T> e(tr.embedding.data(), s.d_emb);
    df = (de - e * e.dot(de)) / norm;
  } else {
    const T denom = norm + T(kNormGuard);
    df = de / denom;
    if (norm > T(0)) df -= feat * (feat.dot(de) / (denom * denom * norm));
  }

  CMapVec<T> pool2(tr.pool2.data(), s.fc_in());
  MapMat<T>(g.fc_w.data.data(), s.fc_in(), s.d_emb).noalias() += pool2 * df.transpose();
  MapVec<T>(g.fc_b.data.data(), s.d_emb) += df;
  std::vector<T> d_pool2(static_cast<std::size_t>(s.fc_in()));
  MapVec<T>(d_pool2.data(), s.fc_in()).noalias() = CMapMat<T>(params.fc_w.data.data(), s.fc_in(), s.d_emb) * df;

  std::vector<T> d_act2(tr.act2.size());
  unpool_relu(d_pool2.data(), tr.act2.data(), h2, h2, f2, d_act2.data());
  CMapMat<T> da2(d_act2.data(), p2, f2);
  MapMat<T>(g.conv2_w.data.data(), f2, 9 * f1).noalias() += da2.transpose() * CMapMat<T>(tr.col2.data(), p2, 9 * f1);
  MapVec<T>(g.conv2_b.data.data(), f2) += da2.colwise().sum().transpose();

  std::vector<T> d_col2(tr.col2.size());
  MapMat<T>(d_col2.data(), p2, 9 * f1).noalias() = da2 * CMapMat<T>(params.conv2_w.data.data(), f2, 9 * f1);
  std::vector<T> d_pool1(tr.pool1.size());
  col2im3x3(d_col2.data(), h2, h2, f1, d_pool1.data());

  std::vector<T> d_act1(tr.act1.size());
  unpool_relu(d_pool1.data(), tr.act1.data(), n, n, f1, d_act1.data());
  CMapMat<T> da1(d_act1.data(), p1, f1);
  MapMat<T>(g.conv1_w.data.data(), f1, 9 * c).noalias() += da1.transpose() * CMapMat<T>(tr.col1.data(), p1, 9 * c);
  MapVec<T>(g.conv1_b.data.data(), f1) += da1.colwise().sum().transpose();

  if (d_image != nullptr) {
    std::vector<T> d_col1(tr.col1.size());
    MapMat<T>(d_col1.data(), p1, 9 * c).noalias() = da1 * CMapMat<T>(params.conv1_w.data.data(), f1, 9 * c);
    col2im3x3(d_col1.data(), n, n, c, d_image);
  }
}

template <typename T>
void add_into(ParamGrads<T>& acc, const ParamGrads<T>& g) {
  auto a = acc.tensors();
  auto b = g.tensors();
  for (std::size_t k = 0; k < a.size(); ++k) {
    auto& dst = a[k].second->data;
    const auto& src = b[k].second->data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

namespace {

template <typename T>
void check_batch(const EncoderParams<T>& params, const Tensor<T>& batch) {
  const EncoderShape& s = params.shape;
  require(batch.shape.size() == 4 && batch.shape[1] == s.image_size && batch.shape[2] == s.image_size &&
              batch.shape[3] == s.channels,
          "batch shape does not match the encoder's image size");
}

}  // namespace

template <typename T>
Tensor<T> forward(const EncoderParams<T>& params, const Tensor<T>& batch) {
  check_batch(params, batch);
  const auto n = static_cast<std::size_t>(batch.shape[0]);
  const auto d = static_cast<std::size_t>(params.shape.d_emb);
  Tensor<T> out({batch.shape[0], params.shape.d_emb});
  parallel_for(n, [&](std::size_t i) {
    EncoderTrace<T> tr;
    forward_one(params, batch.row(i), tr);
    std::copy(tr.embedding.begin(), tr.embedding.end(), out.data.begin() + i * d);
  });
  return out;
}

template <typename T>
ParamGrads<T> backward(const EncoderParams<T>& params, const Tensor<T>& batch, const Tensor<T>& d_embeddings) {
  check_batch(params, batch);
  require(d_embeddings.shape == std::vector<int>{batch.shape[0], params.shape.d_emb},
          "cotangent shape does not match the forward output");
  const auto n = static_cast<std::size_t>(batch.shape[0]);
  const std::size_t chunks = (n + kReductionChunk - 1) / kReductionChunk;
  std::vector<ParamGrads<T>> partial(chunks);
  parallel_for(chunks, [&](std::size_t k) {
    partial[k] = ParamGrads<T>::zeros(params.shape);
    EncoderTrace<T> tr;
    for (std::size_t i = k * kReductionChunk; i < std::min(n, (k + 1) * kReductionChunk); ++i) {
      forward_one(params, batch.row(i), tr);
      backward_one(params, tr, d_embeddings.row(i), partial[k], static_cast<T*>(nullptr));
    }
  });
  ParamGrads<T> total = ParamGrads<T>::zeros(params.shape);
  for (const auto& p : partial) add_into(total, p);
  return total;
}

template <typename T>
std::vector<T> input_gradient(const EncoderParams<T>& params, std::span<const T> image, std::span<const T> d_embedding) {
  const EncoderShape& s = params.shape;
  require(image.size() == static_cast<std::size_t>(s.image_size) * s.image_size * s.channels,
          "image size does not match the encoder");
  require(d_embedding.size() == static_cast<std::size_t>(s.d_emb), "cotangent length does not match d_emb");
  EncoderTrace<T> tr;
  forward_one(params, image.data(), tr);
  ParamGrads<T> scratch = ParamGrads<T>::zeros(s);
  std::vector<T> d_image(image.size());
  backward_one(params, tr, d_embedding.data(), scratch, d_image.data());
  return d_image;
}

// ---------------------------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

std::vector<std::size_t> sample_coords(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count >= n) return idx;
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(count);
  return idx;
}

void record(GradCheckReport& r, double analytic, double numeric, const std::string& where) {
  const double err = relative_error(analytic, numeric);
  ++r.checked;
  if (err > r.max_rel_error || r.worst.empty()) {
    r.max_rel_error = std::max(err, r.max_rel_error);
    r.worst = where;
  }
}

}  // namespace

GradCheckReport finite_diff_check(const VectorObjective& f, std::span<const double> x, double h, std::size_t coords,
                                  std::uint64_t seed, const std::vector<double>* analytic_override) {
  std::vector<double> grad;
  const Evaluation base = f(x, &grad);
  if (analytic_override != nullptr) grad = *analytic_override;
  require(grad.size() == x.size(), "objective returned a gradient of the wrong length");
  Rng rng(seed);
  GradCheckReport report;
  std::vector<double> probe(x.begin(), x.end());
  for (std::size_t i : sample_coords(x.size(), coords, rng)) {
    probe[i] = x[i] + h;
    const Evaluation plus = f(probe, nullptr);
    probe[i] = x[i] - h;
    const Evaluation minus = f(probe, nullptr);
    probe[i] = x[i];
    if (plus.kink_signature != base.kink_signature || minus.kink_signature != base.kink_signature) {
      ++report.skipped_kinks;
      continue;
    }
    record(report, grad[i], (plus.value - minus.value) / (2.0 * h), "x[" + std::to_string(i) + "]");
  }
  return report;
}

GradCheckReport finite_diff_check(const ParamObjective& f, const EncoderParams<double>& params, double h,
                                  std::size_t coords_per_tensor, std::uint64_t seed,
                                  const ParamGrads<double>* analytic_override) {
  ParamGrads<double> grad = ParamGrads<double>::zeros(params.shape);
  const Evaluation base = f(params, &grad);
  if (analytic_override != nullptr) grad = *analytic_override;
  Rng rng(seed);
  GradCheckReport report;
  EncoderParams<double> probe = params;
  auto probe_tensors = probe.tensors();
  auto grad_tensors = grad.tensors();
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    auto& [name, tensor] = probe_tensors[t];
    for (std::size_t i : sample_coords(tensor->numel(), coords_per_tensor, rng)) {
      const double orig = tensor->data[i];
      tensor->data[i] = orig + h;
      const Evaluation plus = f(probe, nullptr);
      tensor->data[i] = orig - h;
      const Evaluation minus = f(probe, nullptr);
      tensor->data[i] = orig;
      if (plus.kink_signature != base.kink_signature || minus.kink_signature != base.kink_signature) {
        ++report.skipped_kinks;
        continue;
      }
      record(report, grad_tensors[t].second->data[i], (plus.value - minus.value) / (2.0 * h),
             name + "[" + std::to_string(i) + "]");
    }
  }
  return report;
}

#define BLENDLAB_INSTANTIATE(T)                                                                               \
  template struct EncoderParams<T>;                                                                           \
  template Tensor<T> images_to_batch<T>(std::span<const Image* const>);                                       \
  template void forward_one<T>(const EncoderParams<T>&, const T*, EncoderTrace<T>&);                          \
  template Tensor<T> forward<T>(const EncoderParams<T>&, const Tensor<T>&);                                   \
  template void backward_one<T>(const EncoderParams<T>&, const EncoderTrace<T>&, const T*, ParamGrads<T>&, T*); \
  template ParamGrads<T> backward<T>(const EncoderParams<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template std::vector<T> input_gradient<T>(const EncoderParams<T>&, std::span<const T>, std::span<const T>);  \
  template void add_into<T>(ParamGrads<T>&, const ParamGrads<T>&);

BLENDLAB_INSTANTIATE(float)
BLENDLAB_INSTANTIATE(double)
#undef BLENDLAB_INSTANTIATE

template EncoderParams<double> EncoderParams<float>::cast<double>() const;
template EncoderParams<float> EncoderParams<double>::cast<float>() const;
template EncoderParams<float> EncoderParams<float>::cast<float>() const;
template EncoderParams<double> EncoderParams<double>::cast<double>() const;

}  // namespace blendlab
