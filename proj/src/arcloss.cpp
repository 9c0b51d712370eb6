#include "blendlab/arcloss.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "blendlab/common.hpp"
#include "blendlab/parallel.hpp"

namespace blendlab {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::uint64_t kShuffleStream = 0x5F;
constexpr std::uint64_t kReplaceStream = 0x8E;
constexpr std::uint64_t kInitStream = 0x11;
constexpr std::size_t kReductionChunk = 8;

}  // namespace

void MarginConfig::validate() const {
  if (!(s > 0.0)) fail(ErrorCode::kConfig, "margin config: s must be > 0");
  if (!(m >= 0.0 && m < std::numbers::pi / 2)) fail(ErrorCode::kConfig, "margin config: m must lie in [0, pi/2)");
  if (K < 2) fail(ErrorCode::kConfig, "margin config: K must be >= 2");
}

void PretrainConfig::validate() const {
  if (!(p_replace >= 0.0 && p_replace <= 1.0)) fail(ErrorCode::kConfig, "pretrain config: p must lie in [0,1]");
  if (epochs < 1) fail(ErrorCode::kConfig, "pretrain config: epochs must be >= 1");
  if (batch_size < 1) fail(ErrorCode::kConfig, "pretrain config: batch_size must be >= 1");
  if (!(lr > 0.0)) fail(ErrorCode::kConfig, "pretrain config: lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorCode::kConfig, "pretrain config: momentum must lie in [0,1)");
  if (lr_schedule != "cosine" && lr_schedule != "constant")
    fail(ErrorCode::kConfig, "pretrain config: lr_schedule must be 'cosine' or 'constant'");
  blend.validate();
}

template <typename T>
MarginLossResult<T> margin_loss(const Tensor<T>& embeddings, std::span<const int> labels, const Tensor<T>& head,
                                const MarginConfig& cfg) {
  cfg.validate();
  require(embeddings.shape.size() == 2 && head.shape.size() == 2, "margin loss expects 2-D embeddings and head");
  const int b = embeddings.shape[0];
  const int d = embeddings.shape[1];
  const int k = head.shape[0];
  require(head.shape[1] == d, "head width does not match embedding width");
  require(k == cfg.K, "head rows do not match the configured class count");
  require(labels.size() == static_cast<std::size_t>(b), "label count does not match the batch");
  for (int y : labels) require(y >= 0 && y < k, "label out of range [0, K)");

  using Mat = RowMat<T>;
  const Eigen::Map<const Mat> e(embeddings.data.data(), b, d);
  const Eigen::Map<const Mat> w(head.data.data(), k, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = w.rowwise().norm();
  for (int r = 0; r < k; ++r)
    if (norms[r] < T(kNormGuard)) norms[r] += T(kNormGuard);
  const Mat wn = norms.cwiseInverse().asDiagonal() * w;
  const Mat cosines = e * wn.transpose();  // [B, K]

  const T s = static_cast<T>(cfg.s);
  const T cos_m = static_cast<T>(std::cos(cfg.m));
  const T sin_m = static_cast<T>(std::sin(cfg.m));
  const T inv_b = T(1) / static_cast<T>(b);

  MarginLossResult<T> out;
  Mat d_cos = Mat::Zero(b, k);
  T total = T(0);
  std::vector<T> logits(static_cast<std::size_t>(k));
  for (int i = 0; i < b; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    const T c = cosines(i, y);
    const T sin_theta = std::sqrt(std::max(T(1) - c * c, T(0)));
    int argmax = 0;
    for (int j = 0; j < k; ++j) {
      logits[static_cast<std::size_t>(j)] = s * cosines(i, j);
      if (cosines(i, j) > cosines(i, argmax)) argmax = j;
    }
    if (argmax == y) ++out.correct;
    logits[static_cast<std::size_t>(y)] = s * (c * cos_m - sin_theta * sin_m);
    const T peak = *std::max_element(logits.begin(), logits.end());
    T sum = T(0);
    for (T z : logits) sum += std::exp(z - peak);
    const T log_z = peak + std::log(sum);
    total += log_z - logits[static_cast<std::size_t>(y)];
    for (int j = 0; j < k; ++j) {
      const T prob = std::exp(logits[static_cast<std::size_t>(j)] - log_z);
      const T dz = (prob - (j == y ? T(1) : T(0))) * inv_b;
      if (j == y) {
        const T dlogit_dc = sin_theta > T(0) ? s * (cos_m + c * sin_m / sin_theta) : s * cos_m;
        d_cos(i, j) = dz * dlogit_dc;
      } else {
        d_cos(i, j) = dz * s;
      }
    }
  }
  out.loss = total * inv_b;

  out.d_embeddings = Tensor<T>({b, d});
  Eigen::Map<Mat>(out.d_embeddings.data.data(), b, d).noalias() = d_cos * wn;
  const Mat d_wn = d_cos.transpose() * e;  // [K, d]
  out.d_head = Tensor<T>({k, d});
  Eigen::Map<Mat> dw(out.d_head.data.data(), k, d);
  for (int r = 0; r < k; ++r) {
    const T proj = wn.row(r).dot(d_wn.row(r));
    dw.row(r) = (d_wn.row(r) - wn.row(r) * proj) / norms[r];
  }
  return out;
}

template MarginLossResult<float> margin_loss<float>(const Tensor<float>&, std::span<const int>, const Tensor<float>&,
                                                    const MarginConfig&);
template MarginLossResult<double> margin_loss<double>(const Tensor<double>&, std::span<const int>,
                                                      const Tensor<double>&, const MarginConfig&);

Tensor<float> embed_all(const EncoderParams<float>& params, const IdentityDataset& dataset) {
  const auto n = dataset.samples.size();
  const auto d = static_cast<std::size_t>(params.shape.d_emb);
  Tensor<float> out({static_cast<int>(n), params.shape.d_emb});
  parallel_for(n, [&](std::size_t i) {
    EncoderTrace<float> tr;
    forward_one(params, dataset.samples[i].image.data.data(), tr);
    std::copy(tr.embedding.begin(), tr.embedding.end(), out.data.begin() + i * d);
  });
  return out;
}

double classification_accuracy(const EncoderParams<float>& params, const IdentityDataset& dataset) {
  const Tensor<float> emb = embed_all(params, dataset);
  EncoderParams<float> p = params;
  p.normalize_head_rows();
  const auto d = static_cast<std::size_t>(params.shape.d_emb);
  const auto k = static_cast<std::size_t>(params.shape.num_classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t c = 0; c < k; ++c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(emb.data[i * d + j]) * p.head.data[c * d + j];
      if (dot > best_cos) {
        best_cos = dot;
        best = c;
      }
    }
    if (static_cast<int>(best) == dataset.samples[i].id_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.samples.size());
}

EncoderCheckpoint pretrain(const IdentityDataset& dataset, const PretrainConfig& pcfg, const MarginConfig& mcfg,
                           const EpochCallback& on_epoch) {
  pcfg.validate();
  mcfg.validate();
  dataset.validate();
  require(dataset.num_identities() == mcfg.K,
          "dataset identity count (" + std::to_string(dataset.num_identities()) + ") must equal margin K (" +
              std::to_string(mcfg.K) + ")");

  EncoderShape shape;
  shape.image_size = dataset.config.image_size;
  shape.channels = dataset.config.channels;
  shape.num_classes = mcfg.K;
  EncoderCheckpoint ckpt;
  ckpt.params = EncoderParams<float>::init(shape, derive_seed(pcfg.seed, {kInitStream}));
  ckpt.pretrain_cfg = pcfg;
  ckpt.margin_cfg = mcfg;
  ckpt.data_cfg = dataset.config;

  EncoderParams<float>& params = ckpt.params;
  ParamGrads<float> velocity = ParamGrads<float>::zeros(shape);

  const std::size_t n = dataset.samples.size();
  const auto batch = static_cast<std::size_t>(pcfg.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(pcfg.epochs);
  const auto d = static_cast<std::size_t>(shape.d_emb);

  std::vector<std::size_t> order(n);
  std::vector<EncoderTrace<float>> traces(batch);
  std::vector<Image> blended(batch);
  std::vector<char> replaced(batch);
  std::size_t step = 0;

  for (int epoch = 0; epoch < pcfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng = make_rng(pcfg.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog log;
    log.epoch = epoch + 1;
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t bsz = std::min(batch, n - start);
      std::vector<int> labels(bsz);

      parallel_for(bsz, [&](std::size_t j) {
        const std::size_t idx = order[start + j];
        const FaceSample& sample = dataset.samples[idx];
        labels[j] = sample.id_label;
        Rng rng = make_rng(pcfg.seed, {kReplaceStream, static_cast<std::uint64_t>(epoch), idx});
        replaced[j] = uniform01(rng) < pcfg.p_replace ? 1 : 0;
        const float* input = sample.image.data.data();
        if (replaced[j] != 0) {
          blended[j] = pseudo_positive(sample, dataset, rng, pcfg.blend).image;
          input = blended[j].data.data();
        }
        forward_one(params, input, traces[j]);
      });

      Tensor<float> emb({static_cast<int>(bsz), shape.d_emb});
      for (std::size_t j = 0; j < bsz; ++j) {
        std::copy(traces[j].embedding.begin(), traces[j].embedding.end(), emb.data.begin() + j * d);
        log.replaced += static_cast<std::size_t>(replaced[j]);
      }
      const MarginLossResult<float> ml = margin_loss(emb, labels, params.head, mcfg);
      loss_sum += static_cast<double>(ml.loss) * static_cast<double>(bsz);
      correct += ml.correct;

      const std::size_t chunks = (bsz + kReductionChunk - 1) / kReductionChunk;
      std::vector<ParamGrads<float>> partial(chunks);
      parallel_for(chunks, [&](std::size_t c) {
        partial[c] = ParamGrads<float>::zeros(shape);
        for (std::size_t j = c * kReductionChunk; j < std::min(bsz, (c + 1) * kReductionChunk); ++j)
          backward_one(params, traces[j], ml.d_embeddings.row(j), partial[c], static_cast<float*>(nullptr));
      });
      ParamGrads<float> grads = ParamGrads<float>::zeros(shape);
      for (const auto& g : partial) add_into(grads, g);
      grads.head.data = ml.d_head.data;

      double lr = pcfg.lr;
      if (pcfg.lr_schedule == "cosine")
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
      const auto mom = static_cast<float>(pcfg.momentum);
      auto pt = params.tensors();
      auto vt = velocity.tensors();
      auto gt = grads.tensors();
      for (std::size_t t = 0; t < pt.size(); ++t) {
        auto& w = pt[t].second->data;
        auto& v = vt[t].second->data;
        const auto& g = gt[t].second->data;
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = mom * v[i] + g[i];
          w[i] -= static_cast<float>(lr) * v[i];
        }
      }
      params.normalize_head_rows();
      ++step;
    }
    require(params.all_finite(), "training diverged: non-finite parameters at epoch " + std::to_string(epoch + 1));
    log.seen = n;
    log.loss = loss_sum / static_cast<double>(n);
    log.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    ckpt.training_log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  ckpt.clean_train_accuracy = classification_accuracy(params, dataset);
  return ckpt;
}

}  // namespace blendlab
