#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "blendlab/blendpipe.hpp"
#include "blendlab/netcore.hpp"
#include "blendlab/synthfaces.hpp"

namespace blendlab {

struct MarginConfig {
  double s = 8.0;   // logit scale
  double m = 0.3;   // additive angular margin, radians
  int K = 200;      // class count

  void validate() const;
};

struct PretrainConfig {
  double p_replace = 0.5;
  int epochs = 20;
  int batch_size = 128;
  double lr = 0.05;
  double momentum = 0.9;
  std::string lr_schedule = "cosine";  // "cosine" (decay to 0) or "constant"
  std::uint64_t seed = 1;
  BlendConfig blend;  // in-training pseudo-positive construction

  void validate() const;
};

template <typename T>
struct MarginLossResult {
  T loss = T(0);
  Tensor<T> d_embeddings;  // [B, d_emb]
  Tensor<T> d_head;        // [K, d_emb], w.r.t. the raw (unnormalised) head rows
  std::size_t correct = 0;  // argmax of plain cosine logits equals the label
};

/// Additive angular margin softmax loss, averaged over the batch. Head rows are
/// normalised internally; embeddings are used as given.
template <typename T>
MarginLossResult<T> margin_loss(const Tensor<T>& embeddings, std::span<const int> labels, const Tensor<T>& head,
                                const MarginConfig& cfg);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // over the (possibly blended) training inputs
  std::size_t replaced = 0;
  std::size_t seen = 0;
};

struct EncoderCheckpoint {
  EncoderParams<float> params;
  PretrainConfig pretrain_cfg;
  MarginConfig margin_cfg;
  SynthConfig data_cfg;
  std::vector<EpochLog> training_log;
  double clean_train_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

EncoderCheckpoint pretrain(const IdentityDataset& dataset, const PretrainConfig& pcfg, const MarginConfig& mcfg,
                           const EpochCallback& on_epoch = {});

/// Embeddings of every dataset image, [N, d_emb].
Tensor<float> embed_all(const EncoderParams<float>& params, const IdentityDataset& dataset);

/// Fraction of images whose nearest head row (plain cosine) is their label.
double classification_accuracy(const EncoderParams<float>& params, const IdentityDataset& dataset);

}  // namespace blendlab
