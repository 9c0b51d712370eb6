#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "blendlab/blendpipe.hpp"
#include "blendlab/netcore.hpp"
#include "blendlab/synthfaces.hpp"

namespace blendlab {

struct LossWeights {
  double lambda1 = 10.0;  // identity
  double lambda2 = 5.0;   // reconstruction
  double lambda3 = 5.0;   // cycle

  void validate() const;
};

// L1 and BCE terms are sums over pixels; kMean divides by the element count.
enum class Reduction { kSum, kMean };

struct SwapPair {
  FaceSample source;
  FaceSample target;
  std::size_t source_index = 0;
  std::size_t target_index = 0;
  bool same_identity = false;
};

/// Double-precision image used by the loss suite so finite differences stay meaningful.
struct ImageD {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;
};

ImageD to_double(const Image& img);
Image to_float(const ImageD& img);

struct SwapOutput {
  ImageD image;
  Mask mask;
};

/// A face swapper G(source, target). Masks travel with the images because the
/// analytic blender needs them; a learned generator would ignore them.
class Swapper {
 public:
  virtual ~Swapper() = default;
  virtual SwapOutput swap(const ImageD& source, const Mask& source_mask, const ImageD& target,
                          const Mask& target_mask) const = 0;
  /// Vector-Jacobian product of the output image w.r.t. the target image.
  virtual std::vector<double> target_vjp(const ImageD& source, const Mask& source_mask, const ImageD& target,
                                         const Mask& target_mask, std::span<const double> cotangent) const = 0;
};

/// blend(source, target, make_blend_mask(source_mask, target_mask)). Masks are treated as constants.
class OracleBlender final : public Swapper {
 public:
  explicit OracleBlender(BlendConfig cfg = {}) : cfg_(cfg) {}
  SwapOutput swap(const ImageD& source, const Mask& source_mask, const ImageD& target,
                  const Mask& target_mask) const override;
  std::vector<double> target_vjp(const ImageD& source, const Mask& source_mask, const ImageD& target,
                                 const Mask& target_mask, std::span<const double> cotangent) const override;

 private:
  BlendConfig cfg_;
};

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;         // empty when not requested
  std::uint64_t kink_signature = 0;  // changes when an abs/clamp switches branch
};

/// 1 - <E(x_src), E(y)>; gradient w.r.t. y.
LossValue id_loss(const EncoderParams<double>& encoder, std::span<const double> x_src, std::span<const double> y,
                  bool want_grad = true);

inline constexpr double kBceEps = 1e-7;
LossValue mask_bce(std::span<const double> pred, std::span<const double> gt, Reduction r = Reduction::kSum,
                   bool want_grad = true);

LossValue rec_loss(bool same_identity, std::span<const double> x_t, std::span<const double> y,
                   Reduction r = Reduction::kSum, bool want_grad = true);

/// ||x_t - G(x_t, y)||_1, the swapper run with x_t as source and y as target.
LossValue cycle_loss(const Swapper& swapper, const ImageD& x_t, const Mask& x_t_mask, const ImageD& y,
                     const Mask& y_mask, Reduction r = Reduction::kSum, bool want_grad = true);

struct LossComponents {
  double id_loss = 0.0;
  double mask_loss = 0.0;
  double rec_loss = 0.0;
  double cyc_loss = 0.0;
  double adversarial = 0.0;  // pluggable addend; nothing in this library produces it
};

double total_loss(const LossComponents& c, const LossWeights& w);

struct LossReport {
  LossComponents components;
  double total = 0.0;
  bool adversarial_included = false;
  std::vector<double> d_output;  // d total / d Y
  std::vector<double> d_mask;    // d total / d M_hat
};

/// Runs the swapper on a pair and evaluates the full suite against the target's inner mask.
LossReport evaluate_losses(const EncoderParams<double>& encoder, const SwapPair& pair, const Swapper& swapper,
                           const LossWeights& w, Reduction r = Reduction::kSum);

/// Same suite for an externally supplied output Y and predicted mask. The cycle term re-runs
/// the swapper with `cycle_mask` as Y's mask; that argument is not differentiated.
LossReport evaluate_losses(const EncoderParams<double>& encoder, const SwapPair& pair, const Swapper& swapper,
                           const ImageD& output, std::span<const double> mask, const Mask& cycle_mask,
                           const LossWeights& w, Reduction r = Reduction::kSum);

SwapPair sample_pair(const IdentityDataset& dataset, Rng& rng, double p_same);

/// Y = foreground * mask + x_t * (1 - mask).
Image composite_output(const Image& foreground, const Image& x_t, const Mask& mask);


}  // namespace blendlab
