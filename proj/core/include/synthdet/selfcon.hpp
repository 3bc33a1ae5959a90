#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "synthdet/model.hpp"

namespace synthdet::selfcon {

/// Generator-group label carried by real images.
inline constexpr std::int64_t kRealLabel = -1;

struct EmbeddingBatch {
  torch::Tensor views;                   // [N, |Omega|, D], unit rows
  std::vector<std::int64_t> det_labels;  // 0 real, 1 synthetic
  std::vector<std::int64_t> gen_labels;  // generator group, kRealLabel for reals

  std::int64_t size() const { return views.defined() ? views.size(0) : 0; }
  /// Throws DegenerateBatch (N < 2), ShapeMismatch, InvalidArgument (non-unit rows).
  void validate(double tolerance = 1e-5) const;
};

struct LossConfig {
  double temperature = 0.07;
  double w_detection = 1.0;
  double w_model_id = 1.0;

  void validate() const;
};

/// Self-contrastive loss over views [N, V, D] with one label per example.
/// For anchor i and view w, positives are the other examples sharing i's
/// label; the contrast set is every other example. Each (i, w) contributes
///   -1/(|P(i)| V) * sum_{p, w'} log softmax_{l != i}(z_iw . z_lw' / tau)[p],
/// and contributions are summed (not averaged) over anchors. Anchors without
/// positives are skipped. Differentiable in `views`.
/// Throws DegenerateBatch (N < 2), NoPositives (every anchor skipped).
torch::Tensor selfcon_loss(const torch::Tensor& views, std::span<const std::int64_t> labels,
                           double temperature);

struct DualLoss {
  torch::Tensor total;
  torch::Tensor detection;
  torch::Tensor model_id;
  bool model_id_skipped = false;  // fewer than two synthetic examples
};

/// Weighted sum of the detection-label loss and the generator-label loss;
/// reals are removed from the batch before the generator-label term.
DualLoss dual_track_loss(const torch::Tensor& views, std::span<const std::int64_t> det_labels,
                         std::span<const std::int64_t> gen_labels, const LossConfig& cfg);
DualLoss dual_track_loss(const EmbeddingBatch& batch, const LossConfig& cfg);

/// Embeds rows [begin, end) of the batch; the result must depend only on
/// those rows.
using EmbedFn = std::function<torch::Tensor(std::int64_t begin, std::int64_t end)>;
/// Scalar loss over the embeddings of the whole batch.
using BatchLossFn = std::function<torch::Tensor(const torch::Tensor& embeddings)>;

/// Accumulates into the parameters' .grad() the gradient of
/// loss(embed(0, N)) while holding activations for at most `chunk` rows:
/// embed every chunk without autograd, take d loss / d embeddings once, then
/// re-embed chunk by chunk (ascending) and back-propagate the stored slice.
/// Returns the loss value. Throws ChunkTooLarge, NonFiniteLoss.
double cached_gradient_step(std::int64_t n, std::int64_t chunk, const EmbedFn& embed,
                            const BatchLossFn& loss);
/// Reference path: one forward and one backward over the full batch.
double full_batch_gradient_step(std::int64_t n, const EmbedFn& embed, const BatchLossFn& loss);

struct StepResult {
  double total = 0.0;
  double detection = 0.0;
  double model_id = 0.0;
  bool model_id_skipped = false;
};

/// Zeroes the network's gradients and runs the cached step with the dual
/// loss. Normalization layers in training mode update running statistics in
/// the first pass only.
StepResult cached_gradient_step(model::DetectorNet& net, const torch::Tensor& images,
                                std::span<const std::int64_t> det_labels,
                                std::span<const std::int64_t> gen_labels, const LossConfig& cfg,
                                std::int64_t chunk);

/// Copies of every parameter gradient (zeros where undefined), in
/// registration order.
std::vector<torch::Tensor> gradients(const torch::nn::Module& module);

}  // namespace synthdet::selfcon
