#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "synthdet/imgproc.hpp"

namespace synthdet::model {

enum class BlockKind { Basic, Bottleneck };
enum class Mode { Pretrain, Calibrated };

std::string_view to_string(Mode m);

struct BackboneConfig {
  std::string preset = "tiny";
  BlockKind block = BlockKind::Basic;
  std::array<int, 4> layers{1, 1, 1, 1};
  std::array<int, 4> widths{8, 16, 32, 64};
  int stem_width = 8;
  int stem_kernel = 3;
  // Standard ResNet stems use stride 2 plus a 3x3/2 max-pool. The detector
  // keeps full resolution: stride 1, no pool.
  int stem_stride = 1;
  bool stem_pool = false;

  int feature_width() const {
    return block == BlockKind::Bottleneck ? widths[3] * 4 : widths[3];
  }
  int stage_width(int stage) const {
    return block == BlockKind::Bottleneck ? widths[stage] * 4 : widths[stage];
  }
};

/// "tiny" (8..64 channels, one block per stage), "small" (16..128),
/// "resnet18", "resnet50". All use the full-resolution stem.
BackboneConfig backbone_preset(std::string_view name);

struct ModelConfig {
  BackboneConfig backbone;
  int subnet_stage = 3;  // sub-network reads the output of this residual stage (1-based)
  int embedding_dim = 128;
  std::vector<int> classifier_hidden{256, 256};
  int model_id_classes = 4;
  int pretrain_input = 96;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  /// Hex FNV-1a of the canonical JSON form.
  std::string fingerprint() const;
};

struct ClassifierOutput {
  torch::Tensor detection;  // [N, 2]
  torch::Tensor model_id;   // [N, model_id_classes]
};

class DetectorNetImpl : public torch::nn::Module {
 public:
  explicit DetectorNetImpl(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  Mode mode() const { return mode_; }

  /// Output of the stem alone; exposes the spatial-resolution contract.
  torch::Tensor stem_forward(const torch::Tensor& x);
  /// Globally pooled final backbone features [N, C].
  torch::Tensor features(const torch::Tensor& x);
  /// Unit-norm projections [N, 2, embedding_dim], ordered (sub-network, main).
  torch::Tensor embed(const torch::Tensor& x);
  ClassifierOutput classify_features(const torch::Tensor& pooled);
  ClassifierOutput classify(const torch::Tensor& x);

  /// Detaches sub-network and projection heads, attaches the classifier.
  void to_calibrated();

  /// Normalization layers inside the residual blocks (the stem's is excluded).
  std::vector<torch::nn::BatchNorm2d> residual_norms() const;
  std::vector<torch::nn::BatchNorm2d> all_norms() const;
  std::vector<torch::Tensor> backbone_parameters() const;
  std::vector<torch::Tensor> classifier_parameters() const;
  void set_backbone_trainable(bool trainable);

  torch::nn::Sequential stem{nullptr};
  std::array<torch::nn::Sequential, 4> stages{nullptr, nullptr, nullptr, nullptr};
  torch::nn::Sequential subnet{nullptr};
  torch::nn::Sequential head_main{nullptr};
  torch::nn::Sequential head_sub{nullptr};
  torch::nn::Sequential classifier_trunk{nullptr};
  torch::nn::Linear detection_out{nullptr};
  torch::nn::Linear model_id_out{nullptr};

 private:
  torch::Tensor run_stages(torch::Tensor x, torch::Tensor* intermediate);

  ModelConfig config_;
  Mode mode_ = Mode::Pretrain;
};
TORCH_MODULE(DetectorNet);

/// Builds a fresh network; weights are initialized from `seed`.
DetectorNet make_detector(const ModelConfig& config, std::uint64_t seed);

/// Per-example projections for both mapping functions, [N, 2, embedding_dim].
/// Throws WrongMode outside pretrain mode and ShapeMismatch unless the batch
/// is [N, 3, S, S] with S = config.pretrain_input.
torch::Tensor forward_pretrain(DetectorNet& net, const torch::Tensor& images);

/// Throws WrongMode unless the network is in pretrain mode.
DetectorNet& to_calibrated(DetectorNet& net);

using BatchStream = std::function<std::optional<torch::Tensor>()>;

/// Resets and recomputes the running statistics of every residual-block
/// normalization layer as an equal-weight average over the stream's batches.
/// Learned parameters are untouched. Throws WrongMode, EmptyStream.
void refresh_norm_stats(DetectorNet& net, const BatchStream& stream);

std::int64_t parameter_count(const torch::nn::Module& module);
std::int64_t parameter_count(std::span<const torch::Tensor> params);
/// FNV-1a over the raw bytes of the given tensors, in order.
std::uint64_t tensor_checksum(std::span<const torch::Tensor> tensors);

/// Batch of RGB images as normalized float [N, 3, H, W]; all images must
/// share one size.
torch::Tensor to_tensor(std::span<const imgproc::Image> images);

/// Network snapshot: configuration, mode, and every named parameter and
/// buffer. `extra_tensors` and `extra` carry training state (optimizer
/// buffers, epoch counters).
struct DetectorCheckpoint {
  static constexpr int kFormatVersion = 1;

  ModelConfig config;
  Mode mode = Mode::Pretrain;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  std::vector<std::pair<std::string, torch::Tensor>> extra_tensors;
  nlohmann::json extra = nlohmann::json::object();
};

DetectorCheckpoint make_checkpoint(const DetectorNet& net);
/// Rebuilds the network. With `expected`, a fingerprint mismatch throws
/// ConfigMismatch.
DetectorNet restore(const DetectorCheckpoint& ckpt, const ModelConfig* expected = nullptr);

// Container: 8-byte magic "IMGNCKPT", little-endian u64 header length, JSON
// header (format version, config fingerprint, mode, config, tensor index),
// then the raw tensor blob.
void save_checkpoint(const DetectorCheckpoint& ckpt, const std::filesystem::path& path);
DetectorCheckpoint load_checkpoint(const std::filesystem::path& path);
DetectorCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace synthdet::model
