#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthdet/dataset.hpp"
#include "synthdet/eval.hpp"
#include "synthdet/imgproc.hpp"
#include "synthdet/manifest.hpp"
#include "synthdet/model.hpp"
#include "synthdet/selfcon.hpp"

namespace synthdet::train {

enum class Stage { Pretrain, Calibrate, Ablation };
std::string_view to_string(Stage s);

/// How calibration images are produced: the calibration augmentation policy,
/// or a deterministic center crop of `clean_size` (features are then computed
/// once and reused across epochs).
enum class CalibrationInput { Policy, Clean };

struct OptimizerSpec {
  std::string name = "sgd";  // "sgd" (pretrain) or "adamw" (calibrate)
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

struct TrainConfig {
  Stage stage = Stage::Pretrain;
  int epochs = 400;
  int batch_size = 200;
  double base_lr = 0.005;
  double warmup_epochs = 10;  // pretrain only; calibration uses a constant rate
  int chunk = 50;             // gradient-cache chunk, pretrain only
  OptimizerSpec optimizer;
  selfcon::LossConfig loss;
  model::ModelConfig model;
  imgproc::PretrainPolicy pretrain_policy;
  imgproc::CalibrationPolicy calibration_policy;
  CalibrationInput calibration_input = CalibrationInput::Policy;
  int clean_size = 256;
  std::uint64_t seed = 0;
  std::string manifest_path;
  std::string checkpoint_dir;  // per-epoch checkpoints; empty disables them
  std::string log_path;

  /// Throws ConfigError.
  void validate() const;

  static TrainConfig pretrain_defaults();
  static TrainConfig calibrate_defaults();
};

/// Linear warmup from 0 to base_lr over warmup_epochs, then cosine annealing
/// to 0 at cfg.epochs. Throws OutOfRange outside [0, epochs], InvalidArgument
/// for a non-pretrain config.
double lr_at(double epoch_fraction, const TrainConfig& cfg);

/// Append-only structured log, one JSON object per line. Records are also
/// kept in memory.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(const std::filesystem::path& path, bool append = false);

  void write(const nlohmann::ordered_json& record);
  const std::vector<nlohmann::ordered_json>& records() const { return records_; }
  /// Records of the given "type" ("step", "epoch", ...).
  std::vector<nlohmann::ordered_json> of_type(std::string_view type) const;

 private:
  std::ofstream out_;
  std::vector<nlohmann::ordered_json> records_;
  std::int64_t last_global_step_ = -1;
};

struct PretrainOptions {
  /// Checkpoint written by an earlier pretrain run with the same config.
  std::optional<std::filesystem::path> resume_from;
  /// Return after this many completed epochs (simulates an interruption).
  std::optional<int> stop_after_epoch;
};

/// Contrastive pretraining on the manifest's train split. Each step feeds one
/// balanced batch through selfcon::cached_gradient_step and a momentum-SGD
/// update at lr_at(epoch + (step + 0.5) / steps). Throws DataExhausted on an
/// empty train split, NonFiniteLoss, ConfigMismatch on an incompatible resume.
model::DetectorCheckpoint pretrain(const TrainConfig& cfg, const manifest::Manifest& m,
                                   const data::ImageStore& store, TrainLog& log,
                                   const PretrainOptions& options = {});

/// Replaces the projection heads with the classifier, refreshes residual
/// normalization statistics over the calibration images, then trains only the
/// classifier (AdamW, constant rate) with cross-entropy on detection labels
/// plus model-ID labels of the synthetic examples. Throws WrongMode,
/// UnbalancedCalibration.
model::DetectorCheckpoint calibrate(const model::DetectorCheckpoint& ckpt, const TrainConfig& cfg,
                                    std::span<const manifest::ImageRecord> records,
                                    const data::ImageStore& store, TrainLog& log);
/// Uses the manifest's calibration split.
model::DetectorCheckpoint calibrate(const model::DetectorCheckpoint& ckpt, const TrainConfig& cfg,
                                    const manifest::Manifest& m, const data::ImageStore& store,
                                    TrainLog& log);

struct AblationConfig {
  std::vector<ContentType> content_types{ContentType::Photo, ContentType::Painting,
                                         ContentType::Face};
  std::int64_t train_per_class = 4500;
  std::int64_t test_per_class = 1000;
  int eval_size = 256;  // clean center crop used for scoring
  TrainConfig pretrain;
  TrainConfig calibrate;
};

/// Training and test records for one held-out content type: for every listed
/// type the first `train_per_class` real and synthetic train records (in
/// manifest order) and likewise `test_per_class` test records; the held-out
/// type's training records are then removed. Throws InsufficientData.
manifest::Manifest loocv_subset(const manifest::Manifest& source, ContentType held_out,
                                const AblationConfig& cfg);

struct AblationRun {
  ContentType held_out;
  std::int64_t train_count = 0;
  std::int64_t held_out_train_count = 0;
  eval::MetricsReport report;  // per content type accuracy and AUC on clean test images
};

/// One model per content type, each trained from scratch without that type.
/// Throws InsufficientData with fewer than two types.
std::vector<AblationRun> loocv_ablation(const AblationConfig& cfg, const manifest::Manifest& source,
                                        const data::ImageStore& store, TrainLog& log);

/// Per-content-type metrics for a calibrated network on clean center crops of
/// the test split.
eval::MetricsReport content_type_report(const model::DetectorNet& net, const manifest::Manifest& m,
                                        const data::ImageStore& store, int eval_size,
                                        int batch_size);

/// Complete run description parsed from a JSON config file. Unknown keys are
/// rejected; missing keys take the defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_root;
  std::string output_dir = "runs/default";
  std::string manifest;
  TrainConfig pretrain = TrainConfig::pretrain_defaults();
  TrainConfig calibrate = TrainConfig::calibrate_defaults();
  AblationConfig ablation;
  eval::EvalConfig eval;
  nlohmann::ordered_json resolved;  // defaults merged with the file, after overrides

  /// `seed_override` replaces the file's seed in every section.
  static RunConfig from_json(const nlohmann::json& j,
                             std::optional<std::uint64_t> seed_override = std::nullopt);
  static RunConfig load(const std::filesystem::path& path,
                        std::optional<std::uint64_t> seed_override = std::nullopt);
  static nlohmann::ordered_json defaults();
};

}  // namespace synthdet::train
