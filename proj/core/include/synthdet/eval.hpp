#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthdet/dataset.hpp"
#include "synthdet/imgproc.hpp"
#include "synthdet/manifest.hpp"
#include "synthdet/model.hpp"

namespace synthdet::eval {

/// Area under the ROC curve: the fraction of (positive, negative) pairs in
/// which the positive scores higher, ties counting one half. Labels are 0/1.
/// Throws SingleClass unless both labels occur, ShapeMismatch on length
/// mismatch.
double auc(std::span<const double> scores, std::span<const int> labels);

/// (TPR + TNR) / 2 where a score >= threshold predicts the positive class.
double balanced_accuracy(std::span<const double> scores, std::span<const int> labels,
                         double threshold);

struct ThresholdChoice {
  double threshold = 0.0;
  double balanced_accuracy = 0.0;
};

/// Exhaustive search over every distinct score (and +inf, predicting all
/// negative). Ties in accuracy keep the lowest threshold.
ThresholdChoice best_balanced_accuracy(std::span<const double> scores,
                                       std::span<const int> labels);

enum class Track { Detection, ModelId, Sweep, Ablation };
std::string_view to_string(Track t);

struct GroupMetrics {
  double accuracy = 0.0;
  double auc = 0.0;
  std::int64_t count = 0;
};

struct MetricsReport {
  Track track = Track::Detection;
  std::vector<std::pair<std::string, GroupMetrics>> groups;  // report order
  double mean_accuracy = 0.0;
  double mean_auc = 0.0;
  std::string config_fingerprint;
  std::string perturbation;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  const GroupMetrics& group(std::string_view name) const;
  /// Sets both means to the unweighted mean over groups.
  void finalize();
  nlohmann::ordered_json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

void write_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_report(const std::filesystem::path& path);

struct Prediction {
  double detection_score = 0.0;          // higher = more likely synthetic
  std::vector<double> model_id_scores;   // one per model-ID class
};

/// Scores a batch. Records are passed alongside images so reference
/// predictors (oracles, coin flips) can be plugged in for testing.
using Predictor = std::function<std::vector<Prediction>(
    std::span<const manifest::ImageRecord>, std::span<const imgproc::Image>)>;

/// Softmax probabilities from a calibrated network: detection score is
/// P(synthetic). Images are scored in eval mode, in batches of equal size.
/// Throws WrongMode for a network in pretrain mode.
Predictor make_predictor(model::DetectorNet net, int batch_size = 32);

struct EvalConfig {
  imgproc::TestPolicy test_policy;
  int batch_size = 32;
  std::string config_fingerprint;
};

/// Test-split images after the social-network perturbation; record i's draw
/// depends only on (seed, record id).
imgproc::Image perturbed_test_image(const manifest::ImageRecord& r, const data::ImageStore& store,
                                    std::uint64_t seed, const imgproc::TestPolicy& policy);

struct Scored {
  manifest::ImageRecord record;
  Prediction prediction;
};

/// Perturbs and scores every test-split record, in manifest order.
std::vector<Scored> score_test_split(const Predictor& predictor, const manifest::Manifest& m,
                                     const data::ImageStore& store, std::uint64_t seed,
                                     const EvalConfig& cfg);

/// Per synthetic generator group: that group's synthetic records against the
/// full real pool, best balanced accuracy and AUC. Throws EmptyGroup when
/// there are no reals or no synthetic records.
MetricsReport detection_report(std::span<const Scored> scored);
/// Synthetic records only: per-group accuracy of the arg-max class and
/// one-vs-rest AUC of that group's score; the mean AUC is the macro average.
MetricsReport model_id_report(std::span<const Scored> scored);

MetricsReport detection_track(const Predictor& predictor, const manifest::Manifest& m,
                              const data::ImageStore& store, std::uint64_t seed,
                              const EvalConfig& cfg = {});
MetricsReport model_id_track(const Predictor& predictor, const manifest::Manifest& m,
                             const data::ImageStore& store, std::uint64_t seed,
                             const EvalConfig& cfg = {});

enum class SweepKind { Jpeg, Resize };
std::string_view to_string(SweepKind k);
SweepKind parse_sweep_kind(std::string_view s);

struct CurvePoint {
  double value = 0.0;
  double accuracy = 0.0;  // best balanced accuracy over the whole test split
  double auc = 0.0;
  std::int64_t count = 0;
};

struct SweepResult {
  SweepKind kind = SweepKind::Jpeg;
  std::vector<CurvePoint> curve;
};

/// For each grid value, every test image is center-cropped to the policy size
/// and JPEG-compressed at that quality (jpeg), or center-cropped to
/// round(size * r) and resized back to size (resize), then scored.
/// Throws InvalidArgument on an empty grid; transform errors propagate.
SweepResult robustness_sweep(const Predictor& predictor, const manifest::Manifest& m,
                             const data::ImageStore& store, SweepKind kind,
                             std::span<const double> grid, const EvalConfig& cfg = {});

/// One JSON object per line: kind, value, accuracy, auc, count.
void write_curve_data(const SweepResult& sweep, const std::filesystem::path& path);
/// Accuracy-versus-value line chart.
void write_curve_plot(const SweepResult& sweep, const std::filesystem::path& path);

/// Logistic regression on standardized features, fitted on the training
/// pair and scored on the test pair; returns the test AUC.
double linear_probe_auc(const torch::Tensor& train_features, std::span<const int> train_labels,
                        const torch::Tensor& test_features, std::span<const int> test_labels);

}  // namespace synthdet::eval
