#include "synthdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "synthdet/error.hpp"
#include "synthdet/rng.hpp"

namespace synthdet::eval {

namespace {

using manifest::ImageRecord;

struct ClassCounts {
  std::int64_t pos = 0;
  std::int64_t neg = 0;
};

ClassCounts check_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    fail(ErrorCode::ShapeMismatch, "scores and labels differ in length");
  ClassCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      fail(ErrorCode::InvalidArgument, "labels must be 0 or 1");
    if (std::isnan(scores[i])) fail(ErrorCode::InvalidArgument, "score is NaN");
    (labels[i] ? c.pos : c.neg) += 1;
  }
  if (c.pos == 0 || c.neg == 0) fail(ErrorCode::SingleClass, "both classes must be present");
  return c;
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return idx;
}

GroupMetrics binary_metrics(std::span<const double> scores, std::span<const int> labels) {
  return {best_balanced_accuracy(scores, labels).balanced_accuracy, auc(scores, labels),
          static_cast<std::int64_t>(scores.size())};
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<Prediction> score_images(const Predictor& predictor,
                                     std::span<const ImageRecord> records,
                                     std::span<const imgproc::Image> images) {
  auto out = predictor(records, images);
  if (out.size() != records.size())
    fail(ErrorCode::ShapeMismatch, "predictor returned a wrong number of predictions");
  return out;
}

// Loads, transforms and scores records in batches so only one batch of
// images is alive at a time.
template <typename Transform>
std::vector<Scored> score_records(const Predictor& predictor, std::span<const ImageRecord> records,
                                  const data::ImageStore& store, int batch_size,
                                  Transform&& transform) {
  std::vector<Scored> out;
  out.reserve(records.size());
  const auto step = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t b = 0; b < records.size(); b += step) {
    const auto batch = records.subspan(b, std::min(step, records.size() - b));
    std::vector<imgproc::Image> images;
    images.reserve(batch.size());
    for (const auto& r : batch) images.push_back(transform(r, store.load(r)));
    auto preds = score_images(predictor, batch, images);
    for (std::size_t i = 0; i < batch.size(); ++i) out.push_back({batch[i], std::move(preds[i])});
  }
  return out;
}

std::string policy_descriptor(const imgproc::TestPolicy& p) {
  return "test_perturb(size=" + std::to_string(p.size) +
         ",p_compress=" + nlohmann::json(p.p_compress).dump() +
         ",quality=" + std::to_string(p.quality.lo) + "-" + std::to_string(p.quality.hi) + ")";
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  const auto counts = check_binary(scores, labels);
  const auto idx = order_by_score(scores);
  // Twice the rank sum of the positives, with tied scores sharing their
  // mid-rank; doubling keeps every quantity integral.
  std::int64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::int64_t pos_in_group = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) pos_in_group += labels[idx[j++]];
    twice_rank_sum += pos_in_group * static_cast<std::int64_t>(i + 1 + j);
    i = j;
  }
  const std::int64_t twice_u = twice_rank_sum - counts.pos * (counts.pos + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * counts.pos * counts.neg);
}

double balanced_accuracy(std::span<const double> scores, std::span<const int> labels,
                         double threshold) {
  const auto counts = check_binary(scores, labels);
  std::int64_t tp = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] && predicted) ++tp;
    if (!labels[i] && !predicted) ++tn;
  }
  return 0.5 * (static_cast<double>(tp) / counts.pos + static_cast<double>(tn) / counts.neg);
}

ThresholdChoice best_balanced_accuracy(std::span<const double> scores,
                                       std::span<const int> labels) {
  const auto counts = check_binary(scores, labels);
  const auto idx = order_by_score(scores);
  ThresholdChoice best{std::numeric_limits<double>::infinity(), 0.5};
  bool have = false;
  std::int64_t pos_below = 0, neg_below = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double t = scores[idx[i]];
    const double acc = 0.5 * (static_cast<double>(counts.pos - pos_below) / counts.pos +
                              static_cast<double>(neg_below) / counts.neg);
    if (!have || acc > best.balanced_accuracy) best = {t, acc};
    have = true;
    while (i < idx.size() && scores[idx[i]] == t) (labels[idx[i++]] ? pos_below : neg_below) += 1;
  }
  return best;
}

std::string_view to_string(Track t) {
  switch (t) {
    case Track::Detection: return "detection";
    case Track::ModelId: return "model_id";
    case Track::Sweep: return "sweep";
    case Track::Ablation: return "ablation";
  }
  return "unknown";
}

const GroupMetrics& MetricsReport::group(std::string_view name) const {
  for (const auto& [n, g] : groups)
    if (n == name) return g;
  fail(ErrorCode::EmptyGroup, "report has no group '" + std::string(name) + "'");
}

void MetricsReport::finalize() {
  if (groups.empty()) fail(ErrorCode::EmptyGroup, "report has no groups");
  double acc = 0, a = 0;
  for (const auto& [_, g] : groups) {
    acc += g.accuracy;
    a += g.auc;
  }
  mean_accuracy = acc / static_cast<double>(groups.size());
  mean_auc = a / static_cast<double>(groups.size());
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["track"] = to_string(track);
  j["config_fingerprint"] = config_fingerprint;
  j["perturbation"] = perturbation;
  nlohmann::ordered_json g = nlohmann::ordered_json::object();
  for (const auto& [name, m] : groups)
    g[name] = {{"accuracy", m.accuracy}, {"auc", m.auc}, {"count", m.count}};
  j["groups"] = g;
  j["mean"] = {{"accuracy", mean_accuracy}, {"auc", mean_auc}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    const auto track = j.at("track").get<std::string>();
    if (track == "detection") r.track = Track::Detection;
    else if (track == "model_id") r.track = Track::ModelId;
    else if (track == "sweep") r.track = Track::Sweep;
    else if (track == "ablation") r.track = Track::Ablation;
    else fail(ErrorCode::ParseError, "unknown track '" + track + "'");
    r.config_fingerprint = j.value("config_fingerprint", "");
    r.perturbation = j.value("perturbation", "");
    for (const auto& [name, m] : j.at("groups").items())
      r.groups.emplace_back(name, GroupMetrics{m.at("accuracy").get<double>(),
                                               m.at("auc").get<double>(),
                                               m.at("count").get<std::int64_t>()});
    r.mean_accuracy = j.at("mean").at("accuracy").get<double>();
    r.mean_auc = j.at("mean").at("auc").get<double>();
    for (const auto& [k, v] : j.items())
      if (k != "track" && k != "config_fingerprint" && k != "perturbation" && k != "groups" &&
          k != "mean")
        r.extra[k] = v;
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("invalid metrics report: ") + e.what());
  }
}

void write_report(const MetricsReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << report.to_json().dump(2) << "\n";
}

MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  try {
    return MetricsReport::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("invalid report file: ") + e.what());
  }
}

Predictor make_predictor(model::DetectorNet net, int batch_size) {
  if (net->mode() != model::Mode::Calibrated)
    fail(ErrorCode::WrongMode, "scoring needs a calibrated network");
  const auto step = static_cast<std::size_t>(std::max(1, batch_size));
  return [net, step](std::span<const ImageRecord>, std::span<const imgproc::Image> images) mutable {
    torch::NoGradGuard no_grad;
    net->eval();
    std::vector<Prediction> out;
    out.reserve(images.size());
    for (std::size_t b = 0; b < images.size();) {
      std::size_t e = b + 1;
      while (e < images.size() && e - b < step && images[e].height() == images[b].height() &&
             images[e].width() == images[b].width())
        ++e;
      const auto logits = net->classify(model::to_tensor(images.subspan(b, e - b)));
      const auto det = torch::softmax(logits.detection, 1).to(torch::kFloat64).contiguous();
      const auto mid = torch::softmax(logits.model_id, 1).to(torch::kFloat64).contiguous();
      for (std::int64_t i = 0; i < det.size(0); ++i) {
        Prediction p;
        p.detection_score = det[i][1].item<double>();
        const auto row = mid[i];
        p.model_id_scores.assign(row.data_ptr<double>(), row.data_ptr<double>() + row.numel());
        out.push_back(std::move(p));
      }
      b = e;
    }
    return out;
  };
}

imgproc::Image perturbed_test_image(const ImageRecord& r, const data::ImageStore& store,
                                    std::uint64_t seed, const imgproc::TestPolicy& policy) {
  Rng rng(derive_seed(seed, "test:" + r.id));
  return imgproc::test_perturb(store.load(r), rng, policy);
}

std::vector<Scored> score_test_split(const Predictor& predictor, const manifest::Manifest& m,
                                     const data::ImageStore& store, std::uint64_t seed,
                                     const EvalConfig& cfg) {
  const auto records = manifest::records_in(m, Split::Test);
  return score_records(predictor, records, store, cfg.batch_size,
                       [&](const ImageRecord& r, const imgproc::Image& img) {
                         Rng rng(derive_seed(seed, "test:" + r.id));
                         return imgproc::test_perturb(img, rng, cfg.test_policy);
                       });
}

MetricsReport detection_report(std::span<const Scored> scored) {
  std::vector<double> real_scores;
  std::array<std::vector<double>, kSyntheticGroups.size()> group_scores;
  for (const auto& s : scored) {
    const auto cls = model_id_class(s.record.generator_group);
    (cls ? group_scores[static_cast<std::size_t>(*cls)] : real_scores)
        .push_back(s.prediction.detection_score);
  }
  if (real_scores.empty()) fail(ErrorCode::EmptyGroup, "detection track needs real images");
  MetricsReport report;
  report.track = Track::Detection;
  for (std::size_t g = 0; g < group_scores.size(); ++g) {
    if (group_scores[g].empty()) continue;
    std::vector<double> scores = real_scores;
    scores.insert(scores.end(), group_scores[g].begin(), group_scores[g].end());
    std::vector<int> labels(real_scores.size(), 0);
    labels.resize(scores.size(), 1);
    auto metrics = binary_metrics(scores, labels);
    metrics.count = static_cast<std::int64_t>(group_scores[g].size());
    report.groups.emplace_back(std::string(to_string(kSyntheticGroups[g])), metrics);
  }
  if (report.groups.empty()) fail(ErrorCode::EmptyGroup, "detection track needs synthetic images");
  report.extra["real_count"] = real_scores.size();
  report.finalize();
  return report;
}

MetricsReport model_id_report(std::span<const Scored> scored) {
  std::vector<const Scored*> synthetic;
  for (const auto& s : scored)
    if (s.record.source == Source::Synthetic) synthetic.push_back(&s);
  if (synthetic.empty()) fail(ErrorCode::EmptyGroup, "model-ID track needs synthetic images");

  MetricsReport report;
  report.track = Track::ModelId;
  for (std::size_t g = 0; g < kSyntheticGroups.size(); ++g) {
    std::int64_t count = 0, correct = 0;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto* s : synthetic) {
      const auto& probs = s->prediction.model_id_scores;
      if (probs.size() <= g) fail(ErrorCode::ShapeMismatch, "too few model-ID scores");
      const bool member = static_cast<std::size_t>(*model_id_class(s->record.generator_group)) == g;
      scores.push_back(probs[g]);
      labels.push_back(member ? 1 : 0);
      if (member) {
        ++count;
        if (argmax(probs) == g) ++correct;
      }
    }
    if (count == 0) continue;
    report.groups.emplace_back(
        std::string(to_string(kSyntheticGroups[g])),
        GroupMetrics{static_cast<double>(correct) / static_cast<double>(count),
                     auc(scores, labels), count});
  }
  report.extra["auc_reduction"] = "macro one-vs-rest";
  report.finalize();
  return report;
}

MetricsReport detection_track(const Predictor& predictor, const manifest::Manifest& m,
                              const data::ImageStore& store, std::uint64_t seed,
                              const EvalConfig& cfg) {
  const auto scored = score_test_split(predictor, m, store, seed, cfg);
  auto report = detection_report(scored);
  report.config_fingerprint = cfg.config_fingerprint;
  report.perturbation = policy_descriptor(cfg.test_policy);
  report.extra["seed"] = seed;
  return report;
}

MetricsReport model_id_track(const Predictor& predictor, const manifest::Manifest& m,
                             const data::ImageStore& store, std::uint64_t seed,
                             const EvalConfig& cfg) {
  manifest::Manifest synthetic = m;
  std::erase_if(synthetic.records,
                [](const ImageRecord& r) { return r.source != Source::Synthetic; });
  const auto scored = score_test_split(predictor, synthetic, store, seed, cfg);
  auto report = model_id_report(scored);
  report.config_fingerprint = cfg.config_fingerprint;
  report.perturbation = policy_descriptor(cfg.test_policy);
  report.extra["seed"] = seed;
  return report;
}

std::string_view to_string(SweepKind k) { return k == SweepKind::Jpeg ? "jpeg" : "resize"; }

SweepKind parse_sweep_kind(std::string_view s) {
  if (s == "jpeg") return SweepKind::Jpeg;
  if (s == "resize") return SweepKind::Resize;
  fail(ErrorCode::InvalidArgument, "unknown sweep kind '" + std::string(s) + "'");
}

SweepResult robustness_sweep(const Predictor& predictor, const manifest::Manifest& m,
                             const data::ImageStore& store, SweepKind kind,
                             std::span<const double> grid, const EvalConfig& cfg) {
  if (grid.empty()) fail(ErrorCode::InvalidArgument, "sweep grid is empty");
  const int size = cfg.test_policy.size;
  const auto records = manifest::records_in(m, Split::Test);
  SweepResult result;
  result.kind = kind;
  for (double value : grid) {
    if (kind == SweepKind::Jpeg && value != std::round(value))
      fail(ErrorCode::InvalidQuality, "JPEG quality must be an integer");
    const auto scored = score_records(
        predictor, records, store, cfg.batch_size,
        [&](const ImageRecord&, const imgproc::Image& img) {
          if (kind == SweepKind::Resize) return imgproc::sweep_resize(img, value, size);
          const auto cropped =
              imgproc::crop(img, imgproc::center_crop_box(img.height(), img.width(), size));
          return imgproc::sweep_jpeg(cropped, static_cast<int>(value));
        });
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& s : scored) {
      scores.push_back(s.prediction.detection_score);
      labels.push_back(s.record.source == Source::Synthetic ? 1 : 0);
    }
    auto metrics = binary_metrics(scores, labels);
    result.curve.push_back({value, metrics.accuracy, metrics.auc, metrics.count});
  }
  return result;
}

void write_curve_data(const SweepResult& sweep, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& p : sweep.curve) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(sweep.kind);
    j["value"] = p.value;
    j["accuracy"] = p.accuracy;
    j["auc"] = p.auc;
    j["count"] = p.count;
    out << j.dump() << "\n";
  }
}

void write_curve_plot(const SweepResult& sweep, const std::filesystem::path& path) {
  constexpr int kW = 640, kH = 480, kLeft = 70, kRight = 30, kTop = 40, kBottom = 60;
  cv::Mat canvas(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
  if (sweep.curve.empty()) fail(ErrorCode::InvalidArgument, "empty curve");
  auto [lo_it, hi_it] = std::minmax_element(
      sweep.curve.begin(), sweep.curve.end(),
      [](const CurvePoint& a, const CurvePoint& b) { return a.value < b.value; });
  double lo = lo_it->value, hi = hi_it->value;
  if (hi == lo) {
    lo -= 1;
    hi += 1;
  }
  const auto px = [&](double v) {
    return kLeft + static_cast<int>(std::lround((v - lo) / (hi - lo) * (kW - kLeft - kRight)));
  };
  const auto py = [&](double a) {
    return kH - kBottom - static_cast<int>(std::lround(a * (kH - kTop - kBottom)));
  };
  const cv::Scalar axis(0, 0, 0), grid(220, 220, 220), line(180, 90, 30);
  for (int k = 0; k <= 10; ++k) {
    const double a = k / 10.0;
    cv::line(canvas, {kLeft, py(a)}, {kW - kRight, py(a)}, grid, 1);
    if (k % 2 == 0) {
      char label[8];
      std::snprintf(label, sizeof label, "%.1f", a);
      cv::putText(canvas, label, {kLeft - 40, py(a) + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45, axis, 1,
                  cv::LINE_AA);
    }
  }
  cv::line(canvas, {kLeft, py(0)}, {kW - kRight, py(0)}, axis, 1);
  cv::line(canvas, {kLeft, py(0)}, {kLeft, py(1)}, axis, 1);
  std::vector<CurvePoint> pts = sweep.curve;
  std::sort(pts.begin(), pts.end(),
            [](const CurvePoint& a, const CurvePoint& b) { return a.value < b.value; });
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const cv::Point p{px(pts[i].value), py(pts[i].accuracy)};
    if (i > 0) cv::line(canvas, {px(pts[i - 1].value), py(pts[i - 1].accuracy)}, p, line, 2, cv::LINE_AA);
    cv::circle(canvas, p, 4, line, cv::FILLED, cv::LINE_AA);
    char label[16];
    std::snprintf(label, sizeof label, "%g", pts[i].value);
    cv::putText(canvas, label, {p.x - 10, kH - kBottom + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.45, axis,
                1, cv::LINE_AA);
  }
  const std::string x_title = sweep.kind == SweepKind::Jpeg ? "JPEG quality" : "resize ratio";
  cv::putText(canvas, x_title, {kW / 2 - 50, kH - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.55, axis, 1,
              cv::LINE_AA);
  cv::putText(canvas, "accuracy", {10, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.55, axis, 1, cv::LINE_AA);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) fail(ErrorCode::IoError, "cannot write " + path.string());
}

double linear_probe_auc(const torch::Tensor& train_features, std::span<const int> train_labels,
                        const torch::Tensor& test_features, std::span<const int> test_labels) {
  if (train_features.size(0) != static_cast<std::int64_t>(train_labels.size()) ||
      test_features.size(0) != static_cast<std::int64_t>(test_labels.size()))
    fail(ErrorCode::ShapeMismatch, "feature rows and labels differ in count");
  const auto x = train_features.detach().to(torch::kFloat64);
  const auto mean = x.mean(0);
  const auto std = x.std(0, /*unbiased=*/false).clamp_min(1e-8);
  const auto xs = (x - mean) / std;
  const auto y = torch::tensor(std::vector<double>(train_labels.begin(), train_labels.end()),
                               torch::kFloat64);

  auto w = torch::zeros({xs.size(1)}, torch::kFloat64).requires_grad_(true);
  auto b = torch::zeros({1}, torch::kFloat64).requires_grad_(true);
  torch::optim::LBFGS opt({w, b}, torch::optim::LBFGSOptions(1.0).max_iter(200).line_search_fn(
                                      "strong_wolfe"));
  auto closure = [&] {
    opt.zero_grad();
    const auto logits = xs.matmul(w) + b;
    auto loss = torch::binary_cross_entropy_with_logits(logits, y) + 1e-3 * w.pow(2).sum();
    loss.backward();
    return loss;
  };
  opt.step(closure);

  torch::NoGradGuard no_grad;
  const auto t = (test_features.detach().to(torch::kFloat64) - mean) / std;
  const auto scores = (t.matmul(w) + b).contiguous();
  const std::vector<double> s(scores.data_ptr<double>(), scores.data_ptr<double>() + scores.numel());
  return auc(s, test_labels);
}

}  // namespace synthdet::eval
