// Acceptance suite: one line per criterion, tolerances pinned below.
// Exit status is 0 when every selected criterion passes (or is skipped as not
// reproducible at desk scale, status 77 when that is the only one selected).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "synthdet/dataset.hpp"
#include "synthdet/dimred.hpp"
#include "synthdet/eval.hpp"
#include "synthdet/imgproc.hpp"
#include "synthdet/manifest.hpp"
#include "synthdet/rng.hpp"
#include "synthdet/selfcon.hpp"
#include "synthdet/train.hpp"
#include "oracles.hpp"

using namespace synthdet;

namespace {

constexpr int kSkipped = 77;

// Pinned tolerances and budgets.
constexpr double kLossOracleRel = 1e-9;
constexpr double kSelfconBudgetSeconds = 60.0;
constexpr double kCacheGradRel = 1e-5;
constexpr double kCacheLossAbs = 1e-10;
constexpr std::int64_t kCacheMaxParams = 100000;
constexpr double kFdStep = 1e-4;
constexpr double kFdTol = 1e-4;
constexpr double kMetricTol = 1e-12;
constexpr double kRdraRel = 1e-10;
constexpr int kAugDraws = 20000;
constexpr double kAugAbsTol = 0.01;
constexpr double kToyAucFloor = 0.95;
constexpr double kToyBudgetSeconds = 600.0;
constexpr double kLoocvBudgetSeconds = 1800.0;

enum class Status { Pass, Fail, NotReproducible };

struct Outcome {
  Status status = Status::Fail;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

std::vector<std::vector<std::vector<double>>> nested(const torch::Tensor& t) {
  const auto c = t.contiguous();
  const auto* p = c.data_ptr<double>();
  std::vector<std::vector<std::vector<double>>> out(c.size(0));
  for (std::int64_t i = 0; i < c.size(0); ++i) {
    out[i].resize(c.size(1));
    for (std::int64_t w = 0; w < c.size(1); ++w) {
      const auto* row = p + (i * c.size(1) + w) * c.size(2);
      out[i][w].assign(row, row + c.size(2));
    }
  }
  return out;
}

std::vector<std::vector<double>> rows(const torch::Tensor& t) {
  const auto c = t.contiguous();
  std::vector<std::vector<double>> out(c.size(0));
  for (std::int64_t i = 0; i < c.size(0); ++i)
    out[i].assign(c[i].data_ptr<double>(), c[i].data_ptr<double>() + c.size(1));
  return out;
}

torch::Tensor unit_views(std::int64_t n, std::int64_t v, std::int64_t d, torch::Generator& gen) {
  auto z = torch::randn({n, v, d}, gen, kF64);
  return z / z.norm(2, -1, true);
}

std::vector<std::int64_t> labels_with_positive(std::int64_t n, Rng& rng) {
  std::vector<std::int64_t> labels(n);
  const auto classes = rng.integer(1, std::max<std::int64_t>(1, n - 1));
  for (auto& l : labels) l = rng.integer(0, classes - 1);
  labels[1] = labels[0];
  return labels;
}

// --- 1 -----------------------------------------------------------------------

Outcome selfcon_oracle() {
  const auto start = Clock::now();
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(101);
  Rng rng(101);
  const double taus[] = {0.07, 0.1, 0.5};
  double worst = 0.0;
  for (int b = 0; b < 200; ++b) {
    const auto n = rng.integer(2, 24);
    const auto v = rng.integer(1, 3);
    const auto d = rng.integer(2, 16);
    const double tau = taus[b % 3];
    const auto views = unit_views(n, v, d, gen);
    const auto labels = labels_with_positive(n, rng);
    const double got = selfcon::selfcon_loss(views, labels, tau).item<double>();
    const double ref = oracle::selfcon(nested(views), labels, tau);
    worst = std::max(worst, std::abs(got - ref) / std::max(1.0, std::abs(ref)));
  }
  const double secs = seconds_since(start);
  const bool ok = worst <= kLossOracleRel && secs < kSelfconBudgetSeconds;
  return {ok ? Status::Pass : Status::Fail,
          fmt("200 batches, tau in {0.07,0.1,0.5}: max rel err %.2e (tol %.0e), %.1fs (budget %.0fs)",
              worst, kLossOracleRel, secs, kSelfconBudgetSeconds)};
}

// --- 2 -----------------------------------------------------------------------

Outcome gradient_cache() {
  torch::manual_seed(202);
  const std::int64_t n = 8, in = 48, v = 2, d = 16;
  torch::nn::Sequential net(torch::nn::Linear(in, 96), torch::nn::Tanh(),
                            torch::nn::Linear(96, 96), torch::nn::Tanh(),
                            torch::nn::Linear(96, v * d));
  net->to(torch::kFloat64);
  const auto params = model::parameter_count(*net);
  const auto x = torch::randn({n, in}, kF64);
  const std::vector<std::int64_t> det{0, 1, 0, 1, 1, 0, 1, 0};
  const std::vector<std::int64_t> gen{-1, 0, -1, 1, 0, -1, 1, -1};
  const selfcon::LossConfig cfg;

  const selfcon::EmbedFn embed = [&](std::int64_t a, std::int64_t b) {
    auto z = net->forward(x.slice(0, a, b)).view({b - a, v, d});
    return z / z.norm(2, -1, true);
  };
  const selfcon::BatchLossFn loss = [&](const torch::Tensor& z) {
    return selfcon::dual_track_loss(z, det, gen, cfg).total;
  };

  net->zero_grad();
  const double full = selfcon::full_batch_gradient_step(n, embed, loss);
  const auto reference = selfcon::gradients(*net);

  double worst_grad = 0.0, worst_loss = 0.0;
  for (std::int64_t chunk : {std::int64_t{1}, std::int64_t{2}, std::int64_t{4}, n}) {
    net->zero_grad();
    const double cached = selfcon::cached_gradient_step(n, chunk, embed, loss);
    worst_loss = std::max(worst_loss, std::abs(cached - full));
    const auto got = selfcon::gradients(*net);
    for (std::size_t i = 0; i < got.size(); ++i) {
      const double scale = reference[i].abs().max().item<double>() + 1e-300;
      worst_grad = std::max(worst_grad, (got[i] - reference[i]).abs().max().item<double>() / scale);
    }
  }
  const bool ok = params <= kCacheMaxParams && worst_grad <= kCacheGradRel && worst_loss <= kCacheLossAbs;
  return {ok ? Status::Pass : Status::Fail,
          fmt("%lld params, chunks {1,2,4,%lld}: grad rel err %.2e (tol %.0e), loss err %.2e (tol %.0e)",
              static_cast<long long>(params), static_cast<long long>(n), worst_grad, kCacheGradRel,
              worst_loss, kCacheLossAbs)};
}

// --- 3 -----------------------------------------------------------------------

Outcome finite_differences() {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(303);
  Rng rng(303);
  const std::int64_t n = 6, v = 2, d = 5;
  const auto base = unit_views(n, v, d, gen);
  const std::vector<std::int64_t> labels{0, 0, 1, 1, 2, 0};
  const double tau = 0.1;

  auto z = base.clone().requires_grad_(true);
  selfcon::selfcon_loss(z, labels, tau).backward();
  const auto grad = z.grad().contiguous();

  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const auto flat = static_cast<std::int64_t>(rng.index(static_cast<std::uint64_t>(n * v * d)));
    auto plus = base.clone(), minus = base.clone();
    plus.view({-1})[flat] += kFdStep;
    minus.view({-1})[flat] -= kFdStep;
    const double fd = (oracle::selfcon(nested(plus), labels, tau) -
                       oracle::selfcon(nested(minus), labels, tau)) / (2 * kFdStep);
    const double an = grad.view({-1})[flat].item<double>();
    worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(an)));
  }
  return {worst <= kFdTol ? Status::Pass : Status::Fail,
          fmt("50 coordinates, h=%.0e: max err %.2e (tol %.0e)", kFdStep, worst, kFdTol)};
}

// --- 4 -----------------------------------------------------------------------

Outcome metric_oracles() {
  Rng rng(404);
  double worst_auc = 0.0, worst_bacc = 0.0;
  for (int s = 0; s < 100; ++s) {
    const auto n = rng.integer(2, 200);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    // Coarse scores in half the sets force ties.
    for (auto& x : scores) x = s % 2 ? std::round(rng.uniform() * 10) / 10 : rng.uniform();
    for (auto& l : labels) l = rng.bernoulli(0.5);
    labels[0] = 0;
    labels[1] = 1;
    worst_auc = std::max(worst_auc, std::abs(eval::auc(scores, labels) - oracle::pairwise_auc(scores, labels)));
  }
  for (int s = 0; s < 20; ++s) {
    const auto n = rng.integer(2, 100);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (auto& x : scores) x = std::round(rng.uniform() * 20) / 20;
    for (auto& l : labels) l = rng.bernoulli(0.4);
    labels[0] = 0;
    labels[1] = 1;
    const double thr = std::round(rng.uniform() * 20) / 20;
    worst_bacc = std::max(worst_bacc, std::abs(eval::balanced_accuracy(scores, labels, thr) -
                                               oracle::confusion_balanced_accuracy(scores, labels, thr)));
  }
  const std::vector<double> ex{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> ex_labels{0, 0, 1, 1};
  const double example = eval::auc(ex, ex_labels);
  const bool ok = worst_auc <= kMetricTol && worst_bacc <= kMetricTol && std::abs(example - 0.75) <= kMetricTol;
  return {ok ? Status::Pass : Status::Fail,
          fmt("auc on 100 sets: max err %.1e; balanced accuracy on 20 cases: max err %.1e (tol %.0e); "
              "reference example %.4f",
              worst_auc, worst_bacc, kMetricTol, example)};
}

// --- 5 -----------------------------------------------------------------------

manifest::SourceListings stub_listings(std::int64_t per_cell, const std::vector<ContentType>& types) {
  manifest::SourceListings listings;
  for (const auto& row : manifest::full_structure().rows) {
    if (std::find(types.begin(), types.end(), row.content_type) == types.end()) continue;
    auto& files = listings[{row.content_type, row.generator, row.origin_dataset}];
    for (std::int64_t i = 0; i < per_cell; ++i)
      files.push_back(std::string(to_string(row.content_type)) + "/" + row.slug + "/" + std::to_string(i));
  }
  return listings;
}

Outcome manifest_invariants() {
  const std::vector<ContentType> three{ContentType::Photo, ContentType::Painting, ContentType::Face};
  const std::vector<ContentType> all(kAllContentTypes.begin(), kAllContentTypes.end());
  struct Case {
    std::int64_t total;
    std::vector<ContentType> types;
    std::int64_t per_cell;
  };
  const std::vector<Case> cases{{800, three, 200}, {8000, all, 1200}, {200000, all, 25000}};
  int failures = 0, checked = 0;
  std::string first;
  const auto check = [&](bool ok, const std::string& what) {
    ++checked;
    if (!ok && failures++ == 0) first = what;
  };
  for (const auto& c : cases) {
    const auto listings = stub_listings(c.per_cell, c.types);
    const auto expected = oracle::full_layout_quotas(c.total, c.types);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto m = manifest::build_manifest(listings, c.total, seed);
      const auto tag = fmt("total %lld seed %llu", static_cast<long long>(c.total),
                           static_cast<unsigned long long>(seed));
      std::map<std::string, std::int64_t> cells, train;
      for (const auto& r : m.records) {
        ++cells[manifest::cell_key(r)];
        if (r.split == Split::Train) ++train[manifest::cell_key(r)];
      }
      check(static_cast<std::int64_t>(m.records.size()) == c.total, tag + ": total");
      check(cells == expected, tag + ": cell counts");
      bool floor_rule = true;
      for (const auto& [k, cnt] : cells) floor_rule &= train[k] == (cnt * 8) / 10;
      check(floor_rule, tag + ": per-cell 80/20 floor split");
      check(manifest::validate_manifest(m).ok(), tag + ": validator");
    }
  }
  // Calibration: equal share per synthetic (type, generator) stratum, half real.
  const auto base = manifest::build_manifest(stub_listings(200, three), 800, 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto cal = manifest::sample_calibration(base, 80, seed);
    std::map<std::string, int> strata;
    int real = 0;
    for (const auto& r : manifest::records_in(cal, Split::Calibration)) {
      if (r.source == Source::Real) ++real;
      else ++strata[std::string(to_string(r.content_type)) + "/" + r.generator];
    }
    bool equal = strata.size() == 8;
    for (const auto& [k, cnt] : strata) equal &= cnt == 5;
    check(real == 40 && equal, fmt("calibration seed %llu", static_cast<unsigned long long>(seed)));
    check(manifest::validate_manifest(cal).ok(), "calibration validator");
  }
  return {failures == 0 ? Status::Pass : Status::Fail,
          fmt("totals 800/8000/200000 x 20 seeds + calibration x 20: %d/%d checks hold%s", checked - failures,
              checked, failures ? (", first failure: " + first).c_str() : "")};
}

// --- 6 -----------------------------------------------------------------------

Outcome augmentation_statistics() {
  const imgproc::PretrainPolicy pre;
  const imgproc::CalibrationPolicy cal;
  const imgproc::TestPolicy test;
  int corrupted = 0, compressed = 0, perturbed = 0, one_of_four = 0, composite = 0, composite_compressed = 0;
  for (int i = 0; i < kAugDraws; ++i) {
    Rng a(derive_seed(601, static_cast<std::uint64_t>(i)));
    corrupted += imgproc::plan_pretrain(300, 300, a, pre).corruption.has_value();
    Rng b(derive_seed(602, static_cast<std::uint64_t>(i)));
    compressed += imgproc::plan_test(300, 300, b, test).compression.has_value();
    Rng c(derive_seed(603, static_cast<std::uint64_t>(i)));
    const auto plan = imgproc::plan_calibration(300, 300, c, cal);
    if (plan.branch != imgproc::CalibrationBranch::Clean) ++perturbed;
    if (plan.branch == imgproc::CalibrationBranch::OneOfFour) ++one_of_four;
    if (plan.branch == imgproc::CalibrationBranch::Composite) {
      ++composite;
      composite_compressed += plan.compression.has_value();
    }
  }
  const double n = kAugDraws;
  const auto within_3sigma = [](double hits, double trials, double p) {
    return trials > 0 && std::abs(hits / trials - p) <= 3 * std::sqrt(p * (1 - p) / trials);
  };
  bool ok = std::abs(compressed / n - 0.75) <= kAugAbsTol && std::abs(corrupted / n - 0.5) <= kAugAbsTol &&
            within_3sigma(perturbed, n, 0.5) && within_3sigma(one_of_four, perturbed, 0.7) &&
            within_3sigma(composite, perturbed, 0.3) && within_3sigma(composite_compressed, composite, 0.5);

  // Output shapes for 1000 random input sizes.
  Rng sizes(604);
  int shape_errors = 0;
  for (int i = 0; i < 1000; ++i) {
    const int h = static_cast<int>(sizes.integer(16, 400)), w = static_cast<int>(sizes.integer(16, 400));
    const imgproc::Image img(h, w, static_cast<std::uint8_t>(i % 256));
    Rng r(derive_seed(605, static_cast<std::uint64_t>(i)));
    const auto p = imgproc::pretrain_augment(img, r, pre);
    const auto q = imgproc::calibration_augment(img, r, cal);
    shape_errors += p.height() != pre.crop || p.width() != pre.crop;
    shape_errors += q.height() != cal.size || q.width() != cal.size;
    const int th = h + test.size, tw = w + test.size;  // test perturbation needs min side >= size
    const auto t = imgproc::test_perturb(imgproc::Image(th, tw), r, test);
    shape_errors += t.height() != test.size || t.width() != test.size;
  }
  ok = ok && shape_errors == 0;
  return {ok ? Status::Pass : Status::Fail,
          fmt("%d draws: test compression %.4f (0.75+-%.2f), pretrain corruption %.4f (0.5+-%.2f), "
              "calibration perturbed %.4f / one-of-four %.4f / composite %.4f / composite-compressed %.4f "
              "(0.5/0.7/0.3/0.5 within 3 sigma); shape violations over 1000 sizes: %d",
              kAugDraws, compressed / n, kAugAbsTol, corrupted / n, kAugAbsTol, perturbed / n,
              one_of_four / std::max(1.0, double(perturbed)), composite / std::max(1.0, double(perturbed)),
              composite_compressed / std::max(1.0, double(composite)), shape_errors)};
}

// --- 7 -----------------------------------------------------------------------

Outcome rdra_oracle() {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(707);
  Rng rng(707);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const auto b = rng.integer(2, 16), n = rng.integer(1, 8);
    const auto a = torch::randn({b, n}, gen, kF64), r = torch::randn({b, n}, gen, kF64);
    const double alpha = rng.uniform();
    const bool strict = t % 2 == 0;
    const double got = dimred::rdra_loss(a, r, alpha, strict).item<double>();
    const double ref = oracle::rdra(rows(a), rows(r), alpha, strict);
    worst = std::max(worst, std::abs(got - ref) / std::max(1.0, std::abs(ref)));
  }
  const auto x = torch::randn({9, 4}, gen, kF64);
  const double zero = dimred::rdra_loss(x, x, 0.4).item<double>();
  const auto y = torch::randn({9, 4}, gen, kF64);
  const double shifted = std::abs(dimred::rdra_loss(x, y + 3.5, 1.0).item<double>() -
                                  dimred::rdra_loss(x, y, 1.0).item<double>());
  const double ref = dimred::rdra_loss(torch::tensor({{0.0, 0.0}, {1.0, 0.0}}, kF64),
                                       torch::tensor({{0.0, 0.0}, {2.0, 0.0}}, kF64), 0.5)
                         .item<double>();
  const bool ok = worst <= kRdraRel && zero == 0.0 && shifted <= kRdraRel && std::abs(ref - 1.25) <= kRdraRel;
  return {ok ? Status::Pass : Status::Fail,
          fmt("200 batches b<=16: max rel err %.2e (tol %.0e); identical input %.1e; translation drift %.1e; "
              "two-point example %.12f (1.25)",
              worst, kRdraRel, zero, shifted, ref)};
}

// --- 8 -----------------------------------------------------------------------

Outcome toy_end_to_end() {
  const auto start = Clock::now();
  data::ToyManifestSpec spec;
  spec.total = 600;  // 400 train / 200 test
  spec.calibration_total = 200;
  spec.seed = 1;
  const auto m = data::make_toy_manifest(spec);
  const data::ImageStore store;

  auto p = train::TrainConfig::pretrain_defaults();
  p.model.backbone = model::backbone_preset("small");
  p.epochs = 20;
  p.batch_size = 32;
  p.chunk = 32;
  p.base_lr = 5e-4;
  p.warmup_epochs = 2;
  p.seed = 1;
  auto c = train::TrainConfig::calibrate_defaults();
  c.model = p.model;
  c.batch_size = 32;
  c.base_lr = 1e-3;
  c.seed = 1;

  train::TrainLog log;
  const auto pre = train::pretrain(p, m, store, log);
  const auto cal = train::calibrate(pre, c, m, store, log);
  eval::EvalConfig ec;
  ec.config_fingerprint = p.model.fingerprint();
  const auto report = eval::detection_track(eval::make_predictor(model::restore(cal)), m, store, 7, ec);
  const double secs = seconds_since(start);
  const bool ok = report.mean_auc >= kToyAucFloor && secs < kToyBudgetSeconds;
  return {ok ? Status::Pass : Status::Fail,
          fmt("small net, 20 epochs, 400/200 toy images: detection AUC GAN %.4f SD %.4f mean %.4f "
              "(floor %.2f), %.0fs (budget %.0fs)",
              report.group("GAN").auc, report.group("SD").auc, report.mean_auc, kToyAucFloor, secs,
              kToyBudgetSeconds)};
}

// --- 9 -----------------------------------------------------------------------

Outcome loocv_direction() {
  const auto start = Clock::now();
  data::ToyManifestSpec spec;
  spec.structure = "toy-content";
  spec.total = 2400;
  spec.train_fraction = 0.75;
  spec.seed = 3;
  const auto source = data::make_toy_manifest(spec);

  train::AblationConfig cfg;
  cfg.train_per_class = 300;
  cfg.test_per_class = 100;
  cfg.eval_size = 96;
  cfg.pretrain = train::TrainConfig::pretrain_defaults();
  cfg.pretrain.model.backbone = model::backbone_preset("small");
  cfg.pretrain.epochs = 10;
  cfg.pretrain.batch_size = 32;
  cfg.pretrain.chunk = 32;
  cfg.pretrain.base_lr = 5e-4;
  cfg.pretrain.warmup_epochs = 2;
  cfg.pretrain.seed = 3;
  cfg.calibrate = train::TrainConfig::calibrate_defaults();
  cfg.calibrate.model = cfg.pretrain.model;
  cfg.calibrate.batch_size = 32;
  cfg.calibrate.base_lr = 1e-3;
  cfg.calibrate.seed = 3;
  cfg.calibrate.calibration_input = train::CalibrationInput::Clean;

  train::TrainLog log;
  const auto runs = train::loocv_ablation(cfg, source, data::ImageStore(), log);
  int directional = 0;
  std::string detail;
  for (const auto& run : runs) {
    const auto held = std::string(to_string(run.held_out));
    double in_type = 0.0;
    int others = 0;
    for (const auto& [name, g] : run.report.groups)
      if (name != held) {
        in_type += g.auc;
        ++others;
      }
    in_type /= std::max(1, others);
    const double out = run.report.group(held).auc;
    directional += out < in_type;
    detail += fmt(" %s: held-out %.4f vs in-type %.4f;", held.c_str(), out, in_type);
  }
  const double secs = seconds_since(start);
  const bool ok = directional >= 2 && secs < kLoocvBudgetSeconds;
  return {ok ? Status::Pass : Status::Fail,
          fmt("%d/3 held-out types below the in-type mean (need 2);%s %.0fs (budget %.0fs)", directional,
              detail.c_str(), secs, kLoocvBudgetSeconds)};
}

// --- 10 ----------------------------------------------------------------------

Outcome full_scale_tables() {
  return {Status::NotReproducible,
          "full-scale detection, model-ID, robustness and ablation tables need the 200K-image corpus "
          "and ResNet-50 pretraining for 400 epochs; not reproducible on a desk machine. "
          "Criteria 8 and 9 exercise the same pipeline at toy scale."};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> list{
      {1, "selfcon-oracle", selfcon_oracle},
      {2, "gradient-cache-equivalence", gradient_cache},
      {3, "selfcon-finite-differences", finite_differences},
      {4, "metric-oracles", metric_oracles},
      {5, "manifest-invariants", manifest_invariants},
      {6, "augmentation-statistics", augmentation_statistics},
      {7, "rdra-oracle", rdra_oracle},
      {8, "toy-end-to-end", toy_end_to_end},
      {9, "loocv-direction", loocv_direction},
      {10, "full-scale-tables", full_scale_tables},
  };
  return list;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria; one result line per criterion."};
  std::vector<int> selected;
  bool list = false;
  app.add_option("-c,--criterion", selected, "Criterion ids to run (default: all)")->check(CLI::Range(1, 10));
  app.add_flag("--list", list, "List criteria and exit");
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(1);
  if (list) {
    for (const auto& c : criteria()) std::printf("%2d %s\n", c.id, c.name);
    return 0;
  }
  int failed = 0, passed = 0, skipped = 0;
  for (const auto& c : criteria()) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {Status::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = out.status == Status::Pass ? "PASS" : out.status == Status::Fail ? "FAIL" : "NOT-REPRODUCIBLE";
    std::printf("criterion %2d %-28s %s  %s\n", c.id, c.name, tag, out.detail.c_str());
    std::fflush(stdout);
    failed += out.status == Status::Fail;
    passed += out.status == Status::Pass;
    skipped += out.status == Status::NotReproducible;
  }
  if (failed) return 1;
  return passed == 0 && skipped > 0 ? kSkipped : 0;
}
