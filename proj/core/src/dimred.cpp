#include "synthdet/dimred.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "synthdet/error.hpp"
#include "synthdet/rng.hpp"

namespace synthdet::dimred {

namespace {

torch::Tensor squared_distances(const torch::Tensor& x) {
  return (x.unsqueeze(1) - x.unsqueeze(0)).pow(2).sum(-1);
}

torch::nn::Sequential mlp(const std::vector<int>& dims) {
  torch::nn::Sequential seq;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    seq->push_back(torch::nn::Linear(dims[i], dims[i + 1]));
    if (i + 2 < dims.size()) seq->push_back(torch::nn::ReLU());
  }
  return seq;
}

}  // namespace

torch::Tensor rdra_loss(const torch::Tensor& r_in, const torch::Tensor& r_out, double alpha,
                        bool recon_over_b2) {
  if (r_in.dim() != 2 || !r_in.sizes().equals(r_out.sizes()))
    fail(ErrorCode::ShapeMismatch, "rdra_loss needs two [b, n] arrays of equal shape");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
  const double b = static_cast<double>(r_in.size(0));
  const double n = static_cast<double>(r_in.size(1));
  const auto recon = (r_in - r_out).pow(2).sum() / (recon_over_b2 ? b * b : b * n);
  const auto rel =
      (squared_distances(r_out) - squared_distances(r_in)).pow(2).triu(1).sum() / (b * b);
  return (1.0 - alpha) * recon + alpha * rel;
}

void EmbeddingSet::validate() const {
  if (!vectors.defined() || vectors.dim() != 2)
    fail(ErrorCode::ShapeMismatch, "embedding set must be [N, n]");
  if (vectors.size(0) < 2) fail(ErrorCode::InsufficientData, "embedding set needs N >= 2");
  if (!labels.empty() && static_cast<std::int64_t>(labels.size()) != vectors.size(0))
    fail(ErrorCode::ShapeMismatch, "label count does not match row count");
  if (!ids.empty() && static_cast<std::int64_t>(ids.size()) != vectors.size(0))
    fail(ErrorCode::ShapeMismatch, "id count does not match row count");
  if (!torch::isfinite(vectors).all().item<bool>())
    fail(ErrorCode::InvalidArgument, "embedding set has non-finite entries");
}

void RdraConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
  if (!widths.empty() && widths.back() != 2)
    fail(ErrorCode::InvalidArgument, "the bottleneck width must be 2");
  if (batch_size < 2 || epochs < 1 || !(lr > 0.0))
    fail(ErrorCode::InvalidArgument, "invalid autoencoder training settings");
}

std::vector<int> default_widths(int input_dim) {
  std::vector<int> w;
  for (int k = 1; k <= 3; ++k) {
    const double t = k / 3.0;
    w.push_back(std::max(2, static_cast<int>(std::lround(std::pow(input_dim, 1 - t) * std::pow(2.0, t)))));
  }
  w.back() = 2;
  return w;
}

RdraFit fit_rdra(const EmbeddingSet& data, const RdraConfig& cfg) {
  data.validate();
  cfg.validate();
  const auto x = data.vectors.detach().to(torch::kFloat32).contiguous();
  const auto n_rows = x.size(0);
  const int dim = static_cast<int>(x.size(1));
  if (n_rows < cfg.batch_size)
    fail(ErrorCode::InsufficientData, "need at least batch_size rows");

  const auto widths = cfg.widths.empty() ? default_widths(dim) : cfg.widths;
  std::vector<int> enc{dim};
  enc.insert(enc.end(), widths.begin(), widths.end());
  std::vector<int> dec(enc.rbegin(), enc.rend());

  torch::manual_seed(cfg.seed);
  RdraFit fit;
  fit.model.encoder = mlp(enc);
  fit.model.decoder = mlp(dec);
  std::vector<torch::Tensor> params = fit.model.encoder->parameters();
  for (const auto& p : fit.model.decoder->parameters()) params.push_back(p);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.lr));

  Rng rng(derive_seed(cfg.seed, "rdra"));
  std::vector<std::int64_t> order(static_cast<std::size_t>(n_rows));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double sum = 0;
    int batches = 0;
    for (std::size_t b = 0; b + bs <= order.size(); b += bs) {
      const auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + b, order.begin() + b + bs));
      const auto r_in = x.index_select(0, idx);
      const auto r_out = fit.model.decoder->forward(fit.model.encoder->forward(r_in));
      const auto loss = rdra_loss(r_in, r_out, cfg.alpha, cfg.recon_over_b2);
      const double v = loss.item<double>();
      if (!std::isfinite(v)) fail(ErrorCode::NonFiniteLoss, "autoencoder loss is not finite");
      opt.zero_grad();
      loss.backward();
      opt.step();
      sum += v;
      ++batches;
    }
    fit.epoch_loss.push_back(sum / batches);
  }
  torch::NoGradGuard no_grad;
  fit.projections = fit.model.encoder->forward(x);
  fit.reconstruction = fit.model.decoder->forward(fit.projections);
  return fit;
}

AlphaRow reconstruction_criteria(const torch::Tensor& r_in, const torch::Tensor& r_out) {
  const auto a = r_in.detach().to(torch::kFloat64);
  const auto b = r_out.detach().to(torch::kFloat64);
  AlphaRow row;
  row.abs_error = (a - b).abs().mean().item<double>();
  const auto d_in = squared_distances(a).sqrt();
  const auto d_out = squared_distances(b).sqrt();
  const auto cos = torch::nn::functional::cosine_similarity(
      d_in, d_out, torch::nn::functional::CosineSimilarityFuncOptions().dim(1).eps(1e-12));
  row.cosine_distance = (1.0 - cos).mean().item<double>();
  return row;
}

AlphaSearch alpha_search(const EmbeddingSet& data, std::span<const double> grid,
                         const RdraConfig& base) {
  if (grid.empty()) fail(ErrorCode::InvalidArgument, "alpha grid is empty");
  for (double a : grid)
    if (!(a >= 0.0 && a <= 1.0)) fail(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
  AlphaSearch out;
  std::vector<RdraFit> fits;
  for (double a : grid) {
    auto cfg = base;
    cfg.alpha = a;
    fits.push_back(fit_rdra(data, cfg));
    auto row = reconstruction_criteria(data.vectors, fits.back().reconstruction);
    row.alpha = a;
    out.rows.push_back(row);
  }
  const auto normalize = [&](auto member) {
    double lo = out.rows.front().*member, hi = lo;
    for (const auto& r : out.rows) {
      lo = std::min(lo, r.*member);
      hi = std::max(hi, r.*member);
    }
    for (auto& r : out.rows) r.score += hi > lo ? (r.*member - lo) / (hi - lo) : 0.0;
  };
  normalize(&AlphaRow::abs_error);
  normalize(&AlphaRow::cosine_distance);
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.rows.size(); ++i)
    if (out.rows[i].score < out.rows[best].score) best = i;
  out.best_alpha = out.rows[best].alpha;
  out.best_fit = std::move(fits[best]);
  return out;
}

void write_projections(const EmbeddingSet& data, const torch::Tensor& projections,
                       const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  const auto p = projections.detach().to(torch::kFloat64).contiguous();
  for (std::int64_t i = 0; i < p.size(0); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out << (data.ids.empty() ? std::to_string(i) : data.ids[idx]) << ' '
        << p[i][0].item<double>() << ' ' << p[i][1].item<double>() << ' '
        << (data.labels.empty() ? "-" : data.labels[idx]) << '\n';
  }
}

void write_scatter(const EmbeddingSet& data, const torch::Tensor& projections,
                   const std::filesystem::path& path) {
  constexpr int kSize = 640, kMargin = 40;
  static const std::array<cv::Scalar, 8> kPalette{
      cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255), cv::Scalar(44, 160, 44),
      cv::Scalar(40, 39, 214),  cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140),
      cv::Scalar(194, 119, 227), cv::Scalar(127, 127, 127)};
  const auto p = projections.detach().to(torch::kFloat64).contiguous();
  const auto lo = std::get<0>(p.min(0)), hi = std::get<0>(p.max(0));
  const double x0 = lo[0].item<double>(), y0 = lo[1].item<double>();
  const double sx = std::max(hi[0].item<double>() - x0, 1e-12);
  const double sy = std::max(hi[1].item<double>() - y0, 1e-12);
  std::map<std::string, std::size_t> colors;
  for (const auto& l : data.labels) colors.try_emplace(l, colors.size());

  cv::Mat canvas(kSize, kSize, CV_8UC3, cv::Scalar(255, 255, 255));
  for (std::int64_t i = 0; i < p.size(0); ++i) {
    const int x = kMargin + static_cast<int>((p[i][0].item<double>() - x0) / sx * (kSize - 2 * kMargin));
    const int y = kSize - kMargin - static_cast<int>((p[i][1].item<double>() - y0) / sy * (kSize - 2 * kMargin));
    const auto c = data.labels.empty() ? 0 : colors.at(data.labels[static_cast<std::size_t>(i)]);
    cv::circle(canvas, {x, y}, 3, kPalette[c % kPalette.size()], cv::FILLED, cv::LINE_AA);
  }
  int row = 20;
  for (const auto& [label, c] : colors) {
    cv::circle(canvas, {15, row - 4}, 5, kPalette[c % kPalette.size()], cv::FILLED, cv::LINE_AA);
    cv::putText(canvas, label, {25, row}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0), 1,
                cv::LINE_AA);
    row += 18;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) fail(ErrorCode::IoError, "cannot write " + path.string());
}

}  // namespace synthdet::dimred
