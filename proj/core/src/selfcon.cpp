#include "synthdet/selfcon.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "synthdet/error.hpp"

namespace synthdet::selfcon {

namespace {

torch::Tensor label_tensor(std::span<const std::int64_t> labels) {
  return torch::tensor(std::vector<std::int64_t>(labels.begin(), labels.end()), torch::kInt64);
}

void check_shape(const torch::Tensor& views, std::size_t labels) {
  if (!views.defined() || views.dim() != 3)
    fail(ErrorCode::ShapeMismatch, "embeddings must be [N, V, D]");
  if (views.size(0) < 2) fail(ErrorCode::DegenerateBatch, "contrastive loss needs N >= 2");
  if (static_cast<std::size_t>(views.size(0)) != labels)
    fail(ErrorCode::ShapeMismatch, "label count " + std::to_string(labels) +
                                       " does not match batch size " +
                                       std::to_string(views.size(0)));
}

}  // namespace

void EmbeddingBatch::validate(double tolerance) const {
  check_shape(views, det_labels.size());
  if (gen_labels.size() != det_labels.size())
    fail(ErrorCode::ShapeMismatch, "det_labels and gen_labels differ in length");
  for (std::size_t i = 0; i < det_labels.size(); ++i) {
    if (det_labels[i] != 0 && det_labels[i] != 1)
      fail(ErrorCode::InvalidArgument, "detection labels must be 0 or 1");
    if ((det_labels[i] == 0) != (gen_labels[i] == kRealLabel))
      fail(ErrorCode::InvalidArgument, "generator label disagrees with detection label");
  }
  const auto norms = views.detach().norm(2, -1);
  const double dev = (norms - 1.0).abs().max().item<double>();
  if (!(dev <= tolerance))
    fail(ErrorCode::InvalidArgument, "embedding rows are not unit-norm");
}

void LossConfig::validate() const {
  if (!(temperature > 0.0)) fail(ErrorCode::InvalidArgument, "temperature must be positive");
  if (!(w_detection >= 0.0) || !(w_model_id >= 0.0))
    fail(ErrorCode::InvalidArgument, "track weights must be non-negative");
}

torch::Tensor selfcon_loss(const torch::Tensor& views, std::span<const std::int64_t> labels,
                           double temperature) {
  check_shape(views, labels.size());
  if (!(temperature > 0.0)) fail(ErrorCode::InvalidArgument, "temperature must be positive");
  const auto n = views.size(0);
  const auto v = views.size(1);

  const auto flat = views.reshape({n * v, views.size(2)});
  // sim[i, w, l, w'] = z_{i,w} . z_{l,w'} / tau
  const auto sim = flat.matmul(flat.t()).div(temperature).reshape({n, v, n, v});
  const auto self = torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
  const auto masked =
      sim.masked_fill(self.view({n, 1, n, 1}), -std::numeric_limits<double>::infinity());
  const auto log_den = torch::logsumexp(masked, 2, /*keepdim=*/true);  // [n, v, 1, v]

  const auto lab = label_tensor(labels);
  const auto pos = lab.view({n, 1}).eq(lab.view({1, n})).logical_and(self.logical_not());
  const auto pos_count = pos.sum(1);  // [n]
  if (pos_count.gt(0).sum().item<std::int64_t>() == 0)
    fail(ErrorCode::NoPositives, "no example has a positive under this labeling");

  const auto pos_f = pos.to(views.scalar_type()).view({n, 1, n, 1});
  const auto log_prob_sum = ((sim - log_den) * pos_f).sum({2, 3});  // [n, v]
  const auto denom = (pos_count.to(views.scalar_type()) * static_cast<double>(v)).clamp_min(1.0);
  return -(log_prob_sum / denom.view({n, 1})).sum();
}

DualLoss dual_track_loss(const torch::Tensor& views, std::span<const std::int64_t> det_labels,
                         std::span<const std::int64_t> gen_labels, const LossConfig& cfg) {
  cfg.validate();
  check_shape(views, det_labels.size());
  if (gen_labels.size() != det_labels.size())
    fail(ErrorCode::ShapeMismatch, "det_labels and gen_labels differ in length");

  DualLoss out;
  out.detection = selfcon_loss(views, det_labels, cfg.temperature);

  std::vector<std::int64_t> keep;
  std::vector<std::int64_t> synthetic_labels;
  for (std::size_t i = 0; i < gen_labels.size(); ++i) {
    if (gen_labels[i] == kRealLabel) continue;
    keep.push_back(static_cast<std::int64_t>(i));
    synthetic_labels.push_back(gen_labels[i]);
  }
  if (keep.size() < 2) {
    out.model_id = torch::zeros({}, views.options());
    out.model_id_skipped = true;
  } else {
    const auto sub = views.index_select(0, torch::tensor(keep, torch::kInt64));
    out.model_id = selfcon_loss(sub, synthetic_labels, cfg.temperature);
  }
  out.total = cfg.w_detection * out.detection + cfg.w_model_id * out.model_id;
  return out;
}

DualLoss dual_track_loss(const EmbeddingBatch& batch, const LossConfig& cfg) {
  batch.validate();
  return dual_track_loss(batch.views, batch.det_labels, batch.gen_labels, cfg);
}

double cached_gradient_step(std::int64_t n, std::int64_t chunk, const EmbedFn& embed,
                            const BatchLossFn& loss) {
  if (chunk < 1 || chunk > n)
    fail(ErrorCode::ChunkTooLarge,
         "chunk " + std::to_string(chunk) + " outside [1, " + std::to_string(n) + "]");

  std::vector<torch::Tensor> parts;
  {
    torch::NoGradGuard no_grad;
    for (std::int64_t b = 0; b < n; b += chunk) parts.push_back(embed(b, std::min(n, b + chunk)));
  }
  auto all = torch::cat(parts).detach().requires_grad_(true);
  const auto value = loss(all);
  const double v = value.item<double>();
  if (!std::isfinite(v)) fail(ErrorCode::NonFiniteLoss, "loss is not finite: " + std::to_string(v));
  const auto grad = torch::autograd::grad({value}, {all})[0];

  for (std::int64_t b = 0; b < n; b += chunk) {
    const auto e = std::min(n, b + chunk);
    embed(b, e).backward(grad.slice(0, b, e));
  }
  return v;
}

double full_batch_gradient_step(std::int64_t n, const EmbedFn& embed, const BatchLossFn& loss) {
  const auto value = loss(embed(0, n));
  const double v = value.item<double>();
  if (!std::isfinite(v)) fail(ErrorCode::NonFiniteLoss, "loss is not finite: " + std::to_string(v));
  value.backward();
  return v;
}

StepResult cached_gradient_step(model::DetectorNet& net, const torch::Tensor& images,
                                std::span<const std::int64_t> det_labels,
                                std::span<const std::int64_t> gen_labels, const LossConfig& cfg,
                                std::int64_t chunk) {
  const auto n = images.size(0);
  net->zero_grad();

  // Re-embedding would otherwise apply every running-statistics update twice.
  auto norms = net->all_norms();
  std::vector<std::optional<double>> momenta;
  for (auto& bn : norms) momenta.push_back(bn->options.momentum());
  bool second_pass = false;

  StepResult result;
  const EmbedFn embed = [&](std::int64_t b, std::int64_t e) {
    if (torch::GradMode::is_enabled() && !second_pass) {
      second_pass = true;
      for (auto& bn : norms) bn->options.momentum(0.0);
    }
    return model::forward_pretrain(net, images.slice(0, b, e));
  };
  const BatchLossFn loss = [&](const torch::Tensor& z) {
    auto terms = dual_track_loss(z, det_labels, gen_labels, cfg);
    result.detection = terms.detection.item<double>();
    result.model_id = terms.model_id.item<double>();
    result.model_id_skipped = terms.model_id_skipped;
    return terms.total;
  };
  try {
    result.total = cached_gradient_step(n, chunk, embed, loss);
  } catch (...) {
    for (std::size_t i = 0; i < norms.size(); ++i) norms[i]->options.momentum(momenta[i]);
    throw;
  }
  for (std::size_t i = 0; i < norms.size(); ++i) norms[i]->options.momentum(momenta[i]);
  return result;
}

std::vector<torch::Tensor> gradients(const torch::nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (const auto& p : module.parameters()) {
    const auto& g = p.grad();
    out.push_back(g.defined() ? g.detach().clone() : torch::zeros_like(p));
  }
  return out;
}

}  // namespace synthdet::selfcon
