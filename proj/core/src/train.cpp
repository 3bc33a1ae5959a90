#include "synthdet/train.hpp"

#include <chrono>
#include <map>
#include <numeric>
#include <cmath>
#include <numbers>

#include "synthdet/error.hpp"
#include "synthdet/rng.hpp"

namespace synthdet::train {

namespace {

using manifest::ImageRecord;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string epoch_tag(std::string_view stage, int epoch) {
  return std::string(stage) + ":" + std::to_string(epoch) + ":";
}

std::vector<std::int64_t> det_labels_of(std::span<const ImageRecord> records,
                                        std::span<const std::size_t> idx) {
  std::vector<std::int64_t> out;
  for (auto i : idx) out.push_back(data::detection_label(records[i]));
  return out;
}

std::vector<std::int64_t> gen_labels_of(std::span<const ImageRecord> records,
                                        std::span<const std::size_t> idx) {
  std::vector<std::int64_t> out;
  for (auto i : idx) out.push_back(data::generator_label(records[i]));
  return out;
}

ojson optimizer_json(const TrainConfig& cfg) {
  ojson j;
  j["name"] = cfg.optimizer.name;
  j["lr"] = cfg.base_lr;
  j["weight_decay"] = cfg.optimizer.weight_decay;
  if (cfg.optimizer.name == "sgd") {
    j["momentum"] = cfg.optimizer.momentum;
  } else {
    j["beta1"] = cfg.optimizer.beta1;
    j["beta2"] = cfg.optimizer.beta2;
    j["eps"] = cfg.optimizer.eps;
  }
  return j;
}

void save_epoch_checkpoint(const model::DetectorCheckpoint& ckpt, const std::string& dir,
                           std::string_view stage, int epoch) {
  if (dir.empty()) return;
  char name[64];
  std::snprintf(name, sizeof name, "%s-epoch-%04d.ckpt", std::string(stage).c_str(), epoch);
  model::save_checkpoint(ckpt, std::filesystem::path(dir) / name);
  model::save_checkpoint(ckpt, std::filesystem::path(dir) / (std::string(stage) + "-last.ckpt"));
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Calibrate: return "calibrate";
    case Stage::Ablation: return "ablation";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  const auto bad = [](const std::string& msg) { fail(ErrorCode::ConfigError, msg); };
  if (epochs < 1) bad("epochs must be >= 1");
  if (batch_size < 2) bad("batch_size must be >= 2");
  if (!(base_lr > 0.0)) bad("learning rate must be positive");
  if (stage == Stage::Pretrain) {
    if (!(warmup_epochs >= 0.0) || !(warmup_epochs < epochs)) bad("warmup_epochs must lie in [0, epochs)");
    if (chunk < 1) bad("chunk must be >= 1");
    if (optimizer.name != "sgd") bad("pretraining uses the sgd optimizer");
    if (pretrain_policy.crop != model.pretrain_input)
      bad("pretrain crop must equal model.pretrain_input");
  } else if (stage == Stage::Calibrate) {
    if (optimizer.name != "adamw") bad("calibration uses the adamw optimizer");
    if (clean_size < 8) bad("clean_size too small");
  }
  if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) bad("momentum must lie in [0, 1)");
  if (optimizer.weight_decay < 0.0) bad("weight_decay must be non-negative");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 &&
        optimizer.beta2 < 1.0))
    bad("betas must lie in [0, 1)");
  try {
    loss.validate();
    pretrain_policy.validate();
    calibration_policy.validate();
  } catch (const Error& e) {
    bad(e.what());
  }
}

TrainConfig TrainConfig::pretrain_defaults() {
  TrainConfig c;
  c.stage = Stage::Pretrain;
  c.model.backbone = model::backbone_preset("resnet50");
  return c;
}

TrainConfig TrainConfig::calibrate_defaults() {
  TrainConfig c;
  c.stage = Stage::Calibrate;
  c.epochs = 5;
  c.batch_size = 200;
  c.base_lr = 1e-4;
  c.warmup_epochs = 0;
  c.optimizer.name = "adamw";
  c.optimizer.weight_decay = 1e-3;
  c.optimizer.beta1 = 0.9;
  c.optimizer.beta2 = 0.99;
  c.model.backbone = model::backbone_preset("resnet50");
  return c;
}

double lr_at(double epoch_fraction, const TrainConfig& cfg) {
  if (cfg.stage != Stage::Pretrain)
    fail(ErrorCode::InvalidArgument, "the warmup-cosine schedule belongs to pretraining");
  const double total = cfg.epochs;
  if (!(epoch_fraction >= 0.0 && epoch_fraction <= total))
    fail(ErrorCode::OutOfRange, "epoch " + std::to_string(epoch_fraction) + " outside [0, " +
                                    std::to_string(cfg.epochs) + "]");
  const double w = cfg.warmup_epochs;
  if (epoch_fraction < w) return cfg.base_lr * epoch_fraction / w;
  const double progress = (epoch_fraction - w) / (total - w);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainLog::TrainLog(const std::filesystem::path& path, bool append) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) fail(ErrorCode::IoError, "cannot open log " + path.string());
}

void TrainLog::write(const ojson& record) {
  if (record.contains("global_step")) {
    const auto g = record.at("global_step").get<std::int64_t>();
    // Each stage counts its own steps from zero.
    if (g != 0 && g <= last_global_step_)
      fail(ErrorCode::InvalidArgument, "log step counter must increase");
    last_global_step_ = g;
  }
  records_.push_back(record);
  if (out_.is_open()) {
    out_ << record.dump() << "\n";
    out_.flush();
  }
}

std::vector<ojson> TrainLog::of_type(std::string_view type) const {
  std::vector<ojson> out;
  for (const auto& r : records_)
    if (r.contains("type") && r.at("type") == type) out.push_back(r);
  return out;
}

model::DetectorCheckpoint pretrain(const TrainConfig& cfg, const manifest::Manifest& m,
                                   const data::ImageStore& store, TrainLog& log,
                                   const PretrainOptions& options) {
  cfg.validate();
  if (cfg.stage != Stage::Pretrain) fail(ErrorCode::ConfigError, "config stage is not pretrain");
  const auto records = manifest::records_in(m, Split::Train);
  if (records.empty()) fail(ErrorCode::DataExhausted, "train split is empty");

  model::DetectorNet net{nullptr};
  int start_epoch = 0;
  std::int64_t global_step = 0;
  std::vector<std::pair<std::string, torch::Tensor>> buffers;

  if (options.resume_from) {
    const auto ckpt = model::load_checkpoint(*options.resume_from, cfg.model);
    if (ckpt.mode != model::Mode::Pretrain)
      fail(ErrorCode::WrongMode, "resume checkpoint is not a pretrain checkpoint");
    if (ckpt.extra.value("seed", std::uint64_t{0}) != cfg.seed ||
        ckpt.extra.value("epochs", 0) != cfg.epochs)
      fail(ErrorCode::ConfigMismatch, "resume checkpoint was written by a different run");
    net = model::restore(ckpt);
    start_epoch = ckpt.extra.at("epochs_completed").get<int>();
    global_step = ckpt.extra.at("global_step").get<std::int64_t>();
    for (const auto& [name, t] : ckpt.extra_tensors)
      if (name.starts_with("sgd.momentum.")) buffers.emplace_back(name.substr(13), t.clone());
  } else {
    net = model::make_detector(cfg.model, derive_seed(cfg.seed, "init"));
  }
  net->train();

  const auto params = net->named_parameters(true);
  if (buffers.empty()) {
    for (const auto& p : params) buffers.emplace_back(p.key(), torch::zeros_like(p.value()));
  } else if (buffers.size() != params.size()) {
    fail(ErrorCode::ConfigMismatch, "optimizer state does not match the network");
  }

  {
    ojson rec;
    rec["type"] = "config";
    rec["stage"] = "pretrain";
    rec["start_epoch"] = start_epoch;
    rec["epochs"] = cfg.epochs;
    rec["batch_size"] = cfg.batch_size;
    rec["chunk"] = cfg.chunk;
    rec["warmup_epochs"] = cfg.warmup_epochs;
    rec["optimizer"] = optimizer_json(cfg);
    rec["temperature"] = cfg.loss.temperature;
    rec["model_fingerprint"] = cfg.model.fingerprint();
    rec["train_records"] = records.size();
    log.write(rec);
  }

  const auto snapshot = [&](int epochs_completed) {
    auto ckpt = model::make_checkpoint(net);
    ckpt.extra = {{"stage", "pretrain"},
                  {"seed", cfg.seed},
                  {"epochs", cfg.epochs},
                  {"epochs_completed", epochs_completed},
                  {"global_step", global_step}};
    for (const auto& [name, buf] : buffers)
      ckpt.extra_tensors.emplace_back("sgd.momentum." + name, buf.clone());
    return ckpt;
  };

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    if (options.stop_after_epoch && epoch >= *options.stop_after_epoch) break;
    const auto epoch_start = std::chrono::steady_clock::now();
    const auto order = data::balanced_order(records, derive_seed(cfg.seed, epoch_tag("pretrain-order", epoch)));
    const auto batches = data::make_batches(order, static_cast<std::size_t>(cfg.batch_size));
    const auto steps = static_cast<double>(batches.size());
    double sum_total = 0, sum_det = 0, sum_mid = 0, lr = 0;

    for (std::size_t s = 0; s < batches.size(); ++s) {
      const auto step_start = std::chrono::steady_clock::now();
      lr = lr_at(epoch + (static_cast<double>(s) + 0.5) / steps, cfg);
      const auto& idx = batches[s];
      std::vector<imgproc::Image> images;
      images.reserve(idx.size());
      for (auto i : idx) {
        Rng rng(derive_seed(cfg.seed, epoch_tag("pretrain", epoch) + records[i].id));
        images.push_back(imgproc::pretrain_augment(store.load(records[i]), rng, cfg.pretrain_policy));
      }
      const auto x = model::to_tensor(images);
      const auto det = det_labels_of(records, idx);
      const auto gen = gen_labels_of(records, idx);
      const auto chunk = std::min<std::int64_t>(cfg.chunk, x.size(0));
      const auto res = selfcon::cached_gradient_step(net, x, det, gen, cfg.loss, chunk);

      {
        torch::NoGradGuard no_grad;
        for (std::size_t k = 0; k < params.size(); ++k) {
          auto& p = params[k].value();
          if (!p.grad().defined()) continue;
          auto g = p.grad();
          if (cfg.optimizer.weight_decay > 0) g = g + cfg.optimizer.weight_decay * p;
          auto& buf = buffers[k].second;
          buf.mul_(cfg.optimizer.momentum).add_(g);
          p.add_(buf, -lr);
        }
      }

      ojson rec;
      rec["type"] = "step";
      rec["stage"] = "pretrain";
      rec["epoch"] = epoch;
      rec["step"] = s;
      rec["global_step"] = global_step;
      rec["lr"] = lr;
      rec["batch"] = idx.size();
      rec["loss"] = res.total;
      rec["loss_detection"] = res.detection;
      rec["loss_model_id"] = res.model_id;
      if (res.model_id_skipped) rec["warning"] = "model-ID term skipped: fewer than 2 synthetic images";
      rec["seconds"] = seconds_since(step_start);
      log.write(rec);
      ++global_step;
      sum_total += res.total;
      sum_det += res.detection;
      sum_mid += res.model_id;
    }

    ojson rec;
    rec["type"] = "epoch";
    rec["stage"] = "pretrain";
    rec["epoch"] = epoch;
    rec["steps"] = batches.size();
    rec["mean_loss"] = sum_total / steps;
    rec["mean_loss_detection"] = sum_det / steps;
    rec["mean_loss_model_id"] = sum_mid / steps;
    rec["last_lr"] = lr;
    rec["seconds"] = seconds_since(epoch_start);
    log.write(rec);
    save_epoch_checkpoint(snapshot(epoch + 1), cfg.checkpoint_dir, "pretrain", epoch + 1);
  }
  return snapshot(std::min(cfg.epochs, options.stop_after_epoch.value_or(cfg.epochs)));
}

model::DetectorCheckpoint calibrate(const model::DetectorCheckpoint& ckpt, const TrainConfig& cfg,
                                    std::span<const ImageRecord> records,
                                    const data::ImageStore& store, TrainLog& log) {
  cfg.validate();
  if (cfg.stage != Stage::Calibrate) fail(ErrorCode::ConfigError, "config stage is not calibrate");
  if (ckpt.mode != model::Mode::Pretrain)
    fail(ErrorCode::WrongMode, "calibration starts from a pretrain checkpoint");
  std::int64_t reals = 0, synthetic = 0;
  for (const auto& r : records) (r.source == Source::Real ? reals : synthetic) += 1;
  if (reals == 0 || reals != synthetic)
    fail(ErrorCode::UnbalancedCalibration, "calibration set has " + std::to_string(reals) +
                                               " real and " + std::to_string(synthetic) +
                                               " synthetic images");

  auto net = model::restore(ckpt);
  torch::manual_seed(derive_seed(cfg.seed, "classifier"));
  net->to_calibrated();

  const bool clean = cfg.calibration_input == CalibrationInput::Clean;
  const auto load = [&](const ImageRecord& r, const std::string& tag) {
    auto img = store.load(r);
    if (clean)
      return imgproc::crop(img, imgproc::center_crop_box(img.height(), img.width(), cfg.clean_size));
    Rng rng(derive_seed(cfg.seed, tag + r.id));
    return imgproc::calibration_augment(img, rng, cfg.calibration_policy);
  };
  const auto batch_tensor = [&](std::span<const std::size_t> idx, const std::string& tag) {
    std::vector<imgproc::Image> images;
    images.reserve(idx.size());
    for (auto i : idx) images.push_back(load(records[i], tag));
    return model::to_tensor(images);
  };

  std::vector<std::size_t> all(records.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  {
    std::size_t pos = 0;
    model::refresh_norm_stats(net, [&]() -> std::optional<torch::Tensor> {
      if (pos >= all.size()) return std::nullopt;
      const auto n = std::min(bs, all.size() - pos);
      auto x = batch_tensor(std::span(all).subspan(pos, n), "calibrate-refresh:");
      pos += n;
      return x;
    });
  }
  net->eval();
  net->set_backbone_trainable(false);

  torch::Tensor cached;
  if (clean) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> parts;
    for (std::size_t b = 0; b < all.size(); b += bs)
      parts.push_back(net->features(
          batch_tensor(std::span(all).subspan(b, std::min(bs, all.size() - b)), "")));
    cached = torch::cat(parts);
  }

  auto params = net->classifier_parameters();
  torch::optim::AdamW opt(params, torch::optim::AdamWOptions(cfg.base_lr)
                                      .betas({cfg.optimizer.beta1, cfg.optimizer.beta2})
                                      .eps(cfg.optimizer.eps)
                                      .weight_decay(cfg.optimizer.weight_decay));
  {
    ojson rec;
    rec["type"] = "optimizer";
    rec["stage"] = "calibrate";
    rec["optimizer"] = optimizer_json(cfg);
    rec["epochs"] = cfg.epochs;
    rec["input"] = clean ? "clean" : "policy";
    rec["calibration_records"] = records.size();
    log.write(rec);
  }

  std::int64_t global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const auto order = data::balanced_order(records, derive_seed(cfg.seed, epoch_tag("calibrate-order", epoch)));
    const auto batches = data::make_batches(order, bs);
    double sum_loss = 0;
    std::int64_t correct = 0, seen = 0;
    for (std::size_t s = 0; s < batches.size(); ++s) {
      const auto& idx = batches[s];
      torch::Tensor feats;
      if (clean) {
        feats = cached.index_select(
            0, torch::tensor(std::vector<std::int64_t>(idx.begin(), idx.end()), torch::kInt64));
      } else {
        torch::NoGradGuard no_grad;
        feats = net->features(batch_tensor(idx, epoch_tag("calibrate", epoch)));
      }
      const auto det = torch::tensor(det_labels_of(records, idx), torch::kInt64);
      const auto gen = torch::tensor(gen_labels_of(records, idx), torch::kInt64);
      const auto out = net->classify_features(feats);
      auto loss = torch::nn::functional::cross_entropy(out.detection, det);
      const auto syn = gen.ge(0).nonzero().squeeze(1);
      if (syn.numel() > 0)
        loss = loss + torch::nn::functional::cross_entropy(out.model_id.index_select(0, syn),
                                                           gen.index_select(0, syn));
      const double v = loss.item<double>();
      if (!std::isfinite(v)) fail(ErrorCode::NonFiniteLoss, "calibration loss is not finite");
      opt.zero_grad();
      loss.backward();
      opt.step();

      correct += out.detection.argmax(1).eq(det).sum().item<std::int64_t>();
      seen += det.numel();
      sum_loss += v;
      ojson rec;
      rec["type"] = "step";
      rec["stage"] = "calibrate";
      rec["epoch"] = epoch;
      rec["step"] = s;
      rec["global_step"] = global_step++;
      rec["lr"] = cfg.base_lr;
      rec["loss"] = v;
      log.write(rec);
    }
    ojson rec;
    rec["type"] = "epoch";
    rec["stage"] = "calibrate";
    rec["epoch"] = epoch;
    rec["steps"] = batches.size();
    rec["mean_loss"] = sum_loss / static_cast<double>(batches.size());
    rec["train_detection_accuracy"] = static_cast<double>(correct) / static_cast<double>(seen);
    rec["seconds"] = seconds_since(epoch_start);
    log.write(rec);
  }
  net->set_backbone_trainable(true);

  auto out = model::make_checkpoint(net);
  out.extra = {{"stage", "calibrate"},
               {"seed", cfg.seed},
               {"optimizer", json::parse(optimizer_json(cfg).dump())},
               {"epochs_completed", cfg.epochs}};
  return out;
}

model::DetectorCheckpoint calibrate(const model::DetectorCheckpoint& ckpt, const TrainConfig& cfg,
                                    const manifest::Manifest& m, const data::ImageStore& store,
                                    TrainLog& log) {
  const auto records = manifest::records_in(m, Split::Calibration);
  return calibrate(ckpt, cfg, records, store, log);
}

manifest::Manifest loocv_subset(const manifest::Manifest& source, ContentType held_out,
                                const AblationConfig& cfg) {
  manifest::Manifest out;
  out.seed = source.seed;
  for (auto type : cfg.content_types) {
    for (auto split : {Split::Train, Split::Test}) {
      const auto want = split == Split::Train ? cfg.train_per_class : cfg.test_per_class;
      for (auto src : {Source::Real, Source::Synthetic}) {
        std::int64_t taken = 0;
        for (const auto& r : source.records) {
          if (taken == want) break;
          if (r.content_type != type || r.split != split || r.source != src) continue;
          if (src == Source::Synthetic && r.generator_group != GeneratorGroup::SD) continue;
          if (split == Split::Train && type == held_out) {
            ++taken;
            continue;
          }
          out.records.push_back(r);
          ++taken;
        }
        if (taken < want)
          fail(ErrorCode::InsufficientData,
               std::string(to_string(type)) + " has only " + std::to_string(taken) + " " +
                   std::string(to_string(src)) + " " + std::string(to_string(split)) +
                   " records, need " + std::to_string(want));
      }
    }
  }
  return out;
}

eval::MetricsReport content_type_report(const model::DetectorNet& net, const manifest::Manifest& m,
                                        const data::ImageStore& store, int eval_size,
                                        int batch_size) {
  const auto predictor = eval::make_predictor(net, batch_size);
  const auto records = manifest::records_in(m, Split::Test);
  std::map<ContentType, std::pair<std::vector<double>, std::vector<int>>> by_type;
  const auto step = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t b = 0; b < records.size(); b += step) {
    const auto batch = std::span(records).subspan(b, std::min(step, records.size() - b));
    std::vector<imgproc::Image> images;
    for (const auto& r : batch) {
      const auto img = store.load(r);
      images.push_back(imgproc::crop(img, imgproc::center_crop_box(img.height(), img.width(), eval_size)));
    }
    const auto preds = predictor(batch, images);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto& [scores, labels] = by_type[batch[i].content_type];
      scores.push_back(preds[i].detection_score);
      labels.push_back(batch[i].source == Source::Synthetic ? 1 : 0);
    }
  }
  eval::MetricsReport report;
  report.track = eval::Track::Ablation;
  report.config_fingerprint = net->config().fingerprint();
  report.perturbation = "center_crop(" + std::to_string(eval_size) + ")";
  for (const auto& [type, sl] : by_type) {
    const auto& [scores, labels] = sl;
    report.groups.emplace_back(
        std::string(to_string(type)),
        eval::GroupMetrics{eval::best_balanced_accuracy(scores, labels).balanced_accuracy,
                           eval::auc(scores, labels), static_cast<std::int64_t>(scores.size())});
  }
  report.finalize();
  return report;
}

std::vector<AblationRun> loocv_ablation(const AblationConfig& cfg, const manifest::Manifest& source,
                                        const data::ImageStore& store, TrainLog& log) {
  if (cfg.content_types.size() < 2)
    fail(ErrorCode::InsufficientData, "the ablation needs at least two content types");
  std::vector<AblationRun> runs;
  for (auto held_out : cfg.content_types) {
    const auto name = std::string(to_string(held_out));
    const auto subset = loocv_subset(source, held_out, cfg);
    AblationRun run;
    run.held_out = held_out;
    for (const auto& r : subset.records) {
      if (r.split != Split::Train) continue;
      ++run.train_count;
      if (r.content_type == held_out) ++run.held_out_train_count;
    }
    ojson rec;
    rec["type"] = "ablation";
    rec["held_out"] = name;
    rec["train_records"] = run.train_count;
    log.write(rec);

    auto pcfg = cfg.pretrain;
    auto ccfg = cfg.calibrate;
    if (!pcfg.checkpoint_dir.empty()) pcfg.checkpoint_dir += "/held-out-" + name;
    ccfg.clean_size = cfg.eval_size;
    const auto pre = pretrain(pcfg, subset, store, log);
    const auto train_records = manifest::records_in(subset, Split::Train);
    const auto cal = calibrate(pre, ccfg, train_records, store, log);
    run.report = content_type_report(model::restore(cal), subset, store, cfg.eval_size,
                                     ccfg.batch_size);
    run.report.extra["held_out"] = name;
    run.report.extra["train_records"] = run.train_count;
    runs.push_back(std::move(run));
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Run configuration

namespace {

void check_keys(const json& j, const ojson& schema, const std::string& path) {
  if (!j.is_object()) fail(ErrorCode::ConfigError, path + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!schema.contains(k)) fail(ErrorCode::ConfigError, "unknown config key " + path + "." + k);
    const auto& s = schema.at(k);
    if (s.is_object() && !s.empty()) check_keys(v, s, path + "." + k);
  }
}

imgproc::QualityRange quality_of(const ojson& j) {
  const auto q = j.get<std::array<int, 2>>();
  return {q[0], q[1]};
}

TrainConfig parse_pretrain(const ojson& root, const ojson& model, const ojson& loss,
                           const ojson& p, const std::string& out_dir) {
  TrainConfig c;
  c.stage = Stage::Pretrain;
  c.model = model::ModelConfig::from_json(json::parse(model.dump()));
  c.loss = {loss.at("temperature").get<double>(), loss.at("w_detection").get<double>(),
            loss.at("w_model_id").get<double>()};
  c.epochs = p.at("epochs").get<int>();
  c.batch_size = p.at("batch_size").get<int>();
  c.base_lr = p.at("base_lr").get<double>();
  c.warmup_epochs = p.at("warmup_epochs").get<double>();
  c.chunk = p.at("chunk").get<int>();
  c.optimizer.name = "sgd";
  c.optimizer.momentum = p.at("momentum").get<double>();
  c.optimizer.weight_decay = p.at("weight_decay").get<double>();
  c.pretrain_policy.crop = p.at("crop").get<int>();
  c.pretrain_policy.p_corrupt = p.at("p_corrupt").get<double>();
  c.pretrain_policy.p_rotate = p.at("p_rotate").get<double>();
  c.pretrain_policy.p_flip = p.at("p_flip").get<double>();
  c.pretrain_policy.corruption.quality = quality_of(p.at("quality"));
  c.seed = root.at("seed").get<std::uint64_t>();
  c.manifest_path = root.at("manifest").get<std::string>();
  if (!out_dir.empty()) {
    c.checkpoint_dir = out_dir + "/checkpoints";
    c.log_path = out_dir + "/pretrain.log.jsonl";
  }
  return c;
}

TrainConfig parse_calibrate(const ojson& root, const ojson& model, const ojson& p,
                            const std::string& out_dir) {
  TrainConfig c = TrainConfig::calibrate_defaults();
  c.model = model::ModelConfig::from_json(json::parse(model.dump()));
  c.epochs = p.at("epochs").get<int>();
  c.batch_size = p.at("batch_size").get<int>();
  c.base_lr = p.at("lr").get<double>();
  c.optimizer.weight_decay = p.at("weight_decay").get<double>();
  c.optimizer.beta1 = p.at("beta1").get<double>();
  c.optimizer.beta2 = p.at("beta2").get<double>();
  const auto input = p.at("input").get<std::string>();
  if (input != "policy" && input != "clean")
    fail(ErrorCode::ConfigError, "calibrate.input must be \"policy\" or \"clean\"");
  c.calibration_input = input == "clean" ? CalibrationInput::Clean : CalibrationInput::Policy;
  c.calibration_policy.size = p.at("size").get<int>();
  c.calibration_policy.corruption.quality = quality_of(p.at("quality"));
  c.clean_size = p.at("clean_size").get<int>();
  c.seed = root.at("seed").get<std::uint64_t>();
  c.manifest_path = root.at("manifest").get<std::string>();
  if (!out_dir.empty()) c.log_path = out_dir + "/calibrate.log.jsonl";
  return c;
}

ojson patched(ojson base, const ojson& patch) {
  base.merge_patch(patch);
  return base;
}

}  // namespace

ojson RunConfig::defaults() {
  ojson d;
  d["seed"] = 0;
  d["data_root"] = "";
  d["output_dir"] = "runs/default";
  d["manifest"] = "";
  d["model"] = ojson::parse(R"({
    "backbone": {"preset": "resnet50"}, "subnet_stage": 3, "embedding_dim": 128,
    "classifier_hidden": [256, 256], "model_id_classes": 4, "pretrain_input": 96})");
  d["loss"] = {{"temperature", 0.07}, {"w_detection", 1.0}, {"w_model_id", 1.0}};
  d["pretrain"] = ojson::parse(R"({
    "epochs": 400, "batch_size": 200, "base_lr": 0.005, "warmup_epochs": 10,
    "momentum": 0.9, "weight_decay": 0.0, "chunk": 50, "crop": 96,
    "p_corrupt": 0.5, "p_rotate": 0.3333333333333333, "p_flip": 0.3333333333333333,
    "quality": [50, 95]})");
  d["calibrate"] = ojson::parse(R"({
    "epochs": 5, "batch_size": 200, "lr": 0.0001, "weight_decay": 0.001,
    "beta1": 0.9, "beta2": 0.99, "input": "policy", "size": 256, "clean_size": 256,
    "quality": [50, 95]})");
  d["ablation"] = ojson::parse(R"({
    "content_types": ["photo", "painting", "face"], "train_per_class": 4500,
    "test_per_class": 1000, "eval_size": 256,
    "model": {"backbone": {"preset": "resnet18"}},
    "pretrain": {"epochs": 200}, "calibrate": {"input": "clean"}})");
  d["eval"] = ojson::parse(R"({
    "batch_size": 32, "test_size": 256, "p_compress": 0.75, "quality": [50, 95]})");
  return d;
}

RunConfig RunConfig::from_json(const json& j, std::optional<std::uint64_t> seed_override) {
  const auto d = defaults();
  ojson schema = d;
  schema["model"]["backbone"] = ojson::parse(R"({
    "preset": "", "block": "", "layers": [], "widths": [], "stem_width": 0,
    "stem_kernel": 0, "stem_stride": 0, "stem_pool": false})");
  schema["ablation"]["model"] = schema["model"];
  schema["ablation"]["pretrain"] = d["pretrain"];
  schema["ablation"]["calibrate"] = d["calibrate"];
  schema["ablation"]["loss"] = d["loss"];
  schema["ablation"]["content_types"] = ojson::array();
  check_keys(j, schema, "config");

  try {
    ojson r = patched(d, ojson::parse(j.dump()));
    if (seed_override) r["seed"] = *seed_override;
    RunConfig c;
    c.seed = r.at("seed").get<std::uint64_t>();
    c.data_root = r.at("data_root").get<std::string>();
    c.output_dir = r.at("output_dir").get<std::string>();
    c.manifest = r.at("manifest").get<std::string>();
    c.pretrain = parse_pretrain(r, r.at("model"), r.at("loss"), r.at("pretrain"), c.output_dir);
    c.calibrate = parse_calibrate(r, r.at("model"), r.at("calibrate"), c.output_dir);

    const auto& a = r.at("ablation");
    const auto a_model = patched(r.at("model"), a.at("model"));
    const auto a_loss = patched(r.at("loss"), a.value("loss", ojson::object()));
    const auto a_dir = c.output_dir.empty() ? std::string() : c.output_dir + "/ablation";
    c.ablation.pretrain =
        parse_pretrain(r, a_model, a_loss, patched(r.at("pretrain"), a.at("pretrain")), a_dir);
    c.ablation.calibrate =
        parse_calibrate(r, a_model, patched(r.at("calibrate"), a.at("calibrate")), a_dir);
    c.ablation.content_types.clear();
    for (const auto& t : a.at("content_types")) {
      const auto ct = parse_content_type(t.get<std::string>());
      if (!ct) fail(ErrorCode::ConfigError, "unknown content type " + t.dump());
      c.ablation.content_types.push_back(*ct);
    }
    c.ablation.train_per_class = a.at("train_per_class").get<std::int64_t>();
    c.ablation.test_per_class = a.at("test_per_class").get<std::int64_t>();
    c.ablation.eval_size = a.at("eval_size").get<int>();

    const auto& e = r.at("eval");
    c.eval.batch_size = e.at("batch_size").get<int>();
    c.eval.test_policy.size = e.at("test_size").get<int>();
    c.eval.test_policy.p_compress = e.at("p_compress").get<double>();
    c.eval.test_policy.quality = quality_of(e.at("quality"));
    c.eval.test_policy.validate();
    c.eval.config_fingerprint = c.pretrain.model.fingerprint();

    c.pretrain.validate();
    c.calibrate.validate();
    c.ablation.pretrain.validate();
    c.ablation.calibrate.validate();
    r["model"] = ojson::parse(c.pretrain.model.to_json().dump());
    r["ablation"]["model"] = ojson::parse(c.ablation.pretrain.model.to_json().dump());
    c.resolved = std::move(r);
    return c;
  } catch (const json::exception& ex) {
    fail(ErrorCode::ConfigError, std::string("invalid run config: ") + ex.what());
  } catch (const Error& ex) {
    if (ex.code() == ErrorCode::ConfigError) throw;
    fail(ErrorCode::ConfigError, ex.what());
  }
}

RunConfig RunConfig::load(const std::filesystem::path& path,
                          std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, seed_override);
}

}  // namespace synthdet::train
