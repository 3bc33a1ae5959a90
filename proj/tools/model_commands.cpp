#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

#include <torch/torch.h>

#include "cli.hpp"
#include "synthdet/dimred.hpp"
#include "synthdet/error.hpp"
#include "synthdet/eval.hpp"
#include "synthdet/model.hpp"

namespace synthdet::cli {

namespace {

using ojson = nlohmann::ordered_json;

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// --manifest wins over the config file's manifest.
manifest::Manifest load_run_manifest(const std::string& flag, const train::RunConfig* run) {
  const auto path = !flag.empty() ? flag : run ? run->manifest : std::string();
  if (path.empty()) fail(ErrorCode::ConfigError, "no manifest: pass --manifest or set \"manifest\" in the config");
  return manifest::load_manifest(path);
}

// Training outputs named by the config are placed under the output root.
train::TrainConfig placed(const Context& ctx, train::TrainConfig cfg, const std::string& manifest) {
  if (!manifest.empty()) cfg.manifest_path = manifest;
  if (!cfg.log_path.empty()) cfg.log_path = ctx.output(cfg.log_path).string();
  if (!cfg.checkpoint_dir.empty()) cfg.checkpoint_dir = ctx.output(cfg.checkpoint_dir).string();
  return cfg;
}

std::filesystem::path default_output(const Context& ctx, const std::string& flag, const std::string& name) {
  if (!flag.empty()) return ctx.output(flag);
  const auto dir = ctx.run ? ctx.run->output_dir : std::string();
  return ctx.output(dir.empty() ? name : dir + "/" + name);
}

train::TrainLog open_log(const std::string& path) {
  return path.empty() ? train::TrainLog() : train::TrainLog(path);
}

void print_report(const Context& ctx, const eval::MetricsReport& report) {
  for (const auto& [name, g] : report.groups)
    ctx.info("  " + name + ": accuracy " + fixed(g.accuracy) + " auc " + fixed(g.auc) + " (n=" +
             std::to_string(g.count) + ")");
  ctx.info("  mean: accuracy " + fixed(report.mean_accuracy) + " auc " + fixed(report.mean_auc));
}

eval::EvalConfig eval_config(const Context& ctx, const model::DetectorCheckpoint& ckpt) {
  auto cfg = ctx.run ? ctx.run->eval : eval::EvalConfig{};
  cfg.config_fingerprint = ckpt.config.fingerprint();
  return cfg;
}

struct EvalOpts {
  std::string ckpt, manifest, out;
};

void add_track(CLI::App* family, const GlobalOptions& g, const std::string& name, eval::Track track) {
  auto o = std::make_shared<EvalOpts>();
  auto* c = family->add_subcommand(
      name, track == eval::Track::Detection ? "Real-vs-synthetic metrics per generator group on perturbed test images"
                                            : "Generator-group identification metrics on perturbed test images");
  c->add_option("--ckpt", o->ckpt, "Calibrated checkpoint")->required();
  c->add_option("--manifest", o->manifest, "Manifest (default: config manifest)");
  c->add_option("--out", o->out, "Report file (JSON)")->required();
  c->callback([&g, o, name, track] {
    const auto ctx = resolve(g);
    const auto ckpt = model::load_checkpoint(o->ckpt);
    const auto ec = eval_config(ctx, ckpt);
    print_resolved(ctx, "eval " + name,
                   {{"ckpt", o->ckpt}, {"manifest", o->manifest}, {"out", o->out},
                    {"batch_size", ec.batch_size}, {"test_size", ec.test_policy.size},
                    {"p_compress", ec.test_policy.p_compress},
                    {"quality", {ec.test_policy.quality.lo, ec.test_policy.quality.hi}}});
    const auto m = load_run_manifest(o->manifest, ctx.run ? &*ctx.run : nullptr);
    const auto predictor = eval::make_predictor(model::restore(ckpt), ec.batch_size);
    const auto report = track == eval::Track::Detection
                            ? eval::detection_track(predictor, m, ctx.store(), ctx.seed, ec)
                            : eval::model_id_track(predictor, m, ctx.store(), ctx.seed, ec);
    eval::write_report(report, ctx.output(o->out));
    print_report(ctx, report);
  });
}

}  // namespace

void add_train_commands(CLI::App& app, const GlobalOptions& g) {
  auto* family = app.add_subcommand("train", "Contrastive pretraining, calibration and the content ablation");
  family->require_subcommand(1);

  {
    struct Opts {
      std::string manifest, resume, out;
    };
    auto o = std::make_shared<Opts>();
    auto* c = family->add_subcommand("pretrain", "Contrastive pretraining on the train split");
    c->add_option("--manifest", o->manifest, "Manifest (default: config manifest)");
    c->add_option("--resume", o->resume, "Checkpoint of an interrupted run with the same config");
    c->add_option("--out", o->out, "Final checkpoint (default: <output_dir>/pretrain.ckpt)");
    c->callback([&g, o] {
      const auto ctx = resolve(g);
      const auto& run = ctx.require_run("train pretrain");
      const auto cfg = placed(ctx, run.pretrain, o->manifest);
      const auto out = default_output(ctx, o->out, "pretrain.ckpt");
      print_resolved(ctx, "train pretrain", {{"manifest", cfg.manifest_path}, {"resume", o->resume}, {"out", out}});
      const auto m = load_run_manifest(o->manifest, &run);
      train::PretrainOptions opts;
      if (!o->resume.empty()) opts.resume_from = o->resume;
      auto log = open_log(cfg.log_path);
      const auto ckpt = train::pretrain(cfg, m, ctx.store(), log, opts);
      model::save_checkpoint(ckpt, out);
      for (const auto& rec : log.of_type("epoch")) ctx.detail(rec.dump());
      ctx.info("wrote " + out.string());
    });
  }
  {
    struct Opts {
      std::string manifest, from, out;
    };
    auto o = std::make_shared<Opts>();
    auto* c = family->add_subcommand("calibrate", "Classifier calibration on the calibration split");
    c->add_option("--from", o->from, "Pretrained checkpoint")->required();
    c->add_option("--manifest", o->manifest, "Manifest (default: config manifest)");
    c->add_option("--out", o->out, "Calibrated checkpoint (default: <output_dir>/calibrated.ckpt)");
    c->callback([&g, o] {
      const auto ctx = resolve(g);
      const auto& run = ctx.require_run("train calibrate");
      const auto cfg = placed(ctx, run.calibrate, o->manifest);
      const auto out = default_output(ctx, o->out, "calibrated.ckpt");
      print_resolved(ctx, "train calibrate", {{"manifest", cfg.manifest_path}, {"from", o->from}, {"out", out}});
      const auto m = load_run_manifest(o->manifest, &run);
      auto log = open_log(cfg.log_path);
      model::save_checkpoint(train::calibrate(model::load_checkpoint(o->from, cfg.model), cfg, m, ctx.store(), log),
                             out);
      ctx.info("wrote " + out.string());
    });
  }
  {
    struct Opts {
      std::string manifest, out;
    };
    auto o = std::make_shared<Opts>();
    auto* c = family->add_subcommand("ablation", "Leave-one-content-type-out training and evaluation");
    c->add_option("--manifest", o->manifest, "Source manifest (default: config manifest)");
    c->add_option("--out", o->out, "Result file (default: <output_dir>/ablation.json)");
    c->callback([&g, o] {
      const auto ctx = resolve(g);
      const auto& run = ctx.require_run("train ablation");
      auto cfg = run.ablation;
      cfg.pretrain = placed(ctx, cfg.pretrain, o->manifest);
      cfg.calibrate = placed(ctx, cfg.calibrate, o->manifest);
      const auto out = default_output(ctx, o->out, "ablation.json");
      print_resolved(ctx, "train ablation", {{"manifest", cfg.pretrain.manifest_path}, {"out", out}});
      const auto m = load_run_manifest(o->manifest, &run);
      auto log = open_log(cfg.pretrain.log_path);
      const auto runs = train::loocv_ablation(cfg, m, ctx.store(), log);

      ojson result = ojson::array();
      for (const auto& r : runs) {
        const auto held = std::string(to_string(r.held_out));
        ojson j;
        j["held_out"] = held;
        j["train_count"] = r.train_count;
        j["held_out_train_count"] = r.held_out_train_count;
        j["report"] = r.report.to_json();
        result.push_back(std::move(j));
        double in_type = 0.0;
        int others = 0;
        for (const auto& [name, gm] : r.report.groups)
          if (name != held) in_type += gm.auc, ++others;
        ctx.info("without " + held + ": held-out auc " + fixed(r.report.group(held).auc) +
                 ", mean in-type auc " + fixed(in_type / std::max(1, others)));
      }
      if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
      std::ofstream file(out);
      if (!file) fail(ErrorCode::IoError, "cannot write " + out.string());
      file << result.dump(2) << '\n';
      ctx.info("wrote " + out.string());
    });
  }
}

void add_eval_commands(CLI::App& app, const GlobalOptions& g) {
  auto* family = app.add_subcommand("eval", "Detection, model-ID and robustness evaluation");
  family->require_subcommand(1);
  add_track(family, g, "detection", eval::Track::Detection);
  add_track(family, g, "model-id", eval::Track::ModelId);

  struct Opts {
    std::string ckpt, manifest, kind, grid, out, plot;
  };
  auto o = std::make_shared<Opts>();
  auto* c = family->add_subcommand("sweep", "Accuracy and AUC across JPEG qualities or resize ratios");
  c->add_option("--ckpt", o->ckpt, "Calibrated checkpoint")->required();
  c->add_option("--manifest", o->manifest, "Manifest (default: config manifest)");
  c->add_option("--kind", o->kind, "jpeg or resize")->required();
  c->add_option("--grid", o->grid, "Comma-separated qualities or ratios")->required();
  c->add_option("--out", o->out, "Curve data, one JSON object per line")->required();
  c->add_option("--plot", o->plot, "Optional curve image (PNG)");
  c->callback([&g, o] {
    const auto ctx = resolve(g);
    const auto ckpt = model::load_checkpoint(o->ckpt);
    const auto ec = eval_config(ctx, ckpt);
    const auto kind = eval::parse_sweep_kind(o->kind);
    const auto grid = parse_grid(o->grid);
    print_resolved(ctx, "eval sweep",
                   {{"ckpt", o->ckpt}, {"manifest", o->manifest}, {"kind", eval::to_string(kind)},
                    {"grid", grid}, {"size", ec.test_policy.size}, {"out", o->out}, {"plot", o->plot}});
    const auto m = load_run_manifest(o->manifest, ctx.run ? &*ctx.run : nullptr);
    const auto sweep = eval::robustness_sweep(eval::make_predictor(model::restore(ckpt), ec.batch_size), m,
                                              ctx.store(), kind, grid, ec);
    eval::write_curve_data(sweep, ctx.output(o->out));
    if (!o->plot.empty()) eval::write_curve_plot(sweep, ctx.output(o->plot));
    for (const auto& p : sweep.curve)
      ctx.info("  " + std::string(eval::to_string(kind)) + " " + fixed(p.value, 2) + ": accuracy " +
               fixed(p.accuracy) + " auc " + fixed(p.auc));
  });
}

void add_viz_commands(CLI::App& app, const GlobalOptions& g) {
  auto* family = app.add_subcommand("viz", "Two-dimensional embedding visualization");
  family->require_subcommand(1);

  struct Opts {
    std::string ckpt, manifest, alpha_grid = "0,0.25,0.5,0.75,1", out, split = "test", label = "generator";
    int size = 256;
    int epochs = 100;
    int batch_size = 64;
    std::int64_t limit = 0;
  };
  auto o = std::make_shared<Opts>();
  auto* c = family->add_subcommand("embed", "Autoencoder projection of backbone features, alpha chosen by search");
  c->add_option("--ckpt", o->ckpt, "Checkpoint (pretrained or calibrated)")->required();
  c->add_option("--manifest", o->manifest, "Manifest (default: config manifest)");
  c->add_option("--alpha-grid", o->alpha_grid, "Comma-separated alphas in [0, 1]");
  c->add_option("--split", o->split, "train, test or calibration");
  c->add_option("--label", o->label, "Coloring: generator, source or content");
  c->add_option("--size", o->size, "Center-crop side fed to the backbone");
  c->add_option("--epochs", o->epochs, "Autoencoder epochs per alpha");
  c->add_option("--batch-size", o->batch_size, "Autoencoder mini-batch (capped at the record count)");
  c->add_option("--limit", o->limit, "Use at most this many records (0: all)");
  c->add_option("--out", o->out, "Scatter plot (PNG); coordinates go to the same name with .txt")->required();
  c->callback([&g, o] {
    const auto ctx = resolve(g);
    const auto grid = parse_grid(o->alpha_grid);
    const auto split = parse_split(o->split);
    if (!split) fail(ErrorCode::InvalidArgument, "unknown split " + o->split);
    if (o->label != "generator" && o->label != "source" && o->label != "content")
      fail(ErrorCode::InvalidArgument, "--label must be generator, source or content");
    auto out = ctx.output(o->out);
    auto coords = out;
    coords.replace_extension(".txt");
    print_resolved(ctx, "viz embed",
                   {{"ckpt", o->ckpt}, {"manifest", o->manifest}, {"alpha_grid", grid}, {"split", o->split},
                    {"label", o->label}, {"size", o->size}, {"epochs", o->epochs}, {"batch_size", o->batch_size}, {"limit", o->limit},
                    {"out", out}, {"coordinates", coords}});

    const auto m = load_run_manifest(o->manifest, ctx.run ? &*ctx.run : nullptr);
    auto records = manifest::records_in(m, *split);
    if (o->limit > 0 && static_cast<std::int64_t>(records.size()) > o->limit) records.resize(o->limit);
    auto net = model::restore(model::load_checkpoint(o->ckpt));
    net->eval();
    const auto store = ctx.store();

    dimred::EmbeddingSet set;
    std::vector<torch::Tensor> parts;
    constexpr std::size_t kBatch = 32;
    for (std::size_t i = 0; i < records.size(); i += kBatch) {
      torch::NoGradGuard no_grad;
      std::vector<imgproc::Image> batch;
      for (std::size_t k = i; k < std::min(records.size(), i + kBatch); ++k) {
        const auto img = imgproc::reflect_pad_to(store.load(records[k]), o->size, o->size);
        batch.push_back(imgproc::crop(img, imgproc::center_crop_box(img.height(), img.width(), o->size)));
      }
      parts.push_back(net->features(model::to_tensor(batch)));
    }
    for (const auto& r : records) {
      set.ids.push_back(r.id);
      set.labels.push_back(o->label == "source"    ? std::string(to_string(r.source))
                           : o->label == "content" ? std::string(to_string(r.content_type))
                                                   : std::string(to_string(r.generator_group)));
    }
    if (parts.empty()) fail(ErrorCode::InsufficientData, "no records in split " + o->split);
    set.vectors = torch::cat(parts).to(torch::kFloat);

    dimred::RdraConfig base;
    base.epochs = o->epochs;
    base.batch_size = static_cast<int>(std::min<std::int64_t>(o->batch_size, set.vectors.size(0)));
    base.seed = ctx.seed;
    const auto search = dimred::alpha_search(set, grid, base);
    for (const auto& row : search.rows)
      ctx.info("  alpha " + fixed(row.alpha, 2) + ": abs error " + fixed(row.abs_error) + " cosine distance " +
               fixed(row.cosine_distance) + " score " + fixed(row.score));
    ctx.info("  chosen alpha " + fixed(search.best_alpha, 2));
    dimred::write_projections(set, search.best_fit.projections, coords);
    dimred::write_scatter(set, search.best_fit.projections, out);
    ctx.info("wrote " + out.string() + " and " + coords.string());
  });
}

}  // namespace synthdet::cli
