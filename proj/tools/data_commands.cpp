#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "cli.hpp"
#include "synthdet/error.hpp"
#include "synthdet/eval.hpp"
#include "synthdet/manifest.hpp"
#include "synthdet/promptgen.hpp"

namespace synthdet::cli {

namespace {

using ojson = nlohmann::ordered_json;

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

// Record ids become file names; anything outside [A-Za-z0-9._-] is replaced.
std::string file_stem(const std::string& id) {
  std::string s = id;
  for (auto& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-' && c != '_') c = '_';
  return s;
}

void save(const Context& ctx, const manifest::Manifest& m, const std::filesystem::path& path) {
  manifest::save_manifest(m, path);
  std::int64_t counts[3] = {0, 0, 0};
  for (const auto& r : m.records) ++counts[static_cast<int>(r.split)];
  ctx.info("wrote " + path.string() + ": " + std::to_string(m.records.size()) + " records (train " +
           std::to_string(counts[0]) + ", test " + std::to_string(counts[1]) + ", calibration " +
           std::to_string(counts[2]) + ")");
}

}  // namespace

void add_manifest_commands(CLI::App& app, const GlobalOptions& g) {
  auto* family = app.add_subcommand("manifest", "Build, split, sample and validate image manifests");
  family->require_subcommand(1);

  {
    struct Opts {
      std::string sources, structure = "full", out;
      std::int64_t total = 0;
      double train_fraction = manifest::kDefaultTrainFraction;
    };
    auto o = std::make_shared<Opts>();
    auto* c = family->add_subcommand("build", "Sample a manifest from a sources tree");
    c->add_option("--sources", o->sources, "Directory laid out as <content_type>/<slug>/<file>")->required();
    c->add_option("--total", o->total, "Target record count")->required();
    c->add_option("--structure", o->structure, "full, toy or toy-content");
    c->add_option("--train-fraction", o->train_fraction, "Per-cell share of the train split");
    c->add_option("--out", o->out, "Manifest file")->required();
    c->callback([&g, o] {
      const auto ctx = resolve(g);
      print_resolved(ctx, "manifest build",
                     {{"sources", o->sources}, {"total", o->total}, {"structure", o->structure},
                      {"train_fraction", o->train_fraction}, {"out", o->out}});
      const auto& structure = manifest::structure_by_name(o->structure);
      auto m = manifest::build_manifest(manifest::scan_sources(o->sources, structure), o->total,
                                        ctx.seed, structure);
      if (o->train_fraction != manifest::kDefaultTrainFraction)
        m = manifest::split_manifest(m, o->train_fraction, ctx.seed);
      save(ctx, m, ctx.output(o->out));
    });
  }
  {
    struct Opts {
      std::string in, out;
      double train_fraction = manifest::kDefaultTrainFraction;
    };
    auto o = std::make_shared<Opts>();
    auto* c = family->add_subcommand("split", "Reassign train/test splits per cell");
    c->add_option("--manifest", o->in, "Input manifest")->required();
    c->add_option("--train-fraction", o->train_fraction, "Per-cell share of the train split");
    c->add_option("--out", o->out, "Output manifest")->required();
    c->callback([&g, o] {
      const auto ctx = resolve(g);
      print_resolved(ctx, "manifest split",
                     {{"manifest", o->in}, {"train_fraction", o->train_fraction}, {"out", o->out}});
      save(ctx, manifest::split_manifest(manifest::load_manifest(o->in), o->train_fraction, ctx.seed),
           ctx.output(o->out));
    });
  }
  {
    struct Opts {
      std::string in, out;
      std::int64_t total = 0;
    };
    auto o = std::make_shared<Opts>();
    auto* c = family->add_subcommand("calibrate", "Sample the balanced calibration subset");
    c->add_option("--manifest", o->in, "Input manifest")->required();
    c->add_option("--total", o->total, "Calibration record count")->required();
    c->add_option("--out", o->out, "Output manifest")->required();
    c->callback([&g, o] {
      const auto ctx = resolve(g);
      print_resolved(ctx, "manifest calibrate", {{"manifest", o->in}, {"total", o->total}, {"out", o->out}});
      save(ctx, manifest::sample_calibration(manifest::load_manifest(o->in), o->total, ctx.seed),
           ctx.output(o->out));
    });
  }
  {
    struct Opts {
      std::string in, structure = "full";
      double train_fraction = manifest::kDefaultTrainFraction;
      bool no_split_check = false;
    };
    auto o = std::make_shared<Opts>();
    auto* c = family->add_subcommand("validate", "Check proportions, balance and split ratios");
    c->add_option("--manifest", o->in, "Manifest to check")->required();
    c->add_option("--structure", o->structure, "full, toy, toy-content, or none to skip proportions");
    c->add_option("--train-fraction", o->train_fraction, "Expected per-cell train share");
    c->add_flag("--no-split-check", o->no_split_check, "Skip the split-ratio check");
    c->callback([&g, o] {
      const auto ctx = resolve(g);
      print_resolved(ctx, "manifest validate",
                     {{"manifest", o->in}, {"structure", o->structure},
                      {"train_fraction", o->train_fraction}, {"split_check", !o->no_split_check}});
      manifest::ValidationOptions opts;
      opts.structure = o->structure == "none" ? nullptr : &manifest::structure_by_name(o->structure);
      opts.train_fraction = o->train_fraction;
      opts.check_split = !o->no_split_check;
      const auto report = manifest::validate_manifest(manifest::load_manifest(o->in), opts);
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
      for (const auto& v : report.violations)
        std::cerr << "violation: kind=" << v.kind << " cell=" << v.cell << " message=" << v.message << '\n';
      if (!report.ok())
        fail(ErrorCode::InvalidArgument,
             std::to_string(report.violations.size()) + " manifest violation(s) in " + o->in);
      std::cout << "ok: " << report.warnings.size() << " warning(s)" << std::endl;
    });
  }
  {
    struct Opts {
      std::string root, structure = "toy";
      std::int64_t per_weight = 1;
    };
    auto o = std::make_shared<Opts>();
    auto* c = family->add_subcommand("toy-sources", "Render procedural toy images as a sources tree");
    c->add_option("--root", o->root, "Output directory")->required();
    c->add_option("--structure", o->structure, "toy, toy-content or full");
    c->add_option("--per-weight", o->per_weight, "Images per structure weight unit");
    c->callback([&g, o] {
      const auto ctx = resolve(g);
      print_resolved(ctx, "manifest toy-sources",
                     {{"root", o->root}, {"structure", o->structure}, {"per_weight", o->per_weight}});
      const auto n = data::write_toy_sources(ctx.output(o->root), manifest::structure_by_name(o->structure),
                                             o->per_weight);
      ctx.info("wrote " + std::to_string(n) + " images under " + ctx.output(o->root).string());
    });
  }
  {
    auto o = std::make_shared<data::ToyManifestSpec>();
    auto out = std::make_shared<std::string>();
    auto* c = family->add_subcommand("toy", "Manifest of procedural toy:// images (rendered on demand)");
    c->add_option("--structure", o->structure, "toy or toy-content");
    c->add_option("--total", o->total, "Record count");
    c->add_option("--train-fraction", o->train_fraction, "Per-cell share of the train split");
    c->add_option("--calibration", o->calibration_total, "Calibration record count (0: none)");
    c->add_option("--out", *out, "Manifest file")->required();
    c->callback([&g, o, out] {
      const auto ctx = resolve(g);
      o->seed = ctx.seed;
      print_resolved(ctx, "manifest toy",
                     {{"structure", o->structure}, {"total", o->total},
                      {"train_fraction", o->train_fraction}, {"calibration", o->calibration_total},
                      {"out", *out}});
      save(ctx, data::make_toy_manifest(*o), ctx.output(*out));
    });
  }
}

void add_perturb_commands(CLI::App& app, const GlobalOptions& g) {
  auto* family = app.add_subcommand("perturb", "Write perturbed evaluation images");
  family->require_subcommand(1);

  {
    struct Opts {
      std::string manifest, out;
      std::optional<int> size;
      std::optional<double> p_compress;
    };
    auto o = std::make_shared<Opts>();
    auto* c = family->add_subcommand("test-set", "Apply the social-network perturbation to the test split");
    c->add_option("--manifest", o->manifest, "Input manifest")->required();
    c->add_option("--size", o->size, "Output side (default: config eval.test_size)");
    c->add_option("--p-compress", o->p_compress, "Probability of lossy compression (default: config eval.p_compress)");
    c->add_option("--out", o->out, "Output directory")->required();
    c->callback([&g, o] {
      const auto ctx = resolve(g);
      auto policy = ctx.run ? ctx.run->eval.test_policy : imgproc::TestPolicy{};
      if (o->size) policy.size = *o->size;
      if (o->p_compress) policy.p_compress = *o->p_compress;
      policy.validate();
      print_resolved(ctx, "perturb test-set",
                     {{"manifest", o->manifest}, {"size", policy.size}, {"p_compress", policy.p_compress},
                      {"quality", {policy.quality.lo, policy.quality.hi}}, {"out", o->out}});
      const auto m = manifest::load_manifest(o->manifest);
      const auto store = ctx.store();
      const auto dir = ctx.output(o->out);
      std::filesystem::create_directories(dir);
      auto index = open_out(dir / "index.tsv");
      std::int64_t n = 0;
      for (const auto& r : manifest::records_in(m, Split::Test)) {
        const auto name = file_stem(r.id) + ".png";
        // The perturbation already applied any lossy step; storage is lossless.
        imgproc::write_png(eval::perturbed_test_image(r, store, ctx.seed, policy), dir / name);
        index << name << '\t' << r.id << '\t' << data::detection_label(r) << '\n';
        ctx.detail(name);
        ++n;
      }
      ctx.info("wrote " + std::to_string(n) + " perturbed images to " + dir.string());
    });
  }
  {
    struct Opts {
      std::string manifest, kind, grid, out;
      int size = 256;
    };
    auto o = std::make_shared<Opts>();
    auto* c = family->add_subcommand("sweep", "Center-cropped test images at each JPEG quality or resize ratio");
    c->add_option("--manifest", o->manifest, "Input manifest")->required();
    c->add_option("--kind", o->kind, "jpeg or resize")->required();
    c->add_option("--grid", o->grid, "Comma-separated qualities or ratios")->required();
    c->add_option("--size", o->size, "Crop side");
    c->add_option("--out", o->out, "Output directory")->required();
    c->callback([&g, o] {
      const auto ctx = resolve(g);
      const auto kind = eval::parse_sweep_kind(o->kind);
      const auto grid = parse_grid(o->grid);
      print_resolved(ctx, "perturb sweep",
                     {{"manifest", o->manifest}, {"kind", eval::to_string(kind)}, {"grid", grid},
                      {"size", o->size}, {"out", o->out}});
      const auto m = manifest::load_manifest(o->manifest);
      const auto store = ctx.store();
      const auto records = manifest::records_in(m, Split::Test);
      for (double value : grid) {
        if (kind == eval::SweepKind::Jpeg && value != std::round(value))
          fail(ErrorCode::InvalidQuality, "JPEG quality must be an integer");
        std::ostringstream label;
        label << eval::to_string(kind) << "_" << value;
        const auto dir = ctx.output(o->out) / label.str();
        std::filesystem::create_directories(dir);
        for (const auto& r : records) {
          const auto img = store.load(r);
          const auto out = kind == eval::SweepKind::Resize
                               ? imgproc::sweep_resize(img, value, o->size)
                               : imgproc::sweep_jpeg(
                                     imgproc::crop(img, imgproc::center_crop_box(img.height(), img.width(), o->size)),
                                     static_cast<int>(value));
          imgproc::write_png(out, dir / (file_stem(r.id) + ".png"));
        }
        ctx.info("wrote " + std::to_string(records.size()) + " images to " + dir.string());
      }
    });
  }
}

void add_prompt_commands(CLI::App& app, const GlobalOptions& g) {
  auto* family = app.add_subcommand("prompts", "Generate text-to-image prompts");
  family->require_subcommand(1);

  struct Opts {
    std::string category, out, lexicon, tags;
    std::size_t count = 0;
  };
  auto o = std::make_shared<Opts>();
  auto* c = family->add_subcommand("generate", "One prompt per line; negatives in <out>.negative.txt");
  c->add_option("--category", o->category, "painting or face");
  c->add_option("--count", o->count, "Number of prompts");
  c->add_option("--lexicon", o->lexicon, "Replacement lexicon (JSON)");
  c->add_option("--tags", o->tags, "Tag file: one comma-separated tag list per line, used instead of templates");
  c->add_option("--out", o->out, "Prompt file")->required();
  c->callback([&g, o] {
    const auto ctx = resolve(g);
    print_resolved(ctx, "prompts generate",
                   {{"category", o->category}, {"count", o->count}, {"lexicon", o->lexicon},
                    {"tags", o->tags}, {"out", o->out}});
    const auto path = ctx.output(o->out);
    auto out = open_out(path);
    if (!o->tags.empty()) {
      for (const auto& line : prompts::read_tag_prompts(o->tags)) out << line << '\n';
      return;
    }
    if (o->category.empty()) fail(ErrorCode::InvalidArgument, "--category is required without --tags");
    const auto lexicon = o->lexicon.empty() ? prompts::default_lexicon() : prompts::load_lexicon(o->lexicon);
    auto negative = open_out(path.string() + ".negative.txt");
    for (const auto& p : prompts::generate(prompts::parse_category(o->category), o->count, ctx.seed, lexicon)) {
      out << p.positive_text << '\n';
      negative << p.negative_text << '\n';
    }
    ctx.info("wrote " + std::to_string(o->count) + " prompts to " + path.string());
  });
}

}  // namespace synthdet::cli
