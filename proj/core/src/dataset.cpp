#include "synthdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "synthdet/error.hpp"
#include "synthdet/rng.hpp"

namespace synthdet::data {

namespace {

using manifest::ImageRecord;
constexpr std::string_view kToyScheme = "toy://";
constexpr double kPi = std::numbers::pi;

cv::Scalar random_color(Rng& rng, double lo = 20.0, double hi = 235.0) {
  return cv::Scalar(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi));
}

void draw_photo(cv::Mat& canvas, Rng& rng) {
  const int h = canvas.rows, w = canvas.cols;
  const cv::Vec3f top(rng.uniform(40, 220), rng.uniform(40, 220), rng.uniform(40, 220));
  const cv::Vec3f bottom(rng.uniform(40, 220), rng.uniform(40, 220), rng.uniform(40, 220));
  std::array<double, 3> fx{}, fy{}, ph{};
  for (int k = 0; k < 3; ++k) {
    fx[k] = rng.uniform(0.5, 3.0) * 2 * kPi / w;
    fy[k] = rng.uniform(0.5, 3.0) * 2 * kPi / h;
    ph[k] = rng.uniform(0, 2 * kPi);
  }
  for (int y = 0; y < h; ++y) {
    const float t = static_cast<float>(y) / (h - 1);
    auto* row = canvas.ptr<cv::Vec3f>(y);
    for (int x = 0; x < w; ++x) {
      double wave = 0;
      for (int k = 0; k < 3; ++k) wave += std::sin(fx[k] * x + fy[k] * y + ph[k]);
      row[x] = top * (1 - t) + bottom * t + cv::Vec3f::all(static_cast<float>(6.0 * wave));
    }
  }
  const int blobs = static_cast<int>(rng.integer(3, 7));
  for (int b = 0; b < blobs; ++b) {
    cv::Mat layer = canvas.clone();
    const cv::Point c(static_cast<int>(rng.integer(0, w - 1)), static_cast<int>(rng.integer(0, h - 1)));
    const cv::Size axes(static_cast<int>(rng.integer(w / 12, w / 4)),
                        static_cast<int>(rng.integer(h / 12, h / 4)));
    cv::ellipse(layer, c, axes, rng.uniform(0, 180), 0, 360, random_color(rng), cv::FILLED,
                cv::LINE_AA);
    cv::addWeighted(layer, 0.8, canvas, 0.2, 0, canvas);
  }
  cv::GaussianBlur(canvas, canvas, cv::Size(0, 0), 2.0);
}

void draw_painting(cv::Mat& canvas, Rng& rng) {
  const int h = canvas.rows, w = canvas.cols;
  canvas.setTo(random_color(rng, 150, 240));
  std::array<cv::Scalar, 5> palette;
  for (auto& c : palette) c = random_color(rng);
  const double angle = rng.uniform(0, kPi);
  const int strokes = static_cast<int>(rng.integer(150, 300));
  for (int s = 0; s < strokes; ++s) {
    const double a = angle + rng.uniform(-0.6, 0.6);
    const double len = rng.uniform(15, 60);
    const cv::Point2d c(rng.uniform(0, w), rng.uniform(0, h));
    const cv::Point2d d(std::cos(a) * len / 2, std::sin(a) * len / 2);
    cv::line(canvas, c - d, c + d, palette[rng.index(palette.size())],
             static_cast<int>(rng.integer(4, 12)), cv::LINE_AA);
  }
  cv::GaussianBlur(canvas, canvas, cv::Size(0, 0), 1.2);
}

void draw_face(cv::Mat& canvas, Rng& rng) {
  const int h = canvas.rows, w = canvas.cols;
  canvas.setTo(random_color(rng, 60, 200));
  const cv::Point center(w / 2 + static_cast<int>(rng.integer(-w / 12, w / 12)),
                         h / 2 + static_cast<int>(rng.integer(-h / 12, h / 12)));
  const int fw = static_cast<int>(w * rng.uniform(0.25, 0.33));
  const int fh = static_cast<int>(h * rng.uniform(0.33, 0.42));
  const double tone = rng.uniform(60, 230);
  const cv::Scalar skin(tone * 0.75, tone * 0.85, tone);
  cv::ellipse(canvas, center - cv::Point(0, fh / 4), cv::Size(fw + fw / 6, fh), 0, 180, 360,
              random_color(rng, 10, 120), cv::FILLED, cv::LINE_AA);
  cv::ellipse(canvas, center, cv::Size(fw, fh), 0, 0, 360, skin, cv::FILLED, cv::LINE_AA);
  const int eye_dx = fw * 2 / 5, eye_y = center.y - fh / 5;
  const cv::Size eye(std::max(3, fw / 8), std::max(2, fh / 14));
  const cv::Scalar iris = random_color(rng, 10, 120);
  for (int side : {-1, 1}) {
    const cv::Point e(center.x + side * eye_dx, eye_y);
    cv::ellipse(canvas, e, eye, 0, 0, 360, cv::Scalar(235, 235, 235), cv::FILLED, cv::LINE_AA);
    cv::circle(canvas, e, std::max(2, eye.height), iris, cv::FILLED, cv::LINE_AA);
  }
  cv::ellipse(canvas, cv::Point(center.x, center.y + fh / 2), cv::Size(fw / 3, fh / 10), 0, 0,
              180, cv::Scalar(60, 60, rng.uniform(120, 200)), std::max(2, fh / 30), cv::LINE_AA);
  cv::GaussianBlur(canvas, canvas, cv::Size(0, 0), 1.5);
}

enum class Pattern { Checker, Grid, Stripes, Dots };

struct Artifact {
  Pattern pattern;
  int period;
  cv::Vec3f color;  // BGR weights
  float amplitude;
};

// Channel weights stay positive: chroma-only high-frequency patterns are
// mostly erased by JPEG chroma subsampling and would be nearly invisible.
Artifact artifact_for(ContentType c, GeneratorGroup g) {
  switch (g) {
    case GeneratorGroup::GAN:
      if (c == ContentType::Photo) return {Pattern::Checker, 10, {1.0f, 1.0f, 1.0f}, 9.0f};
      return {Pattern::Checker, 14, {0.2f, 1.0f, 0.8f}, 9.0f};
    case GeneratorGroup::SD:
      if (c == ContentType::Painting) return {Pattern::Stripes, 10, {1.0f, 1.0f, 0.9f}, 12.0f};
      if (c == ContentType::Face) return {Pattern::Dots, 9, {1.0f, 0.9f, 1.0f}, 12.0f};
      return {Pattern::Grid, 12, {0.9f, 1.0f, 1.0f}, 12.0f};
    case GeneratorGroup::Midjourney: return {Pattern::Dots, 13, {0.6f, 0.6f, 1.0f}, 10.0f};
    case GeneratorGroup::DALLE3: return {Pattern::Stripes, 15, {1.0f, 0.4f, 0.4f}, 10.0f};
    case GeneratorGroup::Real: break;
  }
  fail(ErrorCode::InvalidArgument, "real images carry no artifact");
}

float square(double v) { return v >= 0.0 ? 1.0f : -1.0f; }

// Square waves: their harmonics sit above the smooth scene spectra, which
// keeps the artifact visible in small crops.
float pattern_value(Pattern p, int period, int x, int y) {
  switch (p) {
    case Pattern::Checker: return ((x / (period / 2)) + (y / (period / 2))) % 2 ? 1.0f : -1.0f;
    case Pattern::Grid:
      return 0.5f * (square(std::cos(2 * kPi * x / period)) + square(std::cos(2 * kPi * y / period)));
    case Pattern::Stripes: return square(std::sin(2 * kPi * (x + y) / period));
    case Pattern::Dots:
      return square(std::cos(2 * kPi * x / period) * std::cos(2 * kPi * y / period));
  }
  return 0.0f;
}

// Benign periodic texture carried by every image of a content type, real or
// synthetic. Each one resembles the SD artifact of another type at lower
// amplitude: a detector that never saw the type's real images tends to
// mistake the texture for a generator fingerprint. This is the toy corpus's
// model of content-type shift.
std::optional<Artifact> texture_for(ContentType c) {
  switch (c) {
    case ContentType::Photo: return Artifact{Pattern::Dots, 9, {1.0f, 0.9f, 1.0f}, 6.0f};
    case ContentType::Painting: return Artifact{Pattern::Grid, 12, {0.9f, 1.0f, 1.0f}, 6.0f};
    case ContentType::Face: return Artifact{Pattern::Stripes, 10, {1.0f, 1.0f, 0.9f}, 6.0f};
    case ContentType::Uncategorized: break;
  }
  return std::nullopt;
}

void add_pattern(cv::Mat& canvas, const Artifact& art, Rng& rng) {
  const int ox = static_cast<int>(rng.index(static_cast<std::uint64_t>(art.period)));
  const int oy = static_cast<int>(rng.index(static_cast<std::uint64_t>(art.period)));
  for (int y = 0; y < canvas.rows; ++y) {
    auto* row = canvas.ptr<cv::Vec3f>(y);
    for (int x = 0; x < canvas.cols; ++x)
      row[x] += art.color * (art.amplitude * pattern_value(art.pattern, art.period, x + ox, y + oy));
  }
}

GeneratorGroup group_from_slug(std::string_view slug) {
  if (slug == "real") return GeneratorGroup::Real;
  if (slug == "gan") return GeneratorGroup::GAN;
  if (slug == "sd") return GeneratorGroup::SD;
  if (slug == "midjourney") return GeneratorGroup::Midjourney;
  if (slug == "dalle3") return GeneratorGroup::DALLE3;
  fail(ErrorCode::ParseError, "unknown toy generator slug '" + std::string(slug) + "'");
}

}  // namespace

ImageStore::ImageStore(std::filesystem::path data_root, std::size_t cache_bytes)
    : root_(std::move(data_root)), cache_bytes_(cache_bytes) {}

std::filesystem::path ImageStore::default_root() {
  if (const char* env = std::getenv("SYNTHDET_DATA_ROOT"); env && *env) return env;
  return std::filesystem::current_path();
}

imgproc::Image ImageStore::load(std::string_view path) const {
  if (cache_bytes_ == 0) return load_uncached(path);
  const std::string key(path);
  {
    std::lock_guard lock(cache_->mutex);
    if (auto it = cache_->index.find(key); it != cache_->index.end()) {
      cache_->entries.splice(cache_->entries.begin(), cache_->entries, it->second);
      return it->second->second;
    }
  }
  auto img = load_uncached(path);
  std::lock_guard lock(cache_->mutex);
  if (!cache_->index.contains(key)) {
    cache_->entries.emplace_front(key, img);
    cache_->index[key] = cache_->entries.begin();
    cache_->bytes += img.pixels().size();
    while (cache_->bytes > cache_bytes_ && cache_->entries.size() > 1) {
      auto& last = cache_->entries.back();
      cache_->bytes -= last.second.pixels().size();
      cache_->index.erase(last.first);
      cache_->entries.pop_back();
    }
  }
  return img;
}

imgproc::Image ImageStore::load_uncached(std::string_view path) const {
  if (is_toy_uri(path)) return render_toy(path);
  const std::filesystem::path p(path);
  return imgproc::read_image(p.is_absolute() ? p : root_ / p);
}

std::string toy_uri(ContentType c, std::string_view slug, std::uint64_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(index));
  return std::string(kToyScheme) + std::string(to_string(c)) + "/" + std::string(slug) + "/" + buf;
}

bool is_toy_uri(std::string_view path) { return path.starts_with(kToyScheme); }

imgproc::Image render_toy(std::string_view uri) {
  if (!is_toy_uri(uri)) fail(ErrorCode::ParseError, "not a toy URI: " + std::string(uri));
  const auto rest = uri.substr(kToyScheme.size());
  const auto a = rest.find('/');
  const auto b = rest.find('/', a == std::string_view::npos ? a : a + 1);
  if (a == std::string_view::npos || b == std::string_view::npos || b + 1 >= rest.size())
    fail(ErrorCode::ParseError, "malformed toy URI: " + std::string(uri));
  const auto ct = parse_content_type(rest.substr(0, a));
  if (!ct) fail(ErrorCode::ParseError, "unknown content type in toy URI: " + std::string(uri));
  const auto group = group_from_slug(rest.substr(a + 1, b - a - 1));
  return render_toy(*ct, group, fnv1a64(uri));
}

imgproc::Image render_toy(ContentType c, GeneratorGroup g, std::uint64_t seed) {
  Rng rng(mix64(seed));
  const int h = static_cast<int>(rng.integer(256, 320));
  const int w = static_cast<int>(rng.integer(256, 320));
  cv::Mat canvas(h, w, CV_32FC3);
  switch (c) {
    case ContentType::Photo:
    case ContentType::Uncategorized: draw_photo(canvas, rng); break;
    case ContentType::Painting: draw_painting(canvas, rng); break;
    case ContentType::Face: draw_face(canvas, rng); break;
  }

  // Texture first, so the scene's random draws do not depend on the label.
  if (const auto tex = texture_for(c)) add_pattern(canvas, *tex, rng);
  if (g != GeneratorGroup::Real) add_pattern(canvas, artifact_for(c, g), rng);
  // Sensor-like noise is shared by both classes.
  cv::Mat noise(h, w, CV_32FC3);
  cv::RNG(rng.next_u64()).fill(noise, cv::RNG::NORMAL, 0.0, 2.5);
  canvas += noise;

  imgproc::Image out(h, w);
  for (int y = 0; y < h; ++y) {
    const auto* row = canvas.ptr<cv::Vec3f>(y);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        out.at(y, x, ch) = cv::saturate_cast<std::uint8_t>(row[x][2 - ch]);
  }
  return out;
}

manifest::SourceListings toy_listings(const manifest::Structure& structure,
                                      std::int64_t count_per_weight) {
  manifest::SourceListings listings;
  for (const auto& row : structure.rows) {
    auto& files = listings[{row.content_type, row.generator, row.origin_dataset}];
    const auto n = count_per_weight * row.weight;
    for (std::int64_t i = 0; i < n; ++i)
      files.push_back(toy_uri(row.content_type, row.slug, static_cast<std::uint64_t>(i)));
  }
  return listings;
}

manifest::Manifest make_toy_manifest(const ToyManifestSpec& spec) {
  const auto& structure = manifest::structure_by_name(spec.structure);
  std::int64_t weight = 0;
  for (const auto& row : structure.rows) weight += row.weight;
  const auto per_weight = (spec.total + weight - 1) / weight;
  auto m = manifest::build_manifest(toy_listings(structure, per_weight), spec.total, spec.seed,
                                    structure);
  m = manifest::split_manifest(m, spec.train_fraction, spec.seed);
  if (spec.calibration_total > 0)
    m = manifest::sample_calibration(m, spec.calibration_total, spec.seed);
  return m;
}

std::int64_t write_toy_sources(const std::filesystem::path& root,
                               const manifest::Structure& structure,
                               std::int64_t count_per_weight) {
  std::int64_t written = 0;
  for (const auto& row : structure.rows) {
    const auto dir = root / std::string(to_string(row.content_type)) / row.slug;
    std::filesystem::create_directories(dir);
    for (std::int64_t i = 0; i < count_per_weight * row.weight; ++i) {
      const auto uri = toy_uri(row.content_type, row.slug, static_cast<std::uint64_t>(i));
      imgproc::write_png(render_toy(uri), dir / (uri.substr(uri.rfind('/') + 1) + ".png"));
      ++written;
    }
  }
  return written;
}

std::vector<std::size_t> balanced_order(std::span<const ImageRecord> records, std::uint64_t seed) {
  std::vector<std::size_t> real, synthetic;
  for (std::size_t i = 0; i < records.size(); ++i)
    (records[i].source == Source::Real ? real : synthetic).push_back(i);
  Rng rng(seed);
  rng.shuffle(std::span(real));
  rng.shuffle(std::span(synthetic));
  const bool real_first = rng.bernoulli(0.5);
  auto& a = real_first ? real : synthetic;
  auto& b = real_first ? synthetic : real;
  std::vector<std::size_t> order;
  order.reserve(records.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (i < a.size()) order.push_back(a[i++]);
    if (j < b.size()) order.push_back(b[j++]);
  }
  return order;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order,
                                                   std::size_t batch_size) {
  if (batch_size < 2) fail(ErrorCode::InvalidArgument, "batch size must be at least 2");
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    const auto e = std::min(order.size(), b + batch_size);
    if (e - b == 1 && !batches.empty()) {
      batches.back().push_back(order[b]);
    } else {
      batches.emplace_back(order.begin() + b, order.begin() + e);
    }
  }
  return batches;
}

std::int64_t detection_label(const ImageRecord& r) { return r.source == Source::Real ? 0 : 1; }

std::int64_t generator_label(const ImageRecord& r) {
  const auto cls = model_id_class(r.generator_group);
  return cls ? *cls : -1;
}

}  // namespace synthdet::data
