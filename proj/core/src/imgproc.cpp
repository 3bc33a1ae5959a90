#include "synthdet/imgproc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "synthdet/error.hpp"

namespace synthdet::imgproc {

namespace {

cv::Mat view(const Image& img) {
  return cv::Mat(img.height(), img.width(), CV_8UC3,
                 const_cast<std::uint8_t*>(img.pixels().data()));
}

Image from_mat(const cv::Mat& mat) {
  cv::Mat m = mat.isContinuous() ? mat : mat.clone();
  std::vector<std::uint8_t> px(m.data, m.data + m.total() * 3);
  return Image(m.rows, m.cols, std::move(px));
}

int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0))
    fail(ErrorCode::InvalidArgument, std::string(name) + " must lie in [0, 1]");
}

void check_quality_range(const QualityRange& q) {
  if (q.lo < 1 || q.hi > 100 || q.lo > q.hi)
    fail(ErrorCode::InvalidArgument, "quality range must be a sub-range of [1, 100]");
}

void check_corruption(const CorruptionParams& c) {
  check_quality_range(c.quality);
  for (int k : c.kernels)
    if (k < 3 || k > 7 || k % 2 == 0)
      fail(ErrorCode::InvalidArgument, "blur kernels must be odd and in [3, 7]");
  if (!(c.noise_variance_lo >= 0.0 && c.noise_variance_lo <= c.noise_variance_hi))
    fail(ErrorCode::InvalidArgument, "noise variance range is invalid");
}

CorruptionOp draw_corruption(Rng& rng, const CorruptionParams& params) {
  CorruptionOp op;
  op.kind = static_cast<Corruption>(rng.index(4));
  switch (op.kind) {
    case Corruption::Jpeg:
    case Corruption::Webp:
      op.quality = static_cast<int>(rng.integer(params.quality.lo, params.quality.hi));
      break;
    case Corruption::Blur:
      op.kernel = params.kernels[rng.index(params.kernels.size())];
      break;
    case Corruption::Noise:
      op.noise_variance = rng.uniform(params.noise_variance_lo, params.noise_variance_hi);
      op.noise_seed = rng.next_u64();
      break;
  }
  return op;
}

CorruptionOp draw_compression(Rng& rng, const QualityRange& quality) {
  CorruptionOp op;
  op.kind = rng.index(2) == 0 ? Corruption::Jpeg : Corruption::Webp;
  op.quality = static_cast<int>(rng.integer(quality.lo, quality.hi));
  return op;
}

FlipAxis draw_flip(Rng& rng, double p_flip) {
  if (!rng.bernoulli(p_flip)) return FlipAxis::None;
  return rng.index(2) == 0 ? FlipAxis::Horizontal : FlipAxis::Vertical;
}

CropBox random_crop_box(int height, int width, int size, Rng& rng) {
  return CropBox{static_cast<int>(rng.integer(0, height - size)),
                 static_cast<int>(rng.integer(0, width - size)), size, size};
}

// Area-and-aspect sampling with ten attempts and a center-crop fallback.
CropBox random_resized_crop_box(int height, int width, const CalibrationPolicy& p, Rng& rng) {
  const double area = static_cast<double>(height) * width;
  const double log_lo = std::log(p.rrc_ratio_lo);
  const double log_hi = std::log(p.rrc_ratio_hi);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(p.rrc_scale_lo, p.rrc_scale_hi);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (w > 0 && w <= width && h > 0 && h <= height)
      return CropBox{static_cast<int>(rng.integer(0, height - h)),
                     static_cast<int>(rng.integer(0, width - w)), h, w};
  }
  const double in_ratio = static_cast<double>(width) / height;
  int w = width;
  int h = height;
  if (in_ratio < p.rrc_ratio_lo) {
    h = static_cast<int>(std::lround(w / p.rrc_ratio_lo));
  } else if (in_ratio > p.rrc_ratio_hi) {
    w = static_cast<int>(std::lround(h * p.rrc_ratio_hi));
  }
  return CropBox{(height - h) / 2, (width - w) / 2, h, w};
}

Image finish_geometry(Image img, bool rotate, FlipAxis axis) {
  if (rotate) img = rotate90_cw(img);
  if (axis != FlipAxis::None) img = flip(img, axis);
  return img;
}

}  // namespace

Image::Image(int height, int width, std::uint8_t fill)
    : height_(height), width_(width),
      pixels_(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0) * 3, fill) {
  if (height < 1 || width < 1) fail(ErrorCode::InvalidImage, "image dimensions must be >= 1");
}

Image::Image(int height, int width, std::vector<std::uint8_t> rgb)
    : height_(height), width_(width), pixels_(std::move(rgb)) {
  if (height < 1 || width < 1) fail(ErrorCode::InvalidImage, "image dimensions must be >= 1");
  if (pixels_.size() != static_cast<std::size_t>(height) * width * 3)
    fail(ErrorCode::InvalidImage, "pixel buffer does not match dimensions");
}

void check_image(const Image& img) {
  if (img.empty() || img.height() < 1 || img.width() < 1)
    fail(ErrorCode::InvalidImage, "image is empty");
}

PretrainPolicy PretrainPolicy::identity() {
  PretrainPolicy p;
  p.p_corrupt = 0.0;
  p.p_rotate = 0.0;
  p.p_flip = 0.0;
  return p;
}

void PretrainPolicy::validate() const {
  if (crop < 1) fail(ErrorCode::InvalidArgument, "crop size must be positive");
  check_probability(p_corrupt, "p_corrupt");
  check_probability(p_rotate, "p_rotate");
  check_probability(p_flip, "p_flip");
  check_corruption(corruption);
}

CalibrationPolicy CalibrationPolicy::identity() {
  CalibrationPolicy p;
  p.p_perturb = 0.0;
  p.p_rotate = 0.0;
  p.p_flip = 0.0;
  return p;
}

void CalibrationPolicy::validate() const {
  if (size < 1) fail(ErrorCode::InvalidArgument, "output size must be positive");
  check_probability(p_perturb, "p_perturb");
  check_probability(p_one_of_four, "p_one_of_four");
  check_probability(p_composite_compress, "p_composite_compress");
  check_probability(p_rotate, "p_rotate");
  check_probability(p_flip, "p_flip");
  if (!(rrc_scale_lo > 0.0 && rrc_scale_lo <= rrc_scale_hi && rrc_scale_hi <= 1.0))
    fail(ErrorCode::InvalidArgument, "resized-crop scale range is invalid");
  if (!(rrc_ratio_lo > 0.0 && rrc_ratio_lo <= rrc_ratio_hi))
    fail(ErrorCode::InvalidArgument, "resized-crop ratio range is invalid");
  check_corruption(corruption);
}

void TestPolicy::validate() const {
  if (size < 1) fail(ErrorCode::InvalidArgument, "output size must be positive");
  check_probability(p_compress, "p_compress");
  check_quality_range(quality);
}

PretrainPlan plan_pretrain(int height, int width, Rng& rng, const PretrainPolicy& policy) {
  policy.validate();
  PretrainPlan plan;
  plan.padded_height = std::max(height, policy.crop);
  plan.padded_width = std::max(width, policy.crop);
  plan.crop = random_crop_box(plan.padded_height, plan.padded_width, policy.crop, rng);
  if (rng.bernoulli(policy.p_corrupt)) plan.corruption = draw_corruption(rng, policy.corruption);
  plan.rotate = rng.bernoulli(policy.p_rotate);
  plan.flip = draw_flip(rng, policy.p_flip);
  return plan;
}

Image apply_plan(const Image& img, const PretrainPlan& plan, const PretrainPolicy& policy) {
  check_image(img);
  Image out = crop(reflect_pad_to(img, policy.crop, policy.crop), plan.crop);
  if (plan.corruption) out = apply_corruption(out, *plan.corruption);
  return finish_geometry(std::move(out), plan.rotate, plan.flip);
}

Image pretrain_augment(const Image& img, Rng& rng, const PretrainPolicy& policy) {
  check_image(img);
  return apply_plan(img, plan_pretrain(img.height(), img.width(), rng, policy), policy);
}

CalibrationPlan plan_calibration(int height, int width, Rng& rng,
                                 const CalibrationPolicy& policy) {
  policy.validate();
  CalibrationPlan plan;
  int h = height;
  int w = width;
  if (rng.bernoulli(policy.p_perturb)) {
    if (rng.bernoulli(policy.p_one_of_four)) {
      plan.branch = CalibrationBranch::OneOfFour;
      plan.corruption = draw_corruption(rng, policy.corruption);
    } else {
      plan.branch = CalibrationBranch::Composite;
      plan.resized_crop = random_resized_crop_box(std::max(h, policy.size),
                                                  std::max(w, policy.size), policy, rng);
      h = w = policy.size;
      if (rng.bernoulli(policy.p_composite_compress))
        plan.compression = draw_compression(rng, policy.corruption.quality);
    }
  }
  plan.final_crop = random_crop_box(std::max(h, policy.size), std::max(w, policy.size),
                                    policy.size, rng);
  plan.rotate = rng.bernoulli(policy.p_rotate);
  plan.flip = draw_flip(rng, policy.p_flip);
  return plan;
}

Image apply_plan(const Image& img, const CalibrationPlan& plan, const CalibrationPolicy& policy) {
  check_image(img);
  Image out = img;
  if (plan.branch == CalibrationBranch::OneOfFour) {
    out = apply_corruption(out, *plan.corruption);
  } else if (plan.branch == CalibrationBranch::Composite) {
    out = reflect_pad_to(out, policy.size, policy.size);
    out = resize(crop(out, plan.resized_crop), policy.size, policy.size);
    if (plan.compression) out = apply_corruption(out, *plan.compression);
  }
  out = crop(reflect_pad_to(out, policy.size, policy.size), plan.final_crop);
  return finish_geometry(std::move(out), plan.rotate, plan.flip);
}

Image calibration_augment(const Image& img, Rng& rng, const CalibrationPolicy& policy) {
  check_image(img);
  return apply_plan(img, plan_calibration(img.height(), img.width(), rng, policy), policy);
}

TestPlan plan_test(int height, int width, Rng& rng, const TestPolicy& policy) {
  policy.validate();
  const int min_side = std::min(height, width);
  if (min_side < policy.size)
    fail(ErrorCode::ImageTooSmall, "test perturbation needs min side >= " +
                                       std::to_string(policy.size) + ", got " +
                                       std::to_string(min_side));
  TestPlan plan;
  const int side = static_cast<int>(rng.integer(policy.size, min_side));
  plan.crop = random_crop_box(height, width, side, rng);
  if (rng.bernoulli(policy.p_compress)) plan.compression = draw_compression(rng, policy.quality);
  return plan;
}

Image apply_plan(const Image& img, const TestPlan& plan, const TestPolicy& policy) {
  check_image(img);
  Image out = resize(crop(img, plan.crop), policy.size, policy.size);
  if (plan.compression) out = apply_corruption(out, *plan.compression);
  return out;
}

Image test_perturb(const Image& img, Rng& rng, const TestPolicy& policy) {
  check_image(img);
  return apply_plan(img, plan_test(img.height(), img.width(), rng, policy), policy);
}

Image sweep_jpeg(const Image& img, int quality) {
  if (quality < 1 || quality > 100)
    fail(ErrorCode::InvalidQuality, "JPEG quality must lie in [1, 100], got " +
                                        std::to_string(quality));
  check_image(img);
  return codec_roundtrip(img, Codec::Jpeg, quality);
}

CropBox center_crop_box(int height, int width, int side) {
  if (side < 1 || side > std::min(height, width))
    fail(ErrorCode::CropExceedsImage, "crop side " + std::to_string(side) + " exceeds " +
                                          std::to_string(height) + "x" + std::to_string(width));
  return CropBox{(height - side) / 2, (width - side) / 2, side, side};
}

Image sweep_resize(const Image& img, double r, int output_size) {
  check_image(img);
  if (!(r > 0.0)) fail(ErrorCode::InvalidArgument, "resize ratio must be positive");
  const int side = static_cast<int>(std::lround(output_size * r));
  return resize(crop(img, center_crop_box(img.height(), img.width(), side)), output_size,
                output_size);
}

Image reflect_pad_to(const Image& img, int min_height, int min_width) {
  check_image(img);
  const int h = std::max(img.height(), min_height);
  const int w = std::max(img.width(), min_width);
  if (h == img.height() && w == img.width()) return img;
  const int top = (h - img.height()) / 2;
  const int left = (w - img.width()) / 2;
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    const int sy = reflect101(y - top, img.height());
    for (int x = 0; x < w; ++x) {
      const int sx = reflect101(x - left, img.width());
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

Image crop(const Image& img, const CropBox& box) {
  check_image(img);
  if (box.height < 1 || box.width < 1 || box.y < 0 || box.x < 0 ||
      box.y + box.height > img.height() || box.x + box.width > img.width())
    fail(ErrorCode::CropExceedsImage, "crop box outside image");
  if (box.y == 0 && box.x == 0 && box.height == img.height() && box.width == img.width())
    return img;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(box.height) * box.width * 3);
  const auto src = img.pixels();
  for (int y = 0; y < box.height; ++y) {
    const auto row = src.subspan((static_cast<std::size_t>(box.y + y) * img.width() + box.x) * 3,
                                 static_cast<std::size_t>(box.width) * 3);
    std::copy(row.begin(), row.end(), px.begin() + static_cast<std::ptrdiff_t>(y) * box.width * 3);
  }
  return Image(box.height, box.width, std::move(px));
}

Image resize(const Image& img, int height, int width) {
  check_image(img);
  if (height < 1 || width < 1) fail(ErrorCode::InvalidArgument, "resize target must be >= 1");
  if (img.height() == height && img.width() == width) return img;
  const bool shrinking = height <= img.height() && width <= img.width();
  cv::Mat out;
  cv::resize(view(img), out, cv::Size(width, height), 0, 0,
             shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  return from_mat(out);
}

Image rotate90_cw(const Image& img) {
  check_image(img);
  Image out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(x, img.height() - 1 - y, c) = img.at(y, x, c);
  return out;
}

Image flip(const Image& img, FlipAxis axis) {
  check_image(img);
  if (axis == FlipAxis::None) return img;
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const int sy = axis == FlipAxis::Vertical ? img.height() - 1 - y : y;
      const int sx = axis == FlipAxis::Horizontal ? img.width() - 1 - x : x;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  return out;
}

double blur_sigma(int kernel) { return 0.3 * ((kernel - 1) * 0.5 - 1.0) + 0.8; }

Image gaussian_blur(const Image& img, int kernel) {
  check_image(img);
  if (kernel < 1 || kernel % 2 == 0) fail(ErrorCode::InvalidArgument, "kernel must be odd");
  cv::Mat out;
  const double sigma = blur_sigma(kernel);
  cv::GaussianBlur(view(img), out, cv::Size(kernel, kernel), sigma, sigma, cv::BORDER_REFLECT_101);
  return from_mat(out);
}

Image gaussian_noise(const Image& img, double variance, std::uint64_t seed) {
  check_image(img);
  if (variance < 0.0) fail(ErrorCode::InvalidArgument, "noise variance must be >= 0");
  const double sigma = std::sqrt(variance);
  Rng rng(seed);
  Image out = img;
  for (auto& v : out.pixels()) {
    const double noisy = std::round(static_cast<double>(v) + sigma * rng.normal());
    v = static_cast<std::uint8_t>(std::clamp(noisy, 0.0, 255.0));
  }
  return out;
}

Image apply_corruption(const Image& img, const CorruptionOp& op) {
  switch (op.kind) {
    case Corruption::Jpeg: return codec_roundtrip(img, Codec::Jpeg, op.quality);
    case Corruption::Webp: return codec_roundtrip(img, Codec::Webp, op.quality);
    case Corruption::Blur: return gaussian_blur(img, op.kernel);
    case Corruption::Noise: return gaussian_noise(img, op.noise_variance, op.noise_seed);
  }
  return img;
}

std::vector<std::uint8_t> encode(const Image& img, Codec codec, int quality) {
  check_image(img);
  if (quality < 1 || quality > 100)
    fail(ErrorCode::InvalidQuality, "quality must lie in [1, 100]");
  cv::Mat bgr;
  cv::cvtColor(view(img), bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> bytes;
  const bool ok = codec == Codec::Jpeg
                      ? cv::imencode(".jpg", bgr, bytes, {cv::IMWRITE_JPEG_QUALITY, quality})
                      : cv::imencode(".webp", bgr, bytes, {cv::IMWRITE_WEBP_QUALITY, quality});
  if (!ok) fail(ErrorCode::IoError, "encoder failed");
  return bytes;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  check_image(img);
  cv::Mat bgr;
  cv::cvtColor(view(img), bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> bytes;
  if (!cv::imencode(".png", bgr, bytes)) fail(ErrorCode::IoError, "PNG encoder failed");
  return bytes;
}

Image decode(std::span<const std::uint8_t> bytes) {
  const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1,
                    const_cast<std::uint8_t*>(bytes.data()));
  const cv::Mat bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
  if (bgr.empty()) fail(ErrorCode::InvalidImage, "cannot decode image bytes");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return from_mat(rgb);
}

Image codec_roundtrip(const Image& img, Codec codec, int quality) {
  return decode(encode(img, codec, quality));
}

Image read_image(const std::filesystem::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) fail(ErrorCode::IoError, "cannot read image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return from_mat(rgb);
}

void write_png(const Image& img, const std::filesystem::path& path) {
  check_image(img);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat bgr;
  cv::cvtColor(view(img), bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) fail(ErrorCode::IoError, "cannot write " + path.string());
}

std::string codec_versions() {
  static const std::string versions = [] {
    std::string jpeg = "unknown";
    std::string webp = "unknown";
    std::istringstream info(cv::getBuildInformation());
    std::string line;
    auto value_of = [](const std::string& l) {
      const auto open = l.find("(ver");
      if (open == std::string::npos) return std::string("builtin");
      auto v = l.substr(open + 1);
      if (!v.empty() && v.back() == ')') v.pop_back();
      return v;
    };
    while (std::getline(info, line)) {
      const auto start = line.find_first_not_of(' ');
      if (start == std::string::npos) continue;
      const auto trimmed = line.substr(start);
      if (trimmed.starts_with("JPEG:")) jpeg = value_of(trimmed);
      if (trimmed.starts_with("WEBP:")) webp = value_of(trimmed);
    }
    return "opencv=" + std::string(CV_VERSION) + ";jpeg=" + jpeg + ";webp=" + webp;
  }();
  return versions;
}

}  // namespace synthdet::imgproc
