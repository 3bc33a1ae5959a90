#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "synthdet/rng.hpp"

namespace synthdet::imgproc {

/// Dense height x width x 3 RGB image, 8 bits per channel, row-major.
class Image {
 public:
  Image() = default;
  Image(int height, int width, std::uint8_t fill = 0);
  Image(int height, int width, std::vector<std::uint8_t> rgb);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return pixels_.empty(); }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<std::uint8_t> pixels() noexcept { return pixels_; }

  std::uint8_t& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  std::uint8_t at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Throws InvalidImage unless the image is non-empty with consistent storage.
void check_image(const Image& img);

enum class Codec { Jpeg, Webp };
enum class Corruption { Jpeg, Webp, Blur, Noise };
enum class FlipAxis { None, Horizontal, Vertical };

struct CropBox {
  int y = 0;
  int x = 0;
  int height = 0;
  int width = 0;

  bool operator==(const CropBox&) const = default;
};

struct QualityRange {
  int lo = 50;
  int hi = 95;
};

struct CorruptionParams {
  QualityRange quality;
  std::array<int, 3> kernels{3, 5, 7};
  double noise_variance_lo = 3.0;  // on the 0-255 intensity scale
  double noise_variance_hi = 10.0;
};

/// One drawn corruption with all of its parameters fixed.
struct CorruptionOp {
  Corruption kind = Corruption::Jpeg;
  int quality = 0;
  int kernel = 0;
  double noise_variance = 0.0;
  std::uint64_t noise_seed = 0;
};

struct PretrainPolicy {
  int crop = 96;
  double p_corrupt = 0.5;
  double p_rotate = 1.0 / 3.0;
  double p_flip = 1.0 / 3.0;
  CorruptionParams corruption;

  static PretrainPolicy identity();
  void validate() const;
};

struct CalibrationPolicy {
  int size = 256;
  double p_perturb = 0.5;
  double p_one_of_four = 0.7;  // share of perturbed images; the rest take the composite branch
  double p_composite_compress = 0.5;
  double rrc_scale_lo = 0.08;
  double rrc_scale_hi = 1.0;
  double rrc_ratio_lo = 0.75;
  double rrc_ratio_hi = 1.33;
  double p_rotate = 1.0 / 3.0;
  double p_flip = 1.0 / 3.0;
  CorruptionParams corruption;

  static CalibrationPolicy identity();
  void validate() const;
};

struct TestPolicy {
  int size = 256;
  double p_compress = 0.75;
  QualityRange quality;

  void validate() const;
};

struct PretrainPlan {
  int padded_height = 0;
  int padded_width = 0;
  CropBox crop;
  std::optional<CorruptionOp> corruption;
  bool rotate = false;
  FlipAxis flip = FlipAxis::None;
};

enum class CalibrationBranch { Clean, OneOfFour, Composite };

struct CalibrationPlan {
  CalibrationBranch branch = CalibrationBranch::Clean;
  std::optional<CorruptionOp> corruption;  // OneOfFour
  CropBox resized_crop;                    // Composite, on the padded image
  std::optional<CorruptionOp> compression;  // Composite
  CropBox final_crop;                       // on the image padded to `size`
  bool rotate = false;
  FlipAxis flip = FlipAxis::None;
};

struct TestPlan {
  CropBox crop;
  std::optional<CorruptionOp> compression;
};

// Planning draws every random decision up front; applying a plan is
// deterministic. The *_augment functions are plan-then-apply.
PretrainPlan plan_pretrain(int height, int width, Rng& rng, const PretrainPolicy& policy = {});
Image apply_plan(const Image& img, const PretrainPlan& plan, const PretrainPolicy& policy = {});
Image pretrain_augment(const Image& img, Rng& rng, const PretrainPolicy& policy = {});

CalibrationPlan plan_calibration(int height, int width, Rng& rng,
                                 const CalibrationPolicy& policy = {});
Image apply_plan(const Image& img, const CalibrationPlan& plan,
                 const CalibrationPolicy& policy = {});
Image calibration_augment(const Image& img, Rng& rng, const CalibrationPolicy& policy = {});

TestPlan plan_test(int height, int width, Rng& rng, const TestPolicy& policy = {});
Image apply_plan(const Image& img, const TestPlan& plan, const TestPolicy& policy = {});
/// Random square crop with side in [size, min(h, w)], resize to size x size,
/// then lossy compression with probability p_compress.
Image test_perturb(const Image& img, Rng& rng, const TestPolicy& policy = {});

Image sweep_jpeg(const Image& img, int quality);
/// Center crop of side round(256 r), resized back to 256 x 256.
Image sweep_resize(const Image& img, double r, int output_size = 256);
CropBox center_crop_box(int height, int width, int side);

// Primitives.
Image reflect_pad_to(const Image& img, int min_height, int min_width);
Image crop(const Image& img, const CropBox& box);
Image resize(const Image& img, int height, int width);
Image rotate90_cw(const Image& img);
Image flip(const Image& img, FlipAxis axis);
/// sigma = 0.3 * ((k - 1) * 0.5 - 1) + 0.8
double blur_sigma(int kernel);
Image gaussian_blur(const Image& img, int kernel);
Image gaussian_noise(const Image& img, double variance, std::uint64_t seed);
Image apply_corruption(const Image& img, const CorruptionOp& op);

std::vector<std::uint8_t> encode(const Image& img, Codec codec, int quality);
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode(std::span<const std::uint8_t> bytes);
Image codec_roundtrip(const Image& img, Codec codec, int quality);

Image read_image(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);

/// Versions of the pinned encoder implementations, e.g.
/// "opencv=4.5.4;libjpeg=80;webp=0x020f".
std::string codec_versions();

}  // namespace synthdet::imgproc
