#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "synthdet/error.hpp"
#include "synthdet/imgproc.hpp"
#include "synthdet/rng.hpp"
#include "test_util.hpp"

using namespace synthdet;
using namespace synthdet::imgproc;
using testutil::expect_code;

namespace {

Image pattern(int h, int w, std::uint64_t seed = 1) {
  Image img(h, w);
  Rng rng(seed);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<std::uint8_t>((x * 3 + y * 5 + c * 40) % 256 / 2 +
                                                     rng.integer(0, 60));
  return img;
}

// Low-frequency image: survives chroma subsampling almost unchanged.
Image smooth(int h, int w) {
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>((x + y) / 4 + 30 * c);
  return img;
}

int max_abs_diff(const Image& a, const Image& b) {
  int m = 0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i)
    m = std::max(m, std::abs(int(a.pixels()[i]) - int(b.pixels()[i])));
  return m;
}

}  // namespace

TEST(Image, ConstructionChecks) {
  expect_code(ErrorCode::InvalidImage, [] { Image(0, 4); });
  expect_code(ErrorCode::InvalidImage, [] { Image(2, 2, std::vector<std::uint8_t>(5)); });
  expect_code(ErrorCode::InvalidImage, [] { check_image(Image{}); });
}

TEST(Primitives, ReflectPadMirrorsWithoutEdgeRepeat) {
  Image img(1, 3);
  for (int x = 0; x < 3; ++x) img.at(0, x, 0) = static_cast<std::uint8_t>(10 * (x + 1));
  const auto padded = reflect_pad_to(img, 1, 7);
  ASSERT_EQ(padded.width(), 7);
  // 10 20 30 -> 30 20 | 10 20 30 | 20 10 (reflect-101)
  const std::vector<int> want{30, 20, 10, 20, 30, 20, 10};
  for (int x = 0; x < 7; ++x) EXPECT_EQ(padded.at(0, x, 0), want[x]) << x;
  EXPECT_EQ(reflect_pad_to(img, 1, 2), img);
}

TEST(Primitives, RotateFlipCrop) {
  const auto img = pattern(4, 6);
  const auto r = rotate90_cw(img);
  EXPECT_EQ(r.height(), 6);
  EXPECT_EQ(r.width(), 4);
  // Clockwise: top-left of the result is the bottom-left of the input.
  EXPECT_EQ(r.at(0, 0, 1), img.at(3, 0, 1));
  EXPECT_EQ(rotate90_cw(rotate90_cw(rotate90_cw(r))), img);
  EXPECT_EQ(flip(flip(img, FlipAxis::Horizontal), FlipAxis::Horizontal), img);
  EXPECT_EQ(flip(img, FlipAxis::Vertical).at(0, 2, 0), img.at(3, 2, 0));
  EXPECT_EQ(crop(img, {1, 2, 2, 3}).at(0, 0, 2), img.at(1, 2, 2));
  expect_code(ErrorCode::CropExceedsImage, [&] { crop(img, {3, 0, 2, 2}); });
}

TEST(Primitives, BlurSigmaFormula) {
  EXPECT_DOUBLE_EQ(blur_sigma(7), 1.4);
  EXPECT_DOUBLE_EQ(blur_sigma(3), 0.8);
  EXPECT_DOUBLE_EQ(blur_sigma(5), 1.1);
  const auto img = pattern(32, 32);
  const auto blurred = gaussian_blur(img, 5);
  EXPECT_EQ(blurred.height(), 32);
  EXPECT_NE(blurred, img);
}

TEST(Primitives, NoiseIsSeededAndScaled) {
  const Image flat(64, 64, 128);
  const auto a = gaussian_noise(flat, 9.0, 3);
  EXPECT_EQ(a, gaussian_noise(flat, 9.0, 3));
  EXPECT_NE(a, gaussian_noise(flat, 9.0, 4));
  double sum = 0, sq = 0;
  for (auto p : a.pixels()) {
    sum += p - 128.0;
    sq += (p - 128.0) * (p - 128.0);
  }
  const double n = static_cast<double>(a.pixels().size());
  // Variance on the 0-255 scale, inflated slightly by rounding (+1/12).
  EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 9.0 + 1.0 / 12, 0.6);
}

TEST(Codecs, RoundTripAndQualityChecks) {
  const auto img = pattern(64, 48);
  const auto png = decode(encode_png(img));
  EXPECT_EQ(png, img);
  for (auto codec : {Codec::Jpeg, Codec::Webp}) {
    const auto out = codec_roundtrip(img, codec, 90);
    EXPECT_EQ(out.height(), 64);
    EXPECT_EQ(out.width(), 48);
  }
  expect_code(ErrorCode::InvalidQuality, [&] { encode(img, Codec::Jpeg, 0); });
  expect_code(ErrorCode::InvalidImage, [] { decode(std::vector<std::uint8_t>{1, 2, 3}); });
  EXPECT_NE(codec_versions().find("opencv="), std::string::npos);
}

TEST(PretrainAugment, ShapeContractAndPadding) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const int h = static_cast<int>(rng.integer(1, 200));
    const int w = static_cast<int>(rng.integer(1, 200));
    const auto out = pretrain_augment(pattern(h, w, i), rng);
    ASSERT_EQ(out.height(), 96);
    ASSERT_EQ(out.width(), 96);
  }
  const auto plan = plan_pretrain(64, 64, rng);
  EXPECT_EQ(plan.padded_height, 96);
  EXPECT_EQ(plan.padded_width, 96);
  EXPECT_EQ(plan.crop, (CropBox{0, 0, 96, 96}));
}

TEST(PretrainAugment, IdentityPolicyIsIdentity) {
  const auto img = pattern(96, 96);
  Rng rng(2);
  EXPECT_EQ(pretrain_augment(img, rng, PretrainPolicy::identity()), img);
}

TEST(PretrainAugment, DeterministicGivenSeed) {
  const auto img = pattern(120, 130);
  Rng a(42), b(42);
  EXPECT_EQ(pretrain_augment(img, a), pretrain_augment(img, b));
}

TEST(PretrainAugment, ExactlyOneCorruptionPerPlan) {
  Rng rng(3);
  PretrainPolicy p;
  p.p_corrupt = 1.0;
  std::array<int, 4> kinds{};
  for (int i = 0; i < 2000; ++i) {
    const auto plan = plan_pretrain(100, 100, rng, p);
    ASSERT_TRUE(plan.corruption.has_value());
    ++kinds[static_cast<int>(plan.corruption->kind)];
    const auto& op = *plan.corruption;
    if (op.kind == Corruption::Jpeg || op.kind == Corruption::Webp) {
      EXPECT_GE(op.quality, 50);
      EXPECT_LE(op.quality, 95);
    } else if (op.kind == Corruption::Blur) {
      EXPECT_TRUE(op.kernel == 3 || op.kernel == 5 || op.kernel == 7);
    } else {
      EXPECT_GE(op.noise_variance, 3.0);
      EXPECT_LE(op.noise_variance, 10.0);
    }
  }
  for (int k : kinds) EXPECT_NEAR(k, 500, 4 * std::sqrt(2000 * 0.25 * 0.75));
}

TEST(CalibrationAugment, ShapeContractAndIdentity) {
  Rng rng(4);
  for (int i = 0; i < 60; ++i) {
    const int h = static_cast<int>(rng.integer(40, 400));
    const int w = static_cast<int>(rng.integer(40, 400));
    const auto out = calibration_augment(pattern(h, w, i), rng);
    ASSERT_EQ(out.height(), 256);
    ASSERT_EQ(out.width(), 256);
  }
  const auto img = pattern(256, 256);
  EXPECT_EQ(calibration_augment(img, rng, CalibrationPolicy::identity()), img);

  CalibrationPolicy composite;
  composite.p_perturb = 1.0;
  composite.p_one_of_four = 0.0;
  const auto plan = plan_calibration(100, 100, rng, composite);
  EXPECT_EQ(plan.branch, CalibrationBranch::Composite);
  const auto out = apply_plan(pattern(100, 100), plan, composite);
  EXPECT_EQ(out.height(), 256);
}

TEST(CalibrationAugment, ResizedCropBounds) {
  Rng rng(5);
  CalibrationPolicy p;
  p.p_perturb = 1.0;
  p.p_one_of_four = 0.0;
  for (int i = 0; i < 500; ++i) {
    const auto plan = plan_calibration(300, 280, rng, p);
    const auto& box = plan.resized_crop;
    const double area = static_cast<double>(box.height) * box.width / (300.0 * 280.0);
    EXPECT_GE(box.y, 0);
    EXPECT_GE(box.x, 0);
    EXPECT_LE(box.y + box.height, 300);
    EXPECT_LE(box.x + box.width, 280);
    EXPECT_LE(area, 1.0 + 1e-9);
    EXPECT_GE(area, 0.08 * 0.5);  // rounding of small boxes
  }
}

TEST(TestPerturb, ShapeBoundsAndErrors) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const auto plan = plan_test(1792, 1024, rng);
    EXPECT_EQ(plan.crop.height, plan.crop.width);
    EXPECT_GE(plan.crop.height, 256);
    EXPECT_LE(plan.crop.height, 1024);
    EXPECT_LE(plan.crop.y + plan.crop.height, 1792);
    EXPECT_LE(plan.crop.x + plan.crop.width, 1024);
  }
  const auto plan = plan_test(256, 256, rng);
  EXPECT_EQ(plan.crop, (CropBox{0, 0, 256, 256}));
  TestPolicy no_compress;
  no_compress.p_compress = 0.0;
  const auto img = pattern(256, 256);
  EXPECT_EQ(test_perturb(img, rng, no_compress), img);
  expect_code(ErrorCode::ImageTooSmall, [&] { test_perturb(pattern(255, 400), rng); });
}

TEST(TestPerturb, CompressionFrequency) {
  Rng rng(7);
  int compressed = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    if (plan_test(300, 300, rng).compression) ++compressed;
  EXPECT_NEAR(compressed / double(n), 0.75, 0.01);
}

TEST(Sweeps, JpegAndResize) {
  const auto img = smooth(256, 256);
  const auto q100 = sweep_jpeg(img, 100);
  EXPECT_EQ(q100.height(), 256);
  EXPECT_LE(max_abs_diff(q100, img), 12);
  EXPECT_EQ(sweep_jpeg(img, 40).width(), 256);
  expect_code(ErrorCode::InvalidQuality, [&] { sweep_jpeg(img, 0); });
  expect_code(ErrorCode::InvalidQuality, [&] { sweep_jpeg(img, 101); });

  std::size_t previous = SIZE_MAX;
  for (int q : {95, 75, 55, 40}) {
    const auto size = encode(img, Codec::Jpeg, q).size();
    EXPECT_LE(size, previous) << q;
    previous = size;
  }

  EXPECT_EQ(sweep_resize(img, 1.0), img);
  EXPECT_EQ(sweep_resize(img, 0.5).height(), 256);
  EXPECT_EQ(center_crop_box(512, 512, 192), (CropBox{160, 160, 192, 192}));
  expect_code(ErrorCode::CropExceedsImage, [&] { sweep_resize(img, 1.5); });
  expect_code(ErrorCode::InvalidArgument, [&] { sweep_resize(img, 0.0); });
}

TEST(Policies, ValidationRejectsBadParameters) {
  PretrainPolicy p;
  p.p_corrupt = 1.5;
  expect_code(ErrorCode::InvalidArgument, [&] { p.validate(); });
  CalibrationPolicy c;
  c.corruption.kernels = {3, 4, 7};
  expect_code(ErrorCode::InvalidArgument, [&] { c.validate(); });
  TestPolicy t;
  t.quality = {0, 50};
  expect_code(ErrorCode::InvalidArgument, [&] { t.validate(); });
}

TEST(ImageFiles, PngRoundTrip) {
  const auto dir = testutil::temp_dir("imgproc");
  const auto img = pattern(20, 30);
  write_png(img, dir / "a.png");
  EXPECT_EQ(read_image(dir / "a.png"), img);
  expect_code(ErrorCode::IoError, [&] { read_image(dir / "missing.png"); });
}
