#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "synthdet/error.hpp"
#include "synthdet/model.hpp"
#include "test_util.hpp"

using namespace synthdet;
using namespace synthdet::model;
using testutil::expect_code;

namespace {

ModelConfig tiny_config(int input = 32) {
  ModelConfig cfg;
  cfg.backbone = backbone_preset("tiny");
  cfg.pretrain_input = input;
  return cfg;
}

// Finite stream over a fixed list of batches.
BatchStream stream_of(std::vector<torch::Tensor> batches) {
  auto shared = std::make_shared<std::vector<torch::Tensor>>(std::move(batches));
  auto index = std::make_shared<std::size_t>(0);
  return [shared, index]() -> std::optional<torch::Tensor> {
    if (*index >= shared->size()) return std::nullopt;
    return (*shared)[(*index)++];
  };
}

}  // namespace

TEST(DetectorNet, PretrainEmbeddingsAreUnitRowsOf128) {
  auto net = make_detector(tiny_config(96), 1);
  net->eval();
  const auto z = forward_pretrain(net, torch::randn({4, 3, 96, 96}));
  ASSERT_EQ(z.sizes(), (std::vector<std::int64_t>{4, 2, 128}));
  const auto norms = z.norm(2, -1);
  EXPECT_LE((norms - 1).abs().max().item<double>(), 1e-6);
}

TEST(DetectorNet, DuplicateImagesGiveIdenticalEmbeddingsInEvalMode) {
  auto net = make_detector(tiny_config(), 2);
  net->eval();
  const auto img = torch::randn({1, 3, 32, 32});
  const auto z = forward_pretrain(net, torch::cat({img, torch::randn({1, 3, 32, 32}), img}));
  EXPECT_TRUE(torch::equal(z[0], z[2]));
}

TEST(DetectorNet, ForwardContracts) {
  auto net = make_detector(tiny_config(), 3);
  expect_code(ErrorCode::ShapeMismatch, [&] { forward_pretrain(net, torch::randn({2, 3, 40, 40})); });
  expect_code(ErrorCode::ShapeMismatch, [&] { forward_pretrain(net, torch::randn({2, 1, 32, 32})); });
  to_calibrated(net);
  expect_code(ErrorCode::WrongMode, [&] { forward_pretrain(net, torch::randn({2, 3, 32, 32})); });
}

TEST(DetectorNet, StemKeepsFullResolution) {
  auto net = make_detector(tiny_config(96), 4);
  EXPECT_EQ(net->stem_forward(torch::randn({1, 3, 96, 96})).sizes(),
            (std::vector<std::int64_t>{1, 8, 96, 96}));
  // A standard stem (stride 2 plus pooling) would give 24 x 24.
  auto standard = tiny_config(96);
  standard.backbone.stem_stride = 2;
  standard.backbone.stem_pool = true;
  auto ref = make_detector(standard, 4);
  EXPECT_EQ(ref->stem_forward(torch::randn({1, 3, 96, 96})).size(2), 24);
}

TEST(DetectorNet, SubnetworkIsSmall) {
  for (const char* preset : {"tiny", "small", "resnet18"}) {
    ModelConfig cfg;
    cfg.backbone = backbone_preset(preset);
    auto net = make_detector(cfg, 0);
    const auto backbone = parameter_count(net->backbone_parameters());
    EXPECT_LT(parameter_count(*net->subnet), backbone / 10) << preset;
  }
}

TEST(ToCalibrated, PreservesBackboneAndAttachesHeads) {
  auto net = make_detector(tiny_config(), 5);
  const auto before = tensor_checksum(net->backbone_parameters());
  to_calibrated(net);
  EXPECT_EQ(tensor_checksum(net->backbone_parameters()), before);
  EXPECT_EQ(net->mode(), Mode::Calibrated);
  EXPECT_FALSE(net->subnet);
  const auto out = net->classify(torch::randn({3, 3, 64, 64}));
  EXPECT_EQ(out.detection.sizes(), (std::vector<std::int64_t>{3, 2}));
  EXPECT_EQ(out.model_id.size(1), 4);
  expect_code(ErrorCode::WrongMode, [&] { to_calibrated(net); });
}

TEST(RefreshNormStats, ParametersFrozenAndStatisticsAreStreamAverages) {
  auto net = make_detector(tiny_config(), 6);
  to_calibrated(net);
  net->eval();
  torch::manual_seed(1);
  const auto b1 = torch::randn({4, 3, 32, 32});
  const auto b2 = torch::randn({4, 3, 32, 32}) * 2 + 0.5;
  const auto params = tensor_checksum(net->parameters());

  auto stats = [&] {
    std::vector<torch::Tensor> out;
    for (auto& bn : net->residual_norms()) {
      out.push_back(bn->running_mean.clone());
      out.push_back(bn->running_var.clone());
    }
    return out;
  };
  refresh_norm_stats(net, stream_of({b1}));
  const auto s1 = stats();
  refresh_norm_stats(net, stream_of({b2}));
  const auto s2 = stats();
  refresh_norm_stats(net, stream_of({b1, b2}));
  const auto both = stats();
  refresh_norm_stats(net, stream_of({b1, b2}));
  const auto again = stats();

  EXPECT_EQ(tensor_checksum(net->parameters()), params);
  for (std::size_t i = 0; i < both.size(); ++i) {
    // Residual-block normalization runs on batch statistics, so each batch's
    // contribution is independent of the others: the cumulative result is
    // the plain average.
    EXPECT_TRUE(torch::allclose(both[i], (s1[i] + s2[i]) / 2, 1e-5, 1e-6)) << i;
    EXPECT_TRUE(torch::equal(both[i], again[i]));
  }
  EXPECT_FALSE(net->is_training());  // prior mode is restored
}

TEST(RefreshNormStats, ZeroStreamAndErrors) {
  auto net = make_detector(tiny_config(), 7);
  expect_code(ErrorCode::WrongMode, [&] { refresh_norm_stats(net, stream_of({})); });
  to_calibrated(net);
  expect_code(ErrorCode::EmptyStream, [&] { refresh_norm_stats(net, stream_of({})); });
  refresh_norm_stats(net, stream_of({torch::zeros({2, 3, 32, 32})}));
  for (auto& bn : net->residual_norms()) EXPECT_GE(bn->running_var.min().item<double>(), 0.0);
}

TEST(ModelConfig, JsonRoundTripAndFingerprint) {
  ModelConfig cfg;
  cfg.backbone = backbone_preset("resnet50");
  cfg.classifier_hidden = {64};
  const auto back = ModelConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(back.fingerprint(), cfg.fingerprint());
  auto other = cfg;
  other.embedding_dim = 64;
  EXPECT_NE(other.fingerprint(), cfg.fingerprint());
  EXPECT_EQ(back.backbone.feature_width(), 2048);
  expect_code(ErrorCode::ConfigError, [] { ModelConfig::from_json({{"embedding_dim", 0}}); });
  expect_code(ErrorCode::ConfigError, [] { backbone_preset("vgg"); });
}

TEST(Checkpoint, FileRoundTripIsLossless) {
  auto net = make_detector(tiny_config(), 8);
  auto ckpt = make_checkpoint(net);
  ckpt.extra["epoch"] = 3;
  ckpt.extra_tensors.push_back({"buf", torch::arange(5, torch::kInt64)});
  const auto path = testutil::temp_dir("ckpt") / "a.ckpt";
  save_checkpoint(ckpt, path);
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.extra.at("epoch"), 3);
  ASSERT_EQ(loaded.extra_tensors.size(), 1u);
  EXPECT_TRUE(torch::equal(loaded.extra_tensors[0].second, torch::arange(5, torch::kInt64)));
  auto restored = restore(loaded);
  const auto a = net->named_parameters();
  const auto b = restored->named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (const auto& item : a) EXPECT_TRUE(torch::equal(item.value(), b[item.key()])) << item.key();
  const auto ab = net->named_buffers();
  const auto bb = restored->named_buffers();
  for (const auto& item : ab) EXPECT_TRUE(torch::equal(item.value(), bb[item.key()])) << item.key();

  to_calibrated(restored);
  const auto cal_path = path.parent_path() / "b.ckpt";
  save_checkpoint(make_checkpoint(restored), cal_path);
  EXPECT_EQ(restore(load_checkpoint(cal_path))->mode(), Mode::Calibrated);
}

TEST(Checkpoint, MismatchesAreRejected) {
  auto net = make_detector(tiny_config(), 9);
  const auto path = testutil::temp_dir("ckpt-bad") / "a.ckpt";
  save_checkpoint(make_checkpoint(net), path);
  auto other = tiny_config();
  other.embedding_dim = 16;
  expect_code(ErrorCode::ConfigMismatch, [&] { load_checkpoint(path, other); });
  EXPECT_NO_THROW(load_checkpoint(path, tiny_config()));

  {
    std::ofstream out(path.parent_path() / "junk.ckpt", std::ios::binary);
    out << "NOTACKPT........";
  }
  expect_code(ErrorCode::ParseError, [&] { load_checkpoint(path.parent_path() / "junk.ckpt"); });
  expect_code(ErrorCode::IoError, [&] { load_checkpoint(path.parent_path() / "missing.ckpt"); });

  auto ckpt = make_checkpoint(net);
  ckpt.tensors.pop_back();
  expect_code(ErrorCode::ConfigMismatch, [&] { restore(ckpt); });
}

TEST(ToTensor, NormalizesAndChecksSizes) {
  std::vector<imgproc::Image> imgs{imgproc::Image(4, 4, 255), imgproc::Image(4, 4, 0)};
  const auto t = to_tensor(imgs);
  EXPECT_EQ(t.sizes(), (std::vector<std::int64_t>{2, 3, 4, 4}));
  EXPECT_NEAR(t[0][0][0][0].item<double>(), (1.0 - 0.485) / 0.229, 1e-5);
  imgs.push_back(imgproc::Image(5, 4));
  expect_code(ErrorCode::ShapeMismatch, [&] { to_tensor(imgs); });
}
