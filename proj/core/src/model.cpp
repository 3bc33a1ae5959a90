#include "synthdet/model.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "synthdet/error.hpp"
#include "synthdet/rng.hpp"

namespace synthdet::model {

namespace {

namespace nn = torch::nn;

nn::Conv2d conv(int in, int out, int kernel, int stride) {
  return nn::Conv2d(
      nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false));
}

class BasicBlockImpl : public nn::Module {
 public:
  BasicBlockImpl(int in, int width, int stride) {
    conv1 = register_module("conv1", conv(in, width, 3, stride));
    bn1 = register_module("bn1", nn::BatchNorm2d(width));
    conv2 = register_module("conv2", conv(width, width, 3, 1));
    bn2 = register_module("bn2", nn::BatchNorm2d(width));
    if (stride != 1 || in != width)
      downsample = register_module(
          "downsample", nn::Sequential(conv(in, width, 1, stride), nn::BatchNorm2d(width)));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = torch::relu(bn1(conv1(x)));
    y = bn2(conv2(y));
    return torch::relu(y + (downsample ? downsample->forward(x) : x));
  }

  nn::Conv2d conv1{nullptr}, conv2{nullptr};
  nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
  nn::Sequential downsample{nullptr};
};
TORCH_MODULE(BasicBlock);

class BottleneckImpl : public nn::Module {
 public:
  BottleneckImpl(int in, int width, int stride) {
    const int out = width * 4;
    conv1 = register_module("conv1", conv(in, width, 1, 1));
    bn1 = register_module("bn1", nn::BatchNorm2d(width));
    conv2 = register_module("conv2", conv(width, width, 3, stride));
    bn2 = register_module("bn2", nn::BatchNorm2d(width));
    conv3 = register_module("conv3", conv(width, out, 1, 1));
    bn3 = register_module("bn3", nn::BatchNorm2d(out));
    if (stride != 1 || in != out)
      downsample = register_module(
          "downsample", nn::Sequential(conv(in, out, 1, stride), nn::BatchNorm2d(out)));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = torch::relu(bn1(conv1(x)));
    y = torch::relu(bn2(conv2(y)));
    y = bn3(conv3(y));
    return torch::relu(y + (downsample ? downsample->forward(x) : x));
  }

  nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

nn::Sequential projection(int in, int out) {
  return nn::Sequential(nn::Linear(in, in), nn::ReLU(), nn::Linear(in, out));
}

std::vector<nn::BatchNorm2d> collect_norms(const nn::Module& m) {
  std::vector<nn::BatchNorm2d> out;
  for (const auto& child : m.modules(/*include_self=*/true))
    if (auto bn = std::dynamic_pointer_cast<nn::BatchNorm2dImpl>(child))
      out.emplace_back(bn);
  return out;
}

void append_params(std::vector<torch::Tensor>& out, const nn::Module& m) {
  for (const auto& p : m.parameters()) out.push_back(p);
}

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    default: fail(ErrorCode::InvalidArgument, "unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  if (s == "int64") return torch::kInt64;
  fail(ErrorCode::ParseError, "unknown tensor dtype '" + s + "'");
}

constexpr char kMagic[8] = {'I', 'M', 'G', 'N', 'C', 'K', 'P', 'T'};

}  // namespace

std::string_view to_string(Mode m) { return m == Mode::Pretrain ? "pretrain" : "calibrated"; }

BackboneConfig backbone_preset(std::string_view name) {
  BackboneConfig b;
  b.preset = std::string(name);
  if (name == "tiny") {
    b.layers = {1, 1, 1, 1};
    b.widths = {8, 16, 32, 64};
    b.stem_width = 8;
    b.stem_kernel = 3;
  } else if (name == "small") {
    b.layers = {1, 1, 1, 1};
    b.widths = {16, 32, 64, 128};
    b.stem_width = 16;
    b.stem_kernel = 3;
  } else if (name == "resnet18") {
    b.layers = {2, 2, 2, 2};
    b.widths = {64, 128, 256, 512};
    b.stem_width = 64;
    b.stem_kernel = 7;
  } else if (name == "resnet50") {
    b.block = BlockKind::Bottleneck;
    b.layers = {3, 4, 6, 3};
    b.widths = {64, 128, 256, 512};
    b.stem_width = 64;
    b.stem_kernel = 7;
  } else {
    fail(ErrorCode::ConfigError, "unknown backbone preset '" + std::string(name) + "'");
  }
  return b;
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"backbone",
       {{"preset", backbone.preset},
        {"block", backbone.block == BlockKind::Basic ? "basic" : "bottleneck"},
        {"layers", backbone.layers},
        {"widths", backbone.widths},
        {"stem_width", backbone.stem_width},
        {"stem_kernel", backbone.stem_kernel},
        {"stem_stride", backbone.stem_stride},
        {"stem_pool", backbone.stem_pool}}},
      {"subnet_stage", subnet_stage},
      {"embedding_dim", embedding_dim},
      {"classifier_hidden", classifier_hidden},
      {"model_id_classes", model_id_classes},
      {"pretrain_input", pretrain_input},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    if (j.contains("backbone")) {
      const auto& b = j.at("backbone");
      c.backbone = backbone_preset(b.value("preset", std::string("tiny")));
      if (b.contains("block"))
        c.backbone.block = b.at("block") == "bottleneck" ? BlockKind::Bottleneck : BlockKind::Basic;
      if (b.contains("layers")) c.backbone.layers = b.at("layers").get<std::array<int, 4>>();
      if (b.contains("widths")) c.backbone.widths = b.at("widths").get<std::array<int, 4>>();
      c.backbone.stem_width = b.value("stem_width", c.backbone.stem_width);
      c.backbone.stem_kernel = b.value("stem_kernel", c.backbone.stem_kernel);
      c.backbone.stem_stride = b.value("stem_stride", c.backbone.stem_stride);
      c.backbone.stem_pool = b.value("stem_pool", c.backbone.stem_pool);
    }
    c.subnet_stage = j.value("subnet_stage", c.subnet_stage);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    if (j.contains("classifier_hidden"))
      c.classifier_hidden = j.at("classifier_hidden").get<std::vector<int>>();
    c.model_id_classes = j.value("model_id_classes", c.model_id_classes);
    c.pretrain_input = j.value("pretrain_input", c.pretrain_input);
    if (c.subnet_stage < 1 || c.subnet_stage > 3)
      fail(ErrorCode::ConfigError, "subnet_stage must be 1, 2 or 3");
    if (c.embedding_dim < 1 || c.model_id_classes < 1 || c.pretrain_input < 8)
      fail(ErrorCode::ConfigError, "invalid model dimensions");
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("invalid model config: ") + e.what());
  }
}

std::string ModelConfig::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(to_json().dump())));
  return buf;
}

DetectorNetImpl::DetectorNetImpl(const ModelConfig& config) : config_(config) {
  const auto& b = config_.backbone;
  nn::Sequential s(conv(3, b.stem_width, b.stem_kernel, b.stem_stride),
                   nn::BatchNorm2d(b.stem_width), nn::ReLU());
  if (b.stem_pool) s->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
  stem = register_module("stem", s);

  int in = b.stem_width;
  for (int i = 0; i < 4; ++i) {
    nn::Sequential stage;
    for (int k = 0; k < b.layers[i]; ++k) {
      const int stride = (k == 0 && i > 0) ? 2 : 1;
      if (b.block == BlockKind::Basic) {
        stage->push_back(BasicBlock(in, b.widths[i], stride));
      } else {
        stage->push_back(Bottleneck(in, b.widths[i], stride));
      }
      in = b.stage_width(i);
    }
    stages[i] = register_module("layer" + std::to_string(i + 1), stage);
  }

  const int sub_in = b.stage_width(config_.subnet_stage - 1);
  const int sub_width = std::max(sub_in / 2, 1);
  subnet = register_module(
      "subnet", nn::Sequential(conv(sub_in, sub_width, 1, 1), nn::BatchNorm2d(sub_width),
                               nn::ReLU()));
  head_sub = register_module("head_sub", projection(sub_width, config_.embedding_dim));
  head_main = register_module("head_main", projection(b.feature_width(), config_.embedding_dim));

  for (auto& m : modules(false)) {
    if (auto c = std::dynamic_pointer_cast<nn::Conv2dImpl>(m)) {
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
    } else if (auto bn = std::dynamic_pointer_cast<nn::BatchNorm2dImpl>(m)) {
      nn::init::ones_(bn->weight);
      nn::init::zeros_(bn->bias);
    }
  }
}

torch::Tensor DetectorNetImpl::stem_forward(const torch::Tensor& x) { return stem->forward(x); }

torch::Tensor DetectorNetImpl::run_stages(torch::Tensor x, torch::Tensor* intermediate) {
  x = stem->forward(x);
  for (int i = 0; i < 4; ++i) {
    x = stages[i]->forward(x);
    if (intermediate && i + 1 == config_.subnet_stage) *intermediate = x;
  }
  return x;
}

torch::Tensor DetectorNetImpl::features(const torch::Tensor& x) {
  return run_stages(x, nullptr).mean({2, 3});
}

torch::Tensor DetectorNetImpl::embed(const torch::Tensor& x) {
  if (mode_ != Mode::Pretrain) fail(ErrorCode::WrongMode, "projection heads are detached");
  torch::Tensor mid;
  const auto pooled = run_stages(x, &mid).mean({2, 3});
  const auto sub = subnet->forward(mid).mean({2, 3});
  namespace F = torch::nn::functional;
  const auto opts = F::NormalizeFuncOptions().p(2).dim(1);
  const auto z_sub = F::normalize(head_sub->forward(sub), opts);
  const auto z_main = F::normalize(head_main->forward(pooled), opts);
  return torch::stack({z_sub, z_main}, 1);
}

ClassifierOutput DetectorNetImpl::classify_features(const torch::Tensor& pooled) {
  if (mode_ != Mode::Calibrated) fail(ErrorCode::WrongMode, "classifier is not attached");
  const auto h = classifier_trunk->forward(pooled);
  return {detection_out->forward(h), model_id_out->forward(h)};
}

ClassifierOutput DetectorNetImpl::classify(const torch::Tensor& x) {
  return classify_features(features(x));
}

void DetectorNetImpl::to_calibrated() {
  if (mode_ != Mode::Pretrain) fail(ErrorCode::WrongMode, "network is already calibrated");
  unregister_module("subnet");
  unregister_module("head_sub");
  unregister_module("head_main");
  subnet = nullptr;
  head_sub = nullptr;
  head_main = nullptr;

  nn::Sequential trunk;
  int in = config_.backbone.feature_width();
  for (int width : config_.classifier_hidden) {
    trunk->push_back(nn::Linear(in, width));
    trunk->push_back(nn::ReLU());
    in = width;
  }
  classifier_trunk = register_module("classifier", trunk);
  detection_out = register_module("detection_out", nn::Linear(in, 2));
  model_id_out = register_module("model_id_out", nn::Linear(in, config_.model_id_classes));
  mode_ = Mode::Calibrated;
}

std::vector<nn::BatchNorm2d> DetectorNetImpl::residual_norms() const {
  std::vector<nn::BatchNorm2d> out;
  for (const auto& stage : stages) {
    auto norms = collect_norms(*stage);
    out.insert(out.end(), norms.begin(), norms.end());
  }
  return out;
}

std::vector<nn::BatchNorm2d> DetectorNetImpl::all_norms() const { return collect_norms(*this); }

std::vector<torch::Tensor> DetectorNetImpl::backbone_parameters() const {
  std::vector<torch::Tensor> out;
  append_params(out, *stem);
  for (const auto& stage : stages) append_params(out, *stage);
  return out;
}

std::vector<torch::Tensor> DetectorNetImpl::classifier_parameters() const {
  std::vector<torch::Tensor> out;
  if (mode_ != Mode::Calibrated) return out;
  append_params(out, *classifier_trunk);
  append_params(out, *detection_out);
  append_params(out, *model_id_out);
  return out;
}

void DetectorNetImpl::set_backbone_trainable(bool trainable) {
  for (auto& p : backbone_parameters()) p.set_requires_grad(trainable);
}

DetectorNet make_detector(const ModelConfig& config, std::uint64_t seed) {
  torch::manual_seed(seed);
  return DetectorNet(config);
}

torch::Tensor forward_pretrain(DetectorNet& net, const torch::Tensor& images) {
  if (net->mode() != Mode::Pretrain) fail(ErrorCode::WrongMode, "forward_pretrain needs pretrain mode");
  const int s = net->config().pretrain_input;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != s || images.size(3) != s)
    fail(ErrorCode::ShapeMismatch, "expected a [N, 3, " + std::to_string(s) + ", " +
                                       std::to_string(s) + "] batch");
  return net->embed(images);
}

DetectorNet& to_calibrated(DetectorNet& net) {
  net->to_calibrated();
  return net;
}

void refresh_norm_stats(DetectorNet& net, const BatchStream& stream) {
  if (net->mode() != Mode::Calibrated)
    fail(ErrorCode::WrongMode, "normalization refresh runs on a calibrated network");
  auto first = stream();
  if (!first) fail(ErrorCode::EmptyStream, "normalization refresh needs at least one batch");

  auto norms = net->residual_norms();
  std::vector<std::optional<double>> momenta;
  for (auto& bn : norms) {
    momenta.push_back(bn->options.momentum());
    bn->reset_running_stats();
    bn->options.momentum(std::nullopt);  // cumulative average over batches
  }
  const bool was_training = net->is_training();
  net->eval();
  for (auto& bn : norms) bn->train();
  {
    torch::NoGradGuard no_grad;
    for (auto batch = std::move(first); batch; batch = stream()) net->features(*batch);
  }
  for (std::size_t i = 0; i < norms.size(); ++i) norms[i]->options.momentum(momenta[i]);
  net->train(was_training);
}

std::int64_t parameter_count(const torch::nn::Module& module) {
  const auto params = module.parameters();
  return parameter_count(params);
}

std::int64_t parameter_count(std::span<const torch::Tensor> params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

std::uint64_t tensor_checksum(std::span<const torch::Tensor> tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tensors) {
    const auto c = t.detach().contiguous().cpu();
    const std::string_view bytes(static_cast<const char*>(c.data_ptr()), c.nbytes());
    h = fnv1a64(bytes, h);
  }
  return h;
}

torch::Tensor to_tensor(std::span<const imgproc::Image> images) {
  if (images.empty()) fail(ErrorCode::InvalidArgument, "empty image batch");
  const int h = images.front().height();
  const int w = images.front().width();
  auto out = torch::empty({static_cast<std::int64_t>(images.size()), 3, h, w});
  auto acc = out.accessor<float, 4>();
  static constexpr std::array<float, 3> kMean{0.485f, 0.456f, 0.406f};
  static constexpr std::array<float, 3> kStd{0.229f, 0.224f, 0.225f};
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = images[n];
    if (img.height() != h || img.width() != w)
      fail(ErrorCode::ShapeMismatch, "images in a batch must share one size");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          acc[n][c][y][x] = (img.at(y, x, c) / 255.0f - kMean[c]) / kStd[c];
  }
  return out;
}

DetectorCheckpoint make_checkpoint(const DetectorNet& net) {
  DetectorCheckpoint ckpt;
  ckpt.config = net->config();
  ckpt.mode = net->mode();
  for (const auto& item : net->named_parameters(true))
    ckpt.tensors.emplace_back(item.key(), item.value().detach().clone());
  for (const auto& item : net->named_buffers(true))
    ckpt.tensors.emplace_back(item.key(), item.value().detach().clone());
  return ckpt;
}

DetectorNet restore(const DetectorCheckpoint& ckpt, const ModelConfig* expected) {
  if (expected && expected->fingerprint() != ckpt.config.fingerprint())
    fail(ErrorCode::ConfigMismatch, "checkpoint config fingerprint " + ckpt.config.fingerprint() +
                                        " does not match expected " + expected->fingerprint());
  DetectorNet net(ckpt.config);
  if (ckpt.mode == Mode::Calibrated) net->to_calibrated();
  std::map<std::string, torch::Tensor> targets;
  for (const auto& item : net->named_parameters(true)) targets[item.key()] = item.value();
  for (const auto& item : net->named_buffers(true)) targets[item.key()] = item.value();
  if (targets.size() != ckpt.tensors.size())
    fail(ErrorCode::ConfigMismatch, "checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                                        " tensors, network expects " +
                                        std::to_string(targets.size()));
  torch::NoGradGuard no_grad;
  for (const auto& [name, value] : ckpt.tensors) {
    const auto it = targets.find(name);
    if (it == targets.end())
      fail(ErrorCode::ConfigMismatch, "unexpected checkpoint tensor '" + name + "'");
    if (!it->second.sizes().equals(value.sizes()))
      fail(ErrorCode::ConfigMismatch, "shape mismatch for tensor '" + name + "'");
    it->second.copy_(value);
  }
  return net;
}

void save_checkpoint(const DetectorCheckpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json index = nlohmann::json::array();
  std::vector<torch::Tensor> blobs;
  std::uint64_t offset = 0;
  auto add = [&](const std::string& name, const torch::Tensor& t, bool extra) {
    auto c = t.detach().contiguous().cpu();
    index.push_back({{"name", name},
                     {"extra", extra},
                     {"dtype", dtype_name(c.scalar_type())},
                     {"shape", c.sizes().vec()},
                     {"offset", offset},
                     {"nbytes", c.nbytes()}});
    offset += c.nbytes();
    blobs.push_back(std::move(c));
  };
  for (const auto& [name, t] : ckpt.tensors) add(name, t, false);
  for (const auto& [name, t] : ckpt.extra_tensors) add(name, t, true);

  const nlohmann::json header = {
      {"format_version", DetectorCheckpoint::kFormatVersion},
      {"config_fingerprint", ckpt.config.fingerprint()},
      {"mode", to_string(ckpt.mode)},
      {"config", ckpt.config.to_json()},
      {"extra", ckpt.extra},
      {"tensors", index},
  };
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& b : blobs)
    out.write(static_cast<const char*>(b.data_ptr()), static_cast<std::streamsize>(b.nbytes()));
  if (!out) fail(ErrorCode::IoError, "failed writing " + path.string());
}

DetectorCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  char magic[sizeof kMagic];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0 || len > (1ULL << 30))
    fail(ErrorCode::ParseError, "not a detector checkpoint: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorCode::ParseError, "truncated checkpoint header");

  DetectorCheckpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    if (header.at("format_version").get<int>() != DetectorCheckpoint::kFormatVersion)
      fail(ErrorCode::ParseError, "unsupported checkpoint format version");
    ckpt.config = ModelConfig::from_json(header.at("config"));
    if (ckpt.config.fingerprint() != header.at("config_fingerprint").get<std::string>())
      fail(ErrorCode::ConfigMismatch, "checkpoint header fingerprint does not match its config");
    ckpt.mode = header.at("mode") == "calibrated" ? Mode::Calibrated : Mode::Pretrain;
    ckpt.extra = header.value("extra", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
      const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
      auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype"))));
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (nbytes != t.nbytes()) fail(ErrorCode::ParseError, "tensor size mismatch in checkpoint");
      in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
      if (!in) fail(ErrorCode::ParseError, "truncated checkpoint blob");
      auto& dest = entry.at("extra").get<bool>() ? ckpt.extra_tensors : ckpt.tensors;
      dest.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("bad checkpoint header: ") + e.what());
  }
  return ckpt;
}

DetectorCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto ckpt = load_checkpoint(path);
  if (ckpt.config.fingerprint() != expected.fingerprint())
    fail(ErrorCode::ConfigMismatch, "checkpoint config fingerprint " + ckpt.config.fingerprint() +
                                        " does not match expected " + expected.fingerprint());
  return ckpt;
}

}  // namespace synthdet::model
