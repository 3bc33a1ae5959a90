#include <vector>

#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "synthdet/eval.hpp"
#include "synthdet/imgproc.hpp"
#include "synthdet/model.hpp"
#include "synthdet/rng.hpp"
#include "synthdet/selfcon.hpp"

using namespace synthdet;

namespace {

torch::Tensor unit_views(std::int64_t n, std::int64_t d) {
  torch::manual_seed(1);
  return torch::nn::functional::normalize(torch::randn({n, 2, d}),
                                          torch::nn::functional::NormalizeFuncOptions().dim(-1));
}

std::vector<std::int64_t> alternating(std::int64_t n) {
  std::vector<std::int64_t> labels(n);
  for (std::int64_t i = 0; i < n; ++i) labels[i] = i % 2;
  return labels;
}

}  // namespace

static void BM_SelfConLoss(benchmark::State& state) {
  const auto n = state.range(0);
  const auto views = unit_views(n, 128);
  const auto labels = alternating(n);
  for (auto _ : state) benchmark::DoNotOptimize(selfcon::selfcon_loss(views, labels, 0.07).item<double>());
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_SelfConLoss)->Arg(32)->Arg(200)->Unit(benchmark::kMicrosecond);

static void BM_Auc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform();
    labels[i] = static_cast<int>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(eval::auc(scores, labels));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000)->Unit(benchmark::kMicrosecond);

static void BM_PretrainAugment(benchmark::State& state) {
  const imgproc::Image img(288, 304, 128);
  Rng rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(imgproc::pretrain_augment(img, rng));
}
BENCHMARK(BM_PretrainAugment)->Unit(benchmark::kMicrosecond);

static void BM_TestPerturb(benchmark::State& state) {
  const imgproc::Image img(288, 304, 128);
  Rng rng(6);
  for (auto _ : state) benchmark::DoNotOptimize(imgproc::test_perturb(img, rng));
}
BENCHMARK(BM_TestPerturb)->Unit(benchmark::kMicrosecond);

// One pretraining step of the small backbone on a batch of 32 at the given
// gradient-cache chunk size.
static void BM_CachedStep(benchmark::State& state) {
  torch::set_num_threads(1);
  model::ModelConfig cfg;
  cfg.backbone = model::backbone_preset("small");
  auto net = model::make_detector(cfg, 1);
  torch::manual_seed(2);
  const auto images = torch::randn({32, 3, cfg.pretrain_input, cfg.pretrain_input});
  const auto det = alternating(32);
  std::vector<std::int64_t> gen(32);
  for (std::int64_t i = 0; i < 32; ++i) gen[i] = i % 2 ? (i / 2) % 2 : selfcon::kRealLabel;
  for (auto _ : state)
    benchmark::DoNotOptimize(selfcon::cached_gradient_step(net, images, det, gen, {}, state.range(0)).total);
}
BENCHMARK(BM_CachedStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
