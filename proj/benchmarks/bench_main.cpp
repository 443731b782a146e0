#include <benchmark/benchmark.h>

#include <random>

#include "amrlab/amr.hpp"
#include "amrlab/attribution.hpp"
#include "amrlab/baselines.hpp"
#include "amrlab/data.hpp"
#include "amrlab/metrics.hpp"
#include "amrlab/model.hpp"

namespace {

using namespace amrlab;

Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<double> values(rows * cols);
  for (double& v : values) v = unit(rng);
  return Tensor({rows, cols}, std::move(values));
}

// Shapes of the default experiment: batch 64, two 16-wide modalities.
ModelConfig demo_model() {
  ModelConfig config;
  config.modality_dims = {16, 16};
  config.encoding_dim = 16;
  config.encoder_hidden = {32};
  config.classifier_hidden = {32};
  config.num_classes = 6;
  return config;
}

MultimodalBatch demo_batch(std::size_t size) {
  SyntheticConfig config;
  config.train_samples = size;
  config.val_samples = 1;
  const DatasetSplits data = generate_synthetic(config);
  return batches(data.train, size, 0).front();
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = random_matrix(n, n, rng);
  const Tensor b = random_matrix(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 128);

void BM_Forward(benchmark::State& state) {
  const MultimodalModel model = init_model(demo_model());
  const MultimodalBatch batch = demo_batch(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, batch.inputs).logits);
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(512);

void BM_NaiveStep(benchmark::State& state) {
  MultimodalModel model = init_model(demo_model());
  const MultimodalBatch batch = demo_batch(64);
  SgdMomentum optimizer(SgdConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(naive_step(model, batch, optimizer).task_loss);
}
BENCHMARK(BM_NaiveStep);

void BM_Attribute(benchmark::State& state) {
  const MultimodalModel model = init_model(demo_model());
  const MultimodalBatch batch = demo_batch(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(attribute(model, batch.inputs).batch_mean);
}
BENCHMARK(BM_Attribute)->Arg(64)->Arg(512);

// Double backpropagation through the attribution is the dominant extra
// cost of regularised training.
void BM_RegulariserStep(benchmark::State& state) {
  MultimodalModel model = init_model(demo_model());
  const MultimodalBatch batch = demo_batch(64);
  AmrConfig config;
  config.enabled = true;
  for (auto _ : state) benchmark::DoNotOptimize(amr_step(model, batch, config).loss);
}
BENCHMARK(BM_RegulariserStep);

void BM_Evaluate(benchmark::State& state) {
  SyntheticConfig config;
  config.val_samples = 600;
  const DatasetSplits data = generate_synthetic(config);
  const MultimodalModel model = init_model(demo_model());
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(model, data.val).accuracy);
}
BENCHMARK(BM_Evaluate);

}  // namespace

BENCHMARK_MAIN();
