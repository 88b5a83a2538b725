#include <benchmark/benchmark.h>

#include "ciss/losses.hpp"
#include "ciss/model.hpp"
#include "ciss/protocol.hpp"
#include "ciss/synthdata.hpp"
#include "fixtures.hpp"

namespace ciss {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.mutable_data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor x = random_tensor({side, side, 16}, rng);
  const Tensor k = random_tensor({16, 3, 3, 16}, rng);
  const Tensor b = random_tensor({16}, rng);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(tape.conv2d(x, k, b));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(side * side));
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor x = random_tensor({side, side, 16}, rng, true);
  const Tensor k = random_tensor({16, 3, 3, 16}, rng, true);
  const Tensor b = random_tensor({16}, rng, true);
  for (auto _ : state) {
    Tape tape;
    tape.backward(tape.sum(tape.conv2d(x, k, b)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(side * side));
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32)->Arg(64);

void BM_Decompose(benchmark::State& state) {
  Rng rng(3);
  const std::vector<std::size_t> channels = {3, 16, 16};
  const std::vector<int> classes = {1, 2, 3, 4, 5};
  const ModelState model = make_initial_model(channels, classes, rng);
  const Tensor f = random_tensor({32 * 32, 16}, rng);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(decompose(tape, f, model.bank, classes));
  }
}
BENCHMARK(BM_Decompose);

void BM_ObjectiveForwardBackward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const testing::GradInstance g = testing::try_grad_instance(5, side, 16, 8);
  for (auto _ : state) {
    Tape tape;
    const ObjectiveTerms terms =
        objective(tape, g.model, g.batch, g.targets, g.classes, ObjectiveOptions{});
    tape.backward(terms.total);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(g.batch.size()));
}
BENCHMARK(BM_ObjectiveForwardBackward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
  Rng rng(6);
  const std::vector<std::size_t> channels = {3, 16, 16};
  const std::vector<int> classes = {1, 2, 3, 4, 5};
  const ModelState model = make_initial_model(channels, classes, rng);
  const testing::GradInstance g = testing::try_grad_instance(6, 32, 16, 1);
  const Tensor image = g.batch.front().image_tensor();
  for (auto _ : state) benchmark::DoNotOptimize(predict(model, image, 0.5));
}
BENCHMARK(BM_Predict)->Unit(benchmark::kMicrosecond);

void BM_GenerateDataset(benchmark::State& state) {
  DatasetParams params;
  for (auto _ : state) benchmark::DoNotOptimize(generate(params));
}
BENCHMARK(BM_GenerateDataset)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace ciss

BENCHMARK_MAIN();
