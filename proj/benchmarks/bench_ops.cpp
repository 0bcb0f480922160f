#include <benchmark/benchmark.h>

#include "pathogan/network.hpp"
#include "pathogan/rng.hpp"
#include "pathogan/tape.hpp"

using namespace pathogan;

namespace {

Tensor<float> random_image(int n, int c, int h, int w, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({n, c, h, w});
  for (float& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int C = static_cast<int>(state.range(0));
  const int S = static_cast<int>(state.range(1));
  Rng rng(1);
  Parameter<float> w("w", {C, C, 3, 3}), b("b", {C});
  for (float& v : w.value.data) v = static_cast<float>(rng.normal(0, 0.02));
  Tensor<float> x = random_image(4, C, S, S, 2);
  for (auto _ : state) {
    Tape<float> tape;
    const int y = tape.conv2d(tape.leaf(x), tape.param(w), tape.param(b), 1);
    benchmark::DoNotOptimize(tape.value(y).data.data());
  }
}
BENCHMARK(BM_Conv2dForward)->Args({64, 16})->Args({64, 64})->Args({256, 16});

void BM_Conv2dTrainStep(benchmark::State& state) {
  const int C = static_cast<int>(state.range(0));
  const int S = static_cast<int>(state.range(1));
  Rng rng(1);
  Parameter<float> w("w", {C, C, 3, 3}), b("b", {C});
  for (float& v : w.value.data) v = static_cast<float>(rng.normal(0, 0.02));
  Tensor<float> x = random_image(4, C, S, S, 2);
  for (auto _ : state) {
    Tape<float> tape;
    const int p = tape.leaf(x, true);
    const int y = tape.conv2d(p, tape.param(w), tape.param(b), 1);
    const int loss = tape.mean_all(tape.square(y));
    tape.backward(loss);
    benchmark::DoNotOptimize(w.grad.data.data());
    w.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_Conv2dTrainStep)->Args({64, 16})->Args({64, 64})->Args({256, 16});

void BM_GeneratorForward(benchmark::State& state) {
  const std::map<std::string, int> syms = {{"z", 64}, {"i", 4}, {"r", 2}};
  const NetSpec spec = parse_netspec(
      "c7-16,d32,d64,R64,R64,R64,R64,R64,R64,R64,R64,R64,u32,u16,C7-r", syms);
  Network<float> net = build_network<float>(spec, Shape::image(1, 64, 64), 3);
  Tensor<float> x = random_image(4, 1, 64, 64, 4);
  for (auto _ : state) {
    Tape<float> tape;
    const int y = net.forward(tape, tape.leaf(x));
    benchmark::DoNotOptimize(tape.value(y).data.data());
  }
}
BENCHMARK(BM_GeneratorForward);

void BM_GeneratorTrainStep(benchmark::State& state) {
  const std::map<std::string, int> syms = {{"z", 64}, {"i", 4}, {"r", 2}};
  const NetSpec spec = parse_netspec(
      "c7-16,d32,d64,R64,R64,R64,R64,R64,R64,R64,R64,R64,u32,u16,C7-r", syms);
  Network<float> net = build_network<float>(spec, Shape::image(1, 64, 64), 3);
  Tensor<float> x = random_image(4, 1, 64, 64, 4);
  for (auto _ : state) {
    Tape<float> tape;
    const int y = net.forward(tape, tape.leaf(x, true));
    const int loss = tape.mean_all(tape.square(y));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(y).data.data());
    net.zero_grad();
  }
}
BENCHMARK(BM_GeneratorTrainStep);

}  // namespace

BENCHMARK_MAIN();
