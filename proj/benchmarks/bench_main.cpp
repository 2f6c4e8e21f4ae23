#include <benchmark/benchmark.h>

#include "qamoe/degradation.hpp"
#include "qamoe/evaluation.hpp"
#include "qamoe/model.hpp"
#include "qamoe/synthdata.hpp"
#include "qamoe/training.hpp"

using namespace qamoe;

namespace {

DatasetSpec bench_spec() {
  DatasetSpec spec;
  spec.n_train = 200;
  spec.n_val = 50;
  return spec;
}

// Untrained parameters; cost does not depend on the weights.
struct Fixture {
  DatasetSpec spec = bench_spec();
  Dataset data = generate(spec);
  ReferenceStats stats = compute_reference_stats(data.train());
  Checkpoint checkpoint;

  Fixture() {
    checkpoint.config = ModelConfig::for_dataset(spec);
    checkpoint.params = init_params(checkpoint.config, SeededRng(1111).split("init"));
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_ForwardEval(benchmark::State& state) {
  const Fixture& f = fixture();
  const Sample& s = f.data.train()[0];
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(s, f.checkpoint.params, f.checkpoint.config));
  }
}
BENCHMARK(BM_ForwardEval);

void BM_ForwardBackward(benchmark::State& state) {
  const Fixture& f = fixture();
  const Sample& s = f.data.train()[0];
  SeededRng rng(7);
  ForwardOptions opts{.training = true, .dropout = 0.1, .rng = &rng};
  for (auto _ : state) {
    const ForwardTrace t = forward(s, f.checkpoint.params, f.checkpoint.config, opts);
    benchmark::DoNotOptimize(backward(t, f.checkpoint.params, f.checkpoint.config, s.label));
  }
}
BENCHMARK(BM_ForwardBackward);

void BM_DegradeSample(benchmark::State& state) {
  const Fixture& f = fixture();
  const Sample& s = f.data.train()[0];
  const DegradationSpec spec = DegradationSpec::cell(0.5, 0.3, 1);
  SeededRng rng(9);
  for (auto _ : state) benchmark::DoNotOptimize(degrade_sample(s, spec, f.stats, rng));
}
BENCHMARK(BM_DegradeSample);

void BM_GridCell(benchmark::State& state) {
  const Fixture& f = fixture();
  const DegradationSpec spec = DegradationSpec::cell(0.4, 0.4, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate(f.checkpoint, f.data.test(), spec, f.stats));
  }
}
BENCHMARK(BM_GridCell)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
