#include <benchmark/benchmark.h>

#include "advlat/generator.hpp"
#include "advlat/nn.hpp"
#include "advlat/ops.hpp"

using namespace advlat;

namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  SeededRng rng(1);
  const Tensor a = sample_uniform({n, n}, -1.0, 1.0, rng), b = sample_uniform({n, n}, -1.0, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256);

void BM_Im2col(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  SeededRng rng(2);
  const Tensor x = sample_uniform({4, hw, hw}, -1.0, 1.0, rng);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(im2col(tape.constant(x), 3, 3, 1, 1).value());
  }
}
BENCHMARK(BM_Im2col)->Arg(8)->Arg(16)->Arg(32);

// forward plus backward through one convolution
void BM_ConvTrainStep(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  SeededRng rng(3);
  Conv2dLayer conv = Conv2dLayer::create("conv", 4, 8, 3, 1, 1, rng);
  const Tensor x = sample_uniform({4, hw, hw}, -1.0, 1.0, rng);
  for (auto _ : state) {
    Tape tape;
    Binding bind(tape, true);
    const Var loss = sum(square(conv.forward(bind, tape.constant(x))));
    benchmark::DoNotOptimize(tape.backward(loss));
  }
}
BENCHMARK(BM_ConvTrainStep)->Arg(8)->Arg(16)->Arg(32);

void BM_LstmTrainStep(benchmark::State& state) {
  const auto steps = static_cast<std::size_t>(state.range(0));
  SeededRng rng(4);
  LstmCell cell = LstmCell::create("lstm", 16, 32, rng);
  std::vector<Tensor> xs;
  for (std::size_t t = 0; t < steps; ++t) xs.push_back(sample_uniform({8, 16}, -1.0, 1.0, rng));
  for (auto _ : state) {
    Tape tape;
    Binding bind(tape, true);
    std::vector<Var> seq;
    for (const auto& x : xs) seq.push_back(tape.constant(x));
    const Var loss = sum(square(lstm_forward(cell, bind, seq).final_hidden));
    benchmark::DoNotOptimize(tape.backward(loss));
  }
}
BENCHMARK(BM_LstmTrainStep)->Arg(5)->Arg(20)->Arg(50);

struct VectorSetup {
  Dataset data;
  TargetModel target;
  std::unique_ptr<AttackProblem> problem;
};

VectorSetup& vector_setup() {
  static VectorSetup s = [] {
    BlobParams p;
    VectorSetup v{gen_blobs(p, 5), {}, nullptr};
    SeededRng rng(5);
    v.target = TargetModel::create({Arch::mlp, 32}, v.data.input_shape, p.classes, 0, rng);
    train_target(v.target, v.data, {10, 1e-2, 32, 5});
    return v;
  }();
  if (!s.problem) s.problem = std::make_unique<AttackProblem>(s.target, s.data, DomainAdapter::for_domain(Domain::vector));
  return s;
}

// one differentiable generator pass over a batch, with backward
void BM_GeneratorTrainStep(benchmark::State& state) {
  VectorSetup& s = vector_setup();
  GeneratorConfig c;
  SeededRng rng(6);
  const AttackGenerator gen = AttackGenerator::create(*s.problem, c, rng);
  auto ids = s.problem->examples(Split::train);
  ids.resize(static_cast<std::size_t>(state.range(0)));
  const AttackBatch batch = s.problem->make_batch(ids);
  const Tensor eps = sample_standard_normal({batch.encoder_rows(), c.latent_dim}, rng);
  for (auto _ : state) {
    Tape tape;
    Binding gb(tape, true), tb(tape, false);
    const AttackForward fw = attack_forward(gen, gb, tb, *s.problem, batch, eps);
    const ObjectiveTerms obj = hybrid_objective(fw.scores, batch.labels, fw.distance, fw.kl, c.lambda);
    benchmark::DoNotOptimize(tape.backward(obj.total));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GeneratorTrainStep)->Arg(32)->Arg(128);

// evaluation-time generation with resampling, examples per second
void BM_AttackExamples(benchmark::State& state) {
  VectorSetup& s = vector_setup();
  GeneratorConfig c;
  SeededRng rng(7);
  const AttackGenerator gen = AttackGenerator::create(*s.problem, c, rng);
  const auto ids = s.problem->examples(Split::test);
  const auto workers = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(attack_examples(gen, *s.problem, ids, 10, 0, workers));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ids.size()));
}
BENCHMARK(BM_AttackExamples)->Arg(1)->Arg(4)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
