#include <benchmark/benchmark.h>

#include <random>

#include "bicnn/model.hpp"
#include "bicnn/synthetic.hpp"
#include "bicnn/tensor.hpp"
#include "bicnn/text.hpp"
#include "bicnn/training.hpp"

using namespace bicnn;

namespace {

ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(ad::shape_size(shape));
  for (auto& x : v) x = u(rng);
  return {std::move(shape), std::move(v)};
}

nn::ModelConfig default_config(std::size_t n) {
  nn::ModelConfig c;
  c.num_classes = 5;
  c.sequence_length = n;
  return c;
}

text::IndexedSequence sequence(std::size_t words, std::size_t n, std::size_t vocab) {
  std::vector<std::string> tokens;
  text::Vocabulary v;
  for (std::size_t i = 0; i < vocab; ++i) v.add("w" + std::to_string(i));
  for (std::size_t i = 0; i < words; ++i) tokens.push_back("w" + std::to_string((i * 7) % vocab));
  return text::index_and_pad(tokens, v, n);
}

}  // namespace

static void BM_ConvBank(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const auto x = random_tensor({n, 128}, rng);
  const auto w = random_tensor({120, 4, 128}, rng);
  const auto b = random_tensor({120, n - 3}, rng);
  for (auto _ : state) {
    ad::Graph g;
    benchmark::DoNotOptimize(ad::conv_bank(g, x, w, b).values().data());
  }
}
BENCHMARK(BM_ConvBank)->Arg(32)->Arg(64)->Arg(128);

static void BM_ForwardInference(benchmark::State& state) {
  const std::size_t n = 64;
  const auto model = nn::BiCnnModel::init(default_config(n), 2000, 1);
  const auto seq = sequence(30, n, 2000);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict_proba(seq));
}
BENCHMARK(BM_ForwardInference);

static void BM_ForwardBackward(benchmark::State& state) {
  const std::size_t n = 64;
  const auto model = nn::BiCnnModel::init(default_config(n), 2000, 1);
  const auto seq = sequence(30, n, 2000);
  const auto target = ad::Tensor({1, 5}, {0, 0, 1, 0, 0});
  nn::Rng rng(2);
  for (auto _ : state) {
    ad::Graph g;
    const std::vector<ad::Tensor> rows{model.forward(g, seq, nn::Mode::train, rng)};
    const auto loss = ad::cross_entropy_loss(g, ad::stack_rows(g, rows), target);
    g.backward(loss);
  }
}
BENCHMARK(BM_ForwardBackward);

static void BM_Tokenize(benchmark::State& state) {
  const auto reports = synth::generate(synth::preset("mrd-like").scaled(200));
  std::size_t bytes = 0;
  for (const auto& r : reports) bytes += r.raw_text.size();
  for (auto _ : state) {
    for (const auto& r : reports) benchmark::DoNotOptimize(text::report_tokens(r));
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes));
}
BENCHMARK(BM_Tokenize);

static void BM_Generate(benchmark::State& state) {
  const auto spec = synth::preset("crrd-like");
  for (auto _ : state) benchmark::DoNotOptimize(synth::generate(spec));
}
BENCHMARK(BM_Generate)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
