#include <benchmark/benchmark.h>

#include "compose/encoder.hpp"
#include "compose/matchers.hpp"
#include "compose/numeric.hpp"
#include "compose/slot_attention.hpp"
#include "compose/synth_bench.hpp"

using namespace compose;

namespace {

Matrix unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) m.set_row(i, random_unit_vector(d, rng));
  return m;
}

Episode random_episode(std::size_t d, std::size_t k, std::size_t way, std::size_t shot, std::size_t queries, Rng& rng) {
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.queries_per_class = queries;
  for (std::size_t c = 0; c < way; ++c) {
    for (std::size_t i = 0; i < shot; ++i) ep.support.push_back({unit_rows(k, d, rng), static_cast<int>(c)});
    for (std::size_t i = 0; i < queries; ++i) ep.query.push_back({unit_rows(k, d, rng), static_cast<int>(c)});
  }
  return ep;
}

void BM_Sinkhorn(benchmark::State& state) {
  Rng rng(1);
  const auto k = static_cast<std::size_t>(state.range(0));
  const Matrix s = match::cost_matrix(unit_rows(k, 32, rng), unit_rows(k, 32, rng));
  const double eps = static_cast<double>(state.range(1)) / 1000.0;
  for (auto _ : state) benchmark::DoNotOptimize(match::sinkhorn(s, eps, 1000, 1e-9));
}
BENCHMARK(BM_Sinkhorn)->Args({7, 50})->Args({7, 10})->Args({32, 50});

void BM_Hungarian(benchmark::State& state) {
  Rng rng(2);
  const auto k = static_cast<std::size_t>(state.range(0));
  const Matrix s = match::cost_matrix(unit_rows(k, 32, rng), unit_rows(k, 32, rng));
  for (auto _ : state) benchmark::DoNotOptimize(match::hungarian_assignment(s));
}
BENCHMARK(BM_Hungarian)->Arg(7)->Arg(32)->Arg(128);

void BM_SlotAttention(benchmark::State& state) {
  Rng rng(3);
  const slot::SlotAttentionParams p = slot::oracle_params(32, 10.0, 3, 0.1);
  slot::PatchFeatures f;
  f.tokens = unit_rows(static_cast<std::size_t>(state.range(0)), 32, rng);
  for (auto _ : state) benchmark::DoNotOptimize(slot::run_slot_attention(p, f, 7, rng));
}
BENCHMARK(BM_SlotAttention)->Arg(16)->Arg(64)->Arg(256);

void BM_EncoderGradients(benchmark::State& state) {
  Rng rng(4);
  const enc::EncoderParams p = enc::init_encoder(32, 64, 10.0, rng);
  const Episode ep = random_episode(32, 7, 5, 5, 5, rng);
  enc::ObjectiveConfig obj;
  obj.ct_weight = static_cast<double>(state.range(0)) / 10.0;
  for (auto _ : state) benchmark::DoNotOptimize(enc::encoder_gradients(p, ep, obj));
}
BENCHMARK(BM_EncoderGradients)->Arg(0)->Arg(5);

void BM_ClassifyEpisode(benchmark::State& state) {
  Rng rng(5);
  const enc::EncoderParams p = enc::init_encoder(32, 64, 10.0, rng);
  const Episode ep = random_episode(32, 7, 5, 5, 5, rng);
  match::MatcherConfig cfg;
  cfg.kind = static_cast<match::MatcherKind>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(match::classify_episode(ep, p, cfg));
}
BENCHMARK(BM_ClassifyEpisode)->DenseRange(0, 4);

void BM_SampleEpisode(benchmark::State& state) {
  const bench::Benchmark b = bench::make_benchmark(bench::GeometryConfig{}, 6);
  Rng rng(6);
  for (auto _ : state)
    benchmark::DoNotOptimize(bench::sample_episode(b.splits.train, 5, 5, 5, b.backbone, b.render, rng));
}
BENCHMARK(BM_SampleEpisode);

}  // namespace

BENCHMARK_MAIN();
