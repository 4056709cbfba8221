// SPDX-License-Identifier: Apache-2.0
//
// Serial reference vs OpenMP kernels.

#include <benchmark/benchmark.h>

#include <random>

#include "gret/decode.hpp"
#include "gret/kernels.hpp"
#include "gret/model.hpp"
#include "gret/task.hpp"

namespace {

using gret::kernels::GemmArgs;

struct GemmData {
  std::vector<double> a, b, c;
  GemmArgs args;
  explicit GemmData(std::size_t n) : a(n * n), b(n * n), c(n * n) {
    std::mt19937_64 rng(n);
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto& v : a) v = d(rng);
    for (auto& v : b) v = d(rng);
    args = {gret::kernels::Trans::kNo, gret::kernels::Trans::kNo, n, n, n, a.data(), b.data(), c.data(), false};
  }
};

void BM_GemmSerial(benchmark::State& state) {
  GemmData g(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    gret::kernels::serial::gemm(g.args);
    benchmark::DoNotOptimize(g.c.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0) * state.range(0));
}

void BM_GemmParallel(benchmark::State& state) {
  GemmData g(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    gret::kernels::parallel::gemm(g.args);
    benchmark::DoNotOptimize(g.c.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0) * state.range(0));
}

BENCHMARK(BM_GemmSerial)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_GemmParallel)->Arg(32)->Arg(128)->Arg(256);

struct DecodeData {
  gret::GretModel model;
  std::vector<std::vector<int>> sources;
  DecodeData() : model(config()) {
    gret::task::TaskSpec spec;
    spec.test = 32;
    for (const auto& ex : gret::task::generate(spec, gret::task::Split::kTest)) sources.push_back(ex.source);
  }
  static gret::ModelConfig config() {
    auto c = gret::ModelConfig::desk();
    c.flags = gret::GretFlags::parse("all");
    return c;
  }
};

DecodeData& decode_data() {
  static DecodeData d;
  return d;
}

void BM_DecodeSerial(benchmark::State& state) {
  auto& d = decode_data();
  gret::decode::DecodeOptions opts;
  opts.beam = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(gret::decode::serial::decode_corpus(d.model, d.sources, opts));
}

void BM_DecodeParallel(benchmark::State& state) {
  auto& d = decode_data();
  gret::decode::DecodeOptions opts;
  opts.beam = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(gret::decode::decode_corpus(d.model, d.sources, opts));
}

BENCHMARK(BM_DecodeSerial)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DecodeParallel)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
