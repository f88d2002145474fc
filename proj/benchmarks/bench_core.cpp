// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "changecap/change_extraction.hpp"
#include "changecap/decoder.hpp"
#include "changecap/metrics.hpp"
#include "changecap/ops.hpp"
#include "changecap/projector.hpp"

using namespace changecap;

namespace {

Tensor randn(const Shape &shape, std::uint64_t seed) { return create(shape, Init::normal(1.0, seed)); }

void BM_CeForward(benchmark::State &state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  const FeaturePair pair = FeaturePair::make(randn({l, 8}, 1), randn({l, 8}, 2));
  const CEParams params = CEParams::init(l, 8, 3);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ce_forward(pair, params));
}
BENCHMARK(BM_CeForward)->Arg(16)->Arg(64)->Arg(144);

void BM_DecoderStep(benchmark::State &state) {
  DecoderConfig c;
  c.vocab_size = 32;
  c.blocks = static_cast<std::size_t>(state.range(0));
  const DecoderParams params = DecoderParams::init(c, 4);
  for (const NamedTensor &p : params.named_parameters()) {
    Tensor t = p.tensor;
    t.set_requires_grad(true);
  }
  const ProjectedEmbedding vis{randn({4, 32}, 5)};
  const std::vector<std::int64_t> prompt{4, 5, 6, 7, 8, 9}, target{10, 11, 12, 13, 14, 15, 16};
  for (auto _ : state) {
    const Tensor loss = forward_loss(vis, prompt, target, params);
    backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_DecoderStep)->Arg(1)->Arg(2)->Arg(4);

void BM_CiderCorpus(benchmark::State &state) {
  const std::vector<std::string> captions{"a structure appears in the top left",
                                          "a structure disappears from the bottom right",
                                          "no change is observed", "a structure appears in the bottom left"};
  std::vector<EvalRecord> corpus;
  for (std::int64_t i = 0; i < state.range(0); ++i) {
    const auto k = static_cast<std::size_t>(i);
    corpus.push_back({std::to_string(i), tokenize(captions[k % 4]),
                      {tokenize(captions[(k + 1) % 4]), tokenize(captions[k % 4])}, {}});
  }
  for (auto _ : state) benchmark::DoNotOptimize(cider_d(corpus).mean);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CiderCorpus)->Arg(100)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
