// Decoder cost versus the downsampling factor on the densest fixture scene,
// plus the full-resolution loss evaluation it competes with during training.

#include <benchmark/benchmark.h>

#include "hle/decoder.hpp"
#include "hle/embed.hpp"
#include "hle/synth.hpp"
#include "hle/trainer.hpp"

namespace {

struct DenseFixture {
  hle::Scene scene;
  hle::PixelFields fields;
  hle::SemanticState state;
};

const DenseFixture& dense_fixture() {
  static const DenseFixture fixture = [] {
    DenseFixture f;
    for (const auto& [name, spec] : hle::standard_suite())
      if (name == "dense") f.scene = hle::generate(spec);
    auto [fields, state] =
        hle::ideal_fields(f.scene.labels, f.scene.instances, f.scene.catalog);
    f.fields = std::move(fields);
    f.state = std::move(state);
    return f;
  }();
  return fixture;
}

void BM_decode_downsampled(benchmark::State& state) {
  const DenseFixture& f = dense_fixture();
  hle::DecoderConfig config;
  config.downsample_factor = static_cast<int>(state.range(0));
  for (auto _ : state) {
    const hle::PanopticMap p =
        hle::decode_downsampled(f.fields, f.state, f.scene.catalog, config);
    benchmark::DoNotOptimize(p.data.data());
  }
}
BENCHMARK(BM_decode_downsampled)->Arg(1)->Arg(2)->Arg(4)->Arg(8);

void BM_total_loss(benchmark::State& state) {
  const DenseFixture& f = dense_fixture();
  const hle::EmbeddingLayout layout =
      hle::EmbeddingLayout::full(f.fields.e.channels);
  const hle::LossConfig config;
  for (auto _ : state) {
    const hle::TotalLossResult r =
        hle::total_loss(f.fields, f.scene.labels, f.scene.instances, f.state,
                        f.scene.catalog, layout, config);
    benchmark::DoNotOptimize(r.report.total);
  }
}
BENCHMARK(BM_total_loss);

}  // namespace

BENCHMARK_MAIN();
