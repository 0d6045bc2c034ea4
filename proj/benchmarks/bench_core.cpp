#include <benchmark/benchmark.h>

#include "hcb/defenses/mad.hpp"
#include "hcb/model.hpp"
#include "hcb/train.hpp"
#include "hcb/trigger.hpp"

namespace {

using namespace hcb;

void BM_Cnn3x2Forward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  ModelSpec spec;
  spec.arch = ArchId::cnn3x2;
  spec.height = 28;
  spec.width = 28;
  spec.channels = 1;
  spec.num_classes = 10;
  nn::Network<float> net = make_network<float>(spec, 1);
  nn::Mat<float> x(28 * 28, batch);
  Rng rng(2);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    x.data()[i] = static_cast<float>(rng.unit());
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.forward(x));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Cnn3x2Forward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Cnn3x2TrainStep(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  ModelSpec spec;
  spec.arch = ArchId::cnn3x2;
  spec.height = 28;
  spec.width = 28;
  spec.channels = 1;
  spec.num_classes = 10;
  nn::Network<float> net = make_network<float>(spec, 1);
  nn::Mat<float> x(28 * 28, batch);
  Rng rng(2);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    x.data()[i] = static_cast<float>(rng.unit());
  std::vector<int> y(batch);
  for (int i = 0; i < batch; ++i) y[i] = static_cast<int>(rng.below(10));
  for (auto _ : state) {
    const nn::Mat<float>& logits = net.forward(x);
    nn::CeResult<float> ce = nn::softmax_cross_entropy(logits, y);
    net.zero_grads();
    net.backward(ce.dlogits);
    benchmark::DoNotOptimize(ce.loss_sum);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Cnn3x2TrainStep)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ApplyTrigger(benchmark::State& state) {
  Image img(28, 28, 1, 0.3f);
  TriggerSpec trig = TriggerSpec::scaled_for(28, 28);
  trig.opacity = 0.7;
  for (auto _ : state) {
    Image out = apply_trigger(img, trig);
    benchmark::DoNotOptimize(out.pixels.data());
  }
}
BENCHMARK(BM_ApplyTrigger);

void BM_MadIndices(benchmark::State& state) {
  Rng rng(5);
  std::vector<double> values(static_cast<size_t>(state.range(0)));
  for (double& v : values) v = rng.range(0.0, 100.0);
  values.back() = 1000.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mad_anomaly_indices(values));
  }
}
BENCHMARK(BM_MadIndices)->Arg(10)->Arg(1000);

void BM_SynthShapes(benchmark::State& state) {
  for (auto _ : state) {
    Dataset ds = synth_shapes_dataset(512, 4, 11, 0.3);
    benchmark::DoNotOptimize(ds.examples.data());
  }
}
BENCHMARK(BM_SynthShapes)->Unit(benchmark::kMillisecond);

}  // namespace
