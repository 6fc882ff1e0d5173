#include <benchmark/benchmark.h>

#include "cgt/train.hpp"

namespace {

struct Fixture {
    std::vector<cgt::Sample> samples;
    std::vector<cgt::PreparedSample> prepared;
    cgt::TrainConfig cfg;

    explicit Fixture(std::size_t width, std::size_t layers) {
        cfg.model_width = width;
        cfg.layers = layers;
        cgt::CorpusConfig cc;
        cc.seed = 11;
        samples = cgt::generate_corpus(cc, 4, 1);
        prepared = cgt::prepare_samples(samples, cfg);
    }
};

void BM_FinetuneStep(benchmark::State& state) {
    Fixture fx(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    cgt::Rng rng(0);
    const auto model = cgt::CgtModel::create(fx.cfg, rng);
    const std::vector<double> tau(3, 1.0);
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& s = fx.prepared[i++ % fx.prepared.size()];
        cgt::backward(cgt::node_loss(cgt::cgt_forward(model, s), s.onehot, tau));
    }
}
BENCHMARK(BM_FinetuneStep)->Args({32, 2})->Args({32, 4})->Args({64, 4})->Unit(benchmark::kMillisecond);

void BM_PretrainStep(benchmark::State& state) {
    Fixture fx(64, 4);
    cgt::Rng rng(0);
    const auto model = cgt::PretrainModel::create(fx.cfg, rng);
    const std::vector<double> tau(3, 1.0);
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& s = fx.prepared[i++ % fx.prepared.size()];
        cgt::backward(cgt::pretrain_step(*s.sample, s.bundle, model.backbone, model.gcn, tau, {}).total);
    }
}
BENCHMARK(BM_PretrainStep)->Unit(benchmark::kMillisecond);

} // namespace
