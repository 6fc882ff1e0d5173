#include <benchmark/benchmark.h>

#include <random>

#include "cgt/graph.hpp"
#include "cgt/ops.hpp"
#include "cgt/params.hpp"

namespace {

cgt::Tensor random_tensor(cgt::Shape shape, cgt::Rng& rng, bool grad = false) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(cgt::shape_numel(shape));
    for (double& x : v) x = nd(rng);
    return cgt::Tensor(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    cgt::Rng rng(1);
    const auto a = random_tensor({n, n}, rng);
    const auto b = random_tensor({n, n}, rng);
    cgt::NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(cgt::matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(192);

void BM_Conv3x3(benchmark::State& state) {
    cgt::Rng rng(2);
    const auto x = random_tensor({16, 32, 32}, rng);
    const auto w = random_tensor({16, 16, 3, 3}, rng);
    cgt::NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(cgt::conv2d(x, w, {}, 1, 1));
}
BENCHMARK(BM_Conv3x3);

void BM_AttentionForwardBackward(benchmark::State& state) {
    const auto t = static_cast<std::size_t>(state.range(0));
    cgt::Rng rng(3);
    const auto qkv = random_tensor({t, 3 * 32}, rng, true);
    for (auto _ : state) {
        const auto out = cgt::multi_head_attention(qkv, 4);
        cgt::backward(cgt::sum(out));
    }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(100)->Arg(300);

void BM_LinkMarkers(benchmark::State& state) {
    cgt::Rng rng(4);
    std::uniform_real_distribution<double> u(0.0, 64.0);
    std::vector<cgt::Point2> pts(60);
    for (auto& p : pts) p = {u(rng), u(rng)};
    for (auto _ : state) benchmark::DoNotOptimize(cgt::build_graph_bundle(pts, 4, 16));
}
BENCHMARK(BM_LinkMarkers);

} // namespace
