#include <benchmark/benchmark.h>

#include <omp.h>

#include <random>

#include "bnk/inference.hpp"
#include "bnk/likelihoods.hpp"

using namespace bnk;

namespace {

struct Fixture {
    Mat X, Y;
    LikelihoodPtr lik = make_heteroscedastic();
    Kernel kernel = Kernel::stack({Kernel::matern32(1.0, 1.0), Kernel::matern32(1.0, 1.0)});
    Quadrature quad = default_quadrature(2);
    std::unique_ptr<DenseBackend> backend;

    explicit Fixture(int N) {
        std::mt19937_64 rng(7);
        std::normal_distribution<double> z;
        X = Vec::LinSpaced(N, -2.0, 2.0);
        Y = Mat::NullaryExpr(N, 1, [&] { return z(rng); });
        backend = std::make_unique<DenseBackend>(kernel, X);
        backend->refresh(SiteParams::init(N, 2));
    }
};

void run_sweep(benchmark::State& state, bool parallel, const char* rule) {
    Fixture fx(static_cast<int>(state.range(0)));
    const MethodConfig cfg = MethodConfig::from_name(rule);
    const Problem p{*fx.backend, *fx.lik, fx.Y, fx.quad};
    for (auto _ : state) {
        SiteGradients g = parallel ? sweep_gradients(cfg, p, nullptr) : sweep_gradients_serial(cfg, p, nullptr);
        benchmark::DoNotOptimize(g.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
    state.counters["threads"] = parallel ? omp_get_max_threads() : 1;
}

void BM_SerialVgn(benchmark::State& s) { run_sweep(s, false, "vgn"); }
void BM_ParallelVgn(benchmark::State& s) { run_sweep(s, true, "vgn"); }
void BM_SerialPep(benchmark::State& s) { run_sweep(s, false, "pep"); }
void BM_ParallelPep(benchmark::State& s) { run_sweep(s, true, "pep"); }

}  // namespace

BENCHMARK(BM_SerialVgn)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ParallelVgn)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SerialPep)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ParallelPep)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
