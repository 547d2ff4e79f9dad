#include "rbsde/analysis.hpp"
#include "rbsde/chain.hpp"
#include "rbsde/data_spec.hpp"
#include "rbsde/pathsim.hpp"
#include "rbsde/solver.hpp"

#include <benchmark/benchmark.h>

#include <algorithm>

using namespace rbsde;

namespace {

ModelSpec two_regime_model() {
    ParametricModel p;
    p.dim = 1;
    p.horizon = 1.0;
    ParametricRegime a, b;
    a.drift = {{0.0}, {0.03}};
    a.dispersion = {{0.0}, {0.2}};
    a.intensity = {0.1, 0.1};
    b.drift = {{0.0}, {0.01}};
    b.dispersion = {{0.0}, {0.3}};
    b.intensity = {0.1, 0.1};
    p.regimes = {a, b};
    p.jump_atoms = {{{1.0}, 1.0}, {{-1.0}, 1.0}};
    p.switching = {{0.0, 0.5}, {0.5, 0.0}};
    return make_parametric_model(p);
}

ProblemData r2bsde_data(const ChainApprox& chain) {
    AffineDriver g;
    g.u_self = -0.05;
    CostFunctions c;
    c.g_tilde = g.function();
    c.lipschitz = g.lipschitz();
    c.monotone_in_r = true;
    c.psi = [](std::span<const double> x, int) { return std::max(x[0], 100.0); };
    const PhiBarrier lb = lower_barrier_from_phi(ClampedAffine{0.0, 1.0, std::nullopt, std::nullopt}.phi(), 80.0,
                                                 chain.model());
    c.ell = lb.ell;
    c.h = ClampedAffine{30.0, 1.0, 110.0, std::nullopt}.barrier();
    return assemble(ProblemKind::R2BSDE, c, chain, {}, lb.alpha);
}

void BM_BuildChain(benchmark::State& state) {
    const ModelSpec model = two_regime_model();
    ChainOptions opt;
    opt.threads = static_cast<unsigned>(state.range(1));
    const auto nodes = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(build_chain(model, 200, {20.0, 300.0, nodes}, opt));
    state.SetItemsProcessed(state.iterations() * 200 * nodes * 2);
}
BENCHMARK(BM_BuildChain)->Args({200, 1})->Args({400, 1})->Args({400, 4})->Unit(benchmark::kMillisecond);

void BM_SolveR2BSDE(benchmark::State& state) {
    const ChainApprox chain = build_chain(two_regime_model(), 200, {20.0, 300.0, static_cast<std::size_t>(state.range(0))});
    const ProblemData data = r2bsde_data(chain);
    SolveOptions opt;
    opt.threads = static_cast<unsigned>(state.range(1));
    for (auto _ : state) benchmark::DoNotOptimize(solve(chain, data, opt));
    state.SetItemsProcessed(state.iterations() * chain.steps() * chain.states());
}
BENCHMARK(BM_SolveR2BSDE)->Args({200, 1})->Args({400, 1})->Args({400, 4})->Unit(benchmark::kMillisecond);

void BM_Norms(benchmark::State& state) {
    const ChainApprox chain = build_chain(two_regime_model(), 200, {20.0, 300.0, 400});
    const ProblemData data = r2bsde_data(chain);
    const SolutionQuadruple sol = solve(chain, data);
    const std::size_t start = chain.nearest_state(100.0, 0);
    for (auto _ : state) benchmark::DoNotOptimize(norms(chain, data, sol, start));
}
BENCHMARK(BM_Norms)->Unit(benchmark::kMillisecond);

void BM_SimulatePaths(benchmark::State& state) {
    const ModelSpec model = two_regime_model();
    const Vector grid = uniform_grid(0.0, 1.0, 200);
    SimulationOptions opt;
    opt.threads = static_cast<unsigned>(state.range(1));
    const auto paths = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(simulate_paths(model, {{100.0}, 0}, grid, paths, 42, opt));
    state.SetItemsProcessed(state.iterations() * paths);
}
BENCHMARK(BM_SimulatePaths)->Args({1000, 1})->Args({4000, 1})->Args({4000, 4})->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
