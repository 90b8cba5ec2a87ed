#include <benchmark/benchmark.h>

#include <cmath>

#include "sflow/flow.hpp"
#include "sflow/interpolants.hpp"
#include "sflow/measures.hpp"
#include "sflow/nogo.hpp"
#include "sflow/velocity.hpp"

namespace {

sflow::GeneralizedInterpolant pencil_1d() {
  return sflow::build_1d_gaussian(-2.0, 0.6, 3.0, 1.5);
}

sflow::GeneralizedInterpolant pencil_2d() {
  sflow::Mat s0 = sflow::Mat::Zero(2, 2);
  s0.diagonal() << 0.36, 1.0;
  sflow::Mat s1 = sflow::Mat::Zero(2, 2);
  s1.diagonal() << 2.25, 0.25;
  sflow::Vec m0(2), m1(2);
  m0 << -2.0, -1.0;
  m1 << 3.0, 1.0;
  return sflow::build_multivariate_gaussian(m0, s0, m1, s1);
}

void BM_sample_paths(benchmark::State& state) {
  const sflow::GeneralizedInterpolant interp = pencil_1d();
  const sflow::Vec times = sflow::uniform_grid(101);
  const auto n = static_cast<std::int64_t>(state.range(0));
  std::uint64_t seed = 1;
  for (auto _ : state) {
    const sflow::PathEnsemble e = sflow::sample_paths(interp, n, times, seed++);
    benchmark::DoNotOptimize(e.values.data());
  }
  state.SetItemsProcessed(state.iterations() * n * times.size());
}

void BM_velocity_value(benchmark::State& state) {
  const sflow::VelocityField field = sflow::VelocityField::analytic(pencil_2d());
  const auto n = static_cast<Eigen::Index>(state.range(0));
  sflow::Mat points(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    points(i, 0) = -3.0 + 6.0 * i / (n - 1.0);
    points(i, 1) = std::sin(0.37 * i);
  }
  for (auto _ : state) {
    const sflow::Mat values = field.value_batch(0.41, points);
    benchmark::DoNotOptimize(values.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_integrate_rk4(benchmark::State& state) {
  const sflow::VelocityField field = sflow::VelocityField::analytic(pencil_1d());
  const sflow::Vec times = sflow::uniform_grid(static_cast<int>(state.range(0)));
  sflow::Mat x0(50, 1);
  for (int i = 0; i < 50; ++i) {
    x0(i, 0) = -3.8 + 3.6 * i / 49.0;
  }
  for (auto _ : state) {
    const sflow::FlowTrajectories flow = sflow::integrate_flow(field, x0, times);
    benchmark::DoNotOptimize(flow.states.data());
  }
  state.SetItemsProcessed(state.iterations() * x0.rows() * times.size());
}

void BM_conditional_stats(benchmark::State& state) {
  const sflow::MeasureSpec n01 = sflow::gaussian_measure_1d(0.0, 1.0);
  const sflow::GeneralizedInterpolant interp =
      sflow::build_affine(sflow::Coupling::independent(n01, n01));
  sflow::Vec times(5);
  times << 0.0, 0.49, 0.5, 0.51, 1.0;
  const sflow::PathEnsemble e =
      sflow::sample_paths(interp, state.range(0), times, 99);
  for (auto _ : state) {
    const sflow::ConditionalStats stats =
        sflow::empirical_conditional_stats(e, 2);
    benchmark::DoNotOptimize(stats.centers.data());
  }
}

void BM_upcrossing_count(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  sflow::Vec path(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    path[i] = 1.6 * std::sin(0.05 * i) + 0.3 * std::sin(1.3 * i);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(sflow::upcrossing_count(path, -1.0, 1.0));
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_concentration_fit(benchmark::State& state) {
  const sflow::MeasureSpec n01 = sflow::gaussian_measure_1d(0.0, 1.0);
  const sflow::BrownianBridgeProcess bridge(n01, n01);
  const sflow::PathEnsemble e =
      sflow::sample_paths(bridge, state.range(0), sflow::uniform_grid(101), 7);
  sflow::Vec deltas(4);
  deltas << 0.05, 0.08, 0.12, 0.3;
  sflow::Vec thetas(4);
  thetas << 0.3, 0.5, 0.8, 1.2;
  for (auto _ : state) {
    const sflow::ConcentrationFit fit =
        sflow::concentration_fit(e, deltas, thetas);
    benchmark::DoNotOptimize(&fit);
  }
}

}  // namespace

BENCHMARK(BM_sample_paths)->Arg(256)->Arg(2048);
BENCHMARK(BM_velocity_value)->Arg(64)->Arg(1024);
BENCHMARK(BM_integrate_rk4)->Arg(51)->Arg(201);
BENCHMARK(BM_conditional_stats)->Arg(4000)->Arg(16000);
BENCHMARK(BM_upcrossing_count)->Arg(1000)->Arg(100000);
BENCHMARK(BM_concentration_fit)->Arg(1000);

BENCHMARK_MAIN();
