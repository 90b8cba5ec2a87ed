#include <doctest.h>

#include <cmath>
#include <vector>

#include "sflow/errors.hpp"
#include "sflow/interpolants.hpp"
#include "sflow/measures.hpp"
#include "sflow/velocity.hpp"

using namespace sflow;

namespace {

Mat random_spd(SampleRng& rng, int d) {
  Mat r(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      r(i, j) = rng.gaussian();
    }
  }
  return r * r.transpose() + (0.1 + rng.uniform01()) * Mat::Identity(d, d);
}

Coupling standard_pair() {
  return Coupling::independent(gaussian_measure_1d(0.0, 1.0),
                               gaussian_measure_1d(0.0, 1.0));
}

PathEnsemble bracket_ensemble(const PathSampler& process, std::int64_t n,
                              double t, double h, std::uint64_t seed) {
  Vec times(5);
  times << 0.0, t - h, t, t + h, 1.0;
  return sample_paths(process, n, times, seed);
}

}  // namespace

TEST_CASE("moments of the 1d gaussian construction") {
  const GeneralizedInterpolant interp = build_1d_gaussian(-2.0, 0.6, 3.0, 1.5);
  const GaussianPathStats mid = gaussian_moments(interp, 0.5);
  CHECK(mid.mean[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(std::sqrt(mid.cov(0, 0)) == doctest::Approx(1.05).epsilon(1e-14));
  for (double t : {0.1, 0.37, 0.8}) {
    const double sigma = 0.6 * (1.0 - t) + 1.5 * t;
    const GaussianPathStats s = gaussian_moments(interp, t);
    CHECK(s.cov(0, 0) == doctest::Approx(sigma * sigma).epsilon(1e-13));
    CHECK(s.mean[0] == doctest::Approx(-2.0 + 5.0 * t).epsilon(1e-13));
    CHECK(s.cross(0, 0) == doctest::Approx(sigma * 0.9).epsilon(1e-12));
  }
  const GaussianPathStats start = gaussian_moments(interp, 0.0);
  CHECK(start.mean[0] == -2.0);
  CHECK(start.cov(0, 0) == doctest::Approx(0.36).epsilon(1e-15));

  // Sample variance agrees with the closed form.
  const PathEnsemble e = bracket_ensemble(interp, 100000, 0.3, 0.01, 11);
  const GaussianPathStats s3 = gaussian_moments(interp, 0.3);
  double var = 0.0;
  double mean = 0.0;
  for (std::int64_t i = 0; i < e.n_paths(); ++i) {
    mean += e.at(i, 2, 0);
  }
  mean /= e.n_paths();
  for (std::int64_t i = 0; i < e.n_paths(); ++i) {
    const double c = e.at(i, 2, 0) - mean;
    var += c * c;
  }
  var /= e.n_paths() - 1;
  const double se = s3.cov(0, 0) * std::sqrt(2.0 / e.n_paths());
  CHECK(std::abs(var - s3.cov(0, 0)) < 4.0 * se);
}

TEST_CASE("same covariance construction moves at constant speed") {
  Mat sigma(2, 2);
  sigma << 1.0, 0.3, 0.3, 0.8;
  Vec m0(2), m1(2);
  m0 << -1.0, 2.0;
  m1 << 3.0, 1.0;
  const GeneralizedInterpolant interp = build_same_cov_gaussian(m0, m1, sigma);
  SampleRng rng(5, 0);
  for (double t : {0.05, 0.3, 0.5, 0.77, 0.95}) {
    const GaussianPathStats s = gaussian_moments(interp, t);
    CHECK(s.cross.cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(s.cov_rate.cwiseAbs().maxCoeff() <= 1e-14);
    Vec x(2);
    x << 4.0 * rng.gaussian(), 4.0 * rng.gaussian();
    const Vec v = analytic_velocity(interp, t, x);
    CHECK((v - (m1 - m0)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  // Identical endpoint laws give the zero field.
  const GeneralizedInterpolant still = build_same_cov_gaussian(
      Vec::Zero(2), Vec::Zero(2), Mat::Identity(2, 2));
  const Vec v0 = analytic_velocity(still, 0.42, Vec::Ones(2));
  CHECK(v0.cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("multivariate construction matches the pencil closed form") {
  Mat s0 = Mat::Zero(2, 2);
  s0.diagonal() << 0.36, 1.0;
  Mat s1 = Mat::Zero(2, 2);
  s1.diagonal() << 2.25, 0.25;
  Vec m0 = Vec::Zero(2);
  Vec m1 = Vec::Ones(2);
  const GeneralizedInterpolant interp =
      build_multivariate_gaussian(m0, s0, m1, s1);
  const PencilFactors pf = pencil_decompose(s0, s1);
  const Mat xi =
      Mat(pf.lambda.cwiseSqrt().asDiagonal()) - Mat::Identity(2, 2);
  for (double t : {0.0, 0.2, 0.5, 0.9, 1.0}) {
    const Mat inner = Mat::Identity(2, 2) + t * xi;
    const Mat expected = pf.V * inner * inner * pf.V.transpose();
    const GaussianPathStats s = gaussian_moments(interp, t);
    CHECK((s.cov - expected).norm() <= 1e-12 * expected.norm());
  }
  // Straightness of the covariance path.
  for (double t : {0.1, 0.5, 0.8}) {
    const GaussianPathStats s = gaussian_moments(interp, t);
    const Mat gap =
        s.cov_accel - 0.5 * s.cov_rate * s.cov.llt().solve(s.cov_rate);
    CHECK(gap.cwiseAbs().maxCoeff() <= 1e-10);
  }
  // The conditional rate field transports straight lines.
  const VelocityField f = VelocityField::analytic(interp);
  SampleRng rng(6, 0);
  for (int rep = 0; rep < 10; ++rep) {
    const double t = 0.05 + 0.9 * rng.uniform01();
    Vec x(2);
    x << 3.0 * rng.gaussian(), 3.0 * rng.gaussian();
    CHECK(burgers_residual(f, t, x).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("affine interpolant of independent standard gaussians") {
  const Coupling pair = standard_pair();
  const GeneralizedInterpolant interp = build_affine(pair);
  const VelocityField f = VelocityField::analytic(interp);
  for (double t : {0.1, 0.5, 0.62}) {
    const double denom = (1.0 - t) * (1.0 - t) + t * t;
    for (double x : {-1.5, 0.0, 0.7, 2.0}) {
      const Vec v =
          analytic_velocity(interp, t, Vec::Constant(1, x));
      CHECK(v[0] == doctest::Approx((2.0 * t - 1.0) * x / denom)
                        .epsilon(1e-12));
    }
  }
  const AffinePointStats mid =
      analytic_affine_stats(pair, 0.5, Vec::Zero(1));
  CHECK(mid.v[0] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(mid.pi(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  // Steepening rate of the field at the midpoint.
  const Vec d = burgers_residual(f, 0.5, Vec::Constant(1, 1.0));
  CHECK(d[0] == doctest::Approx(4.0).epsilon(1e-10));
}

TEST_CASE("conditional rate covariance of affine couplings") {
  // A transport map leaves nothing unexplained by the position.
  const AffineMap scale = gaussian_ot_map(
      Vec::Zero(1), Mat::Constant(1, 1, 0.36), Vec::Zero(1),
      Mat::Constant(1, 1, 2.25));
  const Coupling monge =
      Coupling::deterministic(gaussian_measure_1d(0.0, 0.6), scale);
  for (double t : {0.1, 0.5, 0.9}) {
    const AffinePointStats s =
        analytic_affine_stats(monge, t, Vec::Constant(1, 0.3));
    CHECK(std::abs(s.pi(0, 0)) <= 1e-12);
  }
  // At the left endpoint of centered couplings the residual rate variance
  // equals the far covariance.
  SampleRng rng(41, 0);
  const Mat s0 = random_spd(rng, 2);
  const Mat s1 = random_spd(rng, 2);
  const Coupling pair =
      Coupling::independent(gaussian_measure(Vec::Zero(2), s0),
                            gaussian_measure(Vec::Zero(2), s1));
  const AffinePointStats start =
      analytic_affine_stats(pair, 0.0, Vec::Zero(2));
  CHECK((start.pi - s1).norm() <= 1e-10 * s1.norm());
}

TEST_CASE("collapse process velocity and its singular instant") {
  const Coupling pair = Coupling::independent(gaussian_measure_1d(0.0, 1.0),
                                              gaussian_measure_1d(2.0, 0.5));
  const GeneralizedInterpolant interp = build_collapse(0.5, pair);
  for (double t : {0.1, 0.4, 0.7, 0.95}) {
    for (double x : {-1.0, 0.5, 2.0}) {
      const Vec v = analytic_velocity(interp, t, Vec::Constant(1, x));
      CHECK(v[0] == doctest::Approx(x / (t - 0.5)).epsilon(1e-11));
    }
  }
  CHECK_THROWS_AS(analytic_velocity(interp, 0.5, Vec::Zero(1)),
                  NumericalError);
  try {
    analytic_velocity(interp, 0.5, Vec::Zero(1));
  } catch (const NumericalError& err) {
    CHECK(std::string(err.what()).find("0.5") != std::string::npos);
  }
  const VelocityField f = VelocityField::analytic(interp);
  CHECK(burgers_residual(f, 0.8, Vec::Constant(1, 2.0)).cwiseAbs().maxCoeff() <=
        1e-11);
  Mat pts(7, 1);
  pts << -3.0, -1.0, 0.0, 0.5, 1.0, 2.0, 3.0;
  CHECK(lipschitz_estimate(f, 0.8, pts) ==
        doctest::Approx(1.0 / 0.3).epsilon(1e-10));
}

TEST_CASE("covariance rate splits into the two cross covariances") {
  const GeneralizedInterpolant prop = build_1d_gaussian(-2.0, 0.6, 3.0, 1.5);
  CHECK(covariance_derivative_check(prop, 0.3, 1e-5) < 1e-8);
  Mat s0 = Mat::Zero(2, 2);
  s0.diagonal() << 0.36, 1.0;
  Mat s1 = Mat::Zero(2, 2);
  s1.diagonal() << 2.25, 0.25;
  const GeneralizedInterpolant multi =
      build_multivariate_gaussian(Vec::Zero(2), s0, Vec::Ones(2), s1);
  CHECK(covariance_derivative_check(multi, 0.62, 1e-5) < 1e-8);
  // A transport coupling exercises the asymmetric cross term.
  SampleRng rng(13, 0);
  const Mat r0 = random_spd(rng, 2);
  const Mat r1 = random_spd(rng, 2);
  const AffineMap map = gaussian_ot_map(Vec::Zero(2), r0, Vec::Ones(2), r1);
  const GeneralizedInterpolant pushed = build_affine(
      Coupling::deterministic(gaussian_measure(Vec::Zero(2), r0), map));
  CHECK(covariance_derivative_check(pushed, 0.44, 1e-5) < 1e-8);
  // Shared covariance freezes the second moments entirely.
  const GeneralizedInterpolant same = build_same_cov_gaussian(
      Vec::Zero(2), Vec::Ones(2), r0);
  CHECK(covariance_derivative_check(same, 0.5, 1e-4) < 1e-12);
}

TEST_CASE("vanishing cross covariance forces matching endpoints") {
  Vec grid = uniform_grid(21);
  const auto max_cross = [&](const GeneralizedInterpolant& interp) {
    double worst = 0.0;
    for (Eigen::Index k = 0; k < grid.size(); ++k) {
      worst = std::max(
          worst, gaussian_moments(interp, grid[k]).cross.cwiseAbs().maxCoeff());
    }
    return worst;
  };
  SampleRng rng(99, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const Mat s0 = random_spd(rng, 2);
    const Mat s1 = random_spd(rng, 2);
    const GeneralizedInterpolant interp =
        build_multivariate_gaussian(Vec::Zero(2), s0, Vec::Zero(2), s1);
    CHECK(2.0 * max_cross(interp) + 1e-12 >= (s0 - s1).norm() / 2.0);
  }
  const Mat shared = random_spd(rng, 2);
  const GeneralizedInterpolant same =
      build_same_cov_gaussian(Vec::Zero(2), Vec::Ones(2), shared);
  CHECK(max_cross(same) <= 1e-14);
}

TEST_CASE("closed-form moments reject couplings without them") {
  const Coupling uniform_pair = Coupling::independent(
      uniform_interval(0.0, 1.0), uniform_interval(1.0, 2.0));
  CHECK_THROWS_AS(
      gaussian_moments(GeneralizedInterpolant(Schedule::linear_affine(),
                                              uniform_pair),
                       0.5),
      ConfigError);
  const Coupling joint = Coupling::joint(
      gaussian_measure_1d(0.0, 1.0), gaussian_measure_1d(0.0, 1.0),
      [](SampleRng& rng, Vec& x0, Vec& x1) {
        x0 = Vec::Constant(1, rng.gaussian());
        x1 = x0;
      });
  CHECK_THROWS_AS(
      gaussian_moments(GeneralizedInterpolant(Schedule::linear_affine(), joint),
                       0.5),
      ConfigError);
  const GeneralizedInterpolant prop = build_1d_gaussian(0.0, 1.0, 1.0, 2.0);
  CHECK_THROWS_AS(analytic_velocity(prop, 0.5, Vec::Zero(2)), ConfigError);
}

TEST_CASE("kernel regression recovers the constant field") {
  Mat sigma(1, 1);
  sigma << 1.0;
  const GeneralizedInterpolant interp = build_same_cov_gaussian(
      Vec::Zero(1), Vec::Constant(1, 2.0), sigma);
  const PathEnsemble e = bracket_ensemble(interp, 50000, 0.5, 0.005, 71);
  const ConditionalStats stats = empirical_conditional_stats(e, 2);
  REQUIRE(stats.n_cells() == 25);
  int valid = 0;
  int within = 0;
  for (const CellStats& cell : stats.slices[0]) {
    if (!cell.valid) {
      continue;
    }
    ++valid;
    if (std::abs(cell.v[0] - 2.0) <= 3.0 * cell.se_v[0]) {
      ++within;
    }
    CHECK(std::abs(cell.v[0] - 2.0) <= 6.0 * cell.se_v[0]);
    CHECK(cell.pi(0, 0) >= 0.0);
  }
  REQUIRE(valid >= 20);
  CHECK(within >= static_cast<int>(0.9 * valid));
}

TEST_CASE("kernel regression sees zero residual variance under transport") {
  const AffineMap scale = gaussian_ot_map(
      Vec::Zero(1), Mat::Constant(1, 1, 1.0), Vec::Constant(1, 1.0),
      Mat::Constant(1, 1, 1.1025));
  const Coupling monge =
      Coupling::deterministic(gaussian_measure_1d(0.0, 1.0), scale);
  const GeneralizedInterpolant interp = build_affine(monge);
  const PathEnsemble e = bracket_ensemble(interp, 20000, 0.5, 0.005, 43);
  const ConditionalStats stats = empirical_conditional_stats(e, 2);
  for (const CellStats& cell : stats.slices[0]) {
    if (!cell.valid) {
      continue;
    }
    CHECK(std::abs(cell.pi(0, 0)) <= 3.0 * cell.se_pi(0, 0) + 1e-10);
  }
}

TEST_CASE("kernel regression measures the unexplained rate variance") {
  const GeneralizedInterpolant interp = build_affine(standard_pair());
  const PathEnsemble e = bracket_ensemble(interp, 100000, 0.5, 0.005, 29);
  const ConditionalStats stats = empirical_conditional_stats(e, 2);
  int valid = 0;
  int within = 0;
  for (const CellStats& cell : stats.slices[0]) {
    if (!cell.valid) {
      continue;
    }
    ++valid;
    if (std::abs(cell.pi(0, 0) - 2.0) <= 3.0 * cell.se_pi(0, 0)) {
      ++within;
    }
    CHECK(std::abs(cell.pi(0, 0) - 2.0) <= 6.0 * cell.se_pi(0, 0));
    CHECK((cell.c_mat - cell.pi - cell.v * cell.v.transpose())
              .cwiseAbs()
              .maxCoeff() <= 1e-12);
  }
  REQUIRE(valid >= 20);
  CHECK(within >= static_cast<int>(0.9 * valid));
}

TEST_CASE("cells without weight are flagged invalid and arguments checked") {
  const GeneralizedInterpolant interp = build_affine(standard_pair());
  const PathEnsemble e = bracket_ensemble(interp, 2000, 0.5, 0.01, 3);
  Vec wide(9);
  wide << -20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0;
  const ConditionalStats stats =
      empirical_conditional_stats(e, 2, {wide});
  int valid = 0;
  for (const CellStats& cell : stats.slices[0]) {
    valid += cell.valid ? 1 : 0;
  }
  CHECK(valid >= 1);
  CHECK(valid < static_cast<int>(stats.slices[0].size()));

  CHECK_THROWS_AS(empirical_conditional_stats(e, 0), ConfigError);
  CHECK_THROWS_AS(empirical_conditional_stats(e, 4), ConfigError);
  const PathEnsemble tiny = bracket_ensemble(interp, 500, 0.5, 0.01, 3);
  CHECK_THROWS_AS(empirical_conditional_stats(tiny, 2), ConfigError);
}

namespace {

// Hand-built single-slice stats with exact values and zero noise.
ConditionalStats manufactured_balance_stats(int nx) {
  ConditionalStats stats;
  stats.times = Vec::Constant(1, 0.5);
  Vec axis(nx);
  for (int i = 0; i < nx; ++i) {
    axis[i] = -3.0 + 6.0 * (i + 0.5) / nx;
  }
  stats.axes = {axis};
  stats.centers = axis;
  stats.slices.resize(1);
  for (int i = 0; i < nx; ++i) {
    CellStats cell;
    const double x = axis[i];
    cell.v = Vec::Zero(1);
    cell.a = Vec::Constant(1, -2.0 * x);
    cell.pi = Mat::Constant(1, 1, 2.0);
    cell.c_mat = cell.pi;
    cell.rho = normal_density(x);
    cell.se_v = Vec::Zero(1);
    cell.se_a = Vec::Zero(1);
    cell.se_pi = Mat::Zero(1, 1);
    cell.se_rho = 0.0;
    cell.n_eff = 1e9;
    cell.valid = true;
    stats.slices[0].push_back(cell);
  }
  return stats;
}

ConditionalStats manufactured_momentum_stats(int nx, double ht) {
  const Coupling pair =
      Coupling::independent(gaussian_measure_1d(0.0, 1.0),
                            gaussian_measure_1d(3.0, 1.0));
  ConditionalStats stats;
  stats.times.resize(3);
  stats.times << 0.5 - ht, 0.5, 0.5 + ht;
  Vec axis(nx);
  for (int i = 0; i < nx; ++i) {
    axis[i] = -2.0 + 7.0 * (i + 0.5) / nx;
  }
  stats.axes = {axis};
  stats.centers = axis;
  stats.slices.resize(3);
  for (int s = 0; s < 3; ++s) {
    const double t = stats.times[s];
    const double m = 3.0 * t;
    const double var = (1.0 - t) * (1.0 - t) + t * t;
    for (int i = 0; i < nx; ++i) {
      const double x = axis[i];
      const AffinePointStats ps =
          analytic_affine_stats(pair, t, Vec::Constant(1, x));
      CellStats cell;
      cell.v = ps.v;
      cell.a = Vec::Zero(1);
      cell.pi = ps.pi;
      cell.c_mat = ps.pi + ps.v * ps.v.transpose();
      cell.rho = normal_density((x - m) / std::sqrt(var)) / std::sqrt(var);
      cell.se_v = Vec::Zero(1);
      cell.se_a = Vec::Zero(1);
      cell.se_pi = Mat::Zero(1, 1);
      cell.se_rho = 0.0;
      cell.n_eff = 1e9;
      cell.valid = true;
      stats.slices[s].push_back(cell);
    }
  }
  return stats;
}

}  // namespace

TEST_CASE("stress divergence balances the conditional acceleration") {
  // Manufactured solution: div(rho Pi) = rho a exactly, residual is stencil
  // truncation and shrinks at second order.
  const ResidualField coarse = balance_residual(manufactured_balance_stats(41));
  const ResidualField fine = balance_residual(manufactured_balance_stats(82));
  CHECK(coarse.max_abs < 0.02);
  CHECK(fine.max_abs < coarse.max_abs / 2.5);
  CHECK(fine.max_abs > coarse.max_abs / 8.0);

  // Monte Carlo on the shared-covariance construction.
  Mat sigma(1, 1);
  sigma << 1.0;
  const GeneralizedInterpolant interp = build_same_cov_gaussian(
      Vec::Zero(1), Vec::Constant(1, 2.0), sigma);
  const PathEnsemble e = bracket_ensemble(interp, 100000, 0.5, 0.005, 101);
  const ConditionalStats stats = empirical_conditional_stats(e, 2);
  const ResidualField res = balance_residual(stats);
  int checked = 0;
  for (Eigen::Index c = 0; c < stats.n_cells(); ++c) {
    if (!res.valid[static_cast<std::size_t>(c)]) {
      continue;
    }
    ++checked;
    CHECK(std::abs(res.residual(c, 0)) <= 3.0 * res.se(c, 0) + 0.02);
  }
  CHECK(checked >= 15);

  ConditionalStats coarse_grid = manufactured_balance_stats(4);
  CHECK_THROWS_AS(balance_residual(coarse_grid), ConfigError);
}

TEST_CASE("momentum flux balance") {
  const ResidualField coarse =
      momentum_residual(manufactured_momentum_stats(140, 0.004), 1);
  const ResidualField fine =
      momentum_residual(manufactured_momentum_stats(280, 0.002), 1);
  CHECK(coarse.max_abs < 0.05);
  CHECK(fine.max_abs < coarse.max_abs / 2.5);

  const GeneralizedInterpolant interp = build_affine(standard_pair());
  const PathEnsemble e = bracket_ensemble(interp, 100000, 0.5, 0.05, 59);
  const ConditionalStats stats =
      empirical_conditional_stats(e, std::vector<int>{1, 2, 3});
  const ResidualField res = momentum_residual(stats, 1);
  int checked = 0;
  for (Eigen::Index c = 0; c < stats.n_cells(); ++c) {
    if (!res.valid[static_cast<std::size_t>(c)]) {
      continue;
    }
    ++checked;
    CHECK(std::abs(res.residual(c, 0)) <= 3.0 * res.se(c, 0) + 0.03);
  }
  CHECK(checked >= 15);
  CHECK_THROWS_AS(momentum_residual(stats, 0), ConfigError);
  CHECK_THROWS_AS(momentum_residual(stats, 2), ConfigError);
}

TEST_CASE("mass is conserved along the analytic flow") {
  const GeneralizedInterpolant interp = build_1d_gaussian(-2.0, 0.6, 3.0, 1.5);
  const VelocityField f = VelocityField::analytic(interp);
  GridDensity rho;
  rho.times = uniform_grid(201);
  Vec axis(201);
  for (int i = 0; i < 201; ++i) {
    axis[i] = -5.0 + 14.0 * i / 200.0;
  }
  rho.axes = {axis};
  rho.eval = [](double t, const Vec& x) {
    const double m = -2.0 + 5.0 * t;
    const double sd = 0.6 + 0.9 * t;
    return normal_density((x[0] - m) / sd) / sd;
  };
  const ContinuityReport report = continuity_residual(rho, f);
  CHECK(report.max_abs < 1e-6);
  CHECK(report.weighted_l2 < 1e-6);
}

TEST_CASE("transported density satisfies the grid continuity stencil") {
  const auto report_at = [](int nt, int nx) {
    GridDensity rho;
    rho.times.resize(nt);
    for (int k = 0; k < nt; ++k) {
      rho.times[k] = static_cast<double>(k) / (nt - 1);
    }
    Vec axis(nx);
    for (int i = 0; i < nx; ++i) {
      axis[i] = -4.5 + 10.0 * i / (nx - 1.0);
    }
    rho.axes = {axis};
    rho.values.resize(nt, nx);
    for (int k = 0; k < nt; ++k) {
      for (int i = 0; i < nx; ++i) {
        rho.values(k, i) = normal_density(axis[i] - rho.times[k]);
      }
    }
    Vec times(2);
    times << 0.0, 1.0;
    std::vector<Mat> values(2, Mat::Constant(2, 1, 1.0));
    const VelocityField constant = VelocityField::empirical(
        times, {Vec::LinSpaced(2, -4.5, 5.5)}, values);
    return continuity_residual(rho, constant);
  };
  const ContinuityReport coarse = report_at(41, 61);
  const ContinuityReport fine = report_at(81, 121);
  CHECK(coarse.max_abs < 0.01);
  CHECK(fine.max_abs < coarse.max_abs / 2.5);

  // A static density under the zero field is conserved exactly.
  GridDensity rho;
  rho.times = uniform_grid(5);
  rho.axes = {Vec::LinSpaced(11, -2.0, 2.0)};
  rho.values.resize(5, 11);
  for (int k = 0; k < 5; ++k) {
    for (int i = 0; i < 11; ++i) {
      rho.values(k, i) = normal_density(rho.axes[0][i]);
    }
  }
  Vec times(2);
  times << 0.0, 1.0;
  std::vector<Mat> zero(2, Mat::Zero(2, 1));
  const VelocityField still = VelocityField::empirical(
      times, {Vec::LinSpaced(2, -2.0, 2.0)}, zero);
  CHECK(continuity_residual(rho, still).max_abs == 0.0);

  // Dimension mismatch between the density grid and the field.
  GridDensity flat;
  flat.times = uniform_grid(3);
  flat.axes = {Vec::LinSpaced(5, -1.0, 1.0), Vec::LinSpaced(5, -1.0, 1.0)};
  flat.values = Mat::Ones(3, 25);
  CHECK_THROWS_AS(continuity_residual(flat, still), ConfigError);
}

TEST_CASE("interpolated field evaluation stays close to the closed form") {
  const GeneralizedInterpolant interp = build_affine(standard_pair());
  const VelocityField analytic = VelocityField::analytic(interp);
  Vec times = uniform_grid(21);
  Vec axis = Vec::LinSpaced(31, -3.0, 3.0);
  std::vector<Mat> values;
  for (Eigen::Index k = 0; k < times.size(); ++k) {
    Mat block(axis.size(), 1);
    for (Eigen::Index i = 0; i < axis.size(); ++i) {
      block(i, 0) =
          analytic.value(times[k], Vec::Constant(1, axis[i]))[0];
    }
    values.push_back(block);
  }
  const VelocityField grid = VelocityField::empirical(times, {axis}, values);
  for (double t : {0.37, 0.5, 0.81}) {
    for (double x : {-2.2, -0.4, 1.3}) {
      CHECK(std::abs(grid.value(t, Vec::Constant(1, x))[0] -
                     analytic.value(t, Vec::Constant(1, x))[0]) < 1e-2);
    }
  }
  CHECK_THROWS_AS(grid.value(0.5, Vec::Constant(1, 4.0)), NumericalError);
  CHECK_THROWS_AS(grid.value(1.2, Vec::Constant(1, 0.0)), NumericalError);
  CHECK(grid.jacobian(0.5, Vec::Zero(1))(0, 0) ==
        doctest::Approx(0.0).epsilon(1e-10));
  CHECK_THROWS_AS(grid.interpolant(), ConfigError);
}

TEST_CASE("difference quotients of affine fields match their slope") {
  const GeneralizedInterpolant prop = build_1d_gaussian(-2.0, 0.6, 3.0, 1.5);
  const VelocityField f = VelocityField::analytic(prop);
  Mat pts = Vec::LinSpaced(9, -4.0, 6.0);
  const double sigma = 0.6 * 0.7 + 1.5 * 0.3;
  CHECK(lipschitz_estimate(f, 0.3, pts) ==
        doctest::Approx(0.9 / sigma).epsilon(1e-12));
  Mat sigma_shared(1, 1);
  sigma_shared << 1.0;
  const VelocityField constant = VelocityField::analytic(
      build_same_cov_gaussian(Vec::Zero(1), Vec::Ones(1), sigma_shared));
  CHECK(lipschitz_estimate(constant, 0.4, pts) <= 1e-13);
}
