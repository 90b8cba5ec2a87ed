#include <cmath>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "sflow/errors.hpp"
#include "sflow/report_io.hpp"

using namespace sflow;
using nlohmann::json;

namespace {

Vec to_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) {
    v[i++] = x;
  }
  return v;
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char ch : text) {
    n += ch == '\n';
  }
  return n;
}

}  // namespace

TEST_CASE("format_double round-trips exactly") {
  for (double x : {1.0 / 3.0, 0.1, 1e300, -2.5e-17, 0.0, -0.0, 123456789.123}) {
    const std::string text = format_double(x);
    CHECK(std::strtod(text.c_str(), nullptr) == x);
  }
}

TEST_CASE("gaussian measure json round-trips") {
  Mat cov(2, 2);
  cov << 1.0, 0.3, 0.3, 0.8;
  const MeasureSpec m = gaussian_measure(to_vec({-1.0, 2.5}), cov);
  const std::string text = measure_to_json(m);

  const json j = json::parse(text);
  CHECK(j.at("type") == "gaussian");
  CHECK(j.at("mean").size() == 2);

  const MeasureSpec back = measure_from_json(text);
  CHECK(back.kind == MeasureKind::Gaussian);
  CHECK((back.mean - m.mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.cov - m.cov).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("uniform measure json uses scalars in 1d and arrays above") {
  const MeasureSpec u1 = uniform_interval(-1.5, -0.5);
  const json j1 = json::parse(measure_to_json(u1));
  CHECK(j1.at("lo").is_number());
  const MeasureSpec b1 = measure_from_json(measure_to_json(u1));
  CHECK(b1.box.lo[0] == -1.5);
  CHECK(b1.box.hi[0] == -0.5);

  const MeasureSpec u2 = uniform_measure(Box(to_vec({0.0, 1.0}), to_vec({2.0, 3.0})));
  const json j2 = json::parse(measure_to_json(u2));
  CHECK(j2.at("lo").is_array());
  const MeasureSpec b2 = measure_from_json(measure_to_json(u2));
  CHECK(b2.box.dim() == 2);
  CHECK(b2.box.hi[1] == 3.0);
}

TEST_CASE("mixture measure json round-trips nested components") {
  const MeasureSpec m = mixture_measure(
      {0.5, 0.5},
      {uniform_interval(-1.5, -0.5), uniform_interval(0.5, 1.5)});
  const MeasureSpec back = measure_from_json(measure_to_json(m));
  CHECK(back.kind == MeasureKind::Mixture);
  REQUIRE(back.components.size() == 2);
  CHECK(back.weights[0] == 0.5);
  CHECK(back.components[1].box.lo[0] == 0.5);
}

TEST_CASE("measure parsing rejects malformed documents") {
  CHECK_THROWS_AS(measure_from_json("not json"), ConfigError);
  CHECK_THROWS_AS(measure_from_json("{\"type\":\"gaussian\"}"), ConfigError);
  CHECK_THROWS_AS(measure_from_json("{\"type\":\"pareto\"}"), ConfigError);
  CHECK_THROWS_AS(
      measure_from_json(
          "{\"type\":\"mixture\",\"weights\":[1.0],\"components\":[]}"),
      ConfigError);

  // Non-positive-definite covariance fails with a message naming the matrix.
  try {
    measure_from_json(
        "{\"type\":\"gaussian\",\"mean\":[0,0],"
        "\"cov\":[[1.0,2.0],[2.0,1.0]]}");
    CHECK(false);
  } catch (const ConfigError& err) {
    CHECK(std::string(err.what()).find("positive definite") !=
          std::string::npos);
  }
}

TEST_CASE("pencil interpolant json exposes sigma_z and factors") {
  const auto interp = build_1d_gaussian(-2.0, 0.6, 3.0, 1.5);
  const json j = json::parse(interpolant_to_json(interp));
  CHECK(j.at("schedule") == "sqrt_bridge");
  CHECK(j.at("coupling").at("kind") == "independent");
  const double sigma_z = j.at("aux").at("sigma_z")[0][0].get<double>();
  CHECK(std::abs(sigma_z - 0.9) <= 1e-12);
  const double lambda = j.at("aux").at("pencil").at("lambda")[0].get<double>();
  CHECK(std::abs(lambda - 6.25) <= 1e-12);
  CHECK(j.at("aux").at("pure_affine") == false);
}

TEST_CASE("same covariance interpolant echoes the shared covariance as q") {
  Mat sigma(2, 2);
  sigma << 1.0, 0.3, 0.3, 1.0;
  const auto interp =
      build_same_cov_gaussian(to_vec({-1.0, 2.0}), to_vec({3.0, 1.0}), sigma);
  const json j = json::parse(interpolant_to_json(interp));
  CHECK(j.at("schedule") == "sqrt_bridge");
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      const double got = j.at("aux").at("sigma_z")[r][c].get<double>();
      CHECK(std::abs(got - sigma(r, c)) <= 1e-12);
    }
  }
}

TEST_CASE("interpolant json round-trip preserves sampling") {
  const auto interp = build_1d_gaussian(-2.0, 0.6, 3.0, 1.5);
  const auto back = interpolant_from_json(interpolant_to_json(interp));
  CHECK(back.schedule().kind() == ScheduleKind::SqrtBridge);

  const Vec times = uniform_grid(11);
  const PathEnsemble a = sample_paths(interp, 50, times, 99);
  const PathEnsemble b = sample_paths(back, 50, times, 99);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("deterministic coupling json round-trips the map") {
  const auto T = gaussian_ot_map(to_vec({0.0}), Mat::Constant(1, 1, 1.0),
                                 to_vec({2.0}), Mat::Constant(1, 1, 4.0));
  const auto interp =
      build_affine(Coupling::deterministic(gaussian_measure_1d(0.0, 1.0), T));
  const json j = json::parse(interpolant_to_json(interp));
  CHECK(j.at("coupling").at("kind") == "deterministic");
  CHECK(j.at("aux").at("pure_affine") == true);

  const auto back = interpolant_from_json(interpolant_to_json(interp));
  CHECK(back.coupling().kind() == CouplingKind::Deterministic);
  CHECK(std::abs(back.coupling().map().A(0, 0) - 2.0) <= 1e-12);
  CHECK(std::abs(back.coupling().map().shift[0] - 2.0) <= 1e-12);
}

TEST_CASE("collapse and polynomial schedules round-trip") {
  const auto collapse = build_collapse(
      0.3, Coupling::independent(gaussian_measure_1d(0.0, 1.0),
                                 gaussian_measure_1d(0.0, 1.0)));
  const auto back = interpolant_from_json(interpolant_to_json(collapse));
  CHECK(back.schedule().kind() == ScheduleKind::Collapse);
  CHECK(back.schedule().tau() == 0.3);

  const auto poly = GeneralizedInterpolant(
      Schedule::polynomial({1.0, -1.0}, {0.0, 1.0}, {}),
      Coupling::independent(gaussian_measure_1d(0.0, 1.0),
                            gaussian_measure_1d(1.0, 0.5)));
  const auto poly_back = interpolant_from_json(interpolant_to_json(poly));
  CHECK(poly_back.schedule().kind() == ScheduleKind::Polynomial);
  const auto s = poly_back.schedule().at(0.25);
  CHECK(std::abs(s.a - 0.75) <= 1e-15);
  CHECK(std::abs(s.b - 0.25) <= 1e-15);
}

TEST_CASE("joint couplings refuse to serialize") {
  const auto sampler = [](SampleRng& rng, Vec& x0, Vec& x1) {
    x0 = Vec::Constant(1, rng.gaussian());
    x1 = x0;
  };
  const auto interp = build_affine(
      Coupling::joint(gaussian_measure_1d(0.0, 1.0),
                      gaussian_measure_1d(0.0, 1.0), sampler));
  CHECK_THROWS_AS(interpolant_to_json(interp), ConfigError);
}

TEST_CASE("path csv has one row per path and node and reruns byte identical") {
  const auto interp = build_1d_gaussian(-2.0, 0.6, 3.0, 1.5);
  const PathEnsemble e = sample_paths(interp, 4, uniform_grid(5), 21);

  std::ostringstream first;
  write_paths_csv(first, e);
  const std::string text = first.str();
  CHECK(text.rfind("path_id,t,x_1\n", 0) == 0);
  CHECK(count_lines(text) == 1 + 4 * 5);

  std::ostringstream second;
  write_paths_csv(second, e);
  CHECK(second.str() == text);

  // The 17 digit fields reproduce the stored doubles exactly.
  const std::size_t start = text.find('\n') + 1;
  const std::string line = text.substr(start, text.find('\n', start) - start);
  const std::string field = line.substr(line.rfind(',') + 1);
  CHECK(std::strtod(field.c_str(), nullptr) == e.at(0, 0, 0));
}

TEST_CASE("trajectory csv carries the truncated flag") {
  const auto interp = build_1d_gaussian(-2.0, 0.6, 3.0, 1.5);
  const auto field = VelocityField::analytic(interp);
  Mat x0(2, 1);
  x0 << -2.5, -1.5;
  const FlowTrajectories flow = integrate_flow(field, x0, uniform_grid(9));

  std::ostringstream os;
  write_trajectories_csv(os, flow);
  const std::string text = os.str();
  CHECK(text.rfind("traj_id,t,x_1,truncated\n", 0) == 0);
  CHECK(count_lines(text) == 1 + 2 * 9);
  CHECK(text.find(",0\n") != std::string::npos);
}

TEST_CASE("stats csv emits a full header and one row per cell") {
  const auto interp = build_1d_gaussian(0.0, 1.0, 1.0, 1.0);
  const PathEnsemble e = sample_paths(interp, 4000, uniform_grid(41), 31);
  const ConditionalStats stats = empirical_conditional_stats(e, 20);

  std::ostringstream os;
  write_stats_csv(os, stats);
  const std::string text = os.str();
  CHECK(text.rfind("t,x_1,rho,v_1,a_1,C_11,Pi_11,se_v_1,se_a_1,se_Pi_11,"
                   "se_rho,n_eff,valid\n",
                   0) == 0);
  CHECK(count_lines(text) == 1 + static_cast<int>(stats.n_cells()));
}

TEST_CASE("crossing report json carries the contract keys") {
  CrossingReport report;
  report.occupancy.p_cross = std::numeric_limits<double>::quiet_NaN();
  report.occupancy.p_enter = std::numeric_limits<double>::quiet_NaN();
  report.bound = 0.125;
  report.delta_star = 0.1;
  report.epsilon = 0.01;
  report.w0w1 = 0.25;
  report.d_constant = 2.0;
  report.epsilon0 = 0.05;
  report.terms = {0.1, 0.02, 0.004, 0.001};
  report.exponents = {1.0 / 6.0, 0.25, 0.5, 1.0};
  report.zone.kind = ZoneKind::Trapezoid;
  report.zone.a0 = -0.5;
  report.zone.b0 = 0.5;
  report.zone.a1 = -1.0;
  report.zone.b1 = 1.0;
  report.verdict = Verdict::Violated;

  const json j = json::parse(crossing_report_to_json(report));
  CHECK(j.at("p_cross").is_null());  // NaN until an ensemble is measured
  CHECK(j.at("bound") == 0.125);
  CHECK(j.at("delta_star") == 0.1);
  CHECK(j.at("epsilon") == 0.01);
  CHECK(j.at("w0w1") == 0.25);
  CHECK(j.at("terms").size() == 4);
  CHECK(j.at("verdict") == "violated");
  CHECK(j.at("zone").at("kind") == "trapezoid");

  report.occupancy.p_cross = 0.125;
  report.occupancy.p_enter = 0.25;
  report.occupancy.se_cross = 0.01;
  report.occupancy.n = 1000;
  const json j2 = json::parse(crossing_report_to_json(report));
  CHECK(j2.at("p_cross") == 0.125);
  CHECK(j2.at("se") == 0.01);
}
