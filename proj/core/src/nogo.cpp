#include "sflow/nogo.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "sflow/errors.hpp"

namespace sflow {

namespace {

void require_path(const Vec& times, const Vec& values) {
  if (times.size() != values.size()) {
    throw ConfigError("path times and values must have equal length");
  }
  if (times.size() < 2) {
    throw ConfigError("path needs at least two nodes");
  }
  for (Eigen::Index i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) {
      throw ConfigError("path times must be strictly increasing");
    }
  }
}

void require_scalar_ensemble(const PathEnsemble& e) {
  if (e.dim != 1) {
    throw ConfigError("path statistics require one-dimensional ensembles");
  }
  if (e.values.rows() < 1) {
    throw ConfigError("ensemble is empty");
  }
}

Vec ensemble_path(const PathEnsemble& e, Eigen::Index p) {
  return e.values.row(p).transpose();
}

double binomial_se(double p, double n) {
  return std::sqrt(std::max(p * (1.0 - p), 0.0) / n);
}

}  // namespace

ZoneSlice NoGoZone::slice(double t) const {
  return ZoneSlice{(1.0 - t) * a0 + t * a1, (1.0 - t) * b0 + t * b1};
}

int upcrossing_count(const Vec& values, double a, double b) {
  if (!(a < b)) {
    throw ConfigError("up-crossing interval needs a < b");
  }
  int count = 0;
  bool armed = false;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!armed) {
      if (values[i] <= a) {
        armed = true;
      }
    } else if (values[i] >= b) {
      ++count;
      armed = false;
    }
  }
  return count;
}

int upcrossing_count_timevarying(const Vec& times, const Vec& values,
                                 const NoGoZone& zone) {
  require_path(times, values);
  int count = 0;
  bool armed = false;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const ZoneSlice s = zone.slice(times[i]);
    if (!(s.a < s.b)) {
      throw ConfigError("zone slice is degenerate");
    }
    if (!armed) {
      if (values[i] <= s.a) {
        armed = true;
      }
    } else if (values[i] >= s.b) {
      ++count;
      armed = false;
    }
  }
  return count;
}

ModulusValue modulus_of_continuity(const Vec& times, const Vec& values,
                                   double delta) {
  require_path(times, values);
  if (!(delta > 0.0)) {
    throw ConfigError("modulus needs delta > 0");
  }
  ModulusValue out;
  std::deque<Eigen::Index> maxq;
  std::deque<Eigen::Index> minq;
  Eigen::Index lo = 0;
  for (Eigen::Index r = 0; r < times.size(); ++r) {
    while (!maxq.empty() && values[maxq.back()] <= values[r]) {
      maxq.pop_back();
    }
    maxq.push_back(r);
    while (!minq.empty() && values[minq.back()] >= values[r]) {
      minq.pop_back();
    }
    minq.push_back(r);
    while (times[r] - times[lo] > delta) {
      if (maxq.front() == lo) {
        maxq.pop_front();
      }
      if (minq.front() == lo) {
        minq.pop_front();
      }
      ++lo;
    }
    if (lo == r && r > 0) {
      out.value = std::max(out.value, std::abs(values[r] - values[r - 1]));
      out.below_grid = true;
    } else {
      out.value =
          std::max(out.value, values[maxq.front()] - values[minq.front()]);
    }
  }
  return out;
}

double ConcentrationFit::envelope(double delta, double theta) const {
  return a_const * std::pow(delta, alpha) / std::pow(theta, beta);
}

Mat exceedance_table(const PathEnsemble& e, const Vec& deltas,
                     const Vec& thetas) {
  require_scalar_ensemble(e);
  if (deltas.size() < 1 || thetas.size() < 1) {
    throw ConfigError("exceedance table needs nonempty grids");
  }
  for (Eigen::Index i = 0; i < deltas.size(); ++i) {
    if (!(deltas[i] > 0.0)) {
      throw ConfigError("delta grid must be positive");
    }
  }
  for (Eigen::Index j = 0; j < thetas.size(); ++j) {
    if (!(thetas[j] > 0.0)) {
      throw ConfigError("theta grid must be positive");
    }
  }
  const Eigen::Index n_paths = e.values.rows();
  Mat counts = Mat::Zero(deltas.size(), thetas.size());
  for (Eigen::Index p = 0; p < n_paths; ++p) {
    const Vec path = ensemble_path(e, p);
    for (Eigen::Index i = 0; i < deltas.size(); ++i) {
      const double kappa = modulus_of_continuity(e.times, path, deltas[i]).value;
      for (Eigen::Index j = 0; j < thetas.size(); ++j) {
        if (kappa >= thetas[j]) {
          counts(i, j) += 1.0;
        }
      }
    }
  }
  return counts / static_cast<double>(n_paths);
}

ConcentrationFit concentration_fit(const PathEnsemble& e, const Vec& deltas,
                                   const Vec& thetas) {
  if (e.values.rows() < 1000) {
    throw ConfigError("concentration fit needs at least 1000 paths");
  }
  if (deltas.size() < 4 || thetas.size() < 4) {
    throw ConfigError("concentration fit needs at least 4 grid points per axis");
  }
  const Mat table = exceedance_table(e, deltas, thetas);

  std::vector<double> log_p;
  std::vector<double> log_d;
  std::vector<double> log_t;
  for (Eigen::Index i = 0; i < deltas.size(); ++i) {
    for (Eigen::Index j = 0; j < thetas.size(); ++j) {
      if (table(i, j) > 0.0) {
        log_p.push_back(std::log(table(i, j)));
        log_d.push_back(std::log(deltas[i]));
        log_t.push_back(std::log(thetas[j]));
      }
    }
  }
  const Eigen::Index m = static_cast<Eigen::Index>(log_p.size());
  if (m < 3) {
    throw NumericalError("too few nonzero exceedance cells to fit");
  }

  Mat design(m, 3);
  Vec response(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    design(r, 0) = 1.0;
    design(r, 1) = log_d[static_cast<std::size_t>(r)];
    design(r, 2) = -log_t[static_cast<std::size_t>(r)];
    response[r] = log_p[static_cast<std::size_t>(r)];
  }
  const Vec coef = design.colPivHouseholderQr().solve(response);

  ConcentrationFit fit;
  fit.alpha = std::max(coef[1], 1e-9);
  fit.beta = std::max(coef[2], 1e-9);
  fit.delta_grid = deltas;
  fit.theta_grid = thetas;
  fit.cells_used = static_cast<int>(m);

  const double ss_total = (response.array() - response.mean()).square().sum();
  const double ss_resid = (design * coef - response).squaredNorm();
  fit.r_squared = ss_total > 0.0 ? 1.0 - ss_resid / ss_total : 1.0;

  // Certified envelope: inflate A until the bound covers every nonzero cell.
  double a_env = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    const double needed =
        std::exp(log_p[static_cast<std::size_t>(r)] -
                 fit.alpha * log_d[static_cast<std::size_t>(r)] +
                 fit.beta * log_t[static_cast<std::size_t>(r)]);
    a_env = std::max(a_env, needed);
  }
  fit.a_const = a_env;
  return fit;
}

CrossingBound crossing_bound(double epsilon, double gap,
                             const ConcentrationFit& fit) {
  if (!(epsilon > 0.0) || !(gap > 0.0)) {
    throw ConfigError("crossing bound needs epsilon > 0 and gap > 0");
  }
  if (!(fit.alpha > 0.0) || !(fit.beta > 0.0) || !(fit.a_const > 0.0)) {
    throw ConfigError("crossing bound needs a fitted concentration envelope");
  }
  const double a = fit.alpha;
  const double b = fit.beta;
  CrossingBound out;
  out.delta_star = std::pow(std::pow(gap, b) * epsilon / a, 1.0 / (a + 1.0));
  out.bound = fit.a_const * (a + 1.0) / std::pow(a, a / (a + 1.0)) *
              std::pow(epsilon, a / (a + 1.0)) / std::pow(gap, b / (a + 1.0));
  return out;
}

NoGoZone build_nogo_static(Interval s0, Interval s1) {
  if (!(s0.lo < s0.hi) || !(s1.lo < s1.hi)) {
    throw ConfigError("support intervals must be nonempty");
  }
  if (!(s0.hi < s1.lo)) {
    throw ConfigError("support intervals must be strictly separated");
  }
  NoGoZone zone;
  zone.kind = ZoneKind::StaticInterval;
  zone.a0 = zone.a1 = s0.hi;
  zone.b0 = zone.b1 = s1.lo;
  return zone;
}

NoGoZone build_lowgo_trapezoid(const MeasureSpec& p0,
                               const SupportGeometry& geometry) {
  if (p0.dim() != 1) {
    throw ConfigError("trapezoid zone needs a one-dimensional source");
  }
  if (geometry.S0.lo.size() != 1 || geometry.S1.lo.size() != 1) {
    throw ConfigError("trapezoid zone needs one-dimensional support components");
  }
  const double s0 = geometry.S0.hi[0];
  const double s1 = geometry.S1.lo[0];
  if (!(s0 < s1)) {
    throw ConfigError("support components must be strictly separated");
  }
  if (!(geometry.w0 > 0.0) || !(geometry.w1 > 0.0) ||
      !(geometry.w0 + geometry.w1 < 1.0)) {
    throw ConfigError("component masses must satisfy 0 < w0, w1 and w0 + w1 < 1");
  }
  const double x0 = quantile_1d(p0, geometry.w0);
  const double x1 = quantile_1d(p0, 1.0 - geometry.w1);
  if (!(x0 < x1)) {
    throw ConfigError("source quantiles do not separate");
  }
  NoGoZone zone;
  zone.kind = ZoneKind::Trapezoid;
  zone.a0 = x0;
  zone.b0 = x1;
  zone.a1 = s0;
  zone.b1 = s1;
  return zone;
}

OccupancyEstimate empirical_crossing_probability(const PathEnsemble& e,
                                                 const NoGoZone& zone) {
  require_scalar_ensemble(e);
  const Eigen::Index nt = e.times.size();
  if (e.times[0] > 1e-9 || e.times[nt - 1] < 1.0 - 1e-9) {
    throw ConfigError("ensemble times must cover [0, 1]");
  }
  const Eigen::Index n = e.values.rows();
  std::int64_t crossed = 0;
  std::int64_t entered = 0;
  for (Eigen::Index p = 0; p < n; ++p) {
    const Vec path = ensemble_path(e, p);
    const bool cross = upcrossing_count_timevarying(e.times, path, zone) >= 1;
    bool inside = false;
    for (Eigen::Index i = 0; i < nt && !inside; ++i) {
      const ZoneSlice s = zone.slice(e.times[i]);
      inside = path[i] > s.a && path[i] < s.b;
    }
    crossed += cross ? 1 : 0;
    entered += (cross || inside) ? 1 : 0;
  }
  OccupancyEstimate out;
  out.n = n;
  const double nn = static_cast<double>(n);
  out.p_cross = static_cast<double>(crossed) / nn;
  out.p_enter = static_cast<double>(entered) / nn;
  out.se_cross = binomial_se(out.p_cross, nn);
  out.se_enter = binomial_se(out.p_enter, nn);
  return out;
}

double b_constant(double alpha, double beta, double gamma, double a_const,
                  double c_const) {
  if (!(alpha > 0.0) || !(beta > 0.0) || !(gamma > 0.0) || !(a_const > 0.0) ||
      !(c_const > 0.0)) {
    throw ConfigError("b_constant needs positive parameters");
  }
  const double q = beta / (alpha + 1.0);
  const double ea = gamma / (gamma + q);
  const double eq = q / (gamma + q);
  const double bracket =
      std::pow((beta / alpha + 1.0) / gamma, ea) + std::pow(gamma / q, eq);
  return bracket * std::pow(c_const, eq) * std::pow(2.0 * a_const, ea);
}

CrossingReport impossibility_certificate(const MeasureSpec& p0,
                                         const MeasureSpec& p1,
                                         const SupportGeometry& geometry,
                                         const ConcentrationFit& fit) {
  if (p0.dim() != 1 || p1.dim() != 1) {
    throw ConfigError("certificate needs one-dimensional measures");
  }
  if (!(fit.alpha > 0.0) || !(fit.beta > 0.0) || !(fit.a_const > 0.0)) {
    throw ConfigError("certificate needs a fitted concentration envelope");
  }
  const double alpha = fit.alpha;
  const double beta = fit.beta;
  const double a_const = fit.a_const;
  const FrostmanBound fb = frostman_constant(sup_density_bound(p0), 1);

  CrossingReport report;
  // A fully collapsed target rounds w0 + w1 up to 1 and the source quantiles
  // coincide. Rescale the masses for the zone geometry only; the bound below
  // keeps the exact values.
  SupportGeometry zone_geometry = geometry;
  const double total = zone_geometry.w0 + zone_geometry.w1;
  if (!(total < 1.0 - 1e-9)) {
    const double factor = (1.0 - 1e-9) / total;
    zone_geometry.w0 *= factor;
    zone_geometry.w1 *= factor;
  }
  report.zone = build_lowgo_trapezoid(p0, zone_geometry);
  const double gap = report.zone.b1 - report.zone.a1;

  const double b_term = b_constant(alpha, beta, fb.gamma, a_const, fb.C);
  const double prefactor = std::pow(2.0, beta / (alpha + 1.0)) * a_const /
                           std::pow(gap, beta / (alpha + 1.0));
  report.d_constant = std::max({b_term, prefactor, 1.0});

  report.exponents = {alpha * alpha * fb.gamma /
                          (2.0 * beta * fb.gamma * (alpha + 1.0) +
                           2.0 * beta * beta),
                      alpha / (2.0 * (alpha + 1.0)), alpha / (alpha + 1.0),
                      1.0};
  report.epsilon = geometry.epsilon;
  report.delta_star = std::pow(report.epsilon, alpha / (2.0 * beta));
  report.w0w1 = geometry.w0 * geometry.w1;

  const auto bound_at = [&](double eps) {
    double sum = 0.0;
    for (double e : report.exponents) {
      sum += std::pow(eps, e);
    }
    return report.d_constant * sum;
  };
  for (std::size_t i = 0; i < 4; ++i) {
    report.terms[i] =
        report.d_constant * std::pow(report.epsilon, report.exponents[i]);
  }
  report.bound = bound_at(report.epsilon);
  report.verdict =
      report.w0w1 > report.bound ? Verdict::Violated : Verdict::Consistent;

  // Largest epsilon still contradicted; the bound grows monotonically.
  if (report.w0w1 >= bound_at(1.0)) {
    report.epsilon0 = 1.0;
  } else if (report.w0w1 <= bound_at(1e-12)) {
    report.epsilon0 = 0.0;
  } else {
    double lo = std::log(1e-12);
    double hi = 0.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (bound_at(std::exp(mid)) < report.w0w1) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    report.epsilon0 = std::exp(0.5 * (lo + hi));
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  report.occupancy =
      OccupancyEstimate{nan, nan, nan, nan, 0};
  return report;
}

}  // namespace sflow
