#include "sflow/interpolants.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "sflow/errors.hpp"

namespace sflow {

namespace {

double poly_eval(const std::vector<double>& c, double t) {
  double v = 0.0;
  for (std::size_t k = c.size(); k-- > 0;) {
    v = v * t + c[k];
  }
  return v;
}

double poly_eval_d1(const std::vector<double>& c, double t) {
  double v = 0.0;
  for (std::size_t k = c.size(); k-- > 1;) {
    v = v * t + k * c[k];
  }
  return v;
}

double poly_eval_d2(const std::vector<double>& c, double t) {
  double v = 0.0;
  for (std::size_t k = c.size(); k-- > 2;) {
    v = v * t + k * (k - 1.0) * c[k];
  }
  return v;
}

// Assembles all smooth products from raw weight values and derivatives.
ScheduleProducts products_from_raw(double a, double da, double d2a, double b,
                                   double db, double d2b, double c, double dc,
                                   double d2c) {
  ScheduleProducts p;
  p.a = a;
  p.b = b;
  p.c = c;
  p.a2 = a * a;
  p.b2 = b * b;
  p.c2 = c * c;
  p.ab = a * b;
  p.da2 = 2.0 * a * da;
  p.db2 = 2.0 * b * db;
  p.dc2 = 2.0 * c * dc;
  p.dab = da * b + a * db;
  p.d2a2 = 2.0 * (da * da + a * d2a);
  p.d2b2 = 2.0 * (db * db + b * d2b);
  p.d2c2 = 2.0 * (dc * dc + c * d2c);
  p.d2ab = d2a * b + 2.0 * da * db + a * d2b;
  p.da_b = da * b;
  p.a_db = a * db;
  p.d_da_b = d2a * b + da * db;
  p.d_a_db = da * db + a * d2b;
  return p;
}

}  // namespace

Schedule Schedule::linear_affine() {
  Schedule s;
  s.kind_ = ScheduleKind::LinearAffine;
  return s;
}

Schedule Schedule::sqrt_bridge() {
  Schedule s;
  s.kind_ = ScheduleKind::SqrtBridge;
  return s;
}

Schedule Schedule::collapse(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw ConfigError("Schedule::collapse: tau must lie in (0,1)");
  }
  Schedule s;
  s.kind_ = ScheduleKind::Collapse;
  s.tau_ = tau;
  return s;
}

Schedule Schedule::polynomial(std::vector<double> a, std::vector<double> b,
                              std::vector<double> c) {
  if (a.empty() || b.empty()) {
    throw ConfigError("Schedule::polynomial: a and b need coefficients");
  }
  Schedule s;
  s.kind_ = ScheduleKind::Polynomial;
  s.pa_ = std::move(a);
  s.pb_ = std::move(b);
  s.pc_ = std::move(c);
  const double tol = 1e-14;
  if (std::abs(poly_eval(s.pa_, 0.0) - 1.0) > tol ||
      std::abs(poly_eval(s.pa_, 1.0)) > tol ||
      std::abs(poly_eval(s.pb_, 0.0)) > tol ||
      std::abs(poly_eval(s.pb_, 1.0) - 1.0) > tol ||
      std::abs(poly_eval(s.pc_, 0.0)) > tol ||
      std::abs(poly_eval(s.pc_, 1.0)) > tol) {
    throw ConfigError(
        "Schedule::polynomial: boundary conditions a0=1, a1=0, b0=0, b1=1, "
        "c0=c1=0 violated");
  }
  return s;
}

double Schedule::tau() const {
  if (kind_ != ScheduleKind::Collapse) {
    throw ConfigError("Schedule::tau: only the collapse form has tau");
  }
  return tau_;
}

ScheduleEval Schedule::at(double t) const {
  switch (kind_) {
    case ScheduleKind::LinearAffine:
      return {1.0 - t, t, 0.0};
    case ScheduleKind::SqrtBridge:
      return {1.0 - t, t, std::sqrt(std::max(2.0 * t * (1.0 - t), 0.0))};
    case ScheduleKind::Collapse: {
      const double a = t < tau_ ? 1.0 - t / tau_ : 0.0;
      const double b = t > tau_ ? (t - tau_) / (1.0 - tau_) : 0.0;
      return {a, b, 0.0};
    }
    case ScheduleKind::Polynomial:
      return {poly_eval(pa_, t), poly_eval(pb_, t), poly_eval(pc_, t)};
  }
  return {0.0, 0.0, 0.0};
}

ScheduleDeriv Schedule::d1(double t) const {
  switch (kind_) {
    case ScheduleKind::LinearAffine:
      return {-1.0, 1.0, 0.0, true};
    case ScheduleKind::SqrtBridge: {
      const double c = std::sqrt(std::max(2.0 * t * (1.0 - t), 0.0));
      double dc;
      if (c > 0.0) {
        dc = (1.0 - 2.0 * t) / c;
      } else {
        // One-sided limits at the endpoints.
        dc = t < 0.5 ? std::numeric_limits<double>::infinity()
                     : -std::numeric_limits<double>::infinity();
      }
      return {-1.0, 1.0, dc, true};
    }
    case ScheduleKind::Collapse: {
      if (t == tau_) {
        return {0.0, 0.0, 0.0, false};
      }
      const double da = t < tau_ ? -1.0 / tau_ : 0.0;
      const double db = t > tau_ ? 1.0 / (1.0 - tau_) : 0.0;
      return {da, db, 0.0, true};
    }
    case ScheduleKind::Polynomial:
      return {poly_eval_d1(pa_, t), poly_eval_d1(pb_, t), poly_eval_d1(pc_, t),
              true};
  }
  return {0.0, 0.0, 0.0, true};
}

ScheduleDeriv Schedule::d2(double t) const {
  switch (kind_) {
    case ScheduleKind::LinearAffine:
      return {0.0, 0.0, 0.0, true};
    case ScheduleKind::SqrtBridge: {
      const double c2 = std::max(2.0 * t * (1.0 - t), 0.0);
      const double c = std::sqrt(c2);
      double d2c;
      if (c > 0.0) {
        const double dc = (1.0 - 2.0 * t) / c;
        d2c = (-2.0 - dc * dc) / c;
      } else {
        d2c = -std::numeric_limits<double>::infinity();
      }
      return {0.0, 0.0, d2c, true};
    }
    case ScheduleKind::Collapse:
      if (t == tau_) {
        return {0.0, 0.0, 0.0, false};
      }
      return {0.0, 0.0, 0.0, true};
    case ScheduleKind::Polynomial:
      return {poly_eval_d2(pa_, t), poly_eval_d2(pb_, t), poly_eval_d2(pc_, t),
              true};
  }
  return {0.0, 0.0, 0.0, true};
}

ScheduleProducts Schedule::products(double t) const {
  switch (kind_) {
    case ScheduleKind::LinearAffine:
      return products_from_raw(1.0 - t, -1.0, 0.0, t, 1.0, 0.0, 0.0, 0.0, 0.0);
    case ScheduleKind::SqrtBridge: {
      ScheduleProducts p =
          products_from_raw(1.0 - t, -1.0, 0.0, t, 1.0, 0.0, 0.0, 0.0, 0.0);
      // c^2 = 2t(1-t) handled directly; the raw dc is singular at the
      // endpoints but these products are polynomials in t.
      p.c = std::sqrt(std::max(2.0 * t * (1.0 - t), 0.0));
      p.c2 = 2.0 * t * (1.0 - t);
      p.dc2 = 2.0 - 4.0 * t;
      p.d2c2 = -4.0;
      return p;
    }
    case ScheduleKind::Collapse: {
      const double a = t < tau_ ? 1.0 - t / tau_ : 0.0;
      const double da = t < tau_ ? -1.0 / tau_ : 0.0;
      const double b = t > tau_ ? (t - tau_) / (1.0 - tau_) : 0.0;
      const double db = t > tau_ ? 1.0 / (1.0 - tau_) : 0.0;
      return products_from_raw(a, da, 0.0, b, db, 0.0, 0.0, 0.0, 0.0);
    }
    case ScheduleKind::Polynomial:
      return products_from_raw(poly_eval(pa_, t), poly_eval_d1(pa_, t),
                               poly_eval_d2(pa_, t), poly_eval(pb_, t),
                               poly_eval_d1(pb_, t), poly_eval_d2(pb_, t),
                               poly_eval(pc_, t), poly_eval_d1(pc_, t),
                               poly_eval_d2(pc_, t));
  }
  return ScheduleProducts{};
}

bool Schedule::pure_affine() const {
  switch (kind_) {
    case ScheduleKind::LinearAffine:
    case ScheduleKind::Collapse:
      return true;
    case ScheduleKind::SqrtBridge:
      return false;
    case ScheduleKind::Polynomial:
      return std::all_of(pc_.begin(), pc_.end(),
                         [](double c) { return c == 0.0; });
  }
  return true;
}

Coupling Coupling::independent(MeasureSpec p0, MeasureSpec p1) {
  if (p0.dim() != p1.dim()) {
    throw ConfigError("Coupling::independent: endpoint dimensions differ");
  }
  Coupling c;
  c.kind_ = CouplingKind::Independent;
  c.p0_ = std::move(p0);
  c.p1_ = std::move(p1);
  return c;
}

Coupling Coupling::independent(MeasureSpec p0, MeasureSpec p1, MeasureSpec q) {
  Coupling c = independent(std::move(p0), std::move(p1));
  if (q.dim() != c.p0_.dim()) {
    throw ConfigError("Coupling::independent: auxiliary dimension differs");
  }
  c.aux_ = std::move(q);
  return c;
}

Coupling Coupling::deterministic(MeasureSpec p0, AffineMap T) {
  const int d = p0.dim();
  if (T.A.rows() != d || T.A.cols() != d || T.shift.size() != d) {
    throw ConfigError("Coupling::deterministic: map shape mismatch");
  }
  Coupling c;
  c.kind_ = CouplingKind::Deterministic;
  c.p0_ = std::move(p0);
  c.map_ = std::move(T);
  if (c.p0_.kind == MeasureKind::Gaussian) {
    const AffineMap& m = *c.map_;
    Mat pushed = m.A * c.p0_.cov * m.A.transpose();
    pushed = 0.5 * (pushed + pushed.transpose());
    Eigen::LLT<Mat> llt(pushed);
    if (llt.info() == Eigen::Success) {
      c.p1_ = gaussian_measure(m.shift + m.A * c.p0_.mean, pushed);
    }
  }
  return c;
}

Coupling Coupling::joint(MeasureSpec p0, MeasureSpec p1, JointSampler sampler) {
  if (p0.dim() != p1.dim()) {
    throw ConfigError("Coupling::joint: endpoint dimensions differ");
  }
  if (!sampler) {
    throw ConfigError("Coupling::joint: sampler must be callable");
  }
  Coupling c;
  c.kind_ = CouplingKind::Joint;
  c.p0_ = std::move(p0);
  c.p1_ = std::move(p1);
  c.sampler_ = std::move(sampler);
  return c;
}

int Coupling::dim() const { return p0_.dim(); }

const MeasureSpec& Coupling::p1() const {
  if (!p1_) {
    throw ConfigError(
        "Coupling::p1: endpoint law unavailable (non-Gaussian deterministic "
        "pushforward)");
  }
  return *p1_;
}

const AffineMap& Coupling::map() const {
  if (!map_) {
    throw ConfigError("Coupling::map: not a deterministic coupling");
  }
  return *map_;
}

void Coupling::draw(SampleRng& rng, Vec& x0, Vec& x1, Vec& z) const {
  const int d = dim();
  x0.resize(d);
  x1.resize(d);
  switch (kind_) {
    case CouplingKind::Independent:
      draw_sample(p0_, rng, x0.data());
      draw_sample(*p1_, rng, x1.data());
      break;
    case CouplingKind::Deterministic:
      draw_sample(p0_, rng, x0.data());
      x1 = (*map_)(x0);
      break;
    case CouplingKind::Joint:
      sampler_(rng, x0, x1);
      break;
  }
  if (aux_) {
    z.resize(d);
    draw_sample(*aux_, rng, z.data());
  } else {
    z.resize(0);
  }
}

GeneralizedInterpolant::GeneralizedInterpolant(Schedule schedule,
                                               Coupling coupling)
    : schedule_(std::move(schedule)), coupling_(std::move(coupling)) {
  if (!schedule_.pure_affine() && !coupling_.aux()) {
    throw ConfigError(
        "GeneralizedInterpolant: schedule carries auxiliary noise but the "
        "coupling has no auxiliary measure");
  }
}

int GeneralizedInterpolant::aux_dim() const {
  return coupling_.aux() ? coupling_.dim() : 0;
}

int GeneralizedInterpolant::dim() const { return coupling_.dim(); }

void GeneralizedInterpolant::draw_endpoints(std::uint64_t seed,
                                            std::int64_t index, Vec& x0,
                                            Vec& x1, Vec& z) const {
  SampleRng rng(seed, static_cast<std::uint64_t>(index));
  coupling_.draw(rng, x0, x1, z);
}

Vec GeneralizedInterpolant::value(double t, const Vec& x0, const Vec& x1,
                                  const Vec& z) const {
  const ScheduleEval s = schedule_.at(t);
  Vec x = s.a * x0 + s.b * x1;
  if (z.size() > 0 && s.c != 0.0) {
    x += s.c * z;
  }
  return x;
}

void GeneralizedInterpolant::sample_path(std::uint64_t seed,
                                         std::int64_t index, const Vec& times,
                                         double* out) const {
  const int d = dim();
  Vec x0, x1, z;
  draw_endpoints(seed, index, x0, x1, z);
  for (Eigen::Index k = 0; k < times.size(); ++k) {
    const ScheduleEval s = schedule_.at(times[k]);
    for (int j = 0; j < d; ++j) {
      double v = s.a * x0[j] + s.b * x1[j];
      if (z.size() > 0) {
        v += s.c * z[j];
      }
      out[k * d + j] = v;
    }
  }
}

BrownianBridgeProcess::BrownianBridgeProcess(MeasureSpec p0, MeasureSpec p1)
    : p0_(std::move(p0)), p1_(std::move(p1)) {
  if (p0_.dim() != p1_.dim()) {
    throw ConfigError("BrownianBridgeProcess: endpoint dimensions differ");
  }
}

int BrownianBridgeProcess::dim() const { return p0_.dim(); }

void BrownianBridgeProcess::sample_path(std::uint64_t seed, std::int64_t index,
                                        const Vec& times, double* out) const {
  const int d = dim();
  SampleRng rng(seed, static_cast<std::uint64_t>(index));
  Vec x0(d), x1(d);
  draw_sample(p0_, rng, x0.data());
  draw_sample(p1_, rng, x1.data());
  Vec w = Vec::Zero(d);
  double t_prev = 0.0;
  for (Eigen::Index k = 0; k < times.size(); ++k) {
    const double t = times[k];
    if (k == 0) {
      if (t > 0.0 && t < 1.0) {
        const double sd = std::sqrt(t * (1.0 - t));
        for (int j = 0; j < d; ++j) {
          w[j] = sd * rng.gaussian();
        }
      }
    } else if (t >= 1.0) {
      w.setZero();
    } else {
      // Conditional law of the bridge at t given its value at t_prev.
      const double shrink = (1.0 - t) / (1.0 - t_prev);
      const double sd = std::sqrt((t - t_prev) * shrink);
      for (int j = 0; j < d; ++j) {
        w[j] = w[j] * shrink + sd * rng.gaussian();
      }
    }
    for (int j = 0; j < d; ++j) {
      out[k * d + j] = (1.0 - t) * x0[j] + t * x1[j] + w[j];
    }
    t_prev = t;
  }
}

Vec uniform_grid(int n) {
  if (n < 2) {
    throw ConfigError("uniform_grid: need at least 2 nodes");
  }
  Vec t(n);
  for (int i = 0; i < n; ++i) {
    t[i] = static_cast<double>(i) / (n - 1);
  }
  return t;
}

PathEnsemble sample_paths(const PathSampler& process, std::int64_t n,
                          const Vec& times, std::uint64_t seed) {
  if (n < 1) {
    throw ConfigError("sample_paths: n must be >= 1");
  }
  if (times.size() < 2 || times[0] != 0.0 || times[times.size() - 1] != 1.0) {
    throw ConfigError("sample_paths: time grid must run from 0 to 1");
  }
  for (Eigen::Index k = 1; k < times.size(); ++k) {
    if (!(times[k] > times[k - 1])) {
      throw ConfigError("sample_paths: time grid must be strictly increasing");
    }
  }
  PathEnsemble e;
  e.times = times;
  e.dim = process.dim();
  e.seed = seed;
  e.values.resize(n, times.size() * e.dim);
  std::vector<double> row(times.size() * e.dim);
  for (std::int64_t i = 0; i < n; ++i) {
    process.sample_path(seed, i, times, row.data());
    for (std::size_t k = 0; k < row.size(); ++k) {
      e.values(i, static_cast<Eigen::Index>(k)) = row[k];
    }
  }
  return e;
}

PathDerivatives path_derivatives(const PathEnsemble& e) {
  const int nt = e.n_times();
  if (nt < 3) {
    throw ConfigError("path_derivatives: need at least 3 time nodes");
  }
  const int d = e.dim;
  PathDerivatives out;
  out.times = e.times;
  out.dim = d;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.velocities.setConstant(e.n_paths(), e.values.cols(), nan);
  out.accelerations.setConstant(e.n_paths(), e.values.cols(), nan);
  for (int k = 1; k + 1 < nt; ++k) {
    const double h1 = e.times[k] - e.times[k - 1];
    const double h2 = e.times[k + 1] - e.times[k];
    const auto fm = e.values.middleCols((k - 1) * d, d);
    const auto f0 = e.values.middleCols(k * d, d);
    const auto fp = e.values.middleCols((k + 1) * d, d);
    out.velocities.middleCols(k * d, d) =
        (-h2 / (h1 * (h1 + h2))) * fm + ((h2 - h1) / (h1 * h2)) * f0 +
        (h1 / (h2 * (h1 + h2))) * fp;
    out.accelerations.middleCols(k * d, d) =
        2.0 * (fm / (h1 * (h1 + h2)) - f0 / (h1 * h2) + fp / (h2 * (h1 + h2)));
  }
  return out;
}

GeneralizedInterpolant build_same_cov_gaussian(const Vec& m0, const Vec& m1,
                                               const Mat& sigma) {
  if (m0.size() != m1.size()) {
    throw ConfigError("build_same_cov_gaussian: mean dimensions differ");
  }
  MeasureSpec p0 = gaussian_measure(m0, sigma);
  MeasureSpec p1 = gaussian_measure(m1, sigma);
  MeasureSpec q = gaussian_measure(Vec::Zero(m0.size()), sigma);
  return GeneralizedInterpolant(
      Schedule::sqrt_bridge(),
      Coupling::independent(std::move(p0), std::move(p1), std::move(q)));
}

GeneralizedInterpolant build_1d_gaussian(double m0, double s0, double m1,
                                         double s1) {
  if (!(s0 > 0.0) || !(s1 > 0.0)) {
    throw ConfigError("build_1d_gaussian: standard deviations must be positive");
  }
  MeasureSpec q =
      gaussian_measure(Vec::Zero(1), Mat::Constant(1, 1, s0 * s1));
  return GeneralizedInterpolant(
      Schedule::sqrt_bridge(),
      Coupling::independent(gaussian_measure_1d(m0, s0),
                            gaussian_measure_1d(m1, s1), std::move(q)));
}

GeneralizedInterpolant build_multivariate_gaussian(const Vec& m0,
                                                   const Mat& sigma0,
                                                   const Vec& m1,
                                                   const Mat& sigma1) {
  if (m0.size() != m1.size() || sigma0.rows() != m0.size() ||
      sigma1.rows() != m1.size()) {
    throw ConfigError("build_multivariate_gaussian: shape mismatch");
  }
  const PencilFactors pf = pencil_decompose(sigma0, sigma1);
  Mat sigma_z =
      pf.V * pf.lambda.cwiseSqrt().asDiagonal() * pf.V.transpose();
  sigma_z = 0.5 * (sigma_z + sigma_z.transpose());
  MeasureSpec q = gaussian_measure(Vec::Zero(m0.size()), sigma_z);
  return GeneralizedInterpolant(
      Schedule::sqrt_bridge(),
      Coupling::independent(gaussian_measure(m0, sigma0),
                            gaussian_measure(m1, sigma1), std::move(q)));
}

GeneralizedInterpolant build_affine(Coupling coupling) {
  return GeneralizedInterpolant(Schedule::linear_affine(), std::move(coupling));
}

GeneralizedInterpolant build_collapse(double tau, Coupling coupling) {
  if (coupling.kind() != CouplingKind::Independent) {
    throw ConfigError("build_collapse: coupling must be independent");
  }
  return GeneralizedInterpolant(Schedule::collapse(tau), std::move(coupling));
}

BrownianBridgeProcess build_brownian_bridge(MeasureSpec p0, MeasureSpec p1) {
  return BrownianBridgeProcess(std::move(p0), std::move(p1));
}

AffineMap gaussian_ot_map(const Vec& m0, const Mat& sigma0, const Vec& m1,
                          const Mat& sigma1) {
  if (m0.size() != m1.size() || sigma0.rows() != m0.size() ||
      sigma1.rows() != m1.size()) {
    throw ConfigError("gaussian_ot_map: shape mismatch");
  }
  require_spd(sigma0, "gaussian_ot_map(sigma0)");
  require_spd(sigma1, "gaussian_ot_map(sigma1)");
  const Mat s0h = spd_sqrt(sigma0);
  const Mat s0ih = spd_inv_sqrt(sigma0);
  const Mat middle = spd_sqrt(s0h * sigma1 * s0h);
  Mat A = s0ih * middle * s0ih;
  A = 0.5 * (A + A.transpose());
  const double residual = (A * sigma0 * A.transpose() - sigma1).norm();
  if (residual > 1e-10 * std::max(1.0, sigma1.norm())) {
    throw NumericalError("gaussian_ot_map: pushforward identity failed");
  }
  AffineMap t;
  t.shift = m1 - A * m0;
  t.A = std::move(A);
  return t;
}

}  // namespace sflow
