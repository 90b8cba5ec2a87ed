#include "sflow/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "sflow/errors.hpp"

namespace sflow {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require_dim_match(int a, int b, const char* what) {
  if (a != b) {
    throw ConfigError(std::string(what) + ": dimension mismatch");
  }
}

}  // namespace

Box::Box(Vec lo_, Vec hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
  if (lo.size() != hi.size() || lo.size() == 0) {
    throw ConfigError("Box: lo/hi must have equal positive dimension");
  }
  for (Eigen::Index j = 0; j < lo.size(); ++j) {
    if (!(lo[j] < hi[j])) {
      throw ConfigError("Box: requires lo < hi in every coordinate");
    }
  }
}

Box::Box(double lo_, double hi_)
    : Box(Vec::Constant(1, lo_), Vec::Constant(1, hi_)) {}

double Box::volume() const {
  double v = 1.0;
  for (Eigen::Index j = 0; j < lo.size(); ++j) {
    v *= hi[j] - lo[j];
  }
  return v;
}

bool Box::contains(const Vec& x) const {
  if (x.size() != lo.size()) {
    return false;
  }
  for (Eigen::Index j = 0; j < lo.size(); ++j) {
    if (x[j] < lo[j] || x[j] > hi[j]) {
      return false;
    }
  }
  return true;
}

double box_distance(const Box& a, const Box& b) {
  require_dim_match(a.dim(), b.dim(), "box_distance");
  double sq = 0.0;
  for (Eigen::Index j = 0; j < a.lo.size(); ++j) {
    const double gap = std::max({0.0, b.lo[j] - a.hi[j], a.lo[j] - b.hi[j]});
    sq += gap * gap;
  }
  return std::sqrt(sq);
}

int MeasureSpec::dim() const {
  switch (kind) {
    case MeasureKind::Gaussian:
      return static_cast<int>(mean.size());
    case MeasureKind::Uniform:
      return box.dim();
    case MeasureKind::Mixture:
      return components.empty() ? 0 : components.front().dim();
  }
  return 0;
}

MeasureSpec gaussian_measure(Vec mean, Mat cov) {
  if (mean.size() == 0 || cov.rows() != mean.size()) {
    throw ConfigError("gaussian_measure: mean/covariance shape mismatch");
  }
  require_spd(cov, "gaussian_measure(covariance)");
  MeasureSpec m;
  m.kind = MeasureKind::Gaussian;
  m.mean = std::move(mean);
  m.cov = std::move(cov);
  return m;
}

MeasureSpec gaussian_measure_1d(double mean, double stddev) {
  if (!(stddev > 0.0)) {
    throw ConfigError("gaussian_measure_1d: standard deviation must be positive");
  }
  return gaussian_measure(Vec::Constant(1, mean),
                          Mat::Constant(1, 1, stddev * stddev));
}

MeasureSpec uniform_measure(Box box) {
  MeasureSpec m;
  m.kind = MeasureKind::Uniform;
  m.box = std::move(box);
  return m;
}

MeasureSpec uniform_interval(double lo, double hi) {
  return uniform_measure(Box(lo, hi));
}

MeasureSpec mixture_measure(std::vector<double> weights,
                            std::vector<MeasureSpec> components) {
  if (weights.empty() || weights.size() != components.size()) {
    throw ConfigError("mixture_measure: weights/components size mismatch");
  }
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) {
      throw ConfigError("mixture_measure: weights must be nonnegative");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ConfigError("mixture_measure: weights must sum to 1 within 1e-12");
  }
  const int d = components.front().dim();
  for (const MeasureSpec& c : components) {
    require_dim_match(c.dim(), d, "mixture_measure");
  }
  MeasureSpec m;
  m.kind = MeasureKind::Mixture;
  m.weights = std::move(weights);
  m.components = std::move(components);
  return m;
}

namespace {

// Gaussian draws need the Cholesky factor; mixtures pick a component first.
void draw_impl(const MeasureSpec& m, SampleRng& rng, double* out) {
  switch (m.kind) {
    case MeasureKind::Gaussian: {
      const int d = m.dim();
      Vec z(d);
      for (int j = 0; j < d; ++j) {
        z[j] = rng.gaussian();
      }
      Eigen::LLT<Mat> llt(m.cov);
      Vec x = m.mean + llt.matrixL() * z;
      std::copy(x.data(), x.data() + d, out);
      return;
    }
    case MeasureKind::Uniform: {
      for (int j = 0; j < m.box.dim(); ++j) {
        out[j] = m.box.lo[j] + rng.uniform01() * (m.box.hi[j] - m.box.lo[j]);
      }
      return;
    }
    case MeasureKind::Mixture: {
      const double u = rng.uniform01();
      double acc = 0.0;
      std::size_t pick = m.components.size() - 1;
      for (std::size_t k = 0; k < m.weights.size(); ++k) {
        acc += m.weights[k];
        if (u <= acc) {
          pick = k;
          break;
        }
      }
      draw_impl(m.components[pick], rng, out);
      return;
    }
  }
}

}  // namespace

void draw_sample(const MeasureSpec& m, SampleRng& rng, double* out) {
  draw_impl(m, rng, out);
}

Mat sample(const MeasureSpec& m, std::int64_t n, std::uint64_t seed) {
  if (n < 1) {
    throw ConfigError("sample: n must be >= 1");
  }
  const int d = m.dim();
  Mat out(n, d);
  Vec row(d);
  for (std::int64_t i = 0; i < n; ++i) {
    SampleRng rng(seed, static_cast<std::uint64_t>(i));
    draw_impl(m, rng, row.data());
    out.row(i) = row;
  }
  return out;
}

double density(const MeasureSpec& m, const Vec& x) {
  require_dim_match(static_cast<int>(x.size()), m.dim(), "density");
  switch (m.kind) {
    case MeasureKind::Gaussian: {
      const int d = m.dim();
      Eigen::LLT<Mat> llt(m.cov);
      const Vec centered = x - m.mean;
      const Vec w = llt.matrixL().solve(centered);
      double logdet = 0.0;
      for (int j = 0; j < d; ++j) {
        logdet += std::log(llt.matrixL()(j, j));
      }
      const double expo = -0.5 * w.squaredNorm() - logdet -
                          0.5 * d * std::log(2.0 * kPi);
      return std::exp(expo);
    }
    case MeasureKind::Uniform:
      return m.box.contains(x) ? 1.0 / m.box.volume() : 0.0;
    case MeasureKind::Mixture: {
      double p = 0.0;
      for (std::size_t k = 0; k < m.weights.size(); ++k) {
        p += m.weights[k] * density(m.components[k], x);
      }
      return p;
    }
  }
  return 0.0;
}

double density_1d(const MeasureSpec& m, double x) {
  return density(m, Vec::Constant(1, x));
}

double sup_density_bound(const MeasureSpec& m) {
  switch (m.kind) {
    case MeasureKind::Gaussian: {
      const int d = m.dim();
      Eigen::LLT<Mat> llt(m.cov);
      double logdet = 0.0;
      for (int j = 0; j < d; ++j) {
        logdet += std::log(llt.matrixL()(j, j));
      }
      return std::exp(-logdet - 0.5 * d * std::log(2.0 * kPi));
    }
    case MeasureKind::Uniform:
      return 1.0 / m.box.volume();
    case MeasureKind::Mixture: {
      double bound = 0.0;
      for (std::size_t k = 0; k < m.weights.size(); ++k) {
        bound += m.weights[k] * sup_density_bound(m.components[k]);
      }
      return bound;
    }
  }
  return 0.0;
}

Vec measure_mean(const MeasureSpec& m) {
  switch (m.kind) {
    case MeasureKind::Gaussian:
      return m.mean;
    case MeasureKind::Uniform:
      return 0.5 * (m.box.lo + m.box.hi);
    case MeasureKind::Mixture: {
      Vec mu = Vec::Zero(m.dim());
      for (std::size_t k = 0; k < m.weights.size(); ++k) {
        mu += m.weights[k] * measure_mean(m.components[k]);
      }
      return mu;
    }
  }
  return Vec();
}

Mat measure_cov(const MeasureSpec& m) {
  switch (m.kind) {
    case MeasureKind::Gaussian:
      return m.cov;
    case MeasureKind::Uniform: {
      const int d = m.dim();
      Mat c = Mat::Zero(d, d);
      for (int j = 0; j < d; ++j) {
        const double len = m.box.hi[j] - m.box.lo[j];
        c(j, j) = len * len / 12.0;
      }
      return c;
    }
    case MeasureKind::Mixture: {
      const int d = m.dim();
      const Vec mu = measure_mean(m);
      Mat c = Mat::Zero(d, d);
      for (std::size_t k = 0; k < m.weights.size(); ++k) {
        const Vec mk = measure_mean(m.components[k]);
        const Vec delta = mk - mu;
        c += m.weights[k] *
             (measure_cov(m.components[k]) + delta * delta.transpose());
      }
      return c;
    }
  }
  return Mat();
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_density(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi);
}

double cdf_1d(const MeasureSpec& m, double x) {
  require_dim_match(m.dim(), 1, "cdf_1d");
  switch (m.kind) {
    case MeasureKind::Gaussian: {
      const double sigma = std::sqrt(m.cov(0, 0));
      return normal_cdf((x - m.mean[0]) / sigma);
    }
    case MeasureKind::Uniform: {
      const double lo = m.box.lo[0];
      const double hi = m.box.hi[0];
      if (x <= lo) return 0.0;
      if (x >= hi) return 1.0;
      return (x - lo) / (hi - lo);
    }
    case MeasureKind::Mixture: {
      double p = 0.0;
      for (std::size_t k = 0; k < m.weights.size(); ++k) {
        p += m.weights[k] * cdf_1d(m.components[k], x);
      }
      return p;
    }
  }
  return 0.0;
}

namespace {

// Finite interval containing all quantiles of interest.
void quantile_bracket(const MeasureSpec& m, double& lo, double& hi) {
  switch (m.kind) {
    case MeasureKind::Gaussian: {
      const double sigma = std::sqrt(m.cov(0, 0));
      lo = m.mean[0] - 40.0 * sigma;
      hi = m.mean[0] + 40.0 * sigma;
      return;
    }
    case MeasureKind::Uniform:
      lo = m.box.lo[0];
      hi = m.box.hi[0];
      return;
    case MeasureKind::Mixture: {
      lo = std::numeric_limits<double>::infinity();
      hi = -std::numeric_limits<double>::infinity();
      for (const MeasureSpec& c : m.components) {
        double clo = 0.0;
        double chi = 0.0;
        quantile_bracket(c, clo, chi);
        lo = std::min(lo, clo);
        hi = std::max(hi, chi);
      }
      return;
    }
  }
}

}  // namespace

double quantile_1d(const MeasureSpec& m, double p) {
  require_dim_match(m.dim(), 1, "quantile_1d");
  if (!(p > 0.0 && p < 1.0)) {
    throw ConfigError("quantile_1d: p must lie in (0,1)");
  }
  double lo = 0.0;
  double hi = 0.0;
  quantile_bracket(m, lo, hi);
  while (hi - lo > 1e-8) {
    const double mid = 0.5 * (lo + hi);
    if (cdf_1d(m, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 3; ++it) {
    const double f = cdf_1d(m, x) - p;
    const double dens = std::max(density_1d(m, x), 1e-300);
    const double step = f / dens;
    // Stay inside the bisection bracket; flat cdf regions make Newton wild.
    if (x - step < lo || x - step > hi) {
      break;
    }
    x -= step;
  }
  return x;
}

double unit_ball_volume(int d) {
  if (d < 1) {
    throw ConfigError("unit_ball_volume: dimension must be >= 1");
  }
  return std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

FrostmanBound frostman_constant(double sup_density, int d) {
  if (!(sup_density > 0.0)) {
    throw ConfigError("frostman_constant: sup density must be positive");
  }
  return FrostmanBound{sup_density * unit_ball_volume(d),
                       static_cast<double>(d)};
}

double frostman_empirical(const MeasureSpec& m, double gamma,
                          const std::vector<Vec>& centers,
                          const std::vector<double>& radii, std::int64_t n,
                          std::uint64_t seed) {
  if (centers.empty() || radii.empty()) {
    throw ConfigError("frostman_empirical: centers and radii must be nonempty");
  }
  for (double r : radii) {
    if (!(r > 0.0)) {
      throw ConfigError("frostman_empirical: radii must be positive");
    }
  }
  const Mat xs = sample(m, n, seed);
  double worst = 0.0;
  std::vector<std::int64_t> counts(radii.size());
  for (const Vec& c : centers) {
    require_dim_match(static_cast<int>(c.size()), m.dim(),
                      "frostman_empirical");
    std::fill(counts.begin(), counts.end(), 0);
    for (std::int64_t i = 0; i < n; ++i) {
      const double dist = (xs.row(i).transpose() - c).norm();
      for (std::size_t k = 0; k < radii.size(); ++k) {
        if (dist <= radii[k]) {
          ++counts[k];
        }
      }
    }
    for (std::size_t k = 0; k < radii.size(); ++k) {
      const double mass = static_cast<double>(counts[k]) / n;
      worst = std::max(worst, mass / std::pow(radii[k], gamma));
    }
  }
  return worst;
}

double box_mass(const MeasureSpec& m, const Box& box) {
  require_dim_match(m.dim(), box.dim(), "box_mass");
  switch (m.kind) {
    case MeasureKind::Gaussian: {
      const int d = m.dim();
      if (d > 1) {
        const double scale = std::max(1.0, m.cov.cwiseAbs().maxCoeff());
        for (int i = 0; i < d; ++i) {
          for (int j = 0; j < d; ++j) {
            if (i != j && std::abs(m.cov(i, j)) > 1e-14 * scale) {
              throw ConfigError(
                  "box_mass: exact Gaussian box mass requires independent "
                  "coordinates (diagonal covariance)");
            }
          }
        }
      }
      double mass = 1.0;
      for (int j = 0; j < d; ++j) {
        const double sigma = std::sqrt(m.cov(j, j));
        mass *= normal_cdf((box.hi[j] - m.mean[j]) / sigma) -
                normal_cdf((box.lo[j] - m.mean[j]) / sigma);
      }
      return mass;
    }
    case MeasureKind::Uniform: {
      double mass = 1.0;
      for (int j = 0; j < m.box.dim(); ++j) {
        const double overlap = std::min(box.hi[j], m.box.hi[j]) -
                               std::max(box.lo[j], m.box.lo[j]);
        if (overlap <= 0.0) {
          return 0.0;
        }
        mass *= overlap / (m.box.hi[j] - m.box.lo[j]);
      }
      return mass;
    }
    case MeasureKind::Mixture: {
      double mass = 0.0;
      for (std::size_t k = 0; k < m.weights.size(); ++k) {
        mass += m.weights[k] * box_mass(m.components[k], box);
      }
      return mass;
    }
  }
  return 0.0;
}

SupportGeometry epsilon_disconnected(const MeasureSpec& m, const Box& S0,
                                     const Box& S1) {
  require_dim_match(m.dim(), S0.dim(), "epsilon_disconnected");
  require_dim_match(m.dim(), S1.dim(), "epsilon_disconnected");
  const double sep = box_distance(S0, S1);
  if (!(sep > 0.0)) {
    throw ConfigError(
        "epsilon_disconnected: hulls overlap or touch; not disconnected");
  }
  SupportGeometry g;
  g.S0 = S0;
  g.S1 = S1;
  g.separation = sep;
  g.w0 = box_mass(m, S0);
  g.w1 = box_mass(m, S1);
  g.epsilon = std::clamp(1.0 - g.w0 - g.w1, 0.0, 1.0);
  return g;
}

}  // namespace sflow
