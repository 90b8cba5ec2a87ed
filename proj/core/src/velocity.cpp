#include "sflow/velocity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sflow/errors.hpp"

namespace sflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kRoot2Pi = 2.5066282746310002;

Eigen::Index grid_size(const std::vector<Vec>& axes) {
  Eigen::Index n = 1;
  for (const Vec& a : axes) {
    n *= a.size();
  }
  return n;
}

// Row-major strides over the tensor grid, last axis fastest.
std::vector<Eigen::Index> grid_strides(const std::vector<Vec>& axes) {
  std::vector<Eigen::Index> s(axes.size(), 1);
  for (int j = static_cast<int>(axes.size()) - 2; j >= 0; --j) {
    s[j] = s[j + 1] * axes[j + 1].size();
  }
  return s;
}

Mat grid_centers(const std::vector<Vec>& axes) {
  const int d = static_cast<int>(axes.size());
  const Eigen::Index n = grid_size(axes);
  const std::vector<Eigen::Index> strides = grid_strides(axes);
  Mat centers(n, d);
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index rem = c;
    for (int j = 0; j < d; ++j) {
      const Eigen::Index i = rem / strides[j];
      rem %= strides[j];
      centers(c, j) = axes[j][i];
    }
  }
  return centers;
}

// Gaussian moment pack with the covariance factorization attached.
struct Conditioner {
  GaussianPathStats s;
  Eigen::LDLT<Mat> chol;
  Mat jac;  // Cov(Xdot,X) cov^{-1}
};

Conditioner make_conditioner(const GeneralizedInterpolant& interp, double t) {
  Conditioner c;
  c.s = gaussian_moments(interp, t);
  Eigen::SelfAdjointEigenSolver<Mat> eig(c.s.cov);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi > 1e12 * lo) {
    throw NumericalError("interpolant covariance is numerically singular at t = " +
                         std::to_string(t));
  }
  c.chol.compute(c.s.cov);
  c.jac = c.chol.solve(c.s.cross.transpose()).transpose();
  return c;
}

Vec conditional_velocity(const Conditioner& c, const Vec& x) {
  return c.s.mean_rate + c.jac * (x - c.s.mean);
}

void require_dim(const Vec& x, int d, const char* what) {
  if (x.size() != d) {
    throw ConfigError(std::string(what) + ": point dimension mismatch");
  }
}

}  // namespace

CouplingMoments coupling_moments(const Coupling& coupling) {
  const MeasureSpec& p0 = coupling.p0();
  if (p0.kind != MeasureKind::Gaussian) {
    throw ConfigError("closed-form moments need Gaussian endpoints");
  }
  const int d = p0.dim();
  CouplingMoments m;
  m.m0 = p0.mean;
  m.sigma0 = p0.cov;
  switch (coupling.kind()) {
    case CouplingKind::Independent: {
      const MeasureSpec& p1 = coupling.p1();
      if (p1.kind != MeasureKind::Gaussian) {
        throw ConfigError("closed-form moments need Gaussian endpoints");
      }
      m.m1 = p1.mean;
      m.sigma1 = p1.cov;
      m.cross01 = Mat::Zero(d, d);
      break;
    }
    case CouplingKind::Deterministic: {
      const AffineMap& map = coupling.map();
      m.m1 = map.shift + map.A * m.m0;
      m.sigma1 = map.A * m.sigma0 * map.A.transpose();
      m.cross01 = m.sigma0 * map.A.transpose();
      break;
    }
    case CouplingKind::Joint:
      throw ConfigError("joint samplers have no closed-form moments");
  }
  if (coupling.aux().has_value()) {
    const MeasureSpec& q = *coupling.aux();
    if (q.kind != MeasureKind::Gaussian) {
      throw ConfigError("closed-form moments need a Gaussian auxiliary measure");
    }
    if (q.mean.cwiseAbs().maxCoeff() != 0.0) {
      throw ConfigError("auxiliary measure must be centered");
    }
    m.sigma_z = q.cov;
    m.has_aux = true;
  } else {
    m.sigma_z = Mat::Zero(d, d);
  }
  return m;
}

GaussianPathStats gaussian_moments(const GeneralizedInterpolant& interp,
                                   double t) {
  const CouplingMoments cm = coupling_moments(interp.coupling());
  const Schedule& sch = interp.schedule();
  const ScheduleProducts p = sch.products(t);
  const ScheduleDeriv d1 = sch.d1(t);
  const ScheduleDeriv d2 = sch.d2(t);
  const int d = static_cast<int>(cm.m0.size());
  const Mat sym01 = cm.cross01 + cm.cross01.transpose();

  GaussianPathStats out;
  out.t = t;
  out.mean = p.a * cm.m0 + p.b * cm.m1;
  if (d1.defined) {
    out.mean_rate = d1.da * cm.m0 + d1.db * cm.m1;
    out.mean_accel = d2.da * cm.m0 + d2.db * cm.m1;
  } else {
    out.mean_rate = Vec::Constant(d, kNan);
    out.mean_accel = Vec::Constant(d, kNan);
  }
  out.cov = p.a2 * cm.sigma0 + p.b2 * cm.sigma1 + p.c2 * cm.sigma_z +
            p.ab * sym01;
  out.cov_rate = p.da2 * cm.sigma0 + p.db2 * cm.sigma1 + p.dc2 * cm.sigma_z +
                 p.dab * sym01;
  out.cov_accel = p.d2a2 * cm.sigma0 + p.d2b2 * cm.sigma1 +
                  p.d2c2 * cm.sigma_z + p.d2ab * sym01;
  out.cross = 0.5 * (p.da2 * cm.sigma0 + p.db2 * cm.sigma1 +
                     p.dc2 * cm.sigma_z) +
              p.da_b * cm.cross01 + p.a_db * cm.cross01.transpose();
  out.cross_rate = 0.5 * (p.d2a2 * cm.sigma0 + p.d2b2 * cm.sigma1 +
                          p.d2c2 * cm.sigma_z) +
                   p.d_da_b * cm.cross01 + p.d_a_db * cm.cross01.transpose();
  if (d1.defined && std::isfinite(d1.dc)) {
    out.rate_var = d1.da * d1.da * cm.sigma0 + d1.db * d1.db * cm.sigma1 +
                   d1.dc * d1.dc * cm.sigma_z + d1.da * d1.db * sym01;
    out.rate_var_finite = true;
  } else {
    out.rate_var = Mat::Constant(d, d, kInf);
    out.rate_var_finite = false;
  }
  return out;
}

Vec analytic_velocity(const GeneralizedInterpolant& interp, double t,
                      const Vec& x) {
  const Conditioner c = make_conditioner(interp, t);
  require_dim(x, static_cast<int>(c.s.mean.size()), "analytic_velocity");
  return conditional_velocity(c, x);
}

AffinePointStats analytic_affine_stats(const Coupling& coupling, double t,
                                       const Vec& x) {
  const GeneralizedInterpolant affine(Schedule::linear_affine(), coupling);
  const Conditioner c = make_conditioner(affine, t);
  require_dim(x, static_cast<int>(c.s.mean.size()), "analytic_affine_stats");
  AffinePointStats out;
  out.v = conditional_velocity(c, x);
  const Mat pi = c.s.rate_var - c.jac * c.s.cross.transpose();
  out.pi = 0.5 * (pi + pi.transpose());
  return out;
}

VelocityField VelocityField::analytic(GeneralizedInterpolant interp) {
  VelocityField f;
  f.dim_ = interp.dim();
  f.interp_ = std::move(interp);
  return f;
}

VelocityField VelocityField::empirical(Vec times, std::vector<Vec> axes,
                                       std::vector<Mat> values) {
  if (times.size() < 2) {
    throw ConfigError("empirical field needs at least two time slices");
  }
  for (Eigen::Index k = 1; k < times.size(); ++k) {
    if (times[k] <= times[k - 1]) {
      throw ConfigError("field times must increase strictly");
    }
  }
  if (axes.empty()) {
    throw ConfigError("empirical field needs at least one spatial axis");
  }
  for (const Vec& a : axes) {
    if (a.size() < 2) {
      throw ConfigError("each field axis needs at least two nodes");
    }
    for (Eigen::Index i = 1; i < a.size(); ++i) {
      if (a[i] <= a[i - 1]) {
        throw ConfigError("field axis nodes must increase strictly");
      }
    }
  }
  if (static_cast<Eigen::Index>(values.size()) != times.size()) {
    throw ConfigError("one value block per time slice required");
  }
  const Eigen::Index nodes = grid_size(axes);
  const int d = static_cast<int>(axes.size());
  for (const Mat& v : values) {
    if (v.rows() != nodes || v.cols() != d) {
      throw ConfigError("field value block shape does not match the grid");
    }
  }
  VelocityField f;
  f.dim_ = d;
  f.times_ = std::move(times);
  f.axes_ = std::move(axes);
  f.values_ = std::move(values);
  return f;
}

int VelocityField::dim() const { return dim_; }

const GeneralizedInterpolant& VelocityField::interpolant() const {
  if (!interp_.has_value()) {
    throw ConfigError("empirical field has no interpolant");
  }
  return *interp_;
}

Vec VelocityField::value_at_slice(int k, const Vec& x) const {
  const int d = dim_;
  std::vector<Eigen::Index> cell(d);
  std::vector<double> frac(d);
  for (int j = 0; j < d; ++j) {
    const Vec& axis = axes_[j];
    const double span = axis[axis.size() - 1] - axis[0];
    const double eps = 1e-12 * std::max(1.0, std::abs(span));
    if (x[j] < axis[0] - eps || x[j] > axis[axis.size() - 1] + eps) {
      throw NumericalError("field query outside the grid hull");
    }
    Eigen::Index i =
        std::upper_bound(axis.data(), axis.data() + axis.size(), x[j]) -
        axis.data() - 1;
    i = std::clamp<Eigen::Index>(i, 0, axis.size() - 2);
    cell[j] = i;
    frac[j] = std::clamp((x[j] - axis[i]) / (axis[i + 1] - axis[i]), 0.0, 1.0);
  }
  const std::vector<Eigen::Index> strides = grid_strides(axes_);
  Vec out = Vec::Zero(d);
  for (unsigned corner = 0; corner < (1u << d); ++corner) {
    double w = 1.0;
    Eigen::Index flat = 0;
    for (int j = 0; j < d; ++j) {
      const bool hi = (corner >> j) & 1u;
      w *= hi ? frac[j] : 1.0 - frac[j];
      flat += (cell[j] + (hi ? 1 : 0)) * strides[j];
    }
    if (w > 0.0) {
      out += w * values_[k].row(flat).transpose();
    }
  }
  return out;
}

Vec VelocityField::value(double t, const Vec& x) const {
  require_dim(x, dim_, "velocity field");
  if (interp_.has_value()) {
    const Conditioner c = make_conditioner(*interp_, t);
    return conditional_velocity(c, x);
  }
  const double t0 = times_[0];
  const double t1 = times_[times_.size() - 1];
  const double eps = 1e-12 * std::max(1.0, t1 - t0);
  if (t < t0 - eps || t > t1 + eps) {
    throw NumericalError("field query outside the time range");
  }
  Eigen::Index k =
      std::upper_bound(times_.data(), times_.data() + times_.size(), t) -
      times_.data() - 1;
  k = std::clamp<Eigen::Index>(k, 0, times_.size() - 2);
  const double w =
      std::clamp((t - times_[k]) / (times_[k + 1] - times_[k]), 0.0, 1.0);
  if (w == 0.0) {
    return value_at_slice(static_cast<int>(k), x);
  }
  return (1.0 - w) * value_at_slice(static_cast<int>(k), x) +
         w * value_at_slice(static_cast<int>(k + 1), x);
}

Mat VelocityField::value_batch(double t, const Mat& points) const {
  if (points.cols() != dim_) {
    throw ConfigError("velocity field expects points with " +
                      std::to_string(dim_) + " columns");
  }
  if (interp_.has_value()) {
    const Conditioner c = make_conditioner(*interp_, t);
    Mat out = (points.rowwise() - c.s.mean.transpose()) * c.jac.transpose();
    out.rowwise() += c.s.mean_rate.transpose();
    return out;
  }
  Mat out(points.rows(), dim_);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out.row(i) = value(t, points.row(i).transpose()).transpose();
  }
  return out;
}

Mat VelocityField::jacobian(double t, const Vec& x, double dx_step) const {
  require_dim(x, dim_, "velocity field");
  if (interp_.has_value()) {
    return make_conditioner(*interp_, t).jac;
  }
  Mat jac(dim_, dim_);
  for (int j = 0; j < dim_; ++j) {
    const Vec& axis = axes_[j];
    const double h =
        dx_step > 0.0 ? dx_step
                      : (axis[axis.size() - 1] - axis[0]) / (axis.size() - 1);
    Vec xp = x;
    Vec xm = x;
    xp[j] = std::min(x[j] + h, axis[axis.size() - 1]);
    xm[j] = std::max(x[j] - h, axis[0]);
    if (xp[j] <= xm[j]) {
      throw NumericalError("field too narrow for a spatial difference");
    }
    jac.col(j) = (value(t, xp) - value(t, xm)) / (xp[j] - xm[j]);
  }
  return jac;
}

Vec VelocityField::time_derivative(double t, const Vec& x,
                                   double dt_step) const {
  require_dim(x, dim_, "velocity field");
  if (interp_.has_value()) {
    const Conditioner c = make_conditioner(*interp_, t);
    const Vec u = c.chol.solve(x - c.s.mean);
    return c.s.mean_accel + c.s.cross_rate * u - c.jac * (c.s.cov_rate * u) -
           c.jac * c.s.mean_rate;
  }
  const double t0 = times_[0];
  const double t1 = times_[times_.size() - 1];
  const double h =
      dt_step > 0.0 ? dt_step : (t1 - t0) / (times_.size() - 1);
  const double tp = std::min(t + h, t1);
  const double tm = std::max(t - h, t0);
  if (tp <= tm) {
    throw NumericalError("field too narrow for a time difference");
  }
  return (value(tp, x) - value(tm, x)) / (tp - tm);
}

Vec burgers_residual(const VelocityField& f, double t, const Vec& x,
                     double dt_step, double dx_step) {
  const Vec v = f.value(t, x);
  return f.time_derivative(t, x, dt_step) + f.jacobian(t, x, dx_step) * v;
}

namespace {

int default_bins(int d) {
  switch (d) {
    case 1:
      return 25;
    case 2:
      return 12;
    default:
      return 7;
  }
}

double sample_quantile(std::vector<double>& sorted_copy, double p) {
  std::sort(sorted_copy.begin(), sorted_copy.end());
  const double pos = p * (sorted_copy.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= sorted_copy.size()) {
    return sorted_copy.back();
  }
  const double frac = pos - static_cast<double>(i);
  return sorted_copy[i] * (1.0 - frac) + sorted_copy[i + 1] * frac;
}

struct SliceData {
  Mat x, v, a;  // n x d each
};

SliceData slice_data(const PathEnsemble& e, const PathDerivatives& der,
                     int k) {
  SliceData s;
  const int d = e.dim;
  s.x = e.values.middleCols(static_cast<Eigen::Index>(k) * d, d);
  s.v = der.velocities.middleCols(static_cast<Eigen::Index>(k) * d, d);
  s.a = der.accelerations.middleCols(static_cast<Eigen::Index>(k) * d, d);
  return s;
}

CellStats estimate_cell(const SliceData& s, const Vec& center, const Vec& h,
                        const EstimatorOptions& opt) {
  const Eigen::Index n = s.x.rows();
  const int d = static_cast<int>(s.x.cols());
  CellStats cell;
  cell.v = Vec::Constant(d, kNan);
  cell.a = Vec::Constant(d, kNan);
  cell.c_mat = Mat::Constant(d, d, kNan);
  cell.pi = Mat::Constant(d, d, kNan);
  cell.se_v = Vec::Constant(d, kNan);
  cell.se_a = Vec::Constant(d, kNan);
  cell.se_pi = Mat::Constant(d, d, kNan);

  std::vector<Eigen::Index> idx;
  std::vector<double> wts;
  double sw = 0.0;
  double sw2 = 0.0;
  const int p = d + 1;
  Mat g = Mat::Zero(p, p);
  Mat bv = Mat::Zero(p, d);
  Mat ba = Mat::Zero(p, d);
  Vec z(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    double q = 0.0;
    for (int j = 0; j < d; ++j) {
      const double u = (s.x(i, j) - center[j]) / h[j];
      q += u * u;
      if (q > 100.0) {
        break;
      }
    }
    if (q > 100.0) {
      continue;
    }
    const double w = std::exp(-0.5 * q);
    idx.push_back(i);
    wts.push_back(w);
    sw += w;
    sw2 += w * w;
    z[0] = 1.0;
    for (int j = 0; j < d; ++j) {
      z[j + 1] = s.x(i, j) - center[j];
    }
    g.noalias() += w * z * z.transpose();
    bv.noalias() += w * z * s.v.row(i);
    ba.noalias() += w * z * s.a.row(i);
  }

  double kern_norm = 1.0;
  for (int j = 0; j < d; ++j) {
    kern_norm *= h[j] * kRoot2Pi;
  }
  cell.rho = sw / (static_cast<double>(n) * kern_norm);
  double m2 = 0.0;
  for (double w : wts) {
    const double k = w / kern_norm;
    m2 += k * k;
  }
  m2 /= static_cast<double>(n);
  cell.se_rho = std::sqrt(
      std::max(0.0, m2 - cell.rho * cell.rho) / static_cast<double>(n));
  cell.n_eff = sw2 > 0.0 ? sw * sw / sw2 : 0.0;
  if (cell.n_eff < opt.min_effective) {
    return cell;
  }

  const Eigen::LDLT<Mat> chol(g);
  const Mat beta_v = chol.solve(bv);
  const Mat beta_a = chol.solve(ba);
  const double scale = g.cwiseAbs().maxCoeff();
  if (!beta_v.allFinite() || !beta_a.allFinite() ||
      (g * beta_v - bv).cwiseAbs().maxCoeff() >
          1e-8 * scale * (1.0 + beta_v.cwiseAbs().maxCoeff())) {
    return cell;
  }
  cell.v = beta_v.row(0).transpose();
  cell.a = beta_a.row(0).transpose();

  Mat pi_acc = Mat::Zero(d, d);
  Mat m4 = Mat::Zero(d, d);
  std::vector<Mat> sv(d, Mat::Zero(p, p));
  std::vector<Mat> sa(d, Mat::Zero(p, p));
  Vec rv(d), ra(d);
  for (std::size_t m = 0; m < idx.size(); ++m) {
    const Eigen::Index i = idx[m];
    const double w = wts[m];
    z[0] = 1.0;
    for (int j = 0; j < d; ++j) {
      z[j + 1] = s.x(i, j) - center[j];
    }
    rv = s.v.row(i).transpose() - beta_v.transpose() * z;
    ra = s.a.row(i).transpose() - beta_a.transpose() * z;
    pi_acc.noalias() += w * rv * rv.transpose();
    for (int j = 0; j < d; ++j) {
      for (int k2 = 0; k2 < d; ++k2) {
        const double prod = rv[j] * rv[k2];
        m4(j, k2) += w * prod * prod;
      }
    }
    const Mat zz = z * z.transpose();
    for (int comp = 0; comp < d; ++comp) {
      sv[comp].noalias() += w * w * rv[comp] * rv[comp] * zz;
      sa[comp].noalias() += w * w * ra[comp] * ra[comp] * zz;
    }
  }
  cell.pi = pi_acc / sw;
  cell.c_mat = cell.pi + cell.v * cell.v.transpose();
  for (int j = 0; j < d; ++j) {
    for (int k2 = 0; k2 < d; ++k2) {
      const double var =
          std::max(0.0, m4(j, k2) / sw - cell.pi(j, k2) * cell.pi(j, k2));
      cell.se_pi(j, k2) = std::sqrt(var / cell.n_eff);
    }
  }
  for (int comp = 0; comp < d; ++comp) {
    const Mat cov_v = chol.solve(Mat(chol.solve(sv[comp]).transpose()));
    const Mat cov_a = chol.solve(Mat(chol.solve(sa[comp]).transpose()));
    cell.se_v[comp] = std::sqrt(std::max(0.0, cov_v(0, 0)));
    cell.se_a[comp] = std::sqrt(std::max(0.0, cov_a(0, 0)));
  }
  cell.valid = cell.rho > 0.0;
  return cell;
}

}  // namespace

ConditionalStats empirical_conditional_stats(const PathEnsemble& e,
                                             const std::vector<int>& t_indices,
                                             std::vector<Vec> axes,
                                             const EstimatorOptions& opt) {
  if (e.n_paths() < 1000) {
    throw ConfigError("conditional statistics need at least 1000 paths");
  }
  if (t_indices.empty()) {
    throw ConfigError("no time indices requested");
  }
  for (int k : t_indices) {
    if (k < 1 || k > e.n_times() - 2) {
      throw ConfigError("conditional statistics need interior time indices");
    }
  }
  const int d = e.dim;
  const PathDerivatives der = path_derivatives(e);
  const double n = static_cast<double>(e.n_paths());

  const SliceData first = slice_data(e, der, t_indices[0]);
  if (axes.empty()) {
    const int bins =
        opt.bins_per_dim > 0 ? opt.bins_per_dim : default_bins(d);
    const double tail = 0.5 * (1.0 - opt.coverage);
    axes.reserve(d);
    for (int j = 0; j < d; ++j) {
      std::vector<double> col(first.x.col(j).data(),
                              first.x.col(j).data() + e.n_paths());
      const double lo = sample_quantile(col, tail);
      const double hi = sample_quantile(col, 1.0 - tail);
      if (!(hi > lo)) {
        throw NumericalError("degenerate sample range for the cell grid");
      }
      Vec axis(bins);
      const double width = (hi - lo) / bins;
      for (int i = 0; i < bins; ++i) {
        axis[i] = lo + (i + 0.5) * width;
      }
      axes.push_back(std::move(axis));
    }
  }
  if (static_cast<int>(axes.size()) != d) {
    throw ConfigError("one cell axis per dimension required");
  }

  ConditionalStats stats;
  stats.times.resize(static_cast<Eigen::Index>(t_indices.size()));
  stats.axes = std::move(axes);
  stats.centers = grid_centers(stats.axes);
  stats.slices.resize(t_indices.size());
  const Eigen::Index cells = stats.centers.rows();

  for (std::size_t s = 0; s < t_indices.size(); ++s) {
    const int k = t_indices[s];
    stats.times[static_cast<Eigen::Index>(s)] = e.times[k];
    const SliceData data = slice_data(e, der, k);
    Vec h(d);
    for (int j = 0; j < d; ++j) {
      const double mean = data.x.col(j).mean();
      const double sd = std::sqrt(
          (data.x.col(j).array() - mean).square().sum() / (n - 1.0));
      h[j] = opt.bandwidth_scale * 1.06 * sd * std::pow(n, -0.2);
      if (!(h[j] > 0.0)) {
        throw NumericalError("degenerate bandwidth for the cell grid");
      }
    }
    stats.slices[s].resize(static_cast<std::size_t>(cells));
    for (Eigen::Index c = 0; c < cells; ++c) {
      stats.slices[s][static_cast<std::size_t>(c)] =
          estimate_cell(data, stats.centers.row(c).transpose(), h, opt);
    }
  }
  return stats;
}

ConditionalStats empirical_conditional_stats(const PathEnsemble& e,
                                             int t_index,
                                             std::vector<Vec> axes,
                                             const EstimatorOptions& opt) {
  return empirical_conditional_stats(e, std::vector<int>{t_index},
                                     std::move(axes), opt);
}

namespace {

// Variance of a product rho * y from the cell's standard errors.
double product_variance(double rho, double se_rho, double y, double se_y) {
  return rho * rho * se_y * se_y + y * y * se_rho * se_rho;
}

void finalize_norms(const ConditionalStats& stats, int s, ResidualField* out) {
  double max_abs = 0.0;
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index c = 0; c < stats.n_cells(); ++c) {
    if (!out->valid[static_cast<std::size_t>(c)]) {
      continue;
    }
    const double rho = stats.slices[s][static_cast<std::size_t>(c)].rho;
    max_abs = std::max(max_abs, out->residual.row(c).cwiseAbs().maxCoeff());
    num += rho * out->residual.row(c).squaredNorm();
    den += rho;
  }
  out->max_abs = max_abs;
  out->weighted_l2 = den > 0.0 ? std::sqrt(num / den) : 0.0;
}

}  // namespace

ResidualField balance_residual(const ConditionalStats& stats, int s) {
  const int d = stats.dim();
  if (s < 0 || s >= stats.n_slices()) {
    throw ConfigError("slice index out of range");
  }
  for (const Vec& a : stats.axes) {
    if (a.size() < 5) {
      throw ConfigError("cell grid too coarse for divergence stencils");
    }
  }
  const std::vector<Eigen::Index> strides = grid_strides(stats.axes);
  const auto& cells = stats.slices[s];
  ResidualField out;
  out.residual = Mat::Zero(stats.n_cells(), d);
  out.se = Mat::Zero(stats.n_cells(), d);
  out.valid.assign(static_cast<std::size_t>(stats.n_cells()), 0);

  for (Eigen::Index c = 0; c < stats.n_cells(); ++c) {
    bool ok = cells[static_cast<std::size_t>(c)].valid;
    Eigen::Index rem = c;
    std::vector<Eigen::Index> multi(d);
    for (int j = 0; j < d && ok; ++j) {
      multi[j] = rem / strides[j];
      rem %= strides[j];
      if (multi[j] == 0 || multi[j] + 1 == stats.axes[j].size()) {
        ok = false;
      }
    }
    if (!ok) {
      continue;
    }
    Vec res = Vec::Zero(d);
    Vec var = Vec::Zero(d);
    for (int j = 0; j < d && ok; ++j) {
      const double step =
          stats.axes[j][multi[j] + 1] - stats.axes[j][multi[j] - 1];
      const CellStats& plus = cells[static_cast<std::size_t>(c + strides[j])];
      const CellStats& minus = cells[static_cast<std::size_t>(c - strides[j])];
      if (!plus.valid || !minus.valid) {
        ok = false;
        break;
      }
      for (int i = 0; i < d; ++i) {
        res[i] += (plus.rho * plus.pi(i, j) - minus.rho * minus.pi(i, j)) / step;
        var[i] += (product_variance(plus.rho, plus.se_rho, plus.pi(i, j),
                                    plus.se_pi(i, j)) +
                   product_variance(minus.rho, minus.se_rho, minus.pi(i, j),
                                    minus.se_pi(i, j))) /
                  (step * step);
      }
    }
    if (!ok) {
      continue;
    }
    const CellStats& self = cells[static_cast<std::size_t>(c)];
    for (int i = 0; i < d; ++i) {
      res[i] -= self.rho * self.a[i];
      var[i] += product_variance(self.rho, self.se_rho, self.a[i],
                                 self.se_a[i]);
    }
    out.residual.row(c) = res.transpose();
    out.se.row(c) = var.cwiseSqrt().transpose();
    out.valid[static_cast<std::size_t>(c)] = 1;
  }
  finalize_norms(stats, s, &out);
  return out;
}

ResidualField momentum_residual(const ConditionalStats& stats, int s) {
  const int d = stats.dim();
  if (stats.n_slices() < 3 || s < 1 || s > stats.n_slices() - 2) {
    throw ConfigError("momentum residual needs both neighbor slices");
  }
  for (const Vec& a : stats.axes) {
    if (a.size() < 5) {
      throw ConfigError("cell grid too coarse for divergence stencils");
    }
  }
  const double h1 = stats.times[s] - stats.times[s - 1];
  const double h2 = stats.times[s + 1] - stats.times[s];
  const double wm = -h2 / (h1 * (h1 + h2));
  const double w0 = (h2 - h1) / (h1 * h2);
  const double wp = h1 / (h2 * (h1 + h2));
  const std::vector<Eigen::Index> strides = grid_strides(stats.axes);
  const auto& prev = stats.slices[s - 1];
  const auto& here = stats.slices[s];
  const auto& next = stats.slices[s + 1];

  ResidualField out;
  out.residual = Mat::Zero(stats.n_cells(), d);
  out.se = Mat::Zero(stats.n_cells(), d);
  out.valid.assign(static_cast<std::size_t>(stats.n_cells ()), 0);

  for (Eigen::Index c = 0; c < stats.n_cells(); ++c) {
    const auto uc = static_cast<std::size_t>(c);
    bool ok = prev[uc].valid && here[uc].valid && next[uc].valid;
    Eigen::Index rem = c;
    std::vector<Eigen::Index> multi(d);
    for (int j = 0; j < d && ok; ++j) {
      multi[j] = rem / strides[j];
      rem %= strides[j];
      if (multi[j] == 0 || multi[j] + 1 == stats.axes[j].size()) {
        ok = false;
      }
    }
    if (!ok) {
      continue;
    }
    Vec res = Vec::Zero(d);
    Vec var = Vec::Zero(d);
    const CellStats* stencil[3] = {&prev[uc], &here[uc], &next[uc]};
    const double tw[3] = {wm, w0, wp};
    for (int m = 0; m < 3; ++m) {
      const CellStats& cs = *stencil[m];
      for (int i = 0; i < d; ++i) {
        res[i] += tw[m] * cs.rho * cs.v[i];
        var[i] += tw[m] * tw[m] *
                  product_variance(cs.rho, cs.se_rho, cs.v[i], cs.se_v[i]);
      }
    }
    for (int j = 0; j < d && ok; ++j) {
      const double step =
          stats.axes[j][multi[j] + 1] - stats.axes[j][multi[j] - 1];
      const CellStats& plus = here[static_cast<std::size_t>(c + strides[j])];
      const CellStats& minus = here[static_cast<std::size_t>(c - strides[j])];
      if (!plus.valid || !minus.valid) {
        ok = false;
        break;
      }
      for (int i = 0; i < d; ++i) {
        res[i] +=
            (plus.rho * plus.c_mat(i, j) - minus.rho * minus.c_mat(i, j)) /
            step;
        const double se_c_plus = std::sqrt(
            plus.se_pi(i, j) * plus.se_pi(i, j) +
            plus.v[i] * plus.v[i] * plus.se_v[j] * plus.se_v[j] +
            plus.v[j] * plus.v[j] * plus.se_v[i] * plus.se_v[i]);
        const double se_c_minus = std::sqrt(
            minus.se_pi(i, j) * minus.se_pi(i, j) +
            minus.v[i] * minus.v[i] * minus.se_v[j] * minus.se_v[j] +
            minus.v[j] * minus.v[j] * minus.se_v[i] * minus.se_v[i]);
        var[i] += (product_variance(plus.rho, plus.se_rho, plus.c_mat(i, j),
                                    se_c_plus) +
                   product_variance(minus.rho, minus.se_rho,
                                    minus.c_mat(i, j), se_c_minus)) /
                  (step * step);
      }
    }
    if (!ok) {
      continue;
    }
    const CellStats& self = here[uc];
    for (int i = 0; i < d; ++i) {
      res[i] -= self.rho * self.a[i];
      var[i] += product_variance(self.rho, self.se_rho, self.a[i],
                                 self.se_a[i]);
    }
    out.residual.row(c) = res.transpose();
    out.se.row(c) = var.cwiseSqrt().transpose();
    out.valid[uc] = 1;
  }
  finalize_norms(stats, s, &out);
  return out;
}

ContinuityReport continuity_residual(const GridDensity& rho,
                                     const VelocityField& f,
                                     double fd_step) {
  if (rho.times.size() < 2 || rho.axes.empty()) {
    throw ConfigError("density grid needs times and at least one axis");
  }
  const int d = static_cast<int>(rho.axes.size());
  if (f.dim() != d) {
    throw ConfigError("density grid and field dimension mismatch");
  }
  const Eigen::Index nodes = grid_size(rho.axes);
  const Eigen::Index nt = rho.times.size();
  const Mat centers = grid_centers(rho.axes);

  ContinuityReport report;
  report.times = rho.times;
  report.residual = Mat::Constant(nt, nodes, kNan);

  const bool analytic = static_cast<bool>(rho.eval) && f.is_analytic();
  if (analytic) {
    const double h = fd_step > 0.0 ? fd_step : 1e-5;
    for (Eigen::Index k = 0; k < nt; ++k) {
      const double t = rho.times[k];
      for (Eigen::Index c = 0; c < nodes; ++c) {
        const Vec x = centers.row(c).transpose();
        double res = (rho.eval(t + h, x) - rho.eval(t - h, x)) / (2.0 * h);
        for (int j = 0; j < d; ++j) {
          Vec xp = x;
          Vec xm = x;
          xp[j] += h;
          xm[j] -= h;
          res += (rho.eval(t, xp) * f.value(t, xp)[j] -
                  rho.eval(t, xm) * f.value(t, xm)[j]) /
                 (2.0 * h);
        }
        report.residual(k, c) = res;
      }
    }
  } else {
    Mat values = rho.values;
    if (rho.eval) {
      values.resize(nt, nodes);
      for (Eigen::Index k = 0; k < nt; ++k) {
        for (Eigen::Index c = 0; c < nodes; ++c) {
          values(k, c) = rho.eval(rho.times[k], centers.row(c).transpose());
        }
      }
    }
    if (values.rows() != nt || values.cols() != nodes) {
      throw ConfigError("density value shape does not match the grid");
    }
    const std::vector<Eigen::Index> strides = grid_strides(rho.axes);
    for (Eigen::Index k = 1; k + 1 < nt; ++k) {
      const double t = rho.times[k];
      for (Eigen::Index c = 0; c < nodes; ++c) {
        Eigen::Index rem = c;
        bool interior = true;
        std::vector<Eigen::Index> multi(d);
        for (int j = 0; j < d; ++j) {
          multi[j] = rem / strides[j];
          rem %= strides[j];
          if (multi[j] == 0 || multi[j] + 1 == rho.axes[j].size()) {
            interior = false;
          }
        }
        if (!interior) {
          continue;
        }
        double res = (values(k + 1, c) - values(k - 1, c)) /
                     (rho.times[k + 1] - rho.times[k - 1]);
        for (int j = 0; j < d; ++j) {
          const Eigen::Index cp = c + strides[j];
          const Eigen::Index cm = c - strides[j];
          const double step =
              rho.axes[j][multi[j] + 1] - rho.axes[j][multi[j] - 1];
          res += (values(k, cp) * f.value(t, centers.row(cp).transpose())[j] -
                  values(k, cm) * f.value(t, centers.row(cm).transpose())[j]) /
                 step;
        }
        report.residual(k, c) = res;
      }
    }
  }

  double max_abs = 0.0;
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index k = 0; k < nt; ++k) {
    for (Eigen::Index c = 0; c < nodes; ++c) {
      const double r = report.residual(k, c);
      if (std::isnan(r)) {
        continue;
      }
      double w;
      if (rho.eval) {
        w = rho.eval(rho.times[k], centers.row(c).transpose());
      } else {
        w = rho.values(k, c);
      }
      max_abs = std::max(max_abs, std::abs(r));
      num += w * r * r;
      den += w;
    }
  }
  report.max_abs = max_abs;
  report.weighted_l2 = den > 0.0 ? std::sqrt(num / den) : 0.0;
  return report;
}

double covariance_derivative_check(const GeneralizedInterpolant& interp,
                                   double t, double h) {
  if (!(h > 0.0)) {
    throw ConfigError("difference step must be positive");
  }
  const Mat plus = gaussian_moments(interp, t + h).cov;
  const Mat minus = gaussian_moments(interp, t - h).cov;
  const GaussianPathStats mid = gaussian_moments(interp, t);
  const Mat fd = (plus - minus) / (2.0 * h);
  return (fd - (mid.cross + mid.cross.transpose())).norm();
}

double lipschitz_estimate(const VelocityField& f, double t,
                          const Mat& points) {
  if (points.rows() < 2 || points.cols() != f.dim()) {
    throw ConfigError("lipschitz estimate needs at least two points");
  }
  std::vector<Vec> vals;
  vals.reserve(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    vals.push_back(f.value(t, points.row(i).transpose()));
  }
  double best = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < points.rows(); ++j) {
      const double gap = (points.row(i) - points.row(j)).norm();
      if (gap > 0.0) {
        best = std::max(best, (vals[static_cast<std::size_t>(i)] -
                               vals[static_cast<std::size_t>(j)])
                                  .norm() /
                                  gap);
      }
    }
  }
  return best;
}

}  // namespace sflow
