#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sflow/interpolants.hpp"
#include "sflow/linalg.hpp"

namespace sflow {

// Closed-form endpoint moments of a Gaussian coupling. cross01 = Cov(X0, X1)
// is zero for independent couplings and Sigma0 A^T for deterministic ones.
struct CouplingMoments {
  Vec m0, m1;
  Mat sigma0, sigma1, sigma_z, cross01;
  bool has_aux = false;
};

CouplingMoments coupling_moments(const Coupling& coupling);

// First and second moments of the pair (X_t, Xdot_t). cov_rate and cov_accel
// are the first and second time derivatives of cov. cross = Cov(Xdot_t, X_t)
// and rate_var = Cov(Xdot_t); the latter is flagged non-finite where the
// schedule rate diverges (sqrt-bridge endpoints).
struct GaussianPathStats {
  double t = 0.0;
  Vec mean, mean_rate, mean_accel;
  Mat cov, cov_rate, cov_accel;
  Mat cross, cross_rate;
  Mat rate_var;
  bool rate_var_finite = true;
};

GaussianPathStats gaussian_moments(const GeneralizedInterpolant& interp,
                                   double t);

// Conditional mean rate E[Xdot_t | X_t = x]. Refuses evaluation when cov is
// numerically singular (condition number above 1e12), naming the offending t.
Vec analytic_velocity(const GeneralizedInterpolant& interp, double t,
                      const Vec& x);

// Conditional velocity and conditional rate covariance for a purely affine
// schedule over a Gaussian coupling. pi is constant in x.
struct AffinePointStats {
  Vec v;
  Mat pi;
};

AffinePointStats analytic_affine_stats(const Coupling& coupling, double t,
                                       const Vec& x);

// Velocity field with exact derivative queries (closed-form Gaussian case) or
// multilinear interpolation on a tensor grid (empirical case).
class VelocityField {
 public:
  static VelocityField analytic(GeneralizedInterpolant interp);
  // values[k] holds the field at times[k]: one row per tensor-grid node
  // (row-major over axes, last axis fastest), one column per component.
  static VelocityField empirical(Vec times, std::vector<Vec> axes,
                                 std::vector<Mat> values);

  bool is_analytic() const { return interp_.has_value(); }
  int dim() const;

  Vec value(double t, const Vec& x) const;
  // One row per point; analytic fields factor the covariance once per call.
  Mat value_batch(double t, const Mat& points) const;
  // Row i holds the spatial gradient of component i.
  Mat jacobian(double t, const Vec& x, double dx_step = 0.0) const;
  Vec time_derivative(double t, const Vec& x, double dt_step = 0.0) const;

  const GeneralizedInterpolant& interpolant() const;
  const Vec& times() const { return times_; }
  const std::vector<Vec>& axes() const { return axes_; }

 private:
  VelocityField() = default;
  Vec value_at_slice(int k, const Vec& x) const;

  std::optional<GeneralizedInterpolant> interp_;
  Vec times_;
  std::vector<Vec> axes_;
  std::vector<Mat> values_;
  int dim_ = 0;
};

// Material derivative D_t v = dv/dt + (grad v) v. Zero identically for
// straight processes. Analytic fields differentiate exactly; empirical fields
// use centered differences with the given steps (grid spacing when zero).
Vec burgers_residual(const VelocityField& f, double t, const Vec& x,
                     double dt_step = 0.0, double dx_step = 0.0);

// Per-cell conditional statistics estimated from an ensemble.
struct CellStats {
  Vec v, a;
  Mat c_mat, pi;
  double rho = 0.0;
  Vec se_v, se_a;
  Mat se_pi;
  double se_rho = 0.0;
  double n_eff = 0.0;
  bool valid = false;
};

struct ConditionalStats {
  Vec times;
  std::vector<Vec> axes;  // bin centers per dimension, shared across slices
  Mat centers;            // n_cells x d, row-major over the tensor grid
  std::vector<std::vector<CellStats>> slices;

  int dim() const { return static_cast<int>(axes.size()); }
  std::int64_t n_cells() const { return centers.rows(); }
  int n_slices() const { return static_cast<int>(times.size()); }
};

struct EstimatorOptions {
  int bins_per_dim = 0;          // 0 picks a default by dimension
  double bandwidth_scale = 1.0;  // multiplies the Silverman rule
  double coverage = 0.99;        // central sample range covered by the grid
  double min_effective = 12.0;   // cells below this weight mass are invalid
};

// Kernel-weighted local-linear regression of per-path rates against position,
// one slice per requested interior time index. Axes may be empty, in which
// case they are built from the first slice's sample range.
ConditionalStats empirical_conditional_stats(const PathEnsemble& e,
                                             const std::vector<int>& t_indices,
                                             std::vector<Vec> axes = {},
                                             const EstimatorOptions& opt = {});
ConditionalStats empirical_conditional_stats(const PathEnsemble& e,
                                             int t_index,
                                             std::vector<Vec> axes = {},
                                             const EstimatorOptions& opt = {});

// Residuals of a pointwise identity over the cells of one slice, with
// propagated standard errors. Cells without the needed valid neighbors are
// marked invalid and excluded from the norms.
struct ResidualField {
  Mat residual;  // n_cells x d
  Mat se;        // n_cells x d
  std::vector<char> valid;
  double max_abs = 0.0;
  double weighted_l2 = 0.0;
};

// div(rho Pi) - rho a at every interior cell of slice s.
ResidualField balance_residual(const ConditionalStats& stats, int s = 0);

// d/dt(rho v) + div(rho C) - rho a at slice s, using slices s-1 and s+1 for
// the time difference.
ResidualField momentum_residual(const ConditionalStats& stats, int s);

// Density on a time x tensor-grid of nodes. When eval is set it must accept
// arguments slightly outside [0,1] so small-step time differences stay
// centered; values are then derived from it on demand.
struct GridDensity {
  Vec times;
  std::vector<Vec> axes;
  std::function<double(double, const Vec&)> eval;
  Mat values;  // n_times x n_nodes, ignored when eval is set
};

struct ContinuityReport {
  Vec times;
  Mat residual;  // n_times x n_nodes, NaN where the stencil is unavailable
  double max_abs = 0.0;
  double weighted_l2 = 0.0;
};

// d/dt rho + div(rho v) on the density grid. With an analytic evaluator the
// differences use fd_step (default 1e-5); otherwise they use grid spacing and
// skip boundary nodes.
ContinuityReport continuity_residual(const GridDensity& rho,
                                     const VelocityField& f,
                                     double fd_step = 0.0);

// Frobenius gap between the centered difference of cov and the closed-form
// Cov(Xdot,X) + Cov(X,Xdot) at time t.
double covariance_derivative_check(const GeneralizedInterpolant& interp,
                                   double t, double h);

// Largest pairwise difference quotient of the field over the given points.
double lipschitz_estimate(const VelocityField& f, double t, const Mat& points);

}  // namespace sflow
