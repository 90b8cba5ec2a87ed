#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sflow/interpolants.hpp"
#include "sflow/linalg.hpp"
#include "sflow/measures.hpp"

namespace sflow {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

enum class ZoneKind { StaticInterval, Trapezoid };

struct ZoneSlice {
  double a = 0.0;
  double b = 0.0;
};

// A space-time region whose time slices are open intervals (a_t, b_t). The
// static kind keeps one interval; the trapezoid joins (x0, x1) at t=0 to
// (s0, s1) at t=1 along straight lines.
struct NoGoZone {
  ZoneKind kind = ZoneKind::StaticInterval;
  double a0 = 0.0;
  double b0 = 0.0;
  double a1 = 0.0;
  double b1 = 0.0;

  ZoneSlice slice(double t) const;
};

// Maximal number of alternations X_{t_i} <= a < b <= X_{s_i} along the path,
// found by one left-to-right sweep.
int upcrossing_count(const Vec& values, double a, double b);

// Same sweep against the zone slices at the path's own time nodes.
int upcrossing_count_timevarying(const Vec& times, const Vec& values,
                                 const NoGoZone& zone);

struct ModulusValue {
  double value = 0.0;
  // Set when delta is below the local grid spacing and adjacent pairs had to
  // stand in for a genuine window.
  bool below_grid = false;
};

// Largest |X_t - X_s| over grid pairs with |t - s| <= delta.
ModulusValue modulus_of_continuity(const Vec& times, const Vec& values,
                                   double delta);

struct ConcentrationFit {
  double a_const = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double r_squared = 0.0;
  int cells_used = 0;
  Vec delta_grid;
  Vec theta_grid;

  // A delta^alpha / theta^beta.
  double envelope(double delta, double theta) const;
};

// Fraction of paths with modulus(delta_i) >= theta_j, one row per delta.
Mat exceedance_table(const PathEnsemble& e, const Vec& deltas,
                     const Vec& thetas);

// Least-squares fit of log P(kappa(delta) >= theta) <= log A + alpha log
// delta - beta log theta over the nonzero exceedance cells, then A inflated
// until the bound majorizes every cell.
ConcentrationFit concentration_fit(const PathEnsemble& e, const Vec& deltas,
                                   const Vec& thetas);

struct CrossingBound {
  double bound = 0.0;
  double delta_star = 0.0;
};

// Upper bound on P(upcrossings >= 1) for a process whose slice occupancy is
// at most epsilon and whose modulus satisfies the fitted envelope:
// A ((alpha+1)/alpha^{alpha/(alpha+1)}) epsilon^{alpha/(alpha+1)} /
// gap^{beta/(alpha+1)}, minimized at delta* = (gap^beta epsilon/alpha)^{1/(alpha+1)}.
CrossingBound crossing_bound(double epsilon, double gap,
                             const ConcentrationFit& fit);

// Static zone between the components: (sup S0, inf S1).
NoGoZone build_nogo_static(Interval s0, Interval s1);

// Trapezoid from the source quantiles x_i to the component edges s_i:
// x0 = quantile(p0, w0), x1 = quantile(p0, 1 - w1), lines to (sup S0, inf S1).
NoGoZone build_lowgo_trapezoid(const MeasureSpec& p0,
                               const SupportGeometry& geometry);

struct OccupancyEstimate {
  double p_cross = 0.0;
  double se_cross = 0.0;
  double p_enter = 0.0;
  double se_enter = 0.0;
  std::int64_t n = 0;
};

// Fraction of paths that up-cross the zone (p_cross) and fraction that ever
// occupy a slice or jump across it (p_enter), with binomial standard errors.
OccupancyEstimate empirical_crossing_probability(const PathEnsemble& e,
                                                 const NoGoZone& zone);

// Explicit constant B(alpha, beta, gamma, A, C) from minimizing
// C xi^gamma + 2 A delta^{alpha/(alpha+1)} / xi^{beta/(alpha+1)} over xi.
double b_constant(double alpha, double beta, double gamma, double a_const,
                  double c_const);

enum class Verdict { Consistent, Violated };

struct CrossingReport {
  OccupancyEstimate occupancy;  // NaN probabilities until an ensemble is measured
  double bound = 0.0;
  double delta_star = 0.0;  // delta(epsilon) = epsilon^{alpha/(2 beta)}
  double epsilon = 0.0;
  double w0w1 = 0.0;
  double d_constant = 0.0;
  double epsilon0 = 0.0;  // largest epsilon at which the bound still contradicts w0 w1
  std::array<double, 4> terms{};      // the four summands of the bound
  std::array<double, 4> exponents{};  // their epsilon powers
  NoGoZone zone;
  Verdict verdict = Verdict::Consistent;
};

// Quantitative non-existence check: no straight-line process in the fitted
// concentration class can connect p0 to a target split as in `geometry` when
// w0 w1 exceeds the crossing bound.
CrossingReport impossibility_certificate(const MeasureSpec& p0,
                                         const MeasureSpec& p1,
                                         const SupportGeometry& geometry,
                                         const ConcentrationFit& fit);

}  // namespace sflow
