#pragma once

#include <cstdint>
#include <vector>

#include "sflow/linalg.hpp"
#include "sflow/measures.hpp"
#include "sflow/velocity.hpp"

namespace sflow {

enum class FlowMethod { Euler, Rk4 };

// Deterministic characteristics of a velocity field, integrated over a shared
// time grid. Storage matches PathEnsemble: one row per trajectory, time-major
// blocks of d coordinates.
struct FlowTrajectories {
  Vec times;
  int dim = 0;
  FlowMethod method = FlowMethod::Rk4;
  Mat initial;  // k x d launch points
  Mat states;   // k x (n_times * d)
  // Set when an empirical-field trajectory left the grid hull; integration
  // continues on the clamped field but downstream diagnostics may exclude it.
  std::vector<char> truncated;

  Eigen::Index n_trajectories() const { return states.rows(); }
  Eigen::Index n_times() const { return times.size(); }
  double at(Eigen::Index traj, Eigen::Index t_idx, int coord) const {
    return states(traj, t_idx * dim + coord);
  }
  Vec point(Eigen::Index traj, Eigen::Index t_idx) const {
    return states.row(traj).segment(t_idx * dim, dim).transpose();
  }
  Eigen::Index truncated_count() const;
};

// Integrates dx/dt = f(t, x) from times[0] through every node of `times` for
// each row of x0. Empirical fields are evaluated with coordinates clamped to
// the grid hull; any clamped trajectory is flagged as truncated.
FlowTrajectories integrate_flow(const VelocityField& field, const Mat& x0,
                                const Vec& times,
                                FlowMethod method = FlowMethod::Rk4);

// Largest gap between a trajectory and the chord joining its endpoints,
// max over interior nodes of |phi_t - ((1-t) x + t phi_1)|. Requires the
// grid to span [0, 1]. Truncated trajectories are skipped.
double straightness_deviation(const FlowTrajectories& flow);

// Largest second-difference quotient along any trajectory, an estimate of
// max |d^2 phi / dt^2|. Zero for exactly straight trajectories.
double acceleration_diagnostic(const FlowTrajectories& flow);

// Unbiased two-sample energy statistic
// 2 E|X-Y| - E|X-X'| - E|Y-Y'| between the rows of xs and ys.
double energy_distance(const Mat& xs, const Mat& ys);

struct PushforwardReport {
  double mean_gap = 0.0;     // |mean(flow endpoints) - mean(target sample)|
  double mean_gap_se = 0.0;
  double cov_gap = 0.0;      // Frobenius gap between sample covariances
  double cov_gap_se = 0.0;
  double energy = 0.0;       // two-sample energy statistic
  double energy_se = 0.0;    // spread under label permutation
  std::int64_t n = 0;
  Eigen::Index hull_exits = 0;
};

// Transports n samples of p0 to t = 1 along the field and compares the
// endpoint cloud against n fresh samples of p1.
PushforwardReport pushforward_test(const VelocityField& field,
                                   const MeasureSpec& p0,
                                   const MeasureSpec& p1, std::int64_t n,
                                   std::uint64_t seed, int time_nodes = 201,
                                   int permutations = 6);

// True when the sorted order of one-dimensional launch points is strictly
// preserved at every time node. Launch points must be strictly increasing.
bool injectivity_check_1d(const FlowTrajectories& flow);

}  // namespace sflow
