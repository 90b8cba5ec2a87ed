#include "sflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sflow/errors.hpp"
#include "sflow/interpolants.hpp"
#include "sflow/rng.hpp"

namespace sflow {

namespace {

void require_grid(const Vec& times) {
  if (times.size() < 2) {
    throw ConfigError("integration grid needs at least two nodes");
  }
  for (Eigen::Index i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) {
      throw ConfigError("integration grid must be strictly increasing");
    }
  }
}

// Nearest-hull evaluation for empirical fields. Coordinates outside the grid
// are moved to the boundary, which reproduces the boundary-cell value, and
// the exit is recorded on the trajectory.
Vec clamped_value(const VelocityField& field, double t, Vec x, bool* exited) {
  const auto& axes = field.axes();
  for (int j = 0; j < x.size(); ++j) {
    const Vec& axis = axes[static_cast<std::size_t>(j)];
    const double lo = axis[0];
    const double hi = axis[axis.size() - 1];
    const double eps = 1e-12 * std::max(1.0, hi - lo);
    if (x[j] < lo - eps || x[j] > hi + eps) {
      *exited = true;
    }
    x[j] = std::clamp(x[j], lo, hi);
  }
  const Vec& ts = field.times();
  const double tc = std::clamp(t, ts[0], ts[ts.size() - 1]);
  return field.value(tc, x);
}

double pair_distance(const Mat& a, Eigen::Index i, const Mat& b,
                     Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return std::sqrt(s);
}

double sum_cross(const Mat& a, const Mat& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      s += pair_distance(a, i, b, j);
    }
  }
  return s;
}

double sum_within(const Mat& a) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < a.rows(); ++j) {
      s += pair_distance(a, i, a, j);
    }
  }
  return s;
}

double sum_within_subset(const Mat& z, const std::vector<Eigen::Index>& idx,
                         std::size_t lo, std::size_t hi) {
  double s = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    for (std::size_t j = i + 1; j < hi; ++j) {
      s += pair_distance(z, idx[i], z, idx[j]);
    }
  }
  return s;
}

double energy_from_sums(double cross, double within_x, double within_y,
                        double n, double m) {
  return 2.0 * cross / (n * m) - 2.0 * within_x / (n * (n - 1.0)) -
         2.0 * within_y / (m * (m - 1.0));
}

}  // namespace

Eigen::Index FlowTrajectories::truncated_count() const {
  return static_cast<Eigen::Index>(
      std::count(truncated.begin(), truncated.end(), char(1)));
}

FlowTrajectories integrate_flow(const VelocityField& field, const Mat& x0,
                                const Vec& times, FlowMethod method) {
  if (x0.cols() != field.dim()) {
    throw ConfigError("launch points must have " + std::to_string(field.dim()) +
                      " columns");
  }
  if (x0.rows() < 1) {
    throw ConfigError("integrate_flow needs at least one launch point");
  }
  require_grid(times);

  const int d = field.dim();
  const Eigen::Index k = x0.rows();
  const Eigen::Index nt = times.size();

  FlowTrajectories out;
  out.times = times;
  out.dim = d;
  out.method = method;
  out.initial = x0;
  out.states.resize(k, nt * d);
  out.truncated.assign(static_cast<std::size_t>(k), 0);
  out.states.middleCols(0, d) = x0;

  if (field.is_analytic()) {
    Mat cur = x0;
    for (Eigen::Index s = 0; s + 1 < nt; ++s) {
      const double t = times[s];
      const double h = times[s + 1] - t;
      if (method == FlowMethod::Euler) {
        cur += h * field.value_batch(t, cur);
      } else {
        const Mat k1 = field.value_batch(t, cur);
        const Mat k2 = field.value_batch(t + 0.5 * h, cur + (0.5 * h) * k1);
        const Mat k3 = field.value_batch(t + 0.5 * h, cur + (0.5 * h) * k2);
        const Mat k4 = field.value_batch(t + h, cur + h * k3);
        cur += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      out.states.middleCols((s + 1) * d, d) = cur;
    }
    return out;
  }

  for (Eigen::Index i = 0; i < k; ++i) {
    Vec x = x0.row(i).transpose();
    bool exited = false;
    for (Eigen::Index s = 0; s + 1 < nt; ++s) {
      const double t = times[s];
      const double h = times[s + 1] - t;
      if (method == FlowMethod::Euler) {
        x += h * clamped_value(field, t, x, &exited);
      } else {
        const Vec k1 = clamped_value(field, t, x, &exited);
        const Vec k2 = clamped_value(field, t + 0.5 * h, x + (0.5 * h) * k1,
                                     &exited);
        const Vec k3 = clamped_value(field, t + 0.5 * h, x + (0.5 * h) * k2,
                                     &exited);
        const Vec k4 = clamped_value(field, t + h, x + h * k3, &exited);
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      out.states.row(i).segment((s + 1) * d, d) = x.transpose();
    }
    out.truncated[static_cast<std::size_t>(i)] = exited ? 1 : 0;
  }
  return out;
}

double straightness_deviation(const FlowTrajectories& flow) {
  const Eigen::Index nt = flow.n_times();
  if (nt < 2) {
    throw ConfigError("straightness needs at least two time nodes");
  }
  if (std::abs(flow.times[0]) > 1e-9 || std::abs(flow.times[nt - 1] - 1.0) > 1e-9) {
    throw ConfigError("straightness requires a grid spanning [0, 1]");
  }
  double worst = 0.0;
  for (Eigen::Index i = 0; i < flow.n_trajectories(); ++i) {
    if (flow.truncated[static_cast<std::size_t>(i)]) {
      continue;
    }
    const Vec x = flow.point(i, 0);
    const Vec end = flow.point(i, nt - 1);
    for (Eigen::Index s = 1; s + 1 < nt; ++s) {
      const double t = flow.times[s];
      const double gap = (flow.point(i, s) - ((1.0 - t) * x + t * end)).norm();
      worst = std::max(worst, gap);
    }
  }
  return worst;
}

double acceleration_diagnostic(const FlowTrajectories& flow) {
  const Eigen::Index nt = flow.n_times();
  if (nt < 3) {
    throw ConfigError("acceleration diagnostic needs at least three time nodes");
  }
  double worst = 0.0;
  for (Eigen::Index i = 0; i < flow.n_trajectories(); ++i) {
    for (Eigen::Index s = 1; s + 1 < nt; ++s) {
      const double h1 = flow.times[s] - flow.times[s - 1];
      const double h2 = flow.times[s + 1] - flow.times[s];
      const Vec d2 = 2.0 *
                     (h1 * flow.point(i, s + 1) - (h1 + h2) * flow.point(i, s) +
                      h2 * flow.point(i, s - 1)) /
                     (h1 * h2 * (h1 + h2));
      worst = std::max(worst, d2.norm());
    }
  }
  return worst;
}

double energy_distance(const Mat& xs, const Mat& ys) {
  if (xs.cols() != ys.cols()) {
    throw ConfigError("energy distance needs samples of equal dimension");
  }
  if (xs.rows() < 2 || ys.rows() < 2) {
    throw ConfigError("energy distance needs at least two samples per side");
  }
  const double n = static_cast<double>(xs.rows());
  const double m = static_cast<double>(ys.rows());
  return energy_from_sums(sum_cross(xs, ys), sum_within(xs), sum_within(ys), n,
                          m);
}

PushforwardReport pushforward_test(const VelocityField& field,
                                   const MeasureSpec& p0,
                                   const MeasureSpec& p1, std::int64_t n,
                                   std::uint64_t seed, int time_nodes,
                                   int permutations) {
  if (n < 2) {
    throw ConfigError("pushforward test needs at least two samples");
  }
  if (p0.dim() != field.dim() || p1.dim() != field.dim()) {
    throw ConfigError("pushforward measures must match the field dimension");
  }
  const int d = field.dim();
  const Mat x0 = sample(p0, n, seed);
  const Mat y = sample(p1, n, seed ^ 0x5851f42d4c957f2dULL);

  const FlowTrajectories tr =
      integrate_flow(field, x0, uniform_grid(time_nodes), FlowMethod::Rk4);
  const Mat xe = tr.states.middleCols((tr.n_times() - 1) * d, d);

  PushforwardReport report;
  report.n = n;
  report.hull_exits = tr.truncated_count();

  const Vec mean_x = xe.colwise().mean().transpose();
  const Vec mean_y = y.colwise().mean().transpose();
  const Mat cx = xe.rowwise() - mean_x.transpose();
  const Mat cy = y.rowwise() - mean_y.transpose();
  const double nn = static_cast<double>(n);
  const Mat cov_x = cx.transpose() * cx / (nn - 1.0);
  const Mat cov_y = cy.transpose() * cy / (nn - 1.0);

  report.mean_gap = (mean_x - mean_y).norm();
  report.mean_gap_se = std::sqrt((cov_x.trace() + cov_y.trace()) / nn);
  report.cov_gap = (cov_x - cov_y).norm();
  double cov_var = 0.0;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      cov_var += (cov_x(i, i) * cov_x(j, j) + cov_x(i, j) * cov_x(i, j) +
                  cov_y(i, i) * cov_y(j, j) + cov_y(i, j) * cov_y(i, j)) /
                 nn;
    }
  }
  report.cov_gap_se = std::sqrt(cov_var);

  const double cross = sum_cross(xe, y);
  const double within_x = sum_within(xe);
  const double within_y = sum_within(y);
  report.energy = energy_from_sums(cross, within_x, within_y, nn, nn);

  if (permutations > 1) {
    Mat pooled(2 * n, d);
    pooled.topRows(n) = xe;
    pooled.bottomRows(n) = y;
    const double total = cross + within_x + within_y;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(2 * n));
    std::iota(idx.begin(), idx.end(), Eigen::Index(0));
    std::vector<double> stats;
    stats.reserve(static_cast<std::size_t>(permutations));
    for (int b = 0; b < permutations; ++b) {
      SampleRng rng(seed ^ 0x9e3779b97f4a7c15ULL,
                    static_cast<std::uint64_t>(b));
      for (std::size_t i = idx.size() - 1; i > 0; --i) {
        const std::size_t j =
            static_cast<std::size_t>(rng.next_u64() % (i + 1));
        std::swap(idx[i], idx[j]);
      }
      const double wx =
          sum_within_subset(pooled, idx, 0, static_cast<std::size_t>(n));
      const double wy = sum_within_subset(pooled, idx,
                                          static_cast<std::size_t>(n),
                                          idx.size());
      stats.push_back(energy_from_sums(total - wx - wy, wx, wy, nn, nn));
    }
    double mean = 0.0;
    for (double s : stats) {
      mean += s;
    }
    mean /= static_cast<double>(stats.size());
    double var = 0.0;
    for (double s : stats) {
      var += (s - mean) * (s - mean);
    }
    var /= static_cast<double>(stats.size() - 1);
    report.energy_se = std::sqrt(var);
  }
  return report;
}

bool injectivity_check_1d(const FlowTrajectories& flow) {
  if (flow.dim != 1) {
    throw ConfigError("injectivity check requires one-dimensional trajectories");
  }
  if (flow.n_trajectories() < 2) {
    throw ConfigError("injectivity check needs at least two trajectories");
  }
  for (Eigen::Index i = 1; i < flow.n_trajectories(); ++i) {
    if (!(flow.initial(i, 0) > flow.initial(i - 1, 0))) {
      throw ConfigError("launch points must be strictly increasing");
    }
  }
  for (Eigen::Index s = 0; s < flow.n_times(); ++s) {
    for (Eigen::Index i = 1; i < flow.n_trajectories(); ++i) {
      if (!(flow.at(i, s, 0) > flow.at(i - 1, s, 0))) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace sflow
