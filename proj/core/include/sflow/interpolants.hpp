#ifndef SFLOW_INTERPOLANTS_HPP
#define SFLOW_INTERPOLANTS_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "sflow/linalg.hpp"
#include "sflow/measures.hpp"
#include "sflow/rng.hpp"

namespace sflow {

enum class ScheduleKind { LinearAffine, SqrtBridge, Collapse, Polynomial };

struct ScheduleEval {
  double a, b, c;
};

struct ScheduleDeriv {
  double da, db, dc;
  bool defined;  // false at the collapse kink t = tau
};

// Smooth products of the schedule weights. The moment algebra only ever needs
// a^2, b^2, c^2, ab and the split cross terms, all of which stay finite even
// where the raw derivative dc blows up (sqrt-bridge endpoints).
struct ScheduleProducts {
  double a, b, c;
  double a2, b2, c2, ab;
  double da2, db2, dc2, dab;
  double d2a2, d2b2, d2c2, d2ab;
  double da_b, a_db;      // \dot a * b and a * \dot b
  double d_da_b, d_a_db;  // time derivatives of the two cross terms
};

// Weight triple (a_t, b_t, c_t) on [0,1] with a(0)=1, a(1)=0, b(0)=0,
// b(1)=1, c(0)=c(1)=0.
class Schedule {
 public:
  static Schedule linear_affine();
  static Schedule sqrt_bridge();
  static Schedule collapse(double tau);
  // Coefficients in ascending powers of t; boundary conditions are checked
  // to 1e-14.
  static Schedule polynomial(std::vector<double> a, std::vector<double> b,
                             std::vector<double> c);

  ScheduleKind kind() const { return kind_; }
  double tau() const;
  // Coefficient vectors of the polynomial form; empty for the named kinds.
  const std::vector<double>& poly_a() const { return pa_; }
  const std::vector<double>& poly_b() const { return pb_; }
  const std::vector<double>& poly_c() const { return pc_; }

  ScheduleEval at(double t) const;
  ScheduleDeriv d1(double t) const;
  ScheduleDeriv d2(double t) const;
  ScheduleProducts products(double t) const;

  // True when c is identically zero, so no auxiliary draw is needed.
  bool pure_affine() const;

 private:
  Schedule() = default;
  ScheduleKind kind_ = ScheduleKind::LinearAffine;
  double tau_ = 0.5;
  std::vector<double> pa_, pb_, pc_;  // polynomial form only
};

enum class CouplingKind { Independent, Deterministic, Joint };

// x -> shift + A x
struct AffineMap {
  Mat A;
  Vec shift;

  Vec operator()(const Vec& x) const { return shift + A * x; }
};

using JointSampler = std::function<void(SampleRng&, Vec&, Vec&)>;

// Joint law of the endpoint pair (X0, X1), plus the auxiliary measure Q for
// independent couplings that feed a noise-carrying schedule.
class Coupling {
 public:
  static Coupling independent(MeasureSpec p0, MeasureSpec p1);
  static Coupling independent(MeasureSpec p0, MeasureSpec p1, MeasureSpec q);
  static Coupling deterministic(MeasureSpec p0, AffineMap T);
  static Coupling joint(MeasureSpec p0, MeasureSpec p1, JointSampler sampler);

  CouplingKind kind() const { return kind_; }
  int dim() const;
  const MeasureSpec& p0() const { return p0_; }
  // Derived for deterministic couplings of a Gaussian P0; stored otherwise.
  const MeasureSpec& p1() const;
  const AffineMap& map() const;
  const std::optional<MeasureSpec>& aux() const { return aux_; }

  // Draw (x0, x1) and, when an auxiliary measure is present, z.
  void draw(SampleRng& rng, Vec& x0, Vec& x1, Vec& z) const;

 private:
  Coupling() = default;
  CouplingKind kind_ = CouplingKind::Independent;
  MeasureSpec p0_;
  std::optional<MeasureSpec> p1_;
  std::optional<MeasureSpec> aux_;
  std::optional<AffineMap> map_;
  JointSampler sampler_;
};

// Anything that can generate full sample paths on a time grid, one
// independent stream per (seed, path index).
class PathSampler {
 public:
  virtual ~PathSampler() = default;
  virtual int dim() const = 0;
  // Fills out[k*dim + j] with coordinate j at times[k].
  virtual void sample_path(std::uint64_t seed, std::int64_t index,
                           const Vec& times, double* out) const = 0;
};

// X_t = a_t X0 + b_t X1 + c_t Z with (X0, X1) from the coupling and Z ~ Q.
class GeneralizedInterpolant : public PathSampler {
 public:
  GeneralizedInterpolant(Schedule schedule, Coupling coupling);

  const Schedule& schedule() const { return schedule_; }
  const Coupling& coupling() const { return coupling_; }
  int aux_dim() const;

  int dim() const override;
  void sample_path(std::uint64_t seed, std::int64_t index, const Vec& times,
                   double* out) const override;

  void draw_endpoints(std::uint64_t seed, std::int64_t index, Vec& x0, Vec& x1,
                      Vec& z) const;
  Vec value(double t, const Vec& x0, const Vec& x1, const Vec& z) const;

 private:
  Schedule schedule_;
  Coupling coupling_;
};

// (1-t)X0 + tX1 + W_t with W a standard Brownian bridge (W_0 = W_1 = 0),
// sampled exactly on the grid through Gaussian conditional increments.
class BrownianBridgeProcess : public PathSampler {
 public:
  BrownianBridgeProcess(MeasureSpec p0, MeasureSpec p1);

  const MeasureSpec& p0() const { return p0_; }
  const MeasureSpec& p1() const { return p1_; }

  int dim() const override;
  void sample_path(std::uint64_t seed, std::int64_t index, const Vec& times,
                   double* out) const override;

 private:
  MeasureSpec p0_;
  MeasureSpec p1_;
};

struct PathEnsemble {
  Vec times;
  int dim = 0;
  std::uint64_t seed = 0;
  // n_paths rows; column k*dim + j holds coordinate j at times[k].
  Mat values;

  std::int64_t n_paths() const { return values.rows(); }
  int n_times() const { return static_cast<int>(times.size()); }
  double at(std::int64_t path, int t_index, int coord) const {
    return values(path, static_cast<Eigen::Index>(t_index) * dim + coord);
  }
  Vec point(std::int64_t path, int t_index) const {
    return values.row(path)
        .segment(static_cast<Eigen::Index>(t_index) * dim, dim)
        .transpose();
  }
};

// Centered-difference path derivatives; boundary time columns are NaN since
// only interior nodes carry values.
struct PathDerivatives {
  Vec times;
  int dim = 0;
  Mat velocities;
  Mat accelerations;
};

// n nodes, uniform on [0,1], endpoints exact.
Vec uniform_grid(int n);

PathEnsemble sample_paths(const PathSampler& process, std::int64_t n,
                          const Vec& times, std::uint64_t seed);

PathDerivatives path_derivatives(const PathEnsemble& e);

// Builders.
GeneralizedInterpolant build_same_cov_gaussian(const Vec& m0, const Vec& m1,
                                               const Mat& sigma);
GeneralizedInterpolant build_1d_gaussian(double m0, double s0, double m1,
                                         double s1);
GeneralizedInterpolant build_multivariate_gaussian(const Vec& m0,
                                                   const Mat& sigma0,
                                                   const Vec& m1,
                                                   const Mat& sigma1);
GeneralizedInterpolant build_affine(Coupling coupling);
GeneralizedInterpolant build_collapse(double tau, Coupling coupling);
BrownianBridgeProcess build_brownian_bridge(MeasureSpec p0, MeasureSpec p1);

// T(x) = m1 + A(x - m0) with A = S0^{-1/2} (S0^{1/2} S1 S0^{1/2})^{1/2} S0^{-1/2};
// pushes N(m0, S0) onto N(m1, S1).
AffineMap gaussian_ot_map(const Vec& m0, const Mat& sigma0, const Vec& m1,
                          const Mat& sigma1);

}  // namespace sflow

#endif  // SFLOW_INTERPOLANTS_HPP
