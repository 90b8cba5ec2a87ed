#ifndef SFLOW_MEASURES_HPP
#define SFLOW_MEASURES_HPP

#include <cstdint>
#include <vector>

#include "sflow/linalg.hpp"
#include "sflow/rng.hpp"

namespace sflow {

// Axis-aligned box; an interval when d = 1.
struct Box {
  Vec lo;
  Vec hi;

  Box() = default;
  Box(Vec lo_, Vec hi_);
  Box(double lo_, double hi_);

  int dim() const { return static_cast<int>(lo.size()); }
  double volume() const;
  bool contains(const Vec& x) const;
};

// Euclidean distance between the closed hulls of two boxes.
double box_distance(const Box& a, const Box& b);

enum class MeasureKind { Gaussian, Uniform, Mixture };

// Tagged union over Gaussian, uniform box/interval, and finite mixtures.
// Construct through the factory functions below; they validate invariants.
struct MeasureSpec {
  MeasureKind kind = MeasureKind::Gaussian;

  // Gaussian
  Vec mean;
  Mat cov;

  // Uniform box
  Box box;

  // Mixture
  std::vector<double> weights;
  std::vector<MeasureSpec> components;

  int dim() const;
};

MeasureSpec gaussian_measure(Vec mean, Mat cov);
MeasureSpec gaussian_measure_1d(double mean, double stddev);
MeasureSpec uniform_measure(Box box);
MeasureSpec uniform_interval(double lo, double hi);
MeasureSpec mixture_measure(std::vector<double> weights,
                            std::vector<MeasureSpec> components);

// Draw one point into out (length d) using the caller's stream.
void draw_sample(const MeasureSpec& m, SampleRng& rng, double* out);

// n i.i.d. draws, one row per sample. Row i is generated from the stream
// keyed by (seed, i), so the result does not depend on batching.
Mat sample(const MeasureSpec& m, std::int64_t n, std::uint64_t seed);

double density(const MeasureSpec& m, const Vec& x);
double density_1d(const MeasureSpec& m, double x);

// Upper bound on the density sup (exact for Gaussian and uniform).
double sup_density_bound(const MeasureSpec& m);

// Analytic mean and covariance of the measure.
Vec measure_mean(const MeasureSpec& m);
Mat measure_cov(const MeasureSpec& m);

double cdf_1d(const MeasureSpec& m, double x);

// Solves cdf(x) = p by bracketing bisection to a 1e-8 bracket followed by
// Newton polish clamped to the bracket.
double quantile_1d(const MeasureSpec& m, double p);

// Standard normal cdf and density.
double normal_cdf(double z);
double normal_density(double z);

double unit_ball_volume(int d);

struct FrostmanBound {
  double C;
  double gamma;
};

// Ball-mass bound P(B_r(x)) <= C r^gamma for a measure with bounded density:
// C = sup_density * |B_1(0)|, gamma = d.
FrostmanBound frostman_constant(double sup_density, int d);

// Max over (center, radius) pairs of empirical ball mass / r^gamma.
double frostman_empirical(const MeasureSpec& m, double gamma,
                          const std::vector<Vec>& centers,
                          const std::vector<double>& radii, std::int64_t n,
                          std::uint64_t seed);

struct SupportGeometry {
  Box S0;
  Box S1;
  double separation = 0.0;
  double w0 = 0.0;
  double w1 = 0.0;
  double epsilon = 0.0;
};

// Exact mass of an axis-aligned box under the measure. Requires independent
// coordinates when d > 1 (diagonal Gaussian covariance, uniform boxes,
// mixtures of such).
double box_mass(const MeasureSpec& m, const Box& box);

// Declares (S0, S1) as a candidate disconnection of the support of m and
// computes masses, separation, and epsilon = 1 - w0 - w1.
SupportGeometry epsilon_disconnected(const MeasureSpec& m, const Box& S0,
                                     const Box& S1);

}  // namespace sflow

#endif  // SFLOW_MEASURES_HPP
