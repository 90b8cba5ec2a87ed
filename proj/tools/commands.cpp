#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sflow/errors.hpp"
#include "sflow/flow.hpp"
#include "sflow/interpolants.hpp"
#include "sflow/nogo.hpp"
#include "sflow/report_io.hpp"
#include "sflow/velocity.hpp"

namespace sflow::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file \"" + path + "\"");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  json cfg = json::parse(buffer.str(), nullptr, false);
  if (cfg.is_discarded()) {
    throw ConfigError("config file \"" + path + "\" is not valid JSON");
  }
  if (!cfg.is_object()) {
    throw ConfigError("config file \"" + path + "\" must hold a JSON object");
  }
  return cfg;
}

json load_config(const Options& opt, bool required) {
  if (opt.config_path.empty()) {
    if (required) {
      throw ConfigError("this command needs --config <path>");
    }
    return json::object();
  }
  return parse_config_file(opt.config_path);
}

// Seeds are mandatory for reproducibility; the flag overrides the file.
std::uint64_t resolve_seed(json& cfg, const Options& opt,
                           std::optional<std::uint64_t> fallback = {}) {
  if (opt.seed) {
    cfg["seed"] = *opt.seed;
    return *opt.seed;
  }
  if (cfg.contains("seed")) {
    if (!cfg["seed"].is_number_unsigned() && !cfg["seed"].is_number_integer()) {
      throw ConfigError("config key \"seed\" must be a non-negative integer");
    }
    return cfg["seed"].get<std::uint64_t>();
  }
  if (fallback) {
    cfg["seed"] = *fallback;
    return *fallback;
  }
  throw ConfigError("a seed is required: set \"seed\" in the config or pass --seed");
}

double num_at(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) {
    return fallback;
  }
  if (!j[key].is_number()) {
    throw ConfigError(std::string("config key \"") + key + "\" must be a number");
  }
  return j[key].get<double>();
}

int int_at(const json& j, const char* key, int fallback) {
  const double x = num_at(j, key, fallback);
  if (x != std::floor(x)) {
    throw ConfigError(std::string("config key \"") + key + "\" must be an integer");
  }
  return static_cast<int>(x);
}

Vec vec_at(const json& j, const char* key, Vec fallback) {
  if (!j.contains(key)) {
    return fallback;
  }
  const json& arr = j[key];
  if (!arr.is_array() || arr.empty()) {
    throw ConfigError(std::string("config key \"") + key +
                      "\" must be a non-empty array");
  }
  Vec v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) {
      throw ConfigError(std::string("config key \"") + key +
                        "\" must hold numbers");
    }
    v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  }
  return v;
}

MeasureSpec measure_key(const json& cfg, const char* key) {
  if (!cfg.contains("measures") || !cfg["measures"].contains(key)) {
    throw ConfigError(std::string("config needs measures.") + key);
  }
  try {
    return measure_from_json(cfg["measures"][key].dump());
  } catch (const ConfigError& err) {
    throw ConfigError(std::string("measures.") + key + ": " + err.what());
  }
}

bool covariances_match(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() &&
         (a - b).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + a.cwiseAbs().maxCoeff());
}

// The "interpolant" config block either names a builder over the declared
// measures or spells out an explicit schedule/coupling document.
GeneralizedInterpolant build_from_config(const json& cfg) {
  if (!cfg.contains("interpolant") || !cfg["interpolant"].is_object()) {
    throw ConfigError("config needs an \"interpolant\" object");
  }
  const json& spec = cfg["interpolant"];
  if (spec.contains("schedule")) {
    return interpolant_from_json(spec.dump());
  }
  if (!spec.contains("builder") || !spec["builder"].is_string()) {
    throw ConfigError("interpolant needs a \"builder\" name or an explicit "
                      "\"schedule\"/\"coupling\" pair");
  }
  const std::string builder = spec["builder"].get<std::string>();

  if (builder == "affine" || builder == "collapse") {
    MeasureSpec p0 = measure_key(cfg, "p0");
    MeasureSpec p1 = measure_key(cfg, "p1");
    Coupling coupling =
        cfg["measures"].contains("q")
            ? Coupling::independent(std::move(p0), std::move(p1),
                                    measure_key(cfg, "q"))
            : Coupling::independent(std::move(p0), std::move(p1));
    if (builder == "collapse") {
      return build_collapse(num_at(spec, "tau", 0.5), std::move(coupling));
    }
    return build_affine(std::move(coupling));
  }

  MeasureSpec p0 = measure_key(cfg, "p0");
  MeasureSpec p1 = measure_key(cfg, "p1");
  if (p0.kind != MeasureKind::Gaussian || p1.kind != MeasureKind::Gaussian) {
    throw ConfigError("builder \"" + builder + "\" needs Gaussian p0 and p1");
  }
  if (builder == "same_cov") {
    if (!covariances_match(p0.cov, p1.cov)) {
      throw ConfigError("builder \"same_cov\" needs matching covariances; "
                        "use \"pencil\" for distinct ones");
    }
    return build_same_cov_gaussian(p0.mean, p1.mean, p0.cov);
  }
  if (builder == "pencil") {
    if (p0.dim() == 1) {
      return build_1d_gaussian(p0.mean[0], std::sqrt(p0.cov(0, 0)), p1.mean[0],
                               std::sqrt(p1.cov(0, 0)));
    }
    return build_multivariate_gaussian(p0.mean, p0.cov, p1.mean, p1.cov);
  }
  if (builder == "monge") {
    AffineMap map = gaussian_ot_map(p0.mean, p0.cov, p1.mean, p1.cov);
    return build_affine(Coupling::deterministic(std::move(p0), std::move(map)));
  }
  throw ConfigError("unknown interpolant builder \"" + builder + "\"");
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw ConfigError("cannot open output file \"" + path.string() + "\"");
  }
  os << text;
  if (!os) {
    throw ConfigError("failed writing \"" + path.string() + "\"");
  }
}

fs::path out_path(const Options& opt, const char* name) {
  return fs::path(opt.out_dir) / name;
}

std::string dump_report(const json& j) { return j.dump(2) + "\n"; }

int default_launch_per_dim(int d) {
  switch (d) {
    case 1:
      return 50;
    case 2:
      return 5;
    case 3:
      return 4;
    default:
      return 3;
  }
}

// Tensor grid over [lo, hi] per coordinate, row-major with the last axis
// fastest, matching the empirical field layout.
Mat tensor_launch(const Vec& lo, const Vec& hi, int per_dim) {
  const int d = static_cast<int>(lo.size());
  Eigen::Index rows = 1;
  for (int j = 0; j < d; ++j) {
    rows *= per_dim;
  }
  Mat points(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    Eigen::Index rem = r;
    for (int j = d - 1; j >= 0; --j) {
      const Eigen::Index idx = rem % per_dim;
      rem /= per_dim;
      const double frac =
          per_dim == 1 ? 0.5 : static_cast<double>(idx) / (per_dim - 1);
      points(r, j) = lo[j] + frac * (hi[j] - lo[j]);
    }
  }
  return points;
}

void source_bounds(const MeasureSpec& p0, double widths, Vec& lo, Vec& hi) {
  const Vec mean = measure_mean(p0);
  const Mat cov = measure_cov(p0);
  lo = mean;
  hi = mean;
  for (Eigen::Index j = 0; j < mean.size(); ++j) {
    const double sd = std::sqrt(std::max(cov(j, j), 0.0));
    lo[j] -= widths * sd;
    hi[j] += widths * sd;
  }
}

json pushforward_json(const PushforwardReport& report) {
  json j;
  j["mean_gap"] = report.mean_gap;
  j["mean_gap_se"] = report.mean_gap_se;
  j["cov_gap"] = report.cov_gap;
  j["cov_gap_se"] = report.cov_gap_se;
  j["energy_dist"] = report.energy;
  j["energy_se"] = report.energy_se;
  j["n"] = report.n;
  j["hull_exits"] = static_cast<std::int64_t>(report.hull_exits);
  return j;
}

double max_endpoint_gap(const FlowTrajectories& a, const FlowTrajectories& b) {
  const Eigen::Index last_a = (a.times.size() - 1) * a.dim;
  const Eigen::Index last_b = (b.times.size() - 1) * b.dim;
  double gap = 0.0;
  for (Eigen::Index r = 0; r < a.states.rows(); ++r) {
    const double g = (a.states.row(r).segment(last_a, a.dim) -
                      b.states.row(r).segment(last_b, b.dim))
                         .norm();
    gap = std::max(gap, g);
  }
  return gap;
}

struct FlowDiagnostics {
  FlowTrajectories flow;
  double straightness = 0.0;
  double max_accel = 0.0;
  double one_step_gap = 0.0;
};

FlowDiagnostics run_flow_diagnostics(const VelocityField& field,
                                     const Mat& launches, const Vec& times) {
  FlowDiagnostics out;
  out.flow = integrate_flow(field, launches, times);
  out.straightness = straightness_deviation(out.flow);
  out.max_accel = acceleration_diagnostic(out.flow);
  Vec two(2);
  two << times[0], times[times.size() - 1];
  const FlowTrajectories one_step =
      integrate_flow(field, launches, two, FlowMethod::Euler);
  out.one_step_gap = max_endpoint_gap(one_step, out.flow);
  return out;
}

Mat gaussian_rotation(std::uint64_t seed) {
  SampleRng rng(seed, 0x7f4a7c15);
  Mat g(3, 3);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      g(i, j) = rng.gaussian();
    }
  }
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < 3; ++j) {
    if (r(j, j) < 0.0) {
      q.col(j) *= -1.0;
    }
  }
  if (q.determinant() < 0.0) {
    q.col(2) *= -1.0;
  }
  return q;
}

json mat_json(const Mat& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      row.push_back(m(i, j));
    }
    out.push_back(std::move(row));
  }
  return out;
}

json vec_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out.push_back(v[i]);
  }
  return out;
}

bool gaussian_path_density_available(const Coupling& c) {
  if (c.p0().kind != MeasureKind::Gaussian) {
    return false;
  }
  if (c.kind() == CouplingKind::Deterministic) {
    return true;
  }
  if (c.kind() != CouplingKind::Independent) {
    return false;
  }
  if (c.p1().kind != MeasureKind::Gaussian) {
    return false;
  }
  return !c.aux() || c.aux()->kind == MeasureKind::Gaussian;
}

}  // namespace

int run_build(const Options& opt) {
  json cfg = load_config(opt, true);
  resolve_seed(cfg, opt);
  const GeneralizedInterpolant interp = build_from_config(cfg);

  json out;
  out["config"] = cfg;
  out["interpolant"] = json::parse(interpolant_to_json(interp));
  const fs::path path = out_path(opt, "interpolant.json");
  write_file(path, dump_report(out));
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

int run_sample(const Options& opt) {
  json cfg = load_config(opt, true);
  const std::uint64_t seed = resolve_seed(cfg, opt);
  const GeneralizedInterpolant interp = build_from_config(cfg);

  const json grids = cfg.value("grids", json::object());
  const int time_nodes = int_at(grids, "time_nodes", 201);
  const int n_paths = int_at(grids, "paths", 10000);
  cfg["grids"]["time_nodes"] = time_nodes;
  cfg["grids"]["paths"] = n_paths;

  const PathEnsemble e =
      sample_paths(interp, n_paths, uniform_grid(time_nodes), seed);
  std::ostringstream csv;
  write_paths_csv(csv, e);
  write_file(out_path(opt, "paths.csv"), csv.str());

  json manifest;
  manifest["config"] = cfg;
  manifest["files"] = json::array({"paths.csv"});
  manifest["n_paths"] = e.n_paths();
  manifest["dim"] = e.dim;
  write_file(out_path(opt, "sample.json"), dump_report(manifest));
  std::cout << "wrote " << out_path(opt, "paths.csv").string() << " ("
            << e.n_paths() << " paths, dim " << e.dim << ")\n";
  return 0;
}

int run_flow(const Options& opt) {
  json cfg = load_config(opt, true);
  const std::uint64_t seed = resolve_seed(cfg, opt);
  const GeneralizedInterpolant interp = build_from_config(cfg);
  const VelocityField field = VelocityField::analytic(interp);
  const int d = field.dim();

  const json grids = cfg.value("grids", json::object());
  const int time_nodes = int_at(grids, "time_nodes", 201);
  const int per_dim = int_at(grids, "launch_per_dim", default_launch_per_dim(d));
  const int mc = int_at(grids, "mc", 4000);
  cfg["grids"]["time_nodes"] = time_nodes;
  cfg["grids"]["launch_per_dim"] = per_dim;
  cfg["grids"]["mc"] = mc;

  Vec lo, hi;
  source_bounds(interp.coupling().p0(), 3.0, lo, hi);
  const Mat launches = tensor_launch(lo, hi, per_dim);
  const Vec times = uniform_grid(time_nodes);
  const FlowDiagnostics diag = run_flow_diagnostics(field, launches, times);

  std::ostringstream csv;
  write_trajectories_csv(csv, diag.flow);
  write_file(out_path(opt, "trajectories.csv"), csv.str());

  const PushforwardReport push = pushforward_test(
      field, interp.coupling().p0(), interp.coupling().p1(), mc, seed,
      time_nodes);

  json report;
  report["config"] = cfg;
  report["straightness_dev"] = diag.straightness;
  report["max_accel"] = diag.max_accel;
  report["one_step_gap"] = diag.one_step_gap;
  report["pushforward"] = pushforward_json(push);
  write_file(out_path(opt, "flow.json"), dump_report(report));
  std::cout << "wrote " << out_path(opt, "flow.json").string()
            << " (straightness_dev " << format_double(diag.straightness)
            << ")\n";
  return 0;
}

int run_diagnose(const Options& opt) {
  json cfg = load_config(opt, true);
  const std::uint64_t seed = resolve_seed(cfg, opt);
  const GeneralizedInterpolant interp = build_from_config(cfg);
  const int d = interp.dim();

  const json grids = cfg.value("grids", json::object());
  const int time_nodes = int_at(grids, "time_nodes", 201);
  const int n_paths = int_at(grids, "paths", 20000);
  const int per_dim = int_at(grids, "launch_per_dim", default_launch_per_dim(d));
  const int density_nodes = int_at(grids, "density_nodes", d == 1 ? 61 : 21);
  const int density_time_nodes = int_at(grids, "density_time_nodes", 41);
  cfg["grids"]["time_nodes"] = time_nodes;
  cfg["grids"]["paths"] = n_paths;
  cfg["grids"]["launch_per_dim"] = per_dim;

  json report;
  report["config"] = cfg;
  json errors = json::object();

  const VelocityField field = VelocityField::analytic(interp);
  Vec lo, hi;
  source_bounds(interp.coupling().p0(), 3.0, lo, hi);
  const Mat launches = tensor_launch(lo, hi, per_dim);

  // Material derivative of the analytic field over a coarse time sweep.
  try {
    double burgers = 0.0;
    for (int k = 1; k <= 9; ++k) {
      const double t = 0.1 * k;
      for (Eigen::Index r = 0; r < launches.rows(); ++r) {
        burgers = std::max(
            burgers, burgers_residual(field, t, launches.row(r).transpose())
                         .cwiseAbs()
                         .maxCoeff());
      }
    }
    report["burgers_max"] = burgers;
  } catch (const std::exception& err) {
    report["burgers_max"] = nullptr;
    errors["burgers"] = err.what();
  }

  // Monte Carlo balance and momentum residuals around the midpoint slice.
  try {
    const PathEnsemble e =
        sample_paths(interp, n_paths, uniform_grid(time_nodes), seed);
    const int mid = time_nodes / 2;
    const ConditionalStats stats =
        empirical_conditional_stats(e, {mid - 1, mid, mid + 1});
    report["balance_max"] = balance_residual(stats, 1).max_abs;
    report["momentum_max"] = momentum_residual(stats, 1).max_abs;
  } catch (const std::exception& err) {
    report["balance_max"] = nullptr;
    report["momentum_max"] = nullptr;
    errors["moments"] = err.what();
  }

  // Continuity residual on an analytic Gaussian density grid.
  try {
    if (!gaussian_path_density_available(interp.coupling())) {
      throw ConfigError("continuity residual needs Gaussian endpoints");
    }
    if (d > 2) {
      throw ConfigError("continuity residual limited to d <= 2");
    }
    GridDensity rho;
    rho.times = uniform_grid(density_time_nodes);
    Vec dlo, dhi;
    source_bounds(interp.coupling().p0(), 4.0, dlo, dhi);
    Vec tlo, thi;
    source_bounds(interp.coupling().p1(), 4.0, tlo, thi);
    for (int j = 0; j < d; ++j) {
      dlo[j] = std::min(dlo[j], tlo[j]);
      dhi[j] = std::max(dhi[j], thi[j]);
    }
    rho.axes.resize(d);
    for (int j = 0; j < d; ++j) {
      rho.axes[j] = Vec::LinSpaced(density_nodes, dlo[j], dhi[j]);
    }
    rho.eval = [&interp](double t, const Vec& x) {
      const GaussianPathStats s = gaussian_moments(interp, t);
      return density(gaussian_measure(s.mean, s.cov), x);
    };
    report["continuity_max"] = continuity_residual(rho, field).max_abs;
  } catch (const std::exception& err) {
    report["continuity_max"] = nullptr;
    errors["continuity"] = err.what();
  }

  // Lipschitz sweep; divergence along the sweep marks a non-Lipschitz field.
  bool non_lipschitz = false;
  try {
    std::vector<double> sweep;
    for (int k = 0; k < 10; ++k) {
      sweep.push_back(0.05 + 0.1 * k);
    }
    if (interp.schedule().kind() == ScheduleKind::Collapse) {
      const double tau = interp.schedule().tau();
      for (double off : {0.2, 0.1, 0.05, 0.02, 0.01, 0.005}) {
        for (double t : {tau - off, tau + off}) {
          if (t > 0.0 && t < 1.0) {
            sweep.push_back(t);
          }
        }
      }
    }
    std::sort(sweep.begin(), sweep.end());
    double lip_min = std::numeric_limits<double>::infinity();
    double lip_max = 0.0;
    json lip_rows = json::array();
    for (double t : sweep) {
      double lip = 0.0;
      try {
        lip = lipschitz_estimate(field, t, launches);
      } catch (const NumericalError&) {
        non_lipschitz = true;
        continue;
      }
      lip_min = std::min(lip_min, lip);
      lip_max = std::max(lip_max, lip);
      json row;
      row["t"] = t;
      row["lipschitz"] = lip;
      lip_rows.push_back(std::move(row));
    }
    report["lipschitz_sup"] = lip_max;
    report["lipschitz_sweep"] = std::move(lip_rows);
    if (lip_max >= 50.0 && lip_max >= 20.0 * lip_min) {
      non_lipschitz = true;
    }
  } catch (const std::exception& err) {
    report["lipschitz_sup"] = nullptr;
    errors["lipschitz"] = err.what();
  }

  // Flow straightness diagnostics.
  try {
    const FlowDiagnostics diag =
        run_flow_diagnostics(field, launches, uniform_grid(time_nodes));
    report["straightness_dev"] = diag.straightness;
    report["max_accel"] = diag.max_accel;
    report["one_step_gap"] = diag.one_step_gap;
  } catch (const std::exception& err) {
    report["straightness_dev"] = nullptr;
    report["max_accel"] = nullptr;
    report["one_step_gap"] = nullptr;
    errors["flow"] = err.what();
  }

  try {
    const PushforwardReport push =
        pushforward_test(field, interp.coupling().p0(), interp.coupling().p1(),
                         int_at(grids, "mc", 4000), seed, time_nodes);
    report["pushforward"] = pushforward_json(push);
  } catch (const std::exception& err) {
    report["pushforward"] = nullptr;
    errors["pushforward"] = err.what();
  }

  std::string verdict;
  if (non_lipschitz) {
    verdict = "not straight (non-Lipschitz)";
  } else {
    const bool straight =
        report["burgers_max"].is_number() &&
        report["burgers_max"].get<double>() <= 1e-8 &&
        report["straightness_dev"].is_number() &&
        report["straightness_dev"].get<double>() <= 1e-6 &&
        report["max_accel"].is_number() &&
        report["max_accel"].get<double>() <= 1e-6;
    verdict = straight ? "straight" : "not straight";
  }
  report["verdict"] = verdict;
  report["errors"] = std::move(errors);

  write_file(out_path(opt, "diagnose.json"), dump_report(report));
  std::cout << "verdict: " << verdict << "\n";
  return 0;
}

namespace {

struct FigureSetup {
  GeneralizedInterpolant interp;
  Mat launches;
  json extra;
};

FigureSetup figure_setup(int which, std::uint64_t seed, int per_dim_override) {
  if (which == 1) {
    FigureSetup f{build_1d_gaussian(-2.0, 0.6, 3.0, 1.5), Mat(), json()};
    Vec lo, hi;
    source_bounds(f.interp.coupling().p0(), 3.0, lo, hi);
    f.launches =
        tensor_launch(lo, hi, per_dim_override > 0 ? per_dim_override : 50);
    return f;
  }
  if (which == 2) {
    Vec m0(2), m1(2);
    m0 << -2.0, -1.0;
    m1 << 3.0, 1.0;
    Mat s0 = Mat::Zero(2, 2), s1 = Mat::Zero(2, 2);
    s0.diagonal() << 0.36, 1.0;
    s1.diagonal() << 2.25, 0.25;
    FigureSetup f{build_multivariate_gaussian(m0, s0, m1, s1), Mat(), json()};
    f.extra["sigma0"] = mat_json(s0);
    f.extra["sigma1"] = mat_json(s1);
    Vec lo, hi;
    source_bounds(f.interp.coupling().p0(), 2.0, lo, hi);
    f.launches =
        tensor_launch(lo, hi, per_dim_override > 0 ? per_dim_override : 5);
    return f;
  }
  // Non-commuting endpoint pair: a seed-locked rotation of one diagonal
  // against another diagonal.
  const Mat rot = gaussian_rotation(seed);
  Mat d0 = Mat::Zero(3, 3), s1 = Mat::Zero(3, 3);
  d0.diagonal() << 0.25, 1.0, 2.25;
  s1.diagonal() << 2.25, 0.25, 1.0;
  Mat s0 = rot * d0 * rot.transpose();
  s0 = 0.5 * (s0 + s0.transpose());
  Vec m0 = Vec::Zero(3), m1(3);
  m1 << 2.0, -1.0, 1.0;
  FigureSetup f{build_multivariate_gaussian(m0, s0, m1, s1), Mat(), json()};
  f.extra["sigma0"] = mat_json(s0);
  f.extra["sigma1"] = mat_json(s1);
  f.extra["rotation"] = mat_json(rot);
  Vec lo, hi;
  source_bounds(f.interp.coupling().p0(), 2.0, lo, hi);
  f.launches =
      tensor_launch(lo, hi, per_dim_override > 0 ? per_dim_override : 4);
  return f;
}

}  // namespace

int run_figure(int which, const Options& opt) {
  if (which < 1 || which > 3) {
    throw ConfigError("figure number must be 1, 2, or 3");
  }
  json cfg = load_config(opt, false);
  const std::uint64_t seed = resolve_seed(cfg, opt, 1729);
  const json grids = cfg.value("grids", json::object());
  const int time_nodes = int_at(grids, "time_nodes", 201);
  const int per_dim = int_at(grids, "launch_per_dim", 0);
  cfg["figure"] = which;
  cfg["grids"]["time_nodes"] = time_nodes;

  FigureSetup setup = figure_setup(which, seed, per_dim);
  const Vec times = uniform_grid(time_nodes);

  const PathEnsemble paths = sample_paths(setup.interp, 25, times, seed);
  std::ostringstream paths_csv;
  write_paths_csv(paths_csv, paths);
  write_file(out_path(opt, "paths.csv"), paths_csv.str());

  const VelocityField field = VelocityField::analytic(setup.interp);
  const FlowDiagnostics diag = run_flow_diagnostics(field, setup.launches, times);
  std::ostringstream flow_csv;
  write_trajectories_csv(flow_csv, diag.flow);
  write_file(out_path(opt, "flow.csv"), flow_csv.str());

  json manifest;
  manifest["config"] = cfg;
  manifest["interpolant"] = json::parse(interpolant_to_json(setup.interp));
  manifest["n_paths"] = paths.n_paths();
  manifest["n_trajectories"] = diag.flow.states.rows();
  manifest["straightness_dev"] = diag.straightness;
  manifest["max_accel"] = diag.max_accel;
  manifest["files"] = json::array({"paths.csv", "flow.csv"});
  for (auto& [key, value] : setup.extra.items()) {
    manifest[key] = value;
  }

  if (which == 1) {
    // Densities of the time marginals on a shared axis.
    const MeasureSpec& p0 = setup.interp.coupling().p0();
    const MeasureSpec& p1 = setup.interp.coupling().p1();
    const double lo = std::min(measure_mean(p0)[0] - 4.0 * 0.6,
                               measure_mean(p1)[0] - 4.0 * 1.5);
    const double hi = std::max(measure_mean(p0)[0] + 4.0 * 0.6,
                               measure_mean(p1)[0] + 4.0 * 1.5);
    const Vec axis = Vec::LinSpaced(201, lo, hi);
    std::string csv = "t,x,rho\n";
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const GaussianPathStats s = gaussian_moments(setup.interp, t);
      const MeasureSpec marginal = gaussian_measure(s.mean, s.cov);
      for (Eigen::Index i = 0; i < axis.size(); ++i) {
        csv += format_double(t);
        csv += ',';
        csv += format_double(axis[i]);
        csv += ',';
        csv += format_double(density_1d(marginal, axis[i]));
        csv += '\n';
      }
    }
    write_file(out_path(opt, "marginals.csv"), csv);
    manifest["files"].push_back("marginals.csv");
  }

  write_file(out_path(opt, "figure.json"), dump_report(manifest));
  std::cout << "wrote figure " << which << " data to " << opt.out_dir << "\n";
  return 0;
}

int run_nogo(const Options& opt) {
  json cfg = load_config(opt, true);
  const std::uint64_t seed = resolve_seed(cfg, opt);
  const MeasureSpec p0 = measure_key(cfg, "p0");
  const MeasureSpec p1 = measure_key(cfg, "p1");
  if (!cfg.contains("nogo") || !cfg["nogo"].is_object()) {
    throw ConfigError("config needs a \"nogo\" object with s0 and s1");
  }
  const json& nogo = cfg["nogo"];
  const auto interval = [&](const char* key) {
    if (!nogo.contains(key) || !nogo[key].is_object()) {
      throw ConfigError(std::string("nogo.") + key +
                        " must be {\"lo\":..,\"hi\":..}");
    }
    const double lo = num_at(nogo[key], "lo", std::nan(""));
    const double hi = num_at(nogo[key], "hi", std::nan(""));
    if (!(lo < hi)) {
      throw ConfigError(std::string("nogo.") + key + " needs lo < hi");
    }
    return Box(lo, hi);
  };
  const Box s0 = interval("s0");
  const Box s1 = interval("s1");

  const int n_paths = int_at(nogo, "paths", 4000);
  const int time_nodes = int_at(nogo, "time_nodes", 201);
  const std::string reference = nogo.value("reference", "bridge");
  cfg["nogo"]["paths"] = n_paths;
  cfg["nogo"]["time_nodes"] = time_nodes;
  cfg["nogo"]["reference"] = reference;

  const SupportGeometry geometry = epsilon_disconnected(p1, s0, s1);

  const Vec times = uniform_grid(time_nodes);
  PathEnsemble ensemble;
  if (reference == "bridge") {
    ensemble = sample_paths(build_brownian_bridge(p0, p1), n_paths, times, seed);
  } else if (reference == "affine") {
    ensemble = sample_paths(build_affine(Coupling::independent(p0, p1)),
                            n_paths, times, seed);
  } else {
    throw ConfigError("nogo.reference must be \"bridge\" or \"affine\"");
  }

  Vec default_deltas(5), default_thetas(4);
  default_deltas << 0.05, 0.08, 0.12, 0.2, 0.3;
  default_thetas << 0.3, 0.5, 0.8, 1.2;
  const Vec deltas = vec_at(nogo, "deltas", default_deltas);
  const Vec thetas = vec_at(nogo, "thetas", default_thetas);
  const ConcentrationFit fit = concentration_fit(ensemble, deltas, thetas);

  CrossingReport report = impossibility_certificate(p0, p1, geometry, fit);
  report.occupancy = empirical_crossing_probability(ensemble, report.zone);

  json out = json::parse(crossing_report_to_json(report));
  out["config"] = cfg;
  out["fit"]["a_const"] = fit.a_const;
  out["fit"]["alpha"] = fit.alpha;
  out["fit"]["beta"] = fit.beta;
  out["fit"]["r_squared"] = fit.r_squared;
  out["fit"]["cells_used"] = fit.cells_used;
  write_file(out_path(opt, "nogo.json"), dump_report(out));

  // Per-node zone slices and strict-interior occupancy fractions.
  std::string csv = "t,a_t,b_t,inside_fraction\n";
  for (int k = 0; k < ensemble.n_times(); ++k) {
    const ZoneSlice slice = report.zone.slice(ensemble.times[k]);
    std::int64_t inside = 0;
    for (std::int64_t p = 0; p < ensemble.n_paths(); ++p) {
      const double x = ensemble.at(p, k, 0);
      inside += x > slice.a && x < slice.b;
    }
    csv += format_double(ensemble.times[k]);
    csv += ',';
    csv += format_double(slice.a);
    csv += ',';
    csv += format_double(slice.b);
    csv += ',';
    csv += format_double(static_cast<double>(inside) /
                         static_cast<double>(ensemble.n_paths()));
    csv += '\n';
  }
  write_file(out_path(opt, "crossing.csv"), csv);

  const bool violated = report.verdict == Verdict::Violated;
  std::cout << "verdict: " << (violated ? "violated" : "consistent")
            << " (bound " << format_double(report.bound) << ", w0w1 "
            << format_double(report.w0w1) << ")\n";
  if (violated && opt.fail_on_violation) {
    return 4;
  }
  return 0;
}

int run_bound(const Options& opt) {
  json cfg = load_config(opt, true);
  if (!cfg.contains("bound") || !cfg["bound"].is_object()) {
    throw ConfigError("config needs a \"bound\" object");
  }
  const json& b = cfg["bound"];
  ConcentrationFit fit;
  fit.a_const = num_at(b, "a_const", std::nan(""));
  fit.alpha = num_at(b, "alpha", std::nan(""));
  fit.beta = num_at(b, "beta", std::nan(""));
  const double epsilon = num_at(b, "epsilon", std::nan(""));
  const double gap = num_at(b, "gap", std::nan(""));
  if (!(fit.a_const > 0.0) || !(fit.alpha > 0.0) || !(fit.beta > 0.0)) {
    throw ConfigError("bound needs positive a_const, alpha, beta");
  }
  if (std::isnan(epsilon) || std::isnan(gap)) {
    throw ConfigError("bound needs epsilon and gap");
  }
  const CrossingBound cb = crossing_bound(epsilon, gap, fit);

  json out;
  out["config"] = cfg;
  out["epsilon"] = epsilon;
  out["gap"] = gap;
  out["delta_star"] = cb.delta_star;
  out["bound"] = cb.bound;
  if (b.contains("gamma") && b.contains("c_const")) {
    out["b_constant"] =
        b_constant(fit.alpha, fit.beta, num_at(b, "gamma", 1.0), fit.a_const,
                   num_at(b, "c_const", 1.0));
  }
  write_file(out_path(opt, "bound.json"), dump_report(out));
  std::cout << "bound " << format_double(cb.bound) << " at delta* "
            << format_double(cb.delta_star) << "\n";
  return 0;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"stochastic interpolants and straight-line probability flows"};
  app.require_subcommand(1);
  app.fallthrough();

  Options opt;
  int which = 1;
  app.add_option("--config", opt.config_path, "JSON experiment config");
  app.add_option("--seed", opt.seed, "RNG seed override");
  app.add_option("--out", opt.out_dir, "output directory");
  app.add_option("--threads", opt.threads, "worker threads (reserved)")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("--fail-on-violation", opt.fail_on_violation,
               "exit 4 when a no-go certificate reports a violation");

  CLI::App* cmd_build =
      app.add_subcommand("build", "resolve and write the interpolant spec");
  CLI::App* cmd_sample =
      app.add_subcommand("sample", "sample interpolant paths to CSV");
  CLI::App* cmd_diagnose = app.add_subcommand(
      "diagnose", "straightness and PDE residual report with a verdict");
  CLI::App* cmd_flow = app.add_subcommand(
      "flow", "integrate the probability flow and test the pushforward");
  CLI::App* cmd_figure =
      app.add_subcommand("figure", "emit the data bundle for a figure");
  cmd_figure->add_option("which", which, "figure number (1, 2, or 3)")
      ->required()
      ->check(CLI::Range(1, 3));
  CLI::App* cmd_nogo = app.add_subcommand(
      "nogo", "fit a concentration envelope and emit a crossing certificate");
  CLI::App* cmd_bound =
      app.add_subcommand("bound", "evaluate the crossing bound formula");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (cmd_build->parsed()) {
      return run_build(opt);
    }
    if (cmd_sample->parsed()) {
      return run_sample(opt);
    }
    if (cmd_diagnose->parsed()) {
      return run_diagnose(opt);
    }
    if (cmd_flow->parsed()) {
      return run_flow(opt);
    }
    if (cmd_figure->parsed()) {
      return run_figure(which, opt);
    }
    if (cmd_nogo->parsed()) {
      return run_nogo(opt);
    }
    if (cmd_bound->parsed()) {
      return run_bound(opt);
    }
    throw ConfigError("no command given");
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return 3;
  }
}

}  // namespace sflow::cli
