#include "sflow/report_io.hpp"

#include <cstdio>
#include <limits>
#include <ostream>
#include <utility>

#include "json.hpp"
#include "sflow/errors.hpp"

namespace sflow {
namespace {

using nlohmann::json;

json vec_to_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out.push_back(v[i]);
  }
  return out;
}

json mat_to_json(const Mat& m) {
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

Vec vec_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) {
    throw ConfigError(where + ": expected an array of numbers");
  }
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw ConfigError(where + ": expected an array of numbers");
    }
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Mat mat_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) {
    throw ConfigError(where + ": expected a non-empty array of rows");
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  Vec first = vec_from_json(j[0], where);
  Mat m(rows, first.size());
  m.row(0) = first.transpose();
  for (Eigen::Index i = 1; i < rows; ++i) {
    Vec row = vec_from_json(j[static_cast<std::size_t>(i)], where);
    if (row.size() != m.cols()) {
      throw ConfigError(where + ": rows have inconsistent lengths");
    }
    m.row(i) = row.transpose();
  }
  return m;
}

const json& require_key(const json& j, const char* key,
                        const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw ConfigError(where + ": missing key \"" + key + "\"");
  }
  return *it;
}

json measure_to_json_obj(const MeasureSpec& m) {
  json j;
  switch (m.kind) {
    case MeasureKind::Gaussian:
      j["type"] = "gaussian";
      j["mean"] = vec_to_json(m.mean);
      j["cov"] = mat_to_json(m.cov);
      break;
    case MeasureKind::Uniform:
      j["type"] = "uniform";
      if (m.box.dim() == 1) {
        j["lo"] = m.box.lo[0];
        j["hi"] = m.box.hi[0];
      } else {
        j["lo"] = vec_to_json(m.box.lo);
        j["hi"] = vec_to_json(m.box.hi);
      }
      break;
    case MeasureKind::Mixture: {
      j["type"] = "mixture";
      j["weights"] = m.weights;
      json comps = json::array();
      for (const MeasureSpec& c : m.components) {
        comps.push_back(measure_to_json_obj(c));
      }
      j["components"] = std::move(comps);
      break;
    }
  }
  return j;
}

MeasureSpec measure_from_json_obj(const json& j, const std::string& where) {
  if (!j.is_object()) {
    throw ConfigError(where + ": expected a measure object");
  }
  const json& type = require_key(j, "type", where);
  if (!type.is_string()) {
    throw ConfigError(where + ": \"type\" must be a string");
  }
  const std::string kind = type.get<std::string>();
  if (kind == "gaussian") {
    Vec mean = vec_from_json(require_key(j, "mean", where), where + ".mean");
    Mat cov = mat_from_json(require_key(j, "cov", where), where + ".cov");
    return gaussian_measure(std::move(mean), std::move(cov));
  }
  if (kind == "uniform") {
    const json& lo = require_key(j, "lo", where);
    const json& hi = require_key(j, "hi", where);
    if (lo.is_number() && hi.is_number()) {
      return uniform_interval(lo.get<double>(), hi.get<double>());
    }
    return uniform_measure(Box(vec_from_json(lo, where + ".lo"),
                               vec_from_json(hi, where + ".hi")));
  }
  if (kind == "mixture") {
    const json& weights = require_key(j, "weights", where);
    const json& comps = require_key(j, "components", where);
    if (!weights.is_array() || !comps.is_array() ||
        weights.size() != comps.size()) {
      throw ConfigError(where +
                        ": weights and components must be arrays of equal "
                        "length");
    }
    std::vector<double> w;
    std::vector<MeasureSpec> parts;
    for (std::size_t i = 0; i < comps.size(); ++i) {
      if (!weights[i].is_number()) {
        throw ConfigError(where + ".weights: expected numbers");
      }
      w.push_back(weights[i].get<double>());
      parts.push_back(measure_from_json_obj(
          comps[i], where + ".components[" + std::to_string(i) + "]"));
    }
    return mixture_measure(std::move(w), std::move(parts));
  }
  throw ConfigError(where + ": unknown measure type \"" + kind + "\"");
}

json schedule_to_json(const Schedule& s) {
  switch (s.kind()) {
    case ScheduleKind::LinearAffine:
      return json("linear_affine");
    case ScheduleKind::SqrtBridge:
      return json("sqrt_bridge");
    case ScheduleKind::Collapse: {
      json j;
      j["kind"] = "collapse";
      j["tau"] = s.tau();
      return j;
    }
    case ScheduleKind::Polynomial: {
      json j;
      j["kind"] = "polynomial";
      j["a"] = s.poly_a();
      j["b"] = s.poly_b();
      j["c"] = s.poly_c();
      return j;
    }
  }
  throw ConfigError("schedule_to_json: unknown schedule kind");
}

Schedule schedule_from_json(const json& j, const std::string& where) {
  if (j.is_string()) {
    const std::string name = j.get<std::string>();
    if (name == "linear_affine") {
      return Schedule::linear_affine();
    }
    if (name == "sqrt_bridge") {
      return Schedule::sqrt_bridge();
    }
    throw ConfigError(where + ": unknown schedule \"" + name + "\"");
  }
  if (!j.is_object()) {
    throw ConfigError(where + ": expected a schedule name or object");
  }
  const json& kind = require_key(j, "kind", where);
  const std::string name = kind.get<std::string>();
  if (name == "linear_affine") {
    return Schedule::linear_affine();
  }
  if (name == "sqrt_bridge") {
    return Schedule::sqrt_bridge();
  }
  if (name == "collapse") {
    const json& tau = require_key(j, "tau", where);
    if (!tau.is_number()) {
      throw ConfigError(where + ".tau: expected a number");
    }
    return Schedule::collapse(tau.get<double>());
  }
  if (name == "polynomial") {
    auto coeffs = [&](const char* key) {
      Vec v = vec_from_json(require_key(j, key, where),
                            where + "." + key);
      return std::vector<double>(v.data(), v.data() + v.size());
    };
    return Schedule::polynomial(coeffs("a"), coeffs("b"), coeffs("c"));
  }
  throw ConfigError(where + ": unknown schedule \"" + name + "\"");
}

json coupling_to_json(const Coupling& c) {
  json j;
  switch (c.kind()) {
    case CouplingKind::Independent:
      j["kind"] = "independent";
      j["p0"] = measure_to_json_obj(c.p0());
      j["p1"] = measure_to_json_obj(c.p1());
      if (c.aux()) {
        j["q"] = measure_to_json_obj(*c.aux());
      }
      return j;
    case CouplingKind::Deterministic:
      j["kind"] = "deterministic";
      j["p0"] = measure_to_json_obj(c.p0());
      j["map"]["A"] = mat_to_json(c.map().A);
      j["map"]["shift"] = vec_to_json(c.map().shift);
      return j;
    case CouplingKind::Joint:
      throw ConfigError("coupling_to_json: joint couplings do not serialize");
  }
  throw ConfigError("coupling_to_json: unknown coupling kind");
}

Coupling coupling_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) {
    throw ConfigError(where + ": expected a coupling object");
  }
  const json& kind = require_key(j, "kind", where);
  const std::string name = kind.get<std::string>();
  if (name == "independent") {
    MeasureSpec p0 =
        measure_from_json_obj(require_key(j, "p0", where), where + ".p0");
    MeasureSpec p1 =
        measure_from_json_obj(require_key(j, "p1", where), where + ".p1");
    if (j.contains("q")) {
      return Coupling::independent(
          std::move(p0), std::move(p1),
          measure_from_json_obj(j["q"], where + ".q"));
    }
    return Coupling::independent(std::move(p0), std::move(p1));
  }
  if (name == "deterministic") {
    MeasureSpec p0 =
        measure_from_json_obj(require_key(j, "p0", where), where + ".p0");
    const json& map = require_key(j, "map", where);
    AffineMap T;
    T.A = mat_from_json(require_key(map, "A", where + ".map"),
                        where + ".map.A");
    T.shift = vec_from_json(require_key(map, "shift", where + ".map"),
                            where + ".map.shift");
    return Coupling::deterministic(std::move(p0), std::move(T));
  }
  throw ConfigError(where + ": unknown coupling kind \"" + name + "\"");
}

json interpolant_to_json_obj(const GeneralizedInterpolant& interp) {
  json j;
  j["schedule"] = schedule_to_json(interp.schedule());
  j["coupling"] = coupling_to_json(interp.coupling());

  json aux;
  aux["pure_affine"] = interp.schedule().pure_affine();
  const Coupling& c = interp.coupling();
  if (c.aux()) {
    aux["sigma_z"] = mat_to_json(measure_cov(*c.aux()));
  }
  if (c.p0().kind == MeasureKind::Gaussian &&
      c.p1().kind == MeasureKind::Gaussian) {
    const PencilFactors pf = pencil_decompose(c.p0().cov, c.p1().cov);
    aux["pencil"]["V"] = mat_to_json(pf.V);
    aux["pencil"]["lambda"] = vec_to_json(pf.lambda);
  }
  j["aux"] = std::move(aux);
  return j;
}

json parse_document(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw ConfigError(std::string(what) + ": invalid JSON");
  }
  return j;
}

void append_double(std::string& row, double x) {
  row += ',';
  row += format_double(x);
}

void append_header(std::string& row, const char* stem, int d) {
  for (int i = 0; i < d; ++i) {
    row += ',';
    row += stem;
    row += '_';
    row += std::to_string(i + 1);
  }
}

void append_matrix_header(std::string& row, const char* stem, int d) {
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < d; ++k) {
      row += ',';
      row += stem;
      row += '_';
      row += std::to_string(i + 1);
      row += std::to_string(k + 1);
    }
  }
}

constexpr double kCsvNan = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string measure_to_json(const MeasureSpec& m, int indent) {
  return measure_to_json_obj(m).dump(indent);
}

MeasureSpec measure_from_json(const std::string& text) {
  return measure_from_json_obj(parse_document(text, "measure"), "measure");
}

std::string interpolant_to_json(const GeneralizedInterpolant& interp,
                                int indent) {
  return interpolant_to_json_obj(interp).dump(indent);
}

GeneralizedInterpolant interpolant_from_json(const std::string& text) {
  const json j = parse_document(text, "interpolant");
  if (!j.is_object()) {
    throw ConfigError("interpolant: expected an object");
  }
  Schedule schedule = schedule_from_json(
      require_key(j, "schedule", "interpolant"), "interpolant.schedule");
  Coupling coupling = coupling_from_json(
      require_key(j, "coupling", "interpolant"), "interpolant.coupling");
  return GeneralizedInterpolant(std::move(schedule), std::move(coupling));
}

void write_paths_csv(std::ostream& os, const PathEnsemble& e) {
  std::string header = "path_id,t";
  append_header(header, "x", e.dim);
  os << header << '\n';
  for (std::int64_t p = 0; p < e.n_paths(); ++p) {
    for (int k = 0; k < e.n_times(); ++k) {
      std::string row = std::to_string(p);
      append_double(row, e.times[k]);
      for (int j = 0; j < e.dim; ++j) {
        append_double(row, e.at(p, k, j));
      }
      os << row << '\n';
    }
  }
}

void write_trajectories_csv(std::ostream& os, const FlowTrajectories& flow) {
  std::string header = "traj_id,t";
  append_header(header, "x", flow.dim);
  header += ",truncated";
  os << header << '\n';
  const Eigen::Index nt = flow.times.size();
  for (Eigen::Index p = 0; p < flow.states.rows(); ++p) {
    for (Eigen::Index k = 0; k < nt; ++k) {
      std::string row = std::to_string(p);
      append_double(row, flow.times[k]);
      for (int j = 0; j < flow.dim; ++j) {
        append_double(row, flow.states(p, k * flow.dim + j));
      }
      row += ',';
      row += flow.truncated[static_cast<std::size_t>(p)] ? '1' : '0';
      os << row << '\n';
    }
  }
}

void write_stats_csv(std::ostream& os, const ConditionalStats& stats) {
  const int d = stats.dim();
  std::string header = "t";
  append_header(header, "x", d);
  header += ",rho";
  append_header(header, "v", d);
  append_header(header, "a", d);
  append_matrix_header(header, "C", d);
  append_matrix_header(header, "Pi", d);
  append_header(header, "se_v", d);
  append_header(header, "se_a", d);
  append_matrix_header(header, "se_Pi", d);
  header += ",se_rho,n_eff,valid";
  os << header << '\n';

  const auto append_vec = [d](std::string& row, const Vec& v, bool ok) {
    for (int j = 0; j < d; ++j) {
      append_double(row, ok ? v[j] : kCsvNan);
    }
  };
  const auto append_mat = [d](std::string& row, const Mat& m, bool ok) {
    for (int i = 0; i < d; ++i) {
      for (int k = 0; k < d; ++k) {
        append_double(row, ok ? m(i, k) : kCsvNan);
      }
    }
  };

  for (int s = 0; s < stats.n_slices(); ++s) {
    const auto& cells = stats.slices[static_cast<std::size_t>(s)];
    for (std::int64_t cell = 0; cell < stats.n_cells(); ++cell) {
      const CellStats& c = cells[static_cast<std::size_t>(cell)];
      const bool ok = c.valid;
      std::string row = format_double(stats.times[s]);
      for (int j = 0; j < d; ++j) {
        append_double(row, stats.centers(cell, j));
      }
      append_double(row, c.rho);
      append_vec(row, c.v, ok);
      append_vec(row, c.a, ok);
      append_mat(row, c.c_mat, ok);
      append_mat(row, c.pi, ok);
      append_vec(row, c.se_v, ok);
      append_vec(row, c.se_a, ok);
      append_mat(row, c.se_pi, ok);
      append_double(row, c.se_rho);
      append_double(row, c.n_eff);
      row += ',';
      row += ok ? '1' : '0';
      os << row << '\n';
    }
  }
}

std::string crossing_report_to_json(const CrossingReport& report, int indent) {
  json j;
  j["p_cross"] = report.occupancy.p_cross;
  j["p_enter"] = report.occupancy.p_enter;
  j["se"] = report.occupancy.se_cross;
  j["se_enter"] = report.occupancy.se_enter;
  j["n"] = report.occupancy.n;
  j["bound"] = report.bound;
  j["delta_star"] = report.delta_star;
  j["epsilon"] = report.epsilon;
  j["epsilon0"] = report.epsilon0;
  j["w0w1"] = report.w0w1;
  j["d_constant"] = report.d_constant;
  j["terms"] = report.terms;
  j["exponents"] = report.exponents;
  j["zone"]["kind"] =
      report.zone.kind == ZoneKind::StaticInterval ? "static" : "trapezoid";
  j["zone"]["a0"] = report.zone.a0;
  j["zone"]["b0"] = report.zone.b0;
  j["zone"]["a1"] = report.zone.a1;
  j["zone"]["b1"] = report.zone.b1;
  j["verdict"] =
      report.verdict == Verdict::Violated ? "violated" : "consistent";
  return j.dump(indent);
}

}  // namespace sflow
