#ifndef SFLOW_REPORT_IO_HPP
#define SFLOW_REPORT_IO_HPP

#include <iosfwd>
#include <string>

#include "sflow/flow.hpp"
#include "sflow/interpolants.hpp"
#include "sflow/nogo.hpp"
#include "sflow/velocity.hpp"

namespace sflow {

// Shortest decimal text with 17 significant digits; round-trips any double.
std::string format_double(double x);

// {"type":"gaussian","mean":[...],"cov":[[...]]}
// {"type":"uniform","lo":..,"hi":..}         (arrays when d > 1)
// {"type":"mixture","weights":[...],"components":[...]}
std::string measure_to_json(const MeasureSpec& m, int indent = -1);
MeasureSpec measure_from_json(const std::string& text);

// {"schedule":...,"coupling":{...},"aux":{...}} . The schedule is a bare
// name for the named kinds and an object for collapse and polynomial forms.
// aux is derived output (pure_affine flag, sigma_z, pencil factors when the
// endpoints are Gaussian) and is ignored on parse. Joint couplings carry a
// callable sampler and do not serialize.
std::string interpolant_to_json(const GeneralizedInterpolant& interp,
                                int indent = -1);
GeneralizedInterpolant interpolant_from_json(const std::string& text);

// Header path_id,t,x_1..x_d; one row per (path, time node), path-major.
void write_paths_csv(std::ostream& os, const PathEnsemble& e);

// Header traj_id,t,x_1..x_d plus a truncated flag column.
void write_trajectories_csv(std::ostream& os, const FlowTrajectories& flow);

// One row per (slice, cell): t, centers, rho, v, a, C, Pi (row-major),
// standard errors, n_eff, valid. Invalid cells print nan statistics.
void write_stats_csv(std::ostream& os, const ConditionalStats& stats);

// {p_cross, p_enter, se, bound, delta_star, epsilon, w0w1, terms, verdict}
// plus the remaining certificate fields and the zone.
std::string crossing_report_to_json(const CrossingReport& report,
                                    int indent = -1);

}  // namespace sflow

#endif  // SFLOW_REPORT_IO_HPP
