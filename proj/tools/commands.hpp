#ifndef SFLOW_TOOLS_COMMANDS_HPP
#define SFLOW_TOOLS_COMMANDS_HPP

#include <cstdint>
#include <optional>
#include <string>

namespace sflow::cli {

struct Options {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool fail_on_violation = false;
};

// Each command reads the config named in the options, writes its outputs
// under out_dir, and returns a process exit code. Configuration problems
// throw ConfigError and numerical failures NumericalError; dispatch maps
// them to exit codes 2 and 3.
int run_build(const Options& opt);
int run_sample(const Options& opt);
int run_diagnose(const Options& opt);
int run_flow(const Options& opt);
int run_figure(int which, const Options& opt);
int run_nogo(const Options& opt);
int run_bound(const Options& opt);

// Full command line: parse, route, and map errors to exit codes.
int dispatch(int argc, char** argv);

}  // namespace sflow::cli

#endif  // SFLOW_TOOLS_COMMANDS_HPP
