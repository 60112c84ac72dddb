#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cfcc/smpc.hpp"

namespace cfcc::res {

// Three-lake cascade: lake1 -> lake2 -> lake3, each with a controlled outflow
// to consumers, gravity-driven transfer flows r12, r23 with one-step delay,
// stochastic rain per lake, constant external inflow into lake1.
struct LakeConfig {
  double surface_m2 = 0.0;   // lake surface area [m^2]
  double level_ref = 0.0;    // tracking reference [m]
  double level_max = 0.0;    // flood threshold [m]
  double level_min = 0.0;    // drought threshold [m]
  double level_init = 0.0;   // initial level [m]
  Distribution rain = Distribution::exponential(1.0);   // [mm per step]
};

struct CaseConfig {
  std::array<LakeConfig, 3> lake{};
  double eta1 = 0.9, eta2 = 0.9;        // transfer fractions u -> r
  double sigma1 = 20.0, sigma2 = 15.0;  // uncontrolled seepage offsets [m^3/s]
  double inflow = 200.0;                // external inflow into lake1 [m^3/s]
  double u_max = 400.0;                 // per-lake release bound [m^3/s]
  double kappa = 0.01;                  // rain depth scaling (mm -> m per step)
  double dt_hours = 1.0;
  int horizon = 10;                     // prediction steps N
  int sim_steps = 24;                   // closed-loop steps T
  double gamma_flood = 0.95;
  double gamma_drought = 0.95;
  double gamma_input = 0.95;
  bool affine_feedback = true;
  std::uint64_t seed = 0;
  smpc::SolverOptions solver{};
  quad::Tol quad_tol{1e-10, 1e-8, 200};
};

CaseConfig default_config();

// INI-style config file: [general] / [solver] / [lake1] / [lake2] / [lake3].
// Unknown keys and malformed values raise ParseError with line context.
CaseConfig load_config(const std::string& path);
CaseConfig parse_config(std::istream& in, const std::string& origin);

// Canonical key=value rendering of every field (config identity for hashing).
std::string canonical_text(const CaseConfig& c);
std::uint64_t config_hash(const CaseConfig& c);   // FNV-1a over canonical text

// State x = [h1 h2 h3 r12 r23]; u = releases; w = rain depths [mm].
smpc::SmpcProblem build_problem(const CaseConfig& c);

struct TraceRow {
  int step = 0;
  std::array<double, 3> h{};   // levels at step start [m]
  std::array<double, 3> u{};   // applied releases [m^3/s]
  double q12 = 0.0, q23 = 0.0; // transfer flows arriving during the step
  std::array<double, 3> w{};   // realized rain [mm]
};

struct SimulationTrace {
  std::vector<TraceRow> rows;
  std::array<double, 5> final_state{};
  std::uint64_t cfg_hash = 0;
  std::uint64_t seed = 0;
  double dt_hours = 1.0;   // time base of the tL / tU columns
  // per-step solver diagnostics (same length as rows)
  std::vector<double> cost;
  std::vector<double> max_violation;
  std::vector<int> iterations;
  std::vector<int> converged;              // per-step solver status
  std::vector<std::vector<double>> beta;   // per step: beta per compiled constraint
  std::vector<std::string> labels;         // constraint labels matching beta columns
  std::vector<std::string> step_errors;    // nonempty entry = solve failed, fallback input used
  EvalCounters counters;
  double wall_seconds = 0.0;   // informational; never written to output files
};

SimulationTrace simulate_case(const CaseConfig& c);

// Writes <dir>/lakes.dat (plain-text table) and <dir>/summary.json.
void write_outputs(const SimulationTrace& t, const CaseConfig& c,
                   const std::string& dir);
void write_trace(const SimulationTrace& t, std::ostream& os);
SimulationTrace read_trace(std::istream& is);   // parses a lakes.dat stream

// simulate + write; returns the trace.
SimulationTrace run_case(const CaseConfig& c, const std::string& out_dir);

struct ValidationRow {
  std::string kind;    // "flood" or "drought"
  int lake = 0;
  long long violations = 0;
  long long samples = 0;
  double freq = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;   // 95% Wilson interval
  bool flagged = false;              // ci_lo > 1 - gamma
};

struct ValidationReport {
  std::vector<ValidationRow> rows;
  int runs = 0;
  int solver_failures = 0;
  double band_fraction = 0.0;   // fraction of (step, lake) samples inside [min, max]
  double wall_seconds = 0.0;
};

// Repeats the closed loop over seeds seed..seed+runs-1 and tallies empirical
// violation frequencies per lake and constraint class.
ValidationReport validate_monte_carlo(const CaseConfig& c, int runs);
std::string format_report(const ValidationReport& r, const CaseConfig& c);

// `cfcc` entry point (subcommands: run, validate, invert).
int cli_main(int argc, char** argv);

}  // namespace cfcc::res
