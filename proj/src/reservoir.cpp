#include "cfcc/reservoir.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cfcc/errors.hpp"
#include "cfcc/gil_pelaez.hpp"

namespace cfcc::res {
namespace {

using smpc::Mat;
using smpc::Vec;

std::string g17(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

std::string g9(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.9g", v);
  return b;
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

double mean_or_zero(const Distribution& d) {
  try {
    return d.mean();
  } catch (const UndefinedMean&) {
    return 0.0;  // heavy-tailed rain: warm starts fall back to the location-free steady state
  }
}

void add_counters(EvalCounters& dst, const EvalCounters& src) {
  dst.cf_component_batches += src.cf_component_batches;
  dst.cf_part_batches += src.cf_part_batches;
  dst.cf_prime_part_batches += src.cf_prime_part_batches;
  dst.subintervals += src.subintervals;
  dst.integrand_batches += src.integrand_batches;
}

const char* kind_name(smpc::ConstraintKind k) {
  switch (k) {
    case smpc::ConstraintKind::flood: return "flood";
    case smpc::ConstraintKind::drought: return "drought";
    case smpc::ConstraintKind::input_upper: return "input_upper";
    case smpc::ConstraintKind::input_lower: return "input_lower";
  }
  return "?";
}

std::string label_string(const smpc::ConstraintLabel& l) {
  return std::string(kind_name(l.kind)) + ":" + std::to_string(l.step) + ":" +
         std::to_string(l.row);
}

// ---- config validation ----

void check(bool ok, const std::string& msg) {
  if (!ok) throw InvalidInput("config: " + msg);
}

void validate_config(const CaseConfig& c) {
  for (int j = 0; j < 3; ++j) {
    const LakeConfig& lk = c.lake[static_cast<std::size_t>(j)];
    const std::string p = "lake" + std::to_string(j + 1) + ".";
    check(std::isfinite(lk.surface_m2) && lk.surface_m2 > 0, p + "surface_m2 must be positive");
    check(std::isfinite(lk.level_init) && lk.level_init > 0, p + "level_init must be positive");
    check(lk.level_min < lk.level_ref && lk.level_ref < lk.level_max,
          p + "levels must satisfy level_min < level_ref < level_max");
  }
  check(c.eta1 > 0 && c.eta1 <= 1, "eta1 must lie in (0,1]");
  check(c.eta2 > 0 && c.eta2 <= 1, "eta2 must lie in (0,1]");
  check(c.sigma1 > 0, "sigma1 must be positive");
  check(c.sigma2 > 0, "sigma2 must be positive");
  check(c.inflow > 0, "inflow must be positive");
  check(c.u_max > 0, "u_max must be positive");
  check(c.kappa > 0, "kappa must be positive");
  check(c.dt_hours > 0, "dt_hours must be positive");
  check(c.horizon >= 1, "horizon must be at least 1");
  check(c.sim_steps >= 1, "sim_hours must cover at least one step");
  check(c.gamma_flood > 0 && c.gamma_flood < 1, "gamma_flood must lie in (0,1)");
  check(c.gamma_drought > 0 && c.gamma_drought < 1, "gamma_drought must lie in (0,1)");
  check(c.gamma_input > 0 && c.gamma_input < 1, "gamma_input must lie in (0,1)");
  check(c.quad_tol.abs > 0 && c.quad_tol.rel >= 0, "quadrature tolerances must be positive");
  check(c.quad_tol.max_subdiv >= 1, "quad_subdiv must be at least 1");
  check(c.solver.tol > 0, "kkt_tol must be positive");
  check(c.solver.max_iters >= 1, "max_iters must be at least 1");
}

// ---- config parsing ----

struct ParseCtx {
  const std::string& origin;
  int line = 0;
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(origin + ":" + std::to_string(line) + ": " + msg);
  }
};

double to_double(const ParseCtx& px, const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty() || !std::isfinite(x))
    px.fail(key + ": expected a finite number, got '" + v + "'");
  return x;
}

long long to_int(const ParseCtx& px, const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty())
    px.fail(key + ": expected an integer, got '" + v + "'");
  return x;
}

std::uint64_t to_uint(const ParseCtx& px, const std::string& key, const std::string& v) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty() || v[0] == '-')
    px.fail(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

bool to_bool(const ParseCtx& px, const std::string& key, std::string v) {
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  px.fail(key + ": expected true/false, got '" + v + "'");
}

}  // namespace

CaseConfig default_config() {
  CaseConfig c;
  c.lake[0] = {2.0e6, 4.5, 5.3, 4.0, 4.5, Distribution::exponential(1.0)};
  c.lake[1] = {1.5e6, 4.8, 5.5, 4.2, 4.8, Distribution::exponential(0.5)};
  c.lake[2] = {1.8e6, 4.2, 5.0, 3.5, 4.2, Distribution::exponential(2.0)};
  return c;  // remaining fields carry their declared defaults
}

CaseConfig parse_config(std::istream& in, const std::string& origin) {
  CaseConfig c = default_config();
  ParseCtx px{origin};
  std::string section;
  double sim_hours = -1.0;  // sentinel: keep the default step count unless set
  std::string raw;
  while (std::getline(in, raw)) {
    ++px.line;
    std::string line = raw;
    for (const char mark : {'#', ';'}) {
      const std::size_t cut = line.find(mark);
      if (cut != std::string::npos) line.erase(cut);
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') px.fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "general" && section != "solver" && section != "lake1" &&
          section != "lake2" && section != "lake3")
        px.fail("unknown section [" + section + "]");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) px.fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) px.fail("empty key");
    if (section.empty()) px.fail("key '" + key + "' appears before any section");

    if (section == "general") {
      if (key == "inflow") c.inflow = to_double(px, key, val);
      else if (key == "eta1") c.eta1 = to_double(px, key, val);
      else if (key == "eta2") c.eta2 = to_double(px, key, val);
      else if (key == "sigma1") c.sigma1 = to_double(px, key, val);
      else if (key == "sigma2") c.sigma2 = to_double(px, key, val);
      else if (key == "u_max") c.u_max = to_double(px, key, val);
      else if (key == "kappa") c.kappa = to_double(px, key, val);
      else if (key == "dt_hours") c.dt_hours = to_double(px, key, val);
      else if (key == "sim_hours") sim_hours = to_double(px, key, val);
      else if (key == "horizon") c.horizon = static_cast<int>(to_int(px, key, val));
      else if (key == "gamma_flood") c.gamma_flood = to_double(px, key, val);
      else if (key == "gamma_drought") c.gamma_drought = to_double(px, key, val);
      else if (key == "gamma_input") c.gamma_input = to_double(px, key, val);
      else if (key == "affine_feedback") c.affine_feedback = to_bool(px, key, val);
      else if (key == "seed") c.seed = to_uint(px, key, val);
      else px.fail("unknown key '" + key + "' in [general]");
    } else if (section == "solver") {
      if (key == "kkt_tol") c.solver.tol = to_double(px, key, val);
      else if (key == "max_iters") c.solver.max_iters = static_cast<int>(to_int(px, key, val));
      else if (key == "rho0") c.solver.rho0 = to_double(px, key, val);
      else if (key == "rho_max") c.solver.rho_max = to_double(px, key, val);
      else if (key == "inner_per_outer") c.solver.inner_per_outer = static_cast<int>(to_int(px, key, val));
      else if (key == "screen") c.solver.screen = to_bool(px, key, val);
      else if (key == "screen_margin") c.solver.screen_margin = to_double(px, key, val);
      else if (key == "quad_abs") c.quad_tol.abs = to_double(px, key, val);
      else if (key == "quad_rel") c.quad_tol.rel = to_double(px, key, val);
      else if (key == "quad_subdiv") c.quad_tol.max_subdiv = static_cast<int>(to_int(px, key, val));
      else px.fail("unknown key '" + key + "' in [solver]");
    } else {
      LakeConfig& lk = c.lake[static_cast<std::size_t>(section[4] - '1')];
      if (key == "surface_m2") lk.surface_m2 = to_double(px, key, val);
      else if (key == "level_ref") lk.level_ref = to_double(px, key, val);
      else if (key == "level_max") lk.level_max = to_double(px, key, val);
      else if (key == "level_min") lk.level_min = to_double(px, key, val);
      else if (key == "level_init") lk.level_init = to_double(px, key, val);
      else if (key == "rain") {
        try {
          lk.rain = parse_distribution(val);
        } catch (const ParseError& e) {
          px.fail(std::string("rain: ") + e.what());
        }
      } else
        px.fail("unknown key '" + key + "' in [" + section + "]");
    }
  }
  if (sim_hours >= 0) {
    if (c.dt_hours <= 0) throw InvalidInput("config: dt_hours must be positive");
    const double ratio = sim_hours / c.dt_hours;
    const double steps = std::round(ratio);
    if (steps < 1 || std::abs(ratio - steps) > 1e-9 * std::max(1.0, ratio))
      throw InvalidInput("config: sim_hours must be a positive integer multiple of dt_hours");
    c.sim_steps = static_cast<int>(steps);
  }
  validate_config(c);
  return c;
}

CaseConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file: " + path);
  return parse_config(in, path);
}

std::string canonical_text(const CaseConfig& c) {
  std::string s;
  auto kv = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  kv("inflow", g17(c.inflow));
  kv("eta1", g17(c.eta1));
  kv("eta2", g17(c.eta2));
  kv("sigma1", g17(c.sigma1));
  kv("sigma2", g17(c.sigma2));
  kv("u_max", g17(c.u_max));
  kv("kappa", g17(c.kappa));
  kv("dt_hours", g17(c.dt_hours));
  kv("horizon", std::to_string(c.horizon));
  kv("sim_steps", std::to_string(c.sim_steps));
  kv("gamma_flood", g17(c.gamma_flood));
  kv("gamma_drought", g17(c.gamma_drought));
  kv("gamma_input", g17(c.gamma_input));
  kv("affine_feedback", c.affine_feedback ? "1" : "0");
  kv("seed", std::to_string(c.seed));
  // Execution knobs (thread mode, merit logging) are absent on purpose: they
  // cannot change any computed value, so they are not part of the identity.
  kv("solver.kkt_tol", g17(c.solver.tol));
  kv("solver.max_iters", std::to_string(c.solver.max_iters));
  kv("solver.rho0", g17(c.solver.rho0));
  kv("solver.rho_max", g17(c.solver.rho_max));
  kv("solver.inner_per_outer", std::to_string(c.solver.inner_per_outer));
  kv("solver.screen", c.solver.screen ? "1" : "0");
  kv("solver.screen_margin", g17(c.solver.screen_margin));
  kv("quad.abs", g17(c.quad_tol.abs));
  kv("quad.rel", g17(c.quad_tol.rel));
  kv("quad.max_subdiv", std::to_string(c.quad_tol.max_subdiv));
  for (int j = 0; j < 3; ++j) {
    const LakeConfig& lk = c.lake[static_cast<std::size_t>(j)];
    const std::string p = "lake" + std::to_string(j + 1) + ".";
    kv(p + "surface_m2", g17(lk.surface_m2));
    kv(p + "level_ref", g17(lk.level_ref));
    kv(p + "level_max", g17(lk.level_max));
    kv(p + "level_min", g17(lk.level_min));
    kv(p + "level_init", g17(lk.level_init));
    kv(p + "rain", lk.rain.to_string());
  }
  return s;
}

std::uint64_t config_hash(const CaseConfig& c) {
  const std::string s = canonical_text(c);
  std::uint64_t h = 1469598103934665603ULL;
  for (const char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  return h;
}

smpc::SmpcProblem build_problem(const CaseConfig& c) {
  validate_config(c);
  const double dt = c.dt_hours * 3600.0;
  const double s1 = c.lake[0].surface_m2, s2 = c.lake[1].surface_m2, s3 = c.lake[2].surface_m2;

  smpc::SmpcProblem p;
  smpc::LinearSystem& sys = p.system;
  sys.A = Mat::Zero(5, 5);
  sys.A(0, 0) = sys.A(1, 1) = sys.A(2, 2) = 1.0;
  sys.A(1, 3) = dt / s2;  // r12 feeds lake 2 with one step of delay
  sys.A(2, 4) = dt / s3;  // flow rows have no diagonal: each step's releases replace them
  sys.B = Mat::Zero(5, 3);
  sys.B(0, 0) = -dt / s1;
  sys.B(1, 1) = -dt / s2;
  sys.B(2, 2) = -dt / s3;
  sys.B(3, 0) = c.eta1;  // releases become next-step transfer flows
  sys.B(4, 1) = c.eta2;
  sys.G = Mat::Zero(5, 3);
  sys.G(0, 0) = sys.G(1, 1) = sys.G(2, 2) = c.kappa;  // rain depth [mm] -> level [m]
  sys.C = Mat::Zero(3, 5);
  sys.C(0, 0) = sys.C(1, 1) = sys.C(2, 2) = 1.0;
  sys.c = Vec(5);
  sys.c << dt / s1 * (c.inflow - c.sigma1), -dt / s2 * c.sigma2, 0.0, c.sigma1, c.sigma2;
  sys.disturbance = {c.lake[0].rain, c.lake[1].rain, c.lake[2].rain};

  p.N = c.horizon;
  p.affine_feedback = c.affine_feedback;
  p.y_ref = Vec(3);
  p.y_ref << c.lake[0].level_ref, c.lake[1].level_ref, c.lake[2].level_ref;
  p.y_max = Vec(3);
  p.y_max << c.lake[0].level_max, c.lake[1].level_max, c.lake[2].level_max;
  p.y_min = Vec(3);
  p.y_min << c.lake[0].level_min, c.lake[1].level_min, c.lake[2].level_min;
  p.u_max = Vec::Constant(3, c.u_max);
  p.gamma1 = c.gamma_flood;
  p.gamma2 = c.gamma_drought;
  p.gamma3 = c.gamma_input;
  p.tol = c.quad_tol;
  p.solver = c.solver;
  return p;
}

namespace {

// Releases that hold every lake level in expectation: each lake passes its
// mean net inflow (transfer or external, minus seepage, plus mean rain) on.
Vec steady_releases(const CaseConfig& c) {
  const double dt = c.dt_hours * 3600.0;
  Vec u(3);
  u[0] = c.inflow - c.sigma1 + c.lake[0].surface_m2 * c.kappa * mean_or_zero(c.lake[0].rain) / dt;
  const double r12 = c.eta1 * u[0] + c.sigma1;
  u[1] = r12 - c.sigma2 + c.lake[1].surface_m2 * c.kappa * mean_or_zero(c.lake[1].rain) / dt;
  const double r23 = c.eta2 * u[1] + c.sigma2;
  u[2] = r23 + c.lake[2].surface_m2 * c.kappa * mean_or_zero(c.lake[2].rain) / dt;
  for (int r = 0; r < 3; ++r) u[r] = std::clamp(u[r], 0.0, c.u_max);
  return u;
}

Vec initial_state(const CaseConfig& c, const Vec& u_ss) {
  Vec x0(5);
  x0 << c.lake[0].level_init, c.lake[1].level_init, c.lake[2].level_init,
      c.eta1 * u_ss[0] + c.sigma1, c.eta2 * u_ss[1] + c.sigma2;
  return x0;
}

Vec steady_decision(const smpc::Layout& lay, const Vec& u_ss) {
  Vec z = Vec::Zero(lay.size());
  for (int l = 0; l < lay.N; ++l)
    for (int r = 0; r < lay.n_u; ++r) z[lay.v_index(l, r)] = u_ss[r];
  return z;
}

}  // namespace

SimulationTrace simulate_case(const CaseConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const smpc::SmpcProblem prob = build_problem(c);
  const smpc::LinearSystem& sys = prob.system;
  const smpc::Layout lay{prob.N, sys.nu(), sys.nw(), prob.affine_feedback};

  const Vec u_ss = steady_releases(c);
  Vec x = initial_state(c, u_ss);
  Vec z = steady_decision(lay, u_ss);
  Vec u_prev = u_ss;  // fallback input when a step's solve fails

  SimulationTrace tr;
  tr.cfg_hash = config_hash(c);
  tr.seed = c.seed;
  tr.dt_hours = c.dt_hours;
  {
    const smpc::PredictionModel pred = smpc::build_prediction(sys, x, prob.N, prob.affine_feedback);
    for (const smpc::ConstraintLabel& l : smpc::compile_chance_constraints(pred, prob).labels)
      tr.labels.push_back(label_string(l));
  }

  std::mt19937_64 eng(c.seed);
  for (int k = 0; k < c.sim_steps; ++k) {
    TraceRow row;
    row.step = k;
    for (int j = 0; j < 3; ++j) row.h[static_cast<std::size_t>(j)] = x[j];
    row.q12 = x[3];
    row.q23 = x[4];

    Vec u(3);
    std::string err;
    try {
      const smpc::SolveResult sr = smpc::solve(prob, x, z);
      u = sr.z.head(3);
      tr.cost.push_back(sr.cost);
      tr.max_violation.push_back(sr.max_violation);
      tr.iterations.push_back(sr.iterations);
      tr.converged.push_back(sr.status == smpc::SolveStatus::converged ? 1 : 0);
      tr.beta.push_back(sr.beta);
      add_counters(tr.counters, sr.counters);
      z = smpc::shift_decision(lay, sr.z);
    } catch (const std::exception& e) {
      err = e.what();
      u = u_prev;  // hold the previous release and keep the old warm start
      tr.cost.push_back(std::numeric_limits<double>::quiet_NaN());
      tr.max_violation.push_back(std::numeric_limits<double>::quiet_NaN());
      tr.iterations.push_back(0);
      tr.converged.push_back(0);
      tr.beta.emplace_back();
    }
    tr.step_errors.push_back(err);

    Vec w(3);
    for (int j = 0; j < 3; ++j)
      w[j] = sys.disturbance[static_cast<std::size_t>(j)].sample_one(eng);
    for (int j = 0; j < 3; ++j) {
      row.u[static_cast<std::size_t>(j)] = u[j];
      row.w[static_cast<std::size_t>(j)] = w[j];
    }
    tr.rows.push_back(row);
    x = sys.A * x + sys.B * u + sys.G * w + sys.c_at(k);
    u_prev = u;
  }
  for (int i = 0; i < 5; ++i) tr.final_state[static_cast<std::size_t>(i)] = x[i];
  tr.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return tr;
}

static const char* kColumns = "tL h1 h2 h3 tU u1 u2 u3 q12 q23 w1 w2 w3";

void write_trace(const SimulationTrace& t, std::ostream& os) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(t.cfg_hash));
  os << "# three-lake closed-loop trace\n";
  os << "# cfg_hash=" << hash << " seed=" << t.seed << "\n";
  os << "# dt_hours=" << g17(t.dt_hours) << "\n";
  os << "# final_state=";
  for (int i = 0; i < 5; ++i) os << (i ? " " : "") << g17(t.final_state[static_cast<std::size_t>(i)]);
  os << "\n" << kColumns << "\n";
  for (const TraceRow& r : t.rows) {
    const double tk = r.step * t.dt_hours;
    os << g17(tk);
    for (const double h : r.h) os << " " << g17(h);
    os << " " << g17(tk);
    for (const double u : r.u) os << " " << g17(u);
    os << " " << g17(r.q12) << " " << g17(r.q23);
    for (const double w : r.w) os << " " << g17(w);
    os << "\n";
  }
}

SimulationTrace read_trace(std::istream& is) {
  SimulationTrace t;
  std::string line;
  bool header_seen = false;
  int lineno = 0;
  auto fail = [&lineno](const std::string& msg) {
    throw ParseError("trace:" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '#') {
      unsigned long long h = 0, s = 0;
      double d = 0;
      double fs[5];
      if (std::sscanf(line.c_str(), "# cfg_hash=%llx seed=%llu", &h, &s) == 2) {
        t.cfg_hash = h;
        t.seed = s;
      } else if (std::sscanf(line.c_str(), "# dt_hours=%lf", &d) == 1) {
        t.dt_hours = d;
      } else if (std::sscanf(line.c_str(), "# final_state=%lf %lf %lf %lf %lf", &fs[0], &fs[1],
                             &fs[2], &fs[3], &fs[4]) == 5) {
        for (int i = 0; i < 5; ++i) t.final_state[static_cast<std::size_t>(i)] = fs[i];
      }
      continue;
    }
    if (!header_seen) {
      if (line != kColumns) fail("expected column header '" + std::string(kColumns) + "'");
      header_seen = true;
      continue;
    }
    std::istringstream ls(line);
    double v[13];
    for (int i = 0; i < 13; ++i)
      if (!(ls >> v[i])) fail("expected 13 numeric columns");
    std::string extra;
    if (ls >> extra) fail("trailing text '" + extra + "'");
    TraceRow r;
    r.step = static_cast<int>(t.rows.size());
    for (int j = 0; j < 3; ++j) {
      r.h[static_cast<std::size_t>(j)] = v[1 + j];
      r.u[static_cast<std::size_t>(j)] = v[5 + j];
      r.w[static_cast<std::size_t>(j)] = v[10 + j];
    }
    r.q12 = v[8];
    r.q23 = v[9];
    t.rows.push_back(r);
  }
  if (!header_seen) {
    lineno = 0;
    fail("missing column header");
  }
  return t;
}

namespace {

std::string json_escape(const std::string& s) {
  std::string out;
  for (const char ch : s) {
    if (ch == '"' || ch == '\\') {
      out += '\\';
      out += ch;
    } else if (static_cast<unsigned char>(ch) < 0x20) {
      char b[8];
      std::snprintf(b, sizeof b, "\\u%04x", static_cast<unsigned>(ch));
      out += b;
    } else {
      out += ch;
    }
  }
  return out;
}

std::string json_num(double v) { return std::isfinite(v) ? g9(v) : "null"; }

template <class T, class F>
std::string json_array(const std::vector<T>& xs, F f) {
  std::string s = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ",";
    s += f(xs[i]);
  }
  return s + "]";
}

void write_summary(const SimulationTrace& t, const CaseConfig& c, std::ostream& os) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(t.cfg_hash));
  os << "{\n";
  os << "  \"cfg_hash\": \"" << hash << "\",\n";
  os << "  \"seed\": " << t.seed << ",\n";
  os << "  \"dt_hours\": " << g9(t.dt_hours) << ",\n";
  os << "  \"steps\": " << t.rows.size() << ",\n";
  os << "  \"inflow\": " << g9(c.inflow) << ",\n";
  os << "  \"final_state\": ";
  os << "[" << g9(t.final_state[0]) << "," << g9(t.final_state[1]) << "," << g9(t.final_state[2])
     << "," << g9(t.final_state[3]) << "," << g9(t.final_state[4]) << "],\n";
  os << "  \"cost\": " << json_array(t.cost, json_num) << ",\n";
  os << "  \"max_violation\": " << json_array(t.max_violation, json_num) << ",\n";
  os << "  \"iterations\": "
     << json_array(t.iterations, [](int v) { return std::to_string(v); }) << ",\n";
  os << "  \"converged\": "
     << json_array(t.converged, [](int v) { return std::to_string(v); }) << ",\n";
  os << "  \"step_errors\": "
     << json_array(t.step_errors,
                   [](const std::string& s) { return "\"" + json_escape(s) + "\""; })
     << ",\n";
  os << "  \"labels\": "
     << json_array(t.labels, [](const std::string& s) { return "\"" + json_escape(s) + "\""; })
     << ",\n";
  os << "  \"beta\": "
     << json_array(t.beta,
                   [](const std::vector<double>& b) { return json_array(b, json_num); })
     << ",\n";
  os << "  \"counters\": {";
  os << "\"cf_component_batches\": " << t.counters.cf_component_batches << ", ";
  os << "\"cf_part_batches\": " << t.counters.cf_part_batches << ", ";
  os << "\"cf_prime_part_batches\": " << t.counters.cf_prime_part_batches << ", ";
  os << "\"subintervals\": " << t.counters.subintervals << ", ";
  os << "\"integrand_batches\": " << t.counters.integrand_batches << "}\n";
  os << "}\n";
}

}  // namespace

void write_outputs(const SimulationTrace& t, const CaseConfig& c, const std::string& dir) {
  const std::filesystem::path base(dir);
  std::error_code ec;
  std::filesystem::create_directories(base, ec);
  if (ec) throw InvalidInput("cannot create output directory '" + dir + "': " + ec.message());
  {
    std::ofstream os(base / "lakes.dat");
    if (!os) throw InvalidInput("cannot write " + (base / "lakes.dat").string());
    write_trace(t, os);
  }
  {
    std::ofstream os(base / "summary.json");
    if (!os) throw InvalidInput("cannot write " + (base / "summary.json").string());
    write_summary(t, c, os);
  }
}

SimulationTrace run_case(const CaseConfig& c, const std::string& out_dir) {
  SimulationTrace t = simulate_case(c);
  write_outputs(t, c, out_dir);
  return t;
}

ValidationReport validate_monte_carlo(const CaseConfig& c, int runs) {
  if (runs < 1) throw InvalidInput("validate: runs must be at least 1");
  build_problem(c);  // surface config problems before spawning workers
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<SimulationTrace> traces(static_cast<std::size_t>(runs));
  std::vector<std::string> run_err(static_cast<std::size_t>(runs));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int r = 0; r < runs; ++r) {
    CaseConfig cr = c;
    cr.seed = c.seed + static_cast<std::uint64_t>(r);
    cr.solver.mode = ExecMode::serial;  // runs are the parallel axis here
    try {
      traces[static_cast<std::size_t>(r)] = simulate_case(cr);
    } catch (const std::exception& e) {
      run_err[static_cast<std::size_t>(r)] = e.what();
    }
  }

  ValidationReport rep;
  rep.runs = runs;
  long long viol[2][3] = {};
  long long samples = 0;  // per (kind, lake) cell
  long long in_band = 0;
  for (int r = 0; r < runs; ++r) {
    const SimulationTrace& t = traces[static_cast<std::size_t>(r)];
    if (!run_err[static_cast<std::size_t>(r)].empty()) {
      rep.solver_failures += c.sim_steps;
      continue;
    }
    for (const std::string& e : t.step_errors)
      if (!e.empty()) ++rep.solver_failures;
    // Post-decision levels h_1..h_T: rows 1.. hold them at the step start,
    // the final state supplies h_T.
    auto tally = [&](const std::array<double, 3>& h) {
      for (int j = 0; j < 3; ++j) {
        const LakeConfig& lk = c.lake[static_cast<std::size_t>(j)];
        const double hj = h[static_cast<std::size_t>(j)];
        if (hj > lk.level_max) ++viol[0][j];
        if (hj < lk.level_min) ++viol[1][j];
        if (hj >= lk.level_min && hj <= lk.level_max) ++in_band;
      }
      ++samples;
    };
    for (std::size_t k = 1; k < t.rows.size(); ++k) tally(t.rows[k].h);
    tally({t.final_state[0], t.final_state[1], t.final_state[2]});
  }

  const double zq = 1.959963984540054;  // 97.5% normal quantile
  for (int kind = 0; kind < 2; ++kind)
    for (int j = 0; j < 3; ++j) {
      ValidationRow row;
      row.kind = kind == 0 ? "flood" : "drought";
      row.lake = j + 1;
      row.violations = viol[kind][j];
      row.samples = samples;
      if (samples > 0) {
        const double n = static_cast<double>(samples);
        const double p = static_cast<double>(row.violations) / n;
        row.freq = p;
        const double denom = 1.0 + zq * zq / n;
        const double center = (p + zq * zq / (2.0 * n)) / denom;
        const double half =
            zq * std::sqrt(p * (1.0 - p) / n + zq * zq / (4.0 * n * n)) / denom;
        row.ci_lo = std::clamp(center - half, 0.0, p);  // rounding can push past p at 0 or 1
        row.ci_hi = std::clamp(center + half, p, 1.0);
      }
      const double gamma = kind == 0 ? c.gamma_flood : c.gamma_drought;
      row.flagged = row.ci_lo > 1.0 - gamma;
      rep.rows.push_back(row);
    }
  rep.band_fraction =
      samples > 0 ? static_cast<double>(in_band) / (3.0 * static_cast<double>(samples)) : 0.0;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

std::string format_report(const ValidationReport& r, const CaseConfig& c) {
  std::string s;
  char b[160];
  std::snprintf(b, sizeof b, "monte-carlo validation: %d runs x %d steps, base seed %llu\n",
                r.runs, c.sim_steps, static_cast<unsigned long long>(c.seed));
  s += b;
  s += "constraint      violations/samples   freq          95% CI                     limit\n";
  for (const ValidationRow& row : r.rows) {
    const double gamma = row.kind == "flood" ? c.gamma_flood : c.gamma_drought;
    std::snprintf(b, sizeof b, "%-8s lake %d  %10lld/%-8lld  %-12.9g  [%.9g, %.9g]  %.9g%s\n",
                  row.kind.c_str(), row.lake, row.violations, row.samples, row.freq, row.ci_lo,
                  row.ci_hi, 1.0 - gamma, row.flagged ? "  FLAGGED" : "");
    s += b;
  }
  std::snprintf(b, sizeof b, "in-band (step, lake) fraction: %.9g\n", r.band_fraction);
  s += b;
  std::snprintf(b, sizeof b, "solver failures: %d\n", r.solver_failures);
  s += b;
  if (r.runs == 1)
    s += "warning: single run; confidence intervals are too wide to certify anything\n";
  return s;
}

// ---- command line ----

namespace {

void usage(std::FILE* f) {
  std::fprintf(f,
               "usage:\n"
               "  cfcc run <config> [--out DIR] [--seed S]\n"
               "  cfcc validate <config> --runs R [--seed S]\n"
               "  cfcc invert <dist_spec> <x> [--tol T]\n");
}

struct Args {
  std::vector<std::string> positional;
  std::string out = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int runs = 0;
  bool runs_set = false;
  double tol = -1.0;
};

// Returns false (after a message) on malformed flags.
bool parse_args(const std::vector<std::string>& raw, Args& a) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::string& s = raw[i];
    auto value = [&](const char* flag) -> const std::string* {
      if (i + 1 >= raw.size()) {
        std::fprintf(stderr, "error: %s needs a value\n", flag);
        return nullptr;
      }
      return &raw[++i];
    };
    if (s == "--out") {
      const std::string* v = value("--out");
      if (!v) return false;
      a.out = *v;
    } else if (s == "--seed") {
      const std::string* v = value("--seed");
      if (!v) return false;
      char* end = nullptr;
      a.seed = std::strtoull(v->c_str(), &end, 10);
      if (end != v->c_str() + v->size() || v->empty()) {
        std::fprintf(stderr, "error: --seed expects a non-negative integer\n");
        return false;
      }
      a.seed_set = true;
    } else if (s == "--runs") {
      const std::string* v = value("--runs");
      if (!v) return false;
      char* end = nullptr;
      a.runs = static_cast<int>(std::strtol(v->c_str(), &end, 10));
      if (end != v->c_str() + v->size() || v->empty() || a.runs < 1) {
        std::fprintf(stderr, "error: --runs expects a positive integer\n");
        return false;
      }
      a.runs_set = true;
    } else if (s == "--tol") {
      const std::string* v = value("--tol");
      if (!v) return false;
      char* end = nullptr;
      a.tol = std::strtod(v->c_str(), &end);
      if (end != v->c_str() + v->size() || v->empty() || !(a.tol > 0)) {
        std::fprintf(stderr, "error: --tol expects a positive number\n");
        return false;
      }
    } else if (!s.empty() && s[0] == '-') {
      std::fprintf(stderr, "error: unknown flag '%s'\n", s.c_str());
      return false;
    } else {
      a.positional.push_back(s);
    }
  }
  return true;
}

int cmd_run(const Args& a) {
  if (a.positional.size() != 1) {
    usage(stderr);
    return 2;
  }
  CaseConfig cfg = load_config(a.positional[0]);
  if (a.seed_set) cfg.seed = a.seed;
  const SimulationTrace t = run_case(cfg, a.out);
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(t.cfg_hash));
  std::printf("config %s  hash %s  seed %llu\n", a.positional[0].c_str(), hash,
              static_cast<unsigned long long>(t.seed));
  int ok = 0, failed = 0;
  double cost = 0.0;
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    ok += t.converged[k];
    failed += t.step_errors[k].empty() ? 0 : 1;
    if (std::isfinite(t.cost[k])) cost += t.cost[k];
  }
  std::printf("steps %zu  converged %d  solve failures %d\n", t.rows.size(), ok, failed);
  std::printf("final levels %.9g %.9g %.9g m\n", t.final_state[0], t.final_state[1],
              t.final_state[2]);
  std::printf("accumulated cost %.9g\n", cost);
  std::printf("cf component batches %lld, subintervals %lld\n",
              t.counters.cf_component_batches, t.counters.subintervals);
  std::printf("wrote %s and %s\n", (std::filesystem::path(a.out) / "lakes.dat").string().c_str(),
              (std::filesystem::path(a.out) / "summary.json").string().c_str());
  std::printf("wall %.3f s\n", t.wall_seconds);
  return 0;
}

int cmd_validate(const Args& a) {
  if (a.positional.size() != 1 || !a.runs_set) {
    usage(stderr);
    return 2;
  }
  CaseConfig cfg = load_config(a.positional[0]);
  if (a.seed_set) cfg.seed = a.seed;
  const ValidationReport rep = validate_monte_carlo(cfg, a.runs);
  std::fputs(format_report(rep, cfg).c_str(), stdout);
  std::printf("wall %.3f s\n", rep.wall_seconds);
  return 0;
}

int cmd_invert(const Args& a) {
  if (a.positional.size() != 2) {
    usage(stderr);
    return 2;
  }
  const Distribution d = parse_distribution(a.positional[0]);
  char* end = nullptr;
  const std::string& xs = a.positional[1];
  const double x = std::strtod(xs.c_str(), &end);
  if (end != xs.c_str() + xs.size() || xs.empty() || !std::isfinite(x))
    throw InvalidInput("invert: x must be a finite number, got '" + xs + "'");
  quad::Tol qt;
  if (a.tol > 0) {
    qt.abs = a.tol;
    qt.rel = a.tol;
  }
  const InversionResult F = cdf(d, x, qt);
  const InversionResult p = pdf(d, x, qt);
  std::printf("F(%.9g) = %.9g  error<=%.3g  subdivisions %d  batch calls %d\n", x, F.value,
              F.error, F.subdivisions, F.batch_calls);
  std::printf("p(%.9g) = %.9g  error<=%.3g  subdivisions %d  batch calls %d\n", x, p.value,
              p.error, p.subdivisions, p.batch_calls);
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  std::vector<std::string> raw;
  for (int i = 1; i < argc; ++i) raw.emplace_back(argv[i]);
  if (raw.empty()) {
    usage(stderr);
    return 2;
  }
  const std::string cmd = raw[0];
  raw.erase(raw.begin());
  Args a;
  if (!parse_args(raw, a)) return 2;
  try {
    if (cmd == "run") return cmd_run(a);
    if (cmd == "validate") return cmd_validate(a);
    if (cmd == "invert") return cmd_invert(a);
    std::fprintf(stderr, "error: unknown command '%s'\n", cmd.c_str());
    usage(stderr);
    return 2;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const InvalidInput& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}

}  // namespace cfcc::res
