#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "cfcc/chance.hpp"

namespace cfcc::smpc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// x_{k+1} = A x_k + B u_k + G w_k + c_k, y_k = C x_k, with independent
// disturbance components w. c_k falls back to the constant c unless a
// schedule is supplied.
struct LinearSystem {
  Mat A, B, G, C;
  Vec c;
  std::function<Vec(int)> c_schedule;  // optional time-varying affine term
  std::vector<Distribution> disturbance;

  int nx() const { return static_cast<int>(A.rows()); }
  int nu() const { return static_cast<int>(B.cols()); }
  int nw() const { return static_cast<int>(G.cols()); }
  int ny() const { return static_cast<int>(C.rows()); }
  Vec c_at(int k) const { return c_schedule ? c_schedule(k) : c; }
};

// Decision vector: open-loop moves v_0..v_{N-1} first, then (when feedback
// is on) the strictly-causal gain blocks L_{l,i} (i < l), ordered by (l, i),
// each row-major n_u x n_w.
struct Layout {
  int N = 0, n_u = 0, n_w = 0;
  bool feedback = false;

  int nv() const { return N * n_u; }
  int nL() const { return feedback ? N * (N - 1) / 2 * n_u * n_w : 0; }
  int size() const { return nv() + nL(); }
  int v_index(int l, int row) const { return l * n_u + row; }
  int L_index(int l, int i, int row, int wcol) const {
    const int block = l * (l - 1) / 2 + i;
    return nv() + (block * n_u + row) * n_w + wcol;
  }
};

struct AffineScalar {
  double c0 = 0.0;
  Vec a;  // value(z) = c0 + a.z
};

struct AffineVec {
  Vec v0;
  Mat Mz;  // value(z) = v0 + Mz z
};

// One predicted scalar: value(z, w) = base(z) + coef(z)^T w_prefix, where
// w_prefix stacks only the disturbances the quantity can causally depend on.
struct PredictedRow {
  AffineScalar base;
  AffineVec coef;
};

struct PredictionModel {
  Layout layout;
  int n_x = 0, n_y = 0, n_u = 0, n_w = 0, N = 0;
  std::vector<PredictedRow> output;  // (l-1)*n_y + j for l = 1..N
  std::vector<PredictedRow> input;   // l*n_u + j for l = 0..N-1
  std::vector<Distribution> stacked;  // N*n_w disturbance laws, time-major
};

PredictionModel build_prediction(const LinearSystem& sys, const Vec& x0, int N,
                                 bool affine_feedback = true);

struct SolverOptions {
  int max_iters = 200;  // combined inner-iteration budget
  double tol = 1e-5;    // KKT / max-violation target
  double rho0 = 10.0;
  double rho_max = 1e8;
  int inner_per_outer = 25;
  bool screen = true;          // skip clearly inactive constraints in inner loops
  double screen_margin = 0.02;
  ExecMode mode = ExecMode::parallel;
  // When set, receives (outer round, merit) for every accepted inner step.
  std::vector<std::pair<int, double>>* merit_log = nullptr;
};

struct SmpcProblem {
  LinearSystem system;
  int N = 0;
  bool affine_feedback = true;
  Vec y_ref, y_max, y_min, u_max;
  double gamma1 = 0.95, gamma2 = 0.95, gamma3 = 0.95;
  // Deeper subdivision budget than the bare inversion default: compiled rows
  // often carry many small disturbance weights, so the integrand decays slowly
  // and the gradient shares one grid across 2+m channels.
  quad::Tol tol{1e-10, 1e-8, 200};
  SolverOptions solver{};

  void validate() const;  // throws InvalidInput on inconsistent dimensions/bounds
};

struct BoxBound {
  int index;
  double lo, hi;
};

enum class ConstraintKind { flood, drought, input_upper, input_lower };

struct ConstraintLabel {
  ConstraintKind kind;
  int step;  // prediction step l
  int row;   // output/input row j
};

struct CompiledConstraints {
  std::vector<AffineChanceConstraint> chance;
  std::vector<ConstraintLabel> labels;
  std::vector<BoxBound> hard;
};

CompiledConstraints compile_chance_constraints(const PredictionModel& pred,
                                               const SmpcProblem& prob);

// J(z) = sum_l || E[y_{k+l}] - y_ref ||^2 with component means substituted;
// returns the closed-form gradient alongside.
std::pair<double, Vec> expected_cost(const PredictionModel& pred, const SmpcProblem& prob,
                                     const Vec& z);

// Generic problem for the augmented-Lagrangian core: smooth cost, chance
// constraints gamma - beta(z) <= 0, and box bounds on z entries.
struct NlpProblem {
  std::function<std::pair<double, Vec>(const Vec&)> cost;
  std::vector<AffineChanceConstraint> chance;
  std::vector<BoxBound> bounds;
  quad::Tol tol{};
};

enum class SolveStatus { converged, iteration_limit };

struct SolveResult {
  Vec z;
  SolveStatus status = SolveStatus::converged;
  double cost = 0.0;
  double max_violation = 0.0;
  int iterations = 0;
  int outer_rounds = 0;
  EvalCounters counters;           // CF work aggregated over the whole solve
  std::vector<double> beta;        // final beta per chance constraint
};

SolveResult al_solve(const NlpProblem& np, Vec z0, const SolverOptions& opts = {});

SolveResult solve(const SmpcProblem& prob, const Vec& x0, const Vec& z_init);

struct StepRecord {
  double t = 0.0;  // step index
  Vec x;           // state at step start
  Vec y;           // output at step start
  Vec u;           // applied input
  Vec w;           // realized disturbance
  std::vector<double> beta;
  SolveStatus status = SolveStatus::converged;
  double cost = 0.0;
  int iterations = 0;
};

struct SimulationTrace {
  std::vector<StepRecord> steps;
  Vec x_final;
  std::vector<ConstraintLabel> labels;
};

// Shift a decision vector one step for receding-horizon warm starts: inputs
// move forward (the last block repeats), gains move diagonally, vacated gains
// zero out.
Vec shift_decision(const Layout& lay, const Vec& z);

// Receding horizon: solve, apply v_0, draw w, advance; z warm-started from
// the previous solution shifted one step with zero padding.
SimulationTrace closed_loop_simulate(const SmpcProblem& prob, const Vec& x0, int T,
                                     std::uint64_t seed, const Vec& z_init = Vec());

}  // namespace cfcc::smpc
