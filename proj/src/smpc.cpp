#include "cfcc/smpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "cfcc/errors.hpp"

namespace cfcc::smpc {
namespace {

// Shared storage behind one compiled constraint's callbacks.
struct RowData {
  double q0 = 0.0;
  std::vector<double> a;   // n entries
  std::vector<double> g0;  // m entries
  std::vector<double> Gz;  // m*n row-major; empty means zero Jacobian
};

AffineChanceConstraint make_constraint(double q0, const Vec& a, const Vec& g0, const Mat& Gz,
                                       bool negate, std::vector<Distribution> w, double gamma) {
  const double sgn = negate ? -1.0 : 1.0;
  auto d = std::make_shared<RowData>();
  d->q0 = sgn * q0;
  d->a.resize(static_cast<std::size_t>(a.size()));
  for (Eigen::Index k = 0; k < a.size(); ++k) d->a[static_cast<std::size_t>(k)] = sgn * a[k];
  d->g0.resize(static_cast<std::size_t>(g0.size()));
  for (Eigen::Index j = 0; j < g0.size(); ++j) d->g0[static_cast<std::size_t>(j)] = sgn * g0[j];
  if (Gz.size() > 0 && !Gz.isZero(0.0)) {
    d->Gz.resize(static_cast<std::size_t>(Gz.rows() * Gz.cols()));
    for (Eigen::Index r = 0; r < Gz.rows(); ++r)
      for (Eigen::Index cidx = 0; cidx < Gz.cols(); ++cidx)
        d->Gz[static_cast<std::size_t>(r * Gz.cols() + cidx)] = sgn * Gz(r, cidx);
  }
  AffineChanceConstraint c;
  c.q = [d](std::span<const double> z) {
    double s = d->q0;
    for (std::size_t k = 0; k < d->a.size(); ++k) s += d->a[k] * z[k];
    return s;
  };
  c.grad_q = [d](std::span<const double>) { return d->a; };
  c.g = [d](std::span<const double> z) {
    std::vector<double> g = d->g0;
    if (!d->Gz.empty()) {
      const std::size_t n = d->a.size();
      for (std::size_t j = 0; j < g.size(); ++j)
        for (std::size_t k = 0; k < n; ++k) g[j] += d->Gz[j * n + k] * z[k];
    }
    return g;
  };
  if (!d->Gz.empty()) c.grad_g = [d](std::span<const double>) { return d->Gz; };
  c.w = std::move(w);
  c.gamma = gamma;
  return c;
}

std::vector<Distribution> stacked_prefix(const PredictionModel& pm, int steps) {
  return {pm.stacked.begin(), pm.stacked.begin() + steps * pm.n_w};
}

// Quadratic cost J(z) = ||E z - f||^2 from the prediction's mean maps.
struct CostForm {
  Mat E;
  Vec f;
};

CostForm make_cost_form(const PredictionModel& pred, const SmpcProblem& prob) {
  const int rows = pred.N * pred.n_y;
  const int nz = pred.layout.size();
  Vec mu(static_cast<Eigen::Index>(pred.stacked.size()));
  for (std::size_t i = 0; i < pred.stacked.size(); ++i)
    mu[static_cast<Eigen::Index>(i)] = pred.stacked[i].mean();
  CostForm form;
  form.E.resize(rows, nz);
  form.f.resize(rows);
  for (int r = 0; r < rows; ++r) {
    const PredictedRow& row = pred.output[static_cast<std::size_t>(r)];
    const int j = r % pred.n_y;
    const Vec mup = mu.head(row.coef.v0.size());
    const double ce = row.base.c0 + row.coef.v0.dot(mup);
    form.E.row(r) = row.base.a.transpose() + mup.transpose() * row.coef.Mz;
    form.f[r] = prob.y_ref[j] - ce;
  }
  return form;
}

Vec project_bounds(Vec z, const std::vector<BoxBound>& bounds) {
  for (const BoxBound& b : bounds) z[b.index] = std::clamp(z[b.index], b.lo, b.hi);
  return z;
}

std::span<const double> as_span(const Vec& z) {
  return {z.data(), static_cast<std::size_t>(z.size())};
}

}  // namespace

void SmpcProblem::validate() const {
  const int nx = system.nx(), nu = system.nu(), nw = system.nw(), ny = system.ny();
  if (system.A.cols() != nx || system.B.rows() != nx || system.G.rows() != nx ||
      system.C.cols() != nx || system.c.size() != nx)
    throw InvalidInput("SmpcProblem: system matrices have inconsistent dimensions");
  if (static_cast<int>(system.disturbance.size()) != nw)
    throw InvalidInput("SmpcProblem: disturbance count does not match G columns");
  if (N < 1) throw InvalidInput("SmpcProblem: horizon must be at least 1");
  if (y_ref.size() != ny || y_max.size() != ny || y_min.size() != ny)
    throw InvalidInput("SmpcProblem: output reference/bound sizes do not match C rows");
  if (u_max.size() != nu) throw InvalidInput("SmpcProblem: u_max size does not match inputs");
  for (int j = 0; j < ny; ++j)
    if (!(y_min[j] < y_ref[j] && y_ref[j] < y_max[j]))
      throw InvalidInput("SmpcProblem: bounds must satisfy y_min < y_ref < y_max");
  for (int j = 0; j < nu; ++j)
    if (!(u_max[j] > 0.0)) throw InvalidInput("SmpcProblem: u_max must be positive");
  for (double gm : {gamma1, gamma2, gamma3})
    if (!(gm >= 0.0 && gm <= 1.0)) throw InvalidInput("SmpcProblem: gamma outside [0, 1]");
}

PredictionModel build_prediction(const LinearSystem& sys, const Vec& x0, int N,
                                 bool affine_feedback) {
  const int nx = sys.nx(), nu = sys.nu(), nw = sys.nw(), ny = sys.ny();
  if (sys.A.cols() != nx || sys.B.rows() != nx || sys.G.rows() != nx || sys.C.cols() != nx ||
      sys.c.size() != nx || x0.size() != nx || static_cast<int>(sys.disturbance.size()) != nw ||
      N < 1)
    throw InvalidInput("build_prediction: inconsistent dimensions");

  PredictionModel pm;
  pm.layout = Layout{N, nu, nw, affine_feedback};
  pm.n_x = nx;
  pm.n_y = ny;
  pm.n_u = nu;
  pm.n_w = nw;
  pm.N = N;
  const int nz = pm.layout.size();

  // C A^p B and C A^p G for p = 0..N-1, plus the nominal state rollout.
  std::vector<Mat> CAB(static_cast<std::size_t>(N)), CAG(static_cast<std::size_t>(N));
  Mat Ap = Mat::Identity(nx, nx);
  for (int p = 0; p < N; ++p) {
    const Mat CAp = sys.C * Ap;
    CAB[static_cast<std::size_t>(p)] = CAp * sys.B;
    CAG[static_cast<std::size_t>(p)] = CAp * sys.G;
    Ap = sys.A * Ap;
  }
  std::vector<Vec> xbar(static_cast<std::size_t>(N) + 1);
  xbar[0] = x0;
  for (int l = 0; l < N; ++l)
    xbar[static_cast<std::size_t>(l) + 1] = sys.A * xbar[static_cast<std::size_t>(l)] + sys.c_at(l);

  pm.output.reserve(static_cast<std::size_t>(N * ny));
  for (int l = 1; l <= N; ++l) {
    const Vec ybar = sys.C * xbar[static_cast<std::size_t>(l)];
    for (int j = 0; j < ny; ++j) {
      PredictedRow row;
      row.base.c0 = ybar[j];
      row.base.a = Vec::Zero(nz);
      for (int s = 0; s < l; ++s) {
        const Mat& P = CAB[static_cast<std::size_t>(l - 1 - s)];
        for (int r = 0; r < nu; ++r) row.base.a[pm.layout.v_index(s, r)] = P(j, r);
      }
      row.coef.v0 = Vec::Zero(l * nw);
      for (int i = 0; i < l; ++i) {
        const Mat& W = CAG[static_cast<std::size_t>(l - 1 - i)];
        for (int wc = 0; wc < nw; ++wc) row.coef.v0[i * nw + wc] = W(j, wc);
      }
      row.coef.Mz = Mat::Zero(l * nw, nz);
      if (affine_feedback)
        for (int s = 1; s < l; ++s) {
          const Mat& P = CAB[static_cast<std::size_t>(l - 1 - s)];
          for (int i = 0; i < s; ++i)
            for (int r = 0; r < nu; ++r)
              for (int wc = 0; wc < nw; ++wc)
                row.coef.Mz(i * nw + wc, pm.layout.L_index(s, i, r, wc)) += P(j, r);
        }
      pm.output.push_back(std::move(row));
    }
  }

  pm.input.reserve(static_cast<std::size_t>(N * nu));
  for (int l = 0; l < N; ++l)
    for (int j = 0; j < nu; ++j) {
      PredictedRow row;
      row.base.c0 = 0.0;
      row.base.a = Vec::Zero(nz);
      row.base.a[pm.layout.v_index(l, j)] = 1.0;
      row.coef.v0 = Vec::Zero(l * nw);
      row.coef.Mz = Mat::Zero(l * nw, nz);
      if (affine_feedback)
        for (int i = 0; i < l; ++i)
          for (int wc = 0; wc < nw; ++wc)
            row.coef.Mz(i * nw + wc, pm.layout.L_index(l, i, j, wc)) = 1.0;
      pm.input.push_back(std::move(row));
    }

  pm.stacked.reserve(static_cast<std::size_t>(N * nw));
  for (int l = 0; l < N; ++l)
    for (int j = 0; j < nw; ++j) pm.stacked.push_back(sys.disturbance[static_cast<std::size_t>(j)]);
  return pm;
}

CompiledConstraints compile_chance_constraints(const PredictionModel& pred,
                                               const SmpcProblem& prob) {
  prob.validate();
  if (pred.N != prob.N || pred.n_y != prob.system.ny() || pred.n_u != prob.system.nu())
    throw InvalidInput("compile_chance_constraints: prediction does not match problem");
  CompiledConstraints out;
  for (int l = 1; l <= pred.N; ++l)
    for (int j = 0; j < pred.n_y; ++j) {
      const PredictedRow& row = pred.output[static_cast<std::size_t>((l - 1) * pred.n_y + j)];
      auto w = stacked_prefix(pred, l);
      // y <= y_max: (base - y_max) + coef^T w <= 0 at level gamma1.
      out.chance.push_back(make_constraint(row.base.c0 - prob.y_max[j], row.base.a, row.coef.v0,
                                           row.coef.Mz, false, w, prob.gamma1));
      out.labels.push_back({ConstraintKind::flood, l, j});
      // y >= y_min: (y_min - base) - coef^T w <= 0 at level gamma2.
      out.chance.push_back(make_constraint(row.base.c0 - prob.y_min[j], row.base.a, row.coef.v0,
                                           row.coef.Mz, true, std::move(w), prob.gamma2));
      out.labels.push_back({ConstraintKind::drought, l, j});
    }
  for (int l = 0; l < pred.N; ++l)
    for (int j = 0; j < pred.n_u; ++j) {
      const PredictedRow& row = pred.input[static_cast<std::size_t>(l * pred.n_u + j)];
      const bool deterministic = l == 0 || !pred.layout.feedback;
      if (deterministic) {
        out.hard.push_back({pred.layout.v_index(l, j), 0.0, prob.u_max[j]});
        continue;
      }
      auto w = stacked_prefix(pred, l);
      // u <= u_max and u >= 0, each one-sided at level gamma3.
      out.chance.push_back(make_constraint(row.base.c0 - prob.u_max[j], row.base.a, row.coef.v0,
                                           row.coef.Mz, false, w, prob.gamma3));
      out.labels.push_back({ConstraintKind::input_upper, l, j});
      out.chance.push_back(make_constraint(row.base.c0, row.base.a, row.coef.v0, row.coef.Mz,
                                           true, std::move(w), prob.gamma3));
      out.labels.push_back({ConstraintKind::input_lower, l, j});
    }
  return out;
}

std::pair<double, Vec> expected_cost(const PredictionModel& pred, const SmpcProblem& prob,
                                     const Vec& z) {
  if (z.size() != pred.layout.size())
    throw InvalidInput("expected_cost: decision vector size mismatch");
  const CostForm form = make_cost_form(pred, prob);
  const Vec r = form.E * z - form.f;
  return {r.squaredNorm(), 2.0 * (form.E.transpose() * r)};
}

SolveResult al_solve(const NlpProblem& np, Vec z, const SolverOptions& opts) {
  for (Eigen::Index k = 0; k < z.size(); ++k)
    if (!std::isfinite(z[k])) throw InvalidInput("al_solve: non-finite initial point");
  for (const BoxBound& b : np.bounds)
    if (b.index < 0 || b.index >= z.size() || !(b.lo <= b.hi))
      throw InvalidInput("al_solve: malformed box bound");

  const std::size_t nc = np.chance.size();
  std::function<std::pair<double, Vec>(const Vec&)> cost = np.cost;
  if (!cost)
    cost = [](const Vec& zz) { return std::pair<double, Vec>{0.0, Vec::Zero(zz.size())}; };

  SolveResult res;
  EvalOptions eo;
  eo.tol = np.tol;
  eo.counters = &res.counters;

  // Screening passes over the full constraint list only need to place each
  // residual relative to the margin, so they run at a much looser tolerance
  // than the working-set evaluations driving the iterates.
  EvalOptions eo_loose = eo;
  if (opts.screen) {
    eo_loose.tol.abs = std::max(eo.tol.abs, 1e-6);
    eo_loose.tol.rel = std::max(eo.tol.rel, 1e-4);
  }

  z = project_bounds(std::move(z), np.bounds);

  auto all_beta = [&](const Vec& zz) {
    std::vector<double> b(nc);
    if (nc) {
      const auto rs = probability_batch(np.chance, as_span(zz), eo_loose, opts.mode);
      for (std::size_t i = 0; i < nc; ++i) b[i] = rs[i].beta;
    }
    return b;
  };
  auto max_viol = [&](const std::vector<double>& beta) {
    double v = 0.0;
    for (std::size_t i = 0; i < nc; ++i) v = std::max(v, np.chance[i].gamma - beta[i]);
    return std::max(v, 0.0);
  };

  std::vector<double> lam(nc, 0.0);
  double rho = opts.rho0;
  std::vector<double> beta_all = all_beta(z);

  Vec best_z = z;
  double best_viol = max_viol(beta_all);
  double best_cost = cost(z).first;
  std::vector<double> best_beta = beta_all;
  auto consider_best = [&](const Vec& zz, const std::vector<double>& beta) {
    const double v = max_viol(beta);
    const double J = cost(zz).first;
    if (v < best_viol - 1e-12 || (v < best_viol + 1e-12 && J < best_cost)) {
      best_z = zz;
      best_viol = v;
      best_cost = J;
      best_beta = beta;
    }
  };

  bool converged = false;
  double viol_prev = std::numeric_limits<double>::infinity();
  int total_inner = 0, outer = 0;

  while (!converged && total_inner < opts.max_iters) {
    ++outer;

    // Working set: multipliers pending or residual within the margin.
    std::vector<std::size_t> act;
    for (std::size_t i = 0; i < nc; ++i)
      if (!opts.screen || lam[i] > 0.0 ||
          np.chance[i].gamma - beta_all[i] > -opts.screen_margin)
        act.push_back(i);
    std::vector<AffineChanceConstraint> sub;
    sub.reserve(act.size());
    for (std::size_t i : act) sub.push_back(np.chance[i]);

    // Merit for a trial point: cost plus the AL penalty over the working set.
    auto merit_only = [&](const Vec& zz) {
      double m = cost(zz).first;
      if (!sub.empty()) {
        const auto rs = probability_batch(sub, as_span(zz), eo, opts.mode);
        for (std::size_t u = 0; u < act.size(); ++u) {
          const double r = np.chance[act[u]].gamma - rs[u].beta;
          const double wgt = std::max(0.0, lam[act[u]] + rho * r);
          m += (wgt * wgt - lam[act[u]] * lam[act[u]]) / (2.0 * rho);
        }
      }
      return m;
    };

    Vec z_prev, g_prev;
    bool have_prev = false;
    bool kkt_hit = false;

    for (int it = 0; it < opts.inner_per_outer && total_inner < opts.max_iters; ++it) {
      ++total_inner;
      auto [J, gm] = cost(z);
      double merit = J;
      double viol_act = 0.0;
      if (!sub.empty()) {
        const auto grs = gradient_batch(sub, as_span(z), eo, opts.mode);
        for (std::size_t u = 0; u < act.size(); ++u) {
          const double r = np.chance[act[u]].gamma - grs[u].beta;
          viol_act = std::max(viol_act, r);
          const double wgt = std::max(0.0, lam[act[u]] + rho * r);
          merit += (wgt * wgt - lam[act[u]] * lam[act[u]]) / (2.0 * rho);
          if (wgt > 0.0)
            for (Eigen::Index k = 0; k < z.size(); ++k)
              gm[k] -= wgt * grs[u].grad[static_cast<std::size_t>(k)];
        }
      }

      const Vec pg = z - project_bounds(z - gm, np.bounds);
      if (pg.lpNorm<Eigen::Infinity>() < opts.tol && viol_act < opts.tol) {
        kkt_hit = true;
        break;
      }

      double alpha;
      if (have_prev) {
        const Vec s = z - z_prev;
        const Vec y = gm - g_prev;
        const double sy = s.dot(y);
        alpha = sy > 1e-300 ? s.squaredNorm() / sy : 1.0;
        alpha = std::clamp(alpha, 1e-10, 1e10);
      } else {
        alpha = 1.0 / std::max(1.0, gm.lpNorm<Eigen::Infinity>());
      }

      bool accepted = false;
      Vec z_new;
      for (int bt = 0; bt < 40; ++bt) {
        z_new = project_bounds(z - alpha * gm, np.bounds);
        const double step2 = (z_new - z).squaredNorm();
        if (step2 == 0.0) break;
        const double m_new = merit_only(z_new);
        if (m_new <= merit - 1e-4 * step2 / alpha + 1e-14 * std::abs(merit)) {
          accepted = true;
          if (opts.merit_log) opts.merit_log->emplace_back(outer, m_new);
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) break;  // stalled; escalate via the outer update

      z_prev = z;
      g_prev = gm;
      have_prev = true;
      z = std::move(z_new);
    }

    // Working-set residuals at full accuracy drive the multiplier updates and
    // the convergence test; the loose full pass re-screens and certifies the
    // rest as clear of the margin.
    double viol = 0.0;
    if (!sub.empty()) {
      const auto rs = probability_batch(sub, as_span(z), eo, opts.mode);
      for (std::size_t u = 0; u < act.size(); ++u) {
        const std::size_t i = act[u];
        const double r = np.chance[i].gamma - rs[u].beta;
        viol = std::max(viol, r);
        lam[i] = std::max(0.0, lam[i] + rho * r);
        beta_all[i] = rs[u].beta;
      }
    }
    viol = std::max(viol, 0.0);

    bool grew = false;
    if (nc) {
      const std::vector<double> fresh = all_beta(z);
      std::size_t u = 0;
      for (std::size_t i = 0; i < nc; ++i) {
        if (u < act.size() && act[u] == i) {
          ++u;  // keep the accurate working-set value
          continue;
        }
        beta_all[i] = fresh[i];
        if (opts.screen && lam[i] == 0.0 &&
            np.chance[i].gamma - fresh[i] > -opts.screen_margin)
          grew = true;
      }
    }
    consider_best(z, beta_all);
    if (kkt_hit && viol < opts.tol && !grew) {
      converged = true;
      break;
    }
    if (viol > 0.5 * viol_prev && viol > opts.tol) rho = std::min(rho * 4.0, opts.rho_max);
    viol_prev = viol;
  }

  if (converged) {
    res.z = z;
    res.status = SolveStatus::converged;
    res.beta = beta_all;
    res.max_violation = max_viol(beta_all);
  } else {
    res.z = best_z;
    res.status = SolveStatus::iteration_limit;
    res.beta = best_beta;
    res.max_violation = best_viol;
  }
  res.cost = cost(res.z).first;
  res.iterations = total_inner;
  res.outer_rounds = outer;
  return res;
}

SolveResult solve(const SmpcProblem& prob, const Vec& x0, const Vec& z_init) {
  prob.validate();
  const PredictionModel pred = build_prediction(prob.system, x0, prob.N, prob.affine_feedback);
  CompiledConstraints cc = compile_chance_constraints(pred, prob);
  const CostForm form = make_cost_form(pred, prob);

  NlpProblem np;
  np.cost = [form](const Vec& z) {
    const Vec r = form.E * z - form.f;
    return std::pair<double, Vec>{r.squaredNorm(), 2.0 * (form.E.transpose() * r)};
  };
  np.chance = std::move(cc.chance);
  np.bounds = std::move(cc.hard);
  np.tol = prob.tol;

  Vec z0 = z_init.size() ? z_init : Vec::Zero(pred.layout.size());
  if (z0.size() != pred.layout.size())
    throw InvalidInput("solve: initial decision vector size mismatch");
  return al_solve(np, std::move(z0), prob.solver);
}

// Receding-horizon warm start: shift moves and gains one step; the vacated
// last input block repeats and vacated gains zero out.
Vec shift_decision(const Layout& lay, const Vec& z) {
  Vec out = Vec::Zero(z.size());
  for (int l = 0; l + 1 < lay.N; ++l)
    for (int r = 0; r < lay.n_u; ++r) out[lay.v_index(l, r)] = z[lay.v_index(l + 1, r)];
  // Repeat the last planned input for the fresh horizon slot: near steady
  // operation that is a far better start than a zero block.
  if (lay.N >= 2)
    for (int r = 0; r < lay.n_u; ++r)
      out[lay.v_index(lay.N - 1, r)] = z[lay.v_index(lay.N - 1, r)];
  if (lay.feedback)
    for (int l = 1; l + 1 < lay.N; ++l)
      for (int i = 0; i + 1 < l + 1; ++i)
        for (int r = 0; r < lay.n_u; ++r)
          for (int wc = 0; wc < lay.n_w; ++wc)
            out[lay.L_index(l, i, r, wc)] = z[lay.L_index(l + 1, i + 1, r, wc)];
  return out;
}

SimulationTrace closed_loop_simulate(const SmpcProblem& prob, const Vec& x0, int T,
                                     std::uint64_t seed, const Vec& z_init) {
  prob.validate();
  if (T < 1) throw InvalidInput("closed_loop_simulate: need at least one step");
  const int nu = prob.system.nu(), nw = prob.system.nw();
  const Layout lay{prob.N, nu, nw, prob.affine_feedback};

  SimulationTrace tr;
  {
    const PredictionModel pred0 = build_prediction(prob.system, x0, prob.N, prob.affine_feedback);
    tr.labels = compile_chance_constraints(pred0, prob).labels;
  }

  std::mt19937_64 eng(seed);
  Vec x = x0;
  Vec z = z_init;
  for (int k = 0; k < T; ++k) {
    const SolveResult sr = solve(prob, x, z);
    StepRecord rec;
    rec.t = k;
    rec.x = x;
    rec.y = prob.system.C * x;
    rec.u = sr.z.head(nu);
    rec.beta = sr.beta;
    rec.status = sr.status;
    rec.cost = sr.cost;
    rec.iterations = sr.iterations;
    Vec w(nw);
    for (int j = 0; j < nw; ++j) w[j] = prob.system.disturbance[static_cast<std::size_t>(j)].sample_one(eng);
    rec.w = w;
    x = prob.system.A * x + prob.system.B * rec.u + prob.system.G * w + prob.system.c_at(k);
    tr.steps.push_back(std::move(rec));
    z = shift_decision(lay, sr.z);
  }
  tr.x_final = x;
  return tr;
}

}  // namespace cfcc::smpc
