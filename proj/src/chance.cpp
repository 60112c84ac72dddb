#include "cfcc/chance.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "cfcc/errors.hpp"
#include "inversion_core.hpp"

namespace cfcc {
namespace {

constexpr double kPi = std::numbers::pi;

void check_z(std::span<const double> z) {
  for (double v : z)
    if (!std::isfinite(v)) throw InvalidInput("decision vector has a non-finite entry");
}

double eval_q(const AffineChanceConstraint& c, std::span<const double> z) {
  if (!c.q) throw InvalidInput("constraint is missing the q callback");
  const double q = c.q(z);
  if (!std::isfinite(q)) throw InvalidInput("q(z) is not finite");
  return q;
}

std::vector<double> eval_g(const AffineChanceConstraint& c, std::span<const double> z) {
  if (!c.g) throw InvalidInput("constraint is missing the g callback");
  std::vector<double> g = c.g(z);
  if (g.size() != c.w.size())
    throw InvalidInput("g(z) returned " + std::to_string(g.size()) + " values for " +
                       std::to_string(c.w.size()) + " disturbance components");
  for (double v : g)
    if (!std::isfinite(v)) throw InvalidInput("g(z) has a non-finite entry");
  return g;
}

std::vector<double> eval_grad_q(const AffineChanceConstraint& c, std::span<const double> z) {
  if (!c.grad_q) throw InvalidInput("constraint is missing the grad_q callback");
  std::vector<double> gq = c.grad_q(z);
  for (double v : gq)
    if (!std::isfinite(v)) throw InvalidInput("grad_q(z) has a non-finite entry");
  return gq;
}

std::vector<double> eval_grad_g(const AffineChanceConstraint& c, std::span<const double> z,
                                std::size_t m, std::size_t n) {
  std::vector<double> J = c.grad_g(z);
  if (J.size() != m * n)
    throw InvalidInput("grad_g(z) returned " + std::to_string(J.size()) +
                       " entries, expected " + std::to_string(m * n));
  for (double v : J)
    if (!std::isfinite(v)) throw InvalidInput("grad_g(z) has a non-finite entry");
  return J;
}

std::vector<detail::Factor> active_factors(const AffineChanceConstraint& c,
                                           std::span<const double> g,
                                           std::vector<std::size_t>* idx = nullptr) {
  std::vector<detail::Factor> fac;
  fac.reserve(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (g[j] == 0.0) continue;  // factor contributes phi(0) = 1 identically
    fac.push_back({&c.w[j], g[j]});
    if (idx) idx->push_back(j);
  }
  return fac;
}

void merge_counters(EvalCounters& dst, const EvalCounters& src) {
  dst.cf_component_batches += src.cf_component_batches;
  dst.cf_part_batches += src.cf_part_batches;
  dst.cf_prime_part_batches += src.cf_prime_part_batches;
  dst.subintervals += src.subintervals;
  dst.integrand_batches += src.integrand_batches;
}

template <typename R, typename Eval>
std::vector<R> run_batch(std::span<const AffineChanceConstraint> cs, const EvalOptions& opts,
                         ExecMode mode, Eval eval) {
  std::vector<R> out(cs.size());
  if (mode == ExecMode::serial) {
    for (std::size_t i = 0; i < cs.size(); ++i) out[i] = eval(cs[i], opts);
    return out;
  }
  // Exceptions may not cross the parallel region; keep the first and rethrow.
  std::exception_ptr err;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cs.size()); ++i) {
    try {
      EvalCounters local;
      EvalOptions lo = opts;
      lo.counters = opts.counters ? &local : nullptr;
      out[static_cast<std::size_t>(i)] = eval(cs[static_cast<std::size_t>(i)], lo);
      if (opts.counters) {
#ifdef _OPENMP
#pragma omp critical(cfcc_counters)
#endif
        merge_counters(*opts.counters, local);
      }
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical(cfcc_batch_error)
#endif
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  return out;
}

}  // namespace

std::vector<cplx> lambda_cf(const AffineChanceConstraint& c, std::span<const double> z,
                            std::span<const double> ts) {
  check_z(z);
  for (double t : ts)
    if (!std::isfinite(t)) throw InvalidInput("lambda_cf node is not finite");
  const std::vector<double> g = eval_g(c, z);
  std::vector<cplx> out(ts.size(), cplx(1.0, 0.0));
  std::vector<double> scaled(ts.size());
  std::vector<cplx> buf(ts.size());
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (g[j] == 0.0) continue;
    for (std::size_t i = 0; i < ts.size(); ++i) scaled[i] = g[j] * ts[i];
    c.w[j].cf(scaled, buf);
    for (std::size_t i = 0; i < ts.size(); ++i) out[i] *= buf[i];
  }
  return out;
}

std::vector<cplx> xi(const AffineChanceConstraint& c, std::span<const double> z,
                     std::span<const double> ts) {
  check_z(z);
  for (double t : ts)
    if (!std::isfinite(t)) throw InvalidInput("xi node is not finite");
  const std::vector<double> gq = eval_grad_q(c, z);
  const std::size_t n = gq.size();
  const std::size_t nt = ts.size();
  std::vector<cplx> out(nt * n, cplx(0.0, 0.0));
  if (n == 0 || !c.grad_g) return out;  // zero Jacobian: xi vanishes identically
  const std::vector<double> g = eval_g(c, z);
  const std::size_t m = g.size();
  const std::vector<double> J = eval_grad_g(c, z, m, n);
  std::vector<double> scaled(nt);
  std::vector<cplx> phi(nt), phip(nt);
  for (std::size_t j = 0; j < m; ++j) {
    bool row_zero = true;
    for (std::size_t k = 0; k < n && row_zero; ++k) row_zero = J[j * n + k] == 0.0;
    if (row_zero) continue;
    for (std::size_t i = 0; i < nt; ++i) scaled[i] = g[j] * ts[i];
    c.w[j].cf(scaled, phi);
    c.w[j].cf_prime(scaled, phip);
    for (std::size_t i = 0; i < nt; ++i) {
      if (std::abs(phi[i]) < 1e-300)
        throw VanishingCf("component CF magnitude below 1e-300 in xi",
                          static_cast<int>(j), ts[i]);
      const cplx a = ts[i] * phip[i] / phi[i];
      for (std::size_t k = 0; k < n; ++k) out[i * n + k] += a * J[j * n + k];
    }
  }
  return out;
}

ProbabilityResult probability(const AffineChanceConstraint& c, std::span<const double> z,
                              const EvalOptions& opts) {
  check_z(z);
  const double q = eval_q(c, z);
  const std::vector<double> g = eval_g(c, z);
  const std::vector<detail::Factor> fac = active_factors(c, g);
  ProbabilityResult r;
  if (fac.empty()) {
    // Deterministic constraint: probability is the indicator of q <= 0.
    r.raw = q <= 0.0 ? 1.0 : 0.0;
    r.beta = r.raw;
    return r;
  }
  detail::CoreOptions co;
  co.share = opts.share_intermediates;
  co.counters = opts.counters;
  const detail::CoreResult cr = detail::invert_product(fac, q, opts.tol, co);
  r.raw = 0.5 - cr.ibeta / kPi;
  r.beta = std::clamp(r.raw, 0.0, 1.0);
  r.error = cr.error / kPi;
  r.subdivisions = cr.subdivisions;
  r.batch_calls = cr.batch_calls;
  return r;
}

GradientResult gradient(const AffineChanceConstraint& c, std::span<const double> z,
                        const EvalOptions& opts) {
  check_z(z);
  const double q = eval_q(c, z);
  const std::vector<double> g = eval_g(c, z);
  const std::vector<double> gq = eval_grad_q(c, z);
  const std::size_t m = g.size();
  const std::size_t n = gq.size();
  std::vector<double> J;
  if (c.grad_g) J = eval_grad_g(c, z, m, n);

  GradientResult r;
  r.grad.assign(n, 0.0);

  std::vector<std::size_t> idx;
  const std::vector<detail::Factor> fac = active_factors(c, g, &idx);
  if (fac.empty()) {
    // Deterministic constraint: the step's subgradient convention is zero.
    r.beta = q <= 0.0 ? 1.0 : 0.0;
    return r;
  }

  detail::CoreOptions co;
  co.density = true;
  co.alpha = true;
  co.share = opts.share_intermediates;
  co.counters = opts.counters;
  const detail::CoreResult cr = detail::invert_product(fac, q, opts.tol, co);

  const double p = cr.idens / kPi;  // density of g^T w at -q
  r.beta = std::clamp(0.5 - cr.ibeta / kPi, 0.0, 1.0);
  r.density = p;
  r.error = cr.error / kPi;
  r.subdivisions = cr.subdivisions;
  r.batch_calls = cr.batch_calls;

  for (std::size_t k = 0; k < n; ++k) r.grad[k] = -gq[k] * p;
  if (!J.empty()) {
    for (std::size_t u = 0; u < fac.size(); ++u) {
      const std::size_t j = idx[u];
      const double s = cr.ialpha[u] / kPi;
      for (std::size_t k = 0; k < n; ++k) r.grad[k] -= J[j * n + k] * s;
    }
    // A factor frozen at g_j = 0 drops out of the product, but beta still
    // moves with g_j at rate -mean_j * density.
    for (std::size_t j = 0; j < m; ++j) {
      if (g[j] != 0.0) continue;
      bool row_zero = true;
      for (std::size_t k = 0; k < n && row_zero; ++k) row_zero = J[j * n + k] == 0.0;
      if (row_zero) continue;
      const double mu = c.w[j].mean();
      for (std::size_t k = 0; k < n; ++k) r.grad[k] -= J[j * n + k] * mu * p;
    }
  }
  return r;
}

ResidualResult constraint_residual(const AffineChanceConstraint& c, std::span<const double> z,
                                   const EvalOptions& opts) {
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0))
    throw InvalidInput("constraint level gamma must lie in [0, 1]");
  const GradientResult gr = gradient(c, z, opts);
  ResidualResult r;
  r.residual = c.gamma - gr.beta;
  r.beta = gr.beta;
  r.grad.resize(gr.grad.size());
  for (std::size_t k = 0; k < gr.grad.size(); ++k) r.grad[k] = -gr.grad[k];
  return r;
}

void LambdaCf::cf(std::span<const double> t, std::span<cplx> out) const {
  const std::vector<cplx> v = lambda_cf(*c_, z_, t);
  std::copy(v.begin(), v.end(), out.begin());
}

std::vector<GradientResult> gradient_batch(std::span<const AffineChanceConstraint> cs,
                                           std::span<const double> z, const EvalOptions& opts,
                                           ExecMode mode) {
  return run_batch<GradientResult>(
      cs, opts, mode,
      [z](const AffineChanceConstraint& c, const EvalOptions& o) { return gradient(c, z, o); });
}

std::vector<ProbabilityResult> probability_batch(std::span<const AffineChanceConstraint> cs,
                                                 std::span<const double> z,
                                                 const EvalOptions& opts, ExecMode mode) {
  return run_batch<ProbabilityResult>(
      cs, opts, mode,
      [z](const AffineChanceConstraint& c, const EvalOptions& o) { return probability(c, z, o); });
}

}  // namespace cfcc
