#include "inversion_core.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "cfcc/errors.hpp"

namespace cfcc::detail {
namespace {

constexpr double kPi = 3.141592653589793238462643383279503;

// Half-line oscillatory integrals converge faster the more of the decaying
// phase the real segment [0, T] captures; the budget trades segment length
// (periods of e^{i t omega}) against the requested accuracy.
int periods_budget(double abs_tol) {
  if (abs_tol <= 3e-10) return 48;
  if (abs_tol <= 3e-9) return 32;
  if (abs_tol <= 3e-8) return 20;
  return 10;
}

// Oscillation rate of a factor's edge coefficients along vertical rays:
// cauchy content contributes e^{-i gamma |g| s}; every other admissible
// family has rational coefficients.
double vertical_osc_rate(const Distribution& d) {
  switch (d.family()) {
    case Family::cauchy:
      return d.p2();
    case Family::mixture: {
      double r = 0.0;
      for (const auto& c : d.components()) r = std::max(r, vertical_osc_rate(c));
      return r;
    }
    default:
      return 0.0;
  }
}

// One elementary-part edge contributing to a factor's tail frequency.
struct PartRef {
  double w = 1.0;
  const Distribution* part = nullptr;
  std::size_t k = 0;
};

// Gaussian content excluded from the tail decomposition; the real segment is
// extended until its remaining mass is provably negligible.
struct UnsafePart {
  double w = 1.0;
  double a = 0.0;   // |phi(g t)| = w exp(-a t^2)
};

struct FactorPlan {
  const Distribution* d = nullptr;
  double g = 0.0;
  double scale = 0.0;                       // cf decay scale in t units
  int parts = 1;                            // elementary CF evaluations per node
  std::vector<double> nu;                   // tail frequencies scaled by g
  std::vector<std::vector<PartRef>> refs;   // per frequency: contributing edges
  std::vector<int> edge_parts;              // refs[k].size()
  std::vector<UnsafePart> unsafe;
};

// One analytic tail piece: the tuples sharing (nearly) one total frequency.
// dir = +1 / -1 integrates up / down a vertical ray from T; dir = 0 keeps the
// non-oscillating bundle on the real axis.
struct Term {
  int dir = 0;
  double omega_ref = 0.0;                // smallest |omega| in the bundle
  double omega_max = 0.0;                // largest |omega| in the bundle
  std::vector<std::vector<int>> picks;   // tuple -> edge index per factor
  std::vector<double> omegas;            // tuple -> exact total frequency
  std::vector<std::vector<int>> used;    // factor -> referenced edge indices
  std::vector<std::vector<int>> slot;    // factor -> edge index -> used slot
  long long part_units = 0;              // counter units per subinterval
};

struct Ctx {
  std::span<const Factor> fac;
  double q = 0.0;
  quad::Tol tol;
  CoreOptions opt;
  std::size_t m = 0;
  int channels = 1;
  long long parts_total = 0;
  double omega_est = 0.0;
  double t_fast = 0.0;    // earliest factor decay scale
  double t_slow = 0.0;    // latest factor decay scale
  double cauchy_rate = 0.0;
  bool legs = false;
  std::vector<FactorPlan> fp;
  std::vector<Term> terms;
  double T = 0.0;
  // Scratch reused across the many small batch calls of one inversion; an
  // inversion runs on a single thread, so plain mutable members suffice.
  mutable std::vector<double> s_t;
  mutable std::vector<cplx> s_zeta, s_pre, s_suf;
  mutable std::vector<std::vector<cplx>> s_cf, s_cfp;
  mutable std::vector<std::vector<std::vector<cplx>>> s_co, s_cop;
};

void bump_counters(const Ctx& c, std::size_t n_nodes, long long part_units) {
  if (!c.opt.counters) return;
  const long long s = static_cast<long long>(n_nodes / quad::kNodeCount);
  c.opt.counters->cf_component_batches += s * static_cast<long long>(c.m);
  c.opt.counters->cf_part_batches += s * part_units;
  if (c.opt.alpha) c.opt.counters->cf_prime_part_batches += s * part_units;
}

Ctx make_ctx(std::span<const Factor> fac, double q, const quad::Tol& tol,
             const CoreOptions& opt) {
  if (fac.empty()) throw InvalidInput("invert_product: need at least one factor");
  if (!std::isfinite(q)) throw InvalidInput("invert_product: q must be finite");

  Ctx c;
  c.fac = fac;
  c.q = q;
  c.tol = tol;
  c.opt = opt;
  c.m = fac.size();
  c.channels = 1 + (opt.density ? 1 : 0) + (opt.alpha ? static_cast<int>(c.m) : 0);
  c.omega_est = std::abs(q);
  c.t_fast = std::numeric_limits<double>::infinity();
  c.t_slow = 0.0;

  bool safe = true;
  double tuples = 1.0;
  c.fp.reserve(c.m);
  for (const Factor& f : fac) {
    if (f.d == nullptr) throw InvalidInput("invert_product: null distribution");
    if (!std::isfinite(f.g) || f.g == 0.0)
      throw InvalidInput("invert_product: factor weights must be finite and nonzero");
    const double ag = std::abs(f.g);
    FactorPlan p;
    p.d = f.d;
    p.g = f.g;
    p.parts = f.d->part_count();
    c.parts_total += p.parts;
    c.omega_est += ag * f.d->location_scale();
    const double scale = f.d->cf_scale() / ag;
    p.scale = scale;
    c.t_fast = std::min(c.t_fast, scale);
    c.t_slow = std::max(c.t_slow, scale);
    c.cauchy_rate += ag * vertical_osc_rate(*f.d);

    // Split elementary parts: leg-safe ones carry the tail decomposition,
    // Gaussian ones are truncated once the real segment outruns them.
    auto add_part = [&](double w, const Distribution& part) {
      if (!part.leg_safe()) {
        p.unsafe.push_back({w, 0.5 * part.p2() * part.p2() * f.g * f.g});
        return;
      }
      const auto& pe = part.edge_freqs();
      for (std::size_t k = 0; k < pe.size(); ++k) {
        const double nu = f.g * pe[k];
        std::size_t slot = p.nu.size();
        for (std::size_t e = 0; e < p.nu.size(); ++e)
          if (std::abs(p.nu[e] - nu) <= 1e-12 * (1.0 + std::abs(nu))) {
            slot = e;
            break;
          }
        if (slot == p.nu.size()) {
          p.nu.push_back(nu);
          p.refs.emplace_back();
        }
        p.refs[slot].push_back({w, &part, k});
      }
    };
    if (f.d->family() == Family::mixture) {
      const auto& ws = f.d->weights();
      const auto& cs = f.d->components();
      for (std::size_t r = 0; r < cs.size(); ++r) add_part(ws[r], cs[r]);
    } else {
      add_part(1.0, *f.d);
    }
    p.edge_parts.reserve(p.nu.size());
    for (const auto& rs : p.refs) p.edge_parts.push_back(static_cast<int>(rs.size()));

    safe = safe && !p.nu.empty();
    tuples *= static_cast<double>(std::max<std::size_t>(p.nu.size(), 1));
    c.fp.push_back(std::move(p));
  }
  c.legs = safe && tuples <= 32.0;
  return c;
}

// Upper bound on the dropped Gaussian mass: sum_r w_r Int_T^inf e^{-a t^2} dt.
double truncation_bound(const Ctx& c, double T) {
  double b = 0.0;
  for (const auto& p : c.fp)
    for (const auto& u : p.unsafe)
      b += u.w * std::exp(-u.a * T * T) / std::max(2.0 * u.a * T, 1e-300);
  return b;
}

// ---- real-axis channel evaluation (plain path and the [0, T] segment) ----

void eval_real(const Ctx& c, std::span<const double> ts, std::span<double> out) {
  const std::size_t n = ts.size();
  const std::size_t m = c.m;
  bump_counters(c, n, c.parts_total);

  auto& z = c.s_t;
  auto& cf = c.s_cf;
  auto& cfp = c.s_cfp;
  z.resize(n);
  cf.resize(m);
  cfp.resize(c.opt.alpha ? m : 0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) z[i] = c.fp[j].g * ts[i];
    cf[j].resize(n);
    c.fp[j].d->cf(z, cf[j]);
    if (c.opt.alpha) {
      cfp[j].resize(n);
      c.fp[j].d->cf_prime(z, cfp[j]);
    }
  }

  const int dens_ch = c.opt.density ? 1 : 0;
  auto& pre = c.s_pre;
  auto& suf = c.s_suf;
  pre.resize(m + 1);
  suf.resize(m + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = ts[i];
    const cplx ph(std::cos(t * c.q), std::sin(t * c.q));
    if (c.opt.share) {
      pre[0] = 1.0;
      for (std::size_t j = 0; j < m; ++j) pre[j + 1] = pre[j] * cf[j][i];
      suf[m] = 1.0;
      for (std::size_t j = m; j-- > 0;) suf[j] = cf[j][i] * suf[j + 1];
      const cplx phi = pre[m];
      out[i] = std::imag(ph * phi) / t;
      if (dens_ch) out[n + i] = std::real(ph * phi);
      if (c.opt.alpha)
        for (std::size_t j = 0; j < m; ++j)
          out[(1 + dens_ch + j) * n + i] = std::imag(ph * cfp[j][i] * pre[j] * suf[j + 1]);
    } else {
      // Debug mode: recompute every product at its use site instead of
      // caching, keeping the association order of the shared path so the
      // subdivision decisions (and hence beta) match bit for bit.
      cplx phi = 1.0;
      for (std::size_t j = 0; j < m; ++j) phi *= cf[j][i];
      out[i] = std::imag(ph * phi) / t;
      if (dens_ch) {
        cplx p2 = 1.0;
        for (std::size_t j = 0; j < m; ++j) p2 *= cf[j][i];
        out[n + i] = std::real(ph * p2);
      }
      if (c.opt.alpha) {
        for (std::size_t j = 0; j < m; ++j) {
          cplx left = 1.0;
          for (std::size_t jj = 0; jj < j; ++jj) left *= cf[jj][i];
          cplx right = 1.0;
          for (std::size_t jj = m; jj-- > j + 1;) right = cf[jj][i] * right;
          out[(1 + dens_ch + j) * n + i] = std::imag(ph * cfp[j][i] * left * right);
        }
      }
    }
  }
}

// ---- tail terms ----

void build_terms(Ctx& c) {
  // Cartesian enumeration: one edge per factor.
  std::vector<std::vector<int>> picks;
  std::vector<double> omegas;
  std::vector<int> idx(c.m, 0);
  for (;;) {
    double om = c.q;
    for (std::size_t j = 0; j < c.m; ++j) om += c.fp[j].nu[static_cast<std::size_t>(idx[j])];
    picks.emplace_back(idx.begin(), idx.end());
    omegas.push_back(om);
    std::size_t j = 0;
    for (; j < c.m; ++j) {
      if (++idx[j] < static_cast<int>(c.fp[j].nu.size())) break;
      idx[j] = 0;
    }
    if (j == c.m) break;
  }

  const double freq_scale = std::max(c.omega_est, 1.0 / c.t_slow);
  // Bundles oscillating slower than the cauchy content decays are kept on the
  // real axis: there the decay e^{-Gamma t} is absolute, while on a vertical
  // leg it turns into pure oscillation against e^{-|omega| s}.
  const double zero_cut = std::max(1e-10 * freq_scale, 2.0 * c.cauchy_rate);
  const double merge_tol = 1e-9 * (1.0 + freq_scale);

  std::vector<std::size_t> order(picks.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return omegas[a] < omegas[b]; });

  auto finish = [&](Term& tm) {
    tm.used.assign(c.m, {});
    tm.slot.assign(c.m, {});
    for (std::size_t j = 0; j < c.m; ++j)
      tm.slot[j].assign(c.fp[j].nu.size(), -1);
    for (const auto& pk : tm.picks)
      for (std::size_t j = 0; j < c.m; ++j) {
        const int k = pk[j];
        if (tm.slot[j][static_cast<std::size_t>(k)] < 0) {
          tm.slot[j][static_cast<std::size_t>(k)] = static_cast<int>(tm.used[j].size());
          tm.used[j].push_back(k);
          tm.part_units += c.fp[j].edge_parts[static_cast<std::size_t>(k)];
        }
      }
    tm.omega_ref = std::abs(tm.omegas[0]);
    tm.omega_max = tm.omega_ref;
    for (double om : tm.omegas) {
      tm.omega_ref = std::min(tm.omega_ref, std::abs(om));
      tm.omega_max = std::max(tm.omega_max, std::abs(om));
    }
    c.terms.push_back(std::move(tm));
  };

  Term zero;
  zero.dir = 0;
  Term cur;
  bool open = false;
  double anchor = 0.0;
  for (std::size_t oi : order) {
    const double om = omegas[oi];
    if (std::abs(om) <= zero_cut) {
      zero.picks.push_back(picks[oi]);
      zero.omegas.push_back(om);
      continue;
    }
    const int dir = om > 0.0 ? 1 : -1;
    if (open && (dir != cur.dir || std::abs(om - anchor) > merge_tol)) {
      finish(cur);
      cur = Term{};
      open = false;
    }
    if (!open) {
      cur.dir = dir;
      anchor = om;
      open = true;
    }
    cur.picks.push_back(picks[oi]);
    cur.omegas.push_back(om);
  }
  if (open) finish(cur);
  if (!zero.picks.empty()) finish(zero);
}

void eval_term(const Ctx& c, const Term& tm, double sigma,
               std::span<const double> ys, std::span<double> out) {
  const std::size_t n = ys.size();
  const std::size_t m = c.m;
  bump_counters(c, n, tm.part_units);

  // Nodes in the t-plane and per-(factor, referenced edge) coefficients.
  auto& zeta = c.s_zeta;
  zeta.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = sigma * ys[i];
    zeta[i] = tm.dir == 0 ? cplx(c.T + s, 0.0) : cplx(c.T, tm.dir * s);
  }
  auto& co = c.s_co;
  auto& cop = c.s_cop;
  co.resize(m);
  cop.resize(c.opt.alpha ? m : 0);
  for (std::size_t j = 0; j < m; ++j) {
    co[j].resize(tm.used[j].size());
    if (c.opt.alpha) cop[j].resize(tm.used[j].size());
    for (std::size_t u = 0; u < tm.used[j].size(); ++u) {
      const auto k = static_cast<std::size_t>(tm.used[j][u]);
      co[j][u].assign(n, cplx(0.0));
      if (c.opt.alpha) cop[j][u].assign(n, cplx(0.0));
      for (const PartRef& ref : c.fp[j].refs[k]) {
        for (std::size_t i = 0; i < n; ++i) {
          const cplx zj = c.fp[j].g * zeta[i];
          co[j][u][i] += ref.w * ref.part->edge_coeff(ref.k, zj);
          if (c.opt.alpha) cop[j][u][i] += ref.w * ref.part->edge_coeff_prime(ref.k, zj);
        }
      }
    }
  }

  const int dens_ch = c.opt.density ? 1 : 0;
  std::fill(out.begin(), out.end(), 0.0);
  auto& pre = c.s_pre;
  auto& suf = c.s_suf;
  pre.resize(m + 1);
  suf.resize(m + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = sigma * ys[i];
    for (std::size_t p = 0; p < tm.picks.size(); ++p) {
      const auto& pk = tm.picks[p];
      const double om = tm.omegas[p];
      // dir != 0: rotated tail +-i e^{i om T} with decay e^{-|om| s};
      // dir == 0: plain real tail keeps the full phase e^{i om t}.
      cplx w;
      if (tm.dir != 0) {
        const cplx pf(0.0, static_cast<double>(tm.dir));
        w = pf * cplx(std::cos(om * c.T), std::sin(om * c.T)) * std::exp(-std::abs(om) * s);
      } else {
        const double tr = zeta[i].real();
        w = cplx(std::cos(om * tr), std::sin(om * tr));
      }
      if (c.opt.share) {
        pre[0] = 1.0;
        for (std::size_t j = 0; j < m; ++j)
          pre[j + 1] = pre[j] * co[j][static_cast<std::size_t>(tm.slot[j][static_cast<std::size_t>(pk[j])])][i];
        suf[m] = 1.0;
        for (std::size_t j = m; j-- > 0;)
          suf[j] = co[j][static_cast<std::size_t>(tm.slot[j][static_cast<std::size_t>(pk[j])])][i] * suf[j + 1];
        const cplx d = pre[m];
        out[i] += std::imag(w * d / zeta[i]);
        if (dens_ch) out[n + i] += std::real(w * d);
        if (c.opt.alpha)
          for (std::size_t j = 0; j < m; ++j) {
            const cplx dj = cop[j][static_cast<std::size_t>(tm.slot[j][static_cast<std::size_t>(pk[j])])][i];
            out[(1 + dens_ch + j) * n + i] += std::imag(w * dj * pre[j] * suf[j + 1]);
          }
      } else {
        auto coef = [&](std::size_t j) -> const cplx& {
          return co[j][static_cast<std::size_t>(tm.slot[j][static_cast<std::size_t>(pk[j])])][i];
        };
        cplx d = 1.0;
        for (std::size_t j = 0; j < m; ++j) d *= coef(j);
        out[i] += std::imag(w * d / zeta[i]);
        if (dens_ch) {
          cplx d2 = 1.0;
          for (std::size_t j = 0; j < m; ++j) d2 *= coef(j);
          out[n + i] += std::real(w * d2);
        }
        if (c.opt.alpha)
          for (std::size_t j = 0; j < m; ++j) {
            const cplx dj = cop[j][static_cast<std::size_t>(tm.slot[j][static_cast<std::size_t>(pk[j])])][i];
            cplx left = 1.0;
            for (std::size_t jj = 0; jj < j; ++jj) left *= coef(jj);
            cplx right = 1.0;
            for (std::size_t jj = m; jj-- > j + 1;) right = coef(jj) * right;
            out[(1 + dens_ch + j) * n + i] += std::imag(w * dj * left * right);
          }
      }
    }
  }
  for (double& v : out) v *= sigma;
}

void accumulate(Ctx& c, CoreResult& r, const quad::QuadratureResult& piece) {
  r.ibeta += piece.values[0];
  std::size_t ch = 1;
  if (c.opt.density) r.idens += piece.values[ch++];
  if (c.opt.alpha)
    for (std::size_t j = 0; j < c.m; ++j) r.ialpha[j] += piece.values[ch + j];
  r.error += piece.error;
  r.subdivisions += piece.subdivisions;
  r.batch_calls += piece.batch_calls;
  if (c.opt.counters) {
    c.opt.counters->subintervals += piece.subdivisions;
    c.opt.counters->integrand_batches += piece.batch_calls;
  }
}

}  // namespace

CoreResult invert_product(std::span<const Factor> factors, double q,
                          const quad::Tol& tol, const CoreOptions& opts) {
  Ctx c = make_ctx(factors, q, tol, opts);
  CoreResult r;
  r.ialpha.assign(c.m, 0.0);

  if (!c.legs) {
    // Mapped half-line with an oscillation-aware seed partition, scaled so the
    // CF decay sits well inside u < 1.
    const double s0 = c.t_slow;
    const auto breaks = quad::periodic_aware_partition(c.omega_est * s0, 1.0);
    std::vector<double> ts;
    auto f = [&](std::span<const double> ys, std::span<double> out) {
      ts.resize(ys.size());
      for (std::size_t i = 0; i < ys.size(); ++i) ts[i] = s0 * ys[i];
      eval_real(c, ts, out);
      for (double& v : out) v *= s0;
    };
    accumulate(c, r, quad::integrate_semi_infinite(f, c.channels, c.tol, breaks));
    return r;
  }

  build_terms(c);

  // Real segment length: enough periods of the estimated oscillation, but no
  // further than the product CF's own decay makes useful.
  const double pb = periods_budget(c.tol.abs);
  double T = 6.0 * c.t_slow;
  if (c.omega_est * c.t_slow > 1e-30)
    T = std::min(T, pb * 2.0 * kPi / c.omega_est);
  // Keep leg coefficients bounded: a vertical ray from T passes the pole
  // region of factor j at depth s ~ scale_j with magnitude ~ scale_j / T.
  // Only factors whose pole survives the slowest leg decay e^{-omega s} can
  // push T out; for the rest the decay kills the pole region outright, and
  // flooring on their (possibly enormous) scale would stuff the real segment
  // with unresolvable oscillation periods.
  double omin = std::numeric_limits<double>::infinity();
  for (const Term& tm : c.terms)
    if (tm.dir != 0) omin = std::min(omin, tm.omega_ref);
  for (const auto& p : c.fp)
    if (!p.nu.empty() && omin * p.scale <= 45.0) T = std::max(T, 0.05 * p.scale);
  // Push the segment end past every truncated Gaussian part.
  const double eps_trunc = std::max(c.tol.abs * 0.05, 1e-14);
  for (const auto& p : c.fp)
    for (const auto& u : p.unsafe) {
      double treq =
          std::sqrt(2.0 * std::max(std::log(std::max(u.w, 1e-300) / eps_trunc), 1.0) / u.a);
      for (int it = 0;
           it < 64 && u.w * std::exp(-u.a * treq * treq) /
                              std::max(2.0 * u.a * treq, 1e-300) >
                          eps_trunc;
           ++it)
        treq *= 1.2;
      T = std::max(T, treq);
    }
  c.T = T;

  quad::Tol pt = c.tol;
  pt.abs = c.tol.abs / static_cast<double>(1 + c.terms.size());

  std::vector<double> seg{0.0};
  if (c.omega_est > 0.0) {
    const double step = 2.0 * kPi / c.omega_est;
    const auto want = static_cast<std::size_t>(T / step);
    const std::size_t nseg = std::min<std::size_t>(std::max<std::size_t>(want, 1), 64);
    for (std::size_t k = 1; k < nseg; ++k) seg.push_back(T * static_cast<double>(k) / static_cast<double>(nseg));
  }
  seg.push_back(T);
  auto f0 = [&](std::span<const double> ts, std::span<double> out) { eval_real(c, ts, out); };
  accumulate(c, r, quad::integrate_finite(f0, c.channels, pt, seg));

  for (const Term& tm : c.terms) {
    double sigma;
    if (tm.dir == 0)
      sigma = c.cauchy_rate > 0.0 ? std::min(4.0 * c.t_slow, 6.0 / c.cauchy_rate)
                                  : 4.0 * c.t_slow;
    else
      sigma = std::min(3.0 / tm.omega_ref, 8.0 * c.t_slow);
    std::vector<double> ub{0.0, 1.0};
    if (tm.dir != 0 && c.cauchy_rate > 0.0)
      ub = quad::periodic_aware_partition(c.cauchy_rate * sigma, 1.0);
    else if (tm.dir == 0 && tm.omega_max * sigma > 6.0)
      ub = quad::periodic_aware_partition(tm.omega_max * sigma, 1.0);
    auto ft = [&](std::span<const double> ys, std::span<double> out) {
      eval_term(c, tm, sigma, ys, out);
    };
    accumulate(c, r, quad::integrate_semi_infinite(ft, c.channels, pt, ub));
  }
  r.error += truncation_bound(c, c.T);
  return r;
}

}  // namespace cfcc::detail
