#include "cfcc/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cfcc/errors.hpp"

namespace cfcc::quad {

// QUADPACK dqk15 constants, reordered ascending; Gauss weights sit at the odd
// indices (7-point rule nested in the 15-point one).
const double kNodes[kNodeCount] = {
    -0.991455371120812639206854697526329,
    -0.949107912342758524526189684047851,
    -0.864864423359769072789712788640926,
    -0.741531185599394439863864773280788,
    -0.586087235467691130294144838258730,
    -0.405845151377397166906606412076961,
    -0.207784955007898467600689403773245,
    0.0,
    0.207784955007898467600689403773245,
    0.405845151377397166906606412076961,
    0.586087235467691130294144838258730,
    0.741531185599394439863864773280788,
    0.864864423359769072789712788640926,
    0.949107912342758524526189684047851,
    0.991455371120812639206854697526329,
};

const double kKronrodWeights[kNodeCount] = {
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
    0.204432940075298892414161999234649,
    0.190350578064785409913256402421014,
    0.169004726639267902826583426598550,
    0.140653259715525918745189590510238,
    0.104790010322250183839876322541518,
    0.063092092629978553290700663189204,
    0.022935322010529224963732008058970,
};

const double kGaussWeights[kNodeCount] = {
    0.0,
    0.129484966168869693270611432679082,
    0.0,
    0.279705391489276667901467771423780,
    0.0,
    0.381830050505118944950369775488975,
    0.0,
    0.417959183673469387755102040816327,
    0.0,
    0.381830050505118944950369775488975,
    0.0,
    0.279705391489276667901467771423780,
    0.0,
    0.129484966168869693270611432679082,
    0.0,
};

namespace {

double panel_error(double diff) {
  double d = std::abs(diff);
  double scaled = std::pow(200.0 * d, 1.5);
  return std::min(d, scaled);
}

struct RationalMap {
  static double abscissa(double u) { return u / (1.0 - u); }
  static double jacobian(double u) {
    double d = 1.0 - u;
    return 1.0 / (d * d);
  }
};

struct IdentityMap {
  static double abscissa(double x) { return x; }
  static double jacobian(double) { return 1.0; }
};

struct Interval {
  double lo = 0.0, hi = 0.0;     // in map coordinates
  std::vector<double> kronrod;   // per channel
  double err = 0.0;              // worst channel
  bool splittable = true;
};

// Evaluates a group of intervals with a single integrand invocation; fills
// kronrod sums and the error estimate of each.
template <class Map>
void eval_round(const BatchIntegrand& f, int channels,
                std::span<Interval> group, std::vector<double>& ts,
                std::vector<double>& jw, std::vector<double>& out) {
  const std::size_t n = group.size() * kNodeCount;
  ts.resize(n);
  jw.resize(n);
  std::size_t pos = 0;
  for (const Interval& iv : group) {
    double mid = 0.5 * (iv.lo + iv.hi);
    double hw = 0.5 * (iv.hi - iv.lo);
    for (int i = 0; i < kNodeCount; ++i, ++pos) {
      double x = mid + hw * kNodes[i];
      ts[pos] = Map::abscissa(x);
      jw[pos] = hw * Map::jacobian(x);
    }
  }
  out.assign(static_cast<std::size_t>(channels) * n, 0.0);
  f(ts, out);
  for (int c = 0; c < channels; ++c) {
    const double* row = out.data() + static_cast<std::size_t>(c) * n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(row[i])) {
        throw NonFiniteIntegrand(
            "integrand returned a non-finite value at t=" +
                std::to_string(ts[i]),
            ts[i]);
      }
    }
  }
  pos = 0;
  for (Interval& iv : group) {
    iv.kronrod.assign(channels, 0.0);
    double worst = 0.0;
    for (int c = 0; c < channels; ++c) {
      const double* row = out.data() + static_cast<std::size_t>(c) * n + pos;
      double k15 = 0.0, g7 = 0.0;
      for (int i = 0; i < kNodeCount; ++i) {
        double v = row[i] * jw[pos + i];
        k15 += kKronrodWeights[i] * v;
        g7 += kGaussWeights[i] * v;
      }
      iv.kronrod[c] = k15;
      worst = std::max(worst, panel_error(k15 - g7));
    }
    iv.err = worst;
    double width = iv.hi - iv.lo;
    iv.splittable = width > 64.0 * 1e-16 * (std::abs(iv.lo) + std::abs(iv.hi) + 1e-300);
    pos += kNodeCount;
  }
}

template <class Map>
QuadratureResult adaptive(const BatchIntegrand& f, int channels,
                          const Tol& tol, std::span<const double> breaks) {
  if (channels < 1) throw InvalidInput("channels must be >= 1");
  if (breaks.size() < 2) throw InvalidInput("need at least two breakpoints");
  for (std::size_t i = 1; i < breaks.size(); ++i) {
    if (!(breaks[i - 1] < breaks[i]))
      throw InvalidInput("breakpoints must be strictly ascending");
  }
  const int k0 = static_cast<int>(breaks.size()) - 1;
  const int budget = std::max(tol.max_subdiv, 2 * k0);

  std::vector<Interval> ivs(k0);
  for (int i = 0; i < k0; ++i) {
    ivs[i].lo = breaks[i];
    ivs[i].hi = breaks[i + 1];
  }
  std::vector<double> ts, jw, out;
  eval_round<Map>(f, channels, ivs, ts, jw, out);

  QuadratureResult res;
  res.batch_calls = 1;
  res.subdivisions = k0;

  auto totals = [&]() {
    std::vector<double> v(channels, 0.0);
    double e = 0.0;
    for (const Interval& iv : ivs) {
      for (int c = 0; c < channels; ++c) v[c] += iv.kronrod[c];
      e += iv.err;
    }
    return std::pair(std::move(v), e);
  };

  while (true) {
    auto [vals, err] = totals();
    double scale = 0.0;
    for (double v : vals) scale = std::max(scale, std::abs(v));
    if (err <= std::max(tol.abs, tol.rel * scale)) {
      res.values = std::move(vals);
      res.error = err;
      return res;
    }
    // pick the splittable interval with the largest error
    int worst = -1;
    for (std::size_t i = 0; i < ivs.size(); ++i) {
      if (!ivs[i].splittable) continue;
      if (worst < 0 || ivs[i].err > ivs[worst].err) worst = static_cast<int>(i);
    }
    if (worst < 0 || res.subdivisions + 2 > budget) {
      throw ToleranceNotMet(
          "adaptive quadrature budget exhausted (error " +
              std::to_string(err) + ")",
          vals, err);
    }
    Interval left, right;
    double mid = 0.5 * (ivs[worst].lo + ivs[worst].hi);
    left.lo = ivs[worst].lo;
    left.hi = mid;
    right.lo = mid;
    right.hi = ivs[worst].hi;
    Interval pair2[2] = {left, right};
    eval_round<Map>(f, channels, pair2, ts, jw, out);
    res.batch_calls += 1;
    res.subdivisions += 2;
    ivs[worst] = pair2[0];
    ivs.push_back(pair2[1]);
  }
}

}  // namespace

Gk15Eval gk15_apply(const BatchIntegrand& f, double a, double b) {
  if (!(a < b) || !std::isfinite(a) || !std::isfinite(b))
    throw InvalidInput("gk15_apply requires finite a < b");
  double mid = 0.5 * (a + b), hw = 0.5 * (b - a);
  std::vector<double> ts(kNodeCount), out(kNodeCount);
  for (int i = 0; i < kNodeCount; ++i) ts[i] = mid + hw * kNodes[i];
  f(ts, out);
  Gk15Eval r;
  for (int i = 0; i < kNodeCount; ++i) {
    if (!std::isfinite(out[i]))
      throw NonFiniteIntegrand(
          "integrand returned a non-finite value at t=" + std::to_string(ts[i]),
          ts[i]);
    r.kronrod += kKronrodWeights[i] * out[i] * hw;
    r.gauss += kGaussWeights[i] * out[i] * hw;
  }
  r.error = panel_error(r.kronrod - r.gauss);
  return r;
}

Gk15Eval gk15_apply(const std::function<double(double)>& f, double a,
                    double b) {
  return gk15_apply(
      [&](std::span<const double> t, std::span<double> out) {
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = f(t[i]);
      },
      a, b);
}

std::vector<double> periodic_aware_partition(double omega, double u_max) {
  if (!(u_max > 0.0) || u_max > 1.0)
    throw InvalidInput("u_max must lie in (0, 1]");
  std::vector<double> breaks{0.0};
  if (omega > 0.0) {
    const double period = 2.0 * std::numbers::pi / omega;
    // interior points: at most 63, so intervals stay capped at 64
    for (int k = 1; static_cast<int>(breaks.size()) < 64; ++k) {
      double t = k * period;
      double u = t / (1.0 + t);
      if (u >= u_max * (1.0 - 1e-12)) break;
      breaks.push_back(u);
    }
  }
  breaks.push_back(u_max);
  return breaks;
}

QuadratureResult integrate_semi_infinite(const BatchIntegrand& f, int channels,
                                         const Tol& tol,
                                         std::span<const double> u_breaks) {
  static const double kDefault[2] = {0.0, 1.0};
  if (u_breaks.empty()) u_breaks = kDefault;
  if (u_breaks.front() < 0.0 || u_breaks.back() > 1.0)
    throw InvalidInput("u breakpoints must lie in [0, 1]");
  return adaptive<RationalMap>(f, channels, tol, u_breaks);
}

QuadratureResult integrate_finite(const BatchIntegrand& f, int channels,
                                  const Tol& tol,
                                  std::span<const double> t_breaks) {
  return adaptive<IdentityMap>(f, channels, tol, t_breaks);
}

}  // namespace cfcc::quad
