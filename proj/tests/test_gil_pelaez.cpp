#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "cfcc/distribution.hpp"
#include "cfcc/errors.hpp"
#include "cfcc/gil_pelaez.hpp"

using namespace cfcc;

namespace {

constexpr double kPi = std::numbers::pi;

double normal_cdf(double x, double mu, double s) {
  return 0.5 * std::erfc(-(x - mu) / (s * std::sqrt(2.0)));
}

double exp_cdf(double x, double rate) { return x <= 0.0 ? 0.0 : -std::expm1(-rate * x); }

double uniform_cdf(double x, double a, double b) {
  return std::clamp((x - a) / (b - a), 0.0, 1.0);
}

double cauchy_cdf(double x, double x0, double g) {
  return 0.5 + std::atan((x - x0) / g) / kPi;
}

double laplace_cdf(double x, double mu, double b) {
  const double u = (x - mu) / b;
  return u < 0.0 ? 0.5 * std::exp(u) : 1.0 - 0.5 * std::exp(-u);
}

// Generic provider wrapping a plain CF callable; exercises the opaque path
// that cannot rotate tails off the real axis.
template <typename F>
struct FnCf : CfProvider {
  F fn;
  explicit FnCf(F f) : fn(std::move(f)) {}
  void cf(std::span<const double> t, std::span<cplx> out) const override {
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = fn(t[i]);
  }
};

// CF of sum_j g_j w_j, w_j ~ Exponential(r_j): product of exponential CFs
// with effective rates r_j / g_j.
struct HypoExpCf : CfProvider {
  std::vector<double> rates;
  void cf(std::span<const double> t, std::span<cplx> out) const override {
    for (std::size_t i = 0; i < t.size(); ++i) {
      cplx p = 1.0;
      for (double r : rates) p *= r / cplx(r, -t[i]);
      out[i] = p;
    }
  }
};

// Hypoexponential CDF by partial fractions: F(x) = sum_i c_i (1 - e^{-l_i x}),
// c_i = prod_{j != i} l_j / (l_j - l_i).
double hypoexp_cdf(const std::vector<double>& l, double x) {
  double f = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    double c = 1.0;
    for (std::size_t j = 0; j < l.size(); ++j)
      if (j != i) c *= l[j] / (l[j] - l[i]);
    f += c * (1.0 - std::exp(-l[i] * x));
  }
  return f;
}

struct ProductCf : CfProvider {
  std::vector<Distribution> parts;
  void cf(std::span<const double> t, std::span<cplx> out) const override {
    std::vector<cplx> buf(t.size());
    std::fill(out.begin(), out.end(), cplx(1.0));
    for (const auto& d : parts) {
      d.cf(t, buf);
      for (std::size_t i = 0; i < t.size(); ++i) out[i] *= buf[i];
    }
  }
};

}  // namespace

TEST_CASE("cdf spot checks from closed forms") {
  CHECK(cdf(Distribution::normal(0, 1), 0.0).value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(cdf(Distribution::normal(0, 1), 1.959964).value - 0.975) < 1e-8);
  CHECK(std::abs(cdf(Distribution::exponential(1), 1.0).value - (1.0 - std::exp(-1.0))) < 1e-8);
  CHECK(std::abs(cdf(Distribution::exponential(1), 0.0).value) < 1e-9);
}

TEST_CASE("pdf spot checks from closed forms") {
  CHECK(std::abs(pdf(Distribution::normal(0, 1), 0.0).value - 1.0 / std::sqrt(2.0 * kPi)) < 1e-8);
  CHECK(std::abs(pdf(Distribution::cauchy(0, 1), 0.0).value - 1.0 / kPi) < 1e-8);
  CHECK(std::abs(pdf(Distribution::uniform(0, 1), 0.5).value - 1.0) < 1e-6);
  // exponential density at an interior point
  CHECK(std::abs(pdf(Distribution::exponential(1.3), 0.9).value - 1.3 * std::exp(-1.3 * 0.9)) <
        1e-8);
  // laplace density at the peak side
  CHECK(std::abs(pdf(Distribution::laplace(-1.0, 0.8), -0.5).value -
                 std::exp(-0.5 / 0.8) / (2.0 * 0.8)) < 1e-8);
  // integer-shape gamma has an elementary density
  const double x = 1.0, k = 3.0, th = 0.5;
  const double gp = x * x * std::exp(-x / th) / (2.0 * th * th * th);
  CHECK(std::abs(pdf(Distribution::gamma(k, th), x).value - gp) < 1e-8);
}

TEST_CASE("cdf matches closed forms across each family's range") {
  auto sweep = [](const Distribution& d, double lo, double hi, auto oracle, double tol) {
    for (int i = 0; i < 50; ++i) {
      const double x = lo + (hi - lo) * (i + 0.5) / 50.0;
      const auto r = cdf(d, x);
      CHECK(std::abs(r.value - oracle(x)) < tol);
    }
  };
  sweep(Distribution::normal(0.3, 1.7), 0.3 - 6.0, 0.3 + 6.0,
        [](double x) { return normal_cdf(x, 0.3, 1.7); }, 1e-8);
  sweep(Distribution::exponential(1.3), 0.02, 3.6, [](double x) { return exp_cdf(x, 1.3); },
        1e-8);
  sweep(Distribution::uniform(-2.0, 5.0), -1.95, 4.95,
        [](double x) { return uniform_cdf(x, -2.0, 5.0); }, 1e-8);
  sweep(Distribution::cauchy(0.5, 2.0), 0.5 - 30.0, 0.5 + 30.0,
        [](double x) { return cauchy_cdf(x, 0.5, 2.0); }, 1e-8);
  sweep(Distribution::laplace(-1.0, 0.8), -1.0 - 6.0, -1.0 + 6.0,
        [](double x) { return laplace_cdf(x, -1.0, 0.8); }, 1e-8);
  const auto mix = Distribution::mixture(
      {{0.4, Distribution::normal(-1.0, 0.5)}, {0.6, Distribution::normal(2.0, 1.2)}});
  sweep(mix, -4.0, 6.5,
        [](double x) { return 0.4 * normal_cdf(x, -1.0, 0.5) + 0.6 * normal_cdf(x, 2.0, 1.2); },
        1e-8);
  // mixture across families keeps the slow-decay machinery engaged
  const auto em = Distribution::mixture(
      {{0.5, Distribution::exponential(1.0)}, {0.5, Distribution::exponential(3.0)}});
  sweep(em, 0.05, 4.0,
        [](double x) { return 0.5 * exp_cdf(x, 1.0) + 0.5 * exp_cdf(x, 3.0); }, 1e-8);
}

TEST_CASE("cdf is monotone over random pairs") {
  std::mt19937 eng(42);
  for (const auto& d : {Distribution::normal(0.3, 1.7), Distribution::exponential(2.5),
                        Distribution::uniform(-1.0, 2.0), Distribution::gamma(2.3, 0.7),
                        Distribution::laplace(-0.4, 0.9), Distribution::cauchy(0.2, 1.1),
                        Distribution::mixture({{0.25, Distribution::normal(-2.0, 0.5)},
                                               {0.75, Distribution::exponential(1.5)}})}) {
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    for (int i = 0; i < 100; ++i) {
      double x1 = u(eng), x2 = u(eng);
      if (x1 > x2) std::swap(x1, x2);
      CHECK(cdf(d, x1).value <= cdf(d, x2).value + 1e-9);
    }
  }
}

TEST_CASE("provider path agrees with the error-function oracle") {
  FnCf wrap([](double t) {
    return std::exp(cplx(-0.5 * t * t, 0.3 * t));   // Normal(0.3, 1)
  });
  for (double x : {-1.7, -0.4, 0.3, 1.1, 2.9}) {
    CHECK(std::abs(cdf(wrap, x).value - normal_cdf(x, 0.3, 1.0)) < 1e-9);
    CHECK(std::abs(pdf(wrap, x).value -
                   std::exp(-0.5 * (x - 0.3) * (x - 0.3)) / std::sqrt(2.0 * kPi)) < 1e-9);
  }
}

TEST_CASE("product-CF cdf matches the hypoexponential closed form") {
  // g = (0.5, 1.0, 2.0) on Exponential(1.0), Exponential(2.3), Exponential(0.7)
  HypoExpCf hy;
  hy.rates = {1.0 / 0.5, 2.3 / 1.0, 0.7 / 2.0};
  quad::Tol tol;
  tol.max_subdiv = 400;   // opaque CF: no tail rotation, so far points grind
  for (int i = 1; i <= 20; ++i) {
    const double x = 0.45 * i;
    CHECK(std::abs(cdf(hy, x, tol).value - hypoexp_cdf(hy.rates, x)) < 1e-7);
  }
}

TEST_CASE("sum of three standard uniforms hits the Irwin-Hall values") {
  ProductCf ih;
  ih.parts = {Distribution::uniform(0, 1), Distribution::uniform(0, 1),
              Distribution::uniform(0, 1)};
  CHECK(std::abs(cdf(ih, 1.5).value - 0.5) < 1e-8);
  CHECK(std::abs(cdf(ih, 1.0).value - 1.0 / 6.0) < 1e-8);
}

TEST_CASE("sampled empirical CDF stays inside the KS 99 percent band") {
  const double band = 1.628 / std::sqrt(1e5);   // ~0.00515
  for (const auto& d :
       {Distribution::gamma(2.5, 0.8),
        Distribution::mixture({{0.35, Distribution::normal(-2.0, 0.6)},
                               {0.65, Distribution::laplace(1.5, 0.7)}})}) {
    auto xs = d.sample(2024, 100000);
    std::sort(xs.begin(), xs.end());
    for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const double xq = xs[static_cast<std::size_t>(p * 1e5)];
      const double emp =
          static_cast<double>(std::upper_bound(xs.begin(), xs.end(), xq) - xs.begin()) / 1e5;
      CHECK(std::abs(emp - cdf(d, xq).value) < band);
    }
  }
}

TEST_CASE("clamping keeps values in range and preserves the raw integral") {
  const auto lo = cdf(Distribution::normal(0, 1), -10.0);
  CHECK(lo.value >= 0.0);
  CHECK(lo.value <= 1.0);
  CHECK(lo.value == std::clamp(lo.raw, 0.0, 1.0));
  CHECK(std::abs(lo.raw) < 1e-9);
  const auto hi = cdf(Distribution::normal(0, 1), 10.0);
  CHECK(hi.value == std::clamp(hi.raw, 0.0, 1.0));
  CHECK(std::abs(hi.raw - 1.0) < 1e-9);
  const auto tail = pdf(Distribution::normal(0, 1), 9.0);
  CHECK(tail.value >= 0.0);
  CHECK(tail.value == std::max(tail.raw, 0.0));
}

TEST_CASE("inversion reports diagnostics and validates input") {
  const auto r = cdf(Distribution::exponential(1.0), 0.7);
  CHECK(r.subdivisions > 0);
  CHECK(r.batch_calls > 0);
  CHECK(r.error >= 0.0);
  CHECK(r.error < 1e-8);
  CHECK_THROWS_AS((void)cdf(Distribution::normal(0, 1),
                            std::numeric_limits<double>::quiet_NaN()),
                  InvalidInput);

  // A lattice law (atoms at +-0.7) has no integrable inversion; the engine
  // must fail loudly with the partial value attached.
  FnCf atoms([](double t) { return cplx(std::cos(0.7 * t), 0.0); });
  quad::Tol tight;
  tight.max_subdiv = 40;
  try {
    (void)cdf(atoms, 0.2, tight);
    CHECK(false);
  } catch (const ToleranceNotMet& e) {
    CHECK(e.values.size() == 1);
    CHECK(std::isfinite(e.values[0]));
  }

  // Non-finite CF values surface as a diagnosed integrand failure.
  FnCf bad([](double t) {
    return t > 5.0 ? cplx(std::numeric_limits<double>::quiet_NaN(), 0.0)
                   : std::exp(cplx(-0.5 * t * t, 0.0));
  });
  CHECK_THROWS_AS((void)cdf(bad, 0.3), NonFiniteIntegrand);
}

TEST_CASE("distribution overload agrees with the generic provider path") {
  const auto d = Distribution::mixture(
      {{0.3, Distribution::laplace(-1.0, 0.7)}, {0.7, Distribution::gamma(2.0, 0.5)}});
  struct Wrap : CfProvider {
    const Distribution* d;
    void cf(std::span<const double> t, std::span<cplx> out) const override { d->cf(t, out); }
  } w;
  w.d = &d;
  // The opaque path sees only real-axis values of this slowly decaying CF, so
  // it gets a looser budget; the overload's tail rotation must agree with it.
  quad::Tol loose;
  loose.abs = 1e-7;
  loose.rel = 1e-7;
  loose.max_subdiv = 400;
  for (double x : {-1.5, -0.2, 0.4, 1.3, 3.0}) {
    CHECK(std::abs(cdf(d, x).value - cdf(w, x, loose).value) < 5e-7);
  }
}
