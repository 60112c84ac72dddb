#include "cfcc/gil_pelaez.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cfcc/errors.hpp"
#include "inversion_core.hpp"

namespace cfcc {
namespace {

constexpr double kPi = 3.141592653589793238462643383279503;

void check_x(double x) {
  if (!std::isfinite(x)) throw InvalidInput("inversion: x must be finite");
}

// Direct mapped-half-line integral for an opaque CF provider: only the real
// axis is available, so no tail rotation is possible here.
quad::QuadratureResult provider_integral(const CfProvider& phi, double x,
                                         bool density, const quad::Tol& tol) {
  const auto breaks = quad::periodic_aware_partition(std::abs(x), 1.0);
  std::vector<cplx> buf;
  auto f = [&](std::span<const double> ts, std::span<double> out) {
    buf.resize(ts.size());
    phi.cf(ts, buf);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const double t = ts[i];
      const cplx ph(std::cos(t * x), -std::sin(t * x));
      out[i] = density ? std::real(ph * buf[i]) : std::imag(ph * buf[i]) / t;
    }
  };
  return quad::integrate_semi_infinite(f, 1, tol, breaks);
}

InversionResult pack_cdf(double integral, double err, int sub, int bc) {
  InversionResult r;
  r.raw = 0.5 - integral / kPi;
  r.value = std::clamp(r.raw, 0.0, 1.0);
  r.error = err / kPi;
  r.subdivisions = sub;
  r.batch_calls = bc;
  return r;
}

InversionResult pack_pdf(double integral, double err, int sub, int bc) {
  InversionResult r;
  r.raw = integral / kPi;
  r.value = std::max(r.raw, 0.0);
  r.error = err / kPi;
  r.subdivisions = sub;
  r.batch_calls = bc;
  return r;
}

}  // namespace

InversionResult cdf(const CfProvider& phi, double x, const quad::Tol& tol) {
  check_x(x);
  const auto r = provider_integral(phi, x, false, tol);
  return pack_cdf(r.values[0], r.error, r.subdivisions, r.batch_calls);
}

InversionResult pdf(const CfProvider& phi, double x, const quad::Tol& tol) {
  check_x(x);
  const auto r = provider_integral(phi, x, true, tol);
  return pack_pdf(r.values[0], r.error, r.subdivisions, r.batch_calls);
}

InversionResult cdf(const Distribution& d, double x, const quad::Tol& tol) {
  check_x(x);
  const detail::Factor f{&d, 1.0};
  const auto r = detail::invert_product({&f, 1}, -x, tol, {});
  return pack_cdf(r.ibeta, r.error, r.subdivisions, r.batch_calls);
}

InversionResult pdf(const Distribution& d, double x, const quad::Tol& tol) {
  check_x(x);
  detail::CoreOptions o;
  o.density = true;
  const detail::Factor f{&d, 1.0};
  const auto r = detail::invert_product({&f, 1}, -x, tol, o);
  return pack_pdf(r.idens, r.error, r.subdivisions, r.batch_calls);
}

}  // namespace cfcc
