#pragma once

#include <complex>
#include <span>

#include "cfcc/distribution.hpp"
#include "cfcc/quadrature.hpp"

namespace cfcc {

// Anything that can evaluate a characteristic function on a frequency batch.
struct CfProvider {
  virtual ~CfProvider() = default;
  virtual void cf(std::span<const double> t, std::span<cplx> out) const = 0;
};

struct InversionResult {
  double value = 0.0;     // clamped to the valid range
  double raw = 0.0;       // unclamped integral result
  double error = 0.0;     // quadrature error estimate
  int subdivisions = 0;
  int batch_calls = 0;
};

// F(x) = 1/2 - (1/pi) Int_0^inf Im[e^{-itx} phi(t)]/t dt, clamped to [0,1].
// p(x) = (1/pi) Int_0^inf Re[e^{-itx} phi(t)] dt, clamped at 0.
// Provider overloads use the plain mapped path with the |x| oscillation
// partition; Distribution overloads switch to the contour-leg tail whenever
// the family admits it (slowly decaying CFs).
InversionResult cdf(const CfProvider& phi, double x, const quad::Tol& tol = {});
InversionResult pdf(const CfProvider& phi, double x, const quad::Tol& tol = {});
InversionResult cdf(const Distribution& d, double x, const quad::Tol& tol = {});
InversionResult pdf(const Distribution& d, double x, const quad::Tol& tol = {});

}  // namespace cfcc
