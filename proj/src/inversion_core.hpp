#pragma once

#include <span>
#include <vector>

#include "cfcc/chance.hpp"
#include "cfcc/distribution.hpp"
#include "cfcc/quadrature.hpp"

namespace cfcc::detail {

// One component of lambda = sum_j g_j w_j with g_j != 0.
struct Factor {
  const Distribution* d = nullptr;
  double g = 0.0;
};

struct CoreOptions {
  bool density = false;   // also integrate Re[e^{itq} Phi]
  bool alpha = false;     // also integrate the per-factor gradient channels
  bool share = true;      // reuse one CF pass across channels (debug: off)
  EvalCounters* counters = nullptr;
};

struct CoreResult {
  double ibeta = 0.0;            // Int_0^inf Im[e^{itq} Phi(t)] / t dt
  double idens = 0.0;            // Int_0^inf Re[e^{itq} Phi(t)] dt
  std::vector<double> ialpha;    // Int_0^inf Im[e^{itq} S_j(t) prod_{j'!=j} phi_j'] dt
  double error = 0.0;
  int subdivisions = 0;
  int batch_calls = 0;
};

// Semi-infinite oscillatory integrals of the product CF
// Phi(t) = prod_j phi_{w_j}(g_j t) against the phase e^{itq}. Slowly decaying
// products (every factor free of normal content) are integrated as a short
// real segment [0, T] plus analytic vertical-contour tails, one per distinct
// total oscillation frequency; everything else uses the mapped half-line with
// an oscillation-aware initial partition.
CoreResult invert_product(std::span<const Factor> factors, double q,
                          const quad::Tol& tol, const CoreOptions& opts);

}  // namespace cfcc::detail
