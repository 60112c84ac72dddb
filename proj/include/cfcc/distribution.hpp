#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cfcc {

using cplx = std::complex<double>;

enum class Family { normal, exponential, uniform, gamma, laplace, cauchy, mixture };

// Scalar disturbance law: one of six parametric families or a one-level
// mixture of them. Value type; validated at construction.
class Distribution {
 public:
  static Distribution normal(double mu, double sigma);
  static Distribution exponential(double rate);
  static Distribution uniform(double a, double b);
  static Distribution gamma(double k, double theta);
  static Distribution laplace(double mu, double b);
  static Distribution cauchy(double x0, double gamma);
  static Distribution mixture(std::vector<std::pair<double, Distribution>> parts);

  Family family() const { return fam_; }
  double p1() const { return a_; }
  double p2() const { return b_; }
  const std::vector<double>& weights() const { return w_; }
  const std::vector<Distribution>& components() const { return comp_; }
  // Number of elementary (non-mixture) laws inside: 1 unless mixture.
  int part_count() const { return fam_ == Family::mixture ? static_cast<int>(comp_.size()) : 1; }

  // Characteristic function phi(t) and d/dt phi(t) at a batch of real
  // frequencies. cf_prime throws NonDifferentiableCf for cauchy at t=0.
  void cf(std::span<const double> t, std::span<cplx> out) const;
  void cf_prime(std::span<const double> t, std::span<cplx> out) const;

  double mean() const;  // throws UndefinedMean for cauchy

  // Deterministic sampling; sample(seed, n) is a pure function of its inputs.
  double sample_one(std::mt19937_64& eng) const;
  std::vector<double> sample(std::uint64_t seed, std::size_t n) const;

  // ---- support data for the inversion engine ----
  // Frequency range beyond which the CF magnitude is negligible or settled
  // into its tail power law; used to size the real-axis segment.
  double cf_scale() const;
  // Oscillation-rate heuristic of exp(i t x)-type content in the CF.
  double location_scale() const;
  // True when phi continues to a bounded function on vertical rays off the
  // real axis (everything except normal content).
  bool leg_safe() const;

  // Decomposition phi(z) = sum_k coeff_k(z) * exp(i * omega_k * z) with
  // slowly varying coefficients; same frequency set for phi'.
  const std::vector<double>& edge_freqs() const { return edges_; }
  cplx edge_coeff(std::size_t k, cplx z) const;
  cplx edge_coeff_prime(std::size_t k, cplx z) const;

  std::string to_string() const;

 private:
  Distribution() = default;
  Family fam_ = Family::normal;
  double a_ = 0.0, b_ = 1.0;          // family parameters in declaration order
  std::vector<double> w_;             // mixture weights
  std::vector<Distribution> comp_;    // mixture components
  std::vector<double> edges_;         // distinct oscillation frequencies
  void build_edges();
};

// Text grammar: normal(mu,sigma), exponential(rate), uniform(a,b),
// gamma(k,theta), laplace(mu,b), cauchy(x0,gamma),
// mix(w1*spec1 + w2*spec2 + ...). Case-insensitive, whitespace ignored.
Distribution parse_distribution(std::string_view text);

}  // namespace cfcc
