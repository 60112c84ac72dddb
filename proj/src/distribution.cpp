#include "cfcc/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cfcc/errors.hpp"

namespace cfcc {

namespace {

// Below this |t*(b-a)| the closed form loses its imaginary part to
// cancellation; the cubic Taylor series is exact to ~1e-21 there.
constexpr double kUniformTaylorCut = 1e-5;

void require(bool ok, const char* msg) {
  if (!ok) throw InvalidInput(msg);
}

bool finite(double v) { return std::isfinite(v); }

double u01(std::mt19937_64& eng) {
  return (static_cast<double>(eng() >> 11) + 0.5) * 0x1.0p-53;
}

// law of the positive fractional-shape gamma via Johnk's beta trick
double gamma_frac(double delta, std::mt19937_64& eng) {
  while (true) {
    double x = std::pow(u01(eng), 1.0 / delta);
    double y = std::pow(u01(eng), 1.0 / (1.0 - delta));
    if (x + y <= 1.0 && x + y > 0.0)
      return x / (x + y) * -std::log(u01(eng));
  }
}

}  // namespace

Distribution Distribution::normal(double mu, double sigma) {
  require(finite(mu) && finite(sigma) && sigma > 0.0, "normal: need finite mu, sigma > 0");
  Distribution d;
  d.fam_ = Family::normal;
  d.a_ = mu;
  d.b_ = sigma;
  d.build_edges();
  return d;
}

Distribution Distribution::exponential(double rate) {
  require(finite(rate) && rate > 0.0, "exponential: need rate > 0");
  Distribution d;
  d.fam_ = Family::exponential;
  d.a_ = rate;
  d.b_ = 0.0;
  d.build_edges();
  return d;
}

Distribution Distribution::uniform(double a, double b) {
  require(finite(a) && finite(b) && a < b, "uniform: need finite a < b");
  Distribution d;
  d.fam_ = Family::uniform;
  d.a_ = a;
  d.b_ = b;
  d.build_edges();
  return d;
}

Distribution Distribution::gamma(double k, double theta) {
  require(finite(k) && finite(theta) && k > 0.0 && theta > 0.0,
          "gamma: need k > 0, theta > 0");
  Distribution d;
  d.fam_ = Family::gamma;
  d.a_ = k;
  d.b_ = theta;
  d.build_edges();
  return d;
}

Distribution Distribution::laplace(double mu, double b) {
  require(finite(mu) && finite(b) && b > 0.0, "laplace: need finite mu, b > 0");
  Distribution d;
  d.fam_ = Family::laplace;
  d.a_ = mu;
  d.b_ = b;
  d.build_edges();
  return d;
}

Distribution Distribution::cauchy(double x0, double gamma) {
  require(finite(x0) && finite(gamma) && gamma > 0.0,
          "cauchy: need finite x0, gamma > 0");
  Distribution d;
  d.fam_ = Family::cauchy;
  d.a_ = x0;
  d.b_ = gamma;
  d.build_edges();
  return d;
}

Distribution Distribution::mixture(
    std::vector<std::pair<double, Distribution>> parts) {
  require(!parts.empty(), "mixture: need at least one component");
  double sum = 0.0;
  for (auto& [w, comp] : parts) {
    require(finite(w) && w >= 0.0, "mixture: weights must be nonnegative");
    require(comp.fam_ != Family::mixture, "mixture: components must be elementary");
    sum += w;
  }
  require(std::abs(sum - 1.0) <= 1e-12, "mixture: weights must sum to 1");
  Distribution d;
  d.fam_ = Family::mixture;
  for (auto& [w, comp] : parts) {
    d.w_.push_back(w);
    d.comp_.push_back(std::move(comp));
  }
  d.build_edges();
  return d;
}

namespace {

cplx cf_one(Family fam, double a, double b, double t) {
  switch (fam) {
    case Family::normal:
      return std::exp(-0.5 * b * b * t * t) * cplx(std::cos(a * t), std::sin(a * t));
    case Family::exponential:
      return a / cplx(a, -t);
    case Family::uniform: {
      double d = b - a;
      if (std::abs(t * d) < kUniformTaylorCut) {
        double m1 = 0.5 * (a + b);
        double m2 = (a * a + a * b + b * b) / 3.0;
        double m3 = (a * a * a + a * a * b + a * b * b + b * b * b) / 4.0;
        return cplx(1.0 - 0.5 * t * t * m2, t * m1 - t * t * t * m3 / 6.0);
      }
      cplx eb(std::cos(b * t), std::sin(b * t));
      cplx ea(std::cos(a * t), std::sin(a * t));
      return (eb - ea) / (cplx(0.0, 1.0) * t * d);
    }
    case Family::gamma:
      return std::pow(cplx(1.0, -b * t), -a);
    case Family::laplace:
      return cplx(std::cos(a * t), std::sin(a * t)) / (1.0 + b * b * t * t);
    case Family::cauchy:
      return std::exp(-b * std::abs(t)) * cplx(std::cos(a * t), std::sin(a * t));
    default:
      throw InvalidInput("cf_one on mixture");
  }
}

cplx cf_prime_one(Family fam, double a, double b, double t) {
  switch (fam) {
    case Family::normal:
      return cplx(-b * b * t, a) * cf_one(fam, a, b, t);
    case Family::exponential: {
      cplx den = cplx(a, -t);
      return cplx(0.0, a) / (den * den);
    }
    case Family::uniform: {
      double d = b - a;
      if (std::abs(t * d) < kUniformTaylorCut) {
        double m1 = 0.5 * (a + b);
        double m2 = (a * a + a * b + b * b) / 3.0;
        double m3 = (a * a * a + a * a * b + a * b * b + b * b * b) / 4.0;
        return cplx(-t * m2, m1 - 0.5 * t * t * m3);
      }
      cplx eb(std::cos(b * t), std::sin(b * t));
      cplx ea(std::cos(a * t), std::sin(a * t));
      cplx i(0.0, 1.0);
      return (i * b * eb - i * a * ea) / (i * t * d) - (eb - ea) / (i * t * t * d);
    }
    case Family::gamma:
      return cplx(0.0, a * b) * std::pow(cplx(1.0, -b * t), -(a + 1.0));
    case Family::laplace: {
      double den = 1.0 + b * b * t * t;
      cplx e(std::cos(a * t), std::sin(a * t));
      return e * (cplx(0.0, a) * den - 2.0 * b * b * t) / (den * den);
    }
    case Family::cauchy: {
      if (t == 0.0)
        throw NonDifferentiableCf("cauchy CF is not differentiable at t = 0");
      double s = t > 0.0 ? 1.0 : -1.0;
      return cplx(-b * s, a) * cf_one(fam, a, b, t);
    }
    default:
      throw InvalidInput("cf_prime_one on mixture");
  }
}

}  // namespace

void Distribution::cf(std::span<const double> t, std::span<cplx> out) const {
  require(out.size() == t.size(), "cf: output size mismatch");
  for (double v : t)
    if (!finite(v)) throw InvalidInput("cf: non-finite frequency");
  if (fam_ != Family::mixture) {
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = cf_one(fam_, a_, b_, t[i]);
    return;
  }
  std::fill(out.begin(), out.end(), cplx(0.0, 0.0));
  for (std::size_t r = 0; r < comp_.size(); ++r) {
    const Distribution& c = comp_[r];
    for (std::size_t i = 0; i < t.size(); ++i)
      out[i] += w_[r] * cf_one(c.fam_, c.a_, c.b_, t[i]);
  }
}

void Distribution::cf_prime(std::span<const double> t, std::span<cplx> out) const {
  require(out.size() == t.size(), "cf_prime: output size mismatch");
  for (double v : t)
    if (!finite(v)) throw InvalidInput("cf_prime: non-finite frequency");
  if (fam_ != Family::mixture) {
    for (std::size_t i = 0; i < t.size(); ++i)
      out[i] = cf_prime_one(fam_, a_, b_, t[i]);
    return;
  }
  std::fill(out.begin(), out.end(), cplx(0.0, 0.0));
  for (std::size_t r = 0; r < comp_.size(); ++r) {
    const Distribution& c = comp_[r];
    for (std::size_t i = 0; i < t.size(); ++i)
      out[i] += w_[r] * cf_prime_one(c.fam_, c.a_, c.b_, t[i]);
  }
}

double Distribution::mean() const {
  switch (fam_) {
    case Family::normal: return a_;
    case Family::exponential: return 1.0 / a_;
    case Family::uniform: return 0.5 * (a_ + b_);
    case Family::gamma: return a_ * b_;
    case Family::laplace: return a_;
    case Family::cauchy:
      throw UndefinedMean("cauchy distribution has no mean");
    case Family::mixture: {
      double m = 0.0;
      for (std::size_t r = 0; r < comp_.size(); ++r) m += w_[r] * comp_[r].mean();
      return m;
    }
  }
  throw InvalidInput("mean: bad family");
}

double Distribution::sample_one(std::mt19937_64& eng) const {
  switch (fam_) {
    case Family::normal: {
      double u1 = u01(eng), u2 = u01(eng);
      return a_ + b_ * std::sqrt(-2.0 * std::log(u1)) *
                      std::cos(2.0 * std::numbers::pi * u2);
    }
    case Family::exponential:
      return -std::log(u01(eng)) / a_;
    case Family::uniform:
      return a_ + (b_ - a_) * u01(eng);
    case Family::gamma: {
      double n = std::floor(a_);
      double delta = a_ - n;
      double s = 0.0;
      for (int i = 0; i < static_cast<int>(n); ++i) s += -std::log(u01(eng));
      if (delta > 0.0) s += gamma_frac(delta, eng);
      return b_ * s;
    }
    case Family::laplace: {
      double v = u01(eng) - 0.5;
      double s = v >= 0.0 ? 1.0 : -1.0;
      return a_ - b_ * s * std::log(1.0 - 2.0 * std::abs(v));
    }
    case Family::cauchy:
      return a_ + b_ * std::tan(std::numbers::pi * (u01(eng) - 0.5));
    case Family::mixture: {
      double u = u01(eng);
      double acc = 0.0;
      for (std::size_t r = 0; r < comp_.size(); ++r) {
        acc += w_[r];
        if (u <= acc || r + 1 == comp_.size()) return comp_[r].sample_one(eng);
      }
      return comp_.back().sample_one(eng);
    }
  }
  throw InvalidInput("sample_one: bad family");
}

std::vector<double> Distribution::sample(std::uint64_t seed, std::size_t n) const {
  require(n >= 1, "sample: need n >= 1");
  std::mt19937_64 eng(seed);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = sample_one(eng);
  return out;
}

double Distribution::cf_scale() const {
  switch (fam_) {
    case Family::normal: return 1.2 / b_;
    case Family::exponential: return a_;
    case Family::uniform: return 4.0 / (b_ - a_);
    case Family::gamma: {
      // |phi| = (1 + theta^2 t^2)^{-k/2} = 1/2
      double e = std::min(2.0 / a_ * std::log(2.0), 60.0);
      return std::sqrt(std::expm1(e)) / b_;
    }
    case Family::laplace: return 1.0 / b_;
    case Family::cauchy: return 1.0 / b_;
    case Family::mixture: {
      double s = 0.0;
      for (const auto& c : comp_) s = std::max(s, c.cf_scale());
      return s;
    }
  }
  throw InvalidInput("cf_scale: bad family");
}

double Distribution::location_scale() const {
  switch (fam_) {
    case Family::normal: return std::abs(a_);
    case Family::exponential: return 1.0 / a_;
    case Family::uniform: return std::max(std::abs(a_), std::abs(b_));
    case Family::gamma: return a_ * b_;
    case Family::laplace: return std::abs(a_);
    case Family::cauchy: return std::abs(a_);
    case Family::mixture: {
      double s = 0.0;
      for (const auto& c : comp_) s = std::max(s, c.location_scale());
      return s;
    }
  }
  throw InvalidInput("location_scale: bad family");
}

bool Distribution::leg_safe() const {
  switch (fam_) {
    case Family::normal: return false;   // |phi| blows up on vertical rays
    case Family::mixture:
      return std::all_of(comp_.begin(), comp_.end(),
                         [](const Distribution& c) { return c.leg_safe(); });
    default: return true;
  }
}

void Distribution::build_edges() {
  edges_.clear();
  auto add = [&](double w) {
    for (double e : edges_)
      if (std::abs(e - w) <= 1e-12 * (1.0 + std::abs(w))) return;
    edges_.push_back(w);
  };
  switch (fam_) {
    case Family::normal: add(a_); break;
    case Family::exponential: add(0.0); break;
    case Family::uniform: add(a_); add(b_); break;
    case Family::gamma: add(0.0); break;
    case Family::laplace: add(a_); break;
    case Family::cauchy: add(a_); break;
    case Family::mixture:
      for (const auto& c : comp_)
        for (double e : c.edges_) add(e);
      break;
  }
  std::sort(edges_.begin(), edges_.end());
}

namespace {

// coefficient of e^{i*omega*z} in phi (value) or phi' (prime) for one
// elementary law; z may be complex, off the imaginary axis.
cplx edge_term(Family fam, double a, double b, double omega, cplx z, bool prime) {
  const cplx i(0.0, 1.0);
  switch (fam) {
    case Family::normal: {
      cplx g = std::exp(-0.5 * b * b * z * z);
      return prime ? (i * a - b * b * z) * g : g;
    }
    case Family::exponential: {
      cplx den = a - i * z;
      return prime ? i * a / (den * den) : a / den;
    }
    case Family::uniform: {
      double d = b - a;
      bool upper = std::abs(omega - b) <= std::abs(omega - a);
      if (!prime) {
        cplx c = 1.0 / (i * z * d);
        return upper ? c : -c;
      }
      cplx c = omega / (z * d) + i / (z * z * d);
      return upper ? c : -c;   // omega is b or a respectively
    }
    case Family::gamma: {
      cplx base = cplx(1.0, 0.0) - i * b * z;
      return prime ? i * a * b * std::pow(base, -(a + 1.0))
                   : std::pow(base, -a);
    }
    case Family::laplace: {
      cplx den = 1.0 + b * b * z * z;
      return prime ? (i * a * den - 2.0 * b * b * z) / (den * den) : 1.0 / den;
    }
    case Family::cauchy: {
      double s = z.real() >= 0.0 ? 1.0 : -1.0;   // continuation per real ray
      cplx g = std::exp(-b * s * z);
      return prime ? (i * a - b * s) * g : g;
    }
    default:
      throw InvalidInput("edge_term on mixture");
  }
}

}  // namespace

cplx Distribution::edge_coeff(std::size_t k, cplx z) const {
  double omega = edges_.at(k);
  if (fam_ != Family::mixture) return edge_term(fam_, a_, b_, omega, z, false);
  cplx sum(0.0, 0.0);
  for (std::size_t r = 0; r < comp_.size(); ++r) {
    const Distribution& c = comp_[r];
    for (double e : c.edges_)
      if (std::abs(e - omega) <= 1e-12 * (1.0 + std::abs(omega)))
        sum += w_[r] * edge_term(c.fam_, c.a_, c.b_, e, z, false);
  }
  return sum;
}

cplx Distribution::edge_coeff_prime(std::size_t k, cplx z) const {
  double omega = edges_.at(k);
  if (fam_ != Family::mixture) return edge_term(fam_, a_, b_, omega, z, true);
  cplx sum(0.0, 0.0);
  for (std::size_t r = 0; r < comp_.size(); ++r) {
    const Distribution& c = comp_[r];
    for (double e : c.edges_)
      if (std::abs(e - omega) <= 1e-12 * (1.0 + std::abs(omega)))
        sum += w_[r] * edge_term(c.fam_, c.a_, c.b_, e, z, true);
  }
  return sum;
}

std::string Distribution::to_string() const {
  std::ostringstream os;
  os.precision(17);
  switch (fam_) {
    case Family::normal: os << "normal(" << a_ << "," << b_ << ")"; break;
    case Family::exponential: os << "exponential(" << a_ << ")"; break;
    case Family::uniform: os << "uniform(" << a_ << "," << b_ << ")"; break;
    case Family::gamma: os << "gamma(" << a_ << "," << b_ << ")"; break;
    case Family::laplace: os << "laplace(" << a_ << "," << b_ << ")"; break;
    case Family::cauchy: os << "cauchy(" << a_ << "," << b_ << ")"; break;
    case Family::mixture: {
      os << "mix(";
      for (std::size_t r = 0; r < comp_.size(); ++r) {
        if (r) os << "+";
        os << w_[r] << "*" << comp_[r].to_string();
      }
      os << ")";
      break;
    }
  }
  return os.str();
}

}  // namespace cfcc
