#include <cctype>
#include <charconv>
#include <string>
#include <utility>
#include <vector>

#include "cfcc/distribution.hpp"
#include "cfcc/errors.hpp"

namespace cfcc {

namespace {

struct Parser {
  std::string_view s;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("distribution spec: " + what + " at position " +
                     std::to_string(pos) + " in \"" + std::string(s) + "\"");
  }

  void skip() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }

  bool eat(char c) {
    skip();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!eat(c)) fail(std::string("expected '") + c + "'");
  }

  double number() {
    skip();
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + s.size(), v);
    if (ec != std::errc{}) fail("expected a number");
    pos = static_cast<std::size_t>(p - s.data());
    return v;
  }

  std::string ident() {
    skip();
    std::string out;
    while (pos < s.size() && std::isalpha(static_cast<unsigned char>(s[pos])))
      out.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(s[pos++]))));
    if (out.empty()) fail("expected a family name");
    return out;
  }

  Distribution spec(bool allow_mixture) {
    std::string name = ident();
    if (name == "mix" || name == "mixture") {
      if (!allow_mixture) fail("mixtures may not be nested");
      expect('(');
      std::vector<std::pair<double, Distribution>> parts;
      while (true) {
        double w = number();
        expect('*');
        parts.emplace_back(w, spec(false));
        if (!eat('+')) break;
      }
      expect(')');
      return Distribution::mixture(std::move(parts));
    }
    expect('(');
    double p1 = number();
    if (name == "exponential") {
      expect(')');
      return Distribution::exponential(p1);
    }
    expect(',');
    double p2 = number();
    expect(')');
    if (name == "normal") return Distribution::normal(p1, p2);
    if (name == "uniform") return Distribution::uniform(p1, p2);
    if (name == "gamma") return Distribution::gamma(p1, p2);
    if (name == "laplace") return Distribution::laplace(p1, p2);
    if (name == "cauchy") return Distribution::cauchy(p1, p2);
    fail("unknown family \"" + name + "\"");
  }
};

}  // namespace

Distribution parse_distribution(std::string_view text) {
  Parser p{text};
  Distribution d = p.spec(true);
  p.skip();
  if (p.pos != text.size()) p.fail("trailing characters");
  return d;
}

}  // namespace cfcc
