#include "shadowprice/utility.hpp"

#include <cmath>
#include <string>

#include "shadowprice/error.hpp"

namespace shadowprice {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

std::string_view to_string(UtilityKind kind) {
  switch (kind) {
    case UtilityKind::log: return "log";
    case UtilityKind::power: return "power";
    case UtilityKind::exponential: return "exponential";
    case UtilityKind::terminal_wealth_indicator: return "terminal_wealth_indicator";
    case UtilityKind::affine_zero: return "affine_zero";
  }
  return "unknown";
}

UtilityKind utility_kind_from_string(std::string_view name) {
  if (name == "log") return UtilityKind::log;
  if (name == "power") return UtilityKind::power;
  if (name == "exponential") return UtilityKind::exponential;
  if (name == "terminal_wealth_indicator") return UtilityKind::terminal_wealth_indicator;
  if (name == "affine_zero") return UtilityKind::affine_zero;
  throw Error(ErrorCode::ParseError, "unknown utility kind '" + std::string(name) + "'");
}

double Interval::distance(double x) const {
  if (empty()) return kInf;
  if (x < lo) return lo - x;
  if (x > hi) return x - hi;
  return 0.0;
}

double UtilityFunction::domain_lower() const {
  return kind == UtilityKind::exponential ? -kInf : loc;
}

bool UtilityFunction::domain_closed() const {
  switch (kind) {
    case UtilityKind::affine_zero:
    case UtilityKind::terminal_wealth_indicator:
      return true;
    case UtilityKind::power:
      return p < 1.0;
    default:
      return false;
  }
}

bool UtilityFunction::in_domain(double x) const {
  if (std::isnan(x)) return false;
  const double lo = domain_lower();
  return domain_closed() ? x >= lo : x > lo;
}

bool UtilityFunction::strictly_increasing() const { return !is_kinked(); }

double UtilityFunction::value(double x) const {
  if (!in_domain(x)) return -kInf;
  const double y = scale * (x - loc);
  double base = 0.0;
  switch (kind) {
    case UtilityKind::log: base = std::log(y); break;
    case UtilityKind::power: base = std::pow(y, 1.0 - p) / (1.0 - p); break;
    case UtilityKind::exponential: base = -std::exp(-p * y) / p; break;
    case UtilityKind::terminal_wealth_indicator:
    case UtilityKind::affine_zero: base = 0.0; break;
  }
  return weight * base + shift;
}

double UtilityFunction::derivative(double x) const {
  const double y = scale * (x - loc);
  switch (kind) {
    case UtilityKind::log: return weight * scale / y;
    case UtilityKind::power: return weight * scale * std::pow(y, -p);
    case UtilityKind::exponential: return weight * scale * std::exp(-p * y);
    case UtilityKind::terminal_wealth_indicator:
    case UtilityKind::affine_zero: return 0.0;
  }
  return 0.0;
}

double UtilityFunction::second_derivative(double x) const {
  const double y = scale * (x - loc);
  switch (kind) {
    case UtilityKind::log: return -weight * scale * scale / (y * y);
    case UtilityKind::power: return -weight * scale * scale * p * std::pow(y, -p - 1.0);
    case UtilityKind::exponential: return -weight * scale * scale * p * std::exp(-p * y);
    case UtilityKind::terminal_wealth_indicator:
    case UtilityKind::affine_zero: return 0.0;
  }
  return 0.0;
}

Interval UtilityFunction::supergradient(double x, double margin) const {
  const double lo = domain_lower();
  if (domain_closed() && std::abs(x - lo) <= margin * std::max(1.0, std::abs(lo))) {
    // Left edge of a closed domain: everything above the right derivative.
    if (is_kinked()) return {0.0, kInf};
    return Interval::empty_set();  // power with p < 1 has u'(lo+) = +inf
  }
  if (!in_domain(x)) return Interval::empty_set();
  const double g = derivative(x);
  return {g, g};
}

UtilityFunction UtilityFunction::rescaled(double factor) const {
  UtilityFunction out = *this;
  out.scale = scale * factor;
  out.loc = loc / factor;
  return out;
}

void UtilityFunction::validate() const {
  const auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidMarket, why); };
  if (!(weight > 0.0) || !std::isfinite(weight)) fail("utility weight must be positive");
  if (!(scale > 0.0) || !std::isfinite(scale)) fail("utility scale must be positive");
  if (!std::isfinite(loc) || !std::isfinite(shift)) fail("utility loc/shift must be finite");
  switch (kind) {
    case UtilityKind::power:
      if (!(p > 0.0) || p == 1.0 || !std::isfinite(p)) fail("power utility needs p > 0, p != 1");
      break;
    case UtilityKind::exponential:
      if (!(p > 0.0) || !std::isfinite(p)) fail("exponential utility needs p > 0");
      break;
    case UtilityKind::terminal_wealth_indicator:
      if (loc != 0.0) fail("terminal_wealth_indicator has its domain edge at 0");
      break;
    default:
      break;
  }
}

UtilityProcess::UtilityProcess(const ScenarioTree& tree, const UtilityFunction& fill) {
  fns_.resize(tree.horizon() + 1);
  for (int t = 0; t <= tree.horizon(); ++t) fns_[t].assign(tree.atoms(t), fill);
}

UtilityProcess UtilityProcess::terminal_wealth(const ScenarioTree& tree, const UtilityFunction& terminal) {
  UtilityProcess u(tree, UtilityFunction::terminal_wealth_indicator());
  const int T = tree.horizon();
  for (std::size_t j = 0; j < tree.atoms(T); ++j) u(T, j) = terminal;
  return u;
}

UtilityProcess UtilityProcess::discounted(const ScenarioTree& tree, const UtilityFunction& base,
                                          double discount) {
  UtilityProcess u(tree, base);
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) u(t, j).weight = base.weight * std::pow(discount, t);
  }
  return u;
}

bool UtilityProcess::conforms(const ScenarioTree& tree) const {
  if (horizon() != tree.horizon()) return false;
  for (int t = 0; t <= tree.horizon(); ++t) {
    if (fns_[t].size() != tree.atoms(t)) return false;
  }
  return true;
}

}  // namespace shadowprice
