#pragma once

#include <limits>
#include <string_view>
#include <vector>

#include "shadowprice/scenario_tree.hpp"

namespace shadowprice {

enum class UtilityKind {
  log,
  power,
  exponential,
  terminal_wealth_indicator,
  affine_zero,
};

std::string_view to_string(UtilityKind kind);
UtilityKind utility_kind_from_string(std::string_view name);

/// Closed interval [lo, hi] of the extended reals; empty when lo > hi.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool empty() const { return lo > hi; }
  /// Distance from x to the interval (infinite when empty).
  double distance(double x) const;
  static Interval empty_set() {
    return {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  }
};

/// One-dimensional proper concave utility
///
///   u(x) = weight * base(scale * (x - loc)) + shift
///
/// with base one of log y, y^(1-p)/(1-p), -exp(-p y)/p, or the indicator
/// 0 on [0, inf) / -inf below (affine_zero, terminal_wealth_indicator).
/// `weight` carries discount factors D_t, `scale` the numeraire substitution
/// x -> S0 x, and `loc` shifts the effective domain.
struct UtilityFunction {
  UtilityKind kind = UtilityKind::log;
  double p = 0.0;
  double weight = 1.0;
  double scale = 1.0;
  double loc = 0.0;
  double shift = 0.0;

  static UtilityFunction log_utility(double weight = 1.0) { return {UtilityKind::log, 0.0, weight}; }
  static UtilityFunction power_utility(double p, double weight = 1.0) {
    return {UtilityKind::power, p, weight};
  }
  static UtilityFunction exponential_utility(double p, double weight = 1.0) {
    return {UtilityKind::exponential, p, weight};
  }
  static UtilityFunction affine_zero(double dom_lo = 0.0) {
    return {UtilityKind::affine_zero, 0.0, 1.0, 1.0, dom_lo};
  }
  static UtilityFunction terminal_wealth_indicator() {
    return {UtilityKind::terminal_wealth_indicator};
  }

  /// Lower end of the effective domain; -inf for exponential.
  double domain_lower() const;
  /// Whether domain_lower() itself belongs to the domain.
  bool domain_closed() const;
  bool in_domain(double x) const;
  /// Strictly increasing on the domain (required at the horizon).
  bool strictly_increasing() const;
  bool is_kinked() const {
    return kind == UtilityKind::affine_zero || kind == UtilityKind::terminal_wealth_indicator;
  }

  /// u(x), -inf outside the domain.
  double value(double x) const;
  /// u'(x) on the open domain interior.
  double derivative(double x) const;
  /// u''(x) on the open domain interior (<= 0).
  double second_derivative(double x) const;
  /// Supergradient set at x. Points within `margin` of a closed domain edge
  /// are treated as lying on it.
  Interval supergradient(double x, double margin = 1e-12) const;

  /// The function x -> u(factor * x), factor > 0.
  UtilityFunction rescaled(double factor) const;

  /// Throws InvalidMarket when the parameters leave the family.
  void validate() const;

  friend bool operator==(const UtilityFunction&, const UtilityFunction&) = default;
};

/// Utility function per atom and time, u_t^j.
class UtilityProcess {
 public:
  UtilityProcess() = default;
  UtilityProcess(const ScenarioTree& tree, const UtilityFunction& fill);

  /// Terminal-wealth specification: affine_zero for t < T, `terminal` at T.
  static UtilityProcess terminal_wealth(const ScenarioTree& tree, const UtilityFunction& terminal);
  /// D_t * u with D_t = discount^t.
  static UtilityProcess discounted(const ScenarioTree& tree, const UtilityFunction& base, double discount);

  int horizon() const { return static_cast<int>(fns_.size()) - 1; }
  const UtilityFunction& operator()(int t, std::size_t j) const { return fns_[t][j]; }
  UtilityFunction& operator()(int t, std::size_t j) { return fns_[t][j]; }
  bool conforms(const ScenarioTree& tree) const;

  friend bool operator==(const UtilityProcess&, const UtilityProcess&) = default;

 private:
  std::vector<std::vector<UtilityFunction>> fns_;
};

}  // namespace shadowprice
