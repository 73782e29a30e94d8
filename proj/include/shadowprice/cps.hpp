#pragma once

#include <string>
#include <vector>

#include "shadowprice/kkt_solver.hpp"
#include "shadowprice/shadow.hpp"

namespace shadowprice {

/// Shadow price together with the equivalent measure Q~ under which it is a
/// martingale, the normaliser alpha and the density process Z~.
struct ConsistentPriceSystem {
  AdaptedProcess price;
  std::vector<double> q;  // Q~ of each terminal atom
  double alpha = 0.0;
  AdaptedProcess density; // Z~_t = E(dQ~/dP | F_t), dim 1

  /// Q~ of an arbitrary atom.
  double q_of(const ScenarioTree& tree, int t, std::size_t j) const;
};

/// Q~(F_T^k) = -nu^k / alpha with alpha = -sum nu.
ConsistentPriceSystem build_cps(const ScenarioTree& tree, const Eigen::VectorXd& nu, const AdaptedProcess& price);

struct MartingaleReport {
  double one_step = 0.0;   // max |E(Z_{t+1} S_{t+1} | F_t) - Z_t S_t|
  double multi_step = 0.0; // max |E(Z_T S_T | F_t) - Z_t S_t|
  double max() const { return std::max(one_step, multi_step); }
};

MartingaleReport check_martingale(const ScenarioTree& tree, const ConsistentPriceSystem& cps);

struct MarginalUtilityViolation {
  int t;
  std::size_t j;
  double distance;
};

struct MarginalUtilityReport {
  double max_distance = 0.0;
  std::vector<MarginalUtilityViolation> violations;
  bool passed() const { return violations.empty(); }
};

/// Z~_t must lie in (1/alpha) * du_t(c_t) at every atom (within `slack`).
MarginalUtilityReport check_marginal_utility(const MarketSpec& market, const ConsistentPriceSystem& cps,
                                             const AdaptedProcess& consumption, double alpha,
                                             double slack = 1e-8, double domain_margin = 1e-12);

/// |E_Q~(sum_t c_t) - phi0_0 - phi_0^T S~_0| for a pair that is
/// self-financing in the frictionless market at S~.
double budget_constraint(const ScenarioTree& tree, const PortfolioConsumptionPair& pair,
                         const ConsistentPriceSystem& cps);

/// Same holdings, consumption raised by the transaction costs saved when
/// trading at S~ instead of bid/ask.
PortfolioConsumptionPair lift_to_frictionless(const MarketSpec& market, const PortfolioConsumptionPair& pair,
                                              const AdaptedProcess& shadow_price);

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
  std::string detail;
};

struct ShadowCertificate {
  MarketSpec market;  // discounted market the checks ran on
  KktSolution costs_solution;
  KktSolution frictionless_solution;
  ShadowPrice shadow;
  ConsistentPriceSystem cps;
  double value_costs = 0.0;        // maximal expected utility with bid/ask
  double value_frictionless = 0.0; // maximal expected utility at S~
  std::vector<CheckResult> checks;
  bool valid = false;
  bool degenerate_duals = false;
  bool frictionless_input = false;
  std::string failed_check;

  const CheckResult* check(const std::string& name) const;
};

inline constexpr double kValueTolerance = 1e-6;
inline constexpr double kMartingaleTolerance = 1e-8;
inline constexpr double kBudgetTolerance = 1e-8;
inline constexpr double kLambdaConsistency = 1e-6;

/// Solve with costs, extract S~, re-solve frictionless at S~, build the
/// consistent price system and run every check. Solver errors propagate;
/// failed checks mark the certificate invalid.
ShadowCertificate certify(const MarketSpec& market, const SolverOptions& options = {});

struct GridSpec {
  double trade_bound = 3.0;
  double consumption_bound = 10.0;
  double coarse_step = 0.1;
  double step = 1e-4;
};

struct OracleResult {
  double value = 0.0;
  long long evaluations = 0;
  double step = 0.0;
  std::string note;
};

/// Independent optimum by nested grid search over one net trade (and one
/// consumption level where the utility is not flat) per non-terminal atom.
/// Each one-dimensional search scans a coarse grid and refines tenfold around
/// the best point down to `step`, which is exact for concave objectives up to
/// the grid resolution. Needs T <= 2, d <= 1 and at most 3 children per atom
/// (InstanceTooLarge otherwise).
OracleResult brute_force_value(const MarketSpec& market, const GridSpec& grid = {});

}  // namespace shadowprice
