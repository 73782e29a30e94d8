#pragma once

#include <string>
#include <utility>
#include <vector>

#include "shadowprice/scenario_tree.hpp"
#include "shadowprice/utility.hpp"

namespace shadowprice {

/// Bid/ask market on a scenario tree with a riskless bank account.
///
/// Prices are quoted in units of the bank account when `numeraire` is empty
/// (S0 = 1). A non-empty numeraire holds an undiscounted, strictly positive
/// predictable bank-account price; use discount_normalize() to remove it.
struct MarketSpec {
  ScenarioTree tree;
  std::size_t assets = 0;
  AdaptedProcess bid;
  AdaptedProcess ask;
  double bank_endowment = 0.0;
  std::vector<double> share_endowment;
  UtilityProcess utility;
  PredictableProcess numeraire;

  bool has_numeraire() const { return numeraire.dim() == 1; }
  /// Bank-account price S0_t seen from atom j on level t (1 without numeraire).
  double numeraire_at(int t, std::size_t j) const;
  /// True where bid == ask for asset i at (t, j).
  bool pinched(int t, std::size_t j, std::size_t i) const { return bid(t, j, i) == ask(t, j, i); }

  /// Throws InvalidMarket / ShapeMismatch / NonpositiveNumeraire.
  void validate() const;
};

/// Portfolio (bank units phi0, share holdings phi) plus consumption c.
struct PortfolioConsumptionPair {
  PredictableProcess bank;    // phi^0, dim 1
  PredictableProcess shares;  // phi, dim d
  AdaptedProcess consumption; // c, dim 1
};

/// Bid and ask from a mid price and proportional cost rates.
std::pair<AdaptedProcess, AdaptedProcess> from_mid_price(const ScenarioTree& tree, const AdaptedProcess& mid,
                                                         double cost_buy, double cost_sell);

struct TradeSplit {
  PredictableProcess buys;            // (d phi)^+, time 0 entry unused (zero)
  PredictableProcess sells;           // (d phi)^-
  PredictableProcess cumulative_buys; // phi_0^+ + sum of buys
  PredictableProcess cumulative_sells;
};

/// Splits share holdings into purchase and sale increments.
TradeSplit split_trades(const ScenarioTree& tree, const PredictableProcess& shares);

/// Self-financing residual per atom and time t = 0..T. Zero iff the bank
/// account changes exactly by sale proceeds minus purchases minus consumption.
AdaptedProcess self_financing_residual(const MarketSpec& market, const PortfolioConsumptionPair& pair);

inline constexpr double kSelfFinancingTolerance = 1e-9;

bool is_self_financing(const MarketSpec& market, const PortfolioConsumptionPair& pair,
                       double tolerance = kSelfFinancingTolerance);

enum class AdmissibilityViolation {
  NotSelfFinancing,
  InitialEndowmentMismatch,
  TerminalPositionNonzero,
};

struct AdmissibilityReport {
  bool admissible = true;
  std::vector<AdmissibilityViolation> reasons;
  std::vector<std::string> details;

  bool has(AdmissibilityViolation v) const;
};

AdmissibilityReport is_admissible(const MarketSpec& market, const PortfolioConsumptionPair& pair,
                                  double tolerance = kSelfFinancingTolerance);

/// E(sum_t u_t(c_t)); -inf if any consumption leaves its utility domain.
double expected_utility(const MarketSpec& market, const AdaptedProcess& consumption);

/// Discounted market from undiscounted bid/ask and utility: prices are divided
/// by S0 and u_t(x) becomes u_t(S0_t x).
MarketSpec discount_normalize(const ScenarioTree& tree, const PredictableProcess& numeraire,
                              const AdaptedProcess& bid, const AdaptedProcess& ask,
                              const UtilityProcess& utility, double bank_endowment,
                              const std::vector<double>& share_endowment);

/// Same, taking the numeraire stored in `market`. Identity if it has none.
MarketSpec discount_normalize(const MarketSpec& market);

/// Pair that never trades and consumes its liquidation wealth at T.
PortfolioConsumptionPair buy_and_hold_liquidation(const MarketSpec& market);

/// Completes a pair from share holdings and consumption at t < T: the bank
/// account follows the self-financing identity, phi_{T+1} is set to zero and
/// c_T consumes everything that is left.
PortfolioConsumptionPair complete_pair(const MarketSpec& market, const PredictableProcess& shares,
                                       const AdaptedProcess& consumption);

}  // namespace shadowprice
