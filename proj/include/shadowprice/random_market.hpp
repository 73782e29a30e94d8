#pragma once

#include <cstdint>
#include <random>

#include "shadowprice/market.hpp"

namespace shadowprice {

/// Shape of randomly drawn markets. Mid prices are built as martingales under
/// a random equivalent measure, so every draw is free of arbitrage for any
/// spread.
struct RandomMarketOptions {
  int min_horizon = 1;
  int max_horizon = 4;
  std::size_t min_assets = 1;
  std::size_t max_assets = 2;
  std::size_t max_children = 3;
  std::size_t max_terminal_atoms = 81;
  double max_spread = 0.3;
  double pinch_probability = 0.1;      // chance that a single atom has bid == ask
  double consumption_probability = 0.5; // chance of utility at every time instead of terminal wealth only
  int consumption_max_horizon = 4;     // intermediate utility only when T <= this
};

class RandomMarketGenerator {
 public:
  explicit RandomMarketGenerator(std::uint64_t seed, RandomMarketOptions options = {});

  MarketSpec market();
  ScenarioTree tree(int horizon);
  UtilityFunction utility_family();

  /// Undiscounted copy of `market`: prices multiplied by a random increasing
  /// bank account, utilities kept as they are.
  MarketSpec with_numeraire(const MarketSpec& market);

  /// Same market with the spread widened at every atom.
  MarketSpec widened(const MarketSpec& market, double max_extra = 0.2);

  /// Random admissible pair: bounded trades, consumption at t < T inside the
  /// domain, terminal consumption from liquidation.
  PortfolioConsumptionPair competitor(const MarketSpec& market, double max_trade = 0.5);

  std::mt19937_64& engine() { return rng_; }
  double uniform(double lo, double hi);

 private:
  std::mt19937_64 rng_;
  RandomMarketOptions options_;
};

}  // namespace shadowprice
