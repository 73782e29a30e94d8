#pragma once

#include <string_view>
#include <vector>

#include "shadowprice/convex_program.hpp"

namespace shadowprice {

/// What pinned the shadow price at an atom.
enum class Provenance {
  forced_ask,  // purchase executed, price sits at the ask
  forced_bid,  // sale executed, price sits at the bid
  interior,    // no trade; fixed by the multiplier ratio alone
  pinched,     // bid == ask
};

std::string_view to_string(Provenance p);

struct ShadowPrice {
  AdaptedProcess price;                       // dim d
  std::vector<std::vector<Provenance>> provenance;  // [t][j * d + i]
  Eigen::VectorXd nu;                         // carried over unchanged
  Eigen::MatrixXd mu;
  Eigen::VectorXd lambda_buy;                 // identically zero in the frictionless problem
  Eigen::VectorXd lambda_sell;
  bool unique = true;                         // false when the duals were degenerate
  double max_overshoot = 0.0;                 // largest distance of the raw ratio outside [bid, ask]

  Provenance provenance_at(int t, std::size_t j, std::size_t i) const {
    return provenance[t][j * price.dim() + i];
  }
};

inline constexpr double kShadowBoundSlack = 1e-8;
inline constexpr double kTradeActivity = 1e-7;

/// Sums of nu^k and mu^{k,i} over the terminal atoms below each atom.
struct MultiplierSums {
  AdaptedProcess nu;  // dim 1
  AdaptedProcess mu;  // dim d
};
MultiplierSums multiplier_sums(const ScenarioTree& tree, const Eigen::VectorXd& nu, const Eigen::MatrixXd& mu);

/// Shadow price S~ = (sum mu) / (sum nu) per atom.
/// Throws NonnegativeNu if some nu^k >= 0 and BoundsViolation if the ratio
/// leaves [bid, ask] by more than 1e-8; smaller overshoots are clamped.
ShadowPrice extract_shadow_price(const MarketSpec& market, const KktSolution& solution);

struct ComplementarityViolation {
  int t;
  std::size_t j;
  std::size_t i;
  Direction side;
  double gap;  // |S~ - ask| for purchases, |S~ - bid| for sales
};

struct ComplementarityReport {
  std::vector<ComplementarityViolation> violations;
  bool passed() const { return violations.empty(); }
};

/// Executed purchases (> 1e-7) must happen at S~ = ask, executed sales at
/// S~ = bid, both within 1e-7.
ComplementarityReport check_complementarity(const MarketSpec& market, const KktSolution& solution,
                                            const ShadowPrice& shadow, double threshold = kTradeActivity);

struct ImpliedLambdas {
  Eigen::VectorXd buy;   // sum mu - (sum nu) * ask
  Eigen::VectorXd sell;  // (sum nu) * bid - sum mu
};

/// Trade multipliers recomputed from (nu, mu) through the stationarity
/// equations of the trade coordinates. Throws NonnegativeNu or NegativeLambda
/// (below -1e-8).
ImpliedLambdas implied_lambdas(const MarketSpec& market, const KktSolution& solution);

}  // namespace shadowprice
