#include "shadowprice/shadow.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "shadowprice/error.hpp"

namespace shadowprice {

namespace {

void require_negative_nu(const Eigen::VectorXd& nu) {
  for (Eigen::Index k = 0; k < nu.size(); ++k) {
    if (!(nu[k] < 0.0)) {
      std::ostringstream os;
      os << "nu[" << k << "] = " << nu[k] << " is not negative";
      throw Error(ErrorCode::NonnegativeNu, os.str());
    }
  }
}

}  // namespace

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::forced_ask: return "forced_ask";
    case Provenance::forced_bid: return "forced_bid";
    case Provenance::interior: return "interior";
    case Provenance::pinched: return "pinched";
  }
  return "unknown";
}

MultiplierSums multiplier_sums(const ScenarioTree& tree, const Eigen::VectorXd& nu, const Eigen::MatrixXd& mu) {
  const std::size_t d = static_cast<std::size_t>(mu.cols());
  MultiplierSums sums{AdaptedProcess(tree, 1), AdaptedProcess(tree, d)};
  const int T = tree.horizon();
  for (std::size_t k = 0; k < tree.atoms(T); ++k) {
    sums.nu(T, k) = nu[static_cast<Eigen::Index>(k)];
    for (std::size_t i = 0; i < d; ++i) sums.mu(T, k, i) = mu(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i));
  }
  for (int t = T - 1; t >= 0; --t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      const std::size_t first = tree.first_child(t, j);
      for (std::size_t c = first; c < first + tree.child_count(t, j); ++c) {
        sums.nu(t, j) += sums.nu(t + 1, c);
        for (std::size_t i = 0; i < d; ++i) sums.mu(t, j, i) += sums.mu(t + 1, c, i);
      }
    }
  }
  return sums;
}

ShadowPrice extract_shadow_price(const MarketSpec& market, const KktSolution& solution) {
  require_negative_nu(solution.nu);
  const ScenarioTree& tree = market.tree;
  const std::size_t d = market.assets;
  const ProgramLayout layout(tree, d);
  const MultiplierSums sums = multiplier_sums(tree, solution.nu, solution.mu);

  ShadowPrice shadow;
  shadow.price = AdaptedProcess(tree, d);
  shadow.provenance.resize(tree.horizon() + 1);
  shadow.nu = solution.nu;
  shadow.mu = solution.mu;
  shadow.lambda_buy = Eigen::VectorXd::Zero(solution.lambda_buy.size());
  shadow.lambda_sell = Eigen::VectorXd::Zero(solution.lambda_sell.size());
  shadow.unique = !solution.degenerate_duals;

  for (int t = 0; t <= tree.horizon(); ++t) {
    shadow.provenance[t].resize(tree.atoms(t) * d);
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      for (std::size_t i = 0; i < d; ++i) {
        const double lo = market.bid(t, j, i);
        const double hi = market.ask(t, j, i);
        double s = sums.mu(t, j, i) / sums.nu(t, j);
        if (s < lo - kShadowBoundSlack || s > hi + kShadowBoundSlack) {
          std::ostringstream os;
          os << "ratio " << s << " outside [" << lo << ", " << hi << "] at (t=" << t << ", j=" << j
             << ", i=" << i << ")";
          throw Error(ErrorCode::BoundsViolation, os.str());
        }
        shadow.max_overshoot = std::max({shadow.max_overshoot, lo - s, s - hi});
        s = std::clamp(s, lo, hi);
        shadow.price(t, j, i) = s;

        Provenance p = Provenance::interior;
        if (market.pinched(t, j, i)) {
          p = Provenance::pinched;
        } else if (solution.buy(layout, t + 1, j, i) > kTradeActivity) {
          p = Provenance::forced_ask;
        } else if (solution.sell(layout, t + 1, j, i) > kTradeActivity) {
          p = Provenance::forced_bid;
        }
        shadow.provenance[t][j * d + i] = p;
      }
    }
  }
  return shadow;
}

ComplementarityReport check_complementarity(const MarketSpec& market, const KktSolution& solution,
                                            const ShadowPrice& shadow, double threshold) {
  const ScenarioTree& tree = market.tree;
  const std::size_t d = market.assets;
  const ProgramLayout layout(tree, d);
  ComplementarityReport report;
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      for (std::size_t i = 0; i < d; ++i) {
        const double s = shadow.price(t, j, i);
        if (solution.buy(layout, t + 1, j, i) > threshold) {
          const double gap = std::abs(s - market.ask(t, j, i));
          if (gap > threshold) report.violations.push_back({t, j, i, Direction::buy, gap});
        }
        if (solution.sell(layout, t + 1, j, i) > threshold) {
          const double gap = std::abs(s - market.bid(t, j, i));
          if (gap > threshold) report.violations.push_back({t, j, i, Direction::sell, gap});
        }
      }
    }
  }
  return report;
}

ImpliedLambdas implied_lambdas(const MarketSpec& market, const KktSolution& solution) {
  require_negative_nu(solution.nu);
  const ScenarioTree& tree = market.tree;
  const std::size_t d = market.assets;
  const ProgramLayout layout(tree, d);
  const MultiplierSums sums = multiplier_sums(tree, solution.nu, solution.mu);
  const std::size_t half = layout.trade_slots() / 2;
  ImpliedLambdas out{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(half)),
                     Eigen::VectorXd::Zero(static_cast<Eigen::Index>(half))};
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      for (std::size_t i = 0; i < d; ++i) {
        const std::size_t slot = layout.trade_slot(Direction::buy, t + 1, j, i);
        const double up = sums.mu(t, j, i) - sums.nu(t, j) * market.ask(t, j, i);
        const double down = sums.nu(t, j) * market.bid(t, j, i) - sums.mu(t, j, i);
        if (up < -kShadowBoundSlack || down < -kShadowBoundSlack) {
          std::ostringstream os;
          os << "implied multiplier below zero at (t=" << t << ", j=" << j << ", i=" << i << "): buy " << up
             << ", sell " << down;
          throw Error(ErrorCode::NegativeLambda, os.str());
        }
        out.buy[static_cast<Eigen::Index>(slot)] = up;
        out.sell[static_cast<Eigen::Index>(slot)] = down;
      }
    }
  }
  return out;
}

}  // namespace shadowprice
