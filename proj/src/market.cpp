#include "shadowprice/market.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "shadowprice/error.hpp"

namespace shadowprice {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Share increment phi_{t+1} - phi_t seen from atom j on level t.
double share_increment(const ScenarioTree& tree, const PredictableProcess& shares, int t, std::size_t j,
                       std::size_t i) {
  const double next = shares(t + 1, j, i);
  const double prev = t == 0 ? shares(0, 0, i) : shares(t, tree.parent(t, j), i);
  return next - prev;
}

double bank_increment(const ScenarioTree& tree, const PredictableProcess& bank, int t, std::size_t j) {
  const double prev = t == 0 ? bank(0, 0) : bank(t, tree.parent(t, j));
  return bank(t + 1, j) - prev;
}

void require_pair_shape(const MarketSpec& market, const PortfolioConsumptionPair& pair) {
  if (!pair.bank.conforms(market.tree, 1) || !pair.shares.conforms(market.tree, market.assets) ||
      !pair.consumption.conforms(market.tree, 1)) {
    throw Error(ErrorCode::ShapeMismatch, "portfolio/consumption pair does not match the market");
  }
}

}  // namespace

double MarketSpec::numeraire_at(int t, std::size_t j) const {
  return has_numeraire() ? numeraire.at(tree, t, t, j) : 1.0;
}

void MarketSpec::validate() const {
  const auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidMarket, why); };
  if (!bid.conforms(tree, assets) || !ask.conforms(tree, assets)) {
    throw Error(ErrorCode::ShapeMismatch, "bid/ask processes do not match tree and asset count");
  }
  if (!utility.conforms(tree)) throw Error(ErrorCode::ShapeMismatch, "utility process does not match tree");
  if (share_endowment.size() != assets) throw Error(ErrorCode::ShapeMismatch, "share endowment size != d");
  if (!(bank_endowment >= 0.0) || !std::isfinite(bank_endowment)) fail("bank endowment must be >= 0");
  for (double e : share_endowment) {
    if (!(e >= 0.0) || !std::isfinite(e)) fail("share endowment must be >= 0");
  }
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      for (std::size_t i = 0; i < assets; ++i) {
        const double lo = bid(t, j, i);
        const double hi = ask(t, j, i);
        if (!(lo > 0.0) || !(hi >= lo) || !std::isfinite(hi)) {
          std::ostringstream os;
          os << "need ask >= bid > 0 at (t=" << t << ", j=" << j << ", i=" << i << "), got bid " << lo
             << " ask " << hi;
          fail(os.str());
        }
      }
      const UtilityFunction& u = utility(t, j);
      u.validate();
      if (t == tree.horizon() && !u.strictly_increasing()) {
        fail("terminal utility must be strictly increasing");
      }
    }
  }
  if (numeraire.dim() != 0) {
    if (!numeraire.conforms(tree, 1)) throw Error(ErrorCode::ShapeMismatch, "numeraire shape mismatch");
    for (int t = 0; t <= numeraire.last_time(); ++t) {
      for (std::size_t j = 0; j < numeraire.atoms(t); ++j) {
        if (!(numeraire(t, j) > 0.0) || !std::isfinite(numeraire(t, j))) {
          throw Error(ErrorCode::NonpositiveNumeraire, "bank account price must be strictly positive");
        }
      }
    }
  }
}

std::pair<AdaptedProcess, AdaptedProcess> from_mid_price(const ScenarioTree& tree, const AdaptedProcess& mid,
                                                         double cost_buy, double cost_sell) {
  if (!(cost_buy >= 0.0) || !std::isfinite(cost_buy)) {
    throw Error(ErrorCode::InvalidCostRate, "purchase cost rate must be >= 0");
  }
  if (!(cost_sell >= 0.0 && cost_sell < 1.0)) {
    throw Error(ErrorCode::InvalidCostRate, "sale cost rate must lie in [0, 1)");
  }
  if (mid.horizon() != tree.horizon()) throw Error(ErrorCode::ShapeMismatch, "mid price horizon mismatch");
  AdaptedProcess bid(tree, mid.dim());
  AdaptedProcess ask(tree, mid.dim());
  for (int t = 0; t <= tree.horizon(); ++t) {
    auto m = mid.level(t);
    auto b = bid.level(t);
    auto a = ask.level(t);
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (!(m[k] > 0.0)) throw Error(ErrorCode::InvalidMarket, "mid price must be strictly positive");
      b[k] = (1.0 - cost_sell) * m[k];
      a[k] = (1.0 + cost_buy) * m[k];
    }
  }
  return {std::move(bid), std::move(ask)};
}

TradeSplit split_trades(const ScenarioTree& tree, const PredictableProcess& shares) {
  if (shares.last_time() != tree.horizon() + 1) {
    throw Error(ErrorCode::ShapeMismatch, "holdings must be defined on t = 0..T+1");
  }
  const std::size_t d = shares.dim();
  TradeSplit out{PredictableProcess(tree, d), PredictableProcess(tree, d), PredictableProcess(tree, d),
                 PredictableProcess(tree, d)};
  for (std::size_t i = 0; i < d; ++i) {
    out.cumulative_buys(0, 0, i) = std::max(shares(0, 0, i), 0.0);
    out.cumulative_sells(0, 0, i) = std::max(-shares(0, 0, i), 0.0);
  }
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      for (std::size_t i = 0; i < d; ++i) {
        const double delta = share_increment(tree, shares, t, j, i);
        const double up = std::max(delta, 0.0);
        const double down = std::max(-delta, 0.0);
        out.buys(t + 1, j, i) = up;
        out.sells(t + 1, j, i) = down;
        const std::size_t prev = t == 0 ? 0 : tree.parent(t, j);
        out.cumulative_buys(t + 1, j, i) = out.cumulative_buys(t, prev, i) + up;
        out.cumulative_sells(t + 1, j, i) = out.cumulative_sells(t, prev, i) + down;
      }
    }
  }
  return out;
}

AdaptedProcess self_financing_residual(const MarketSpec& market, const PortfolioConsumptionPair& pair) {
  require_pair_shape(market, pair);
  const ScenarioTree& tree = market.tree;
  AdaptedProcess residual(tree, 1);
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      double cash = -pair.consumption(t, j);
      for (std::size_t i = 0; i < market.assets; ++i) {
        const double delta = share_increment(tree, pair.shares, t, j, i);
        cash += delta < 0.0 ? -delta * market.bid(t, j, i) : -delta * market.ask(t, j, i);
      }
      residual(t, j) = bank_increment(tree, pair.bank, t, j) * market.numeraire_at(t, j) - cash;
    }
  }
  return residual;
}

bool is_self_financing(const MarketSpec& market, const PortfolioConsumptionPair& pair, double tolerance) {
  const AdaptedProcess r = self_financing_residual(market, pair);
  for (int t = 0; t <= market.tree.horizon(); ++t) {
    for (double v : r.level(t)) {
      if (!(std::abs(v) <= tolerance)) return false;
    }
  }
  return true;
}

bool AdmissibilityReport::has(AdmissibilityViolation v) const {
  return std::find(reasons.begin(), reasons.end(), v) != reasons.end();
}

AdmissibilityReport is_admissible(const MarketSpec& market, const PortfolioConsumptionPair& pair,
                                  double tolerance) {
  AdmissibilityReport report;
  const auto flag = [&](AdmissibilityViolation v, std::string detail) {
    report.admissible = false;
    report.reasons.push_back(v);
    report.details.push_back(std::move(detail));
  };
  if (!is_self_financing(market, pair, tolerance)) {
    flag(AdmissibilityViolation::NotSelfFinancing, "self-financing residual exceeds tolerance");
  }
  bool start_ok = std::abs(pair.bank(0, 0) - market.bank_endowment) <= tolerance;
  for (std::size_t i = 0; i < market.assets; ++i) {
    start_ok = start_ok && std::abs(pair.shares(0, 0, i) - market.share_endowment[i]) <= tolerance;
  }
  if (!start_ok) flag(AdmissibilityViolation::InitialEndowmentMismatch, "(phi0_0, phi_0) != (eta0, eta)");

  const ScenarioTree& tree = market.tree;
  const int last = tree.horizon() + 1;
  bool end_ok = true;
  for (std::size_t j = 0; j < tree.atoms(tree.horizon()); ++j) {
    end_ok = end_ok && std::abs(pair.bank(last, j)) <= tolerance;
    for (std::size_t i = 0; i < market.assets; ++i) {
      end_ok = end_ok && std::abs(pair.shares(last, j, i)) <= tolerance;
    }
  }
  if (!end_ok) flag(AdmissibilityViolation::TerminalPositionNonzero, "(phi0_{T+1}, phi_{T+1}) != (0, 0)");
  return report;
}

double expected_utility(const MarketSpec& market, const AdaptedProcess& consumption) {
  if (!consumption.conforms(market.tree, 1)) {
    throw Error(ErrorCode::ShapeMismatch, "consumption does not match the tree");
  }
  double total = 0.0;
  for (int t = 0; t <= market.tree.horizon(); ++t) {
    for (std::size_t j = 0; j < market.tree.atoms(t); ++j) {
      const double u = market.utility(t, j).value(consumption(t, j));
      if (u == -kInf) return -kInf;
      total += market.tree.probability(t, j) * u;
    }
  }
  return total;
}

MarketSpec discount_normalize(const ScenarioTree& tree, const PredictableProcess& numeraire,
                              const AdaptedProcess& bid, const AdaptedProcess& ask,
                              const UtilityProcess& utility, double bank_endowment,
                              const std::vector<double>& share_endowment) {
  if (!numeraire.conforms(tree, 1)) throw Error(ErrorCode::ShapeMismatch, "numeraire shape mismatch");
  for (int t = 0; t <= numeraire.last_time(); ++t) {
    for (std::size_t j = 0; j < numeraire.atoms(t); ++j) {
      if (!(numeraire(t, j) > 0.0)) {
        throw Error(ErrorCode::NonpositiveNumeraire, "bank account price must be strictly positive");
      }
    }
  }
  MarketSpec out;
  out.tree = tree;
  out.assets = bid.dim();
  out.bid = bid;
  out.ask = ask;
  out.utility = utility;
  out.bank_endowment = bank_endowment;
  out.share_endowment = share_endowment;
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      const double s0 = numeraire.at(tree, t, t, j);
      for (std::size_t i = 0; i < out.assets; ++i) {
        out.bid(t, j, i) /= s0;
        out.ask(t, j, i) /= s0;
      }
      out.utility(t, j) = utility(t, j).rescaled(s0);
    }
  }
  out.validate();
  return out;
}

MarketSpec discount_normalize(const MarketSpec& market) {
  if (!market.has_numeraire()) return market;
  return discount_normalize(market.tree, market.numeraire, market.bid, market.ask, market.utility,
                            market.bank_endowment, market.share_endowment);
}

PortfolioConsumptionPair complete_pair(const MarketSpec& market, const PredictableProcess& shares,
                                       const AdaptedProcess& consumption) {
  const ScenarioTree& tree = market.tree;
  const int T = tree.horizon();
  PortfolioConsumptionPair pair{PredictableProcess(tree, 1), shares, consumption};
  if (!pair.shares.conforms(tree, market.assets) || !pair.consumption.conforms(tree, 1)) {
    throw Error(ErrorCode::ShapeMismatch, "holdings/consumption do not match the market");
  }
  for (std::size_t i = 0; i < market.assets; ++i) pair.shares(0, 0, i) = market.share_endowment[i];
  for (std::size_t j = 0; j < tree.atoms(T); ++j) {
    for (std::size_t i = 0; i < market.assets; ++i) pair.shares(T + 1, j, i) = 0.0;
  }
  pair.bank(0, 0) = market.bank_endowment;
  for (int t = 0; t <= T; ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      double cash = 0.0;
      for (std::size_t i = 0; i < market.assets; ++i) {
        const double delta = share_increment(tree, pair.shares, t, j, i);
        cash += delta < 0.0 ? -delta * market.bid(t, j, i) : -delta * market.ask(t, j, i);
      }
      const double prev = t == 0 ? pair.bank(0, 0) : pair.bank(t, tree.parent(t, j));
      const double s0 = market.numeraire_at(t, j);
      if (t == T) {
        pair.consumption(t, j) = prev * s0 + cash;
        pair.bank(t + 1, j) = 0.0;
      } else {
        pair.bank(t + 1, j) = prev + (cash - pair.consumption(t, j)) / s0;
      }
    }
  }
  return pair;
}

PortfolioConsumptionPair buy_and_hold_liquidation(const MarketSpec& market) {
  PredictableProcess shares(market.tree, market.assets);
  for (int t = 0; t <= market.tree.horizon(); ++t) {
    for (std::size_t j = 0; j < shares.atoms(t); ++j) {
      for (std::size_t i = 0; i < market.assets; ++i) shares(t, j, i) = market.share_endowment[i];
    }
  }
  return complete_pair(market, shares, AdaptedProcess(market.tree, 1));
}

}  // namespace shadowprice
