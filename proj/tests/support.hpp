#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "shadowprice/market.hpp"

namespace testing {

using namespace shadowprice;

inline ScenarioTree binomial_tree(double p_up = 0.5) {
  return ScenarioTree::build({{{0, 1.0}}, {{0, p_up}, {0, 1.0 - p_up}}});
}

/// One-period binomial market: bid/ask at the root, S_1 in {up, down} with no
/// spread, cash endowment only, log utility of terminal wealth.
inline MarketSpec binomial_market(double bid0, double ask0, double up = 1.5, double down = 0.5,
                                  double eta0 = 1.0) {
  MarketSpec m;
  m.tree = binomial_tree();
  m.assets = 1;
  m.bid = AdaptedProcess(m.tree, 1);
  m.ask = AdaptedProcess(m.tree, 1);
  m.bid(0, 0) = bid0;
  m.ask(0, 0) = ask0;
  m.bid(1, 0) = m.ask(1, 0) = up;
  m.bid(1, 1) = m.ask(1, 1) = down;
  m.bank_endowment = eta0;
  m.share_endowment = {0.0};
  m.utility = UtilityProcess::terminal_wealth(m.tree, UtilityFunction::log_utility());
  return m;
}

inline MarketSpec fixture_b1() { return binomial_market(0.9, 1.1); }
inline MarketSpec fixture_b2() { return binomial_market(0.6, 0.7); }

/// Root of a continuous decreasing function on [lo, hi] by bisection.
inline double bisect(const std::function<double(double)>& f, double lo, double hi) {
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Closed-form optimum of the one-period log investor with cash w who can
/// buy at `ask` or sell at `bid`, terminal prices up/down with probability
/// p / 1-p. The marginal value of a purchase (sale) decides the direction; the
/// first-order condition is then solved by bisection.
struct BinomialOptimum {
  double theta = 0.0;  // net shares bought
  double c_up = 0.0;
  double c_down = 0.0;
  double value = 0.0;
};

inline BinomialOptimum binomial_log_optimum(double bid, double ask, double up, double down, double p, double w) {
  const auto foc = [&](double price) {
    return [=](double th) { return p * (up - price) / (w + th * (up - price)) + (1 - p) * (down - price) / (w + th * (down - price)); };
  };
  BinomialOptimum o;
  if (foc(ask)(0.0) > 0.0) {
    o.theta = bisect(foc(ask), 0.0, w / (ask - down) * (1 - 1e-15));
  } else if (foc(bid)(0.0) < 0.0) {
    o.theta = bisect(foc(bid), -w / (up - bid) * (1 - 1e-15), 0.0);
  }
  const double price = o.theta > 0 ? ask : bid;
  o.c_up = w + o.theta * (up - price);
  o.c_down = w + o.theta * (down - price);
  o.value = p * std::log(o.c_up) + (1 - p) * std::log(o.c_down);
  return o;
}

}  // namespace testing
