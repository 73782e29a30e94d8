#include "shadowprice/random_market.hpp"

#include <algorithm>
#include <cmath>

namespace shadowprice {

RandomMarketGenerator::RandomMarketGenerator(std::uint64_t seed, RandomMarketOptions options)
    : rng_(seed), options_(options) {}

double RandomMarketGenerator::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng_);
}

ScenarioTree RandomMarketGenerator::tree(int horizon) {
  std::vector<std::vector<LevelEntry>> levels{{{0, 1.0}}};
  for (int t = 1; t <= horizon; ++t) {
    const std::vector<LevelEntry> above = levels.back();
    const std::size_t parents = above.size();
    // Keep the tree under the terminal budget by capping the branching of the remaining levels.
    std::size_t cap = options_.max_children;
    while (cap > 1) {
      double size = static_cast<double>(parents);
      for (int s = t; s <= horizon; ++s) size *= static_cast<double>(cap);
      if (size <= static_cast<double>(options_.max_terminal_atoms)) break;
      --cap;
    }
    std::vector<LevelEntry> level;
    for (std::size_t j = 0; j < parents; ++j) {
      const std::size_t children = std::uniform_int_distribution<std::size_t>(std::min<std::size_t>(2, cap), cap)(rng_);
      std::vector<double> w(children);
      for (auto& x : w) x = uniform(0.3, 1.0);
      double sum = 0.0;
      for (double x : w) sum += x;
      for (double x : w) level.push_back({j, above[j].probability * x / sum});
    }
    levels.push_back(std::move(level));
  }
  return ScenarioTree::build(levels);
}

UtilityFunction RandomMarketGenerator::utility_family() {
  switch (std::uniform_int_distribution<int>(0, 3)(rng_)) {
    case 0: return UtilityFunction::log_utility();
    case 1: return UtilityFunction::power_utility(0.5);
    case 2: return UtilityFunction::power_utility(2.0);
    default: return UtilityFunction::exponential_utility(1.0);
  }
}

MarketSpec RandomMarketGenerator::market() {
  const int T = std::uniform_int_distribution<int>(options_.min_horizon, options_.max_horizon)(rng_);
  const std::size_t d =
      std::uniform_int_distribution<std::size_t>(options_.min_assets, options_.max_assets)(rng_);
  MarketSpec m;
  m.tree = tree(T);
  m.assets = d;
  const ScenarioTree& tr = m.tree;

  // Mid prices: martingale under a measure Q whose one-step weights differ
  // from P by a bounded factor.
  AdaptedProcess mid(tr, d);
  for (std::size_t i = 0; i < d; ++i) mid(0, 0, i) = uniform(0.5, 2.0);
  for (int t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < tr.atoms(t); ++j) {
      const std::size_t first = tr.first_child(t, j);
      const std::size_t n = tr.child_count(t, j);
      std::vector<double> q(n);
      double qsum = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        q[c] = tr.probability(t + 1, first + c) / tr.probability(t, j) * std::exp(uniform(-0.4, 0.4));
        qsum += q[c];
      }
      for (auto& x : q) x /= qsum;
      for (std::size_t i = 0; i < d; ++i) {
        std::vector<double> f(n);
        double mean = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          f[c] = std::exp(uniform(-0.35, 0.35));
          mean += q[c] * f[c];
        }
        for (std::size_t c = 0; c < n; ++c) mid(t + 1, first + c, i) = mid(t, j, i) * f[c] / mean;
      }
    }
  }

  m.bid = AdaptedProcess(tr, d);
  m.ask = AdaptedProcess(tr, d);
  const double buy_rate = uniform(0.0, options_.max_spread);
  const double sell_rate = uniform(0.0, options_.max_spread);
  for (int t = 0; t <= T; ++t) {
    for (std::size_t j = 0; j < tr.atoms(t); ++j) {
      const bool pinch = uniform(0.0, 1.0) < options_.pinch_probability;
      for (std::size_t i = 0; i < d; ++i) {
        const double s = mid(t, j, i);
        m.ask(t, j, i) = pinch ? s : s * (1.0 + buy_rate * uniform(0.5, 1.0));
        m.bid(t, j, i) = pinch ? s : s * (1.0 - sell_rate * uniform(0.5, 1.0));
      }
    }
  }

  m.bank_endowment = uniform(0.5, 2.0);
  m.share_endowment.resize(d);
  for (auto& e : m.share_endowment) e = uniform(0.0, 0.5);
  const UtilityFunction base = utility_family();
  const bool consume = T <= options_.consumption_max_horizon && uniform(0.0, 1.0) < options_.consumption_probability;
  m.utility = consume ? UtilityProcess::discounted(tr, base, uniform(0.85, 1.0))
                      : UtilityProcess::terminal_wealth(tr, base);
  return m;
}

MarketSpec RandomMarketGenerator::with_numeraire(const MarketSpec& market) {
  MarketSpec m = market;
  const ScenarioTree& tr = m.tree;
  m.numeraire = PredictableProcess(tr, 1, 1.0);
  for (int t = 1; t <= tr.horizon() + 1; ++t) {
    for (std::size_t j = 0; j < m.numeraire.atoms(t); ++j) {
      const int level = t - 1;
      const double prev = level == 0 ? m.numeraire(0, 0) : m.numeraire(t - 1, tr.parent(level, j));
      m.numeraire(t, j) = prev * (1.0 + uniform(0.0, 0.1));
    }
  }
  for (int t = 0; t <= tr.horizon(); ++t) {
    for (std::size_t j = 0; j < tr.atoms(t); ++j) {
      const double s0 = m.numeraire_at(t, j);
      for (std::size_t i = 0; i < m.assets; ++i) {
        m.bid(t, j, i) *= s0;
        m.ask(t, j, i) *= s0;
      }
    }
  }
  return m;
}

MarketSpec RandomMarketGenerator::widened(const MarketSpec& market, double max_extra) {
  MarketSpec m = market;
  for (int t = 0; t <= m.tree.horizon(); ++t) {
    for (std::size_t j = 0; j < m.tree.atoms(t); ++j) {
      for (std::size_t i = 0; i < m.assets; ++i) {
        m.ask(t, j, i) *= 1.0 + uniform(0.0, max_extra);
        m.bid(t, j, i) *= 1.0 - uniform(0.0, max_extra);
      }
    }
  }
  return m;
}

PortfolioConsumptionPair RandomMarketGenerator::competitor(const MarketSpec& market, double max_trade) {
  const ScenarioTree& tr = market.tree;
  const int T = tr.horizon();
  PortfolioConsumptionPair pair;
  for (int attempt = 0; attempt < 10; ++attempt, max_trade *= 0.5) {
    PredictableProcess shares(tr, market.assets);
    for (std::size_t i = 0; i < market.assets; ++i) shares(0, 0, i) = market.share_endowment[i];
    for (int t = 1; t <= T; ++t) {
      for (std::size_t j = 0; j < shares.atoms(t); ++j) {
        const int level = t - 1;
        const std::size_t from = level == 0 ? 0 : tr.parent(level, j);
        for (std::size_t i = 0; i < market.assets; ++i) {
          shares(t, j, i) = shares(t - 1, from, i) + uniform(-max_trade, max_trade);
        }
      }
    }
    AdaptedProcess consumption(tr, 1);
    for (int t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < tr.atoms(t); ++j) {
        const UtilityFunction& u = market.utility(t, j);
        const double lo = u.domain_lower();
        if (u.is_kinked()) {
          consumption(t, j) = lo;
        } else if (std::isfinite(lo)) {
          consumption(t, j) = lo + uniform(0.01, 0.2);
        } else {
          consumption(t, j) = uniform(-0.1, 0.2);
        }
      }
    }
    pair = complete_pair(market, shares, consumption);
    if (std::isfinite(expected_utility(market, pair.consumption))) break;
  }
  return pair;
}

}  // namespace shadowprice
