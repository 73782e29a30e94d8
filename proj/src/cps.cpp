#include "shadowprice/cps.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "shadowprice/error.hpp"

namespace shadowprice {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string format_value(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

double ConsistentPriceSystem::q_of(const ScenarioTree& tree, int t, std::size_t j) const {
  double sum = 0.0;
  for (std::size_t k = tree.terminal_begin(t, j); k < tree.terminal_end(t, j); ++k) sum += q[k];
  return sum;
}

ConsistentPriceSystem build_cps(const ScenarioTree& tree, const Eigen::VectorXd& nu, const AdaptedProcess& price) {
  if (static_cast<std::size_t>(nu.size()) != tree.terminal_atoms()) {
    throw Error(ErrorCode::ShapeMismatch, "one bond multiplier per terminal atom expected");
  }
  if (price.horizon() != tree.horizon()) throw Error(ErrorCode::ShapeMismatch, "price horizon mismatch");
  double alpha = 0.0;
  for (Eigen::Index k = 0; k < nu.size(); ++k) {
    if (!(nu[k] < 0.0)) {
      std::ostringstream os;
      os << "nu[" << k << "] = " << nu[k] << " is not negative";
      throw Error(ErrorCode::NonnegativeNu, os.str());
    }
    alpha -= nu[k];
  }
  ConsistentPriceSystem cps;
  cps.price = price;
  cps.alpha = alpha;
  cps.q.resize(tree.terminal_atoms());
  for (std::size_t k = 0; k < cps.q.size(); ++k) cps.q[k] = -nu[static_cast<Eigen::Index>(k)] / alpha;
  cps.density = AdaptedProcess(tree, 1);
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      double mass = 0.0;
      for (std::size_t k = tree.terminal_begin(t, j); k < tree.terminal_end(t, j); ++k) {
        mass -= nu[static_cast<Eigen::Index>(k)];
      }
      cps.density(t, j) = mass / (alpha * tree.probability(t, j));
    }
  }
  return cps;
}

MartingaleReport check_martingale(const ScenarioTree& tree, const ConsistentPriceSystem& cps) {
  const std::size_t d = cps.price.dim();
  const int T = tree.horizon();
  std::vector<std::vector<double>> weighted(T + 1);
  for (int t = 0; t <= T; ++t) {
    weighted[t].resize(tree.atoms(t) * d);
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      for (std::size_t i = 0; i < d; ++i) weighted[t][j * d + i] = cps.density(t, j) * cps.price(t, j, i);
    }
  }
  MartingaleReport report;
  for (int t = 0; t < T; ++t) {
    const auto one = conditional_expectation(tree, weighted[t + 1], d, t + 1, t);
    const auto all = conditional_expectation(tree, weighted[T], d, T, t);
    for (std::size_t k = 0; k < weighted[t].size(); ++k) {
      report.one_step = std::max(report.one_step, std::abs(one[k] - weighted[t][k]));
      report.multi_step = std::max(report.multi_step, std::abs(all[k] - weighted[t][k]));
    }
  }
  return report;
}

MarginalUtilityReport check_marginal_utility(const MarketSpec& market, const ConsistentPriceSystem& cps,
                                             const AdaptedProcess& consumption, double alpha, double slack,
                                             double domain_margin) {
  const ScenarioTree& tree = market.tree;
  MarginalUtilityReport report;
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      const Interval g = market.utility(t, j).supergradient(consumption(t, j), domain_margin);
      const Interval scaled{g.lo / alpha, g.hi / alpha};
      const double dist = g.empty() ? kInf : scaled.distance(cps.density(t, j));
      report.max_distance = std::max(report.max_distance, dist);
      if (dist > slack) report.violations.push_back({t, j, dist});
    }
  }
  return report;
}

double budget_constraint(const ScenarioTree& tree, const PortfolioConsumptionPair& pair,
                         const ConsistentPriceSystem& cps) {
  double spent = 0.0;
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) spent += cps.q_of(tree, t, j) * pair.consumption(t, j);
  }
  double wealth = pair.bank(0, 0);
  for (std::size_t i = 0; i < cps.price.dim(); ++i) wealth += pair.shares(0, 0, i) * cps.price(0, 0, i);
  return std::abs(spent - wealth);
}

PortfolioConsumptionPair lift_to_frictionless(const MarketSpec& market, const PortfolioConsumptionPair& pair,
                                              const AdaptedProcess& shadow_price) {
  const ScenarioTree& tree = market.tree;
  if (!shadow_price.conforms(tree, market.assets)) {
    throw Error(ErrorCode::ShapeMismatch, "shadow price does not match the market");
  }
  const TradeSplit split = split_trades(tree, pair.shares);
  PortfolioConsumptionPair lifted = pair;
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      double saved = 0.0;
      for (std::size_t i = 0; i < market.assets; ++i) {
        const double s = shadow_price(t, j, i);
        saved += split.buys(t + 1, j, i) * (market.ask(t, j, i) - s) +
                 split.sells(t + 1, j, i) * (s - market.bid(t, j, i));
      }
      lifted.consumption(t, j) += saved;
    }
  }
  return lifted;
}

const CheckResult* ShadowCertificate::check(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

ShadowCertificate certify(const MarketSpec& input, const SolverOptions& options) {
  ShadowCertificate cert;
  cert.market = discount_normalize(input);
  const MarketSpec& market = cert.market;
  const ScenarioTree& tree = market.tree;
  const auto add = [&](std::string name, double value, double threshold, std::string detail = {}) {
    const bool passed = value <= threshold;
    cert.checks.push_back({std::move(name), value, threshold, passed, std::move(detail)});
    if (!passed && cert.failed_check.empty()) cert.failed_check = cert.checks.back().name;
  };
  const auto finish = [&]() -> ShadowCertificate& {
    cert.valid = cert.failed_check.empty();
    return cert;
  };

  cert.frictionless_input = true;
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      for (std::size_t i = 0; i < market.assets; ++i) {
        cert.frictionless_input = cert.frictionless_input && market.pinched(t, j, i);
      }
    }
  }

  const ConvexProgram program = assemble(market);
  cert.costs_solution = solve(program, options);
  cert.value_costs = -cert.costs_solution.objective;
  cert.degenerate_duals = cert.costs_solution.degenerate_duals;
  add("kkt_costs", cert.costs_solution.residuals.max(), options.tolerance);

  try {
    cert.shadow = extract_shadow_price(market, cert.costs_solution);
  } catch (const Error& e) {
    add("shadow_extraction", kInf, 0.0, e.what());
    return finish();
  }
  add("shadow_bounds", std::max(cert.shadow.max_overshoot, 0.0), kShadowBoundSlack);

  const ComplementarityReport comp = check_complementarity(market, cert.costs_solution, cert.shadow);
  double worst_gap = 0.0;
  for (const auto& v : comp.violations) worst_gap = std::max(worst_gap, v.gap);
  add("complementarity", static_cast<double>(comp.violations.size()), 0.0,
      comp.passed() ? "" : "largest gap " + format_value(worst_gap));

  try {
    const ImpliedLambdas lambdas = implied_lambdas(market, cert.costs_solution);
    const double gap = std::max((lambdas.buy - cert.costs_solution.lambda_buy).lpNorm<Eigen::Infinity>(),
                                (lambdas.sell - cert.costs_solution.lambda_sell).lpNorm<Eigen::Infinity>());
    add("implied_lambdas", lambdas.buy.size() ? gap : 0.0, kLambdaConsistency);
  } catch (const Error& e) {
    add("implied_lambdas", kInf, kLambdaConsistency, e.what());
  }

  cert.frictionless_solution = solve_frictionless(market, cert.shadow.price, options);
  cert.value_frictionless = -cert.frictionless_solution.objective;
  add("kkt_frictionless", cert.frictionless_solution.residuals.max(), options.tolerance);
  const double value_gap = std::abs(cert.value_frictionless - cert.value_costs);
  add("value_equality", value_gap, std::max(kValueTolerance, kValueTolerance * std::abs(cert.value_costs)));

  cert.cps = build_cps(tree, cert.costs_solution.nu, cert.shadow.price);
  add("martingale", check_martingale(tree, cert.cps).max(), kMartingaleTolerance);
  const AdaptedProcess consumption = consumption_of(program, cert.costs_solution.x);
  const MarginalUtilityReport mu_report =
      check_marginal_utility(market, cert.cps, consumption, cert.cps.alpha, 1e-8, options.domain_margin);
  add("marginal_utility", mu_report.max_distance, 1e-8);

  const PortfolioConsumptionPair optimal = pair_of(program, cert.costs_solution.x);
  const PortfolioConsumptionPair lifted = lift_to_frictionless(market, optimal, cert.shadow.price);
  add("budget", budget_constraint(tree, lifted, cert.cps), kBudgetTolerance);

  const double min_q = cert.cps.q.empty() ? 0.0 : *std::min_element(cert.cps.q.begin(), cert.cps.q.end());
  add("q_equivalent", min_q > 0.0 ? 0.0 : 1.0, 0.0, "min Q = " + format_value(min_q));
  return finish();
}

namespace {

// Multi-resolution grid maximisation of a concave function on [lo, hi].
double grid_maximize(const std::function<double(double)>& fn, double lo, double hi, double coarse, double step,
                     long long& evaluations) {
  double best_x = lo;
  double best = -kInf;
  double h = coarse;
  double a = lo;
  double b = hi;
  while (true) {
    const long count = static_cast<long>(std::floor((b - a) / h + 1e-9));
    for (long k = 0; k <= count; ++k) {
      const double x = a + static_cast<double>(k) * h;
      const double v = fn(x);
      ++evaluations;
      if (v > best) {
        best = v;
        best_x = x;
      }
    }
    if (h <= step * (1.0 + 1e-9) || best == -kInf) break;
    a = std::max(lo, best_x - h);
    b = std::min(hi, best_x + h);
    h = std::max(h / 10.0, step);
  }
  return best;
}

}  // namespace

OracleResult brute_force_value(const MarketSpec& input, const GridSpec& grid) {
  const MarketSpec market = discount_normalize(input);
  const ScenarioTree& tree = market.tree;
  const int T = tree.horizon();
  if (T > 2 || market.assets > 1) {
    throw Error(ErrorCode::InstanceTooLarge, "oracle handles T <= 2 and at most one risky asset");
  }
  for (int t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      if (tree.child_count(t, j) > 3) throw Error(ErrorCode::InstanceTooLarge, "oracle handles at most 3 children");
    }
  }
  const bool trades = market.assets == 1;

  // Work estimate before committing to the search.
  const auto searches = [&](double lo, double hi) {
    return std::floor((hi - lo) / grid.coarse_step) + 1.0 +
           21.0 * std::ceil(std::log10(grid.coarse_step / grid.step));
  };
  const double trade_evals = trades ? searches(-grid.trade_bound, grid.trade_bound) : 1.0;
  const double consumption_evals = searches(-grid.consumption_bound, grid.consumption_bound);
  std::function<double(int, std::size_t)> cost = [&](int t, std::size_t j) -> double {
    if (t == T) return 1.0;
    double below = 1.0;
    const std::size_t first = tree.first_child(t, j);
    for (std::size_t c = first; c < first + tree.child_count(t, j); ++c) below += cost(t + 1, c);
    const double c_evals = market.utility(t, j).is_kinked() ? 1.0 : consumption_evals;
    return trade_evals * c_evals * below;
  };
  if (cost(0, 0) > 5e8) throw Error(ErrorCode::InstanceTooLarge, "grid search would need more than 5e8 evaluations");

  OracleResult result;
  result.step = grid.step;

  std::function<double(int, std::size_t, double, double)> value_at = [&](int t, std::size_t j, double bank,
                                                                         double holding) -> double {
    const double prob = tree.probability(t, j);
    const UtilityFunction& u = market.utility(t, j);
    if (t == T) {
      double c = bank;
      if (trades) c += holding * (holding > 0.0 ? market.bid(t, j, 0) : market.ask(t, j, 0));
      const double v = u.value(c);
      return v == -kInf ? -kInf : prob * v;
    }
    const auto after_trade = [&](double delta) -> double {
      const double target = holding + delta;
      double cash = bank;
      if (trades) cash -= delta > 0.0 ? delta * market.ask(t, j, 0) : delta * market.bid(t, j, 0);
      const auto with_consumption = [&](double c) -> double {
        const double v = u.value(c);
        if (v == -kInf) return -kInf;
        double total = prob * v;
        const std::size_t first = tree.first_child(t, j);
        for (std::size_t ch = first; ch < first + tree.child_count(t, j); ++ch) {
          const double w = value_at(t + 1, ch, cash - c, target);
          if (w == -kInf) return -kInf;
          total += w;
        }
        return total;
      };
      if (u.is_kinked()) return with_consumption(u.domain_lower());
      const double lo = std::max(-grid.consumption_bound, u.domain_lower());
      return grid_maximize(with_consumption, lo, grid.consumption_bound, grid.coarse_step, grid.step,
                           result.evaluations);
    };
    if (!trades) return after_trade(0.0);
    return grid_maximize(after_trade, -grid.trade_bound, grid.trade_bound, grid.coarse_step, grid.step,
                         result.evaluations);
  };

  const double holding0 = trades ? market.share_endowment[0] : 0.0;
  result.value = value_at(0, 0, market.bank_endowment, holding0);
  std::ostringstream os;
  os << "nested grid search, final step " << grid.step << " in trade and consumption units; value error O(step)";
  result.note = os.str();
  return result;
}

}  // namespace shadowprice
