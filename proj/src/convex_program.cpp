#include "shadowprice/convex_program.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "shadowprice/error.hpp"

namespace shadowprice {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

ProgramLayout::ProgramLayout(const ScenarioTree& tree, std::size_t assets)
    : assets_(assets), atoms_(tree.total_atoms()), terminal_(tree.terminal_atoms()) {
  offset_.resize(tree.horizon() + 1);
  for (int t = 0; t <= tree.horizon(); ++t) offset_[t] = tree.level_offset(t);
}

double ResidualSummary::max() const { return std::max({stationarity, feasibility, complementarity}); }

ConvexProgram assemble(const MarketSpec& market) {
  market.validate();
  ConvexProgram program;
  program.market = market;
  program.layout = ProgramLayout(market.tree, market.assets);
  const ProgramLayout& layout = program.layout;
  const ScenarioTree& tree = market.tree;
  const int T = tree.horizon();
  const std::size_t d = market.assets;

  program.constraints = Eigen::MatrixXd::Zero(layout.equalities(), layout.variables());
  program.rhs = Eigen::VectorXd::Zero(layout.equalities());
  auto& A = program.constraints;

  for (std::size_t k = 0; k < tree.terminal_atoms(); ++k) {
    const std::size_t bond = layout.bond_row(k);
    program.rhs[bond] = -market.bank_endowment;
    for (std::size_t i = 0; i < d; ++i) program.rhs[layout.stock_row(k, i)] = -market.share_endowment[i];

    for (int t = 0; t <= T; ++t) {
      const std::size_t a = tree.ancestor(T, k, t);
      const double discount = 1.0 / market.numeraire_at(t, a);
      A(bond, layout.consumption_slot(t, a)) = -discount;
      // The trade decided at time t is the increment at t + 1, priced at time t.
      for (std::size_t i = 0; i < d; ++i) {
        const std::size_t up = layout.trade_slot(Direction::buy, t + 1, a, i);
        const std::size_t down = layout.trade_slot(Direction::sell, t + 1, a, i);
        A(bond, up) = -market.ask(t, a, i) * discount;
        A(bond, down) = market.bid(t, a, i) * discount;
        A(layout.stock_row(k, i), up) = 1.0;
        A(layout.stock_row(k, i), down) = -1.0;
      }
    }
  }
  return program;
}

double ConvexProgram::lower_bound(std::size_t k) const {
  if (k < layout.trade_slots()) return 0.0;
  const std::size_t flat = k - layout.trade_slots();
  int t = 0;
  while (t < market.tree.horizon() && flat >= market.tree.level_offset(t + 1)) ++t;
  return market.utility(t, flat - market.tree.level_offset(t)).domain_lower();
}

bool ConvexProgram::pinched_slot(std::size_t k) const {
  if (k >= layout.trade_slots()) return false;
  const std::size_t d = layout.assets();
  const std::size_t within = k % (d * layout.atoms());
  const std::size_t flat = within / d;
  const std::size_t i = within % d;
  int t = 0;
  while (t < market.tree.horizon() && flat >= market.tree.level_offset(t + 1)) ++t;
  return market.pinched(t, flat - market.tree.level_offset(t), i);
}

ProgramValues eval(const ConvexProgram& program, const Eigen::VectorXd& x) {
  const ProgramLayout& layout = program.layout;
  const MarketSpec& market = program.market;
  const ScenarioTree& tree = market.tree;
  if (static_cast<std::size_t>(x.size()) != layout.variables()) {
    throw Error(ErrorCode::ShapeMismatch, "point has the wrong number of coordinates");
  }
  ProgramValues out;
  double f = 0.0;
  for (int t = 0; t <= tree.horizon() && f < kInf; ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      const double u = market.utility(t, j).value(x[layout.consumption_slot(t, j)]);
      if (u == -kInf) {
        f = kInf;
        break;
      }
      f -= tree.probability(t, j) * u;
    }
  }
  out.objective = f;

  const Eigen::VectorXd h = program.constraints * x - program.rhs;
  const std::size_t m = layout.terminal_atoms();
  const std::size_t d = layout.assets();
  out.bond = h.head(m);
  out.stock.resize(m, d);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < d; ++i) out.stock(k, i) = h[layout.stock_row(k, i)];
  }
  const std::size_t half = d * layout.atoms();
  out.buy_sign = -x.head(half);
  out.sell_sign = -x.segment(half, half);
  return out;
}

ResidualSummary kkt_residual(const ConvexProgram& program, const KktSolution& solution,
                             double domain_margin) {
  const ProgramLayout& layout = program.layout;
  const MarketSpec& market = program.market;
  const ScenarioTree& tree = market.tree;
  const std::size_t m = layout.terminal_atoms();
  const std::size_t d = layout.assets();
  const std::size_t half = d * layout.atoms();
  if (static_cast<std::size_t>(solution.x.size()) != layout.variables() ||
      static_cast<std::size_t>(solution.nu.size()) != m ||
      static_cast<std::size_t>(solution.mu.rows()) != m || static_cast<std::size_t>(solution.mu.cols()) != d ||
      static_cast<std::size_t>(solution.lambda_buy.size()) != half ||
      static_cast<std::size_t>(solution.lambda_sell.size()) != half) {
    throw Error(ErrorCode::ShapeMismatch, "solution does not match the program layout");
  }

  Eigen::VectorXd y(layout.equalities());
  y.head(m) = solution.nu;
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < d; ++i) y[layout.stock_row(k, i)] = solution.mu(k, i);
  }
  const Eigen::VectorXd linear = program.constraints.transpose() * y;

  ResidualSummary r;
  for (std::size_t k = 0; k < 2 * half; ++k) {
    const double lambda = k < half ? solution.lambda_buy[k] : solution.lambda_sell[k - half];
    const double xk = solution.x[k];
    r.stationarity = std::max({r.stationarity, std::abs(linear[k] - lambda), -lambda});
    r.feasibility = std::max(r.feasibility, -xk);
    r.complementarity = std::max(r.complementarity, std::abs(lambda * xk));
  }
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      const std::size_t k = layout.consumption_slot(t, j);
      const double p = tree.probability(t, j);
      const Interval g = market.utility(t, j).supergradient(solution.x[k], domain_margin);
      // 0 in -P * g + linear  <=>  linear / P in g
      const double dist = g.empty() ? kInf : p * g.distance(linear[k] / p);
      r.stationarity = std::max(r.stationarity, dist);
    }
  }
  const Eigen::VectorXd h = program.constraints * solution.x - program.rhs;
  if (h.size() > 0) r.feasibility = std::max(r.feasibility, h.cwiseAbs().maxCoeff());
  return r;
}

AdaptedProcess consumption_of(const ConvexProgram& program, const Eigen::VectorXd& x) {
  const ScenarioTree& tree = program.market.tree;
  AdaptedProcess c(tree, 1);
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) c(t, j) = x[program.layout.consumption_slot(t, j)];
  }
  return c;
}

PortfolioConsumptionPair pair_of(const ConvexProgram& program, const Eigen::VectorXd& x) {
  const MarketSpec& market = program.market;
  const ScenarioTree& tree = market.tree;
  const ProgramLayout& layout = program.layout;
  const std::size_t d = market.assets;
  PortfolioConsumptionPair pair{PredictableProcess(tree, 1), PredictableProcess(tree, d),
                                consumption_of(program, x)};
  pair.bank(0, 0) = market.bank_endowment;
  for (std::size_t i = 0; i < d; ++i) pair.shares(0, 0, i) = market.share_endowment[i];
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      const std::size_t prev = t == 0 ? 0 : tree.parent(t, j);
      double cash = -pair.consumption(t, j);
      for (std::size_t i = 0; i < d; ++i) {
        const double up = x[layout.trade_slot(Direction::buy, t + 1, j, i)];
        const double down = x[layout.trade_slot(Direction::sell, t + 1, j, i)];
        pair.shares(t + 1, j, i) = pair.shares(t, prev, i) + up - down;
        cash += market.bid(t, j, i) * down - market.ask(t, j, i) * up;
      }
      pair.bank(t + 1, j) = pair.bank(t, prev) + cash / market.numeraire_at(t, j);
    }
  }
  return pair;
}

Eigen::VectorXd point_of(const ConvexProgram& program, const PortfolioConsumptionPair& pair) {
  const MarketSpec& market = program.market;
  const ScenarioTree& tree = market.tree;
  const ProgramLayout& layout = program.layout;
  const TradeSplit split = split_trades(tree, pair.shares);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(layout.variables());
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      x[layout.consumption_slot(t, j)] = pair.consumption(t, j);
      for (std::size_t i = 0; i < market.assets; ++i) {
        x[layout.trade_slot(Direction::buy, t + 1, j, i)] = split.buys(t + 1, j, i);
        x[layout.trade_slot(Direction::sell, t + 1, j, i)] = split.sells(t + 1, j, i);
      }
    }
  }
  return x;
}

}  // namespace shadowprice
