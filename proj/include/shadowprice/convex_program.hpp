#pragma once

#include <Eigen/Dense>

#include "shadowprice/market.hpp"

namespace shadowprice {

enum class Direction { buy = 0, sell = 1 };

/// Coordinates of the finite-dimensional program.
///
/// Variables, in order: buy increments, sell increments, consumption.
/// Trade slot (direction, t, j, i) is the increment at time t in 1..T+1 on
/// atom j of level t-1 for asset i; slots run direction-major, then time,
/// then atom, then asset. Consumption slot (t, j) follows for t = 0..T.
///
/// Equality rows: the bond constraint h0^k for every terminal atom k, then
/// the stock constraints h^{k,i}, terminal-major.
class ProgramLayout {
 public:
  ProgramLayout() = default;
  ProgramLayout(const ScenarioTree& tree, std::size_t assets);

  std::size_t assets() const { return assets_; }
  /// n = sum_t m_t.
  std::size_t atoms() const { return atoms_; }
  std::size_t terminal_atoms() const { return terminal_; }

  std::size_t trade_slots() const { return 2 * assets_ * atoms_; }
  std::size_t consumption_slots() const { return atoms_; }
  std::size_t variables() const { return (2 * assets_ + 1) * atoms_; }
  std::size_t equalities() const { return (assets_ + 1) * terminal_; }
  std::size_t inequalities() const { return trade_slots(); }

  /// `t` is the trade time 1..T+1, `j` an atom on level t-1.
  std::size_t trade_slot(Direction dir, int t, std::size_t j, std::size_t i) const {
    return static_cast<std::size_t>(dir) * assets_ * atoms_ + (offset_[t - 1] + j) * assets_ + i;
  }
  std::size_t consumption_slot(int t, std::size_t j) const { return 2 * assets_ * atoms_ + offset_[t] + j; }
  std::size_t bond_row(std::size_t k) const { return k; }
  std::size_t stock_row(std::size_t k, std::size_t i) const { return terminal_ + k * assets_ + i; }

 private:
  std::size_t assets_ = 0;
  std::size_t atoms_ = 0;
  std::size_t terminal_ = 0;
  std::vector<std::size_t> offset_;
};

/// Minimise f(x) = -sum P u(c) subject to h(x) = A x - b = 0 and trade
/// increments >= 0. Rows of A are the gradients of h0^k and h^{k,i}; the
/// constant parts (eta0, eta) sit in b with a minus sign.
struct ConvexProgram {
  MarketSpec market;
  ProgramLayout layout;
  Eigen::MatrixXd constraints;  // A
  Eigen::VectorXd rhs;          // b

  /// Lower end of the admissible range for variable k: 0 for trades, the
  /// utility domain edge for consumption.
  double lower_bound(std::size_t k) const;
  /// True for trade slots whose bid equals ask (net trade is free there).
  bool pinched_slot(std::size_t k) const;
};

ConvexProgram assemble(const MarketSpec& market);

struct ProgramValues {
  double objective = 0.0;   // +inf outside the utility domain
  Eigen::VectorXd bond;     // h0, one per terminal atom
  Eigen::MatrixXd stock;    // h, terminal atoms x assets
  Eigen::VectorXd buy_sign; // g_buy = -buy increments
  Eigen::VectorXd sell_sign;
};

ProgramValues eval(const ConvexProgram& program, const Eigen::VectorXd& x);

struct ResidualSummary {
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;

  double max() const;
};

/// Primal point and Lagrange multipliers of the program.
struct KktSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd nu;           // bond constraints
  Eigen::MatrixXd mu;           // stock constraints, terminal atoms x assets
  Eigen::VectorXd lambda_buy;   // d * n, indexed like the buy slots
  Eigen::VectorXd lambda_sell;
  ResidualSummary residuals;
  double objective = 0.0;       // f at x, i.e. minus the expected utility
  int iterations = 0;
  bool degenerate_duals = false;

  double buy(const ProgramLayout& layout, int t, std::size_t j, std::size_t i) const {
    return x[layout.trade_slot(Direction::buy, t, j, i)];
  }
  double sell(const ProgramLayout& layout, int t, std::size_t j, std::size_t i) const {
    return x[layout.trade_slot(Direction::sell, t, j, i)];
  }
  double consumption(const ProgramLayout& layout, int t, std::size_t j) const {
    return x[layout.consumption_slot(t, j)];
  }
};

/// Distance of the multipliers and primal point from the KKT system:
/// stationarity = worst slot distance of 0 from the subdifferential of the
/// Lagrangian (interval-valued at utility kinks) together with any negative
/// inequality multiplier; feasibility = max(|h0|, |h|, g^+);
/// complementarity = max |lambda * g|.
ResidualSummary kkt_residual(const ConvexProgram& program, const KktSolution& solution,
                             double domain_margin = 1e-12);

/// Consumption process and share holdings encoded by a primal point.
AdaptedProcess consumption_of(const ConvexProgram& program, const Eigen::VectorXd& x);
PortfolioConsumptionPair pair_of(const ConvexProgram& program, const Eigen::VectorXd& x);

/// Primal point of a pair (trades split into positive and negative parts).
Eigen::VectorXd point_of(const ConvexProgram& program, const PortfolioConsumptionPair& pair);

}  // namespace shadowprice
