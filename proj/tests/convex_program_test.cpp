#include <doctest.h>

#include <cmath>
#include <limits>

#include "shadowprice/error.hpp"
#include "shadowprice/kkt_solver.hpp"
#include "shadowprice/random_market.hpp"
#include "support.hpp"

using namespace shadowprice;

namespace {

MarketSpec bank_only() {
  MarketSpec m;
  m.tree = testing::binomial_tree(0.4);
  m.assets = 0;
  m.bid = AdaptedProcess(m.tree, 0);
  m.ask = AdaptedProcess(m.tree, 0);
  m.bank_endowment = 2.0;
  m.utility = UtilityProcess::discounted(m.tree, UtilityFunction::log_utility(), 0.9);
  return m;
}

MarketSpec one_date() {
  MarketSpec m;
  m.tree = ScenarioTree::build({{{0, 1.0}}});
  m.assets = 1;
  m.bid = AdaptedProcess(m.tree, 1, 0.95);
  m.ask = AdaptedProcess(m.tree, 1, 1.05);
  m.bank_endowment = 1.0;
  m.share_endowment = {2.0};
  m.utility = UtilityProcess::terminal_wealth(m.tree, UtilityFunction::log_utility());
  return m;
}

// Optimal B2 point written down from the closed form.
Eigen::VectorXd b2_optimum(const ConvexProgram& p) {
  const ProgramLayout& L = p.layout;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L.variables()));
  x[L.trade_slot(Direction::buy, 1, 0, 0)] = 1.875;
  x[L.trade_slot(Direction::sell, 2, 0, 0)] = 1.875;
  x[L.trade_slot(Direction::sell, 2, 1, 0)] = 1.875;
  x[L.consumption_slot(1, 0)] = 2.5;
  x[L.consumption_slot(1, 1)] = 0.625;
  return x;
}

}  // namespace

TEST_CASE("layout of fixture B1") {
  const ConvexProgram p = assemble(testing::fixture_b1());
  CHECK(p.layout.trade_slots() == 6);
  CHECK(p.layout.consumption_slots() == 3);
  CHECK(p.layout.variables() == 9);
  CHECK(p.layout.equalities() == 4);
  CHECK(p.layout.inequalities() == 6);
  CHECK(p.constraints.rows() == 4);
  CHECK(p.constraints.cols() == 9);
  // direction-major, then time, then atom
  CHECK(p.layout.trade_slot(Direction::buy, 1, 0, 0) == 0);
  CHECK(p.layout.trade_slot(Direction::buy, 2, 1, 0) == 2);
  CHECK(p.layout.trade_slot(Direction::sell, 1, 0, 0) == 3);
  CHECK(p.layout.consumption_slot(0, 0) == 6);
  CHECK(p.layout.consumption_slot(1, 1) == 8);
}

TEST_CASE("degenerate layouts") {
  SUBCASE("bank account only") {
    const ConvexProgram p = assemble(bank_only());
    CHECK(p.layout.trade_slots() == 0);
    CHECK(p.layout.variables() == 3);
    CHECK(p.layout.equalities() == 2);
  }
  SUBCASE("single date") {
    const ConvexProgram p = assemble(one_date());
    CHECK(p.layout.trade_slots() == 2);
    CHECK(p.layout.equalities() == 2);
    // h uses eta directly: zero trades leave the two shares unliquidated
    const ProgramValues v = eval(p, Eigen::VectorXd::Zero(3));
    CHECK(v.stock(0, 0) == 2.0);
    CHECK(v.bond[0] == 1.0);
  }
}

TEST_CASE("evaluation") {
  const MarketSpec b1 = testing::fixture_b1();
  const ConvexProgram p = assemble(b1);
  const ProgramLayout& L = p.layout;
  SUBCASE("zero point") {
    const ProgramValues v = eval(p, Eigen::VectorXd::Zero(9));
    CHECK(v.bond[0] == 1.0);
    CHECK(v.bond[1] == 1.0);
    CHECK(v.stock.isZero());
    CHECK(v.objective == std::numeric_limits<double>::infinity());  // log 0
  }
  SUBCASE("no-trade liquidation") {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(9);
    x[L.consumption_slot(1, 0)] = x[L.consumption_slot(1, 1)] = 1.0;
    const ProgramValues v = eval(p, x);
    CHECK(v.bond.isZero());
    CHECK(v.stock.isZero());
    CHECK(v.objective == 0.0);
    // same arithmetic as the self-financing residual
    CHECK(point_of(p, buy_and_hold_liquidation(b1)).isApprox(x));
  }
  SUBCASE("B2 optimum") {
    const ConvexProgram p2 = assemble(testing::fixture_b2());
    const ProgramValues v = eval(p2, b2_optimum(p2));
    CHECK(v.bond.cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(v.stock.cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(-v.objective == doctest::Approx(0.5 * std::log(2.5) + 0.5 * std::log(0.625)));
  }
}

TEST_CASE("KKT residual") {
  const ConvexProgram p = assemble(testing::fixture_b2());
  const ProgramLayout& L = p.layout;
  KktSolution s;
  s.x = b2_optimum(p);
  // Closed-form multipliers: nu^k = -P u'(c_T^k), mu^k = nu^k S_1^k, lambda
  // from the stationarity of each trade slot.
  s.nu = Eigen::Vector2d(-0.5 / 2.5, -0.5 / 0.625);
  s.mu = Eigen::MatrixXd(2, 1);
  s.mu << s.nu[0] * 1.5, s.nu[1] * 0.5;
  s.lambda_buy = Eigen::VectorXd::Zero(3);
  s.lambda_sell = Eigen::VectorXd::Zero(3);
  const double sum_nu = s.nu.sum(), sum_mu = s.mu.sum();
  s.lambda_buy[0] = sum_mu - sum_nu * 0.7;
  s.lambda_sell[0] = sum_nu * 0.6 - sum_mu;
  SUBCASE("analytic KKT point") {
    CHECK(std::abs(s.lambda_buy[0]) <= 1e-15);
    const ResidualSummary r = kkt_residual(p, s);
    CHECK(r.stationarity <= 1e-12);
    CHECK(r.feasibility <= 1e-12);
    CHECK(r.complementarity <= 1e-12);
  }
  SUBCASE("zero duals leave the marginal utility gap") {
    KktSolution z = s;
    z.nu.setZero();
    z.mu.setZero();
    z.lambda_buy.setZero();
    z.lambda_sell.setZero();
    const ResidualSummary r = kkt_residual(p, z);
    // largest P u'(c_T) over terminal atoms
    CHECK(r.stationarity == doctest::Approx(0.5 / 0.625));
  }
  SUBCASE("infeasible primal") {
    KktSolution bad = s;
    bad.x[L.consumption_slot(1, 0)] -= 1.0;
    CHECK(kkt_residual(p, bad).feasibility == doctest::Approx(1.0));
  }
  SUBCASE("shape mismatch") {
    KktSolution bad = s;
    bad.nu = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(kkt_residual(p, bad), Error);
  }
}

TEST_CASE("objective is convex, constraints affine") {
  RandomMarketGenerator gen(21);
  for (int rep = 0; rep < 25; ++rep) {
    const MarketSpec m = gen.market();
    const ConvexProgram p = assemble(m);
    const Eigen::VectorXd x = point_of(p, gen.competitor(m));
    const Eigen::VectorXd y = point_of(p, gen.competitor(m));
    const ProgramValues vx = eval(p, x), vy = eval(p, y);
    REQUIRE(std::isfinite(vx.objective));
    REQUIRE(std::isfinite(vy.objective));
    const double a = gen.uniform(0.0, 1.0);
    const ProgramValues vm = eval(p, a * x + (1 - a) * y);
    CHECK(vm.objective <= a * vx.objective + (1 - a) * vy.objective + 1e-12);
    CHECK((vm.bond - (a * vx.bond + (1 - a) * vy.bond)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((vm.stock - (a * vx.stock + (1 - a) * vy.stock)).cwiseAbs().maxCoeff() <= 1e-12);
    // admissible pairs are feasible points
    CHECK(vx.bond.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(vx.stock.cwiseAbs().maxCoeff() <= 1e-12);
  }
}
