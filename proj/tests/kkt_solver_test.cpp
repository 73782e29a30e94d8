#include <doctest.h>

#include <cmath>

#include "shadowprice/error.hpp"
#include "shadowprice/kkt_solver.hpp"
#include "shadowprice/random_market.hpp"
#include "support.hpp"

using namespace shadowprice;

TEST_CASE("fixture B1: no trade") {
  const ConvexProgram p = assemble(testing::fixture_b1());
  const KktSolution s = solve(p);
  const testing::BinomialOptimum oracle = testing::binomial_log_optimum(0.9, 1.1, 1.5, 0.5, 0.5, 1.0);
  CHECK(oracle.theta == 0.0);
  CHECK(s.residuals.max() <= 1e-9);
  CHECK(std::abs(s.buy(p.layout, 1, 0, 0)) <= 1e-8);
  CHECK(std::abs(s.sell(p.layout, 1, 0, 0)) <= 1e-8);
  CHECK(s.consumption(p.layout, 1, 0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(std::abs(s.objective) <= 1e-8);
  // equal bond multipliers
  CHECK(s.nu[0] < 0.0);
  CHECK(s.nu[0] == doctest::Approx(s.nu[1]).epsilon(1e-8));
}

TEST_CASE("fixture B2: buy on credit") {
  const ConvexProgram p = assemble(testing::fixture_b2());
  const KktSolution s = solve(p);
  const testing::BinomialOptimum oracle = testing::binomial_log_optimum(0.6, 0.7, 1.5, 0.5, 0.5, 1.0);
  CHECK(oracle.theta == doctest::Approx(1.875).epsilon(1e-12));
  CHECK(std::abs(s.buy(p.layout, 1, 0, 0) - oracle.theta) <= 1e-5);
  CHECK(std::abs(s.consumption(p.layout, 1, 0) - oracle.c_up) <= 1e-5);
  CHECK(std::abs(s.consumption(p.layout, 1, 1) - oracle.c_down) <= 1e-5);
  CHECK(std::abs(-s.objective - oracle.value) <= 1e-8);
  CHECK(s.residuals.max() <= 1e-9);
  CHECK((s.lambda_buy.array() >= 0.0).all());
  CHECK((s.lambda_sell.array() >= 0.0).all());
  CHECK((s.nu.array() < 0.0).all());
}

TEST_CASE("frictionless binomial at the indifference price") {
  const ConvexProgram p = assemble(testing::binomial_market(1.0, 1.0));
  const KktSolution s = solve(p);
  const double net = s.buy(p.layout, 1, 0, 0) - s.sell(p.layout, 1, 0, 0);
  CHECK(std::abs(net) <= 1e-8);
  CHECK(std::abs(s.objective) <= 1e-8);
}

TEST_CASE("solver errors") {
  SUBCASE("no consumption inside the domain") {
    MarketSpec m = testing::fixture_b1();
    m.utility(0, 0) = UtilityFunction::affine_zero(10.0);
    CHECK_THROWS_WITH_AS(solve(assemble(m)), doctest::Contains("DomainEmpty"), Error);
  }
  SUBCASE("invalid options") {
    SolverOptions o;
    o.barrier_reduction = 1.5;
    CHECK_THROWS_AS(o.validate(), Error);
    CHECK_THROWS_AS(solve(assemble(testing::fixture_b1()), o), Error);
  }
}

TEST_CASE("frictionless re-solve at the shadow price of B2") {
  const MarketSpec b2 = testing::fixture_b2();
  AdaptedProcess price = b2.ask;  // 0.7 at the root, S_1 below
  const KktSolution s = solve_frictionless(b2, price);
  const testing::BinomialOptimum oracle = testing::binomial_log_optimum(0.6, 0.7, 1.5, 0.5, 0.5, 1.0);
  CHECK(std::abs(-s.objective - oracle.value) <= 1e-8);
}

TEST_CASE("frictionless re-solve at the mid price of B1") {
  const MarketSpec b1 = testing::fixture_b1();
  AdaptedProcess price = b1.ask;
  price(0, 0) = 1.0;
  CHECK(std::abs(solve_frictionless(b1, price).objective) <= 1e-8);
}

TEST_CASE("bank account only") {
  // Consumption allocation: maximise log c0 + 0.9 (0.4 log c1 + 0.6 log c1')
  // with c0 + c1 = 2 on both branches; FOC c1 = 0.9 c0.
  MarketSpec m;
  m.tree = testing::binomial_tree(0.4);
  m.assets = 0;
  m.bid = AdaptedProcess(m.tree, 0);
  m.ask = AdaptedProcess(m.tree, 0);
  m.bank_endowment = 2.0;
  m.utility = UtilityProcess::discounted(m.tree, UtilityFunction::log_utility(), 0.9);
  const ConvexProgram p = assemble(m);
  const KktSolution s = solve(p);
  const double c0 = 2.0 / 1.9;
  CHECK(s.consumption(p.layout, 0, 0) == doctest::Approx(c0).epsilon(1e-8));
  CHECK(s.consumption(p.layout, 1, 1) == doctest::Approx(0.9 * c0).epsilon(1e-8));
}

TEST_CASE("self-certification and symmetry on random instances") {
  RandomMarketGenerator gen(31);
  for (int rep = 0; rep < 40; ++rep) {
    const MarketSpec m = gen.market();
    const ConvexProgram p = assemble(m);
    const KktSolution s = solve(p);
    const ResidualSummary r = kkt_residual(p, s);
    CHECK(r.max() <= 1e-9);
    CHECK(-s.objective == doctest::Approx(expected_utility(m, consumption_of(p, s.x))).epsilon(1e-12));
    CHECK((s.nu.array() < 0.0).all());
    CHECK(s.lambda_buy.minCoeff() >= 0.0);
    CHECK(s.lambda_sell.minCoeff() >= 0.0);

    if (m.assets == 2) {
      // Relabel the assets.
      MarketSpec swapped = m;
      for (int t = 0; t <= m.tree.horizon(); ++t) {
        for (std::size_t j = 0; j < m.tree.atoms(t); ++j) {
          swapped.bid(t, j, 0) = m.bid(t, j, 1);
          swapped.bid(t, j, 1) = m.bid(t, j, 0);
          swapped.ask(t, j, 0) = m.ask(t, j, 1);
          swapped.ask(t, j, 1) = m.ask(t, j, 0);
        }
      }
      std::swap(swapped.share_endowment[0], swapped.share_endowment[1]);
      CHECK(solve(assemble(swapped)).objective == doctest::Approx(s.objective).epsilon(1e-8));
    }
  }
}

TEST_CASE("sibling relabelling leaves the value unchanged") {
  const MarketSpec b2 = testing::fixture_b2();
  MarketSpec flipped = b2;
  flipped.bid(1, 0) = flipped.ask(1, 0) = 0.5;
  flipped.bid(1, 1) = flipped.ask(1, 1) = 1.5;
  CHECK(solve(assemble(flipped)).objective == doctest::Approx(solve(assemble(b2)).objective).epsilon(1e-10));
}

TEST_CASE("scaling wealth shifts the log value by log k") {
  for (double k : {0.5, 3.0}) {
    MarketSpec m = testing::fixture_b2();
    MarketSpec scaled = m;
    scaled.bank_endowment *= k;
    const KktSolution a = solve(assemble(m));
    const ConvexProgram ps = assemble(scaled);
    const KktSolution b = solve(ps);
    CHECK(-b.objective == doctest::Approx(-a.objective + std::log(k)).epsilon(1e-9));
    CHECK(b.buy(ps.layout, 1, 0, 0) == doctest::Approx(k * 1.875).epsilon(1e-7));
  }
}

TEST_CASE("wider spreads never help") {
  RandomMarketGenerator gen(41);
  for (int rep = 0; rep < 20; ++rep) {
    const MarketSpec m = gen.market();
    const MarketSpec wide = gen.widened(m);
    CHECK(-solve(assemble(wide)).objective <= -solve(assemble(m)).objective + 1e-9);
  }
}
