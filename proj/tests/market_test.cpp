#include <doctest.h>

#include <cmath>
#include <limits>

#include "shadowprice/error.hpp"
#include "shadowprice/kkt_solver.hpp"
#include "shadowprice/random_market.hpp"
#include "support.hpp"

using namespace shadowprice;

namespace {

ScenarioTree single_path() { return ScenarioTree::build({{{0, 1.0}}, {{0, 1.0}}}); }

}  // namespace

TEST_CASE("bid and ask from a mid price") {
  const ScenarioTree tree = testing::binomial_tree();
  AdaptedProcess mid(tree, 1, 1.0);
  SUBCASE("zero costs give a frictionless market") {
    const auto [bid, ask] = from_mid_price(tree, mid, 0.0, 0.0);
    CHECK(bid == mid);
    CHECK(ask == mid);
  }
  SUBCASE("ten percent each side") {
    const auto [bid, ask] = from_mid_price(tree, mid, 0.1, 0.1);
    CHECK(bid(0, 0) == doctest::Approx(0.9));
    CHECK(ask(0, 0) == doctest::Approx(1.1));
  }
  SUBCASE("rates out of range") {
    CHECK_THROWS_WITH_AS(from_mid_price(tree, mid, 0.1, 1.0), doctest::Contains("InvalidCostRate"), Error);
    CHECK_THROWS_AS(from_mid_price(tree, mid, -0.1, 0.1), Error);
  }
}

TEST_CASE("trade splitting") {
  SUBCASE("constant holdings") {
    const ScenarioTree tree = testing::binomial_tree();
    const PredictableProcess phi(tree, 1, 0.7);
    const TradeSplit s = split_trades(tree, phi);
    for (int t = 1; t <= 2; ++t) {
      for (std::size_t j = 0; j < s.buys.atoms(t); ++j) {
        CHECK(s.buys(t, j) == 0.0);
        CHECK(s.sells(t, j) == 0.0);
      }
    }
  }
  SUBCASE("single path 0, 2, -1") {
    const ScenarioTree tree = single_path();
    PredictableProcess phi(tree, 1);
    phi(1, 0) = 2.0;
    phi(2, 0) = -1.0;
    const TradeSplit s = split_trades(tree, phi);
    CHECK(s.buys(1, 0) == 2.0);
    CHECK(s.buys(2, 0) == 0.0);
    CHECK(s.sells(1, 0) == 0.0);
    CHECK(s.sells(2, 0) == 3.0);
    CHECK(s.cumulative_buys(2, 0) == 2.0);
    CHECK(s.cumulative_sells(2, 0) == 3.0);
  }
  SUBCASE("random holdings: cumulative parts are monotone and difference back to phi") {
    RandomMarketGenerator gen(3);
    for (int rep = 0; rep < 30; ++rep) {
      const MarketSpec m = gen.market();
      const ScenarioTree& tree = m.tree;
      PredictableProcess phi(tree, m.assets);
      for (int t = 0; t <= tree.horizon() + 1; ++t) {
        for (std::size_t j = 0; j < phi.atoms(t); ++j) {
          for (std::size_t i = 0; i < m.assets; ++i) phi(t, j, i) = gen.uniform(-2.0, 2.0);
        }
      }
      const TradeSplit s = split_trades(tree, phi);
      for (int t = 1; t <= tree.horizon() + 1; ++t) {
        for (std::size_t j = 0; j < phi.atoms(t); ++j) {
          const std::size_t prev = t == 1 ? 0 : tree.parent(t - 1, j);
          for (std::size_t i = 0; i < m.assets; ++i) {
            // Defining recursion, written out independently.
            const double delta = phi(t, j, i) - phi(t - 1, prev, i);
            CHECK(s.buys(t, j, i) == std::max(delta, 0.0));
            CHECK(s.sells(t, j, i) == std::max(-delta, 0.0));
            CHECK(s.cumulative_buys(t, j, i) >= s.cumulative_buys(t - 1, prev, i));
            CHECK(s.cumulative_sells(t, j, i) >= s.cumulative_sells(t - 1, prev, i));
            CHECK(s.cumulative_buys(t, j, i) - s.cumulative_sells(t, j, i) == doctest::Approx(phi(t, j, i)));
          }
        }
      }
    }
  }
}

TEST_CASE("self-financing residual") {
  const MarketSpec b1 = testing::fixture_b1();
  SUBCASE("zero strategy, zero consumption") {
    MarketSpec m = b1;
    m.bank_endowment = 0.0;
    const PortfolioConsumptionPair zero{PredictableProcess(m.tree, 1), PredictableProcess(m.tree, 1),
                                        AdaptedProcess(m.tree, 1)};
    CHECK(is_self_financing(m, zero));
  }
  SUBCASE("no trades, consume the endowment at T") {
    const PortfolioConsumptionPair pair = buy_and_hold_liquidation(b1);
    CHECK(pair.consumption(1, 0) == 1.0);
    CHECK(pair.consumption(1, 1) == 1.0);
    CHECK(pair.bank(2, 0) == 0.0);
    CHECK(is_self_financing(b1, pair));
    CHECK(is_admissible(b1, pair).admissible);
  }
  SUBCASE("consuming 2 from a bank account of 1") {
    PortfolioConsumptionPair pair = buy_and_hold_liquidation(b1);
    pair.consumption(1, 0) = pair.consumption(1, 1) = 2.0;
    const AdaptedProcess r = self_financing_residual(b1, pair);
    // d(phi0) - (proceeds - purchases - c) = -1 - (0 - 0 - 2)
    CHECK(r(1, 0) == doctest::Approx(1.0));
    CHECK(r(1, 1) == doctest::Approx(1.0));
    CHECK(r(0, 0) == 0.0);
    CHECK_FALSE(is_self_financing(b1, pair));
  }
  SUBCASE("shape mismatch") {
    const PortfolioConsumptionPair bad{PredictableProcess(b1.tree, 2), PredictableProcess(b1.tree, 1),
                                       AdaptedProcess(b1.tree, 1)};
    CHECK_THROWS_AS(self_financing_residual(b1, bad), Error);
  }
  SUBCASE("frictionless books reduce to the classical identity") {
    MarketSpec m = b1;
    m.bid(0, 0) = m.ask(0, 0) = 1.0;
    PredictableProcess shares(m.tree, 1);
    shares(1, 0) = 0.4;
    const PortfolioConsumptionPair pair = complete_pair(m, shares, AdaptedProcess(m.tree, 1));
    // bank: 1 - 0.4 * 1.0
    CHECK(pair.bank(1, 0) == doctest::Approx(0.6));
    CHECK(pair.consumption(1, 0) == doctest::Approx(0.6 + 0.4 * 1.5));
  }
}

TEST_CASE("admissibility") {
  const MarketSpec b1 = testing::fixture_b1();
  SUBCASE("leftover shares") {
    PortfolioConsumptionPair pair = buy_and_hold_liquidation(b1);
    pair.shares(2, 0) = 0.5;
    const AdmissibilityReport r = is_admissible(b1, pair);
    CHECK_FALSE(r.admissible);
    CHECK(r.has(AdmissibilityViolation::TerminalPositionNonzero));
  }
  SUBCASE("wrong start") {
    PortfolioConsumptionPair pair = buy_and_hold_liquidation(b1);
    pair.bank(0, 0) = 0.0;
    const AdmissibilityReport r = is_admissible(b1, pair);
    CHECK_FALSE(r.admissible);
    CHECK(r.has(AdmissibilityViolation::InitialEndowmentMismatch));
  }
}

TEST_CASE("cumulated purchases and sales are self-financing in the 2d+1 asset market") {
  RandomMarketGenerator gen(5);
  for (int rep = 0; rep < 40; ++rep) {
    const MarketSpec m = gen.market();
    const PortfolioConsumptionPair pair = gen.competitor(m);
    REQUIRE(is_admissible(m, pair).admissible);
    const TradeSplit s = split_trades(m.tree, pair.shares);
    for (int t = 0; t <= m.tree.horizon(); ++t) {
      for (std::size_t j = 0; j < m.tree.atoms(t); ++j) {
        const std::size_t prev = t == 0 ? 0 : m.tree.parent(t, j);
        double r = pair.bank(t + 1, j) - pair.bank(t, prev) + pair.consumption(t, j);
        for (std::size_t i = 0; i < m.assets; ++i) {
          const double up = s.cumulative_buys(t + 1, j, i) - s.cumulative_buys(t, prev, i);
          const double down = s.cumulative_sells(t + 1, j, i) - s.cumulative_sells(t, prev, i);
          r += m.ask(t, j, i) * up - m.bid(t, j, i) * down;
        }
        CHECK(std::abs(r) <= 1e-12);
      }
    }
  }
}

TEST_CASE("expected utility") {
  const MarketSpec b1 = testing::fixture_b1();
  AdaptedProcess c(b1.tree, 1);
  c(1, 0) = c(1, 1) = 1.0;
  CHECK(expected_utility(b1, c) == 0.0);
  c(1, 0) = 2.5;
  c(1, 1) = 0.625;
  CHECK(expected_utility(b1, c) == doctest::Approx(0.5 * std::log(2.5) + 0.5 * std::log(0.625)).epsilon(1e-15));
  CHECK(expected_utility(b1, c) == doctest::Approx(0.22314).epsilon(1e-5));
  c(1, 1) = -1.0;
  CHECK(expected_utility(b1, c) == -std::numeric_limits<double>::infinity());
  c(1, 1) = 1.0;
  c(0, 0) = -0.1;  // below the terminal-wealth indicator at t = 0
  CHECK(expected_utility(b1, c) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("discount normalisation") {
  const MarketSpec b1 = testing::fixture_b1();
  SUBCASE("unit numeraire is the identity") {
    const PredictableProcess one(b1.tree, 1, 1.0);
    const MarketSpec m =
        discount_normalize(b1.tree, one, b1.bid, b1.ask, b1.utility, b1.bank_endowment, b1.share_endowment);
    CHECK(m.bid == b1.bid);
    CHECK(m.ask == b1.ask);
    AdaptedProcess c(b1.tree, 1, 1.3);
    c(0, 0) = 0.0;
    CHECK(expected_utility(m, c) == expected_utility(b1, c));
  }
  SUBCASE("zero entry") {
    PredictableProcess s0(b1.tree, 1, 1.0);
    s0(2, 1) = 0.0;
    CHECK_THROWS_WITH_AS(
        discount_normalize(b1.tree, s0, b1.bid, b1.ask, b1.utility, b1.bank_endowment, b1.share_endowment),
        doctest::Contains("NonpositiveNumeraire"), Error);
  }
  SUBCASE("geometric bank account under log utility") {
    // S0_t = 1.1^t, log utility at every date: u_t(S0_t x) = log x + t log 1.1.
    MarketSpec plain = b1;
    plain.utility = UtilityProcess::discounted(plain.tree, UtilityFunction::log_utility(), 1.0);
    MarketSpec m = plain;
    m.numeraire = PredictableProcess(m.tree, 1);
    for (int t = 0; t <= 2; ++t) {
      for (std::size_t j = 0; j < m.numeraire.atoms(t); ++j) m.numeraire(t, j) = std::pow(1.1, t);
    }
    for (std::size_t j = 0; j < 2; ++j) {
      m.bid(1, j) *= 1.1;
      m.ask(1, j) *= 1.1;
    }
    const MarketSpec hat = discount_normalize(m);
    CHECK(hat.bid(1, 0) == doctest::Approx(1.5));
    CHECK(hat.utility(1, 0).value(2.0) == doctest::Approx(std::log(2.0) + std::log(1.1)));
    CHECK(hat.utility(0, 0).value(2.0) == doctest::Approx(std::log(2.0)));
    AdaptedProcess c(m.tree, 1), chat(m.tree, 1);
    c(0, 0) = chat(0, 0) = 0.3;
    for (std::size_t j = 0; j < 2; ++j) {
      c(1, j) = 0.8 + static_cast<double>(j);
      chat(1, j) = c(1, j) / 1.1;
    }
    CHECK(expected_utility(hat, chat) == doctest::Approx(expected_utility(m, c)).epsilon(1e-14));
    // Re-solve both forms: the shift separates from the optimisation.
    const double normalised = -solve(assemble(hat)).objective;
    const double separated = -solve(assemble(plain)).objective + std::log(1.1);
    CHECK(std::abs(normalised - separated) <= 1e-9);
  }
}

TEST_CASE("market validation") {
  MarketSpec m = testing::fixture_b1();
  CHECK_NOTHROW(m.validate());
  SUBCASE("ask below bid") {
    m.ask(0, 0) = 0.8;
    CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("InvalidMarket"), Error);
  }
  SUBCASE("negative endowment") {
    m.bank_endowment = -1.0;
    CHECK_THROWS_AS(m.validate(), Error);
  }
  SUBCASE("terminal utility must increase strictly") {
    m.utility(1, 0) = UtilityFunction::affine_zero();
    CHECK_THROWS_AS(m.validate(), Error);
  }
}
