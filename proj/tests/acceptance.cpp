#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "shadowprice/error.hpp"
#include "shadowprice/market_file.hpp"
#include "shadowprice/random_market.hpp"
#include "shadowprice/runner.hpp"
#include "support.hpp"

using namespace shadowprice;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int failures = 0;
std::map<int, std::string> lines;

void verdict(int n, bool ok, const std::string& summary) {
  lines[n] = "criterion " + std::to_string(n) + ": " + (ok ? "PASS" : "FAIL") + "  " + summary;
  if (!ok) ++failures;
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const std::string kFixtures = FIXTURE_DIR;

const TradeRecord& root_trade(const Report& r) { return r.trades.front(); }

void fixture_b1() {
  const auto start = Clock::now();
  const RunOutcome o = certify_file(kFixtures + "/b1.market");
  const double elapsed = seconds_since(start);
  if (!o.report) return verdict(1, false, "no report: " + o.message);
  const Report& r = *o.report;
  const testing::BinomialOptimum oracle = testing::binomial_log_optimum(0.9, 1.1, 1.5, 0.5, 0.5, 1.0);
  double trade = 0.0;
  for (const TradeRecord& t : r.trades) {
    if (t.t < r.horizon) trade = std::max({trade, std::abs(t.buy), std::abs(t.sell)});
  }
  const double value_err = std::abs(r.value_costs - oracle.value);
  const double s_err = std::abs(r.prices.front().shadow - 1.0);
  const double q_err = std::max(std::abs(r.atoms[1].q - 0.5), std::abs(r.atoms[2].q - 0.5));
  const bool ok = r.valid && oracle.theta == 0.0 && trade <= 1e-8 && value_err <= 1e-8 && s_err <= 1e-6 &&
                  q_err <= 1e-6 && elapsed < 0.1;
  verdict(1, ok,
          fmt("B1: max trade %.1e, |value| err %.1e, |S~0 - 1| %.1e, |Q~ - P| %.1e", trade, value_err, s_err,
              q_err) +
              fmt(", %.4f s", elapsed));
}

void fixture_b2() {
  const RunOutcome o = certify_file(kFixtures + "/b2.market");
  if (!o.report) return verdict(2, false, "no report: " + o.message);
  const Report& r = *o.report;
  const testing::BinomialOptimum oracle = testing::binomial_log_optimum(0.6, 0.7, 1.5, 0.5, 0.5, 1.0);
  // Q~ proportional to P u'(c_T)
  const double w_up = 0.5 / oracle.c_up, w_down = 0.5 / oracle.c_down;
  const double q_up = w_up / (w_up + w_down), q_down = w_down / (w_up + w_down);
  const double theta_err = std::abs(root_trade(r).buy - root_trade(r).sell - oracle.theta);
  const double c_err = std::max(std::abs(r.atoms[1].consumption - oracle.c_up),
                                std::abs(r.atoms[2].consumption - oracle.c_down));
  const double s_err = std::abs(r.prices.front().shadow - 0.7);
  const double q_err = std::max(std::abs(r.atoms[1].q - q_up), std::abs(r.atoms[2].q - q_down));
  double martingale = -1.0;
  for (const CheckRecord& c : r.checks) {
    if (c.name == "martingale") martingale = c.value;
  }
  const bool forced = r.prices.front().provenance == "forced_ask";
  const bool ok = r.valid && theta_err <= 1e-5 && c_err <= 1e-5 && s_err <= 1e-6 && forced && q_err <= 1e-6 &&
                  martingale >= 0.0 && martingale <= 1e-8;
  verdict(2, ok,
          fmt("B2: |theta - %.6g| %.1e, c_T err %.1e, |S~0 - 0.7| %.1e", oracle.theta, theta_err, c_err, s_err) +
              " (" + r.prices.front().provenance + ")" +
              fmt(", Q~ err %.1e, martingale %.1e", q_err, martingale));
}

struct SuiteInstance {
  MarketSpec market;
  bool converged = false;
  ShadowCertificate cert;
  std::string error;
};

// Criteria 3, 8 and 9 share one randomized suite.
void random_suite() {
  RandomMarketGenerator gen(1);
  std::vector<SuiteInstance> suite(200);
  const auto start = Clock::now();
  for (auto& inst : suite) {
    inst.market = gen.market();
    try {
      inst.cert = certify(inst.market);
      inst.converged = true;
    } catch (const Error& e) {
      inst.error = e.what();
    }
  }
  const double elapsed = seconds_since(start);

  int converged = 0, bad = 0;
  double worst_slack = 0.0, worst_gap = 0.0, worst_value = 0.0, worst_mart = 0.0, worst_mu = 0.0;
  std::size_t comp_violations = 0;
  int first_bad = -1;
  for (std::size_t k = 0; k < suite.size(); ++k) {
    const SuiteInstance& inst = suite[k];
    if (!inst.converged) continue;
    ++converged;
    const ShadowCertificate& c = inst.cert;
    const MarketSpec& m = c.market;
    double slack = c.shadow.max_overshoot;
    for (int t = 0; t <= m.tree.horizon(); ++t) {
      for (std::size_t j = 0; j < m.tree.atoms(t); ++j) {
        for (std::size_t i = 0; i < m.assets; ++i) {
          slack = std::max({slack, m.bid(t, j, i) - c.shadow.price(t, j, i), c.shadow.price(t, j, i) - m.ask(t, j, i)});
        }
      }
    }
    const ComplementarityReport comp = check_complementarity(m, c.costs_solution, c.shadow);
    for (const auto& v : comp.violations) worst_gap = std::max(worst_gap, v.gap);
    const double value = std::abs(c.value_costs - c.value_frictionless) / std::max(1.0, std::abs(c.value_costs));
    const double mart = check_martingale(m.tree, c.cps).max();
    const MarginalUtilityReport mu = check_marginal_utility(
        m, c.cps, consumption_of(assemble(m), c.costs_solution.x), c.cps.alpha);
    const bool fine = slack <= 1e-8 && comp.passed() && value <= 1e-6 && mart <= 1e-8 && mu.passed();
    if (!fine) {
      ++bad;
      if (first_bad < 0) first_bad = static_cast<int>(k);
    }
    worst_slack = std::max(worst_slack, slack);
    comp_violations += comp.violations.size();
    worst_value = std::max(worst_value, value);
    worst_mart = std::max(worst_mart, mart);
    worst_mu = std::max(worst_mu, mu.max_distance);
  }
  verdict(3, bad == 0 && elapsed < 60.0,
          fmt("%d/200 converged, %d failing; worst bound slack %.1e, complementarity violations %zu", converged, bad,
              worst_slack, comp_violations) +
              fmt(" (gap %.1e), relative value gap %.1e, martingale %.1e, marginal utility %.1e", worst_gap,
                  worst_value, worst_mart, worst_mu) +
              fmt(", %.2f s", elapsed) + (first_bad >= 0 ? " first failing instance #" + std::to_string(first_bad) : ""));

  // Criterion 8: independent residual recomputation of every solver output.
  int residual_failures = 0;
  double worst_residual = 0.0;
  for (const SuiteInstance& inst : suite) {
    if (!inst.converged) continue;
    const MarketSpec& m = inst.cert.market;
    const double costs = kkt_residual(assemble(m), inst.cert.costs_solution).max();
    const double fric = kkt_residual(assemble(frictionless_market(m, inst.cert.shadow.price)),
                                     inst.cert.frictionless_solution)
                            .max();
    worst_residual = std::max({worst_residual, costs, fric});
    if (!(costs <= 1e-9 && fric <= 1e-9)) ++residual_failures;
  }
  const int non_converged = 200 - converged;
  verdict(8, residual_failures == 0 && non_converged < 4,
          fmt("worst KKT residual %.1e over %d solves, %d above 1e-9; non-converged %d/200", worst_residual,
              2 * converged, residual_failures, non_converged) +
              fmt(" (%.1f%%)", 100.0 * non_converged / 200.0));

  // Criterion 9: lift random competitors into the frictionless market at S~.
  const auto start9 = Clock::now();
  int pairs = 0, violations = 0;
  double worst_kappa = 0.0, worst_eu = 0.0, worst_sf = 0.0;
  for (SuiteInstance& inst : suite) {
    if (!inst.converged) continue;
    const MarketSpec& m = inst.cert.market;
    const MarketSpec fric = frictionless_market(m, inst.cert.shadow.price);
    for (int k = 0; k < 20; ++k) {
      const PortfolioConsumptionPair pair = gen.competitor(m);
      const PortfolioConsumptionPair lifted = lift_to_frictionless(m, pair, inst.cert.shadow.price);
      ++pairs;
      double kappa = 0.0;
      for (int t = 0; t <= m.tree.horizon(); ++t) {
        for (std::size_t j = 0; j < m.tree.atoms(t); ++j) {
          kappa = std::max(kappa, pair.consumption(t, j) - lifted.consumption(t, j));
        }
      }
      const double eu_gap = expected_utility(m, pair.consumption) - expected_utility(fric, lifted.consumption);
      const AdaptedProcess sf = self_financing_residual(fric, lifted);
      for (int t = 0; t <= m.tree.horizon(); ++t) {
        for (double v : sf.level(t)) worst_sf = std::max(worst_sf, std::abs(v));
      }
      worst_kappa = std::max(worst_kappa, kappa);
      if (std::isfinite(eu_gap)) worst_eu = std::max(worst_eu, eu_gap);
      if (kappa > 1e-10 || !(eu_gap <= 1e-10)) ++violations;
    }
  }
  verdict(9, violations == 0 && worst_sf <= 1e-9,
          fmt("%d competitor pairs, %d violations; max (kappa - kappa~) %.1e, max (EU - EU~) %.1e", pairs, violations,
              worst_kappa, worst_eu) +
              fmt(", lifted self-financing residual %.1e, %.2f s", worst_sf, seconds_since(start9)));
}

void oracle_suite() {
  RandomMarketOptions opt;
  opt.max_horizon = 2;
  opt.max_assets = 1;
  opt.consumption_max_horizon = 1;
  RandomMarketGenerator gen(4, opt);
  const auto start = Clock::now();
  int bad = 0, skipped = 0;
  double worst = 0.0;
  long long evaluations = 0;
  for (int k = 0; k < 50; ++k) {
    const MarketSpec m = gen.market();
    try {
      const double solver = -solve(assemble(m)).objective;
      const OracleResult grid = brute_force_value(m);
      evaluations += grid.evaluations;
      const double diff = std::abs(solver - grid.value);
      worst = std::max(worst, diff);
      if (!(diff <= 1e-4)) ++bad;
    } catch (const Error& e) {
      ++skipped;
      std::printf("  oracle suite instance %d: %s\n", k, e.what());
    }
  }
  const double elapsed = seconds_since(start);
  verdict(4, bad == 0 && skipped == 0 && elapsed < 120.0,
          fmt("50 instances (T <= 2, d = 1), worst |solver - grid| %.1e, %d above 1e-4, %d not run", worst, bad,
              skipped) +
              fmt(", %lld grid evaluations, %.2f s", evaluations, elapsed));
}

void frictionless_degeneration() {
  RandomMarketOptions opt;
  opt.max_spread = 0.0;
  RandomMarketGenerator gen(5, opt);
  double worst_price = 0.0, worst_value = 0.0, worst_x = 0.0;
  int errors = 0;
  for (int k = 0; k < 50; ++k) {
    const MarketSpec m = gen.market();
    try {
      const ShadowCertificate c = certify(m);
      for (int t = 0; t <= m.tree.horizon(); ++t) {
        for (std::size_t j = 0; j < m.tree.atoms(t); ++j) {
          for (std::size_t i = 0; i < m.assets; ++i) {
            worst_price = std::max(worst_price, std::abs(c.shadow.price(t, j, i) - m.bid(t, j, i)));
          }
        }
      }
      worst_value = std::max(worst_value, std::abs(c.value_costs - c.value_frictionless));
      worst_x = std::max(worst_x, (c.costs_solution.x - c.frictionless_solution.x).cwiseAbs().maxCoeff());
    } catch (const Error& e) {
      ++errors;
    }
  }
  verdict(5, errors == 0 && worst_price <= 1e-10 && worst_value <= 1e-10 && worst_x <= 1e-10,
          fmt("50 zero-cost instances: max |S~ - S| %.1e, max value gap %.1e, max primal gap %.1e, %d errors",
              worst_price, worst_value, worst_x, errors));
}

void spread_monotonicity() {
  RandomMarketGenerator gen(6);
  int bad = 0, errors = 0;
  double worst = -1e300;
  for (int k = 0; k < 50; ++k) {
    const MarketSpec m = gen.market();
    const MarketSpec wide = gen.widened(m);
    try {
      const double base = -solve(assemble(m)).objective;
      const double wider = -solve(assemble(wide)).objective;
      worst = std::max(worst, wider - base);
      if (!(wider <= base + 1e-9)) ++bad;
    } catch (const Error&) {
      ++errors;
    }
  }
  verdict(6, bad == 0 && errors == 0,
          fmt("50 pairs, max (value_wide - value) %.1e, %d increases, %d errors", worst, bad, errors));
}

void discount_invariance() {
  RandomMarketGenerator gen(7);
  double worst = 0.0, worst_sf = 0.0;
  int bad = 0, errors = 0;
  for (int k = 0; k < 20; ++k) {
    const MarketSpec undiscounted = gen.with_numeraire(gen.market());
    try {
      const MarketSpec image = discount_normalize(undiscounted);
      const ConvexProgram p = assemble(image);
      const KktSolution s = solve(p);
      // Carry the optimal plan back to money terms: c = S0 c^, same holdings.
      PortfolioConsumptionPair plan = pair_of(p, s.x);
      for (int t = 0; t <= image.tree.horizon(); ++t) {
        for (std::size_t j = 0; j < image.tree.atoms(t); ++j) plan.consumption(t, j) *= undiscounted.numeraire_at(t, j);
      }
      const AdaptedProcess sf = self_financing_residual(undiscounted, plan);
      for (int t = 0; t <= image.tree.horizon(); ++t) {
        for (double v : sf.level(t)) worst_sf = std::max(worst_sf, std::abs(v));
      }
      const double diff = std::abs(expected_utility(undiscounted, plan.consumption) - (-s.objective));
      // the program assembled in money terms, solved on its own
      const double direct = -solve(assemble(undiscounted)).objective;
      const double diff2 = std::abs(direct - (-s.objective));
      worst = std::max({worst, diff, diff2});
      if (!(diff <= 1e-8 && diff2 <= 1e-8)) ++bad;
    } catch (const Error&) {
      ++errors;
    }
  }
  verdict(7, bad == 0 && errors == 0 && worst_sf <= 1e-9,
          fmt("20 instances, max value difference %.1e, money-terms plan self-financing residual %.1e, %d errors",
              worst, worst_sf, errors));
}

}  // namespace

int main() {
  fixture_b1();
  fixture_b2();
  random_suite();
  oracle_suite();
  frictionless_degeneration();
  spread_monotonicity();
  discount_invariance();
  for (const auto& [n, line] : lines) std::printf("%s\n", line.c_str());
  std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
