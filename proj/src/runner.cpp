#include "shadowprice/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "shadowprice/market_file.hpp"

namespace shadowprice {

RunOutcome certify_text(std::string_view text, const std::string& source, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  RunOutcome out;
  MarketSpec market;
  try {
    market = parse_market(text);
  } catch (const Error& e) {
    out.status = ExitStatus::parse_error;
    out.message = e.what();
    return out;
  }
  SolverOptions solver;
  solver.tolerance = options.tolerance;
  try {
    solver.validate();
    const ShadowCertificate cert = certify(market, solver);
    Report report = make_report(cert, source, text, options.tolerance, market.has_numeraire());
    if (options.oracle) {
      OracleRecord o;
      try {
        const OracleResult grid = brute_force_value(cert.market);
        o.ran = true;
        o.value = round12(grid.value);
        o.difference = round12(std::abs(grid.value - cert.value_costs));
        o.step = grid.step;
        o.evaluations = grid.evaluations;
        o.passed = o.difference <= kOracleAgreement;
        o.note = grid.note;
        if (!o.passed && report.failed_check.empty()) report.failed_check = "oracle";
        report.valid = report.valid && o.passed;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::InstanceTooLarge) throw;
        o.note = e.what();
      }
      report.oracle = o;
    }
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.status = report.valid ? ExitStatus::valid : ExitStatus::invalid;
    out.report = std::move(report);
  } catch (const std::exception& e) {
    out.status = ExitStatus::solver_error;
    out.message = e.what();
  }
  return out;
}

RunOutcome certify_file(const std::string& path, const RunOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    RunOutcome out;
    out.status = ExitStatus::parse_error;
    out.message = "cannot read '" + path + "'";
    return out;
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return certify_text(buf.str(), path, options);
}

std::vector<RunOutcome> certify_batch(const std::vector<std::string>& paths, const RunOptions& options,
                                      unsigned workers) {
  std::vector<RunOutcome> out(paths.size());
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t k = next++; k < paths.size(); k = next++) out[k] = certify_file(paths[k], options);
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(paths.size())));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  return out;
}

ExitStatus combined_status(const std::vector<RunOutcome>& outcomes) {
  const auto rank = [](ExitStatus s) {
    switch (s) {
      case ExitStatus::solver_error: return 3;
      case ExitStatus::invalid: return 2;
      case ExitStatus::parse_error: return 1;
      case ExitStatus::valid: return 0;
    }
    return 0;
  };
  ExitStatus worst = ExitStatus::valid;
  for (const auto& o : outcomes) {
    if (rank(o.status) > rank(worst)) worst = o.status;
  }
  return worst;
}

}  // namespace shadowprice
