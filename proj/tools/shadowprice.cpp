#include <chrono>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "shadowprice/error.hpp"
#include "shadowprice/random_market.hpp"
#include "shadowprice/runner.hpp"

using namespace shadowprice;

namespace {

std::string error_document(const std::string& source, const RunOutcome& o) {
  nlohmann::ordered_json doc;
  doc["source"] = source;
  doc["exit_code"] = static_cast<int>(o.status);
  doc["error"] = o.message;
  return doc.dump(2) + "\n";
}

int run_certify(const std::vector<std::string>& files, const RunOptions& options, const std::string& format,
                bool batch, unsigned jobs, bool timing) {
  const bool structured = format == "structured";
  const unsigned workers = batch ? (jobs ? jobs : std::max(1u, std::thread::hardware_concurrency())) : 1u;
  const std::vector<RunOutcome> outcomes = certify_batch(files, options, workers);
  const bool many = files.size() > 1;
  if (structured && many) std::cout << "[\n";
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    const RunOutcome& o = outcomes[k];
    if (structured) {
      std::string doc = o.report ? render_structured(*o.report, timing) : error_document(files[k], o);
      if (many) {
        doc.pop_back();
        if (k + 1 < outcomes.size()) doc += ",";
        doc += "\n";
      }
      std::cout << doc;
    } else if (o.report) {
      if (many && k > 0) std::cout << "\n";
      std::cout << render_text(*o.report);
    }
    if (!o.report) {
      const char* kind = o.status == ExitStatus::parse_error ? "parse error" : "solver error";
      std::cerr << files[k] << ": " << kind << ": " << o.message << "\n";
    }
  }
  if (structured && many) std::cout << "]\n";
  return static_cast<int>(combined_status(outcomes));
}

int run_selftest(std::uint64_t seed, int count, double tolerance) {
  RandomMarketGenerator gen(seed);
  SolverOptions solver;
  solver.tolerance = tolerance;
  int invalid = 0;
  int errors = 0;
  const auto start = std::chrono::steady_clock::now();
  for (int k = 0; k < count; ++k) {
    const MarketSpec m = gen.market();
    try {
      const ShadowCertificate cert = certify(m, solver);
      if (!cert.valid) {
        ++invalid;
        const CheckResult* c = cert.check(cert.failed_check);
        std::cout << "instance " << k << ": invalid, " << cert.failed_check;
        if (c != nullptr) std::cout << " = " << c->value << " (limit " << c->threshold << ") " << c->detail;
        std::cout << "\n";
      }
    } catch (const Error& e) {
      ++errors;
      std::cout << "instance " << k << ": solver error: " << e.what() << "\n";
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "selftest seed " << seed << ": " << count << " instances, " << count - invalid - errors
            << " valid, " << invalid << " invalid, " << errors << " solver errors, " << seconds << " s\n";
  if (errors > 0) return static_cast<int>(ExitStatus::solver_error);
  return invalid > 0 ? static_cast<int>(ExitStatus::invalid) : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shadow prices for scenario-tree markets with proportional transaction costs"};
  app.require_subcommand(1);

  std::vector<std::string> files;
  RunOptions options;
  std::string format = "text";
  bool batch = false;
  bool timing = false;
  unsigned jobs = 0;
  CLI::App* certify_cmd = app.add_subcommand("certify", "solve, extract the shadow price and verify it");
  certify_cmd->add_option("files", files, "market description files")->required()->check(CLI::ExistingFile);
  certify_cmd->add_option("--tol", options.tolerance, "KKT residual tolerance")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  certify_cmd->add_flag("--oracle", options.oracle, "cross-check the optimal value by grid search");
  certify_cmd->add_option("--format", format, "output format")
      ->check(CLI::IsMember({"text", "structured"}))
      ->capture_default_str();
  certify_cmd->add_flag("--batch", batch, "certify the files in parallel");
  certify_cmd->add_option("--jobs", jobs, "worker threads for --batch (default: hardware threads)");
  certify_cmd->add_flag("--timing", timing, "include wall time in structured output");

  std::uint64_t seed = 1;
  int count = 200;
  double selftest_tol = 1e-9;
  CLI::App* selftest_cmd = app.add_subcommand("selftest", "certify randomly generated markets");
  selftest_cmd->add_option("--seed", seed, "generator seed")->capture_default_str();
  selftest_cmd->add_option("--count", count, "number of instances")->check(CLI::PositiveNumber)->capture_default_str();
  selftest_cmd->add_option("--tol", selftest_tol, "KKT residual tolerance")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitStatus::parse_error);
  }
  if (*certify_cmd) return run_certify(files, options, format, batch, jobs, timing);
  return run_selftest(seed, count, selftest_tol);
}
