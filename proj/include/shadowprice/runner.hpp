#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shadowprice/report.hpp"

namespace shadowprice {

enum class ExitStatus { valid = 0, parse_error = 1, invalid = 2, solver_error = 3 };

struct RunOptions {
  double tolerance = 1e-9;
  bool oracle = false;
};

struct RunOutcome {
  ExitStatus status = ExitStatus::valid;
  std::optional<Report> report;  // present on valid and invalid
  std::string message;           // parse or solver error text
};

/// Parse, certify and (optionally) cross-check against the grid oracle.
RunOutcome certify_text(std::string_view text, const std::string& source, const RunOptions& options = {});
RunOutcome certify_file(const std::string& path, const RunOptions& options = {});

/// Independent files on up to `workers` threads; results in input order.
std::vector<RunOutcome> certify_batch(const std::vector<std::string>& paths, const RunOptions& options,
                                      unsigned workers);

/// Worst status of a batch: solver error, then invalid, then parse error.
ExitStatus combined_status(const std::vector<RunOutcome>& outcomes);

}  // namespace shadowprice
