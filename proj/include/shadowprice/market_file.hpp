#pragma once

#include <string>
#include <string_view>

#include "shadowprice/error.hpp"
#include "shadowprice/market.hpp"

namespace shadowprice {

/// Parse failure located in the source text. `line` is 1-based, 0 when the
/// problem is a missing item noticed at end of input.
class ParseFailure : public Error {
 public:
  ParseFailure(std::size_t line, std::string field, const std::string& why);

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

/// Reads a market description (grammar in docs/market_format.md). The result
/// is validated; a numeraire section is kept as given, so callers decide when
/// to discount. Throws ParseFailure.
MarketSpec parse_market(std::string_view text);

/// Reads and parses a file. Unreadable files throw ParseFailure at line 0.
MarketSpec load_market(const std::string& path);

}  // namespace shadowprice
