#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shadowprice/cps.hpp"

namespace shadowprice {

/// Consumption and the consistent price system at one atom.
struct AtomRecord {
  int t = 0;
  std::size_t j = 0;
  double probability = 0.0;
  double consumption = 0.0;
  double q = 0.0;        // Q~ of the atom
  double density = 0.0;  // Z~_t

  friend bool operator==(const AtomRecord&, const AtomRecord&) = default;
};

/// Trade decided on atom (t, j) for asset i, executed at time t + 1.
struct TradeRecord {
  int t = 0;
  std::size_t j = 0;
  std::size_t i = 0;
  double buy = 0.0;
  double sell = 0.0;
  double holding = 0.0;  // shares held after the trade
  double lambda_buy = 0.0;
  double lambda_sell = 0.0;

  friend bool operator==(const TradeRecord&, const TradeRecord&) = default;
};

struct PriceRecord {
  int t = 0;
  std::size_t j = 0;
  std::size_t i = 0;
  double bid = 0.0;
  double ask = 0.0;
  double shadow = 0.0;
  std::string provenance;

  friend bool operator==(const PriceRecord&, const PriceRecord&) = default;
};

struct CheckRecord {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
  std::string detail;

  friend bool operator==(const CheckRecord&, const CheckRecord&) = default;
};

struct OracleRecord {
  bool ran = false;
  double value = 0.0;
  double difference = 0.0;
  double step = 0.0;
  long long evaluations = 0;
  bool passed = false;
  std::string note;

  friend bool operator==(const OracleRecord&, const OracleRecord&) = default;
};

inline constexpr double kOracleAgreement = 1e-4;

/// Everything a certify run produced. Reals are stored rounded to 12
/// significant digits so that the structured form round-trips exactly.
struct Report {
  std::string source;
  std::string input_hash;  // FNV-1a 64 of the input text, hex
  double tolerance = 0.0;
  bool valid = false;
  std::string failed_check;
  int horizon = 0;
  std::size_t assets = 0;
  bool discounted = false;  // input carried a numeraire
  bool frictionless_input = false;
  bool unique_shadow = true;
  double value_costs = 0.0;
  double value_frictionless = 0.0;
  double alpha = 0.0;
  std::vector<double> nu;  // per terminal atom
  std::vector<double> mu;  // per terminal atom and asset, atom-major
  std::vector<AtomRecord> atoms;
  std::vector<TradeRecord> trades;
  std::vector<PriceRecord> prices;
  std::vector<CheckRecord> checks;
  int iterations_costs = 0;
  int iterations_frictionless = 0;
  std::optional<OracleRecord> oracle;
  double wall_time = 0.0;  // seconds; left out of the structured form unless asked for

  friend bool operator==(const Report&, const Report&) = default;
};

double round12(double x);
std::string fnv1a_hex(std::string_view text);

Report make_report(const ShadowCertificate& cert, std::string source, std::string_view input, double tolerance,
                   bool discounted);

/// JSON document; `timing` adds the wall time (which breaks byte equality
/// between runs).
std::string render_structured(const Report& report, bool timing = false);
/// Inverse of render_structured. Throws ParseFailure on malformed input.
Report parse_structured(std::string_view text);

std::string render_text(const Report& report);

}  // namespace shadowprice
