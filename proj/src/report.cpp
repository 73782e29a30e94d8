#include "shadowprice/report.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "shadowprice/market_file.hpp"

namespace shadowprice {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kFormat = "shadowprice-report/1";

// JSON has no infinities; non-finite reals travel as strings.
json real(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

double real_value(const json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  const std::string s = v.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw ParseFailure(0, key, "not a number: '" + s + "'");
}

double real_of(const json& j, const char* key) { return real_value(j.at(key), key); }
double real_of(const json& j, std::size_t k) { return real_value(j.at(k), "multipliers"); }

std::string fixed12(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

}  // namespace

double round12(double x) {
  if (!std::isfinite(x)) return x;
  return std::strtod(fixed12(x).c_str(), nullptr) + 0.0;  // no negative zero
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

Report make_report(const ShadowCertificate& cert, std::string source, std::string_view input, double tolerance,
                   bool discounted) {
  const MarketSpec& m = cert.market;
  const ScenarioTree& tree = m.tree;
  const int T = tree.horizon();
  Report r;
  r.source = std::move(source);
  r.input_hash = fnv1a_hex(input);
  r.tolerance = round12(tolerance);
  r.valid = cert.valid;
  r.failed_check = cert.failed_check;
  r.horizon = T;
  r.assets = m.assets;
  r.discounted = discounted;
  r.frictionless_input = cert.frictionless_input;
  r.unique_shadow = !cert.degenerate_duals;
  r.value_costs = round12(cert.value_costs);
  r.value_frictionless = round12(cert.value_frictionless);
  r.alpha = round12(cert.cps.alpha);
  r.iterations_costs = cert.costs_solution.iterations;
  r.iterations_frictionless = cert.frictionless_solution.iterations;

  const Eigen::VectorXd& nu = cert.costs_solution.nu;
  for (Eigen::Index k = 0; k < nu.size(); ++k) {
    r.nu.push_back(round12(nu[k]));
    for (std::size_t i = 0; i < m.assets; ++i) r.mu.push_back(round12(cert.costs_solution.mu(k, static_cast<Eigen::Index>(i))));
  }

  const ConvexProgram program = assemble(m);
  const ProgramLayout& layout = program.layout;
  const PortfolioConsumptionPair pair = pair_of(program, cert.costs_solution.x);
  const bool have_cps = !cert.cps.q.empty();
  const bool have_shadow = cert.shadow.price.dim() == m.assets && cert.shadow.price.horizon() == T;
  for (int t = 0; t <= T; ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      AtomRecord a;
      a.t = t;
      a.j = j;
      a.probability = round12(tree.probability(t, j));
      a.consumption = round12(cert.costs_solution.consumption(layout, t, j));
      a.q = have_cps ? round12(cert.cps.q_of(tree, t, j)) : 0.0;
      a.density = have_cps ? round12(cert.cps.density(t, j)) : 0.0;
      r.atoms.push_back(a);
      for (std::size_t i = 0; i < m.assets; ++i) {
        TradeRecord tr;
        tr.t = t;
        tr.j = j;
        tr.i = i;
        tr.buy = round12(cert.costs_solution.buy(layout, t + 1, j, i));
        tr.sell = round12(cert.costs_solution.sell(layout, t + 1, j, i));
        tr.holding = round12(pair.shares(t + 1, j, i));
        tr.lambda_buy = round12(cert.costs_solution.lambda_buy[layout.trade_slot(Direction::buy, t + 1, j, i)]);
        tr.lambda_sell = round12(cert.costs_solution.lambda_sell[layout.trade_slot(Direction::buy, t + 1, j, i)]);
        r.trades.push_back(tr);
        if (!have_shadow) continue;
        PriceRecord p;
        p.t = t;
        p.j = j;
        p.i = i;
        p.bid = round12(m.bid(t, j, i));
        p.ask = round12(m.ask(t, j, i));
        p.shadow = round12(cert.shadow.price(t, j, i));
        p.provenance = std::string(to_string(cert.shadow.provenance_at(t, j, i)));
        r.prices.push_back(p);
      }
    }
  }
  for (const CheckResult& c : cert.checks) {
    r.checks.push_back({c.name, round12(c.value), round12(c.threshold), c.passed, c.detail});
  }
  return r;
}

std::string render_structured(const Report& r, bool timing) {
  json doc;
  doc["format"] = kFormat;
  doc["source"] = r.source;
  doc["input_hash"] = r.input_hash;
  doc["tolerance"] = real(r.tolerance);
  doc["valid"] = r.valid;
  doc["failed_check"] = r.failed_check;
  doc["horizon"] = r.horizon;
  doc["assets"] = r.assets;
  doc["discounted"] = r.discounted;
  doc["frictionless_input"] = r.frictionless_input;
  doc["unique_shadow"] = r.unique_shadow;
  doc["value_costs"] = real(r.value_costs);
  doc["value_frictionless"] = real(r.value_frictionless);
  doc["alpha"] = real(r.alpha);
  json nus = json::array();
  for (double v : r.nu) nus.push_back(real(v));
  json mus = json::array();
  for (double v : r.mu) mus.push_back(real(v));
  doc["multipliers"] = {{"nu", std::move(nus)}, {"mu", std::move(mus)}};
  doc["iterations"] = {{"costs", r.iterations_costs}, {"frictionless", r.iterations_frictionless}};
  json atoms = json::array();
  for (const AtomRecord& a : r.atoms) {
    atoms.push_back({{"t", a.t},
                     {"j", a.j},
                     {"probability", real(a.probability)},
                     {"consumption", real(a.consumption)},
                     {"q", real(a.q)},
                     {"density", real(a.density)}});
  }
  doc["atoms"] = std::move(atoms);
  json trades = json::array();
  for (const TradeRecord& tr : r.trades) {
    trades.push_back({{"t", tr.t},
                      {"j", tr.j},
                      {"i", tr.i},
                      {"buy", real(tr.buy)},
                      {"sell", real(tr.sell)},
                      {"holding", real(tr.holding)},
                      {"lambda_buy", real(tr.lambda_buy)},
                      {"lambda_sell", real(tr.lambda_sell)}});
  }
  doc["trades"] = std::move(trades);
  json prices = json::array();
  for (const PriceRecord& p : r.prices) {
    prices.push_back({{"t", p.t},
                      {"j", p.j},
                      {"i", p.i},
                      {"bid", real(p.bid)},
                      {"ask", real(p.ask)},
                      {"shadow", real(p.shadow)},
                      {"provenance", p.provenance}});
  }
  doc["shadow_price"] = std::move(prices);
  json checks = json::array();
  for (const CheckRecord& c : r.checks) {
    checks.push_back({{"name", c.name},
                      {"value", real(c.value)},
                      {"threshold", real(c.threshold)},
                      {"passed", c.passed},
                      {"detail", c.detail}});
  }
  doc["checks"] = std::move(checks);
  if (r.oracle) {
    const OracleRecord& o = *r.oracle;
    doc["oracle"] = {{"ran", o.ran},
                     {"value", real(o.value)},
                     {"difference", real(o.difference)},
                     {"step", real(o.step)},
                     {"evaluations", o.evaluations},
                     {"passed", o.passed},
                     {"note", o.note}};
  }
  if (timing) doc["wall_time"] = real(r.wall_time);
  return doc.dump(2) + "\n";
}

Report parse_structured(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseFailure(0, "report", e.what());
  }
  try {
    if (doc.at("format") != kFormat) throw ParseFailure(0, "format", "unknown report format");
    Report r;
    r.source = doc.at("source").get<std::string>();
    r.input_hash = doc.at("input_hash").get<std::string>();
    r.tolerance = real_of(doc, "tolerance");
    r.valid = doc.at("valid").get<bool>();
    r.failed_check = doc.at("failed_check").get<std::string>();
    r.horizon = doc.at("horizon").get<int>();
    r.assets = doc.at("assets").get<std::size_t>();
    r.discounted = doc.at("discounted").get<bool>();
    r.frictionless_input = doc.at("frictionless_input").get<bool>();
    r.unique_shadow = doc.at("unique_shadow").get<bool>();
    r.value_costs = real_of(doc, "value_costs");
    r.value_frictionless = real_of(doc, "value_frictionless");
    r.alpha = real_of(doc, "alpha");
    const json& mult = doc.at("multipliers");
    for (std::size_t k = 0; k < mult.at("nu").size(); ++k) r.nu.push_back(real_of(mult.at("nu"), k));
    for (std::size_t k = 0; k < mult.at("mu").size(); ++k) r.mu.push_back(real_of(mult.at("mu"), k));
    r.iterations_costs = doc.at("iterations").at("costs").get<int>();
    r.iterations_frictionless = doc.at("iterations").at("frictionless").get<int>();
    for (const json& a : doc.at("atoms")) {
      r.atoms.push_back({a.at("t").get<int>(), a.at("j").get<std::size_t>(), real_of(a, "probability"),
                         real_of(a, "consumption"), real_of(a, "q"), real_of(a, "density")});
    }
    for (const json& tr : doc.at("trades")) {
      r.trades.push_back({tr.at("t").get<int>(), tr.at("j").get<std::size_t>(), tr.at("i").get<std::size_t>(),
                          real_of(tr, "buy"), real_of(tr, "sell"), real_of(tr, "holding"),
                          real_of(tr, "lambda_buy"), real_of(tr, "lambda_sell")});
    }
    for (const json& p : doc.at("shadow_price")) {
      r.prices.push_back({p.at("t").get<int>(), p.at("j").get<std::size_t>(), p.at("i").get<std::size_t>(),
                          real_of(p, "bid"), real_of(p, "ask"), real_of(p, "shadow"),
                          p.at("provenance").get<std::string>()});
    }
    for (const json& c : doc.at("checks")) {
      r.checks.push_back({c.at("name").get<std::string>(), real_of(c, "value"), real_of(c, "threshold"),
                          c.at("passed").get<bool>(), c.at("detail").get<std::string>()});
    }
    if (doc.contains("oracle")) {
      const json& o = doc.at("oracle");
      r.oracle = OracleRecord{o.at("ran").get<bool>(),      real_of(o, "value"),
                              real_of(o, "difference"),     real_of(o, "step"),
                              o.at("evaluations").get<long long>(), o.at("passed").get<bool>(),
                              o.at("note").get<std::string>()};
    }
    if (doc.contains("wall_time")) r.wall_time = real_of(doc, "wall_time");
    return r;
  } catch (const json::exception& e) {
    throw ParseFailure(0, "report", e.what());
  }
}

std::string render_text(const Report& r) {
  std::ostringstream os;
  os << "source       " << r.source << "  (hash " << r.input_hash << ")\n";
  os << "result       " << (r.valid ? "VALID" : "INVALID");
  if (!r.failed_check.empty()) os << "  first failed check: " << r.failed_check;
  os << "\n";
  os << "market       T=" << r.horizon << " d=" << r.assets << (r.discounted ? " (discounted by numeraire)" : "")
     << (r.frictionless_input ? " frictionless" : "") << "\n";
  os << "value        with costs " << fixed12(r.value_costs) << "   frictionless at S~ "
     << fixed12(r.value_frictionless) << "\n";
  os << "alpha        " << fixed12(r.alpha) << (r.unique_shadow ? "" : "   (duals degenerate, S~ not unique)") << "\n";
  os << "iterations   " << r.iterations_costs << " + " << r.iterations_frictionless << "\n";
  os << "wall time    " << std::setprecision(3) << r.wall_time << " s\n";

  os << "\nplan\n";
  os << "  t  atom  asset          buy         sell      holding\n";
  for (const TradeRecord& tr : r.trades) {
    os << std::setw(3) << tr.t << std::setw(6) << tr.j << std::setw(7) << tr.i << std::setw(13)
       << std::setprecision(6) << tr.buy << std::setw(13) << tr.sell << std::setw(13) << tr.holding << "\n";
  }
  os << "\nconsumption and consistent price system\n";
  os << "  t  atom         P   consumption          Q~          Z~\n";
  for (const AtomRecord& a : r.atoms) {
    os << std::setw(3) << a.t << std::setw(6) << a.j << std::setw(10) << std::setprecision(4) << a.probability
       << std::setw(14) << std::setprecision(8) << a.consumption << std::setw(12) << std::setprecision(6) << a.q
       << std::setw(12) << a.density << "\n";
  }
  if (!r.prices.empty()) {
    os << "\nshadow price\n";
    os << "  t  atom  asset         bid           S~          ask  provenance\n";
    for (const PriceRecord& p : r.prices) {
      os << std::setw(3) << p.t << std::setw(6) << p.j << std::setw(7) << p.i << std::setprecision(8)
         << std::setw(12) << p.bid << std::setw(13) << p.shadow << std::setw(13) << p.ask << "  " << p.provenance
         << "\n";
    }
  }
  os << "\nchecks\n";
  for (const CheckRecord& c : r.checks) {
    os << "  " << (c.passed ? "pass " : "FAIL ") << std::left << std::setw(20) << c.name << std::right
       << std::setprecision(3) << std::scientific << std::setw(11) << c.value << " <= " << c.threshold
       << std::defaultfloat;
    if (!c.detail.empty()) os << "  " << c.detail;
    os << "\n";
  }
  if (r.oracle) {
    const OracleRecord& o = *r.oracle;
    os << "\noracle       ";
    if (o.ran) {
      os << (o.passed ? "pass " : "FAIL ") << "grid value " << fixed12(o.value) << "  difference "
         << std::setprecision(3) << std::scientific << o.difference << std::defaultfloat << "  step " << o.step
         << "  evaluations " << o.evaluations;
    } else {
      os << "skipped: " << o.note;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace shadowprice
