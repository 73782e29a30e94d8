#include "shadowprice/market_file.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

namespace shadowprice {

namespace {

std::string located(std::size_t line, const std::string& field, const std::string& why) {
  std::ostringstream os;
  if (line > 0) {
    os << "line " << line;
  } else {
    os << "end of input";
  }
  os << ", field '" << field << "': " << why;
  return os.str();
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto start = s.find_first_not_of(" \t\r", pos);
    if (start == std::string_view::npos) break;
    auto end = s.find_first_of(" \t\r", start);
    if (end == std::string_view::npos) end = s.size();
    out.push_back(s.substr(start, end - start));
    pos = end;
  }
  return out;
}

// key [index] = values
struct Entry {
  std::size_t line = 0;
  std::string key;
  std::optional<long> index;
  std::vector<std::string_view> values;

  std::string field() const { return index ? key + " " + std::to_string(*index) : key; }
  [[noreturn]] void fail(const std::string& why) const { throw ParseFailure(line, field(), why); }

  double number(std::size_t k) const {
    if (k >= values.size()) fail("missing value");
    return parse_number(values[k]);
  }
  double parse_number(std::string_view text) const {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
      fail("not a finite number: '" + std::string(text) + "'");
    }
    return v;
  }
  long integer(std::string_view text) const {
    long v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) fail("not an integer: '" + std::string(text) + "'");
    return v;
  }
  std::vector<double> numbers() const {
    std::vector<double> out;
    for (auto v : values) out.push_back(parse_number(v));
    return out;
  }
  double single() const {
    if (values.size() != 1) fail("expected exactly one value");
    return number(0);
  }
  void require_index(bool wanted) const {
    if (wanted && !index) fail("needs a time index");
    if (!wanted && index) fail("takes no index");
  }
};

struct Section {
  std::size_t line = 0;
  std::vector<Entry> entries;
};

std::map<std::string, Section> split_sections(std::string_view text) {
  static const char* const known[] = {"tree", "assets", "endowment", "utility", "numeraire"};
  std::map<std::string, Section> sections;
  Section* current = nullptr;
  std::size_t line = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(pos, end - pos);
    pos = end + 1;
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string_view s = trim(raw);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ParseFailure(line, "section", "unterminated section header");
      const std::string name(trim(s.substr(1, s.size() - 2)));
      bool ok = false;
      for (const char* k : known) ok = ok || name == k;
      if (!ok) throw ParseFailure(line, "section", "unknown section '" + name + "'");
      if (sections.count(name)) throw ParseFailure(line, "section", "section '" + name + "' repeated");
      current = &sections[name];
      current->line = line;
      continue;
    }
    if (current == nullptr) throw ParseFailure(line, "section", "content before the first section header");
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ParseFailure(line, std::string(words(s).front()), "expected 'key = value'");
    const auto lhs = words(s.substr(0, eq));
    Entry e;
    e.line = line;
    if (lhs.empty() || lhs.size() > 2) throw ParseFailure(line, std::string(trim(s.substr(0, eq))), "malformed key");
    e.key = std::string(lhs[0]);
    if (lhs.size() == 2) e.index = e.integer(lhs[1]);
    e.values = words(s.substr(eq + 1));
    if (e.values.empty()) e.fail("missing value");
    current->entries.push_back(std::move(e));
  }
  return sections;
}

const Section& require(const std::map<std::string, Section>& sections, const std::string& name) {
  const auto it = sections.find(name);
  if (it == sections.end()) throw ParseFailure(0, name, "section [" + name + "] is missing");
  return it->second;
}

ScenarioTree parse_tree(const Section& sec) {
  std::optional<long> horizon;
  std::map<long, const Entry*> rows;
  for (const Entry& e : sec.entries) {
    if (e.key == "horizon") {
      e.require_index(false);
      horizon = e.integer(e.values.at(0));
      if (*horizon < 0 || e.values.size() != 1) e.fail("horizon must be a single integer >= 0");
    } else if (e.key == "level") {
      e.require_index(true);
      if (*e.index < 1) e.fail("levels are numbered from 1 (level 0 is the root)");
      if (rows.count(*e.index)) e.fail("level given twice");
      rows[*e.index] = &e;
    } else {
      e.fail("unknown key in [tree]");
    }
  }
  const long T = horizon ? *horizon : static_cast<long>(rows.size());
  std::vector<std::vector<LevelEntry>> levels{{{0, 1.0}}};
  for (long t = 1; t <= T; ++t) {
    const auto it = rows.find(t);
    if (it == rows.end()) throw ParseFailure(sec.line, "level " + std::to_string(t), "level missing");
    const Entry& e = *it->second;
    std::vector<LevelEntry> level;
    for (auto v : e.values) {
      const auto colon = v.find(':');
      if (colon == std::string_view::npos) e.fail("atoms are written parent:probability");
      const long parent = e.integer(v.substr(0, colon));
      if (parent < 0) e.fail("negative parent index");
      level.push_back({static_cast<std::size_t>(parent), e.parse_number(v.substr(colon + 1))});
    }
    levels.push_back(std::move(level));
  }
  for (const auto& [t, e] : rows) {
    if (t > T) e->fail("level beyond the declared horizon");
  }
  try {
    return ScenarioTree::build(levels);
  } catch (const Error& err) {
    throw ParseFailure(sec.line, "tree", err.what());
  }
}

AdaptedProcess level_values(const ScenarioTree& tree, std::size_t d, const std::map<long, const Entry*>& rows,
                            const Section& sec, const std::string& key) {
  AdaptedProcess out(tree, d);
  for (int t = 0; t <= tree.horizon(); ++t) {
    const auto it = rows.find(t);
    if (it == rows.end()) throw ParseFailure(sec.line, key + " " + std::to_string(t), "values missing");
    const Entry& e = *it->second;
    const std::vector<double> v = e.numbers();
    if (v.size() != tree.atoms(t) * d) {
      e.fail("expected " + std::to_string(tree.atoms(t) * d) + " values (atoms x assets), got " +
             std::to_string(v.size()));
    }
    for (std::size_t k = 0; k < v.size(); ++k) out(t, k / d, k % d) = v[k];
  }
  for (const auto& [t, e] : rows) {
    if (t < 0 || t > tree.horizon()) e->fail("time outside 0..T");
  }
  return out;
}

void parse_assets(const Section& sec, MarketSpec& m) {
  std::optional<long> count;
  std::map<std::string, std::map<long, const Entry*>> rows;
  std::map<std::string, const Entry*> rate;
  for (const Entry& e : sec.entries) {
    if (e.key == "count") {
      e.require_index(false);
      count = e.integer(e.values.at(0));
      if (*count < 1 || e.values.size() != 1) e.fail("asset count must be a single integer >= 1");
    } else if (e.key == "bid" || e.key == "ask" || e.key == "mid") {
      e.require_index(true);
      if (rows[e.key].count(*e.index)) e.fail("given twice");
      rows[e.key][*e.index] = &e;
    } else if (e.key == "cost_buy" || e.key == "cost_sell") {
      const std::string k = e.field();
      if (rate.count(k)) e.fail("given twice");
      rate[k] = &e;
    } else {
      e.fail("unknown key in [assets]");
    }
  }
  if (!count) throw ParseFailure(sec.line, "count", "asset count missing");
  m.assets = static_cast<std::size_t>(*count);
  const bool quoted = rows.count("bid") || rows.count("ask");
  if (quoted && rows.count("mid")) throw ParseFailure(sec.line, "mid", "give either bid/ask or mid, not both");
  if (quoted) {
    if (!rate.empty()) rate.begin()->second->fail("cost rates only apply to the mid form");
    m.bid = level_values(m.tree, m.assets, rows["bid"], sec, "bid");
    m.ask = level_values(m.tree, m.assets, rows["ask"], sec, "ask");
    return;
  }
  if (!rows.count("mid")) throw ParseFailure(sec.line, "bid", "prices missing: give bid/ask or mid");
  const AdaptedProcess mid = level_values(m.tree, m.assets, rows["mid"], sec, "mid");
  // Per-level rates override the global one.
  const auto rate_at = [&](const std::string& key, int t) {
    const Entry* e = nullptr;
    if (auto it = rate.find(key + " " + std::to_string(t)); it != rate.end()) {
      e = it->second;
    } else if (auto g = rate.find(key); g != rate.end()) {
      e = g->second;
    }
    if (e == nullptr) return 0.0;
    const double r = e->single();
    if (key == "cost_buy" && !(r >= 0.0)) e->fail("purchase cost rate must be >= 0, got " + std::string(e->values[0]));
    if (key == "cost_sell" && !(r >= 0.0 && r < 1.0)) {
      e->fail("sale cost rate must lie in [0, 1), got " + std::string(e->values[0]));
    }
    return r;
  };
  for (const auto& [k, e] : rate) {
    if (e->index && (*e->index < 0 || *e->index > m.tree.horizon())) e->fail("time outside 0..T");
    rate_at(e->key, e->index ? static_cast<int>(*e->index) : 0);
  }
  m.bid = AdaptedProcess(m.tree, m.assets);
  m.ask = AdaptedProcess(m.tree, m.assets);
  for (int t = 0; t <= m.tree.horizon(); ++t) {
    const double up = rate_at("cost_buy", t);
    const double down = rate_at("cost_sell", t);
    for (std::size_t j = 0; j < m.tree.atoms(t); ++j) {
      for (std::size_t i = 0; i < m.assets; ++i) {
        if (!(mid(t, j, i) > 0.0)) rows["mid"][t]->fail("mid price must be > 0");
        m.ask(t, j, i) = (1.0 + up) * mid(t, j, i);
        m.bid(t, j, i) = (1.0 - down) * mid(t, j, i);
      }
    }
  }
}

void parse_endowment(const Section& sec, MarketSpec& m) {
  bool bank = false;
  bool shares = false;
  for (const Entry& e : sec.entries) {
    e.require_index(false);
    if (e.key == "bank") {
      if (bank) e.fail("given twice");
      m.bank_endowment = e.single();
      if (m.bank_endowment < 0.0) e.fail("endowment must be >= 0");
      bank = true;
    } else if (e.key == "shares") {
      if (shares) e.fail("given twice");
      m.share_endowment = e.numbers();
      if (m.share_endowment.size() != m.assets) e.fail("expected one value per asset");
      for (double v : m.share_endowment) {
        if (v < 0.0) e.fail("endowment must be >= 0");
      }
      shares = true;
    } else {
      e.fail("unknown key in [endowment]");
    }
  }
  if (!bank) throw ParseFailure(sec.line, "bank", "bank endowment missing");
  if (!shares) m.share_endowment.assign(m.assets, 0.0);
}

UtilityFunction utility_of(const Entry& e) {
  UtilityKind kind{};
  try {
    kind = utility_kind_from_string(e.values[0]);
  } catch (const Error&) {
    e.fail("unknown utility kind '" + std::string(e.values[0]) + "'");
  }
  UtilityFunction u;
  u.kind = kind;
  const bool takes_p = kind == UtilityKind::power || kind == UtilityKind::exponential;
  if (e.values.size() != (takes_p ? 2u : 1u)) {
    e.fail(takes_p ? "utility kind needs its parameter p" : "utility kind takes no parameter");
  }
  if (takes_p) u.p = e.number(1);
  try {
    u.validate();
  } catch (const Error& err) {
    e.fail(err.what());
  }
  return u;
}

void parse_utility(const Section& sec, MarketSpec& m) {
  const Entry* kind = nullptr;
  const Entry* mode = nullptr;
  const Entry* discount = nullptr;
  std::map<long, const Entry*> times;
  for (const Entry& e : sec.entries) {
    const Entry** slot = nullptr;
    if (e.key == "kind") {
      slot = &kind;
    } else if (e.key == "mode") {
      slot = &mode;
    } else if (e.key == "discount") {
      slot = &discount;
    } else if (e.key == "time") {
      e.require_index(true);
      if (times.count(*e.index)) e.fail("given twice");
      if (*e.index < 0 || *e.index > m.tree.horizon()) e.fail("time outside 0..T");
      times[*e.index] = &e;
      continue;
    } else {
      e.fail("unknown key in [utility]");
    }
    e.require_index(false);
    if (*slot != nullptr) e.fail("given twice");
    *slot = &e;
  }
  if (kind == nullptr) throw ParseFailure(sec.line, "kind", "utility kind missing");
  const UtilityFunction base = utility_of(*kind);
  bool terminal = true;
  if (mode != nullptr) {
    if (mode->values.size() != 1 || (mode->values[0] != "terminal" && mode->values[0] != "consumption")) {
      mode->fail("mode is 'terminal' or 'consumption'");
    }
    terminal = mode->values[0] == "terminal";
  }
  double D = 1.0;
  if (discount != nullptr) {
    if (terminal) discount->fail("discounting needs mode = consumption");
    D = discount->single();
    if (!(D > 0.0)) discount->fail("discount factor must be > 0");
  }
  m.utility = terminal ? UtilityProcess::terminal_wealth(m.tree, base)
                       : UtilityProcess::discounted(m.tree, base, D);
  for (const auto& [t, e] : times) {
    UtilityFunction u = utility_of(*e);
    if (!terminal) u.weight *= std::pow(D, static_cast<double>(t));
    for (std::size_t j = 0; j < m.tree.atoms(static_cast<int>(t)); ++j) m.utility(static_cast<int>(t), j) = u;
  }
  const int T = m.tree.horizon();
  if (!m.utility(T, 0).strictly_increasing()) {
    const Entry* at = times.count(T) ? times[T] : kind;
    at->fail("utility at the horizon must be strictly increasing");
  }
}

void parse_numeraire(const Section& sec, MarketSpec& m) {
  m.numeraire = PredictableProcess(m.tree, 1, 1.0);
  std::map<long, const Entry*> rows;
  for (const Entry& e : sec.entries) {
    if (e.key != "time") e.fail("unknown key in [numeraire]");
    e.require_index(true);
    if (*e.index < 0 || *e.index > m.tree.horizon() + 1) e.fail("time outside 0..T+1");
    if (rows.count(*e.index)) e.fail("given twice");
    rows[*e.index] = &e;
  }
  for (int t = 0; t <= m.tree.horizon() + 1; ++t) {
    const auto it = rows.find(t);
    if (it == rows.end()) throw ParseFailure(sec.line, "time " + std::to_string(t), "values missing");
    const Entry& e = *it->second;
    const std::vector<double> v = e.numbers();
    if (v.size() != m.numeraire.atoms(t)) {
      e.fail("expected " + std::to_string(m.numeraire.atoms(t)) + " values (one per atom of level " +
             std::to_string(PredictableProcess::level_of(t)) + ")");
    }
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (!(v[j] > 0.0)) e.fail("bank account price must be > 0");
      m.numeraire(t, j) = v[j];
    }
  }
}

}  // namespace

ParseFailure::ParseFailure(std::size_t line, std::string field, const std::string& why)
    : Error(ErrorCode::ParseError, located(line, field, why)), line_(line), field_(std::move(field)) {}

MarketSpec parse_market(std::string_view text) {
  const auto sections = split_sections(text);
  MarketSpec m;
  m.tree = parse_tree(require(sections, "tree"));
  parse_assets(require(sections, "assets"), m);
  parse_endowment(require(sections, "endowment"), m);
  parse_utility(require(sections, "utility"), m);
  if (const auto it = sections.find("numeraire"); it != sections.end()) parse_numeraire(it->second, m);
  try {
    m.validate();
  } catch (const ParseFailure&) {
    throw;
  } catch (const Error& err) {
    throw ParseFailure(0, "market", err.what());
  }
  return m;
}

MarketSpec load_market(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseFailure(0, "file", "cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_market(buf.str());
}

}  // namespace shadowprice
