#include "shadowprice/scenario_tree.hpp"

#include <cmath>
#include <sstream>

#include "shadowprice/error.hpp"

namespace shadowprice {

namespace {

constexpr double kAdditivityTolerance = 1e-12;

std::string atom_name(std::size_t t, std::size_t j) {
  std::ostringstream os;
  os << "atom (t=" << t << ", j=" << j << ")";
  return os.str();
}

}  // namespace

ScenarioTree ScenarioTree::build(const std::vector<std::vector<LevelEntry>>& levels) {
  if (levels.empty() || levels[0].size() != 1) {
    throw Error(ErrorCode::OrphanAtom, "level 0 must contain exactly one root atom");
  }
  if (std::abs(levels[0][0].probability - 1.0) > kAdditivityTolerance) {
    throw Error(ErrorCode::ChildSumMismatch, "root probability must be 1");
  }

  ScenarioTree tree;
  const std::size_t depth = levels.size();
  tree.probability_.resize(depth);
  tree.parent_.resize(depth);
  tree.first_child_.resize(depth);
  tree.child_count_.resize(depth);

  tree.probability_[0] = {1.0};
  tree.parent_[0] = {0};

  for (std::size_t t = 1; t < depth; ++t) {
    const auto& level = levels[t];
    const std::size_t parents = levels[t - 1].size();
    tree.first_child_[t - 1].assign(parents, 0);
    tree.child_count_[t - 1].assign(parents, 0);
    std::vector<double> child_sum(parents, 0.0);

    std::size_t previous_parent = 0;
    for (std::size_t j = 0; j < level.size(); ++j) {
      const auto& entry = level[j];
      if (!(entry.probability > 0.0) || !std::isfinite(entry.probability)) {
        throw Error(ErrorCode::NonpositiveProbability, atom_name(t, j) + " has probability <= 0");
      }
      if (entry.parent >= parents) {
        throw Error(ErrorCode::OrphanAtom, atom_name(t, j) + " references a missing parent");
      }
      if (entry.parent < previous_parent) {
        throw Error(ErrorCode::UnorderedLevel,
                    atom_name(t, j) + ": parent indices must be nondecreasing within a level");
      }
      if (tree.child_count_[t - 1][entry.parent] == 0) tree.first_child_[t - 1][entry.parent] = j;
      ++tree.child_count_[t - 1][entry.parent];
      child_sum[entry.parent] += entry.probability;
      previous_parent = entry.parent;
    }

    for (std::size_t p = 0; p < parents; ++p) {
      const double parent_prob = tree.probability_[t - 1][p];
      if (tree.child_count_[t - 1][p] == 0) {
        throw Error(ErrorCode::OrphanAtom, atom_name(t - 1, p) + " has no children");
      }
      if (std::abs(child_sum[p] - parent_prob) > kAdditivityTolerance) {
        std::ostringstream os;
        os << "children of " << atom_name(t - 1, p) << " sum to " << child_sum[p] << ", parent has "
           << parent_prob;
        throw Error(ErrorCode::ChildSumMismatch, os.str());
      }
    }

    tree.probability_[t].resize(level.size());
    tree.parent_[t].resize(level.size());
    for (std::size_t j = 0; j < level.size(); ++j) {
      const std::size_t p = level[j].parent;
      tree.parent_[t][j] = p;
      tree.probability_[t][j] = level[j].probability * (tree.probability_[t - 1][p] / child_sum[p]);
    }
  }
  tree.first_child_[depth - 1].assign(levels[depth - 1].size(), 0);
  tree.child_count_[depth - 1].assign(levels[depth - 1].size(), 0);

  // Terminal ranges, bottom up.
  tree.terminal_begin_.resize(depth);
  tree.terminal_end_.resize(depth);
  const std::size_t last = depth - 1;
  tree.terminal_begin_[last].resize(tree.probability_[last].size());
  tree.terminal_end_[last].resize(tree.probability_[last].size());
  for (std::size_t j = 0; j < tree.probability_[last].size(); ++j) {
    tree.terminal_begin_[last][j] = j;
    tree.terminal_end_[last][j] = j + 1;
  }
  for (std::size_t t = last; t-- > 0;) {
    const std::size_t m = tree.probability_[t].size();
    tree.terminal_begin_[t].resize(m);
    tree.terminal_end_[t].resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t first = tree.first_child_[t][j];
      const std::size_t lastc = first + tree.child_count_[t][j] - 1;
      tree.terminal_begin_[t][j] = tree.terminal_begin_[t + 1][first];
      tree.terminal_end_[t][j] = tree.terminal_end_[t + 1][lastc];
    }
  }

  tree.level_offset_.assign(depth + 1, 0);
  for (std::size_t t = 0; t < depth; ++t) {
    tree.level_offset_[t + 1] = tree.level_offset_[t] + tree.probability_[t].size();
  }
  return tree;
}

std::size_t ScenarioTree::ancestor(int t, std::size_t j, int s) const {
  for (int level = t; level > s; --level) j = parent_[level][j];
  return j;
}

std::vector<std::vector<LevelEntry>> ScenarioTree::levels() const {
  std::vector<std::vector<LevelEntry>> out(probability_.size());
  for (std::size_t t = 0; t < probability_.size(); ++t) {
    for (std::size_t j = 0; j < probability_[t].size(); ++j) {
      out[t].push_back({t == 0 ? 0 : parent_[t][j], probability_[t][j]});
    }
  }
  return out;
}

AdaptedProcess::AdaptedProcess(const ScenarioTree& tree, std::size_t dim, double fill) : dim_(dim) {
  const int T = tree.horizon();
  count_.resize(T + 1);
  values_.resize(T + 1);
  for (int t = 0; t <= T; ++t) {
    count_[t] = tree.atoms(t);
    values_[t].assign(tree.atoms(t) * dim, fill);
  }
}

bool AdaptedProcess::conforms(const ScenarioTree& tree, std::size_t dim) const {
  if (dim_ != dim || horizon() != tree.horizon()) return false;
  for (int t = 0; t <= tree.horizon(); ++t) {
    if (count_[t] != tree.atoms(t)) return false;
  }
  return true;
}

PredictableProcess::PredictableProcess(const ScenarioTree& tree, std::size_t dim, double fill)
    : dim_(dim) {
  const int last = tree.horizon() + 1;
  count_.resize(last + 1);
  values_.resize(last + 1);
  for (int t = 0; t <= last; ++t) {
    count_[t] = tree.atoms(level_of(t));
    values_[t].assign(count_[t] * dim, fill);
  }
}

bool PredictableProcess::conforms(const ScenarioTree& tree, std::size_t dim) const {
  if (dim_ != dim || last_time() != tree.horizon() + 1) return false;
  for (int t = 0; t <= last_time(); ++t) {
    if (count_[t] != tree.atoms(level_of(t))) return false;
  }
  return true;
}

std::vector<double> conditional_expectation(const ScenarioTree& tree, std::span<const double> values,
                                            std::size_t dim, int s, int t) {
  if (s < 0 || s > tree.horizon() || t < 0 || t > s) {
    throw Error(ErrorCode::LevelMismatch, "conditional expectation needs 0 <= t <= s <= T");
  }
  if (values.size() != tree.atoms(s) * dim) {
    throw Error(ErrorCode::LevelMismatch, "values do not live on level s");
  }
  std::vector<double> out(tree.atoms(t) * dim, 0.0);
  for (std::size_t g = 0; g < tree.atoms(s); ++g) {
    const std::size_t j = tree.ancestor(s, g, t);
    const double w = tree.probability(s, g);
    for (std::size_t i = 0; i < dim; ++i) out[j * dim + i] += w * values[g * dim + i];
  }
  for (std::size_t j = 0; j < tree.atoms(t); ++j) {
    const double p = tree.probability(t, j);
    for (std::size_t i = 0; i < dim; ++i) out[j * dim + i] /= p;
  }
  if (t == s) {
    // The identity must be exact, not just accurate to rounding.
    return {values.begin(), values.end()};
  }
  return out;
}

std::vector<double> conditional_expectation(const ScenarioTree& tree, const AdaptedProcess& x, int s,
                                            int t) {
  if (x.horizon() != tree.horizon()) {
    throw Error(ErrorCode::LevelMismatch, "process horizon differs from tree horizon");
  }
  if (s < 0 || s > tree.horizon()) throw Error(ErrorCode::LevelMismatch, "time s out of range");
  return conditional_expectation(tree, x.level(s), x.dim(), s, t);
}

}  // namespace shadowprice
