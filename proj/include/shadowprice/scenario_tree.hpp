#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace shadowprice {

/// One atom of a level description: index of the parent atom on the previous
/// level and the (unconditional) probability of the atom.
struct LevelEntry {
  std::size_t parent = 0;
  double probability = 0.0;
};

/// Finite filtration as a rooted tree of atoms. Level t holds the atoms
/// F_t^1..F_t^{m_t}; terminal atoms double as the elementary outcomes.
///
/// Atoms are stored breadth first, siblings contiguous. Immutable once built.
class ScenarioTree {
 public:
  /// Validates and builds a tree. `levels[0]` must hold the single root entry.
  /// Children probabilities are checked against the parent to 1e-12 and then
  /// rescaled to sum to it exactly.
  static ScenarioTree build(const std::vector<std::vector<LevelEntry>>& levels);

  int horizon() const { return static_cast<int>(probability_.size()) - 1; }
  std::size_t atoms(int t) const { return probability_[t].size(); }
  std::size_t terminal_atoms() const { return probability_.back().size(); }
  /// Sum of m_t over t = 0..T.
  std::size_t total_atoms() const { return level_offset_.back(); }
  /// Position of atom (t, 0) in a flat, level-major enumeration of all atoms.
  std::size_t level_offset(int t) const { return level_offset_[t]; }

  double probability(int t, std::size_t j) const { return probability_[t][j]; }
  std::size_t parent(int t, std::size_t j) const { return parent_[t][j]; }
  /// Ancestor at level `s` of atom j on level t (s <= t).
  std::size_t ancestor(int t, std::size_t j, int s) const;

  /// Children of atom (t, j) occupy [first, first + count) on level t + 1.
  std::size_t first_child(int t, std::size_t j) const { return first_child_[t][j]; }
  std::size_t child_count(int t, std::size_t j) const { return child_count_[t][j]; }

  /// Terminal atoms below (t, j) occupy [begin, end) on level T.
  std::size_t terminal_begin(int t, std::size_t j) const { return terminal_begin_[t][j]; }
  std::size_t terminal_end(int t, std::size_t j) const { return terminal_end_[t][j]; }

  /// The level description this tree was built from (after renormalisation).
  std::vector<std::vector<LevelEntry>> levels() const;

 private:
  std::vector<std::vector<double>> probability_;
  std::vector<std::vector<std::size_t>> parent_;
  std::vector<std::vector<std::size_t>> first_child_;
  std::vector<std::vector<std::size_t>> child_count_;
  std::vector<std::vector<std::size_t>> terminal_begin_;
  std::vector<std::vector<std::size_t>> terminal_end_;
  std::vector<std::size_t> level_offset_;
};

/// Process with one value vector per atom and time t = 0..T (F_t-measurable).
class AdaptedProcess {
 public:
  AdaptedProcess() = default;
  AdaptedProcess(const ScenarioTree& tree, std::size_t dim, double fill = 0.0);

  std::size_t dim() const { return dim_; }
  int horizon() const { return static_cast<int>(values_.size()) - 1; }
  std::size_t atoms(int t) const { return count_[t]; }

  double& operator()(int t, std::size_t j, std::size_t i = 0) { return values_[t][j * dim_ + i]; }
  double operator()(int t, std::size_t j, std::size_t i = 0) const { return values_[t][j * dim_ + i]; }

  /// All values at time t, atom-major.
  std::span<const double> level(int t) const { return values_[t]; }
  std::span<double> level(int t) { return values_[t]; }

  /// True if the shape matches `tree` with the given dimension.
  bool conforms(const ScenarioTree& tree, std::size_t dim) const;

  friend bool operator==(const AdaptedProcess&, const AdaptedProcess&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<std::size_t> count_;
  std::vector<std::vector<double>> values_;
};

/// Process indexed by t = 0..T+1 whose time-t value lives on level
/// max(t - 1, 0): it is known one period ahead.
class PredictableProcess {
 public:
  PredictableProcess() = default;
  PredictableProcess(const ScenarioTree& tree, std::size_t dim, double fill = 0.0);

  std::size_t dim() const { return dim_; }
  /// Last time index, T + 1.
  int last_time() const { return static_cast<int>(values_.size()) - 1; }
  static int level_of(int t) { return t > 0 ? t - 1 : 0; }
  std::size_t atoms(int t) const { return count_[t]; }

  /// Value at time t on atom j of level `level_of(t)`.
  double& operator()(int t, std::size_t j, std::size_t i = 0) { return values_[t][j * dim_ + i]; }
  double operator()(int t, std::size_t j, std::size_t i = 0) const { return values_[t][j * dim_ + i]; }

  /// Value at time t seen from atom j on level `s >= level_of(t)`.
  double at(const ScenarioTree& tree, int t, int s, std::size_t j, std::size_t i = 0) const {
    return (*this)(t, tree.ancestor(s, j, level_of(t)), i);
  }

  bool conforms(const ScenarioTree& tree, std::size_t dim) const;

  friend bool operator==(const PredictableProcess&, const PredictableProcess&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<std::size_t> count_;
  std::vector<std::vector<double>> values_;
};

/// E(X_s | F_t) for X given on level s. Returns values on level t, atom-major
/// with X's dimension. Requires t <= s.
std::vector<double> conditional_expectation(const ScenarioTree& tree, const AdaptedProcess& x, int s,
                                            int t);

/// Same for a bare vector of level-s values with `dim` components per atom.
std::vector<double> conditional_expectation(const ScenarioTree& tree, std::span<const double> values,
                                            std::size_t dim, int s, int t);

}  // namespace shadowprice
