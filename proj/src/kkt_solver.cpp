#include "shadowprice/kkt_solver.hpp"

#include <Eigen/LU>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include "shadowprice/error.hpp"

namespace shadowprice {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Primal regularisation added to the Newton diagonal. Free trades in a
// frictionless market have no curvature of their own.
constexpr double kPrimalRegularization = 1e-9;
constexpr double kDivergence = 1e9;
// Trade increments above this count as executed when re-fitting duals.
constexpr double kActivityThreshold = 1e-7;

// One coordinate of a separable objective
//   linear * x + quad * x^2 / 2 - weight * u(x)
// with optional bounds.
struct Coordinate {
  double lower = -kInf;
  double upper = kInf;
  double linear = 0.0;
  double quad = 0.0;
  double weight = 0.0;
  const UtilityFunction* utility = nullptr;

  bool has_lower() const { return lower > -kInf; }
  bool has_upper() const { return upper < kInf; }

  double value(double x) const {
    double v = linear * x + 0.5 * quad * x * x;
    if (utility != nullptr) {
      const double u = utility->value(x);
      if (u == -kInf) return kInf;
      v -= weight * u;
    }
    return v;
  }
  double gradient(double x) const {
    double g = linear + quad * x;
    if (utility != nullptr) g -= weight * utility->derivative(x);
    return g;
  }
  double hessian(double x) const {
    double h = quad;
    if (utility != nullptr) h -= weight * utility->second_derivative(x);
    return h;
  }
};

// min sum_k phi_k(x_k)  s.t.  A x = b,  lower <= x <= upper.
struct BarrierProblem {
  std::vector<Coordinate> coords;
  Eigen::SparseMatrix<double> A;
  Eigen::VectorXd b;
};

enum class BarrierStatus { converged, max_iterations, diverged, stalled, domain_error };

struct BarrierState {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd z_lo;
  Eigen::VectorXd z_hi;
  double tau = 1.0;
  int iterations = 0;
  BarrierStatus status = BarrierStatus::max_iterations;
};

struct Residuals {
  Eigen::VectorXd dual;
  Eigen::VectorXd primal;
  Eigen::VectorXd comp_lo;
  Eigen::VectorXd comp_hi;
  bool finite = true;

  double norm2() const {
    return std::sqrt(dual.squaredNorm() + primal.squaredNorm() + comp_lo.squaredNorm() +
                     comp_hi.squaredNorm());
  }
};

Residuals residuals(const BarrierProblem& problem, const BarrierState& s, double tau) {
  const std::size_t n = problem.coords.size();
  Residuals r;
  r.dual = problem.A.transpose() * s.y;
  r.comp_lo = Eigen::VectorXd::Zero(n);
  r.comp_hi = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Coordinate& c = problem.coords[k];
    const double xk = s.x[k];
    if (c.utility != nullptr && !c.utility->in_domain(xk)) r.finite = false;
    r.dual[k] += c.gradient(xk) - s.z_lo[k] + s.z_hi[k];
    if (c.has_lower()) r.comp_lo[k] = (xk - c.lower) * s.z_lo[k] - tau;
    if (c.has_upper()) r.comp_hi[k] = (c.upper - xk) * s.z_hi[k] - tau;
  }
  r.primal = problem.A * s.x - problem.b;
  if (!r.dual.allFinite()) r.finite = false;
  return r;
}

// Unperturbed error: stationarity, feasibility and the largest s * z product.
double kkt_error(const BarrierProblem& problem, const BarrierState& s) {
  const Residuals r = residuals(problem, s, 0.0);
  if (!r.finite) return kInf;
  double err = std::max(r.dual.lpNorm<Eigen::Infinity>(), r.primal.size() ? r.primal.lpNorm<Eigen::Infinity>() : 0.0);
  if (r.comp_lo.size()) err = std::max(err, r.comp_lo.lpNorm<Eigen::Infinity>());
  if (r.comp_hi.size()) err = std::max(err, r.comp_hi.lpNorm<Eigen::Infinity>());
  return err;
}

double barrier_error(const Residuals& r) {
  double err = r.dual.lpNorm<Eigen::Infinity>();
  if (r.primal.size()) err = std::max(err, r.primal.lpNorm<Eigen::Infinity>());
  if (r.comp_lo.size()) err = std::max(err, r.comp_lo.lpNorm<Eigen::Infinity>());
  if (r.comp_hi.size()) err = std::max(err, r.comp_hi.lpNorm<Eigen::Infinity>());
  return err;
}

void initialize_duals(const BarrierProblem& problem, BarrierState& s) {
  const std::size_t n = problem.coords.size();
  s.z_lo = Eigen::VectorXd::Zero(n);
  s.z_hi = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Coordinate& c = problem.coords[k];
    if (c.has_lower()) s.z_lo[k] = s.tau / (s.x[k] - c.lower);
    if (c.has_upper()) s.z_hi[k] = s.tau / (c.upper - s.x[k]);
  }
  if (s.y.size() != problem.b.size()) s.y = Eigen::VectorXd::Zero(problem.b.size());
}

// Factorisation of [D A^T; A 0]. Coordinates with enough curvature are
// eliminated into normal equations; the others (free trades, trades away from
// their bound late in the run) stay in an indefinite block next to the
// constraint duals, where 1 / D would otherwise swamp the arithmetic.
class NewtonSystem {
 public:
  static constexpr double kSplit = 1e-3;

  NewtonSystem(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& diag) : A_(A), diag_(diag) {
    const Eigen::Index n = diag.size();
    const Eigen::Index m = A.rows();
    inv_b_ = Eigen::VectorXd::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (diag[k] >= kSplit) {
        inv_b_[k] = 1.0 / diag[k];
      } else {
        flat_.push_back(k);
      }
    }
    if (m == 0) return;
    Eigen::MatrixXd normal = Eigen::MatrixXd(A * inv_b_.asDiagonal() * A.transpose());
    const double shift = 1e-14 * (1.0 + normal.diagonal().cwiseAbs().maxCoeff());
    normal.diagonal().array() += shift;
    if (flat_.empty()) {
      ldlt_.compute(normal);
      return;
    }
    const Eigen::Index f = static_cast<Eigen::Index>(flat_.size());
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m + f, m + f);
    K.topLeftCorner(m, m) = -normal;
    const Eigen::MatrixXd dense = Eigen::MatrixXd(A);
    for (Eigen::Index q = 0; q < f; ++q) {
      const Eigen::Index k = flat_[static_cast<std::size_t>(q)];
      K.block(0, m + q, m, 1) = dense.col(k);
      K.block(m + q, 0, 1, m) = dense.col(k).transpose();
      K(m + q, m + q) = diag[k];
    }
    lu_.compute(K);
  }

  void solve(const Eigen::VectorXd& ex, const Eigen::VectorXd& ey, Eigen::VectorXd& dx,
             Eigen::VectorXd& dy) const {
    const Eigen::Index m = A_.rows();
    if (m == 0) {
      dy = Eigen::VectorXd::Zero(0);
      dx = ex.cwiseQuotient(diag_);
      return;
    }
    const Eigen::VectorXd reduced = A_ * inv_b_.cwiseProduct(ex) - ey;
    if (flat_.empty()) {
      dy = ldlt_.solve(reduced);
      dx = inv_b_.cwiseProduct(ex - A_.transpose() * dy);
      return;
    }
    const Eigen::Index f = static_cast<Eigen::Index>(flat_.size());
    Eigen::VectorXd rhs(m + f);
    rhs.head(m) = -reduced;
    for (Eigen::Index q = 0; q < f; ++q) rhs[m + q] = ex[flat_[static_cast<std::size_t>(q)]];
    const Eigen::VectorXd sol = lu_.solve(rhs);
    dy = sol.head(m);
    dx = inv_b_.cwiseProduct(ex - A_.transpose() * dy);
    for (Eigen::Index q = 0; q < f; ++q) dx[flat_[static_cast<std::size_t>(q)]] = sol[m + q];
  }

 private:
  const Eigen::SparseMatrix<double>& A_;
  Eigen::VectorXd diag_;
  Eigen::VectorXd inv_b_;
  std::vector<Eigen::Index> flat_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

// Damped Newton iterations on the barrier-perturbed KKT system until the
// unperturbed error drops below `target` or the budget runs out.
void run_barrier(const BarrierProblem& problem, const SolverOptions& options, double target,
                 double tau_min, int max_iterations, BarrierState& s) {
  const std::size_t n = problem.coords.size();
  const Eigen::Index m = problem.b.size();
  const Eigen::SparseMatrix<double> At = problem.A.transpose();
  int stalled_steps = 0;
  double best_error = kInf;
  int since_progress = 0;

  for (; s.iterations < max_iterations; ++s.iterations) {
    if (kkt_error(problem, s) <= target && s.tau <= tau_min * 1.0000001) {
      s.status = BarrierStatus::converged;
      return;
    }
    Residuals r = residuals(problem, s, s.tau);
    if (!r.finite) {
      s.status = BarrierStatus::domain_error;
      return;
    }
    while (s.tau > tau_min && barrier_error(r) <= 10.0 * s.tau) {
      s.tau = std::max(s.tau * options.barrier_reduction, tau_min);
      r = residuals(problem, s, s.tau);
    }
    const double error = kkt_error(problem, s);
    if (error <= target && s.tau <= tau_min * 1.0000001) {
      s.status = BarrierStatus::converged;
      return;
    }
    // At the smallest barrier weight the linear algebra eventually stops
    // making progress; report it instead of spinning.
    if (error < 0.5 * best_error) {
      best_error = error;
      since_progress = 0;
    } else if (error < 1e3 * options.tolerance && ++since_progress >= (error <= options.tolerance ? 4 : 15)) {
      s.status = BarrierStatus::stalled;
      return;
    }

    // Reduced Newton system: diagonal D for x, normal equations for y.
    Eigen::VectorXd diag(n);
    Eigen::VectorXd rhs_x(n);
    for (std::size_t k = 0; k < n; ++k) {
      const Coordinate& c = problem.coords[k];
      double dk = c.hessian(s.x[k]) + kPrimalRegularization;
      double rk = -r.dual[k];
      if (c.has_lower()) {
        const double slack = s.x[k] - c.lower;
        dk += s.z_lo[k] / slack;
        rk += s.tau / slack - s.z_lo[k];
      }
      if (c.has_upper()) {
        const double slack = c.upper - s.x[k];
        dk += s.z_hi[k] / slack;
        rk -= s.tau / slack - s.z_hi[k];
      }
      diag[k] = dk;
      rhs_x[k] = rk;
    }
    const NewtonSystem system(problem.A, diag);
    const auto newton = [&](const Eigen::VectorXd& ex, const Eigen::VectorXd& ey, Eigen::VectorXd& dx_out,
                            Eigen::VectorXd& dy_out) { system.solve(ex, ey, dx_out, dy_out); };
    const Eigen::VectorXd target_y = -r.primal;
    Eigen::VectorXd dx, dy;
    newton(rhs_x, target_y, dx, dy);
    // Refine against the unregularised system; free coordinates only see the
    // regularisation in the factorisation.
    const Eigen::VectorXd exact_diag = diag.array() - kPrimalRegularization;
    for (int refine = 0; refine < 3; ++refine) {
      const Eigen::VectorXd ex = rhs_x - exact_diag.cwiseProduct(dx) - At * dy;
      const Eigen::VectorXd ey = target_y - problem.A * dx;
      const double size = std::max(ex.lpNorm<Eigen::Infinity>(), m > 0 ? ey.lpNorm<Eigen::Infinity>() : 0.0);
      if (!(size > 1e-15 * (1.0 + dx.lpNorm<Eigen::Infinity>()))) break;
      Eigen::VectorXd cx, cy;
      newton(ex, ey, cx, cy);
      dx += cx;
      dy += cy;
    }
    Eigen::VectorXd dz_lo = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd dz_hi = Eigen::VectorXd::Zero(n);

    // Fraction to the boundary.
    const double frac = options.fraction_to_boundary;
    double alpha = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      const Coordinate& c = problem.coords[k];
      if (c.has_lower()) {
        const double slack = s.x[k] - c.lower;
        dz_lo[k] = (s.tau - slack * s.z_lo[k] - s.z_lo[k] * dx[k]) / slack;
        if (dx[k] < 0.0) alpha = std::min(alpha, -frac * slack / dx[k]);
        if (dz_lo[k] < 0.0) alpha = std::min(alpha, -frac * s.z_lo[k] / dz_lo[k]);
      }
      if (c.has_upper()) {
        const double slack = c.upper - s.x[k];
        dz_hi[k] = (s.tau - slack * s.z_hi[k] + s.z_hi[k] * dx[k]) / slack;
        if (dx[k] > 0.0) alpha = std::min(alpha, frac * slack / dx[k]);
        if (dz_hi[k] < 0.0) alpha = std::min(alpha, -frac * s.z_hi[k] / dz_hi[k]);
      }
    }
    if (!dx.allFinite() || !dy.allFinite()) {
      s.status = BarrierStatus::stalled;
      return;
    }

    // Backtracking on the norm of the perturbed KKT map.
    const double merit0 = r.norm2();
    BarrierState trial = s;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving) {
      trial.x = s.x + alpha * dx;
      trial.y = s.y + alpha * dy;
      trial.z_lo = s.z_lo + alpha * dz_lo;
      trial.z_hi = s.z_hi + alpha * dz_hi;
      const Residuals rt = residuals(problem, trial, s.tau);
      if (rt.finite && rt.norm2() <= (1.0 - 1e-4 * alpha) * merit0) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // Take the tiny step anyway if it stays inside the domain.
      const Residuals rt = residuals(problem, trial, s.tau);
      if (!rt.finite) {
        s.status = BarrierStatus::stalled;
        return;
      }
      if (++stalled_steps > 10) {
        s.status = BarrierStatus::stalled;
        return;
      }
    } else {
      stalled_steps = 0;
    }
    s.x = std::move(trial.x);
    s.y = std::move(trial.y);
    s.z_lo = std::move(trial.z_lo);
    s.z_hi = std::move(trial.z_hi);

    if (s.x.lpNorm<Eigen::Infinity>() > kDivergence) {
      s.status = BarrierStatus::diverged;
      return;
    }
  }
  s.status = kkt_error(problem, s) <= target ? BarrierStatus::converged : BarrierStatus::max_iterations;
}

// Which program variables enter the barrier problem. The sell slot of a
// pinched trade is dropped and its buy slot carries the free net trade.
struct VariableMap {
  std::vector<std::size_t> program_index;  // barrier coordinate -> program variable
  std::vector<long> barrier_index;         // program variable -> coordinate or -1
  std::vector<double> fixed_value;         // value of variables without a coordinate
};

VariableMap map_variables(const ConvexProgram& program) {
  const ProgramLayout& layout = program.layout;
  const std::size_t half = layout.trade_slots() / 2;
  VariableMap map;
  map.barrier_index.assign(layout.variables(), -1);
  map.fixed_value.assign(layout.variables(), 0.0);
  for (std::size_t k = 0; k < layout.variables(); ++k) {
    if (k >= half && k < 2 * half && program.pinched_slot(k)) continue;
    map.barrier_index[k] = static_cast<long>(map.program_index.size());
    map.program_index.push_back(k);
  }
  return map;
}

Eigen::SparseMatrix<double> select_columns(const Eigen::MatrixXd& dense, const std::vector<std::size_t>& cols) {
  std::vector<Eigen::Triplet<double>> entries;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    for (Eigen::Index r = 0; r < dense.rows(); ++r) {
      const double v = dense(r, static_cast<Eigen::Index>(cols[c]));
      if (v != 0.0) entries.emplace_back(static_cast<int>(r), static_cast<int>(c), v);
    }
  }
  Eigen::SparseMatrix<double> out(dense.rows(), static_cast<Eigen::Index>(cols.size()));
  out.setFromTriplets(entries.begin(), entries.end());
  return out;
}

struct ConsumptionSlot {
  int t;
  std::size_t j;
};

std::vector<ConsumptionSlot> consumption_slots(const ConvexProgram& program) {
  std::vector<ConsumptionSlot> out;
  const ScenarioTree& tree = program.market.tree;
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) out.push_back({t, j});
  }
  return out;
}

BarrierProblem build_problem(const ConvexProgram& program, const VariableMap& map) {
  const ProgramLayout& layout = program.layout;
  const MarketSpec& market = program.market;
  BarrierProblem problem;
  problem.A = select_columns(program.constraints, map.program_index);
  problem.b = program.rhs;
  for (std::size_t k = 0; k < layout.variables(); ++k) {
    if (map.barrier_index[k] < 0 && map.fixed_value[k] != 0.0) {
      problem.b -= program.constraints.col(static_cast<Eigen::Index>(k)) * map.fixed_value[k];
    }
  }
  problem.coords.resize(map.program_index.size());
  const std::size_t trades = layout.trade_slots();
  for (std::size_t c = 0; c < map.program_index.size(); ++c) {
    const std::size_t k = map.program_index[c];
    Coordinate& coord = problem.coords[c];
    if (k < trades) {
      coord.lower = program.pinched_slot(k) ? -kInf : 0.0;
    }
  }
  for (const auto& slot : consumption_slots(program)) {
    const std::size_t k = layout.consumption_slot(slot.t, slot.j);
    if (map.barrier_index[k] < 0) continue;
    Coordinate& coord = problem.coords[static_cast<std::size_t>(map.barrier_index[k])];
    coord.utility = &market.utility(slot.t, slot.j);
    coord.weight = market.tree.probability(slot.t, slot.j);
    coord.lower = coord.utility->domain_lower();
  }
  return problem;
}

Eigen::VectorXd initial_point(const ConvexProgram& program, const VariableMap& map, const BarrierProblem& problem) {
  const ProgramLayout& layout = program.layout;
  const std::size_t n = problem.coords.size();
  Eigen::VectorXd x(n);
  std::vector<Eigen::Index> consumption_cols;
  for (std::size_t c = 0; c < n; ++c) {
    const Coordinate& coord = problem.coords[c];
    if (map.program_index[c] < layout.trade_slots()) {
      x[c] = coord.has_lower() ? 0.1 : 0.0;
    } else {
      x[c] = std::max(coord.has_lower() ? coord.lower + 1.0 : 1.0, 1.0);
      consumption_cols.push_back(static_cast<Eigen::Index>(c));
    }
  }
  // Least-squares correction of consumption onto the bond constraints.
  const Eigen::MatrixXd dense = Eigen::MatrixXd(problem.A);
  Eigen::MatrixXd Ac(dense.rows(), static_cast<Eigen::Index>(consumption_cols.size()));
  for (std::size_t q = 0; q < consumption_cols.size(); ++q) Ac.col(static_cast<Eigen::Index>(q)) = dense.col(consumption_cols[q]);
  const Eigen::VectorXd residual = problem.b - dense * x;
  const Eigen::VectorXd shift = Ac.completeOrthogonalDecomposition().solve(residual);
  for (std::size_t q = 0; q < consumption_cols.size(); ++q) {
    const Eigen::Index c = consumption_cols[q];
    const Coordinate& coord = problem.coords[static_cast<std::size_t>(c)];
    const double moved = x[c] + shift[static_cast<Eigen::Index>(q)];
    if (!coord.has_lower() || moved > coord.lower + 1e-3) x[c] = moved;
  }
  return x;
}

// Largest uniform margin s such that consumption can exceed its domain edge by
// s in every state; used to tell an empty domain from other failures.
double domain_margin(const ConvexProgram& program, const VariableMap& map, const BarrierProblem& original,
                     const SolverOptions& options, bool& converged) {
  const std::size_t n = original.coords.size();
  const ProgramLayout& layout = program.layout;
  BarrierProblem phase;
  phase.coords.resize(n + 1);
  const Eigen::MatrixXd dense = Eigen::MatrixXd(original.A);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dense.rows(), static_cast<Eigen::Index>(n + 1));
  Eigen::VectorXd b = original.b;
  for (std::size_t c = 0; c < n; ++c) {
    const Coordinate& coord = original.coords[c];
    Coordinate& out = phase.coords[c];
    out.quad = 1e-6;
    A.col(static_cast<Eigen::Index>(c)) = dense.col(static_cast<Eigen::Index>(c));
    if (map.program_index[c] >= layout.trade_slots() && coord.has_lower()) {
      // c = lower + s + w with w >= 0
      out.lower = 0.0;
      b -= dense.col(static_cast<Eigen::Index>(c)) * coord.lower;
      A.col(static_cast<Eigen::Index>(n)) += dense.col(static_cast<Eigen::Index>(c));
    } else {
      out.lower = coord.lower;
    }
  }
  Coordinate& margin = phase.coords[n];
  margin.linear = -1.0;
  margin.quad = 1e-6;
  margin.upper = 1.0;
  phase.A = A.sparseView();
  phase.b = b;

  BarrierState s;
  s.x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n + 1));
  for (std::size_t c = 0; c < n; ++c) {
    if (phase.coords[c].has_lower()) s.x[static_cast<Eigen::Index>(c)] = phase.coords[c].lower + 1.0;
  }
  s.x[static_cast<Eigen::Index>(n)] = 0.0;
  s.tau = options.initial_barrier;
  initialize_duals(phase, s);
  run_barrier(phase, options, 1e-9, 1e-11, options.max_iterations, s);
  converged = s.status == BarrierStatus::converged;
  return s.x[static_cast<Eigen::Index>(n)];
}

[[noreturn]] void diagnose_failure(const ConvexProgram& program, const VariableMap& map,
                                   const BarrierProblem& problem, const SolverOptions& options,
                                   const BarrierState& state) {
  bool any_bounded = false;
  for (std::size_t c = 0; c < problem.coords.size(); ++c) {
    if (map.program_index[c] >= program.layout.trade_slots() && problem.coords[c].has_lower()) any_bounded = true;
  }
  if (any_bounded) {
    bool converged = false;
    const double margin = domain_margin(program, map, problem, options, converged);
    if (!converged) {
      throw Error(ErrorCode::Infeasible, "no admissible plan found (phase-one problem did not converge)");
    }
    if (margin <= 1e-9) {
      std::ostringstream os;
      os << "no admissible plan keeps consumption inside the utility domain (best margin " << margin << ")";
      throw Error(ErrorCode::DomainEmpty, os.str());
    }
  }
  if (state.status == BarrierStatus::diverged) {
    throw Error(ErrorCode::Unbounded,
                "objective improves without bound; market admits arbitrage-like improvement");
  }
  std::ostringstream os;
  os << "interior-point iteration did not reach the KKT tolerance after " << state.iterations
     << " iterations";
  throw Error(ErrorCode::MaxIterations, os.str());
}

// Builds the program-level solution from a barrier iterate.
KktSolution extract(const ConvexProgram& program, const VariableMap& map, const BarrierState& s) {
  const ProgramLayout& layout = program.layout;
  const std::size_t half = layout.trade_slots() / 2;
  const std::size_t m = layout.terminal_atoms();
  const std::size_t d = layout.assets();
  KktSolution sol;
  sol.x = Eigen::VectorXd::Zero(layout.variables());
  sol.lambda_buy = Eigen::VectorXd::Zero(half);
  sol.lambda_sell = Eigen::VectorXd::Zero(half);
  for (std::size_t k = 0; k < layout.variables(); ++k) {
    if (map.barrier_index[k] < 0) sol.x[k] = map.fixed_value[k];
  }
  for (std::size_t c = 0; c < map.program_index.size(); ++c) {
    const std::size_t k = map.program_index[c];
    const double v = s.x[static_cast<Eigen::Index>(c)];
    if (k < half && program.pinched_slot(k)) {
      sol.x[k] = std::max(v, 0.0);
      sol.x[k + half] = std::max(-v, 0.0);
      continue;
    }
    sol.x[k] = v;
    if (k < half) sol.lambda_buy[k] = s.z_lo[static_cast<Eigen::Index>(c)];
    else if (k < 2 * half) sol.lambda_sell[k - half] = s.z_lo[static_cast<Eigen::Index>(c)];
  }
  // Trades held on their bound outside the barrier problem get the
  // multiplier implied by the constraint duals.
  if (half > 0) {
    const Eigen::VectorXd linear = program.constraints.transpose() * s.y;
    for (std::size_t k = 0; k < 2 * half; ++k) {
      const std::size_t buy = k < half ? k : k - half;
      if (map.barrier_index[k] >= 0 || program.pinched_slot(buy)) continue;
      (k < half ? sol.lambda_buy[k] : sol.lambda_sell[k - half]) = std::max(linear[k], 0.0);
    }
  }
  sol.nu = s.y.head(m);
  sol.mu.resize(m, d);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < d; ++i) sol.mu(k, i) = s.y[layout.stock_row(k, i)];
  }
  sol.iterations = s.iterations;
  return sol;
}

// Consumption at a flat utility kink is optimal exactly on the kink. Move it
// there and hand the difference to terminal consumption below, which keeps
// every bond constraint unchanged.
void snap_kinks(const ConvexProgram& program, KktSolution& sol) {
  const ProgramLayout& layout = program.layout;
  const MarketSpec& market = program.market;
  const ScenarioTree& tree = market.tree;
  const int T = tree.horizon();
  for (int t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      const UtilityFunction& u = market.utility(t, j);
      if (!u.is_kinked()) continue;
      const std::size_t slot = layout.consumption_slot(t, j);
      const double excess = sol.x[slot] - u.domain_lower();
      if (!(excess > 0.0) || excess > 1e-6 * std::max(1.0, std::abs(u.domain_lower()))) continue;
      sol.x[slot] = u.domain_lower();
      for (std::size_t k = tree.terminal_begin(t, j); k < tree.terminal_end(t, j); ++k) {
        const std::size_t terminal = layout.consumption_slot(T, k);
        const double ratio = program.constraints(layout.bond_row(k), slot) /
                             program.constraints(layout.bond_row(k), terminal);
        sol.x[terminal] += excess * ratio;
      }
    }
  }
}

void set_duals(const ProgramLayout& layout, const Eigen::VectorXd& y, KktSolution& sol) {
  const std::size_t m = layout.terminal_atoms();
  sol.nu = y.head(m);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < layout.assets(); ++i) sol.mu(k, i) = y[layout.stock_row(k, i)];
  }
}

Eigen::VectorXd stacked_duals(const ProgramLayout& layout, const KktSolution& sol) {
  Eigen::VectorXd y(layout.equalities());
  const std::size_t m = layout.terminal_atoms();
  y.head(m) = sol.nu;
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < layout.assets(); ++i) y[layout.stock_row(k, i)] = sol.mu(k, i);
  }
  return y;
}

// Re-fits (nu, mu) at the fixed primal point by least squares on the
// stationarity equations that involve no inequality multiplier, then sets
// lambda from the remaining trade equations projected onto [0, inf). The
// correction is the minimum-norm one; a rank-deficient system means the
// multipliers are not unique.
KktSolution polish_duals(const ConvexProgram& program, const KktSolution& sol, const SolverOptions& options) {
  const ProgramLayout& layout = program.layout;
  const MarketSpec& market = program.market;
  const ScenarioTree& tree = market.tree;
  const std::size_t half = layout.trade_slots() / 2;
  const Eigen::Index meq = static_cast<Eigen::Index>(layout.equalities());

  std::vector<std::size_t> rows;
  std::vector<double> targets;
  for (std::size_t k = 0; k < 2 * half; ++k) {
    const std::size_t buy = k < half ? k : k - half;
    const bool pinched = program.pinched_slot(buy);
    if (pinched && k >= half) continue;
    if (pinched || sol.x[k] > kActivityThreshold) {
      rows.push_back(k);
      targets.push_back(0.0);
    }
  }
  for (int t = 0; t <= tree.horizon(); ++t) {
    for (std::size_t j = 0; j < tree.atoms(t); ++j) {
      const std::size_t k = layout.consumption_slot(t, j);
      const UtilityFunction& u = market.utility(t, j);
      const Interval g = u.supergradient(sol.x[k], options.domain_margin);
      if (g.empty() || g.lo != g.hi) continue;
      rows.push_back(k);
      targets.push_back(tree.probability(t, j) * g.lo);
    }
  }

  KktSolution out = sol;
  Eigen::MatrixXd J(static_cast<Eigen::Index>(rows.size()), meq);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    J.row(static_cast<Eigen::Index>(r)) = program.constraints.col(static_cast<Eigen::Index>(rows[r])).transpose();
    rhs[static_cast<Eigen::Index>(r)] = targets[r];
  }
  const Eigen::VectorXd y0 = stacked_duals(layout, sol);
  Eigen::VectorXd y = y0;
  if (!rows.empty()) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(J);
    cod.setThreshold(1e-12);
    y = y0 + cod.solve(rhs - J * y0);
    out.degenerate_duals = cod.rank() < meq;
  } else {
    out.degenerate_duals = meq > 0;
  }
  set_duals(layout, y, out);

  const Eigen::VectorXd linear = program.constraints.transpose() * y;
  for (std::size_t k = 0; k < half; ++k) {
    out.lambda_buy[k] = std::max(linear[k], 0.0);
    out.lambda_sell[k] = std::max(linear[k + half], 0.0);
    if (program.pinched_slot(k)) {
      out.lambda_buy[k] = 0.0;
      out.lambda_sell[k] = 0.0;
    }
  }
  return out;
}

KktSolution finalize(const ConvexProgram& program, const VariableMap& map, const BarrierState& s,
                     const SolverOptions& options) {
  KktSolution raw = extract(program, map, s);
  snap_kinks(program, raw);
  raw.residuals = kkt_residual(program, raw, options.domain_margin);
  KktSolution polished = polish_duals(program, raw, options);
  polished.residuals = kkt_residual(program, polished, options.domain_margin);
  KktSolution& best = polished.residuals.max() <= raw.residuals.max() ? polished : raw;
  best.degenerate_duals = polished.degenerate_duals;
  best.objective = eval(program, best.x).objective;
  return best;
}

// Bounded coordinates whose multiplier is not negligible next to their distance to the bound,
// both measured on the scale of the constraint duals, are fixed on the bound
// and the rest of the problem is re-solved from the current iterate. Slots
// within kDustTrade of the bound are fixed too. This removes round-trip dust
// that the central path leaves on trades which are inactive at the optimum.
// A fixed trade whose implied multiplier comes out negative is released and
// the reduced problem solved again.
constexpr double kDustTrade = 1e-5;
// Degenerate slots approach the bound with x and the scaled multiplier both of
// order sqrt(tau); fixing anything whose multiplier is not negligible next to
// x catches them, and the release step undoes the rare wrong guess.
constexpr double kDegenerateRatio = 1e-4;

struct Purified {
  KktSolution solution;
  VariableMap map;
  BarrierProblem problem;
  BarrierState state;
};

std::optional<Purified> purify(const ConvexProgram& program, const VariableMap& map, const BarrierProblem& problem,
                               const BarrierState& state, const SolverOptions& options, double target,
                               double tau_min, double ratio) {
  const ProgramLayout& layout = program.layout;
  std::vector<bool> fixed(problem.coords.size(), false);
  bool any = false;
  for (std::size_t c = 0; c < problem.coords.size(); ++c) {
    const Coordinate& coord = problem.coords[c];
    const bool trade = map.program_index[c] < layout.trade_slots();
    if (!coord.has_lower() || !(trade || (coord.utility != nullptr && coord.utility->is_kinked()))) continue;
    double sigma = 0.0;
    for (Eigen::SparseMatrix<double>::InnerIterator it(problem.A, static_cast<Eigen::Index>(c)); it; ++it) {
      sigma += std::abs(it.value() * state.y[it.row()]);
    }
    const double excess = state.x[static_cast<Eigen::Index>(c)] - coord.lower;
    fixed[c] = state.z_lo[static_cast<Eigen::Index>(c)] > ratio * sigma * excess || excess < kDustTrade;
    any = any || fixed[c];
  }
  if (!any) return std::nullopt;

  std::optional<Purified> result;
  for (int attempt = 0; attempt < 4; ++attempt) {
    VariableMap reduced;
    reduced.barrier_index.assign(layout.variables(), -1);
    reduced.fixed_value = map.fixed_value;
    std::vector<std::size_t> kept;
    for (std::size_t c = 0; c < problem.coords.size(); ++c) {
      const std::size_t k = map.program_index[c];
      if (fixed[c]) {
        reduced.fixed_value[k] = problem.coords[c].lower;
      } else {
        reduced.barrier_index[k] = static_cast<long>(reduced.program_index.size());
        reduced.program_index.push_back(k);
        kept.push_back(c);
      }
    }

    BarrierProblem smaller = build_problem(program, reduced);
    BarrierState s;
    const Eigen::Index n = static_cast<Eigen::Index>(kept.size());
    s.x.resize(n);
    s.z_lo.resize(n);
    s.z_hi.resize(n);
    for (Eigen::Index c = 0; c < n; ++c) {
      const Eigen::Index from = static_cast<Eigen::Index>(kept[static_cast<std::size_t>(c)]);
      const Coordinate& coord = smaller.coords[static_cast<std::size_t>(c)];
      s.x[c] = state.x[from];
      // Released coordinates restart a little inside their bound.
      if (coord.has_lower() && s.x[c] - coord.lower < kDustTrade) s.x[c] = coord.lower + kDustTrade;
      s.z_lo[c] = coord.has_lower() ? std::max(state.z_lo[from], tau_min / (s.x[c] - coord.lower)) : 0.0;
      s.z_hi[c] = state.z_hi[from];
    }
    s.y = state.y;
    s.tau = tau_min;
    run_barrier(smaller, options, target, tau_min, options.max_iterations, s);
    const bool usable = s.status == BarrierStatus::converged ||
                        (s.status == BarrierStatus::stalled && kkt_error(smaller, s) <= options.tolerance);
    if (!usable) return result;
    s.iterations += state.iterations;
    KktSolution sol = finalize(program, reduced, s, options);

    // Release fixed trades the duals would rather see executed.
    const Eigen::VectorXd linear = program.constraints.transpose() * s.y;
    bool released = false;
    for (std::size_t c = 0; c < problem.coords.size(); ++c) {
      const std::size_t k = map.program_index[c];
      if (fixed[c] && k < layout.trade_slots() && linear[static_cast<Eigen::Index>(k)] < -0.5 * options.tolerance) {
        fixed[c] = false;
        released = true;
      }
    }
    const bool better = !result || sol.residuals.max() < result->solution.residuals.max();
    if (better) result = Purified{std::move(sol), std::move(reduced), std::move(smaller), std::move(s)};
    if (!released) break;
  }
  return result;
}

// Once the inactive trades sit exactly on their bound, the remaining ones are
// away from it and the barrier only biases their multipliers by tau / x.
// Dropping those bounds and re-solving gives exact stationarity for executed
// trades; the result is kept only if every freed trade stays nonnegative.
std::optional<KktSolution> crossover(const ConvexProgram& program, const VariableMap& map,
                                     const BarrierProblem& problem, const BarrierState& state,
                                     const SolverOptions& options, double target, double tau_min) {
  const ProgramLayout& layout = program.layout;
  BarrierProblem open = problem;
  BarrierState s = state;
  // A buy and a sell in the same slot cannot both be freed: together they
  // would trade through the spread without bound. The side sitting on its
  // bound keeps its barrier.
  const std::size_t half = layout.trade_slots() / 2;
  std::vector<double> excess(layout.trade_slots(), -1.0);
  for (std::size_t c = 0; c < open.coords.size(); ++c) {
    const std::size_t k = map.program_index[c];
    if (k < layout.trade_slots() && open.coords[c].has_lower()) {
      excess[k] = state.x[static_cast<Eigen::Index>(c)] - open.coords[c].lower;
    }
  }
  std::vector<Eigen::Index> freed;
  for (std::size_t c = 0; c < open.coords.size(); ++c) {
    Coordinate& coord = open.coords[c];
    const std::size_t k = map.program_index[c];
    if (k >= layout.trade_slots() || !coord.has_lower() || excess[k] < kDustTrade) continue;
    const double other = excess[k < half ? k + half : k - half];
    if (other >= kDustTrade) continue;
    coord.lower = -kInf;
    s.z_lo[static_cast<Eigen::Index>(c)] = 0.0;
    freed.push_back(static_cast<Eigen::Index>(c));
  }
  if (freed.empty()) return std::nullopt;
  const int before = s.iterations;
  s.iterations = 0;
  s.tau = tau_min;
  run_barrier(open, options, target, tau_min, options.max_iterations, s);
  const bool usable = s.status == BarrierStatus::converged ||
                      (s.status == BarrierStatus::stalled && kkt_error(open, s) <= options.tolerance);
  if (!usable) return std::nullopt;
  for (Eigen::Index c : freed) {
    if (s.x[c] < -1e-10) return std::nullopt;
    s.x[c] = std::max(s.x[c], 0.0);
  }
  s.iterations += before;
  return finalize(program, map, s, options);
}

}  // namespace

void SolverOptions::validate() const {
  const auto fail = [](const char* why) { throw Error(ErrorCode::InvalidMarket, why); };
  if (!(tolerance > 0.0)) fail("solver tolerance must be positive");
  if (max_iterations <= 0) fail("max_iterations must be positive");
  if (!(initial_barrier > 0.0)) fail("initial barrier weight must be positive");
  if (!(barrier_reduction > 0.0 && barrier_reduction < 1.0)) fail("barrier reduction must lie in (0, 1)");
  if (!(fraction_to_boundary > 0.0 && fraction_to_boundary < 1.0)) {
    fail("fraction-to-boundary parameter must lie in (0, 1)");
  }
  if (!(domain_margin >= 0.0)) fail("domain margin must be >= 0");
}

KktSolution solve(const ConvexProgram& program, const SolverOptions& options) {
  options.validate();
  const VariableMap map = map_variables(program);
  const BarrierProblem problem = build_problem(program, map);

  BarrierState state;
  state.x = initial_point(program, map, problem);
  state.tau = options.initial_barrier;
  initialize_duals(problem, state);

  double target = 1e-4 * options.tolerance;
  double tau_min = 1e-3 * options.tolerance;
  KktSolution best;
  BarrierState best_state;
  bool have_best = false;
  for (int round = 0; round < 4; ++round) {
    run_barrier(problem, options, target, tau_min, options.max_iterations, state);
    const bool usable = state.status == BarrierStatus::converged ||
                        (state.status == BarrierStatus::stalled && kkt_error(problem, state) <= options.tolerance);
    if (!usable) {
      if (have_best) break;
      diagnose_failure(program, map, problem, options, state);
    }
    KktSolution sol = finalize(program, map, state, options);
    if (!have_best || sol.residuals.max() < best.residuals.max()) {
      best = std::move(sol);
      best_state = state;
      have_best = true;
    }
    if (best.residuals.max() <= options.tolerance || state.status == BarrierStatus::stalled) break;
    target *= 0.01;
    tau_min *= 0.01;
  }
  // A pass can expose further dust, so purification is repeated on its own
  // output; the aggressive degenerate rule is tried first.
  std::optional<KktSolution> pure;
  const VariableMap* level_map = &map;
  const BarrierProblem* level_problem = &problem;
  const BarrierState* level_state = &best_state;
  std::optional<Purified> passes[3];
  for (double ratio : {kDegenerateRatio, 1.0}) {
    level_map = &map;
    level_problem = &problem;
    level_state = &best_state;
    for (int pass = 0; pass < 3; ++pass) {
      passes[pass] = purify(program, *level_map, *level_problem, *level_state, options, target, tau_min, ratio);
      if (!passes[pass]) break;
      const KktSolution& sol = passes[pass]->solution;
      if (sol.residuals.max() > std::max(options.tolerance, best.residuals.max())) break;
      pure = sol;
      level_map = &passes[pass]->map;
      level_problem = &passes[pass]->problem;
      level_state = &passes[pass]->state;
    }
    if (pure) break;
  }
  const double accepted = pure ? pure->residuals.max() : best.residuals.max();
  std::optional<KktSolution> crossed =
      crossover(program, *level_map, *level_problem, *level_state, options, target, tau_min);
  if (crossed && crossed->residuals.max() <= std::max(options.tolerance, accepted)) {
    crossed->degenerate_duals = crossed->degenerate_duals && best.degenerate_duals;
    return *crossed;
  }
  if (pure) {
    pure->degenerate_duals = pure->degenerate_duals && best.degenerate_duals;
    return *pure;
  }
  if (best.residuals.max() <= options.tolerance) return best;
  std::ostringstream os;
  os << "KKT residual " << best.residuals.max() << " above tolerance " << options.tolerance << " after "
     << state.iterations << " iterations";
  throw Error(ErrorCode::MaxIterations, os.str());
}

MarketSpec frictionless_market(const MarketSpec& market, const AdaptedProcess& price) {
  if (!price.conforms(market.tree, market.assets)) {
    throw Error(ErrorCode::ShapeMismatch, "price process does not match the market");
  }
  MarketSpec out = market;
  out.bid = price;
  out.ask = price;
  out.validate();
  return out;
}

KktSolution solve_frictionless(const MarketSpec& market, const AdaptedProcess& price,
                               const SolverOptions& options) {
  return solve(assemble(frictionless_market(market, price)), options);
}

}  // namespace shadowprice
