#pragma once

#include "shadowprice/convex_program.hpp"

namespace shadowprice {

struct SolverOptions {
  double tolerance = 1e-9;          // KKT residual target (max-norm)
  int max_iterations = 200;
  double initial_barrier = 1.0;
  double barrier_reduction = 0.2;
  double fraction_to_boundary = 0.99;
  double domain_margin = 1e-12;     // closeness to a closed domain edge that counts as "on" it

  /// Throws InvalidMarket on out-of-range settings.
  void validate() const;
};

/// Primal-dual interior-point solve of the program.
///
/// Log barriers keep trade increments and consumption strictly inside their
/// bounds; Newton steps on the perturbed KKT system start from an infeasible
/// point and follow a fixed barrier reduction schedule. At termination the
/// consumption at utility kinks is moved onto the kink, the duals are
/// re-fitted at the fixed primal point and the KKT residual is re-checked.
///
/// Throws Error with DomainEmpty, Unbounded, Infeasible or MaxIterations.
KktSolution solve(const ConvexProgram& program, const SolverOptions& options = {});

/// Solve in the frictionless market with bid = ask = `price`.
KktSolution solve_frictionless(const MarketSpec& market, const AdaptedProcess& price,
                               const SolverOptions& options = {});

/// The market with both books set to `price`.
MarketSpec frictionless_market(const MarketSpec& market, const AdaptedProcess& price);

}  // namespace shadowprice
