#pragma once

#include "batchverify/solver.hpp"

#include <cstddef>
#include <vector>

namespace batchverify::solver::detail {

enum class LpOutcome { Optimal, Infeasible, Unbounded };

/// Bounded-variable dual simplex on a dense tableau.
///
/// Every row `a.x (rel) rhs` becomes `a.x - r = 0` with a row variable r whose
/// bounds carry the relation, so the system is homogeneous and basic values are
/// `x_B = -T_N x_N`. Structural variables start nonbasic at the bound matching
/// the sign of their cost, which makes the slack basis dual feasible. Bound
/// changes and new rows keep dual feasibility, so branch-and-bound and
/// incremental constraints re-enter the dual simplex from the current basis.
class DualSimplex {
public:
    DualSimplex(const LinearProgram &lp, const SolverOptions &options);

    void set_structural_bounds(VarId var, double lower, double upper);
    void add_row(const Constraint &constraint);

    LpOutcome solve();

    std::vector<double> structural_values() const;
    double objective_value() const;
    std::size_t iterations() const { return total_iterations_; }

    /// Rebuilds the tableau from the original rows for the current basis.
    void refactor();
    /// Discards the basis and restarts from the slack basis.
    void cold_start();

private:
    enum class Position : unsigned char { Basic, AtLower, AtUpper };

    struct Row {
        std::vector<Term> terms;
        double lower;
        double upper;
    };

    double *row_ptr(std::size_t r) { return tableau_.data() + r * stride_; }
    const double *row_ptr(std::size_t r) const { return tableau_.data() + r * stride_; }

    void build_slack_tableau();
    void recompute_basic_values();
    void recompute_reduced_costs();
    void place_nonbasic(std::size_t j);
    void pivot(std::size_t r, std::size_t q, double target);
    double primal_tolerance(double bound) const;
    bool relies_on_artificial_bound() const;

    SolverOptions options_;
    std::size_t structurals_;
    std::vector<Row> rows_;

    std::vector<double> lower_;
    std::vector<double> upper_;
    std::vector<double> original_lower_;
    std::vector<double> original_upper_;
    std::vector<double> cost_;
    double objective_sign_ = 1.0;
    double objective_constant_ = 0.0;

    std::vector<double> tableau_;
    std::size_t stride_ = 0;
    std::vector<std::size_t> basis_;       // row -> variable
    std::vector<Position> position_;
    std::vector<double> value_;
    std::vector<double> reduced_;
    std::vector<std::size_t> pivot_nonzeros_;

    std::size_t total_iterations_ = 0;
    std::size_t pivots_since_refactor_ = 0;
};

} // namespace batchverify::solver::detail
