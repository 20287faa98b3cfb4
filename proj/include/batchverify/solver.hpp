#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace batchverify::solver {

using VarId = std::size_t;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class Relation { LessEqual, Equal, GreaterEqual };
enum class Sense { Minimize, Maximize, Feasibility };
enum class Status { Optimal, Feasible, Infeasible, Unbounded };

const char *to_string(Status status);

struct Term {
    VarId var;
    double coef;
};

struct Constraint {
    std::vector<Term> terms;
    Relation relation = Relation::LessEqual;
    double rhs = 0.0;
};

struct Variable {
    double lower = 0.0;
    double upper = kInfinity;
    std::string name;
};

struct Objective {
    Sense sense = Sense::Feasibility;
    std::vector<Term> terms;
    double constant = 0.0;
};

/// Continuous linear program over declared variables. Coefficients must be
/// finite and reference declared variables; this is checked on insertion.
class LinearProgram {
public:
    VarId add_variable(double lower, double upper, std::string name = {});
    void set_bounds(VarId var, double lower, double upper);

    void add_constraint(Constraint constraint);
    void add_constraint(std::vector<Term> terms, Relation relation, double rhs);

    void set_objective(Sense sense, std::vector<Term> terms = {}, double constant = 0.0);

    std::size_t variable_count() const { return variables_.size(); }
    const std::vector<Variable> &variables() const { return variables_; }
    const Variable &variable(VarId var) const { return variables_.at(var); }
    const std::vector<Constraint> &constraints() const { return constraints_; }
    const Objective &objective() const { return objective_; }

    /// Largest bound or row violation of `values`.
    double max_violation(const std::vector<double> &values) const;
    double evaluate_objective(const std::vector<double> &values) const;

protected:
    void check_terms(const std::vector<Term> &terms) const;

private:
    std::vector<Variable> variables_;
    std::vector<Constraint> constraints_;
    Objective objective_;
};

/// A linear program with a subset of variables restricted to {0, 1}.
class MilpProblem : public LinearProgram {
public:
    VarId add_binary(std::string name = {});
    /// Marks an existing variable binary and clamps its bounds to [0, 1].
    void make_binary(VarId var);

    bool is_binary(VarId var) const;
    const std::vector<VarId> &binaries() const { return binaries_; }

private:
    std::vector<VarId> binaries_;
    std::vector<bool> binary_flags_;
};

struct SolverOptions {
    double feasibility_tolerance = 1e-6;
    double integrality_tolerance = 1e-6;
    double objective_tolerance = 1e-6;
    /// Replaces infinite variable bounds inside the simplex; a solution that
    /// leans on one with a non-zero reduced cost is reported Unbounded.
    double artificial_bound = 1e6;
    std::size_t node_limit = 2'000'000;
    /// Pivots between full refactorisations of the tableau.
    std::size_t refactor_interval = 1000;
};

struct SolveStats {
    std::size_t nodes = 0;
    std::size_t lp_iterations = 0;
};

struct SolveResult {
    Status status = Status::Infeasible;
    std::vector<double> assignment;  // empty unless Optimal or Feasible
    std::optional<double> objective; // absent for feasibility problems
    SolveStats stats;

    bool has_assignment() const { return status == Status::Optimal || status == Status::Feasible; }
};

/// FirstFeasible stops at the first integral point and ignores any objective.
/// ProveInfeasibleOrFeasible runs the search to completion: it returns the
/// optimum for Minimize/Maximize and a witness or a proof of infeasibility
/// otherwise.
enum class MilpMode { FirstFeasible, ProveInfeasibleOrFeasible };

SolveResult solve_lp(const LinearProgram &lp, const SolverOptions &options = {});
SolveResult solve_milp(const MilpProblem &problem, MilpMode mode, const SolverOptions &options = {});

/// Depth-first branch-and-bound that can absorb extra constraints after a
/// solve. In FirstFeasible mode the search resumes from the open nodes left
/// by the previous solve; adding constraints only shrinks the feasible set, so
/// everything already pruned stays pruned.
class MilpSession {
public:
    MilpSession(MilpProblem problem, MilpMode mode, SolverOptions options = {});
    ~MilpSession();
    MilpSession(MilpSession &&) noexcept;
    MilpSession &operator=(MilpSession &&) noexcept;

    const SolveResult &solve();
    const SolveResult &add_constraint_and_resolve(Constraint constraint);

    const SolveResult &result() const;
    const MilpProblem &problem() const;

private:
    class Impl;
    std::unique_ptr<Impl> impl_;
};

/// Writes the problem in CPLEX LP text format for cross-checking with other
/// solvers.
void write_lp_format(const LinearProgram &lp, const std::vector<VarId> &binaries, std::ostream &out);
void write_lp_format(const MilpProblem &problem, std::ostream &out);

} // namespace batchverify::solver
