#include "batchverify/solver.hpp"

#include "batchverify/error.hpp"
#include "simplex.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ostream>

namespace batchverify::solver {

using detail::DualSimplex;
using detail::LpOutcome;

const char *to_string(Status status)
{
    switch (status) {
    case Status::Optimal:
        return "Optimal";
    case Status::Feasible:
        return "Feasible";
    case Status::Infeasible:
        return "Infeasible";
    case Status::Unbounded:
        return "Unbounded";
    }
    return "?";
}

// LinearProgram

VarId LinearProgram::add_variable(double lower, double upper, std::string name)
{
    if (std::isnan(lower) || std::isnan(upper))
        throw InvalidArgument("variable bounds must not be NaN");
    if (lower == kInfinity || upper == -kInfinity)
        throw InvalidArgument("variable bounds must admit a finite value");
    variables_.push_back({lower, upper, std::move(name)});
    return variables_.size() - 1;
}

void LinearProgram::set_bounds(VarId var, double lower, double upper)
{
    if (var >= variables_.size())
        throw InvalidArgument("set_bounds: unknown variable " + std::to_string(var));
    if (std::isnan(lower) || std::isnan(upper))
        throw InvalidArgument("variable bounds must not be NaN");
    variables_[var].lower = lower;
    variables_[var].upper = upper;
}

void LinearProgram::check_terms(const std::vector<Term> &terms) const
{
    for (const Term &t : terms) {
        if (t.var >= variables_.size())
            throw InvalidArgument("coefficient references undeclared variable " + std::to_string(t.var));
        if (!std::isfinite(t.coef))
            throw InvalidArgument("non-finite coefficient");
    }
}

void LinearProgram::add_constraint(Constraint constraint)
{
    check_terms(constraint.terms);
    if (!std::isfinite(constraint.rhs))
        throw InvalidArgument("non-finite right-hand side");
    constraints_.push_back(std::move(constraint));
}

void LinearProgram::add_constraint(std::vector<Term> terms, Relation relation, double rhs)
{
    add_constraint(Constraint{std::move(terms), relation, rhs});
}

void LinearProgram::set_objective(Sense sense, std::vector<Term> terms, double constant)
{
    check_terms(terms);
    objective_ = Objective{sense, std::move(terms), constant};
}

double LinearProgram::max_violation(const std::vector<double> &values) const
{
    if (values.size() != variables_.size())
        throw DimensionError("assignment size does not match the variable count");
    double worst = 0.0;
    for (VarId j = 0; j < variables_.size(); ++j) {
        worst = std::max(worst, variables_[j].lower - values[j]);
        worst = std::max(worst, values[j] - variables_[j].upper);
    }
    for (const Constraint &c : constraints_) {
        double lhs = 0.0;
        for (const Term &t : c.terms)
            lhs += t.coef * values[t.var];
        if (c.relation != Relation::GreaterEqual)
            worst = std::max(worst, lhs - c.rhs);
        if (c.relation != Relation::LessEqual)
            worst = std::max(worst, c.rhs - lhs);
    }
    return worst;
}

double LinearProgram::evaluate_objective(const std::vector<double> &values) const
{
    double total = objective_.constant;
    for (const Term &t : objective_.terms)
        total += t.coef * values.at(t.var);
    return total;
}

// MilpProblem

VarId MilpProblem::add_binary(std::string name)
{
    const VarId var = add_variable(0.0, 1.0, std::move(name));
    make_binary(var);
    return var;
}

void MilpProblem::make_binary(VarId var)
{
    if (var >= variable_count())
        throw InvalidArgument("make_binary: unknown variable " + std::to_string(var));
    if (binary_flags_.size() < variable_count())
        binary_flags_.resize(variable_count(), false);
    if (binary_flags_[var])
        return;
    binary_flags_[var] = true;
    binaries_.push_back(var);
    const Variable &v = variable(var);
    set_bounds(var, std::max(0.0, v.lower), std::min(1.0, v.upper));
}

bool MilpProblem::is_binary(VarId var) const
{
    return var < binary_flags_.size() && binary_flags_[var];
}

// LP

namespace {

void check_assignment(const LinearProgram &lp, const std::vector<double> &values, const SolverOptions &options)
{
    const double violation = lp.max_violation(values);
    if (violation > options.feasibility_tolerance)
        throw NumericalFailure("solution violates constraints by " + std::to_string(violation));
}

} // namespace

SolveResult solve_lp(const LinearProgram &lp, const SolverOptions &options)
{
    DualSimplex simplex(lp, options);
    LpOutcome outcome = simplex.solve();
    SolveResult result;
    if (outcome == LpOutcome::Optimal && lp.max_violation(simplex.structural_values()) > options.feasibility_tolerance) {
        simplex.refactor();
        outcome = simplex.solve();
    }
    result.stats.lp_iterations = simplex.iterations();
    if (outcome == LpOutcome::Infeasible) {
        result.status = Status::Infeasible;
        return result;
    }
    if (outcome == LpOutcome::Unbounded) {
        result.status = Status::Unbounded;
        return result;
    }
    result.assignment = simplex.structural_values();
    check_assignment(lp, result.assignment, options);
    if (lp.objective().sense == Sense::Feasibility) {
        result.status = Status::Feasible;
    } else {
        result.status = Status::Optimal;
        result.objective = lp.evaluate_objective(result.assignment);
    }
    return result;
}

// Branch and bound

class MilpSession::Impl {
public:
    Impl(MilpProblem problem, MilpMode mode, SolverOptions options)
        : problem_(std::move(problem))
        , mode_(mode)
        , options_(options)
        , simplex_(problem_, options_)
    {
        optimizing_ = mode_ == MilpMode::ProveInfeasibleOrFeasible &&
                      problem_.objective().sense != Sense::Feasibility;
        for (VarId b : problem_.binaries()) {
            root_lower_.push_back(problem_.variable(b).lower);
            root_upper_.push_back(problem_.variable(b).upper);
        }
        applied_lower_ = root_lower_;
        applied_upper_ = root_upper_;
        stack_.push_back(Node{});
    }

    const SolveResult &solve()
    {
        run();
        return result_;
    }

    const SolveResult &add_constraint(Constraint constraint)
    {
        problem_.add_constraint(constraint);
        simplex_.add_row(constraint);
        if (optimizing_ || !solved_once_) {
            // Incumbent pruning is not monotone under new rows: restart the
            // tree, keeping the warm basis.
            stack_.clear();
            stack_.push_back(Node{});
            incumbent_.reset();
        }
        run();
        return result_;
    }

    const SolveResult &result() const { return result_; }
    const MilpProblem &problem() const { return problem_; }

private:
    struct Node {
        std::vector<std::pair<std::size_t, double>> fixings; // index into binaries(), value
    };

    void apply(const Node &node)
    {
        std::vector<double> lower = root_lower_;
        std::vector<double> upper = root_upper_;
        for (const auto &[index, value] : node.fixings) {
            lower[index] = value;
            upper[index] = value;
        }
        const auto &binaries = problem_.binaries();
        for (std::size_t i = 0; i < binaries.size(); ++i) {
            if (lower[i] == applied_lower_[i] && upper[i] == applied_upper_[i])
                continue;
            simplex_.set_structural_bounds(binaries[i], lower[i], upper[i]);
            applied_lower_[i] = lower[i];
            applied_upper_[i] = upper[i];
        }
    }

    double objective_tolerance(double value) const
    {
        return options_.objective_tolerance * std::max(1.0, std::abs(value));
    }

    LpOutcome solve_node()
    {
        LpOutcome outcome = simplex_.solve();
        if (outcome == LpOutcome::Optimal &&
            problem_.max_violation(simplex_.structural_values()) > options_.feasibility_tolerance) {
            simplex_.refactor();
            outcome = simplex_.solve();
        }
        return outcome;
    }

    void run()
    {
        solved_once_ = true;
        const auto &binaries = problem_.binaries();
        while (!stack_.empty()) {
            if (nodes_ >= options_.node_limit)
                throw NodeLimitExceeded("branch-and-bound node limit of " +
                                        std::to_string(options_.node_limit) + " exceeded");
            Node node = std::move(stack_.back());
            stack_.pop_back();
            ++nodes_;
            apply(node);
            const LpOutcome outcome = solve_node();
            if (outcome == LpOutcome::Infeasible)
                continue;
            if (outcome == LpOutcome::Unbounded) {
                finish(Status::Unbounded, {});
                stack_.clear();
                return;
            }
            std::vector<double> values = simplex_.structural_values();
            const double bound = problem_.evaluate_objective(values);
            if (optimizing_ && incumbent_ && !improves(bound))
                continue;

            std::size_t branch = binaries.size();
            double best_fraction = options_.integrality_tolerance;
            for (std::size_t i = 0; i < binaries.size(); ++i) {
                const double v = values[binaries[i]];
                const double fraction = std::min(v - std::floor(v), std::ceil(v) - v);
                if (fraction > best_fraction) {
                    best_fraction = fraction;
                    branch = i;
                }
            }

            if (branch == binaries.size()) {
                if (problem_.max_violation(values) > options_.feasibility_tolerance)
                    throw NumericalFailure("integral node solution violates constraints");
                if (!optimizing_) {
                    // Re-open the node so that a later constraint resumes here.
                    stack_.push_back(std::move(node));
                    finish(problem_.objective().sense == Sense::Feasibility || mode_ == MilpMode::FirstFeasible
                               ? Status::Feasible
                               : Status::Optimal,
                           std::move(values));
                    return;
                }
                incumbent_ = std::move(values);
                incumbent_value_ = bound;
                continue;
            }

            const double v = values[binaries[branch]];
            const double near = v >= 0.5 ? 1.0 : 0.0;
            Node far_child = node;
            far_child.fixings.emplace_back(branch, 1.0 - near);
            node.fixings.emplace_back(branch, near);
            stack_.push_back(std::move(far_child));
            stack_.push_back(std::move(node));
        }
        if (optimizing_ && incumbent_)
            finish(Status::Optimal, *incumbent_);
        else
            finish(Status::Infeasible, {});
    }

    bool improves(double bound) const
    {
        const bool minimize = problem_.objective().sense == Sense::Minimize;
        const double tol = objective_tolerance(incumbent_value_);
        return minimize ? bound < incumbent_value_ - tol : bound > incumbent_value_ + tol;
    }

    void finish(Status status, std::vector<double> values)
    {
        result_ = SolveResult{};
        result_.status = status;
        result_.stats.nodes = nodes_;
        result_.stats.lp_iterations = simplex_.iterations();
        if (result_.has_assignment()) {
            if (problem_.objective().sense != Sense::Feasibility && mode_ == MilpMode::ProveInfeasibleOrFeasible)
                result_.objective = problem_.evaluate_objective(values);
            result_.assignment = std::move(values);
        }
    }

    MilpProblem problem_;
    MilpMode mode_;
    SolverOptions options_;
    DualSimplex simplex_;
    bool optimizing_ = false;
    bool solved_once_ = false;

    std::vector<double> root_lower_, root_upper_;
    std::vector<double> applied_lower_, applied_upper_;
    std::vector<Node> stack_;
    std::optional<std::vector<double>> incumbent_;
    double incumbent_value_ = 0.0;
    std::size_t nodes_ = 0;
    SolveResult result_;
};

MilpSession::MilpSession(MilpProblem problem, MilpMode mode, SolverOptions options)
    : impl_(std::make_unique<Impl>(std::move(problem), mode, options))
{
}

MilpSession::~MilpSession() = default;
MilpSession::MilpSession(MilpSession &&) noexcept = default;
MilpSession &MilpSession::operator=(MilpSession &&) noexcept = default;

const SolveResult &MilpSession::solve()
{
    return impl_->solve();
}

const SolveResult &MilpSession::add_constraint_and_resolve(Constraint constraint)
{
    return impl_->add_constraint(std::move(constraint));
}

const SolveResult &MilpSession::result() const
{
    return impl_->result();
}

const MilpProblem &MilpSession::problem() const
{
    return impl_->problem();
}

SolveResult solve_milp(const MilpProblem &problem, MilpMode mode, const SolverOptions &options)
{
    MilpSession session(problem, mode, options);
    return session.solve();
}

// LP text format

namespace {

std::string var_name(const LinearProgram &lp, VarId var)
{
    const std::string &name = lp.variable(var).name;
    if (name.empty())
        return "x" + std::to_string(var);
    std::string out;
    for (char ch : name)
        out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.') ? ch : '_';
    if (!std::isalpha(static_cast<unsigned char>(out.front())))
        out = "v_" + out;
    return out + "_" + std::to_string(var);
}

void write_terms(const LinearProgram &lp, const std::vector<Term> &terms, std::ostream &out)
{
    if (terms.empty()) {
        out << " 0 " << var_name(lp, 0);
        return;
    }
    for (const Term &t : terms)
        out << (t.coef < 0 ? " - " : " + ") << std::abs(t.coef) << ' ' << var_name(lp, t.var);
}

} // namespace

void write_lp_format(const LinearProgram &lp, const std::vector<VarId> &binaries, std::ostream &out)
{
    const auto precision = out.precision(17);
    const Objective &objective = lp.objective();
    out << "\\ generated by batchverify\n";
    out << (objective.sense == Sense::Maximize ? "Maximize\n" : "Minimize\n");
    out << " obj:";
    if (objective.sense == Sense::Feasibility || objective.terms.empty())
        out << " 0";
    else
        write_terms(lp, objective.terms, out);
    out << "\nSubject To\n";
    for (std::size_t r = 0; r < lp.constraints().size(); ++r) {
        const Constraint &c = lp.constraints()[r];
        out << " c" << r << ':';
        write_terms(lp, c.terms, out);
        out << (c.relation == Relation::LessEqual ? " <= " : c.relation == Relation::Equal ? " = " : " >= ")
            << c.rhs << '\n';
    }
    out << "Bounds\n";
    for (VarId j = 0; j < lp.variable_count(); ++j) {
        const Variable &v = lp.variable(j);
        const std::string name = var_name(lp, j);
        if (!std::isfinite(v.lower) && !std::isfinite(v.upper))
            out << ' ' << name << " free\n";
        else if (!std::isfinite(v.lower))
            out << " -inf <= " << name << " <= " << v.upper << '\n';
        else if (!std::isfinite(v.upper))
            out << ' ' << name << " >= " << v.lower << '\n';
        else
            out << ' ' << v.lower << " <= " << name << " <= " << v.upper << '\n';
    }
    if (!binaries.empty()) {
        out << "Binary\n";
        for (VarId b : binaries)
            out << ' ' << var_name(lp, b) << '\n';
    }
    out << "End\n";
    out.precision(precision);
}

void write_lp_format(const MilpProblem &problem, std::ostream &out)
{
    write_lp_format(problem, problem.binaries(), out);
}

} // namespace batchverify::solver
