#include "simplex.hpp"

#include "batchverify/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace batchverify::solver::detail {

namespace {

constexpr double kPivotTolerance = 1e-9;
constexpr double kDualTolerance = 1e-9;
constexpr double kDropTolerance = 1e-13;

} // namespace

DualSimplex::DualSimplex(const LinearProgram &lp, const SolverOptions &options)
    : options_(options)
    , structurals_(lp.variable_count())
{
    const Objective &objective = lp.objective();
    objective_sign_ = objective.sense == Sense::Maximize ? -1.0 : 1.0;
    objective_constant_ = objective.constant;

    lower_.resize(structurals_);
    upper_.resize(structurals_);
    original_lower_.resize(structurals_);
    original_upper_.resize(structurals_);
    cost_.assign(structurals_, 0.0);
    position_.assign(structurals_, Position::AtLower);
    value_.assign(structurals_, 0.0);
    for (VarId j = 0; j < structurals_; ++j) {
        const Variable &v = lp.variable(j);
        original_lower_[j] = v.lower;
        original_upper_[j] = v.upper;
    }
    if (objective.sense != Sense::Feasibility)
        for (const Term &t : objective.terms)
            cost_[t.var] += objective_sign_ * t.coef;

    for (const Constraint &c : lp.constraints()) {
        Row row{c.terms, -kInfinity, kInfinity};
        if (c.relation != Relation::GreaterEqual)
            row.upper = c.rhs;
        if (c.relation != Relation::LessEqual)
            row.lower = c.rhs;
        rows_.push_back(std::move(row));
    }
    cold_start();
}

void DualSimplex::cold_start()
{
    const std::size_t m = rows_.size();
    const std::size_t columns = structurals_ + m;

    lower_.resize(columns);
    upper_.resize(columns);
    cost_.resize(columns, 0.0);
    const double art = options_.artificial_bound;
    for (std::size_t j = 0; j < structurals_; ++j) {
        const double lo = original_lower_[j];
        const double hi = original_upper_[j];
        lower_[j] = std::isfinite(lo) ? lo : (std::isfinite(hi) ? std::min(hi, 0.0) : 0.0) - art;
        upper_[j] = std::isfinite(hi) ? hi : (std::isfinite(lo) ? std::max(lo, 0.0) : 0.0) + art;
    }
    for (std::size_t r = 0; r < m; ++r) {
        lower_[structurals_ + r] = rows_[r].lower;
        upper_[structurals_ + r] = rows_[r].upper;
        cost_[structurals_ + r] = 0.0;
    }
    build_slack_tableau();
}

void DualSimplex::build_slack_tableau()
{
    const std::size_t m = rows_.size();
    const std::size_t columns = structurals_ + m;
    stride_ = columns;
    tableau_.assign(m * stride_, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        double *row = row_ptr(r);
        for (const Term &t : rows_[r].terms)
            row[t.var] -= t.coef;
        row[structurals_ + r] = 1.0;
    }
    basis_.resize(m);
    position_.resize(columns);
    value_.resize(columns);
    reduced_ = cost_;
    for (std::size_t r = 0; r < m; ++r) {
        basis_[r] = structurals_ + r;
        position_[structurals_ + r] = Position::Basic;
    }
    for (std::size_t j = 0; j < structurals_; ++j) {
        position_[j] = Position::AtLower;
        place_nonbasic(j);
    }
    recompute_basic_values();
    pivots_since_refactor_ = 0;
}

void DualSimplex::place_nonbasic(std::size_t j)
{
    Position pos = position_[j];
    if (lower_[j] == upper_[j] || reduced_[j] > 0.0)
        pos = Position::AtLower;
    else if (reduced_[j] < 0.0)
        pos = Position::AtUpper;
    else if (pos == Position::Basic)
        pos = Position::AtLower;
    position_[j] = pos;
    value_[j] = pos == Position::AtLower ? lower_[j] : upper_[j];
}

void DualSimplex::recompute_basic_values()
{
    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < position_.size(); ++j)
        if (position_[j] != Position::Basic && value_[j] != 0.0)
            active.push_back(j);
    for (std::size_t r = 0; r < basis_.size(); ++r) {
        const double *row = row_ptr(r);
        double s = 0.0;
        for (std::size_t j : active)
            s -= row[j] * value_[j];
        value_[basis_[r]] = s;
    }
}

void DualSimplex::recompute_reduced_costs()
{
    reduced_ = cost_;
    for (std::size_t r = 0; r < basis_.size(); ++r) {
        const double cb = cost_[basis_[r]];
        if (cb == 0.0)
            continue;
        const double *row = row_ptr(r);
        for (std::size_t j = 0; j < stride_; ++j)
            reduced_[j] -= cb * row[j];
    }
    for (std::size_t b : basis_)
        reduced_[b] = 0.0;
}

void DualSimplex::set_structural_bounds(VarId var, double lower, double upper)
{
    original_lower_[var] = lower;
    original_upper_[var] = upper;
    const double art = options_.artificial_bound;
    lower_[var] = std::isfinite(lower) ? lower : (std::isfinite(upper) ? std::min(upper, 0.0) : 0.0) - art;
    upper_[var] = std::isfinite(upper) ? upper : (std::isfinite(lower) ? std::max(lower, 0.0) : 0.0) + art;
    if (position_[var] == Position::Basic)
        return;
    const double old = value_[var];
    place_nonbasic(var);
    const double delta = value_[var] - old;
    if (delta == 0.0)
        return;
    for (std::size_t r = 0; r < basis_.size(); ++r) {
        const double t = row_ptr(r)[var];
        if (t != 0.0)
            value_[basis_[r]] -= t * delta;
    }
}

void DualSimplex::add_row(const Constraint &constraint)
{
    Row row{constraint.terms, -kInfinity, kInfinity};
    if (constraint.relation != Relation::GreaterEqual)
        row.upper = constraint.rhs;
    if (constraint.relation != Relation::LessEqual)
        row.lower = constraint.rhs;

    const std::size_t m = rows_.size();
    const std::size_t old_columns = structurals_ + m;
    const std::size_t columns = old_columns + 1;
    const std::size_t new_var = old_columns;

    std::vector<double> grown((m + 1) * columns, 0.0);
    for (std::size_t r = 0; r < m; ++r)
        std::copy_n(row_ptr(r), old_columns, grown.data() + r * columns);
    tableau_ = std::move(grown);
    stride_ = columns;

    // g . y = 0 with g = [a | 0 ... 0 | -1]; eliminate the basic columns.
    double *g = row_ptr(m);
    for (const Term &t : row.terms)
        g[t.var] += t.coef;
    g[new_var] = -1.0;
    for (std::size_t r = 0; r < m; ++r) {
        const double f = g[basis_[r]];
        if (f == 0.0)
            continue;
        const double *tr = row_ptr(r);
        for (std::size_t j = 0; j < old_columns; ++j)
            if (tr[j] != 0.0)
                g[j] -= f * tr[j];
        g[basis_[r]] = 0.0;
    }
    for (std::size_t j = 0; j < columns; ++j)
        g[j] = -g[j];
    g[new_var] = 1.0;

    rows_.push_back(std::move(row));
    lower_.push_back(rows_.back().lower);
    upper_.push_back(rows_.back().upper);
    cost_.push_back(0.0);
    position_.push_back(Position::Basic);
    reduced_.push_back(0.0);
    basis_.push_back(new_var);
    double s = 0.0;
    for (std::size_t j = 0; j < old_columns; ++j)
        if (position_[j] != Position::Basic && g[j] != 0.0)
            s -= g[j] * value_[j];
    value_.push_back(s);
}

void DualSimplex::refactor()
{
    const std::size_t m = rows_.size();
    const std::size_t columns = structurals_ + m;
    pivots_since_refactor_ = 0;
    if (m == 0)
        return;

    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(columns));
    for (std::size_t r = 0; r < m; ++r) {
        for (const Term &t : rows_[r].terms)
            full(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t.var)) += t.coef;
        full(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(structurals_ + r)) = -1.0;
    }
    Eigen::MatrixXd basis(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (std::size_t r = 0; r < m; ++r)
        basis.col(static_cast<Eigen::Index>(r)) = full.col(static_cast<Eigen::Index>(basis_[r]));

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(basis);
    Eigen::MatrixXd solved = lu.solve(full);
    bool healthy = solved.allFinite();
    for (std::size_t r = 0; healthy && r < m; ++r) {
        const auto col = static_cast<Eigen::Index>(basis_[r]);
        for (std::size_t i = 0; i < m; ++i) {
            const double expected = i == r ? 1.0 : 0.0;
            if (std::abs(solved(static_cast<Eigen::Index>(i), col) - expected) > 1e-7) {
                healthy = false;
                break;
            }
        }
    }
    if (!healthy) {
        cold_start();
        return;
    }
    for (std::size_t r = 0; r < m; ++r) {
        double *row = row_ptr(r);
        for (std::size_t j = 0; j < columns; ++j) {
            const double v = solved(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j));
            row[j] = std::abs(v) < kDropTolerance ? 0.0 : v;
        }
        for (std::size_t i = 0; i < m; ++i)
            row[basis_[i]] = i == r ? 1.0 : 0.0;
    }
    recompute_reduced_costs();
    recompute_basic_values();
}

double DualSimplex::primal_tolerance(double bound) const
{
    return 1e-9 * std::max(1.0, std::abs(bound));
}

bool DualSimplex::relies_on_artificial_bound() const
{
    for (std::size_t j = 0; j < structurals_; ++j) {
        if (position_[j] == Position::Basic || std::abs(reduced_[j]) <= kDualTolerance)
            continue;
        if (position_[j] == Position::AtLower && !std::isfinite(original_lower_[j]))
            return true;
        if (position_[j] == Position::AtUpper && !std::isfinite(original_upper_[j]))
            return true;
    }
    return false;
}

void DualSimplex::pivot(std::size_t r, std::size_t q, double target)
{
    double *pr = row_ptr(r);
    const double alpha = pr[q];
    const std::size_t leaving = basis_[r];
    const std::size_t m = basis_.size();

    const double dq = -(target - value_[leaving]) / alpha;
    if (dq != 0.0) {
        for (std::size_t i = 0; i < m; ++i) {
            const double t = row_ptr(i)[q];
            if (t != 0.0)
                value_[basis_[i]] -= t * dq;
        }
        value_[q] += dq;
    }
    value_[leaving] = target;

    pivot_nonzeros_.clear();
    for (std::size_t j = 0; j < stride_; ++j)
        if (pr[j] != 0.0)
            pivot_nonzeros_.push_back(j);

    const double theta = reduced_[q] / alpha;
    if (theta != 0.0)
        for (std::size_t j : pivot_nonzeros_)
            reduced_[j] -= theta * pr[j];
    reduced_[q] = 0.0;

    const double inv = 1.0 / alpha;
    for (std::size_t j : pivot_nonzeros_)
        pr[j] *= inv;
    pr[q] = 1.0;

    for (std::size_t i = 0; i < m; ++i) {
        if (i == r)
            continue;
        double *pi = row_ptr(i);
        const double f = pi[q];
        if (f == 0.0)
            continue;
        for (std::size_t j : pivot_nonzeros_) {
            const double v = pi[j] - f * pr[j];
            pi[j] = std::abs(v) < kDropTolerance ? 0.0 : v;
        }
        pi[q] = 0.0;
    }

    basis_[r] = q;
    position_[q] = Position::Basic;
    position_[leaving] = target == lower_[leaving] ? Position::AtLower : Position::AtUpper;
    ++pivots_since_refactor_;
}

LpOutcome DualSimplex::solve()
{
    for (std::size_t j = 0; j < structurals_; ++j)
        if (lower_[j] > upper_[j] + primal_tolerance(upper_[j]))
            return LpOutcome::Infeasible;

    const std::size_t m = basis_.size();
    const std::size_t columns = stride_;
    const std::size_t bland_after = 4 * (m + columns) + 200;
    const std::size_t limit = 60 * (m + columns) + 20000;
    std::size_t iterations = 0;
    bool bland = false;

    struct Candidate {
        std::size_t column;
        double ratio;
        double magnitude;
    };
    std::vector<Candidate> candidates;

    while (true) {
        if (pivots_since_refactor_ >= options_.refactor_interval)
            refactor();

        std::size_t leave_row = m;
        double worst = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t b = basis_[r];
            const double v = value_[b];
            double infeasibility = 0.0;
            if (v < lower_[b] - primal_tolerance(lower_[b]))
                infeasibility = lower_[b] - v;
            else if (v > upper_[b] + primal_tolerance(upper_[b]))
                infeasibility = v - upper_[b];
            else
                continue;
            if (bland) {
                if (leave_row == m || b < basis_[leave_row])
                    leave_row = r;
            } else if (infeasibility > worst) {
                worst = infeasibility;
                leave_row = r;
            }
        }
        if (leave_row == m)
            return relies_on_artificial_bound() ? LpOutcome::Unbounded : LpOutcome::Optimal;

        const std::size_t leaving = basis_[leave_row];
        const bool increase = value_[leaving] < lower_[leaving];
        const double target = increase ? lower_[leaving] : upper_[leaving];
        const double *row = row_ptr(leave_row);

        candidates.clear();
        double max_step = kInfinity;
        for (std::size_t j = 0; j < columns; ++j) {
            if (position_[j] == Position::Basic || lower_[j] == upper_[j])
                continue;
            const double a = row[j];
            if (std::abs(a) <= kPivotTolerance)
                continue;
            const bool at_lower = position_[j] == Position::AtLower;
            const bool eligible = increase ? (at_lower ? a < 0.0 : a > 0.0) : (at_lower ? a > 0.0 : a < 0.0);
            if (!eligible)
                continue;
            const double d = at_lower ? std::max(reduced_[j], 0.0) : std::max(-reduced_[j], 0.0);
            const double magnitude = std::abs(a);
            candidates.push_back({j, d / magnitude, magnitude});
            max_step = std::min(max_step, (d + kDualTolerance) / magnitude);
        }
        if (candidates.empty())
            return LpOutcome::Infeasible;

        std::size_t entering = columns;
        if (bland) {
            double best_ratio = kInfinity;
            for (const Candidate &c : candidates)
                best_ratio = std::min(best_ratio, c.ratio);
            for (const Candidate &c : candidates)
                if (c.ratio <= best_ratio + 1e-12 && c.column < entering)
                    entering = c.column;
        } else {
            double best_magnitude = -1.0;
            for (const Candidate &c : candidates)
                if (c.ratio <= max_step && c.magnitude > best_magnitude) {
                    best_magnitude = c.magnitude;
                    entering = c.column;
                }
        }

        pivot(leave_row, entering, target);
        ++iterations;
        ++total_iterations_;
        if (iterations > bland_after)
            bland = true;
        if (iterations > limit)
            throw NumericalFailure("dual simplex exceeded its iteration limit");
    }
}

std::vector<double> DualSimplex::structural_values() const
{
    return {value_.begin(), value_.begin() + static_cast<std::ptrdiff_t>(structurals_)};
}

double DualSimplex::objective_value() const
{
    double total = 0.0;
    for (std::size_t j = 0; j < structurals_; ++j)
        total += cost_[j] * value_[j];
    return objective_sign_ * total + objective_constant_;
}

} // namespace batchverify::solver::detail
