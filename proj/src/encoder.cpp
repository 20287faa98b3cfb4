#include "batchverify/encoder.hpp"

#include "batchverify/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace batchverify {

using solver::MilpMode;
using solver::MilpProblem;
using solver::Relation;
using solver::Sense;
using solver::Status;
using solver::Term;
using solver::VarId;

void BallQuery::validate(const Network &net) const
{
    if (static_cast<std::size_t>(center.size()) != net.input_dim())
        throw DimensionError("ball center has " + std::to_string(center.size()) +
                             " entries, network expects " + std::to_string(net.input_dim()));
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
        throw InvalidArgument("epsilon must be finite and non-negative");
    for (Eigen::Index i = 0; i < center.size(); ++i)
        if (!(center[i] >= 0.0 && center[i] <= 1.0))
            throw InvalidArgument("ball center coordinate " + std::to_string(i) + " outside [0,1]");
    if (label >= net.output_dim())
        throw InvalidArgument("class " + std::to_string(label) + " out of range");
}

std::vector<Interval> LayerBounds::post_activation(std::size_t layer) const
{
    if (layer == 0 || layer > depth())
        throw InvalidArgument("post_activation: layer " + std::to_string(layer) + " not covered by bounds");
    const Eigen::VectorXd &lo = lower[layer - 1];
    const Eigen::VectorXd &hi = upper[layer - 1];
    std::vector<Interval> out(static_cast<std::size_t>(lo.size()));
    for (Eigen::Index m = 0; m < lo.size(); ++m)
        out[static_cast<std::size_t>(m)] = {std::max(0.0, lo[m]), std::max(0.0, hi[m])};
    return out;
}

namespace encoding {

Interval input_interval(double center, double epsilon)
{
    return {std::max(0.0, center - epsilon), std::min(1.0, center + epsilon)};
}

std::vector<VarId> input_box(MilpProblem &problem, const BallQuery &query)
{
    std::vector<VarId> vars;
    vars.reserve(static_cast<std::size_t>(query.center.size()));
    for (Eigen::Index m = 0; m < query.center.size(); ++m) {
        const Interval box = input_interval(query.center[m], query.epsilon);
        vars.push_back(problem.add_variable(box.lower, box.upper, "z0_" + std::to_string(m)));
    }
    return vars;
}

AffineExpr neuron_expression(const Layer &layer, std::size_t neuron, std::span<const VarId> inputs)
{
    if (inputs.size() != layer.input_size())
        throw DimensionError("neuron_expression: input variable count does not match layer width");
    AffineExpr expr;
    const auto row = static_cast<Eigen::Index>(neuron);
    expr.constant = layer.bias[row];
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const double w = layer.weights(row, static_cast<Eigen::Index>(k));
        if (w != 0.0)
            expr.terms.push_back({inputs[k], w});
    }
    return expr;
}

namespace {

// Terms of `z - expr` (the constant is moved to the right-hand side).
std::vector<Term> minus_expression(VarId z, const AffineExpr &expr)
{
    std::vector<Term> terms;
    terms.reserve(expr.terms.size() + 1);
    terms.push_back({z, 1.0});
    for (const Term &t : expr.terms)
        terms.push_back({t.var, -t.coef});
    return terms;
}

} // namespace

VarId relu_encoding(MilpProblem &problem, const AffineExpr &pre, Interval bounds)
{
    const double l = bounds.lower;
    const double u = bounds.upper;
    if (!(l <= u) || !std::isfinite(l) || !std::isfinite(u))
        throw InvalidArgument("relu_encoding needs finite bounds with l <= u");

    if (l >= 0.0) {
        const VarId z = problem.add_variable(l, u);
        problem.add_constraint(minus_expression(z, pre), Relation::Equal, pre.constant);
        return z;
    }
    if (u <= 0.0)
        return problem.add_variable(0.0, 0.0);

    const VarId z = problem.add_variable(0.0, u);
    const VarId a = problem.add_binary();
    // z >= pre
    problem.add_constraint(minus_expression(z, pre), Relation::GreaterEqual, pre.constant);
    // z <= u a
    problem.add_constraint({{z, 1.0}, {a, -u}}, Relation::LessEqual, 0.0);
    // z <= pre - l (1 - a)
    std::vector<Term> upper = minus_expression(z, pre);
    upper.push_back({a, -l});
    problem.add_constraint(std::move(upper), Relation::LessEqual, pre.constant - l);
    return z;
}

UnionEncoding union_encoding(MilpProblem &problem,
                             std::span<const VarId> outputs,
                             const std::vector<std::vector<Interval>> &intervals)
{
    if (intervals.empty())
        throw InvalidArgument("union_encoding needs at least one interval family member");
    for (const auto &member : intervals) {
        if (member.size() != outputs.size())
            throw DimensionError("union_encoding: member interval count does not match output count");
        for (const Interval &iv : member) {
            if (iv.lower < 0.0)
                throw InvalidArgument("union_encoding: interval lower bounds must be non-negative");
            if (iv.lower > iv.upper)
                throw InvalidArgument("union_encoding: empty interval");
        }
    }

    UnionEncoding enc;
    std::vector<Term> one_hot;
    for (std::size_t j = 0; j < intervals.size(); ++j) {
        enc.indicators.push_back(problem.add_binary("I_" + std::to_string(j)));
        one_hot.push_back({enc.indicators.back(), 1.0});
    }
    problem.add_constraint(std::move(one_hot), Relation::Equal, 1.0);

    for (std::size_t m = 0; m < outputs.size(); ++m) {
        double big_m = 0.0;
        for (const auto &member : intervals)
            big_m = std::max(big_m, member[m].upper);
        enc.big_m.push_back(big_m);
        const VarId y = outputs[m];
        // Rows implied by 0 <= y <= u_M are skipped; the variable bounds carry them.
        const auto &var = problem.variable(y);
        problem.set_bounds(y, std::max(var.lower, 0.0), std::min(var.upper, big_m));
        for (std::size_t j = 0; j < intervals.size(); ++j) {
            const Interval iv = intervals[j][m];
            const VarId indicator = enc.indicators[j];
            if (iv.lower > 0.0)
                problem.add_constraint({{y, 1.0}, {indicator, -iv.lower}}, Relation::GreaterEqual, 0.0);
            if (iv.upper < big_m)
                problem.add_constraint({{y, 1.0}, {indicator, big_m - iv.upper}}, Relation::LessEqual, big_m);
        }
    }
    return enc;
}

VarId max_encoding(MilpProblem &problem,
                  std::span<const VarId> scores,
                  std::span<const Interval> score_bounds,
                  std::size_t label,
                  double margin)
{
    if (scores.size() != score_bounds.size())
        throw DimensionError("max_encoding: score and bound counts differ");
    if (scores.size() < 2 || label >= scores.size())
        throw InvalidArgument("max_encoding needs at least two scores and a valid label");

    std::vector<std::size_t> competitors;
    for (std::size_t c = 0; c < scores.size(); ++c)
        if (c != label)
            competitors.push_back(c);

    if (competitors.size() == 1) {
        problem.add_constraint({{scores[label], 1.0}, {scores[competitors[0]], -1.0}}, Relation::LessEqual, -margin);
        return scores[competitors[0]];
    }

    double max_lower = -solver::kInfinity;
    double max_upper = -solver::kInfinity;
    for (std::size_t c : competitors) {
        max_lower = std::max(max_lower, score_bounds[c].lower);
        max_upper = std::max(max_upper, score_bounds[c].upper);
    }
    const VarId t = problem.add_variable(max_lower, max_upper, "max_other");
    std::vector<Term> one_hot;
    for (std::size_t c : competitors) {
        const VarId s = problem.add_binary("sel_" + std::to_string(c));
        one_hot.push_back({s, 1.0});
        // t >= z_c
        problem.add_constraint({{t, 1.0}, {scores[c], -1.0}}, Relation::GreaterEqual, 0.0);
        // t <= z_c + (u_max - l_c)(1 - s_c)
        const double slack = max_upper - score_bounds[c].lower;
        problem.add_constraint({{t, 1.0}, {scores[c], -1.0}, {s, slack}}, Relation::LessEqual, slack);
    }
    problem.add_constraint(std::move(one_hot), Relation::Equal, 1.0);
    problem.add_constraint({{scores[label], 1.0}, {t, -1.0}}, Relation::LessEqual, -margin);
    return t;
}

} // namespace encoding

namespace {

using encoding::AffineExpr;

/// Incrementally built network encoding with per-neuron bound solves.
class LayerEncoder {
public:
    explicit LayerEncoder(const EncoderOptions &options)
        : options_(options)
    {
    }

    MilpProblem &problem() { return problem_; }

    double optimize(const AffineExpr &expr, Sense sense) const
    {
        if (expr.terms.empty())
            return expr.constant;
        MilpProblem p = problem_;
        p.set_objective(sense, expr.terms, expr.constant);
        solver::SolveResult result;
        if (options_.bound_mode == BoundMode::LpRelaxation || p.binaries().empty())
            result = solver::solve_lp(p, options_.solver);
        else
            result = solver::solve_milp(p, MilpMode::ProveInfeasibleOrFeasible, options_.solver);
        if (result.status != Status::Optimal)
            throw SolverError(std::string("bound computation returned ") + solver::to_string(result.status));
        return *result.objective;
    }

    void bound_layer(const Layer &layer, std::span<const VarId> inputs, Eigen::VectorXd &lo, Eigen::VectorXd &hi) const
    {
        const auto n = static_cast<Eigen::Index>(layer.output_size());
        lo.resize(n);
        hi.resize(n);
        for (Eigen::Index m = 0; m < n; ++m) {
            const AffineExpr expr = encoding::neuron_expression(layer, static_cast<std::size_t>(m), inputs);
            const double l = optimize(expr, Sense::Minimize);
            const double u = std::max(l, optimize(expr, Sense::Maximize));
            lo[m] = l - options_.bound_padding * std::max(1.0, std::abs(l));
            hi[m] = u + options_.bound_padding * std::max(1.0, std::abs(u));
        }
    }

    std::vector<VarId> add_layer(const Layer &layer, std::span<const VarId> inputs,
                                 const Eigen::VectorXd &lo, const Eigen::VectorXd &hi)
    {
        std::vector<VarId> outputs;
        outputs.reserve(layer.output_size());
        for (std::size_t m = 0; m < layer.output_size(); ++m) {
            const auto i = static_cast<Eigen::Index>(m);
            const AffineExpr expr = encoding::neuron_expression(layer, m, inputs);
            if (layer.has_relu) {
                outputs.push_back(encoding::relu_encoding(problem_, expr, {lo[i], hi[i]}));
            } else {
                const VarId z = problem_.add_variable(lo[i], hi[i]);
                std::vector<Term> terms{{z, 1.0}};
                for (const Term &t : expr.terms)
                    terms.push_back({t.var, -t.coef});
                problem_.add_constraint(std::move(terms), Relation::Equal, expr.constant);
                outputs.push_back(z);
            }
        }
        return outputs;
    }

    /// Encodes layers [first, last) (0-based), computing bounds for layers
    /// not covered by `given` and appending them to `computed`.
    std::vector<VarId> propagate(const Network &net, std::vector<VarId> current, std::size_t first, std::size_t last,
                                 const LayerBounds *given, LayerBounds &computed)
    {
        for (std::size_t i = first; i < last; ++i) {
            const Layer &layer = net.layer(i);
            Eigen::VectorXd lo, hi;
            if (given != nullptr && i < given->depth()) {
                lo = given->lower[i];
                hi = given->upper[i];
                if (static_cast<std::size_t>(lo.size()) != layer.output_size() ||
                    static_cast<std::size_t>(hi.size()) != layer.output_size())
                    throw DimensionError("supplied bounds do not match layer " + std::to_string(i + 1));
            } else {
                bound_layer(layer, current, lo, hi);
            }
            computed.lower.push_back(lo);
            computed.upper.push_back(hi);
            current = add_layer(layer, current, lo, hi);
        }
        return current;
    }

private:
    const EncoderOptions &options_;
    MilpProblem problem_;
};

} // namespace

LayerBounds milp_bounds(const Network &net, std::size_t depth, const BallQuery &query, const EncoderOptions &options)
{
    query.validate(net);
    if (depth < 1 || depth > net.layer_count())
        throw InvalidArgument("milp_bounds: depth must lie in [1, L]");
    LayerEncoder encoder(options);
    LayerBounds bounds;
    // Layer `depth` itself only needs bounds, not an encoding.
    const std::vector<VarId> last =
        encoder.propagate(net, encoding::input_box(encoder.problem(), query), 0, depth - 1, nullptr, bounds);
    Eigen::VectorXd lo, hi;
    encoder.bound_layer(net.layer(depth - 1), last, lo, hi);
    bounds.lower.push_back(std::move(lo));
    bounds.upper.push_back(std::move(hi));
    return bounds;
}

namespace {

std::vector<Interval> output_intervals(const LayerBounds &bounds)
{
    const Eigen::VectorXd &lo = bounds.lower.back();
    const Eigen::VectorXd &hi = bounds.upper.back();
    std::vector<Interval> out(static_cast<std::size_t>(lo.size()));
    for (Eigen::Index c = 0; c < lo.size(); ++c)
        out[static_cast<std::size_t>(c)] = {lo[c], hi[c]};
    return out;
}

std::size_t split_width(const Network &net, std::size_t split_layer)
{
    return split_layer == 0 ? net.input_dim() : net.layer(split_layer - 1).output_size();
}

} // namespace

BatchEncoding milp_batch(const Network &net,
                         std::size_t split_layer,
                         const std::vector<std::vector<Interval>> &member_intervals,
                         std::size_t label,
                         const EncoderOptions &options)
{
    if (split_layer >= net.layer_count())
        throw InvalidArgument("milp_batch: split layer must be below the output layer");
    if (label >= net.output_dim())
        throw InvalidArgument("milp_batch: class out of range");
    const std::size_t width = split_width(net, split_layer);

    LayerEncoder encoder(options);
    std::vector<VarId> split_vars;
    for (std::size_t m = 0; m < width; ++m)
        split_vars.push_back(encoder.problem().add_variable(0.0, solver::kInfinity, "y_" + std::to_string(m)));
    const encoding::UnionEncoding u = encoding::union_encoding(encoder.problem(), split_vars, member_intervals);

    BatchEncoding out;
    const std::vector<VarId> scores =
        encoder.propagate(net, split_vars, split_layer, net.layer_count(), nullptr, out.suffix_bounds);
    const std::vector<Interval> score_bounds = output_intervals(out.suffix_bounds);
    encoding::max_encoding(encoder.problem(), scores, score_bounds, label, options.misclassification_margin);
    encoder.problem().set_objective(Sense::Feasibility, {});

    out.milp = std::move(encoder.problem());
    out.indicators = u.indicators;
    out.big_m = u.big_m;
    return out;
}

std::vector<Interval> split_intervals(const LayerBounds &prefix, std::size_t split_layer, const BallQuery &query)
{
    if (split_layer == 0) {
        std::vector<Interval> out;
        for (Eigen::Index m = 0; m < query.center.size(); ++m)
            out.push_back(encoding::input_interval(query.center[m], query.epsilon));
        return out;
    }
    return prefix.post_activation(split_layer);
}

namespace {

bool misclassified(const Network &net, const Eigen::VectorXd &x, std::size_t label)
{
    return net.classify(x) != label;
}

Eigen::VectorXd clamp_to_ball(const std::vector<double> &assignment, const std::vector<VarId> &inputs,
                              const BallQuery &query)
{
    Eigen::VectorXd x(query.center.size());
    for (Eigen::Index m = 0; m < x.size(); ++m) {
        const Interval box = encoding::input_interval(query.center[m], query.epsilon);
        x[m] = std::clamp(assignment[inputs[static_cast<std::size_t>(m)]], box.lower, box.upper);
    }
    return x;
}

} // namespace

SingleVerdict mip_verify_single(const Network &net,
                                const BallQuery &query,
                                const LayerBounds *prefix,
                                const EncoderOptions &options)
{
    query.validate(net);
    LayerEncoder encoder(options);
    MilpProblem &problem = encoder.problem();
    const std::vector<VarId> inputs = encoding::input_box(problem, query);
    LayerBounds bounds;
    const std::vector<VarId> scores = encoder.propagate(net, inputs, 0, net.layer_count(), prefix, bounds);
    const VarId rival = encoding::max_encoding(problem, scores, output_intervals(bounds), query.label,
                                               options.misclassification_margin);
    problem.set_objective(Sense::Feasibility, {});

    SingleVerdict verdict;
    solver::MilpSession session(problem, MilpMode::FirstFeasible, options.solver);
    const solver::SolveResult *result = &session.solve();
    while (true) {
        verdict.stats.nodes += result->stats.nodes;
        verdict.stats.lp_iterations += result->stats.lp_iterations;
        if (result->status == Status::Infeasible)
            return verdict;
        if (!result->has_assignment())
            throw SolverError(std::string("single-ball solve returned ") + solver::to_string(result->status));

        Eigen::VectorXd x = clamp_to_ball(result->assignment, inputs, query);
        if (misclassified(net, x, query.label)) {
            verdict.robust = false;
            verdict.witness = std::move(x);
            return verdict;
        }
        // The point sits on the decision boundary, or only exists because the
        // binaries are integral up to tolerance. Re-solve the region with the
        // binaries rounded, pushing the point as deep as the region allows.
        MilpProblem region = problem;
        std::vector<Term> no_good;
        double ones = 0.0;
        for (VarId b : region.binaries()) {
            const double v = std::round(result->assignment[b]);
            region.set_bounds(b, v, v);
            no_good.push_back({b, v == 1.0 ? -1.0 : 1.0});
            ones += v;
        }
        region.set_objective(Sense::Maximize, {{rival, 1.0}, {scores[query.label], -1.0}});
        const solver::SolveResult deep = solver::solve_lp(region, options.solver);
        if (deep.has_assignment()) {
            x = clamp_to_ball(deep.assignment, inputs, query);
            if (!misclassified(net, x, query.label))
                throw NumericalFailure("single-ball witness is not misclassified by the forward pass");
            verdict.robust = false;
            verdict.witness = std::move(x);
            return verdict;
        }
        // No exactly integral point in this region: cut the assignment off
        // and keep searching.
        result = &session.add_constraint_and_resolve({std::move(no_good), Relation::GreaterEqual, 1.0 - ones});
    }
}

} // namespace batchverify
