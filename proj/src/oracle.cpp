#include "batchverify/oracle.hpp"

#include "batchverify/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace batchverify::oracle {

using solver::LinearProgram;
using solver::Relation;
using solver::Sense;
using solver::Status;
using solver::Term;

namespace {

// Pre-activations of the current layer as an affine map of the input.
struct AffineMap {
    Eigen::MatrixXd a;
    Eigen::VectorXd c;
};

std::vector<Term> row_terms(const Eigen::MatrixXd &a, Eigen::Index r)
{
    std::vector<Term> terms;
    for (Eigen::Index k = 0; k < a.cols(); ++k)
        if (a(r, k) != 0.0)
            terms.push_back({static_cast<solver::VarId>(k), a(r, k)});
    return terms;
}

class RegionWalker {
public:
    RegionWalker(const Network &net, const BallQuery &query, const OracleOptions &options)
        : net_(net), options_(options)
    {
        query.validate(net);
        if (net.relu_count() > options.max_relus)
            throw InvalidArgument("oracle: network has " + std::to_string(net.relu_count()) +
                                  " ReLUs, cap is " + std::to_string(options.max_relus));
        for (Eigen::Index m = 0; m < query.center.size(); ++m) {
            const Interval box = encoding::input_interval(query.center[m], query.epsilon);
            base_.add_variable(box.lower, box.upper);
        }
    }

    /// Calls `leaf(lp, map)` for every feasible region through layer `depth`
    /// (1-based); `map` is the affine form of layer `depth`'s pre-activations.
    /// The leaf returns false to stop the walk.
    void walk(std::size_t depth, const std::function<bool(const LinearProgram &, const AffineMap &)> &leaf)
    {
        const auto d = static_cast<Eigen::Index>(net_.input_dim());
        AffineMap identity{Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d)};
        bits_.clear();
        descend(0, depth, base_, identity, leaf);
    }

    std::size_t visited() const { return visited_; }
    const std::vector<bool> &bits() const { return bits_; }

private:
    bool feasible(const LinearProgram &lp) const
    {
        LinearProgram copy = lp;
        copy.set_objective(Sense::Feasibility);
        return solver::solve_lp(copy, options_.solver).has_assignment();
    }

    // Returns false once the leaf asked to stop.
    bool descend(std::size_t layer_index, std::size_t depth, const LinearProgram &lp, const AffineMap &input,
                 const std::function<bool(const LinearProgram &, const AffineMap &)> &leaf)
    {
        const Layer &layer = net_.layer(layer_index);
        AffineMap pre{layer.weights * input.a, layer.weights * input.c + layer.bias};
        if (layer_index + 1 == depth || !layer.has_relu) {
            ++visited_;
            return leaf(lp, pre);
        }
        const auto width = static_cast<std::size_t>(pre.a.rows());
        const std::size_t start = bits_.size();
        for (std::size_t mask = 0; mask < (std::size_t{1} << width); ++mask) {
            LinearProgram region = lp;
            AffineMap post = pre;
            bits_.resize(start);
            for (std::size_t m = 0; m < width; ++m) {
                const auto r = static_cast<Eigen::Index>(m);
                const bool active = (mask >> m) & 1U;
                bits_.push_back(active);
                // active: pre >= 0, inactive: pre <= 0 and the output is zero.
                region.add_constraint(row_terms(pre.a, r), active ? Relation::GreaterEqual : Relation::LessEqual,
                                      -pre.c[r]);
                if (!active) {
                    post.a.row(r).setZero();
                    post.c[r] = 0.0;
                }
            }
            if (!feasible(region))
                continue;
            if (!descend(layer_index + 1, depth, region, post, leaf))
                return false;
        }
        bits_.resize(start);
        return true;
    }

    const Network &net_;
    const OracleOptions &options_;
    LinearProgram base_;
    std::vector<bool> bits_;
    std::size_t visited_ = 0;
};

Eigen::VectorXd input_of(const std::vector<double> &assignment, std::size_t d)
{
    Eigen::VectorXd x(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k)
        x[static_cast<Eigen::Index>(k)] = assignment[k];
    return x;
}

} // namespace

OracleVerdict enumerate_verify(const Network &net, const BallQuery &query, const OracleOptions &options)
{
    RegionWalker walker(net, query, options);
    OracleVerdict verdict;
    const auto label = static_cast<Eigen::Index>(query.label);
    walker.walk(net.layer_count(), [&](const LinearProgram &region, const AffineMap &scores) {
        for (Eigen::Index other = 0; other < scores.a.rows(); ++other) {
            if (other == label)
                continue;
            // Largest lead of `other` over the label inside this region.
            LinearProgram lp = region;
            const Eigen::MatrixXd gap = scores.a.row(other) - scores.a.row(label);
            lp.set_objective(Sense::Maximize, row_terms(gap, 0), scores.c[other] - scores.c[label]);
            const solver::SolveResult r = solver::solve_lp(lp, options.solver);
            if (r.status == Status::Optimal && *r.objective >= options.margin) {
                verdict.robust = false;
                Eigen::VectorXd x = input_of(r.assignment, net.input_dim());
                for (Eigen::Index m = 0; m < x.size(); ++m) {
                    const Interval box = encoding::input_interval(query.center[m], query.epsilon);
                    x[m] = std::clamp(x[m], box.lower, box.upper);
                }
                verdict.witness = std::move(x);
                verdict.region = walker.bits();
                return false;
            }
        }
        return true;
    });
    verdict.regions_visited = walker.visited();
    return verdict;
}

LayerBounds enumerate_bounds(const Network &net, std::size_t depth, const BallQuery &query,
                             const OracleOptions &options)
{
    if (depth < 1 || depth > net.layer_count())
        throw InvalidArgument("enumerate_bounds: depth must lie in [1, L]");
    LayerBounds bounds;
    for (std::size_t i = 1; i <= depth; ++i) {
        RegionWalker walker(net, query, options);
        const auto width = static_cast<Eigen::Index>(net.layer(i - 1).output_size());
        Eigen::VectorXd lo = Eigen::VectorXd::Constant(width, solver::kInfinity);
        Eigen::VectorXd hi = Eigen::VectorXd::Constant(width, -solver::kInfinity);
        walker.walk(i, [&](const LinearProgram &region, const AffineMap &pre) {
            for (Eigen::Index m = 0; m < width; ++m) {
                for (Sense sense : {Sense::Minimize, Sense::Maximize}) {
                    LinearProgram lp = region;
                    lp.set_objective(sense, row_terms(pre.a, m), pre.c[m]);
                    const solver::SolveResult r = solver::solve_lp(lp, options.solver);
                    if (r.status != Status::Optimal)
                        throw SolverError("enumerate_bounds: region LP not optimal");
                    lo[m] = std::min(lo[m], *r.objective);
                    hi[m] = std::max(hi[m], *r.objective);
                }
            }
            return true;
        });
        bounds.lower.push_back(lo);
        bounds.upper.push_back(hi);
    }
    return bounds;
}

std::optional<Eigen::VectorXd> grid_falsify(const Network &net, const BallQuery &query, std::size_t resolution,
                                            const std::vector<Eigen::VectorXd> &extra)
{
    query.validate(net);
    const auto d = static_cast<std::size_t>(query.center.size());
    std::vector<Interval> box(d);
    for (std::size_t m = 0; m < d; ++m)
        box[m] = encoding::input_interval(query.center[static_cast<Eigen::Index>(m)], query.epsilon);

    auto coordinate = [&](std::size_t m, std::size_t step) {
        if (resolution <= 1)
            return query.center[static_cast<Eigen::Index>(m)];
        const double t = static_cast<double>(step) / static_cast<double>(resolution - 1);
        return box[m].lower + t * (box[m].upper - box[m].lower);
    };

    std::vector<std::size_t> index(d, 0);
    Eigen::VectorXd x(static_cast<Eigen::Index>(d));
    const std::size_t steps = std::max<std::size_t>(resolution, 1);
    while (true) {
        for (std::size_t m = 0; m < d; ++m)
            x[static_cast<Eigen::Index>(m)] = coordinate(m, index[m]);
        if (net.classify(x) != query.label)
            return x;
        std::size_t m = 0;
        while (m < d && ++index[m] == steps)
            index[m++] = 0;
        if (m == d)
            break;
    }
    for (const Eigen::VectorXd &point : extra) {
        if (static_cast<std::size_t>(point.size()) != d)
            throw DimensionError("grid_falsify: extra point has the wrong dimension");
        if (net.classify(point) != query.label)
            return point;
    }
    return std::nullopt;
}

} // namespace batchverify::oracle
