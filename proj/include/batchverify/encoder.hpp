#pragma once

#include "batchverify/network.hpp"
#include "batchverify/solver.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace batchverify {

/// The L-infinity ball of `center`, intersected with [0,1]^d, and the class
/// every point in it must receive.
struct BallQuery {
    Eigen::VectorXd center;
    double epsilon = 0.0;
    std::size_t label = 0;

    /// Throws InvalidArgument unless center is in [0,1]^d and epsilon >= 0.
    void validate(const Network &net) const;
};

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

/// Pre-activation bounds of layers 1..depth(); entry i holds layer i+1.
struct LayerBounds {
    std::vector<Eigen::VectorXd> lower;
    std::vector<Eigen::VectorXd> upper;

    std::size_t depth() const { return lower.size(); }
    /// Post-ReLU interval [max(0,l), max(0,u)] of each neuron of a 1-based layer.
    std::vector<Interval> post_activation(std::size_t layer) const;
};

enum class BoundMode {
    Milp,         // exact optimum per neuron
    LpRelaxation  // binaries relaxed to [0,1]; looser but still sound
};

struct EncoderOptions {
    solver::SolverOptions solver;
    BoundMode bound_mode = BoundMode::Milp;
    /// A point counts as misclassified when some other score beats the
    /// label's score by at least this much.
    double misclassification_margin = 1e-6;
    /// Relative outward padding applied to every computed bound.
    double bound_padding = 1e-7;
};

namespace encoding {

using solver::MilpProblem;
using solver::VarId;

struct AffineExpr {
    std::vector<solver::Term> terms;
    double constant = 0.0;
};

Interval input_interval(double center, double epsilon);

/// One variable per input coordinate, bounded by the clamped ball.
std::vector<VarId> input_box(MilpProblem &problem, const BallQuery &query);

/// b_m + sum_k W_{m,k} inputs_k.
AffineExpr neuron_expression(const Layer &layer, std::size_t neuron, std::span<const VarId> inputs);

/// Adds z = max(pre, 0) given l <= pre <= u and returns z. Stable neurons need
/// no binary; unstable ones get the four big-M rows over a fresh binary.
VarId relu_encoding(MilpProblem &problem, const AffineExpr &pre, Interval bounds);

struct UnionEncoding {
    std::vector<VarId> indicators;  // one per interval family member
    std::vector<double> big_m;      // per neuron, max_j u^j
};

/// Forces `outputs` into exactly one member's box: sum_j I_j = 1,
/// y_m >= l^j_m I_j and y_m <= u^j_m I_j + u_M (1 - I_j).
/// `intervals[j][m]` is member j's interval for neuron m; lower ends must be >= 0.
UnionEncoding union_encoding(MilpProblem &problem,
                             std::span<const VarId> outputs,
                             const std::vector<std::vector<Interval>> &intervals);

/// Adds scores[label] + margin <= max_{c != label} scores[c], through a
/// variable t equal to the competitor maximum and selector binaries. Returns
/// t (the lone competitor's score when there are only two classes).
VarId max_encoding(MilpProblem &problem,
                  std::span<const VarId> scores,
                  std::span<const Interval> score_bounds,
                  std::size_t label,
                  double margin);

} // namespace encoding

/// Per-neuron bounds of layers 1..depth over the query's ball, each computed
/// from the constraints of the layers before it.
LayerBounds milp_bounds(const Network &net, std::size_t depth, const BallQuery &query,
                        const EncoderOptions &options = {});

/// The joint problem for a mini-batch split after `split_layer` (1-based; 0
/// splits at the input). Infeasible means every member ball is robust.
struct BatchEncoding {
    solver::MilpProblem milp;
    std::vector<solver::VarId> indicators;  // parallel to the member list
    std::vector<double> big_m;
    LayerBounds suffix_bounds;              // layers split_layer+1 .. L
};

BatchEncoding milp_batch(const Network &net,
                         std::size_t split_layer,
                         const std::vector<std::vector<Interval>> &member_intervals,
                         std::size_t label,
                         const EncoderOptions &options = {});

/// Post-ReLU split-layer intervals of one ball from its prefix bounds. Layer 0
/// is the input box itself.
std::vector<Interval> split_intervals(const LayerBounds &prefix, std::size_t split_layer, const BallQuery &query);

struct SingleVerdict {
    bool robust = true;
    std::optional<Eigen::VectorXd> witness;
    solver::SolveStats stats;
};

/// Complete single-ball check. When `prefix` is given, its layers are reused
/// instead of recomputed. Witnesses are checked by a forward pass.
SingleVerdict mip_verify_single(const Network &net,
                                const BallQuery &query,
                                const LayerBounds *prefix = nullptr,
                                const EncoderOptions &options = {});

} // namespace batchverify
