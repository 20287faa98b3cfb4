#pragma once

// Reference verification for tiny networks, independent of the MILP encoder:
// every activation region is an LP over the input alone.

#include "batchverify/encoder.hpp"
#include "batchverify/network.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <vector>

namespace batchverify::oracle {

struct OracleOptions {
    std::size_t max_relus = 20;
    /// Same meaning as EncoderOptions::misclassification_margin.
    double margin = 1e-6;
    solver::SolverOptions solver;
};

struct OracleVerdict {
    bool robust = true;
    std::optional<Eigen::VectorXd> witness;
    std::vector<bool> region;       // activation assignment of the witness region
    std::size_t regions_visited = 0;
};

/// Walks all activation assignments layer by layer, dropping a prefix as soon
/// as its sign constraints are infeasible over the ball. Throws
/// InvalidArgument when the network has more than `max_relus` ReLUs.
OracleVerdict enumerate_verify(const Network &net, const BallQuery &query, const OracleOptions &options = {});

/// Exact pre-activation range of every neuron of layers 1..depth over the
/// ball, as the min/max over all feasible activation regions.
LayerBounds enumerate_bounds(const Network &net, std::size_t depth, const BallQuery &query,
                             const OracleOptions &options = {});

/// Scans `resolution` evenly spaced values per coordinate of the clamped ball
/// (the center alone when resolution is 1), then `extra` points, and returns
/// the first misclassified one.
std::optional<Eigen::VectorXd> grid_falsify(const Network &net, const BallQuery &query, std::size_t resolution,
                                            const std::vector<Eigen::VectorXd> &extra = {});

} // namespace batchverify::oracle
