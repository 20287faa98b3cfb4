#pragma once

#include "batchverify/bandit.hpp"
#include "batchverify/clustering.hpp"
#include "batchverify/encoder.hpp"
#include "batchverify/network.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace batchverify {

/// A solved joint problem over a mini-batch, kept open for refinement.
class BatchSession {
public:
    virtual ~BatchSession() = default;
    /// Position (in the member list) of the ball whose indicator is set in the
    /// current solution, or nullopt when the problem is infeasible.
    virtual std::optional<std::size_t> counterexample_member() = 0;
    /// Fixes that member's indicator to 0 and re-solves.
    virtual void exclude(std::size_t member) = 0;
};

/// Everything the group verifier needs from the network and the solver.
/// Tests substitute scripted implementations.
class VerificationBackend {
public:
    virtual ~VerificationBackend() = default;

    virtual std::size_t layer_count() const = 0;
    virtual std::optional<std::size_t> last_convolution_layer() const = 0;
    virtual std::size_t classify(const Eigen::VectorXd &x) const = 0;
    virtual ActivationPattern activation_pattern(const Eigen::VectorXd &x) const = 0;

    /// Bounds of layers 1..split for one ball; empty when split is 0.
    virtual LayerBounds prefix_bounds(const BallQuery &query, std::size_t split) = 0;
    /// Builds and solves the joint problem of the members after `split`.
    virtual std::unique_ptr<BatchSession> open_batch(std::size_t split, const std::vector<BallQuery> &members,
                                                     const std::vector<LayerBounds> &bounds) = 0;
    virtual SingleVerdict verify_single(const BallQuery &query, const LayerBounds *prefix) = 0;
};

/// The MILP-based backend.
class MilpBackend : public VerificationBackend {
public:
    explicit MilpBackend(const Network &net, EncoderOptions options = {});

    std::size_t layer_count() const override;
    std::optional<std::size_t> last_convolution_layer() const override;
    std::size_t classify(const Eigen::VectorXd &x) const override;
    ActivationPattern activation_pattern(const Eigen::VectorXd &x) const override;
    LayerBounds prefix_bounds(const BallQuery &query, std::size_t split) override;
    std::unique_ptr<BatchSession> open_batch(std::size_t split, const std::vector<BallQuery> &members,
                                             const std::vector<LayerBounds> &bounds) override;
    SingleVerdict verify_single(const BallQuery &query, const LayerBounds *prefix) override;

private:
    const Network &net_;
    EncoderOptions options_;
};

enum class SplitMode { Auto, Fixed, LastConvolution };

struct DriverConfig {
    std::size_t max_batch_size = 8;
    std::size_t bucket_size = 2;
    double rho = 100.0;
    BanditPrior prior;
    std::uint64_t seed = 0;
    SplitMode split_mode = SplitMode::Auto;
    std::size_t split_layer = 1;  // used when split_mode is Fixed; 0 splits at the input
    /// Worker threads for the per-ball prefix bounds of a batch. Above 1 the
    /// backend's prefix_bounds and the clock must be thread-safe.
    std::size_t threads = 1;

    /// Seconds on any monotone scale. Defaults to a steady wall clock.
    std::function<double()> clock;
    /// Picks which remaining input a split-learning trial consumes; defaults
    /// to a uniform draw from the run's generator.
    std::function<std::size_t(std::size_t remaining, std::mt19937_64 &rng)> sample_input;
    /// Overrides the bandit's batch-size choice (the bandit is still updated).
    std::function<std::size_t(BatchSizeBandit &bandit, std::mt19937_64 &rng)> choose_batch_size;
};

enum class VerdictStatus { Robust, NonRobust, NonRobustMisclassified, Unresolved };
enum class Provenance { Batch, Refinement, SplitLearning, Filter, Single, None };

const char *to_string(VerdictStatus status);
const char *to_string(Provenance provenance);

struct InputVerdict {
    VerdictStatus status = VerdictStatus::Unresolved;
    Provenance provenance = Provenance::None;
    std::optional<Eigen::VectorXd> witness;
};

struct BatchRecord {
    std::vector<std::size_t> members;  // input indices, in extraction order
    std::size_t recommended = 0;
    double bounds_s = 0.0;
    double suffix_s = 0.0;   // first solve plus re-solves
    double refine_s = 0.0;   // single-ball checks, not part of the velocity
    std::vector<std::size_t> refined;  // input indices checked one by one
    std::size_t survivors = 0;
    double velocity = 0.0;
};

struct SplitTrial {
    std::size_t layer = 0;
    std::size_t input = 0;
    double seconds = 0.0;
};

struct Timing {
    double bounds_s = 0.0;
    double batch_s = 0.0;
    double refine_s = 0.0;
    double split_learning_s = 0.0;
    double single_s = 0.0;  // one-by-one mode
    double total_s = 0.0;
};

struct RunReport {
    std::size_t label = 0;
    double epsilon = 0.0;
    std::vector<InputVerdict> verdicts;  // parallel to the input list
    std::optional<std::size_t> split_layer;
    std::vector<SplitTrial> split_trials;
    std::vector<BatchRecord> batches;
    Timing timing;
    std::vector<BanditRound> bandit_trace;
    std::optional<Dendrogram> dendrogram;
    std::vector<std::string> warnings;
    bool complete = true;
    std::string error;

    std::size_t count(VerdictStatus status) const;
};

/// Group verification of the balls of radius `epsilon` around `inputs`, all
/// expected to be classified `label`. Solver failures stop the run and leave
/// the report flagged incomplete.
RunReport verify_group(VerificationBackend &backend, const std::vector<Eigen::VectorXd> &inputs, std::size_t label,
                       double epsilon, const DriverConfig &config = {});

/// Baseline: every correctly classified ball checked on its own.
RunReport verify_one_by_one(VerificationBackend &backend, const std::vector<Eigen::VectorXd> &inputs,
                            std::size_t label, double epsilon, const DriverConfig &config = {});

/// Runtime of one split-learning trial, per candidate layer.
struct SplitLearningResult {
    std::size_t layer = 1;
    std::vector<SplitTrial> trials;
};

/// Tries every split layer 1..L-1 on one freshly sampled input each (removed
/// from `pending`), stores their verdicts, and returns the fastest layer
/// (ties to the lower one).
SplitLearningResult learn_split_layer(VerificationBackend &backend, const std::vector<Eigen::VectorXd> &inputs,
                                      std::vector<std::size_t> &pending, std::size_t label, double epsilon,
                                      std::vector<InputVerdict> &verdicts, const DriverConfig &config,
                                      std::mt19937_64 &rng);

struct RefinementOutcome {
    std::vector<std::size_t> survivors;  // member positions proven robust jointly
    std::vector<std::size_t> refined;    // member positions checked one by one, in order
    std::vector<SingleVerdict> refined_verdicts;
    double resolve_s = 0.0;
    double refine_s = 0.0;
};

/// Repeatedly checks the member whose indicator is set on its own (reusing its
/// prefix bounds), drops it and re-solves the open session, until the joint
/// problem is infeasible or no member is left.
RefinementOutcome refine_loop(VerificationBackend &backend, BatchSession &session,
                              const std::vector<BallQuery> &members, const std::vector<LayerBounds> &bounds,
                              const std::function<double()> &clock);

} // namespace batchverify
