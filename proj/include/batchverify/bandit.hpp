#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <random>
#include <vector>

namespace batchverify {

/// Proven balls per second of batch analysis.
struct Velocity {
    std::size_t proven = 0;
    double seconds = 1.0;

    double value() const;  // throws InvalidArgument unless seconds > 0
};

/// Normal-Inverse-Gamma prior shared by all arms.
struct BanditPrior {
    double mean = 0.0;
    double kappa = 1.0;  // pseudo-count for the mean
    double alpha = 1.0;
    double beta = 1.0;
};

/// One bucket of consecutive batch sizes with Welford statistics of its rewards.
struct Arm {
    std::size_t first_size = 1;
    std::size_t last_size = 1;
    std::size_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;  // sum of squared deviations from the mean
};

struct BanditRound {
    std::size_t round = 0;
    std::vector<double> scores;  // empty for forced pulls
    std::size_t chosen_arm = 0;
    std::size_t recommended = 0;
    std::optional<std::size_t> actual;
    std::optional<std::size_t> updated_arm;
    std::optional<double> reward;
};

/// Mean-variance Thompson sampling over bucketed batch sizes.
class BatchSizeBandit {
public:
    BatchSizeBandit(std::size_t max_batch_size, std::size_t bucket_size, double rho, BanditPrior prior = {});

    /// Each arm gets one forced pull in order before sampling takes over.
    /// Returns the largest size of the chosen arm.
    std::size_t get_mini_batch_size(std::mt19937_64 &rng);

    /// Logs a size chosen outside the bandit so its later update is traced.
    void record_external_choice(std::size_t k);

    /// Credits velocity.value() to the arm whose bucket holds actual_k.
    void update(std::size_t actual_k, const Velocity &velocity);

    std::size_t arm_for_size(std::size_t k) const;
    const std::vector<Arm> &arms() const { return arms_; }
    std::size_t max_batch_size() const { return max_batch_size_; }
    double rho() const { return rho_; }

    /// Posterior draw (mean, variance) for one arm.
    std::pair<double, double> sample_posterior(std::size_t arm, std::mt19937_64 &rng) const;

    const std::vector<BanditRound> &trace() const { return trace_; }
    void write_trace_csv(std::ostream &out) const;

private:
    std::vector<Arm> arms_;
    std::vector<bool> forced_;
    std::size_t max_batch_size_;
    double rho_;
    BanditPrior prior_;
    std::vector<BanditRound> trace_;
};

} // namespace batchverify
