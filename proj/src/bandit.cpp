#include "batchverify/bandit.hpp"

#include "batchverify/error.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <string>

namespace batchverify {

double Velocity::value() const
{
    if (!(seconds > 0.0) || !std::isfinite(seconds))
        throw InvalidArgument("velocity needs a positive, finite batch time");
    return static_cast<double>(proven) / seconds;
}

BatchSizeBandit::BatchSizeBandit(std::size_t max_batch_size, std::size_t bucket_size, double rho, BanditPrior prior)
    : max_batch_size_(max_batch_size), rho_(rho), prior_(prior)
{
    if (max_batch_size == 0)
        throw InvalidArgument("max batch size must be at least 1");
    if (bucket_size == 0 || bucket_size > max_batch_size)
        throw InvalidArgument("bucket size must lie in [1, max batch size]");
    if (!(rho >= 0.0) || !std::isfinite(rho))
        throw InvalidArgument("rho must be finite and non-negative");
    if (!(prior.kappa > 0.0 && prior.alpha > 0.0 && prior.beta > 0.0))
        throw InvalidArgument("bandit prior parameters must be positive");
    for (std::size_t first = 1; first <= max_batch_size; first += bucket_size) {
        Arm arm;
        arm.first_size = first;
        arm.last_size = std::min(first + bucket_size - 1, max_batch_size);
        arms_.push_back(arm);
    }
    forced_.assign(arms_.size(), false);
}

std::size_t BatchSizeBandit::arm_for_size(std::size_t k) const
{
    if (k == 0 || k > max_batch_size_)
        throw InvalidArgument("batch size " + std::to_string(k) + " outside [1, " +
                              std::to_string(max_batch_size_) + "]");
    const std::size_t width = arms_.front().last_size - arms_.front().first_size + 1;
    return (k - 1) / width;
}

std::pair<double, double> BatchSizeBandit::sample_posterior(std::size_t index, std::mt19937_64 &rng) const
{
    const Arm &arm = arms_.at(index);
    const double n = static_cast<double>(arm.count);
    const double kappa = prior_.kappa + n;
    const double mean = (prior_.kappa * prior_.mean + n * arm.mean) / kappa;
    const double alpha = prior_.alpha + n / 2.0;
    const double shift = arm.mean - prior_.mean;
    const double beta = prior_.beta + arm.m2 / 2.0 + prior_.kappa * n * shift * shift / (2.0 * kappa);
    // sigma^2 ~ InvGamma(alpha, beta), mu | sigma^2 ~ N(mean, sigma^2 / kappa)
    std::gamma_distribution<double> precision(alpha, 1.0 / beta);
    const double variance = 1.0 / precision(rng);
    std::normal_distribution<double> mu(mean, std::sqrt(variance / kappa));
    return {mu(rng), variance};
}

std::size_t BatchSizeBandit::get_mini_batch_size(std::mt19937_64 &rng)
{
    BanditRound round;
    round.round = trace_.size();
    bool forced = false;
    for (std::size_t a = 0; a < arms_.size(); ++a) {
        if (!forced_[a] && arms_[a].count == 0) {
            forced_[a] = true;
            round.chosen_arm = a;
            forced = true;
            break;
        }
    }
    if (!forced) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < arms_.size(); ++a) {
            const auto [mu, variance] = sample_posterior(a, rng);
            const double score = mu - rho_ * variance;
            round.scores.push_back(score);
            if (score > best) {
                best = score;
                round.chosen_arm = a;
            }
        }
    }
    round.recommended = arms_[round.chosen_arm].last_size;
    trace_.push_back(round);
    return round.recommended;
}

void BatchSizeBandit::record_external_choice(std::size_t k)
{
    BanditRound round;
    round.round = trace_.size();
    round.chosen_arm = arm_for_size(std::min(k, max_batch_size_));
    round.recommended = k;
    trace_.push_back(round);
}

void BatchSizeBandit::update(std::size_t actual_k, const Velocity &velocity)
{
    const std::size_t index = arm_for_size(actual_k);
    const double reward = velocity.value();
    Arm &arm = arms_[index];
    ++arm.count;
    const double delta = reward - arm.mean;
    arm.mean += delta / static_cast<double>(arm.count);
    arm.m2 += delta * (reward - arm.mean);
    if (!trace_.empty() && !trace_.back().reward) {
        trace_.back().actual = actual_k;
        trace_.back().updated_arm = index;
        trace_.back().reward = reward;
    }
}

void BatchSizeBandit::write_trace_csv(std::ostream &out) const
{
    out << "round,chosen_arm,recommended,actual,updated_arm,reward";
    for (std::size_t a = 0; a < arms_.size(); ++a)
        out << ",score_" << arms_[a].first_size << '_' << arms_[a].last_size;
    out << '\n';
    for (const BanditRound &r : trace_) {
        out << r.round << ',' << r.chosen_arm << ',' << r.recommended << ',';
        if (r.actual)
            out << *r.actual;
        out << ',';
        if (r.updated_arm)
            out << *r.updated_arm;
        out << ',';
        if (r.reward)
            out << *r.reward;
        for (std::size_t a = 0; a < arms_.size(); ++a) {
            out << ',';
            if (a < r.scores.size())
                out << r.scores[a];
        }
        out << '\n';
    }
}

} // namespace batchverify
