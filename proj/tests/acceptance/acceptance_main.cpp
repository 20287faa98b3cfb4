// One line per acceptance criterion. Exit status is the number of failures.
// Pass criterion numbers as arguments to run a subset.

#include "batchverify/bandit.hpp"
#include "batchverify/clustering.hpp"
#include "batchverify/driver.hpp"
#include "batchverify/encoder.hpp"
#include "batchverify/oracle.hpp"

#include "support/clustered_inputs.hpp"
#include "support/six_patterns.hpp"
#include "support/random_network.hpp"
#include "support/reference_clustering.hpp"
#include "support/scripted_backend.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace batchverify;
using namespace batchverify::solver;

namespace {

// Tolerances and sizes of every criterion.
constexpr int kUnionInstances = 1000;
constexpr double kUnionSeconds = 60.0;
constexpr int kSingleNetworks = 200;
constexpr double kSingleSeconds = 600.0;
constexpr int kGroupRuns = 30;
constexpr std::size_t kGroupSize = 20;
constexpr double kGroupSeconds = 900.0;
constexpr int kBanditTrials = 20;
constexpr int kBanditWins = 18;
constexpr int kBanditRounds = 200;
constexpr int kClusteringTrials = 500;
constexpr int kSpeedupSeeds = 5;
constexpr double kSpeedupMaxRatio = 0.8;
constexpr double kSpeedupMinRobust = 0.8;
constexpr double kSpeedupSeconds = 1800.0;
constexpr int kBoundPairs = 50;
constexpr int kBoundSamples = 1000;
// Witnesses may sit this far outside the ball after clamping round-off.
constexpr double kWitnessBallSlack = 1e-9;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string format(const char *fmt, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

bool in_ball(const Eigen::VectorXd &x, const BallQuery &q)
{
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const Interval b = encoding::input_interval(q.center[i], q.epsilon);
        if (x[i] < b.lower - kWitnessBallSlack || x[i] > b.upper + kWitnessBallSlack)
            return false;
    }
    return true;
}

// 1. Union encoding is feasible exactly for points inside the union of boxes.
Outcome union_encoding_membership()
{
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> members(1, 5), neurons(1, 4);
    std::uniform_real_distribution<double> u(0.0, 2.0), coin(0.0, 1.0);
    std::size_t checks = 0, mismatches = 0, inside = 0;
    for (int instance = 0; instance < kUnionInstances; ++instance) {
        const auto k = static_cast<std::size_t>(members(rng));
        const auto n = static_cast<std::size_t>(neurons(rng));
        std::vector<std::vector<Interval>> family(k);
        for (auto &member : family)
            for (std::size_t m = 0; m < n; ++m) {
                double a = u(rng), b = u(rng);
                if (coin(rng) < 0.15)
                    a = 0.0;  // post-ReLU intervals often start at zero
                if (coin(rng) < 0.1)
                    b = a;    // and stable-inactive ones are a single point
                member.push_back({std::min(a, b), std::max(a, b)});
            }
        auto member_of_union = [&](const std::vector<double> &y) {
            for (const auto &member : family) {
                bool in = true;
                for (std::size_t m = 0; m < n; ++m)
                    in = in && y[m] >= member[m].lower && y[m] <= member[m].upper;
                if (in)
                    return true;
            }
            return false;
        };
        std::vector<std::vector<double>> points;
        // A point drawn from a member box, a corner of one, and points drawn
        // from a wider box, most of which fall outside the union.
        const auto &pick = family[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)];
        std::vector<double> y(n), corner(n);
        for (std::size_t m = 0; m < n; ++m) {
            y[m] = std::uniform_real_distribution<double>(pick[m].lower, pick[m].upper)(rng);
            corner[m] = coin(rng) < 0.5 ? pick[m].lower : pick[m].upper;
        }
        points.push_back(y);
        points.push_back(corner);
        for (int r = 0; r < 2; ++r) {
            for (double &v : y)
                v = std::uniform_real_distribution<double>(0.0, 2.5)(rng);
            points.push_back(y);
        }
        for (const auto &p : points) {
            MilpProblem problem;
            std::vector<VarId> vars;
            for (double v : p)
                vars.push_back(problem.add_variable(v, v));
            encoding::union_encoding(problem, vars, family);
            const bool feasible = solve_milp(problem, MilpMode::FirstFeasible).has_assignment();
            const bool member = member_of_union(p);
            inside += member ? 1 : 0;
            mismatches += feasible != member ? 1 : 0;
            ++checks;
        }
    }
    const double t = seconds_since(start);
    return {mismatches == 0 && t < kUnionSeconds && inside > 0 && inside < checks,
            format("%zu points over %d instances, %zu inside, %zu mismatches, %.1fs", checks, kUnionInstances, inside,
                   mismatches, t)};
}

Network small_random_network(std::mt19937_64 &rng, std::size_t d_in, std::size_t max_relus)
{
    std::uniform_int_distribution<int> depth(2, 3);
    const std::size_t layers = static_cast<std::size_t>(depth(rng));
    std::vector<std::size_t> hidden;
    std::size_t budget = max_relus;
    for (std::size_t i = 0; i < layers; ++i) {
        const std::size_t room = budget - (layers - i - 1) * 2;
        const std::size_t w = std::uniform_int_distribution<std::size_t>(2, std::min<std::size_t>(room, 5))(rng);
        hidden.push_back(w);
        budget -= w;
    }
    const std::size_t classes = std::uniform_int_distribution<std::size_t>(2, 3)(rng);
    return testsupport::random_network(rng, d_in, hidden, classes, 1.5, 0.5);
}

// A point near a decision boundary: bisect between two differently classified
// random points, then step off by up to `offset` per coordinate.
Eigen::VectorXd near_boundary(const Network &net, std::mt19937_64 &rng, double offset)
{
    const std::size_t d = net.input_dim();
    Eigen::VectorXd a = testsupport::random_point(rng, d);
    const std::size_t label = net.classify(a);
    for (int attempt = 0; attempt < 50; ++attempt) {
        Eigen::VectorXd b = testsupport::random_point(rng, d);
        if (net.classify(b) == label)
            continue;
        for (int step = 0; step < 40; ++step) {
            const Eigen::VectorXd mid = 0.5 * (a + b);
            (net.classify(mid) == label ? a : b) = mid;
        }
        std::uniform_real_distribution<double> jitter(-offset, offset);
        for (Eigen::Index i = 0; i < a.size(); ++i)
            a[i] = std::clamp(a[i] + jitter(rng), 0.0, 1.0);
        return a;
    }
    return a;
}

// 2. Single-ball verdicts agree with exhaustive region enumeration.
Outcome single_ball_completeness()
{
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(202);
    const double epsilons[] = {0.01, 0.05, 0.1};
    std::size_t checks = 0, mismatches = 0, nonrobust = 0, bad_witnesses = 0;
    for (int n = 0; n < kSingleNetworks; ++n) {
        const std::size_t d_in = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
        const Network net = small_random_network(rng, d_in, 12);
        const Eigen::VectorXd x = n % 2 == 0 ? testsupport::random_point(rng, d_in) : near_boundary(net, rng, 0.03);
        for (double eps : epsilons) {
            const BallQuery q{x, eps, net.classify(x)};
            const SingleVerdict got = mip_verify_single(net, q);
            const oracle::OracleVerdict want = oracle::enumerate_verify(net, q);
            ++checks;
            mismatches += got.robust != want.robust ? 1 : 0;
            if (!got.robust) {
                ++nonrobust;
                if (!got.witness || !in_ball(*got.witness, q) || net.classify(*got.witness) == q.label)
                    ++bad_witnesses;
            }
        }
    }
    const double t = seconds_since(start);
    return {mismatches == 0 && bad_witnesses == 0 && t < kSingleSeconds,
            format("%zu balls on %d networks, %zu non-robust, %zu mismatches, %zu bad witnesses, %.1fs", checks,
                   kSingleNetworks, nonrobust, mismatches, bad_witnesses, t)};
}

// 3. Group verdicts equal one-by-one verdicts for auto and fixed split layers.
Outcome group_pipeline_agreement()
{
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(303);
    std::size_t runs = 0, mismatches = 0, nonrobust = 0, incomplete = 0;
    for (int run = 0; run < kGroupRuns; ++run) {
        const Network net = testsupport::random_network(rng, 3, {5, 4}, 3, 1.5, 0.5);
        std::vector<Eigen::VectorXd> inputs = testsupport::clustered_inputs(rng, 3, 4, kGroupSize / 4, 0.03);
        // Move half of the clusters next to a decision boundary.
        for (std::size_t c = 0; c < 2; ++c) {
            const Eigen::VectorXd shift = near_boundary(net, rng, 0.02) - inputs[c * kGroupSize / 4];
            for (std::size_t k = 0; k < kGroupSize / 4; ++k) {
                Eigen::VectorXd &x = inputs[c * kGroupSize / 4 + k];
                x = (x + shift).cwiseMax(0.0).cwiseMin(1.0);
            }
        }
        const std::size_t label = net.classify(inputs[0]);
        const double eps = run % 3 == 0 ? 0.02 : run % 3 == 1 ? 0.05 : 0.1;

        std::vector<VerdictStatus> expected;
        for (const Eigen::VectorXd &x : inputs) {
            if (net.classify(x) != label) {
                expected.push_back(VerdictStatus::NonRobustMisclassified);
                continue;
            }
            const bool robust = mip_verify_single(net, BallQuery{x, eps, label}).robust;
            expected.push_back(robust ? VerdictStatus::Robust : VerdictStatus::NonRobust);
            nonrobust += robust ? 0 : 1;
        }
        MilpBackend backend(net);
        for (int variant = 0; variant < 2; ++variant) {
            DriverConfig config;
            config.seed = static_cast<std::uint64_t>(run);
            if (variant == 1) {
                config.split_mode = SplitMode::Fixed;
                config.split_layer = 1 + static_cast<std::size_t>(run % 2);
            }
            const RunReport r = verify_group(backend, inputs, label, eps, config);
            ++runs;
            if (!r.complete) {
                ++incomplete;
                continue;
            }
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                const InputVerdict &v = r.verdicts[i];
                bool ok = v.status == expected[i];
                if (ok && v.status == VerdictStatus::NonRobust)
                    ok = v.witness && in_ball(*v.witness, {inputs[i], eps, label}) && net.classify(*v.witness) != label;
                mismatches += ok ? 0 : 1;
            }
        }
    }
    const double t = seconds_since(start);
    return {mismatches == 0 && incomplete == 0 && t < kGroupSeconds,
            format("%zu group runs of %zu inputs, %zu non-robust singles, %zu mismatches, %zu incomplete, %.1fs", runs,
                   kGroupSize, nonrobust, mismatches, incomplete, t)};
}

// 4. The scripted scripted ten-input run yields velocities 4/25 and 3/23.
Outcome ten_input_velocities()
{
    testsupport::ScriptedBackend b = testsupport::ten_input_backend();
    const RunReport r =
        verify_group(b, testsupport::ten_input_inputs(), 0, 0.1, testsupport::ten_input_config(b));
    bool pass = r.complete && r.batches.size() == 2 && r.bandit_trace.size() == 2;
    if (pass) {
        BatchSizeBandit arms(8, 2, 1.0);
        pass = r.batches[0].velocity == 4.0 / 25.0 && r.batches[1].velocity == 3.0 / 23.0 &&
               r.batches[0].members.size() == 5 && r.batches[1].members.size() == 3 &&
               *r.bandit_trace[0].updated_arm == arms.arm_for_size(5) &&
               *r.bandit_trace[1].updated_arm == arms.arm_for_size(3) &&
               *r.bandit_trace[0].reward == 4.0 / 25.0 && *r.bandit_trace[1].reward == 3.0 / 23.0;
    }
    return {pass, pass ? "velocities 4/25 and 3/23, arms {5,6} and {3,4} updated"
                       : format("%zu batches, %zu bandit rounds", r.batches.size(), r.bandit_trace.size())};
}

// 5. Arm {5,6} recommends 6; an actual batch of 3 updates arm {3,4}.
Outcome bucket_semantics()
{
    BatchSizeBandit b(8, 2, 100.0);
    std::mt19937_64 rng(5);
    std::size_t k = 0;
    for (int pull = 0; pull < 3; ++pull)
        k = b.get_mini_batch_size(rng);
    const bool chose_arm = b.trace().back().chosen_arm == 2 && b.arms()[2].first_size == 5 && b.arms()[2].last_size == 6;
    b.update(3, {3, 1.0});
    const bool updated = b.arms()[1].count == 1 && b.arms()[2].count == 0 && b.arms()[1].first_size == 3 &&
                         b.arms()[1].last_size == 4 && *b.trace().back().updated_arm == 1;
    const bool pass = chose_arm && k == 6 && updated;
    return {pass, format("arm {5,6} recommended %zu, batch of 3 credited arm {%zu,%zu}", k, b.arms()[1].first_size,
                         b.arms()[1].last_size)};
}

// 6. Thompson selection out-earns uniform selection on stationary rewards.
Outcome bandit_effectiveness()
{
    // Unit noise; the best arm's mean leads the next by 3 standard deviations.
    const double means[] = {1.0, 2.0, 3.0, 6.0};
    // Risk weight for unit-variance rewards; a large one lets the variance
    // draws outweigh the means.
    const double rho = 0.1;
    int wins = 0;
    double margin_sum = 0.0;
    for (int trial = 0; trial < kBanditTrials; ++trial) {
        std::mt19937_64 rng(600 + static_cast<std::uint64_t>(trial));
        std::normal_distribution<double> noise(0.0, 1.0);
        auto reward = [&](std::size_t arm) { return std::max(1e-3, means[arm] + noise(rng)); };
        BatchSizeBandit b(8, 2, rho);
        double thompson = 0.0, uniform = 0.0;
        for (int round = 0; round < kBanditRounds; ++round) {
            const std::size_t k = b.get_mini_batch_size(rng);
            const double r = reward(b.arm_for_size(k));
            b.update(k, {1, 1.0 / r});
            thompson += r;
        }
        std::uniform_int_distribution<std::size_t> any(0, 3);
        for (int round = 0; round < kBanditRounds; ++round)
            uniform += reward(any(rng));
        wins += thompson > uniform ? 1 : 0;
        margin_sum += thompson / uniform;
    }
    return {wins >= kBanditWins, format("Thompson won %d of %d trials, mean reward ratio %.2f", wins, kBanditTrials,
                                        margin_sum / kBanditTrials)};
}

// 7. Complete linkage equals the brute-force reference; the six-pattern ordering holds.
Outcome clustering_correctness()
{
    std::mt19937_64 rng(707);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < kClusteringTrials; ++trial) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
        const std::size_t bits = trial % 2 == 0 ? 5 : 48;  // short patterns force ties
        std::vector<ActivationPattern> patterns(n);
        std::bernoulli_distribution coin(0.5);
        for (auto &p : patterns)
            for (std::size_t i = 0; i < bits; ++i)
                p.bits.push_back(coin(rng));
        const Dendrogram got = hcluster(patterns);
        const Dendrogram want = testsupport::reference_clustering(patterns);
        bool same = got.merges.size() == want.merges.size();
        for (std::size_t i = 0; same && i < got.merges.size(); ++i)
            same = got.merges[i].left == want.merges[i].left && got.merges[i].right == want.merges[i].right &&
                   got.merges[i].distance == want.merges[i].distance;
        mismatches += same ? 0 : 1;
    }
    const Dendrogram six = hcluster(testsupport::six_patterns());
    const bool six_order = six.merges.size() == 5 && six.merges[0].distance == 420 && six.merges[0].left == 2 &&
                        six.merges[0].right == 3 && six.merges[1].distance == 477 && six.merges[1].left == 4 &&
                        six.merges[1].right == 5 && six.merges[2].distance == 595 && six.merges[2].left == 6 &&
                        six.merges[2].right == 7;
    return {mismatches == 0 && six_order,
            format("%zu of %d random dendrograms differ; six-pattern order 420, 477, 595 %s", mismatches,
                   kClusteringTrials, six_order ? "reproduced" : "NOT reproduced")};
}

struct SpeedupSample {
    double epsilon = 0.0;
    double robust_fraction = 0.0;
    double batch_s = 0.0;
    double single_s = 0.0;
    bool agree = true;
};

// Partitions by predicted class and runs the given mode on every class.
std::vector<VerdictStatus> run_by_class(VerificationBackend &backend, const Network &net,
                                        const std::vector<Eigen::VectorXd> &inputs, double eps, bool batch,
                                        std::uint64_t seed, double &seconds)
{
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        groups[net.classify(inputs[i])].push_back(i);
    std::vector<VerdictStatus> out(inputs.size());
    const auto start = std::chrono::steady_clock::now();
    for (const auto &[label, members] : groups) {
        std::vector<Eigen::VectorXd> xs;
        for (std::size_t i : members)
            xs.push_back(inputs[i]);
        DriverConfig config;
        config.seed = seed;
        const RunReport r = batch ? verify_group(backend, xs, label, eps, config)
                                  : verify_one_by_one(backend, xs, label, eps, config);
        for (std::size_t j = 0; j < members.size(); ++j)
            out[members[j]] = r.complete ? r.verdicts[j].status : VerdictStatus::Unresolved;
    }
    seconds = seconds_since(start);
    return out;
}

SpeedupSample speedup_sample(std::uint64_t seed)
{
    std::mt19937_64 rng(800 + seed);
    // 8x8 inputs: the single-ball problem grows with the input dimension, the
    // batch suffix problem does not.
    const std::size_t d_in = 64;
    const Network net = testsupport::random_network(rng, d_in, {30}, 3, 1.0, 0.2);
    const auto inputs = testsupport::clustered_inputs(rng, d_in, 10, 10, 0.004);
    MilpBackend backend(net);
    SpeedupSample s;
    // Largest radius on the grid that keeps at least the required robust share.
    std::vector<VerdictStatus> single;
    for (double eps : {0.04, 0.02, 0.01, 0.005, 0.0025, 0.001}) {
        single = run_by_class(backend, net, inputs, eps, false, seed, s.single_s);
        const auto robust = static_cast<double>(std::count(single.begin(), single.end(), VerdictStatus::Robust));
        s.epsilon = eps;
        s.robust_fraction = robust / static_cast<double>(inputs.size());
        if (s.robust_fraction >= kSpeedupMinRobust)
            break;
    }
    const auto batch = run_by_class(backend, net, inputs, s.epsilon, true, seed, s.batch_s);
    s.agree = batch == single;
    return s;
}

// 8. Batch mode beats one-by-one mode on clustered inputs (median of seeds).
Outcome desk_scale_speedup()
{
    const auto start = std::chrono::steady_clock::now();
    std::vector<double> ratios;
    std::string detail;
    bool valid = true;
    for (int seed = 0; seed < kSpeedupSeeds; ++seed) {
        const SpeedupSample s = speedup_sample(static_cast<std::uint64_t>(seed));
        ratios.push_back(s.batch_s / s.single_s);
        valid = valid && s.agree && s.robust_fraction >= kSpeedupMinRobust;
        detail += format(" [eps %.3f robust %.0f%% batch %.2fs single %.2fs]", s.epsilon, 100.0 * s.robust_fraction,
                         s.batch_s, s.single_s);
    }
    std::vector<double> sorted = ratios;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    const double t = seconds_since(start);
    return {valid && median <= kSpeedupMaxRatio && t < kSpeedupSeconds,
            format("median batch/one-by-one time %.3f (speedup %.2fx), %.1fs;", median, 1.0 / median, t) + detail};
}

// 9. Sampled pre-activations stay inside the computed per-neuron bounds.
Outcome bound_soundness()
{
    std::mt19937_64 rng(909);
    const double epsilons[] = {0.01, 0.05, 0.1};
    std::size_t checked = 0, violations = 0;
    for (int pair = 0; pair < kBoundPairs; ++pair) {
        const std::size_t d_in = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
        const Network net = small_random_network(rng, d_in, 12);
        const Eigen::VectorXd x = testsupport::random_point(rng, d_in);
        const BallQuery q{x, epsilons[pair % 3], net.classify(x)};
        const LayerBounds bounds = milp_bounds(net, net.layer_count(), q);
        for (int s = 0; s < kBoundSamples; ++s) {
            Eigen::VectorXd p(static_cast<Eigen::Index>(d_in));
            for (Eigen::Index i = 0; i < p.size(); ++i) {
                const Interval b = encoding::input_interval(x[i], q.epsilon);
                // Every tenth sample is a vertex of the box.
                p[i] = s % 10 == 0 ? (std::bernoulli_distribution(0.5)(rng) ? b.lower : b.upper)
                                   : std::uniform_real_distribution<double>(b.lower, b.upper)(rng);
            }
            const Trace t = net.forward(p);
            for (std::size_t layer = 0; layer < bounds.depth(); ++layer)
                for (Eigen::Index m = 0; m < t.pre[layer].size(); ++m) {
                    ++checked;
                    violations += t.pre[layer][m] < bounds.lower[layer][m] || t.pre[layer][m] > bounds.upper[layer][m];
                }
        }
    }
    return {violations == 0,
            format("%zu sampled pre-activations over %d balls, %zu outside bounds", checked, kBoundPairs, violations)};
}

} // namespace

int main(int argc, char **argv)
{
    const std::vector<std::pair<const char *, std::function<Outcome()>>> criteria{
        {"union encoding matches union membership", union_encoding_membership},
        {"single-ball verdicts match region enumeration", single_ball_completeness},
        {"group verdicts match one-by-one verdicts", group_pipeline_agreement},
        {"scripted ten-input run velocities and arm updates", ten_input_velocities},
        {"bucketed arm recommendation and update", bucket_semantics},
        {"Thompson selection beats uniform selection", bandit_effectiveness},
        {"complete-linkage dendrograms", clustering_correctness},
        {"desk-scale batch speedup", desk_scale_speedup},
        {"per-neuron bound soundness", bound_soundness},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i)
        selected.insert(std::atoi(argv[i]));
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(number))
            continue;
        const Outcome o = criteria[i].second();
        failures += o.pass ? 0 : 1;
        std::printf("criterion %d %s: %s (%s)\n", number, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures;
}
