#include "batchverify/bandit.hpp"
#include "batchverify/error.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace batchverify;

namespace {

std::vector<std::pair<std::size_t, std::size_t>> ranges(const BatchSizeBandit &b)
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const Arm &a : b.arms())
        out.emplace_back(a.first_size, a.last_size);
    return out;
}

using Ranges = std::vector<std::pair<std::size_t, std::size_t>>;

} // namespace

TEST(Bandit, BucketPartition)
{
    EXPECT_EQ(ranges(BatchSizeBandit(8, 2, 100)), (Ranges{{1, 2}, {3, 4}, {5, 6}, {7, 8}}));
    EXPECT_EQ(ranges(BatchSizeBandit(1, 1, 100)), (Ranges{{1, 1}}));
    EXPECT_EQ(ranges(BatchSizeBandit(5, 2, 100)), (Ranges{{1, 2}, {3, 4}, {5, 5}}));
}

TEST(Bandit, RejectsBadParameters)
{
    EXPECT_THROW(BatchSizeBandit(0, 1, 1), InvalidArgument);
    EXPECT_THROW(BatchSizeBandit(4, 5, 1), InvalidArgument);
    EXPECT_THROW(BatchSizeBandit(4, 0, 1), InvalidArgument);
    EXPECT_THROW(BatchSizeBandit(4, 2, -1), InvalidArgument);
    BatchSizeBandit b(4, 2, 1);
    EXPECT_THROW(b.update(0, {1, 1.0}), InvalidArgument);
    EXPECT_THROW(b.update(5, {1, 1.0}), InvalidArgument);
    EXPECT_THROW(b.update(2, {1, 0.0}), InvalidArgument);
}

TEST(Bandit, RecommendsLargestSizeOfArm)
{
    BatchSizeBandit b(8, 2, 100);
    std::mt19937_64 rng(1);
    // Forced pulls visit the arms in order.
    EXPECT_EQ(b.get_mini_batch_size(rng), 2u);
    EXPECT_EQ(b.get_mini_batch_size(rng), 4u);
    EXPECT_EQ(b.get_mini_batch_size(rng), 6u);
    EXPECT_EQ(b.trace().back().chosen_arm, 2u);
    // A batch of 3 built from that recommendation credits arm {3,4}.
    b.update(3, {3, 1.0});
    EXPECT_EQ(b.arm_for_size(3), 1u);
    EXPECT_EQ(b.arms()[1].count, 1u);
    EXPECT_EQ(b.arms()[2].count, 0u);
    EXPECT_EQ(*b.trace().back().updated_arm, 1u);
}

TEST(Bandit, SingleArmAlwaysReturnsItsSize)
{
    BatchSizeBandit b(3, 3, 100);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 20; ++i) {
        EXPECT_EQ(b.get_mini_batch_size(rng), 3u);
        b.update(2, {2, 0.5 + i});
    }
}

TEST(Bandit, FirstObservationsSetArmMeans)
{
    BatchSizeBandit b(8, 2, 100);
    b.update(5, {4, 25.0});
    b.update(3, {3, 23.0});
    EXPECT_DOUBLE_EQ(b.arms()[2].mean, 4.0 / 25.0);
    EXPECT_DOUBLE_EQ(b.arms()[1].mean, 3.0 / 23.0);
    EXPECT_EQ(b.arms()[0].count, 0u);
    EXPECT_EQ(b.arms()[3].count, 0u);
}

TEST(Bandit, ClearlyBetterArmDominatesWithoutRiskTerm)
{
    BatchSizeBandit b(4, 2, 0.0);
    std::mt19937_64 data(3);
    std::normal_distribution<double> noise(0.0, 0.5);
    for (int i = 0; i < 50; ++i) {
        b.update(2, {1, 10.0 + noise(data)});  // arm {1,2}: velocity ~ 0.1
        b.update(4, {10, 1.0 + 0.01 * noise(data)});    // arm {3,4}: velocity ~ 10
    }
    std::mt19937_64 rng(4);
    int high = 0;
    for (int i = 0; i < 1000; ++i)
        high += b.get_mini_batch_size(rng) == 4 ? 1 : 0;
    EXPECT_GE(high, 950);
}

TEST(Bandit, PosteriorConcentratesOnRepeatedReward)
{
    BatchSizeBandit b(2, 2, 0.0);
    std::mt19937_64 rng(5);
    double previous_variance = std::numeric_limits<double>::infinity();
    for (int n : {5, 50, 500}) {
        BatchSizeBandit fresh(2, 2, 0.0);
        for (int i = 0; i < n; ++i)
            fresh.update(1, {3, 2.0});  // reward 1.5
        double mean = 0.0, variance = 0.0;
        const int draws = 4000;
        for (int i = 0; i < draws; ++i) {
            const auto [mu, var] = fresh.sample_posterior(0, rng);
            mean += mu / draws;
            variance += var / draws;
        }
        EXPECT_NEAR(mean, 1.5 * n / (n + 1.0), 0.05);
        EXPECT_LT(variance, previous_variance);
        previous_variance = variance;
    }
}

TEST(Bandit, SeededSelectionIsReproducible)
{
    auto run = [] {
        BatchSizeBandit b(8, 2, 1.0);
        std::mt19937_64 rng(77);
        std::vector<std::size_t> picks;
        for (int i = 0; i < 40; ++i) {
            const std::size_t k = b.get_mini_batch_size(rng);
            picks.push_back(k);
            b.update(k, {k, 1.0 + static_cast<double>(k % 3)});
        }
        return picks;
    };
    EXPECT_EQ(run(), run());
}

TEST(Bandit, SelectionStaysInRange)
{
    BatchSizeBandit b(7, 3, 100.0);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> v(0.1, 5.0);
    for (int i = 0; i < 200; ++i) {
        const std::size_t k = b.get_mini_batch_size(rng);
        ASSERT_GE(k, 1u);
        ASSERT_LE(k, 7u);
        b.update(std::max<std::size_t>(1, k - i % 2), {1, 1.0 / v(rng)});
    }
}

TEST(Bandit, StationaryBestArmIsFoundQuickly)
{
    // Arm means 1, 2, 3 and 6 with unit noise: the best arm leads by 3 sd.
    const double means[] = {1.0, 2.0, 3.0, 6.0};
    // A small risk weight: with unit noise on every arm the variance draws
    // would otherwise dominate the score.
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        BatchSizeBandit b(8, 2, 0.1);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, 1.0);
        int best_late = 0;
        for (int round = 0; round < 200; ++round) {
            const std::size_t k = b.get_mini_batch_size(rng);
            const std::size_t arm = b.arm_for_size(k);
            const double reward = std::max(1e-3, means[arm] + noise(rng));
            b.update(k, {1, 1.0 / reward});
            if (round >= 100 && arm == 3)
                ++best_late;
        }
        EXPECT_GE(best_late, 60) << "seed " << seed;
    }
}

TEST(Bandit, TraceCsv)
{
    BatchSizeBandit b(4, 2, 1.0);
    std::mt19937_64 rng(8);
    for (int i = 0; i < 4; ++i)
        b.update(b.get_mini_batch_size(rng), {1, 2.0});
    std::ostringstream out;
    b.write_trace_csv(out);
    const std::string csv = out.str();
    EXPECT_EQ(csv.rfind("round,chosen_arm,recommended,actual,updated_arm,reward,score_1_2,score_3_4\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}
