#include "batchverify/clustering.hpp"
#include "batchverify/error.hpp"

#include "support/six_patterns.hpp"
#include "support/reference_clustering.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

using namespace batchverify;

namespace {

ActivationPattern bits(std::initializer_list<int> v)
{
    ActivationPattern p;
    for (int b : v)
        p.bits.push_back(b != 0);
    return p;
}

ActivationPattern random_pattern(std::mt19937_64 &rng, std::size_t n)
{
    std::bernoulli_distribution coin(0.5);
    ActivationPattern p;
    for (std::size_t i = 0; i < n; ++i)
        p.bits.push_back(coin(rng));
    return p;
}

std::size_t count_leaves(const BatchTree &t, std::size_t node)
{
    const auto &n = t.nodes()[node];
    if (n.left == BatchTree::npos)
        return 1;
    return count_leaves(t, n.left) + count_leaves(t, n.right);
}

} // namespace

TEST(Hamming, Examples)
{
    EXPECT_EQ(hamming(bits({1, 0, 1, 1, 0, 1, 0}), bits({0, 0, 0, 1, 0, 1, 0})), 2u);
    const ActivationPattern a = bits({1, 0, 1, 1});
    EXPECT_EQ(hamming(a, a), 0u);
    EXPECT_EQ(hamming(a, bits({0, 1, 0, 0})), 4u);
    EXPECT_THROW(hamming(a, bits({1})), DimensionError);
}

TEST(Hamming, IsAMetric)
{
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_pattern(rng, 20), b = random_pattern(rng, 20), c = random_pattern(rng, 20);
        EXPECT_EQ(hamming(a, b), hamming(b, a));
        EXPECT_EQ(hamming(a, b) == 0, a == b);
        EXPECT_LE(hamming(a, c), hamming(a, b) + hamming(b, c));
    }
}

TEST(Hcluster, SingletonHasNoMerges)
{
    const Dendrogram d = hcluster({bits({1, 0})});
    EXPECT_EQ(d.leaf_count, 1u);
    EXPECT_TRUE(d.merges.empty());
    BatchTree t(d);
    EXPECT_EQ(t.remaining(), 1u);
    EXPECT_EQ(t.extract_batch(3), std::vector<std::size_t>{0});
    EXPECT_TRUE(t.empty());
}

TEST(Hcluster, SixPatternLinkageOrder)
{
    const auto patterns = testsupport::six_patterns();
    ASSERT_EQ(hamming(patterns[2], patterns[3]), 420u);
    ASSERT_EQ(hamming(patterns[4], patterns[5]), 477u);
    const Dendrogram d = hcluster(patterns);
    ASSERT_EQ(d.merges.size(), 5u);
    EXPECT_EQ(d.merges[0].left, 2u);
    EXPECT_EQ(d.merges[0].right, 3u);
    EXPECT_EQ(d.merges[0].distance, 420u);
    EXPECT_EQ(d.merges[1].left, 4u);
    EXPECT_EQ(d.merges[1].right, 5u);
    EXPECT_EQ(d.merges[1].distance, 477u);
    EXPECT_EQ(d.merges[2].left, 6u);
    EXPECT_EQ(d.merges[2].right, 7u);
    EXPECT_EQ(d.merges[2].distance, 595u);
    EXPECT_EQ(d.merges[3].distance, 610u);
}

TEST(Hcluster, MatchesReferenceOnRandomPatterns)
{
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ActivationPattern> patterns;
        // Short patterns make ties frequent.
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 9);
        for (std::size_t i = 0; i < n; ++i)
            patterns.push_back(random_pattern(rng, trial % 2 == 0 ? 6 : 40));
        const Dendrogram got = hcluster(patterns);
        const Dendrogram want = testsupport::reference_clustering(patterns);
        ASSERT_EQ(got.merges.size(), want.merges.size());
        for (std::size_t i = 0; i < got.merges.size(); ++i) {
            EXPECT_EQ(got.merges[i].left, want.merges[i].left) << "trial " << trial << " merge " << i;
            EXPECT_EQ(got.merges[i].right, want.merges[i].right) << "trial " << trial << " merge " << i;
            EXPECT_EQ(got.merges[i].distance, want.merges[i].distance);
            if (i > 0)
                EXPECT_GE(got.merges[i].distance, got.merges[i - 1].distance);
        }
    }
}

TEST(BatchTree, SixPatternStructure)
{
    BatchTree t(hcluster(testsupport::six_patterns()));
    EXPECT_EQ(t.remaining(), 6u);
    EXPECT_EQ(t.nodes()[8].count, 4u);  // {x3, x4, x5, x6}
    EXPECT_EQ(t.extract_batch(4), (std::vector<std::size_t>{2, 3, 4, 5}));
    EXPECT_EQ(t.remaining(), 2u);
    EXPECT_EQ(t.extract_batch(1), std::vector<std::size_t>{0});
    EXPECT_EQ(t.extract_batch(8), std::vector<std::size_t>{1});
    EXPECT_TRUE(t.empty());
    EXPECT_THROW(t.extract_batch(1), InvalidArgument);
}

TEST(BatchTree, CountsMatchLeafEnumeration)
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<ActivationPattern> patterns;
        for (int i = 0; i < 12; ++i)
            patterns.push_back(random_pattern(rng, 16));
        const BatchTree t(hcluster(patterns));
        for (std::size_t node = 0; node < t.nodes().size(); ++node)
            EXPECT_EQ(t.nodes()[node].count, count_leaves(t, node));
        EXPECT_EQ(t.remaining(), 12u);
    }
}

TEST(BatchTree, ExtractionPartitionsInputs)
{
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> pick_k(1, 6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ActivationPattern> patterns;
        for (int i = 0; i < 17; ++i)
            patterns.push_back(random_pattern(rng, 10));
        BatchTree t(hcluster(patterns));
        std::multiset<std::size_t> seen;
        while (!t.empty()) {
            const std::size_t before = t.remaining();
            const std::size_t k = pick_k(rng);
            const auto batch = t.extract_batch(k);
            ASSERT_GE(batch.size(), 1u);
            ASSERT_LE(batch.size(), k);
            EXPECT_EQ(t.remaining(), before - batch.size());
            seen.insert(batch.begin(), batch.end());
        }
        ASSERT_EQ(seen.size(), 17u);
        for (std::size_t i = 0; i < 17; ++i)
            EXPECT_EQ(seen.count(i), 1u);
    }
}

TEST(BatchTree, RejectsMalformedDendrogram)
{
    Dendrogram d;
    d.leaf_count = 3;
    d.merges = {{0, 1, 1}, {0, 2, 2}};
    EXPECT_THROW(BatchTree{d}, InvalidArgument);
}

TEST(Dendrogram, JsonExport)
{
    const std::string json = hcluster(testsupport::six_patterns()).to_json();
    EXPECT_NE(json.find("\"distance\": 595"), std::string::npos);
    EXPECT_NE(json.find("\"leaf_count\": 6"), std::string::npos);
}
