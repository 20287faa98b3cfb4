#pragma once

#include "batchverify/network.hpp"

#include <vector>

namespace testsupport {

// Six patterns over disjoint bit blocks whose pairwise Hamming distances give
// d(x3,x4)=420, d(x5,x6)=477, complete linkage 595 between the two pairs and
// d(x1,x2)=610. Index i holds x(i+1).
inline std::vector<batchverify::ActivationPattern> six_patterns()
{
    struct Block {
        std::size_t size;
        std::vector<int> owners;  // 0-based input indices that set these bits
    };
    const std::vector<Block> blocks{
        {300, {0}}, {310, {1}}, {1000, {0, 1}},  // x1, x2 private; shared
        {210, {2}}, {210, {3}}, {70, {2, 3}},    // x3, x4 private; shared
        {238, {4}}, {239, {5}}, {76, {4, 5}},    // x5, x6 private; shared
    };
    std::vector<batchverify::ActivationPattern> out(6);
    for (const Block &b : blocks)
        for (std::size_t i = 0; i < 6; ++i) {
            bool set = false;
            for (int o : b.owners)
                set = set || static_cast<std::size_t>(o) == i;
            out[i].bits.insert(out[i].bits.end(), b.size, set);
        }
    return out;
}

} // namespace testsupport
