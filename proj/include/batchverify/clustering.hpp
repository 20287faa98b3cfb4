#pragma once

#include "batchverify/network.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace batchverify {

/// Number of differing bits. Throws DimensionError on a length mismatch.
std::size_t hamming(const ActivationPattern &a, const ActivationPattern &b);

/// Cluster ids: 0..n-1 are the leaves (input positions), merge i creates id n+i.
struct Merge {
    std::size_t left = 0;   // the smaller id
    std::size_t right = 0;
    std::size_t distance = 0;
};

struct Dendrogram {
    std::size_t leaf_count = 0;
    std::vector<Merge> merges;

    std::string to_json() const;
};

/// Complete-linkage agglomerative clustering on a symmetric distance matrix.
/// Ties pick the pair whose smallest member indices are lowest.
Dendrogram complete_linkage(const std::vector<std::vector<std::size_t>> &distances);

/// Complete-linkage clustering of activation patterns under Hamming distance.
Dendrogram hcluster(const std::vector<ActivationPattern> &patterns);

/// Binary tree mirroring a dendrogram, with live leaf counts per subtree.
/// Extraction removes leaves; the structure is never rebuilt.
class BatchTree {
public:
    explicit BatchTree(const Dendrogram &dendrogram);

    std::size_t remaining() const;
    bool empty() const { return remaining() == 0; }

    /// Walks pre-order from the root (left child first) to the first node
    /// whose live count is at most k, returns its live leaves in left-to-right
    /// order and removes them.
    std::vector<std::size_t> extract_batch(std::size_t k);

    struct Node {
        std::size_t left = npos;
        std::size_t right = npos;
        std::size_t parent = npos;
        std::size_t count = 0;
    };
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    const std::vector<Node> &nodes() const { return nodes_; }
    std::size_t root() const { return root_; }

private:
    void collect(std::size_t node, std::vector<std::size_t> &out) const;

    std::vector<Node> nodes_;  // indexed by cluster id
    std::size_t leaf_count_ = 0;
    std::size_t root_ = npos;
};

} // namespace batchverify
