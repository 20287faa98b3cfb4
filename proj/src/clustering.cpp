#include "batchverify/clustering.hpp"

#include "batchverify/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <string>
#include <tuple>

namespace batchverify {

std::size_t hamming(const ActivationPattern &a, const ActivationPattern &b)
{
    if (a.size() != b.size())
        throw DimensionError("hamming: patterns of length " + std::to_string(a.size()) + " and " +
                             std::to_string(b.size()));
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        d += a.bits[i] != b.bits[i] ? 1 : 0;
    return d;
}

std::string Dendrogram::to_json() const
{
    nlohmann::json doc;
    doc["leaf_count"] = leaf_count;
    doc["merges"] = nlohmann::json::array();
    for (std::size_t i = 0; i < merges.size(); ++i)
        doc["merges"].push_back(
            {{"id", leaf_count + i}, {"left", merges[i].left}, {"right", merges[i].right}, {"distance", merges[i].distance}});
    return doc.dump(2);
}

Dendrogram complete_linkage(const std::vector<std::vector<std::size_t>> &distances)
{
    const std::size_t n = distances.size();
    if (n == 0)
        throw InvalidArgument("complete_linkage needs at least one point");
    for (std::size_t i = 0; i < n; ++i) {
        if (distances[i].size() != n)
            throw DimensionError("complete_linkage: distance matrix is not square");
        for (std::size_t j = 0; j < n; ++j)
            if (distances[i][j] != distances[j][i])
                throw InvalidArgument("complete_linkage: distance matrix is not symmetric");
    }

    // Live clusters: id, smallest member index, and linkage to other live clusters.
    std::vector<std::size_t> ids(n), min_member(n);
    std::vector<std::vector<std::size_t>> link = distances;
    for (std::size_t i = 0; i < n; ++i)
        ids[i] = min_member[i] = i;

    Dendrogram out;
    out.leaf_count = n;
    while (ids.size() > 1) {
        std::size_t best_a = 0, best_b = 1;
        auto key = [&](std::size_t a, std::size_t b) {
            const std::size_t lo = std::min(min_member[a], min_member[b]);
            const std::size_t hi = std::max(min_member[a], min_member[b]);
            return std::make_tuple(link[a][b], lo, hi);
        };
        for (std::size_t a = 0; a < ids.size(); ++a)
            for (std::size_t b = a + 1; b < ids.size(); ++b)
                if (key(a, b) < key(best_a, best_b)) {
                    best_a = a;
                    best_b = b;
                }
        out.merges.push_back({std::min(ids[best_a], ids[best_b]), std::max(ids[best_a], ids[best_b]),
                              link[best_a][best_b]});
        // Slot best_a becomes the merged cluster; slot best_b is removed.
        for (std::size_t c = 0; c < ids.size(); ++c) {
            const std::size_t d = std::max(link[best_a][c], link[best_b][c]);
            link[best_a][c] = link[c][best_a] = d;
        }
        link[best_a][best_a] = 0;
        ids[best_a] = n + out.merges.size() - 1;
        min_member[best_a] = std::min(min_member[best_a], min_member[best_b]);
        ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(best_b));
        min_member.erase(min_member.begin() + static_cast<std::ptrdiff_t>(best_b));
        link.erase(link.begin() + static_cast<std::ptrdiff_t>(best_b));
        for (auto &row : link)
            row.erase(row.begin() + static_cast<std::ptrdiff_t>(best_b));
    }
    return out;
}

Dendrogram hcluster(const std::vector<ActivationPattern> &patterns)
{
    const std::size_t n = patterns.size();
    std::vector<std::vector<std::size_t>> d(n, std::vector<std::size_t>(n, 0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            d[i][j] = d[j][i] = hamming(patterns[i], patterns[j]);
    return complete_linkage(d);
}

BatchTree::BatchTree(const Dendrogram &dendrogram)
    : nodes_(dendrogram.leaf_count + dendrogram.merges.size()), leaf_count_(dendrogram.leaf_count)
{
    if (leaf_count_ == 0)
        throw InvalidArgument("BatchTree needs at least one leaf");
    if (dendrogram.merges.size() + 1 != leaf_count_)
        throw InvalidArgument("dendrogram must have exactly leaf_count - 1 merges");
    for (std::size_t i = 0; i < leaf_count_; ++i)
        nodes_[i].count = 1;
    for (std::size_t i = 0; i < dendrogram.merges.size(); ++i) {
        const Merge &m = dendrogram.merges[i];
        const std::size_t id = leaf_count_ + i;
        if (m.left >= id || m.right >= id || m.left == m.right || nodes_[m.left].parent != npos ||
            nodes_[m.right].parent != npos)
            throw InvalidArgument("dendrogram merge " + std::to_string(i) + " is malformed");
        Node &node = nodes_[id];
        node.left = std::min(m.left, m.right);
        node.right = std::max(m.left, m.right);
        node.count = nodes_[node.left].count + nodes_[node.right].count;
        nodes_[node.left].parent = nodes_[node.right].parent = id;
    }
    root_ = nodes_.size() - 1;
}

std::size_t BatchTree::remaining() const
{
    return nodes_[root_].count;
}

void BatchTree::collect(std::size_t node, std::vector<std::size_t> &out) const
{
    const Node &n = nodes_[node];
    if (n.count == 0)
        return;
    if (n.left == npos) {
        out.push_back(node);
        return;
    }
    collect(n.left, out);
    collect(n.right, out);
}

std::vector<std::size_t> BatchTree::extract_batch(std::size_t k)
{
    if (k == 0)
        throw InvalidArgument("extract_batch: k must be positive");
    if (empty())
        throw InvalidArgument("extract_batch: tree is empty");
    std::size_t node = root_;
    while (nodes_[node].count > k) {
        const Node &n = nodes_[node];
        node = nodes_[n.left].count > 0 ? n.left : n.right;
    }
    std::vector<std::size_t> batch;
    collect(node, batch);
    const std::size_t taken = nodes_[node].count;
    // Zero the subtree so later walks skip it, then fix the ancestors.
    std::vector<std::size_t> stack{node};
    while (!stack.empty()) {
        const std::size_t cur = stack.back();
        stack.pop_back();
        if (nodes_[cur].count == 0)
            continue;
        nodes_[cur].count = 0;
        if (nodes_[cur].left != npos) {
            stack.push_back(nodes_[cur].left);
            stack.push_back(nodes_[cur].right);
        }
    }
    for (std::size_t p = nodes_[node].parent; p != npos; p = nodes_[p].parent)
        nodes_[p].count -= taken;
    return batch;
}

} // namespace batchverify
