#pragma once

// Test-only reference implementations, kept independent of the library code
// paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "faircc/tensor.hpp"

namespace faircc::oracle {

// DBSCAN via union-find over core-core edges plus a nearest-core pass for
// border points. Same semantics as faircc::dbscan, different machinery.
inline std::vector<int> dbscan_reference(const Tensor& points, double eps, int min_pts) {
    if (points.rank() == 0 || points.size() == 0) return {};
    const int n = points.rows();
    const double eps2 = eps * eps;

    auto d2 = [&](int i, int j) { return dense::squared_distance(points.row(i), points.row(j)); };

    std::vector<int> degree(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (d2(i, j) <= eps2) ++degree[static_cast<std::size_t>(i)];
    std::vector<bool> core(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) core[static_cast<std::size_t>(i)] = degree[static_cast<std::size_t>(i)] >= min_pts;

    std::vector<int> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            x = parent[static_cast<std::size_t>(x)];
        }
        return x;
    };
    for (int i = 0; i < n; ++i) {
        if (!core[static_cast<std::size_t>(i)]) continue;
        for (int j = i + 1; j < n; ++j) {
            if (!core[static_cast<std::size_t>(j)] || d2(i, j) > eps2) continue;
            const int ri = find(i), rj = find(j);
            if (ri != rj) parent[static_cast<std::size_t>(std::max(ri, rj))] = std::min(ri, rj);
        }
    }

    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    int next = 0;
    std::vector<int> root_label(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        if (!core[static_cast<std::size_t>(i)]) continue;
        const int r = find(i);
        if (root_label[static_cast<std::size_t>(r)] < 0) root_label[static_cast<std::size_t>(r)] = next++;
        labels[static_cast<std::size_t>(i)] = root_label[static_cast<std::size_t>(r)];
    }
    for (int i = 0; i < n; ++i) {
        if (core[static_cast<std::size_t>(i)]) continue;
        double best = std::numeric_limits<double>::infinity();
        int best_core = -1;
        for (int j = 0; j < n; ++j) {
            if (!core[static_cast<std::size_t>(j)] || d2(i, j) > eps2) continue;
            if (d2(i, j) < best) {
                best = d2(i, j);
                best_core = j;
            }
        }
        if (best_core >= 0) labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(best_core)];
    }
    return labels;
}

// True when two labelings induce the same partition (bijective label mapping)
// with noise (-1) matching exactly.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    std::vector<std::pair<int, int>> fwd, bwd;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if ((a[i] < 0) != (b[i] < 0)) return false;
        if (a[i] < 0) continue;
        bool found = false;
        for (auto& [k, v] : fwd)
            if (k == a[i]) {
                if (v != b[i]) return false;
                found = true;
            }
        if (!found) fwd.emplace_back(a[i], b[i]);
        found = false;
        for (auto& [k, v] : bwd)
            if (k == b[i]) {
                if (v != a[i]) return false;
                found = true;
            }
        if (!found) bwd.emplace_back(b[i], a[i]);
    }
    return true;
}

}  // namespace faircc::oracle
