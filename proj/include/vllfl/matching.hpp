#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "vllfl/errors.hpp"
#include "vllfl/matrix.hpp"

namespace vllfl {

// One-to-one pairing between predictions and ground-truth entries.
// Covers min(n_pred, n_gt) pairs; indices outside the pairs are unmatched.
struct Assignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, gt)
};

// Minimum-total-cost assignment on a possibly rectangular cost matrix
// (rows = predictions, cols = ground truth). Hungarian algorithm with
// potentials, O(n^3). The matrix is padded square internally; every
// complete matching carries the same number of dummy pairs, so padding
// with zeros preserves the optimum over the real pairs.
inline Assignment match(const Matrix& cost) {
    const std::size_t n_pred = cost.rows;
    const std::size_t n_gt = cost.cols;
    Assignment result;
    if (n_pred == 0 || n_gt == 0) return result;
    for (double v : cost.data) {
        if (!std::isfinite(v)) throw domain_error("match: non-finite cost");
    }

    const std::size_t n = std::max(n_pred, n_gt);
    auto at = [&](std::size_t i, std::size_t j) -> double {
        return (i < n_pred && j < n_gt) ? cost(i, j) : 0.0;
    };

    // Row/column potentials and column-to-row matching, 1-indexed with a
    // virtual 0 row/column (standard shortest augmenting path formulation).
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> match_col(n + 1, 0);  // col -> row (1-indexed)
    std::vector<std::size_t> way(n + 1, 0);

    for (std::size_t i = 1; i <= n; ++i) {
        match_col[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = match_col[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match_col[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
        } while (j0);
    }

    for (std::size_t j = 1; j <= n; ++j) {
        const std::size_t i = match_col[j];
        if (i >= 1 && i <= n_pred && j <= n_gt) {
            result.pairs.emplace_back(i - 1, j - 1);
        }
    }
    return result;
}

inline double assignment_cost(const Matrix& cost, const Assignment& a) {
    double total = 0.0;
    for (const auto& [p, g] : a.pairs) total += cost(p, g);
    return total;
}

}  // namespace vllfl
