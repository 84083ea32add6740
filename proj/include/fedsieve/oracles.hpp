#pragma once

// Brute-force reference implementations used to cross-check the library
// paths. Deliberately naive: no shared distance matrix, no shared helpers,
// every set scan exhaustive. Keep these independent of outlier.hpp/defense.hpp
// internals so a bug cannot cancel out on both sides.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "fedsieve/common.hpp"

namespace fedsieve::oracle {

inline double point_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double diff = a[i] - b[i];
        s += diff * diff;
    }
    return std::sqrt(s);
}

namespace detail {

// k nearest neighbors of p by repeated exhaustive scans; ties -> lowest index.
inline std::vector<std::size_t> knn_by_scan(const std::vector<std::vector<double>>& pts,
                                            std::size_t p, std::size_t k) {
    std::vector<char> taken(pts.size(), 0);
    taken[p] = 1;
    std::vector<std::size_t> out;
    for (std::size_t round = 0; round < k; ++round) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_idx = pts.size();
        for (std::size_t j = 0; j < pts.size(); ++j) {
            if (taken[j]) continue;
            double dj = point_distance(pts[p], pts[j]);
            if (dj < best || (dj == best && j < best_idx)) {
                best = dj;
                best_idx = j;
            }
        }
        taken[best_idx] = 1;
        out.push_back(best_idx);
    }
    return out;
}

inline double chaining_distance_by_scan(const std::vector<std::vector<double>>& pts,
                                        std::size_t p, const std::vector<std::size_t>& nbrs) {
    std::size_t k = nbrs.size();
    std::vector<std::size_t> chain{p};
    std::vector<std::size_t> remaining = nbrs;
    double total = 0.0;
    for (std::size_t step = 1; step <= k; ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_pos = 0;
        for (std::size_t pos = 0; pos < remaining.size(); ++pos) {
            double cost = std::numeric_limits<double>::infinity();
            for (std::size_t c : chain)
                cost = std::min(cost, point_distance(pts[c], pts[remaining[pos]]));
            if (cost < best || (cost == best && remaining[pos] < remaining[best_pos])) {
                best = cost;
                best_pos = pos;
            }
        }
        double weight = 2.0 * static_cast<double>(k + 1 - step) /
                        (static_cast<double>(k) * static_cast<double>(k + 1));
        total += weight * best;
        chain.push_back(remaining[best_pos]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best_pos));
    }
    return total;
}

}  // namespace detail

inline std::vector<double> cof_bruteforce(const std::vector<std::vector<double>>& pts,
                                          std::size_t k) {
    const std::size_t n = pts.size();
    if (n < 3) throw InsufficientPointsError("cof_bruteforce: needs at least 3 points");
    if (k < 2 || k > n - 1) throw Error("cof_bruteforce: k out of range");

    bool all_identical = true;
    for (std::size_t i = 1; i < n && all_identical; ++i)
        if (point_distance(pts[0], pts[i]) != 0.0) all_identical = false;
    if (all_identical) return std::vector<double>(n, 1.0);

    std::vector<std::vector<std::size_t>> nbrs(n);
    std::vector<double> ac(n);
    for (std::size_t i = 0; i < n; ++i) {
        nbrs[i] = detail::knn_by_scan(pts, i, k);
        ac[i] = detail::chaining_distance_by_scan(pts, i, nbrs[i]);
    }
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t o : nbrs[i]) denom += ac[o];
        if (denom == 0.0)
            scores[i] = ac[i] == 0.0 ? 1.0 : 1e300;
        else
            scores[i] = static_cast<double>(k) * ac[i] / denom;
    }
    return scores;
}

// Krum scores: for each candidate, the sum of squared distances to its
// n - f - 2 nearest peers. Returns (scores, winner index).
inline std::pair<std::vector<double>, std::size_t> krum_bruteforce(
    const std::vector<std::vector<double>>& pts, std::size_t f) {
    const std::size_t n = pts.size();
    if (n < 2 * f + 3) throw Error("krum_bruteforce: n too small for f");
    std::vector<double> scores(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> sq;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double dij = point_distance(pts[i], pts[j]);
            sq.push_back(dij * dij);
        }
        std::sort(sq.begin(), sq.end());
        for (std::size_t t = 0; t < n - f - 2; ++t) scores[i] += sq[t];
    }
    std::size_t winner = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (scores[i] < scores[winner]) winner = i;
    return {scores, winner};
}

// Coarse-to-fine grid search for the geometric median. Practical up to d ~ 4.
inline std::pair<std::vector<double>, double> geometric_median_grid(
    const std::vector<std::vector<double>>& pts, std::size_t levels = 10,
    std::size_t steps_per_dim = 11) {
    const std::size_t d = pts[0].size();
    std::vector<double> lo(d, std::numeric_limits<double>::infinity());
    std::vector<double> hi(d, -std::numeric_limits<double>::infinity());
    for (const auto& p : pts)
        for (std::size_t j = 0; j < d; ++j) {
            lo[j] = std::min(lo[j], p[j]);
            hi[j] = std::max(hi[j], p[j]);
        }

    auto objective = [&](const std::vector<double>& y) {
        double s = 0.0;
        for (const auto& p : pts) s += point_distance(y, p);
        return s;
    };

    std::vector<double> best(d);
    for (std::size_t j = 0; j < d; ++j) best[j] = 0.5 * (lo[j] + hi[j]);
    double best_obj = objective(best);

    for (std::size_t level = 0; level < levels; ++level) {
        std::size_t cells = 1;
        for (std::size_t j = 0; j < d; ++j) cells *= steps_per_dim;
        std::vector<double> cand(d);
        for (std::size_t c = 0; c < cells; ++c) {
            std::size_t rem = c;
            for (std::size_t j = 0; j < d; ++j) {
                std::size_t idx = rem % steps_per_dim;
                rem /= steps_per_dim;
                cand[j] = lo[j] + (hi[j] - lo[j]) * static_cast<double>(idx) /
                                      static_cast<double>(steps_per_dim - 1);
            }
            double obj = objective(cand);
            if (obj < best_obj) {
                best_obj = obj;
                best = cand;
            }
        }
        // Shrink the box around the incumbent and refine.
        for (std::size_t j = 0; j < d; ++j) {
            double span = (hi[j] - lo[j]) / static_cast<double>(steps_per_dim - 1);
            lo[j] = best[j] - 1.5 * span;
            hi[j] = best[j] + 1.5 * span;
        }
    }
    return {best, best_obj};
}

}  // namespace fedsieve::oracle
