#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "fedsieve/common.hpp"

namespace fedsieve {

// n points of dimension d, row-major. Rows keep the caller's client order;
// all tie-breaking below resolves to the lowest row index.
struct PointSet {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> data;  // n*d

    static PointSet from_rows(const std::vector<std::vector<double>>& rows) {
        PointSet ps;
        ps.n = rows.size();
        ps.d = rows.empty() ? 0 : rows[0].size();
        ps.data.reserve(ps.n * ps.d);
        for (const auto& r : rows) {
            if (r.size() != ps.d) throw Error("PointSet: inconsistent dimension");
            ps.data.insert(ps.data.end(), r.begin(), r.end());
        }
        return ps;
    }

    const double* row(std::size_t i) const { return data.data() + i * d; }

    double distance(std::size_t i, std::size_t j) const {
        const double* a = row(i);
        const double* b = row(j);
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            double diff = a[k] - b[k];
            s += diff * diff;
        }
        return std::sqrt(s);
    }
};

using ScoreVector = std::vector<double>;

namespace detail {

// Weight of the i-th edge (1-based) in the average chaining distance over a
// path of k edges: 2(k+1-i) / (k(k+1)). Weights sum to 1.
inline double chain_weight(std::size_t i, std::size_t k) {
    return 2.0 * static_cast<double>(k + 1 - i) /
           (static_cast<double>(k) * static_cast<double>(k + 1));
}

// Average chaining distance of point p over its k nearest neighbors:
// grow a path from {p}, each step appending the neighbor closest to the
// already-chosen set (ties -> lowest index), and take the weighted mean of
// the edge costs with earlier edges weighted more.
inline double avg_chaining_distance(const PointSet& ps, std::size_t p,
                                    const std::vector<std::size_t>& neighbors,
                                    const std::vector<double>& dist) {
    const std::size_t n = ps.n;
    const std::size_t k = neighbors.size();
    std::vector<std::size_t> chosen;
    chosen.reserve(k + 1);
    chosen.push_back(p);
    std::vector<char> used(n, 0);
    used[p] = 1;

    double ac = 0.0;
    for (std::size_t step = 1; step <= k; ++step) {
        double best_cost = std::numeric_limits<double>::infinity();
        std::size_t best = n;
        for (std::size_t cand : neighbors) {
            if (used[cand]) continue;
            double cost = std::numeric_limits<double>::infinity();
            for (std::size_t s : chosen) cost = std::min(cost, dist[s * n + cand]);
            if (cost < best_cost || (cost == best_cost && cand < best)) {
                best_cost = cost;
                best = cand;
            }
        }
        ac += chain_weight(step, k) * best_cost;
        used[best] = 1;
        chosen.push_back(best);
    }
    return ac;
}

}  // namespace detail

// Connectivity-based outlier factor. Scores each point against its k nearest
// neighbors (Euclidean); an isolated point chains through long edges early and
// scores high. All-identical input is the defined degenerate case: every
// score is 1 (no point is more isolated than another).
inline ScoreVector cof(const PointSet& points, std::size_t k) {
    const std::size_t n = points.n;
    if (n < 3) throw InsufficientPointsError("cof: needs at least 3 points");
    if (k < 2 || k > n - 1) throw Error("cof: k must be in [2, n-1]");

    std::vector<double> dist(n * n, 0.0);
    double max_dist = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double dij = points.distance(i, j);
            dist[i * n + j] = dij;
            dist[j * n + i] = dij;
            max_dist = std::max(max_dist, dij);
        }
    }
    if (max_dist == 0.0) return ScoreVector(n, 1.0);

    // k nearest neighbors per point, ties broken by lowest index.
    std::vector<std::vector<std::size_t>> knn(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> order;
        order.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) order.push_back(j);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            double da = dist[i * n + a];
            double db = dist[i * n + b];
            if (da != db) return da < db;
            return a < b;
        });
        order.resize(k);
        knn[i] = std::move(order);
    }

    std::vector<double> ac(n);
    for (std::size_t i = 0; i < n; ++i)
        ac[i] = detail::avg_chaining_distance(points, i, knn[i], dist);

    ScoreVector scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t o : knn[i]) denom += ac[o];
        if (denom == 0.0) {
            // Unreachable at k = n-1 (zero denominator implies all points
            // coincide, handled above); for smaller k treat a point whose
            // whole neighborhood is collapsed as maximally isolated unless
            // it sits on the collapse itself.
            scores[i] = ac[i] == 0.0 ? 1.0 : 1e300;
        } else {
            scores[i] = static_cast<double>(k) * ac[i] / denom;
        }
    }
    return scores;
}

// Lower-upper average for even length.
inline double median(std::vector<double> v) {
    if (v.empty()) throw Error("median: empty input");
    std::sort(v.begin(), v.end());
    std::size_t mid = v.size() / 2;
    if (v.size() % 2 == 1) return v[mid];
    return 0.5 * (v[mid - 1] + v[mid]);
}

// Flags scores deviating from the median by at least mu * MAD, both tails.
// MAD == 0 means the scores carry no spread information; nothing is flagged.
inline std::vector<bool> mad_flags(const ScoreVector& scores, double mu) {
    if (scores.empty()) throw Error("mad_flags: empty input");
    if (mu <= 0.0) throw Error("mad_flags: mu must be positive");
    double me = median(scores);
    std::vector<double> dev(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) dev[i] = std::abs(scores[i] - me);
    double mad = median(dev);
    std::vector<bool> flags(scores.size(), false);
    if (mad == 0.0) return flags;
    for (std::size_t i = 0; i < scores.size(); ++i) flags[i] = dev[i] >= mu * mad;
    return flags;
}

// Weiszfeld iteration with epsilon-guarded denominators, started at the
// coordinate-wise mean so the objective never exceeds the mean's.
inline std::vector<double> geometric_median(const PointSet& points, double tol = 1e-10,
                                            std::size_t max_iter = 1000) {
    const std::size_t n = points.n;
    const std::size_t d = points.d;
    if (n == 0) throw Error("geometric_median: empty input");
    if (n == 1) return std::vector<double>(points.row(0), points.row(0) + d);

    std::vector<double> y(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) y[j] += points.row(i)[j];
    for (std::size_t j = 0; j < d; ++j) y[j] /= static_cast<double>(n);

    const double eps = 1e-12;
    std::vector<double> next(d);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        std::fill(next.begin(), next.end(), 0.0);
        double weight_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = points.row(i);
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                double diff = y[j] - p[j];
                dist += diff * diff;
            }
            dist = std::sqrt(dist);
            double w = 1.0 / std::max(dist, eps);
            weight_sum += w;
            for (std::size_t j = 0; j < d; ++j) next[j] += w * p[j];
        }
        double step = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            next[j] /= weight_sum;
            double diff = next[j] - y[j];
            step += diff * diff;
        }
        y.swap(next);
        if (std::sqrt(step) < tol) break;
    }
    return y;
}

inline double distance_sum(const PointSet& points, const std::vector<double>& y) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.n; ++i) {
        const double* p = points.row(i);
        double dist = 0.0;
        for (std::size_t j = 0; j < points.d; ++j) {
            double diff = y[j] - p[j];
            dist += diff * diff;
        }
        total += std::sqrt(dist);
    }
    return total;
}

// Per coordinate: sort the n values, drop k_trim from each end, average the rest.
inline std::vector<double> trimmed_mean_coord(const PointSet& points, std::size_t k_trim) {
    const std::size_t n = points.n;
    if (n < 2 * k_trim + 1) throw Error("trimmed_mean_coord: over-trimming");
    std::vector<double> out(points.d);
    std::vector<double> column(n);
    for (std::size_t j = 0; j < points.d; ++j) {
        for (std::size_t i = 0; i < n; ++i) column[i] = points.row(i)[j];
        std::sort(column.begin(), column.end());
        double s = std::accumulate(column.begin() + static_cast<std::ptrdiff_t>(k_trim),
                                   column.end() - static_cast<std::ptrdiff_t>(k_trim), 0.0);
        out[j] = s / static_cast<double>(n - 2 * k_trim);
    }
    return out;
}

}  // namespace fedsieve
