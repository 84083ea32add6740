#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fedsieve/common.hpp"
#include "fedsieve/model.hpp"
#include "fedsieve/outlier.hpp"

namespace fedsieve {

// The only thing a defense ever sees about a client: its id and parameters.
// Ground-truth attacker tags live in the harness and stop at this boundary.
struct ClientUpdate {
    std::size_t client_id = 0;
    LayeredParams params;
};

struct LayerScoreMatrix {
    std::size_t n = 0;
    std::size_t total = 0;
    std::vector<double> scores;  // n x total, row-major

    double at(std::size_t client, std::size_t layer) const {
        return scores[client * total + layer];
    }

    std::vector<double> column(std::size_t layer) const {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = at(i, layer);
        return col;
    }

    bool empty() const { return scores.empty(); }
};

struct DefenseOutcome {
    std::vector<std::size_t> benign_ids;        // sorted client ids kept
    LayeredParams aggregated;
    std::vector<std::size_t> per_client_flags;  // aligned with the submissions
    LayerScoreMatrix score_matrix;              // filled by the FLD path only
};

// Per layer j, flatten every client's layer-j tensor to one point and run COF
// over the n points. k defaults to n-1 (maximal neighborhood; no prior on the
// attacker count).
inline LayerScoreMatrix layer_scoring(const std::vector<ClientUpdate>& submissions,
                                      std::optional<std::size_t> k = std::nullopt) {
    const std::size_t n = submissions.size();
    if (n < 3) throw InsufficientPointsError("layer_scoring: needs at least 3 submissions");
    for (std::size_t i = 1; i < n; ++i)
        if (!submissions[i].params.shape_congruent(submissions[0].params))
            throw Error("layer_scoring: submissions not shape-congruent");

    const std::size_t total = submissions[0].params.total();
    std::size_t kk = k.value_or(n - 1);

    LayerScoreMatrix m;
    m.n = n;
    m.total = total;
    m.scores.assign(n * total, 0.0);
    for (std::size_t j = 0; j < total; ++j) {
        PointSet ps;
        ps.n = n;
        ps.d = submissions[0].params.layers[j].size();
        ps.data.reserve(ps.n * ps.d);
        for (const auto& s : submissions) {
            const auto& v = s.params.layers[j].values;
            ps.data.insert(ps.data.end(), v.begin(), v.end());
        }
        ScoreVector col;
        try {
            col = cof(ps, kk);
        } catch (const Error& e) {
            throw Error("layer " + std::to_string(j) + ": " + e.what());
        }
        for (std::size_t i = 0; i < n; ++i) m.scores[i * total + j] = col[i];
    }
    return m;
}

struct AnomalyResult {
    std::vector<std::size_t> benign_positions;  // indices into the submissions
    std::vector<std::size_t> flags;             // flagged-layer count per client
};

// MAD-flag every column (both tails); a client is benign while fewer than
// half of its layers are flagged. An empty benign set falls back to the
// ceil(n/2) clients with the fewest flags so aggregation always has input.
inline AnomalyResult anomaly_detection(const LayerScoreMatrix& scores, double mu = 3.0) {
    if (mu <= 0.0) throw ConfigError("anomaly_detection: mu must be > 0");
    const std::size_t n = scores.n;
    const std::size_t total = scores.total;

    AnomalyResult r;
    r.flags.assign(n, 0);
    for (std::size_t j = 0; j < total; ++j) {
        auto flags = mad_flags(scores.column(j), mu);
        for (std::size_t i = 0; i < n; ++i)
            if (flags[i]) r.flags[i]++;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<double>(r.flags[i]) < static_cast<double>(total) / 2.0)
            r.benign_positions.push_back(i);
    }
    if (r.benign_positions.empty()) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return r.flags[a] < r.flags[b];
        });
        std::size_t keep = (n + 1) / 2;
        r.benign_positions.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
        std::sort(r.benign_positions.begin(), r.benign_positions.end());
    }
    return r;
}

namespace detail {

inline DefenseOutcome outcome_from_positions(const std::vector<ClientUpdate>& submissions,
                                             const std::vector<std::size_t>& positions,
                                             std::vector<std::size_t> flags = {}) {
    DefenseOutcome out;
    std::vector<LayeredParams> kept;
    kept.reserve(positions.size());
    for (std::size_t p : positions) {
        out.benign_ids.push_back(submissions[p].client_id);
        kept.push_back(submissions[p].params);
    }
    std::sort(out.benign_ids.begin(), out.benign_ids.end());
    out.aggregated = mean_params(kept);
    out.per_client_flags = std::move(flags);
    if (out.per_client_flags.empty()) out.per_client_flags.assign(submissions.size(), 0);
    return out;
}

inline std::vector<std::vector<double>> flatten_all(const std::vector<ClientUpdate>& submissions) {
    std::vector<std::vector<double>> flats;
    flats.reserve(submissions.size());
    for (const auto& s : submissions) flats.push_back(s.params.flatten());
    return flats;
}

}  // namespace detail

// FLD: layer scoring, anomaly detection, then an equal-weight mean over the
// surviving clients.
inline DefenseOutcome fld_aggregate(const std::vector<ClientUpdate>& submissions, double mu = 3.0,
                                    std::optional<std::size_t> k = std::nullopt) {
    auto scores = layer_scoring(submissions, k);
    auto anomaly = anomaly_detection(scores, mu);
    auto out = detail::outcome_from_positions(submissions, anomaly.benign_positions,
                                              std::move(anomaly.flags));
    out.score_matrix = std::move(scores);
    return out;
}

// Krum: each candidate is scored by the sum of squared distances to its
// n-f-2 nearest peers; the single lowest-scoring model is kept as-is.
inline DefenseOutcome krum(const std::vector<ClientUpdate>& submissions, std::size_t f) {
    const std::size_t n = submissions.size();
    if (n < 2 * f + 3) throw Error("krum: needs n >= 2f+3");
    auto flats = detail::flatten_all(submissions);

    std::vector<double> scores(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> sq;
        sq.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double s = 0.0;
            for (std::size_t t = 0; t < flats[i].size(); ++t) {
                double diff = flats[i][t] - flats[j][t];
                s += diff * diff;
            }
            sq.push_back(s);
        }
        std::sort(sq.begin(), sq.end());
        for (std::size_t t = 0; t < n - f - 2; ++t) scores[i] += sq[t];
    }
    std::size_t winner = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (scores[i] < scores[winner]) winner = i;

    DefenseOutcome out;
    out.benign_ids = {submissions[winner].client_id};
    out.aggregated = submissions[winner].params;
    out.per_client_flags.assign(n, 0);
    return out;
}

namespace detail {

// One Krum pass over an index subset. When the pool is so small that the
// neighbor count n'-f-2 reaches zero, every score is zero and the lowest
// index wins.
inline std::size_t krum_select(const std::vector<std::vector<double>>& flats,
                               const std::vector<std::size_t>& pool, std::size_t f) {
    const std::size_t m = pool.size();
    std::size_t neighbors = m > f + 2 ? m - f - 2 : 0;
    std::size_t best = pool[0];
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t i : pool) {
        std::vector<double> sq;
        sq.reserve(m - 1);
        for (std::size_t j : pool) {
            if (j == i) continue;
            double s = 0.0;
            for (std::size_t t = 0; t < flats[i].size(); ++t) {
                double diff = flats[i][t] - flats[j][t];
                s += diff * diff;
            }
            sq.push_back(s);
        }
        std::sort(sq.begin(), sq.end());
        double score = 0.0;
        for (std::size_t t = 0; t < neighbors; ++t) score += sq[t];
        if (score < best_score || (score == best_score && i < best)) {
            best_score = score;
            best = i;
        }
    }
    return best;
}

}  // namespace detail

// Bulyan: select theta = n-2f models by Krum without replacement, then per
// coordinate average the beta = theta-2f values closest to the median.
inline DefenseOutcome bulyan(const std::vector<ClientUpdate>& submissions, std::size_t f) {
    const std::size_t n = submissions.size();
    if (f < 1) throw Error("bulyan: f must be >= 1");
    if (n < 4 * f + 3) throw Error("bulyan: needs n >= 4f+3");
    auto flats = detail::flatten_all(submissions);

    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    std::size_t theta = n - 2 * f;
    std::vector<std::size_t> selected;
    for (std::size_t t = 0; t < theta; ++t) {
        std::size_t pick = detail::krum_select(flats, pool, f);
        selected.push_back(pick);
        pool.erase(std::find(pool.begin(), pool.end(), pick));
    }
    std::sort(selected.begin(), selected.end());

    std::size_t beta = theta - 2 * f;
    std::size_t dim = flats[0].size();
    std::vector<double> agg(dim, 0.0);
    std::vector<double> col(theta);
    std::vector<std::size_t> order(theta);
    for (std::size_t c = 0; c < dim; ++c) {
        for (std::size_t t = 0; t < theta; ++t) col[t] = flats[selected[t]][c];
        double med = median(col);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(col[a] - med) < std::abs(col[b] - med);
        });
        double s = 0.0;
        for (std::size_t t = 0; t < beta; ++t) s += col[order[t]];
        agg[c] = s / static_cast<double>(beta);
    }

    DefenseOutcome out;
    for (std::size_t p : selected) out.benign_ids.push_back(submissions[p].client_id);
    std::sort(out.benign_ids.begin(), out.benign_ids.end());
    out.aggregated = LayeredParams::from_flat(submissions[0].params, agg);
    out.per_client_flags.assign(n, 0);
    return out;
}

// RFA: geometric median of the flattened models.
inline DefenseOutcome rfa(const std::vector<ClientUpdate>& submissions, double tol = 1e-10,
                          std::size_t max_iter = 1000) {
    if (submissions.empty()) throw Error("rfa: empty input");
    auto flats = detail::flatten_all(submissions);
    auto gm = geometric_median(PointSet::from_rows(flats), tol, max_iter);

    DefenseOutcome out;
    for (const auto& s : submissions) out.benign_ids.push_back(s.client_id);
    std::sort(out.benign_ids.begin(), out.benign_ids.end());
    out.aggregated = LayeredParams::from_flat(submissions[0].params, gm);
    out.per_client_flags.assign(submissions.size(), 0);
    return out;
}

inline DefenseOutcome trimmed_mean_defense(const std::vector<ClientUpdate>& submissions,
                                           std::size_t k_trim) {
    if (submissions.empty()) throw Error("trimmed_mean: empty input");
    auto flats = detail::flatten_all(submissions);
    auto agg = trimmed_mean_coord(PointSet::from_rows(flats), k_trim);

    DefenseOutcome out;
    for (const auto& s : submissions) out.benign_ids.push_back(s.client_id);
    std::sort(out.benign_ids.begin(), out.benign_ids.end());
    out.aggregated = LayeredParams::from_flat(submissions[0].params, agg);
    out.per_client_flags.assign(submissions.size(), 0);
    return out;
}

// FoolsGold learning-rate weights from cumulative per-client update history.
// Follows the published formulation: pairwise cosine similarity, pardoning,
// max rescaling, then the logit squash at confidence 1.
inline std::vector<double> foolsgold(const std::vector<std::vector<double>>& history) {
    const std::size_t n = history.size();
    if (n < 2) throw Error("foolsgold: needs at least 2 clients");

    std::vector<double> norms(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (double v : history[i]) s += v * v;
        norms[i] = std::sqrt(s);
    }

    // cos similarity; a zero-norm history carries no evidence and stays at 0.
    std::vector<double> cs(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (norms[i] == 0.0 || norms[j] == 0.0) continue;
            double dot = 0.0;
            for (std::size_t t = 0; t < history[i].size(); ++t) dot += history[i][t] * history[j][t];
            double c = dot / (norms[i] * norms[j]);
            cs[i * n + j] = c;
            cs[j * n + i] = c;
        }
    }

    std::vector<double> maxcs(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            m = std::max(m, cs[i * n + j]);
        }
        maxcs[i] = m;
    }

    // Pardoning: a client that looks less sybil-like than its peer discounts
    // the shared similarity.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            if (maxcs[i] < maxcs[j] && maxcs[j] > 0.0) cs[i * n + j] *= maxcs[i] / maxcs[j];
        }

    std::vector<double> wv(n);
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            m = std::max(m, cs[i * n + j]);
        }
        wv[i] = 1.0 - m;
        wv[i] = std::clamp(wv[i], 0.0, 1.0);
    }

    double wmax = *std::max_element(wv.begin(), wv.end());
    if (wmax > 0.0)
        for (auto& w : wv) w /= wmax;

    for (auto& w : wv) {
        if (w == 1.0) w = 0.99;
        w = std::log(w / (1.0 - w)) + 0.5;  // logit, confidence 1.0
        if (std::isnan(w)) w = 0.0;
        w = std::clamp(w, 0.0, 1.0);
    }
    return wv;
}

// Weighted-mean aggregation under FoolsGold weights; falls back to the plain
// mean when every weight collapses to zero.
inline DefenseOutcome foolsgold_aggregate(const std::vector<ClientUpdate>& submissions,
                                          const std::vector<std::vector<double>>& history) {
    auto weights = foolsgold(history);
    const std::size_t n = submissions.size();
    double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);

    DefenseOutcome out;
    out.per_client_flags.assign(n, 0);
    std::size_t dim = submissions[0].params.flat_size();
    std::vector<double> agg(dim, 0.0);
    if (wsum <= 1e-12) {
        out.aggregated = mean_params([&] {
            std::vector<LayeredParams> all;
            for (const auto& s : submissions) all.push_back(s.params);
            return all;
        }());
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            if (weights[i] == 0.0) continue;
            auto flat = submissions[i].params.flatten();
            for (std::size_t t = 0; t < dim; ++t) agg[t] += weights[i] * flat[t];
        }
        for (auto& v : agg) v /= wsum;
        out.aggregated = LayeredParams::from_flat(submissions[0].params, agg);
    }
    for (std::size_t i = 0; i < n; ++i)
        if (weights[i] >= 0.5) out.benign_ids.push_back(submissions[i].client_id);
    std::sort(out.benign_ids.begin(), out.benign_ids.end());
    return out;
}

// Differential-privacy style aggregation: clip each delta from the previous
// global to L2 <= clip_norm, average, then add seeded Gaussian noise with
// per-coordinate sigma * clip_norm.
inline DefenseOutcome dp_defense(const std::vector<ClientUpdate>& submissions,
                                 const LayeredParams& prev_global, double clip_norm,
                                 double sigma, std::uint64_t seed) {
    if (submissions.empty()) throw Error("dp: empty input");
    if (clip_norm <= 0.0) throw ConfigError("dp: clip_norm must be > 0");
    if (sigma < 0.0) throw ConfigError("dp: sigma must be >= 0");

    auto base = prev_global.flatten();
    std::size_t dim = base.size();
    std::vector<double> agg(dim, 0.0);
    for (const auto& s : submissions) {
        auto flat = s.params.flatten();
        double norm = 0.0;
        for (std::size_t t = 0; t < dim; ++t) {
            flat[t] -= base[t];
            norm += flat[t] * flat[t];
        }
        norm = std::sqrt(norm);
        double scale = norm > clip_norm ? clip_norm / norm : 1.0;
        for (std::size_t t = 0; t < dim; ++t) agg[t] += scale * flat[t];
    }
    for (auto& v : agg) v /= static_cast<double>(submissions.size());

    if (sigma > 0.0) {
        std::mt19937_64 rng(mix_seed(seed, 0x6470));  // "dp"
        std::normal_distribution<double> noise(0.0, sigma * clip_norm);
        for (auto& v : agg) v += noise(rng);
    }
    for (std::size_t t = 0; t < dim; ++t) agg[t] += base[t];

    DefenseOutcome out;
    for (const auto& s : submissions) out.benign_ids.push_back(s.client_id);
    std::sort(out.benign_ids.begin(), out.benign_ids.end());
    out.aggregated = LayeredParams::from_flat(prev_global, agg);
    out.per_client_flags.assign(submissions.size(), 0);
    return out;
}

}  // namespace fedsieve
