#include "fedsieve/defense.hpp"

#include <random>

#include <gtest/gtest.h>

#include "fedsieve/oracles.hpp"

using namespace fedsieve;

namespace {

LayeredParams params_from(const std::vector<std::vector<double>>& layers) {
    LayeredParams p;
    for (std::size_t l = 0; l < layers.size(); ++l)
        p.layers.push_back({"t" + std::to_string(l), {layers[l].size()}, layers[l]});
    return p;
}

std::vector<ClientUpdate> updates_from_rows(const std::vector<std::vector<double>>& rows) {
    std::vector<ClientUpdate> out;
    for (std::size_t i = 0; i < rows.size(); ++i) out.push_back({i, params_from({rows[i]})});
    return out;
}

std::vector<ClientUpdate> jittered_cohort(std::mt19937_64& rng, std::size_t n,
                                          std::size_t layers, std::size_t dim,
                                          double jitter = 0.01) {
    std::normal_distribution<double> noise(0.0, jitter);
    std::uniform_real_distribution<double> base_dist(-1.0, 1.0);
    std::vector<std::vector<double>> base(layers, std::vector<double>(dim));
    for (auto& l : base)
        for (auto& v : l) v = base_dist(rng);
    std::vector<ClientUpdate> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto layers_copy = base;
        for (auto& l : layers_copy)
            for (auto& v : l) v += noise(rng);
        out.push_back({i, params_from(layers_copy)});
    }
    return out;
}

}  // namespace

TEST(LayerScoring, IdenticalSubmissionsScoreOne) {
    auto base = params_from({{1.0, 2.0}, {3.0}});
    std::vector<ClientUpdate> subs;
    for (std::size_t i = 0; i < 10; ++i) subs.push_back({i, base});
    auto m = layer_scoring(subs);
    EXPECT_EQ(m.n, 10u);
    EXPECT_EQ(m.total, 2u);
    for (double s : m.scores) EXPECT_EQ(s, 1.0);
}

TEST(LayerScoring, ShiftedLayerShowsUpInItsColumn) {
    std::mt19937_64 rng(3);
    auto subs = jittered_cohort(rng, 10, 4, 6);
    for (auto& v : subs[7].params.layers[2].values) v += 10.0;  // client 7, layer 2

    auto m = layer_scoring(subs);
    auto col = m.column(2);
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < col.size(); ++i)
        if (col[i] > col[argmax]) argmax = i;
    EXPECT_EQ(argmax, 7u);

    // Cross-check the whole matrix against the brute-force COF oracle.
    for (std::size_t j = 0; j < 4; ++j) {
        std::vector<std::vector<double>> pts;
        for (const auto& s : subs) pts.push_back(s.params.layers[j].values);
        auto expected = oracle::cof_bruteforce(pts, 9);
        for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(m.at(i, j), expected[i], 1e-9);
    }
}

TEST(LayerScoring, RejectsTooFewOrRaggedSubmissions) {
    auto base = params_from({{1.0, 2.0}});
    EXPECT_THROW(layer_scoring({{0, base}, {1, base}}), InsufficientPointsError);

    std::vector<ClientUpdate> ragged{{0, base}, {1, base}, {2, params_from({{1.0}})}};
    EXPECT_THROW(layer_scoring(ragged), Error);
}

TEST(LayerScoring, ErrorsCarryLayerIndex) {
    // All clients identical in layer 0, but layer scoring runs COF per layer;
    // force a failure by feeding n=3 with k override too large via tiny n.
    auto base = params_from({{1.0, 2.0}});
    std::vector<ClientUpdate> subs{{0, base}, {1, base}, {2, base}};
    try {
        layer_scoring(subs, 5);  // k > n-1
        FAIL() << "expected error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
    }
}

TEST(AnomalyDetection, AllOnesMatrixKeepsEverybody) {
    LayerScoreMatrix m;
    m.n = 10;
    m.total = 4;
    m.scores.assign(40, 1.0);
    auto r = anomaly_detection(m, 3.0);
    EXPECT_EQ(r.benign_positions.size(), 10u);
    for (auto f : r.flags) EXPECT_EQ(f, 0u);
}

TEST(AnomalyDetection, HalfFlaggedLayersExcludeAClient) {
    // 10 clients, 4 layers. Client 9 is an extreme outlier in layers 0 and 1
    // (2 of 4 flags -> excluded); client 8 only in layer 3 (retained).
    LayerScoreMatrix m;
    m.n = 10;
    m.total = 4;
    m.scores.assign(40, 0.0);
    std::vector<double> base{1.0, 1.1, 0.9, 1.2, 0.8, 1.05, 0.95, 1.15, 0.85, 1.02};
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < 10; ++i) m.scores[i * 4 + j] = base[i];
    m.scores[9 * 4 + 0] = 50.0;
    m.scores[9 * 4 + 1] = 50.0;
    m.scores[8 * 4 + 3] = 50.0;

    auto r = anomaly_detection(m, 3.0);
    EXPECT_EQ(r.flags[9], 2u);
    EXPECT_EQ(r.flags[8], 1u);
    std::vector<std::size_t> expected{0, 1, 2, 3, 4, 5, 6, 7, 8};
    EXPECT_EQ(r.benign_positions, expected);
}

TEST(AnomalyDetection, FlagCountsMatchOutlierCoreColumns) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> dist(1.0, 0.3);
    LayerScoreMatrix m;
    m.n = 8;
    m.total = 5;
    m.scores.resize(40);
    for (auto& s : m.scores) s = dist(rng);

    auto r = anomaly_detection(m, 3.0);
    std::vector<std::size_t> expected(m.n, 0);
    for (std::size_t j = 0; j < m.total; ++j) {
        auto flags = mad_flags(m.column(j), 3.0);
        for (std::size_t i = 0; i < m.n; ++i)
            if (flags[i]) expected[i]++;
    }
    EXPECT_EQ(r.flags, expected);
}

TEST(AnomalyDetection, EmptyBenignFallsBackToLowestFlags) {
    // One layer, every score wildly different -> with total=1 a single flag
    // excludes, so construct scores where everyone gets flagged... which MAD
    // cannot do (median neighborhood survives); instead force it with 2 layers
    // where both tails flag all but nobody stays under total/2.
    LayerScoreMatrix m;
    m.n = 4;
    m.total = 1;
    m.scores = {1.0, 1.001, 5.0, 5.001};  // median 3.0005, MAD ~2, nobody >= 3*MAD
    auto r = anomaly_detection(m, 0.5);    // tighten mu so all four get flagged
    EXPECT_EQ(r.benign_positions.size(), 2u);  // ceil(4/2) fallback
}

TEST(FldAggregate, IdenticalSubmissionsPassThrough) {
    auto base = params_from({{1.0, 2.0}, {3.0, -1.0}});
    std::vector<ClientUpdate> subs;
    for (std::size_t i = 0; i < 6; ++i) subs.push_back({i + 10, base});
    auto out = fld_aggregate(subs);
    EXPECT_EQ(out.benign_ids.size(), 6u);
    for (std::size_t l = 0; l < base.layers.size(); ++l)
        EXPECT_EQ(out.aggregated.layers[l].values, base.layers[l].values);
}

TEST(FldAggregate, ScaledCopiesAreExcluded) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 8; ++i) rows.push_back({1.0, 2.0, 3.0, 4.0});
    rows.push_back({100.0, 200.0, 300.0, 400.0});
    rows.push_back({100.0, 200.0, 300.0, 400.0});
    // Tiny jitter so honest points are not all identical.
    for (int i = 0; i < 8; ++i) rows[i][0] += 1e-6 * i;

    auto subs = updates_from_rows(rows);
    auto out = fld_aggregate(subs);
    EXPECT_EQ(out.benign_ids, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
    EXPECT_NEAR(out.aggregated.layers[0].values[1], 2.0, 1e-9);
}

TEST(FldAggregate, PlantedScalerOnConvexTestbedIsExcluded) {
    // Honest clients descend a quadratic from the same global; the attacker
    // submits the n-scaled replacement. Every layer of the scaled model is an
    // extreme COF outlier.
    std::mt19937_64 rng(14);
    std::normal_distribution<double> noise(0.0, 0.3);
    LayeredParams global = params_from({std::vector<double>(6, 0.0), std::vector<double>(4, 0.0)});

    std::vector<ClientUpdate> subs;
    for (std::size_t i = 0; i < 9; ++i) {
        auto p = global;
        for (auto& layer : p.layers)
            for (auto& v : layer.values) v += 0.2 + noise(rng) * 0.05;
        subs.push_back({i, p});
    }
    auto attacker = global;
    for (auto& layer : attacker.layers)
        for (auto& v : layer.values) v = 10.0 * (5.0 - v) + v;
    subs.push_back({9, attacker});

    auto out = fld_aggregate(subs);
    EXPECT_EQ(std::count(out.benign_ids.begin(), out.benign_ids.end(), 9), 0);
    EXPECT_GE(out.per_client_flags[9], 1u);
}

TEST(FldAggregate, TranslationShiftsAggregateAndKeepsBenignSet) {
    std::mt19937_64 rng(25);
    auto subs = jittered_cohort(rng, 9, 3, 5, 0.05);
    for (auto& v : subs[4].params.layers[1].values) v += 3.0;  // make one client odd

    auto base = fld_aggregate(subs);
    auto shifted = subs;
    const double c = 2.75;
    for (auto& s : shifted)
        for (auto& layer : s.params.layers)
            for (auto& v : layer.values) v += c;
    auto moved = fld_aggregate(shifted);

    EXPECT_EQ(base.benign_ids, moved.benign_ids);
    for (std::size_t l = 0; l < base.aggregated.layers.size(); ++l)
        for (std::size_t i = 0; i < base.aggregated.layers[l].values.size(); ++i)
            EXPECT_NEAR(moved.aggregated.layers[l].values[i],
                        base.aggregated.layers[l].values[i] + c, 1e-9);
}

TEST(FldAggregate, BenignSetInvariantUnderSubmissionOrder) {
    std::mt19937_64 rng(31);
    auto subs = jittered_cohort(rng, 8, 2, 6, 0.05);
    for (auto& v : subs[2].params.layers[0].values) v += 5.0;

    auto base = fld_aggregate(subs);
    auto shuffled = subs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto out = fld_aggregate(shuffled);
    EXPECT_EQ(base.benign_ids, out.benign_ids);
}

TEST(Krum, PicksFromTheTightCluster) {
    std::vector<std::vector<double>> rows(5, {1.0, 1.0, 1.0});
    for (int i = 0; i < 5; ++i) rows[i][0] += 1e-4 * i;
    rows.push_back({50.0, 50.0, 50.0});
    auto out = krum(updates_from_rows(rows), 1);
    ASSERT_EQ(out.benign_ids.size(), 1u);
    EXPECT_LT(out.benign_ids[0], 5u);
    EXPECT_LT(out.aggregated.layers[0].values[0], 2.0);  // selection, not synthesis
}

TEST(Krum, RequiresEnoughClients) {
    std::vector<std::vector<double>> rows(4, {1.0});
    EXPECT_THROW(krum(updates_from_rows(rows), 1), Error);
}

TEST(Krum, MatchesBruteForceOracle) {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<double>> rows(7, std::vector<double>(4));
        for (auto& r : rows)
            for (auto& v : r) v = dist(rng);
        auto out = krum(updates_from_rows(rows), 1);
        auto [scores, winner] = oracle::krum_bruteforce(rows, 1);
        EXPECT_EQ(out.benign_ids[0], winner);
    }
}

TEST(Bulyan, IdenticalInputsPassThrough) {
    std::vector<std::vector<double>> rows(7, {2.0, -1.0, 0.5});
    auto out = bulyan(updates_from_rows(rows), 1);
    EXPECT_EQ(out.aggregated.layers[0].values, (std::vector<double>{2.0, -1.0, 0.5}));
}

TEST(Bulyan, PlantedOutlierNeverSelected) {
    std::mt19937_64 rng(55);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<double>> rows(10, std::vector<double>(5));
        for (auto& r : rows)
            for (auto& v : r) v = dist(rng);
        rows.push_back(std::vector<double>(5, 500.0));
        auto out = bulyan(updates_from_rows(rows), 2);
        EXPECT_EQ(std::count(out.benign_ids.begin(), out.benign_ids.end(), 10), 0);
        EXPECT_EQ(out.benign_ids.size(), 7u);  // theta = 11 - 4
    }
}

TEST(Bulyan, RequiresEnoughClients) {
    std::vector<std::vector<double>> rows(6, {1.0});
    EXPECT_THROW(bulyan(updates_from_rows(rows), 1), Error);
}

TEST(Rfa, SquareCornersAggregateToCenter) {
    std::vector<std::vector<double>> rows{{0, 0}, {0, 2}, {2, 0}, {2, 2}};
    auto out = rfa(updates_from_rows(rows));
    EXPECT_NEAR(out.aggregated.layers[0].values[0], 1.0, 1e-8);
    EXPECT_NEAR(out.aggregated.layers[0].values[1], 1.0, 1e-8);
    EXPECT_EQ(out.benign_ids.size(), 4u);
}

TEST(TrimmedMeanDefense, DropsTails) {
    std::vector<std::vector<double>> rows{{1}, {2}, {3}, {4}, {100}};
    auto out = trimmed_mean_defense(updates_from_rows(rows), 1);
    EXPECT_DOUBLE_EQ(out.aggregated.layers[0].values[0], 3.0);
}

TEST(FoolsGold, TwoColludersGetZero) {
    std::vector<std::vector<double>> hist{{1.0, 0.0, 1.0}, {1.0, 0.0, 1.0}};
    auto w = foolsgold(hist);
    EXPECT_DOUBLE_EQ(w[0], 0.0);
    EXPECT_DOUBLE_EQ(w[1], 0.0);
}

TEST(FoolsGold, OrthogonalHistoriesKeepFullWeight) {
    std::vector<std::vector<double>> hist{
        {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
    auto w = foolsgold(hist);
    for (double v : w) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(FoolsGold, SybilPairAmongHonestClients) {
    // 8 mutually orthogonal honest histories plus 2 identical colluders.
    std::vector<std::vector<double>> hist;
    for (int i = 0; i < 8; ++i) {
        std::vector<double> h(10, 0.0);
        h[i] = 1.0;
        hist.push_back(h);
    }
    std::vector<double> sybil(10, 0.0);
    sybil[8] = 1.0;
    hist.push_back(sybil);
    hist.push_back(sybil);

    auto w = foolsgold(hist);
    for (int i = 0; i < 8; ++i) EXPECT_GT(w[i], 0.9);
    EXPECT_LT(w[8], 0.01);
    EXPECT_LT(w[9], 0.01);
}

TEST(FoolsGold, ZeroNormHistoryKeepsWeight) {
    std::vector<std::vector<double>> hist{{0, 0, 0}, {1, 0, 0}, {1, 0, 0}};
    auto w = foolsgold(hist);
    EXPECT_DOUBLE_EQ(w[0], 1.0);
    EXPECT_DOUBLE_EQ(w[1], 0.0);
    EXPECT_DOUBLE_EQ(w[2], 0.0);
}

TEST(DpDefense, NoNoiseUnderClipIsPlainMean) {
    std::vector<std::vector<double>> rows{{0.1, 0.2}, {0.3, -0.2}, {-0.1, 0.0}};
    auto subs = updates_from_rows(rows);
    LayeredParams zero = params_from({{0.0, 0.0}});
    auto out = dp_defense(subs, zero, 10.0, 0.0, 1);
    EXPECT_NEAR(out.aggregated.layers[0].values[0], 0.1, 1e-12);
    EXPECT_NEAR(out.aggregated.layers[0].values[1], 0.0, 1e-12);
}

TEST(DpDefense, ClipsLargeUpdates) {
    // Single update of norm 2*clip relative to a zero global -> halved.
    std::vector<std::vector<double>> rows{{6.0, 8.0}};  // norm 10
    auto subs = updates_from_rows(rows);
    LayeredParams zero = params_from({{0.0, 0.0}});
    auto out = dp_defense(subs, zero, 5.0, 0.0, 1);
    EXPECT_NEAR(out.aggregated.layers[0].values[0], 3.0, 1e-12);
    EXPECT_NEAR(out.aggregated.layers[0].values[1], 4.0, 1e-12);
}

TEST(DpDefense, SeededNoiseIsDeterministic) {
    std::vector<std::vector<double>> rows{{0.1, 0.2}, {0.3, -0.2}};
    auto subs = updates_from_rows(rows);
    LayeredParams zero = params_from({{0.0, 0.0}});
    auto a = dp_defense(subs, zero, 1.0, 0.5, 42);
    auto b = dp_defense(subs, zero, 1.0, 0.5, 42);
    auto c = dp_defense(subs, zero, 1.0, 0.5, 43);
    EXPECT_EQ(a.aggregated.layers[0].values, b.aggregated.layers[0].values);
    EXPECT_NE(a.aggregated.layers[0].values, c.aggregated.layers[0].values);
}
