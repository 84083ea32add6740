#include "fedsieve/outlier.hpp"

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fedsieve/oracles.hpp"

using namespace fedsieve;

namespace {

std::vector<std::vector<double>> random_points(std::mt19937_64& rng, std::size_t n,
                                               std::size_t d, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<std::vector<double>> pts(n, std::vector<double>(d));
    for (auto& p : pts)
        for (auto& v : p) v = dist(rng);
    return pts;
}

}  // namespace

TEST(Cof, FarPointScoresHighest) {
    // 7 points in a tight cluster plus one far point, k = n-1.
    std::mt19937_64 rng(7);
    auto pts = random_points(rng, 7, 2, 0.05);
    pts.push_back({50.0, 50.0});
    auto scores = cof(PointSet::from_rows(pts), pts.size() - 1);
    auto expected = oracle::cof_bruteforce(pts, pts.size() - 1);
    ASSERT_EQ(scores.size(), expected.size());
    for (std::size_t i = 0; i < scores.size(); ++i) EXPECT_NEAR(scores[i], expected[i], 1e-9);
    for (std::size_t i = 0; i + 1 < scores.size(); ++i) EXPECT_GT(scores.back(), scores[i]);
}

TEST(Cof, AllIdenticalPointsScoreOne) {
    std::vector<std::vector<double>> pts(6, {1.5, -2.0, 3.0});
    auto scores = cof(PointSet::from_rows(pts), 5);
    for (double s : scores) EXPECT_EQ(s, 1.0);
}

TEST(Cof, RejectsTooFewPoints) {
    std::vector<std::vector<double>> pts{{0.0, 0.0}, {1.0, 1.0}};
    EXPECT_THROW(cof(PointSet::from_rows(pts), 1), InsufficientPointsError);
}

TEST(Cof, RejectsBadK) {
    std::mt19937_64 rng(3);
    auto pts = random_points(rng, 5, 2);
    EXPECT_THROW(cof(PointSet::from_rows(pts), 1), Error);
    EXPECT_THROW(cof(PointSet::from_rows(pts), 5), Error);
}

TEST(Cof, MatchesBruteForceOracleOnRandomSets) {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<std::size_t> n_dist(3, 10);
    std::uniform_int_distribution<std::size_t> d_dist(1, 5);
    for (int trial = 0; trial < 60; ++trial) {
        std::size_t n = n_dist(rng);
        std::size_t d = d_dist(rng);
        auto pts = random_points(rng, n, d);
        std::uniform_int_distribution<std::size_t> k_dist(2, n - 1);
        std::size_t k = k_dist(rng);
        auto got = cof(PointSet::from_rows(pts), k);
        auto expected = oracle::cof_bruteforce(pts, k);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], expected[i], 1e-9);
    }
}

TEST(Cof, InvariantUnderTranslationAndRotation) {
    std::mt19937_64 rng(11);
    auto pts = random_points(rng, 8, 2);
    auto base = cof(PointSet::from_rows(pts), 7);

    double angle = 0.83;
    double c = std::cos(angle), s = std::sin(angle);
    auto moved = pts;
    for (auto& p : moved) {
        double x = p[0], y = p[1];
        p[0] = c * x - s * y + 13.5;
        p[1] = s * x + c * y - 4.25;
    }
    auto rotated = cof(PointSet::from_rows(moved), 7);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(base[i], rotated[i], 1e-9);
}

TEST(Median, SpecExamples) {
    EXPECT_EQ(median({1.0, 3.0, 2.0}), 2.0);
    EXPECT_EQ(median({1.0, 2.0, 3.0, 4.0}), 2.5);
    EXPECT_EQ(median({5.0}), 5.0);
    EXPECT_THROW(median({}), Error);
}

TEST(MadFlags, ZeroMadFlagsNothing) {
    // Median and MAD both collapse: the single huge score is NOT flagged
    // because the layer carries no spread information.
    ScoreVector scores{1, 1, 1, 1, 1, 1, 1, 1, 1, 100};
    auto flags = mad_flags(scores, 3.0);
    for (bool f : flags) EXPECT_FALSE(f);
}

TEST(MadFlags, HandComputedExample) {
    ScoreVector scores{1.0, 1.1, 0.9, 1.2, 0.8, 1.05, 0.95, 1.15, 0.85, 9.0};
    EXPECT_DOUBLE_EQ(median(scores), 1.025);
    std::vector<double> dev;
    for (double s : scores) dev.push_back(std::abs(s - 1.025));
    EXPECT_DOUBLE_EQ(median(dev), 0.125);

    auto flags = mad_flags(scores, 3.0);
    for (std::size_t i = 0; i < flags.size(); ++i) EXPECT_EQ(flags[i], i == 9) << "index " << i;
}

TEST(MadFlags, SingleScoreNeverFlagged) {
    auto flags = mad_flags({7.0}, 3.0);
    EXPECT_FALSE(flags[0]);
}

TEST(MadFlags, ShiftAndScaleInvariance) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::uniform_real_distribution<double> shift_dist(-50.0, 50.0);
    std::uniform_real_distribution<double> scale_dist(0.1, 25.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 4 + static_cast<std::size_t>(trial % 9);
        ScoreVector scores(n);
        for (auto& s : scores) s = dist(rng);
        auto base = mad_flags(scores, 3.0);

        double shift = shift_dist(rng);
        double scale = scale_dist(rng);
        ScoreVector shifted = scores, scaled = scores;
        for (auto& s : shifted) s += shift;
        for (auto& s : scaled) s *= scale;
        EXPECT_EQ(base, mad_flags(shifted, 3.0));
        EXPECT_EQ(base, mad_flags(scaled, 3.0));
    }
}

TEST(GeometricMedian, SinglePointIsItself) {
    std::vector<std::vector<double>> pts{{3.0, -1.0}};
    auto gm = geometric_median(PointSet::from_rows(pts));
    EXPECT_EQ(gm, pts[0]);
}

TEST(GeometricMedian, SquareCornersGiveCenter) {
    std::vector<std::vector<double>> pts{{0, 0}, {0, 2}, {2, 0}, {2, 2}};
    auto gm = geometric_median(PointSet::from_rows(pts), 1e-12);
    EXPECT_NEAR(gm[0], 1.0, 1e-9);
    EXPECT_NEAR(gm[1], 1.0, 1e-9);
}

TEST(GeometricMedian, BeatsGridSearchOracle) {
    std::mt19937_64 rng(17);
    auto pts = random_points(rng, 10, 3, 2.0);
    auto ps = PointSet::from_rows(pts);
    auto gm = geometric_median(ps);
    auto [grid_point, grid_obj] = oracle::geometric_median_grid(pts);
    EXPECT_LE(distance_sum(ps, gm), grid_obj + 1e-3);
}

TEST(GeometricMedian, NeverWorseThanMeanOrInputs) {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        auto pts = random_points(rng, 6, 4, 3.0);
        auto ps = PointSet::from_rows(pts);
        auto gm = geometric_median(ps);
        double obj = distance_sum(ps, gm);

        std::vector<double> mean(4, 0.0);
        for (const auto& p : pts)
            for (std::size_t j = 0; j < 4; ++j) mean[j] += p[j] / pts.size();
        EXPECT_LE(obj, distance_sum(ps, mean) + 1e-9);
        for (const auto& p : pts) EXPECT_LE(obj, distance_sum(ps, p) + 1e-9);
    }
}

TEST(TrimmedMean, SpecExamples) {
    std::vector<std::vector<double>> col{{1}, {2}, {3}, {4}, {5}};
    auto ps = PointSet::from_rows(col);
    EXPECT_DOUBLE_EQ(trimmed_mean_coord(ps, 1)[0], 3.0);
    EXPECT_DOUBLE_EQ(trimmed_mean_coord(ps, 0)[0], 3.0);  // plain mean of 1..5

    std::vector<std::vector<double>> three{{1}, {9}, {4}};
    EXPECT_DOUBLE_EQ(trimmed_mean_coord(PointSet::from_rows(three), 1)[0], 4.0);  // the median
    EXPECT_THROW(trimmed_mean_coord(PointSet::from_rows(three), 2), Error);
}
