#include <gtest/gtest.h>

#include <random>

#include "atx/metrics.hpp"

using namespace atx;

namespace {

// O(n^2) pairwise oracle: fraction of positive-negative pairs won, ties 1/2.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            ++pairs;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

}  // namespace

TEST(RocAuc, PerfectSeparation) {
    EXPECT_DOUBLE_EQ(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
}

TEST(RocAuc, AllTiesGiveHalf) {
    EXPECT_DOUBLE_EQ(roc_auc({0.3, 0.3, 0.3, 0.3}, {0, 1, 0, 1}), 0.5);
}

TEST(RocAuc, PairwiseCountOracle) {
    // 3 of 4 positive-negative pairs won
    std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    std::vector<int> y{0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(pairwise_auc(s, y), 0.75);
    EXPECT_DOUBLE_EQ(roc_auc(s, y), 0.75);
}

TEST(RocAuc, SingleClassError) {
    try {
        roc_auc({0.1, 0.2}, {1, 1});
        FAIL() << "expected single-class error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("AUC undefined"), std::string::npos);
    }
}

TEST(RocAuc, RankEqualsPairwiseOracleOnFuzz) {
    // 1000 fuzzed instances, n <= 50, duplicated score values force ties
    std::mt19937 rng(42);
    std::uniform_int_distribution<int> size_dist(2, 50);
    std::uniform_int_distribution<int> level_dist(1, 8);
    for (int k = 0; k < 1000; ++k) {
        int n = size_dist(rng);
        int levels = level_dist(rng);
        std::uniform_int_distribution<int> sc(0, levels);
        std::bernoulli_distribution lab(0.5);
        std::vector<double> s(n);
        std::vector<int> y(n);
        bool has0 = false, has1 = false;
        for (int i = 0; i < n; ++i) {
            s[i] = sc(rng) / static_cast<double>(levels);
            y[i] = lab(rng);
            (y[i] ? has1 : has0) = true;
        }
        if (!has0) y[0] = 0;
        if (!has1) y[n - 1] = 1;
        EXPECT_NEAR(roc_auc(s, y), pairwise_auc(s, y), 1e-12);
    }
}

TEST(RocAuc, ComplementAndMonotoneInvariance) {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0, 1);
    for (int k = 0; k < 50; ++k) {
        int n = 20;
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) {
            s[i] = u(rng);  // continuous: ties have measure zero
            y[i] = i % 2;
        }
        std::vector<double> neg(n), warped(n);
        for (int i = 0; i < n; ++i) {
            neg[i] = -s[i];
            warped[i] = std::exp(3 * s[i]) + 11;  // strictly increasing transform
        }
        EXPECT_NEAR(roc_auc(s, y) + roc_auc(neg, y), 1.0, 1e-12);
        EXPECT_NEAR(roc_auc(warped, y), roc_auc(s, y), 1e-12);
    }
}

TEST(MeanMultilabelAuc, PerfectSeparationBothClasses) {
    std::vector<std::vector<double>> s{{0.9, 0.1}, {0.8, 0.2}, {0.1, 0.9}, {0.2, 0.8}};
    std::vector<std::vector<int>> y{{1, 0}, {1, 0}, {0, 1}, {0, 1}};
    auto r = mean_multilabel_auc(s, y);
    EXPECT_DOUBLE_EQ(r.mean, 1.0);
    EXPECT_TRUE(r.excluded.empty());
}

TEST(MeanMultilabelAuc, SingleLabeledClassExcluded) {
    std::vector<std::vector<double>> s{{0.9, 0.4}, {0.8, 0.3}, {0.1, 0.6}};
    std::vector<std::vector<int>> y{{1, 1}, {1, 1}, {0, 1}};  // class 1 all-positive
    auto r = mean_multilabel_auc(s, y);
    EXPECT_EQ(r.excluded, std::vector<int>{1});
    EXPECT_DOUBLE_EQ(r.mean, r.per_class[0]);
    EXPECT_TRUE(std::isnan(r.per_class[1]));
}

TEST(MeanMultilabelAuc, AllExcludedError) {
    std::vector<std::vector<double>> s{{0.9}, {0.8}};
    std::vector<std::vector<int>> y{{1}, {1}};
    EXPECT_THROW(mean_multilabel_auc(s, y), std::invalid_argument);
}

TEST(MeanMultilabelAuc, RandomScoresNearHalf) {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    std::bernoulli_distribution lab(0.5);
    int n = 1000, l = 5;
    std::vector<std::vector<double>> s(n, std::vector<double>(l));
    std::vector<std::vector<int>> y(n, std::vector<int>(l));
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < l; ++c) {
            s[i][c] = u(rng);
            y[i][c] = lab(rng);
        }
    auto r = mean_multilabel_auc(s, y);
    EXPECT_NEAR(r.mean, 0.5, 0.05);
}

TEST(WeightedF1, PerfectPredictions) {
    EXPECT_DOUBLE_EQ(weighted_f1({0, 1, 2, 1}, {0, 1, 2, 1}, 3), 1.0);
}

TEST(WeightedF1, ConfusionMatrixHandOracle) {
    // all predictions class 0, truth uniform over 2 classes:
    // class0 F1 = 2/3 weight 1/2, class1 F1 = 0 -> 1/3
    std::vector<int> pred{0, 0, 0, 0};
    std::vector<int> truth{0, 1, 0, 1};
    EXPECT_NEAR(weighted_f1(pred, truth, 2), 1.0 / 3.0, 1e-12);
}

TEST(WeightedF1, EmptyTrueClassHasZeroWeight) {
    // K=5 but only classes 0/1 appear in truth
    std::vector<int> pred{0, 1, 0, 1};
    std::vector<int> truth{0, 1, 1, 0};
    double v5 = weighted_f1(pred, truth, 5);
    double v2 = weighted_f1(pred, truth, 2);
    EXPECT_DOUBLE_EQ(v5, v2);
}

TEST(WeightedF1, RelabelingPermutationInvariance) {
    std::mt19937 rng(13);
    std::uniform_int_distribution<int> cls(0, 3);
    std::vector<int> pred(40), truth(40);
    for (int i = 0; i < 40; ++i) {
        pred[i] = cls(rng);
        truth[i] = cls(rng);
    }
    double base = weighted_f1(pred, truth, 4);
    std::vector<int> perm{2, 0, 3, 1};
    std::vector<int> p2(40), t2(40);
    for (int i = 0; i < 40; ++i) {
        p2[i] = perm[pred[i]];
        t2[i] = perm[truth[i]];
    }
    EXPECT_NEAR(weighted_f1(p2, t2, 4), base, 1e-12);
}

TEST(WeightedF1, Errors) {
    EXPECT_THROW(weighted_f1({}, {}, 2), std::invalid_argument);
    EXPECT_THROW(weighted_f1({0, 5}, {0, 1}, 2), std::invalid_argument);
}

TEST(ConfidenceInterval, ZeroVariance) {
    auto [m, hw] = confidence_interval({0.7, 0.7, 0.7});
    EXPECT_NEAR(m, 0.7, 1e-12);
    EXPECT_NEAR(hw, 0.0, 1e-12);
}

TEST(ConfidenceInterval, FormulaHandCheck) {
    // [0.6, 0.8]: sd = 0.1414..., 1.96 * sd / sqrt(2) ~= 0.196
    auto [m, hw] = confidence_interval({0.6, 0.8});
    EXPECT_NEAR(m, 0.7, 1e-12);
    EXPECT_NEAR(hw, 1.96 * std::sqrt(0.02) / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(hw, 0.196, 5e-4);
}

TEST(ConfidenceInterval, TooFewRepetitionsError) {
    EXPECT_THROW(confidence_interval({0.7}), std::invalid_argument);
    auto a = Aggregate::of({0.5});
    EXPECT_FALSE(a.ci_half_width.has_value());
    auto b = Aggregate::of({0.5, 0.6, 0.7});  // three repetitions, the default protocol
    EXPECT_TRUE(b.ci_half_width.has_value());
    EXPECT_EQ(b.n, 3);
}
