#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "cgt/errors.hpp"
#include "cgt/metrics.hpp"

using namespace cgt;

namespace {

// Per-class TP / FP / FN counted straight from the label lists.
std::vector<double> direct_f(const std::vector<int>& preds, const std::vector<int>& labels, int classes) {
    std::vector<double> f(classes, 0.0);
    for (int c = 0; c < classes; ++c) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (preds[i] == c && labels[i] == c) tp += 1;
            if (preds[i] == c && labels[i] != c) fp += 1;
            if (preds[i] != c && labels[i] == c) fn += 1;
        }
        const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        f[c] = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    return f;
}

} // namespace

TEST(FScores, AllCorrect) {
    const std::vector<int> y{0, 1, 2, 2, 1};
    const FScores s = fscores(y, y, 3);
    for (double f : s.per_class) EXPECT_EQ(f, 1.0);
    EXPECT_EQ(s.f_avg, 1.0);
}

TEST(FScores, AbsentClassScoresZero) {
    const std::vector<int> y{0, 1, 1, 0};
    const FScores s = fscores(y, y, 3);
    EXPECT_EQ(s.per_class[2], 0.0);
    EXPECT_NEAR(s.f_avg, 2.0 / 3.0, 1e-15);
}

TEST(FScores, HandConfusionExample) {
    const std::vector<int> truth{0, 0, 1, 1}, pred{0, 1, 1, 1};
    const ConfusionMatrix cm = confusion_matrix(pred, truth, 2);
    EXPECT_EQ(cm(0, 0), 1u);
    EXPECT_EQ(cm(0, 1), 1u);
    EXPECT_EQ(cm(1, 1), 2u);
    EXPECT_EQ(cm.total(), 4u);
    const FScores s = fscores(cm);
    EXPECT_NEAR(s.per_class[0], 2.0 / 3.0, 1e-9);
    EXPECT_NEAR(s.per_class[1], 0.8, 1e-9);
    EXPECT_NEAR(s.f_avg, 0.7333333333, 1e-9);
}

TEST(FScores, OutOfRangeIdIsContractError) {
    const std::vector<int> a{0, 3}, b{0, 1};
    EXPECT_THROW(fscores(a, b, 3), ContractError);
    EXPECT_THROW(fscores(b, a, 3), ContractError);
    const std::vector<int> shorter{0};
    EXPECT_THROW(fscores(shorter, b, 3), ContractError);
}

TEST(FScores, MatchDirectCountsAndIgnoreOrder) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const int classes = 2 + static_cast<int>(rng() % 4);
        const std::size_t n = 1 + rng() % 60;
        std::vector<int> preds(n), labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(rng() % classes);
            preds[i] = rng() % 3 == 0 ? static_cast<int>(rng() % classes) : labels[i];
        }
        const FScores s = fscores(preds, labels, classes);
        const auto want = direct_f(preds, labels, classes);
        double mean = 0.0;
        for (int c = 0; c < classes; ++c) {
            EXPECT_NEAR(s.per_class[c], want[c], 1e-12);
            mean += want[c] / classes;
        }
        EXPECT_NEAR(s.f_avg, mean, 1e-12);
        EXPECT_EQ(confusion_matrix(preds, labels, classes).total(), n);

        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> p2(n), l2(n);
        for (std::size_t i = 0; i < n; ++i) {
            p2[i] = preds[order[i]];
            l2[i] = labels[order[i]];
        }
        const FScores t = fscores(p2, l2, classes);
        EXPECT_EQ(t.per_class, s.per_class);
        EXPECT_EQ(t.f_avg, s.f_avg);
    }
}

TEST(Report, JsonCarriesScoresAndConfusion) {
    MetricsReport r;
    r.split = "test";
    r.samples = 1;
    const std::vector<int> truth{0, 0, 1, 1}, pred{0, 1, 1, 1};
    r.confusion = confusion_matrix(pred, truth, 2);
    r.scores = fscores(r.confusion);
    const std::string j = report_to_json(r);
    EXPECT_NE(j.find("\"f_avg\""), std::string::npos);
    EXPECT_NE(j.find("\"confusion\""), std::string::npos);
    EXPECT_EQ(j.back(), '\n');
    EXPECT_EQ(report_to_json(r), j);
    EXPECT_NE(report_summary(r).find("F_avg"), std::string::npos);
}
