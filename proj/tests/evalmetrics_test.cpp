#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cogload/evalmetrics.hpp"
#include "oracles.hpp"

using namespace cogload;
using namespace cogload::metrics;

namespace {

struct Labels {
    std::vector<int> truth;
    std::vector<int> pred;
};

Labels random_labels(int n, unsigned seed, double hit_rate) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> cls(0, 2);
    std::bernoulli_distribution hit(hit_rate);
    Labels l;
    for (int i = 0; i < n; ++i) {
        l.truth.push_back(cls(rng));
        l.pred.push_back(hit(rng) ? l.truth.back() : cls(rng));
    }
    return l;
}

Eigen::MatrixXd random_logits(const std::vector<int>& truth, unsigned seed, double spread) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, spread);
    Eigen::MatrixXd s(static_cast<Eigen::Index>(truth.size()), 3);
    for (Eigen::Index i = 0; i < s.rows(); ++i)
        for (int c = 0; c < 3; ++c) s(i, c) = g(rng) + (truth[static_cast<std::size_t>(i)] == c ? 1.5 : 0.0);
    return s;
}

MetricsReport named_report(const std::string& selector, double hit, unsigned seed) {
    const auto l = random_labels(90, seed, hit);
    auto r = evaluate(selector, l.truth, l.pred, random_logits(l.truth, seed, 1.0), Averaging::weighted);
    r.fingerprint = {selector, 20, 16, 8, 42, "random", "abc"};
    r.n_train = 360;
    r.n_test = 90;
    return r;
}

}  // namespace

TEST(Confusion, CountsRowsAsTruth) {
    const std::vector<int> t{0, 0, 1, 2, 2, 2};
    const std::vector<int> p{0, 1, 1, 2, 0, 2};
    const auto cm = confusion(t, p);
    EXPECT_EQ(cm.counts[0][1], 1);
    EXPECT_EQ(cm.counts[2][0], 1);
    EXPECT_EQ(cm.total(), 6);
    EXPECT_EQ(cm.trace(), 4);
    EXPECT_EQ(cm.support(2), 3);
    EXPECT_EQ(cm.predicted(0), 2);
    EXPECT_THROW(confusion(t, std::vector<int>{0}), DimensionError);
    EXPECT_THROW(confusion(std::vector<int>{3}, std::vector<int>{0}), ValidationError);
}

TEST(Metrics, HandComputedExample) {
    const std::vector<int> t{0, 0, 1, 2, 2, 2};
    const std::vector<int> p{0, 1, 1, 2, 0, 2};
    const auto m = classification_metrics(confusion(t, p), Averaging::macro);
    EXPECT_DOUBLE_EQ(m.accuracy, 4.0 / 6.0);
    // precision: 1/2, 1/2, 1; recall: 1/2, 1, 2/3
    EXPECT_NEAR(m.precision, (0.5 + 0.5 + 1.0) / 3.0, 1e-15);
    EXPECT_NEAR(m.recall, (0.5 + 1.0 + 2.0 / 3.0) / 3.0, 1e-15);
    const double f2 = 2 * 1.0 * (2.0 / 3.0) / (1.0 + 2.0 / 3.0);
    EXPECT_NEAR(m.f1, (0.5 + 2 * 0.5 / 1.5 + f2) / 3.0, 1e-15);
}

TEST(Metrics, WeightedRecallEqualsAccuracy) {
    for (unsigned seed = 0; seed < 50; ++seed) {
        const auto l = random_labels(37 + static_cast<int>(seed), seed, 0.6);
        const auto cm = confusion(l.truth, l.pred);
        const auto m = classification_metrics(cm, Averaging::weighted);
        EXPECT_NEAR(m.recall, m.accuracy, 1e-12);
        EXPECT_EQ(m.accuracy, static_cast<double>(cm.trace()) / static_cast<double>(cm.total()));
    }
}

TEST(Metrics, NothingPredictedGivesZeroPrecision) {
    const std::vector<int> t{0, 1, 2, 2};
    const std::vector<int> p{0, 0, 2, 2};
    const auto m = classification_metrics(confusion(t, p), Averaging::macro);
    EXPECT_EQ(m.per_class[1].precision, 0.0);
    EXPECT_EQ(m.per_class[1].f1, 0.0);
}

TEST(Metrics, MacroSkipsAbsentClasses) {
    const std::vector<int> t{0, 0, 2, 2};
    const std::vector<int> p{0, 0, 2, 0};
    const auto m = classification_metrics(confusion(t, p), Averaging::macro);
    EXPECT_NEAR(m.recall, (1.0 + 0.5) / 2.0, 1e-15);
    EXPECT_NEAR(m.precision, (2.0 / 3.0 + 1.0) / 2.0, 1e-15);
}

TEST(Auc, MatchesPairCounting) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> coarse(0, 9);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> s;
        std::vector<bool> pos;
        for (int i = 0; i < 60; ++i) {
            s.push_back(coarse(rng) / 3.0);
            pos.push_back(coarse(rng) < 4);
        }
        EXPECT_LE(std::abs(binary_auc(s, pos) - oracle::pair_auc(s, pos)), 1e-9);
    }
}

TEST(Auc, MulticlassAveragesPerClass) {
    const auto l = random_labels(120, 5, 0.5);
    const auto s = random_logits(l.truth, 6, 1.0);
    for (auto avg : {Averaging::macro, Averaging::weighted}) {
        const auto r = roc_auc(s, l.truth, avg);
        double total = 0, weights = 0;
        for (int c = 0; c < 3; ++c) {
            std::vector<double> col(s.col(c).data(), s.col(c).data() + s.rows());
            std::vector<bool> pos;
            double n = 0;
            for (int y : l.truth) {
                pos.push_back(y == c);
                n += y == c;
            }
            const double want = oracle::pair_auc(col, pos);
            EXPECT_LE(std::abs(*r.per_class[c] - want), 1e-9);
            const double w = avg == Averaging::weighted ? n : 1.0;
            total += w * want;
            weights += w;
        }
        EXPECT_LE(std::abs(r.auc - total / weights), 1e-9);
    }
}

TEST(Auc, InvariantUnderSigmoid) {
    const auto l = random_labels(200, 9, 0.5);
    const auto logits = random_logits(l.truth, 10, 3.0);
    const Eigen::MatrixXd sig = logits.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    EXPECT_LE(std::abs(roc_auc(logits, l.truth).auc - roc_auc(sig, l.truth).auc), 1e-12);
}

TEST(Auc, DegenerateClassExcludedWithWarning) {
    const std::vector<int> t{0, 0, 1, 1};
    Eigen::MatrixXd s(4, 3);
    s << 0.9, 0.1, 0.0, 0.8, 0.2, 0.0, 0.3, 0.7, 0.0, 0.1, 0.9, 0.0;
    const auto r = roc_auc(s, t);
    EXPECT_FALSE(r.per_class[2].has_value());
    EXPECT_FALSE(r.warnings.empty());
    EXPECT_DOUBLE_EQ(r.auc, 1.0);
    s(0, 0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(roc_auc(s, t), NumericError);
}

TEST(Report, TableOrderAndColumns) {
    std::vector<MetricsReport> reports{named_report("extra_trees", 0.9, 1), named_report("anova", 0.8, 2),
                                       named_report("variance_threshold", 0.5, 3), named_report("pca", 0.7, 4)};
    const auto control = named_report("random", 0.4, 5);
    const auto out = render_report(reports, {control});
    const auto rows = parse_report_csv(out.csv);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0].selector, "variance_threshold");
    EXPECT_EQ(rows[1].selector, "pca");
    EXPECT_EQ(rows[2].selector, "anova");
    EXPECT_EQ(rows[3].selector, "extra_trees");
    EXPECT_EQ(out.csv.substr(0, out.csv.find('\n')),
              "selector,Accuracy,F1-score,AUC,Precision,Recall,averaging,k,window_length,window_stride,seed,"
              "split_mode,config_sha256");
    EXPECT_EQ(rows[3].values[0], reports[0].metrics.accuracy);
    EXPECT_EQ(rows[3].values[2], reports[0].auc);
    EXPECT_EQ(out.csv.find("\nrandom,"), std::string::npos);
    EXPECT_EQ(out.text.substr(0, out.text.find('\n')),
              "Selector            Accuracy  F1-score  AUC     Precision  Recall");
    EXPECT_LT(out.text.find("Variance threshold"), out.text.find("PCA"));
    EXPECT_LT(out.text.find("ANOVA"), out.text.find("Extra trees"));
    const auto j = nlohmann::json::parse(out.json);
    EXPECT_EQ(j["rows"].size(), 4u);
    EXPECT_EQ(j["control"][0]["selector"], "random");
}

TEST(Report, TextUsesFourDecimals) {
    auto r = named_report("anova", 0.8, 2);
    r.metrics.accuracy = 0.123456;
    const auto out = render_report({r});
    EXPECT_NE(out.text.find("0.1235"), std::string::npos);
    EXPECT_EQ(out.text.find("0.12346"), std::string::npos);
}

TEST(Report, ConfusionExports) {
    const std::vector<int> t{0, 1, 2, 2};
    const auto cm = confusion(t, t);
    EXPECT_EQ(confusion_to_csv(cm), "true\\predicted,0,1,2\n0,1,0,0\n1,0,1,0\n2,0,0,2\n");
    EXPECT_NE(confusion_to_svg(cm, "ANOVA").find("<svg"), std::string::npos);
    EXPECT_THROW(parse_report_csv("name,Accuracy\n"), ParseError);
}
