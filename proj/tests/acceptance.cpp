// Acceptance suite: one PASS/FAIL line per criterion; exit status is the
// number of failed criteria.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "cogload/pipeline.hpp"
#include "grad_oracle.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
namespace pl = cogload::pipeline;
using namespace cogload;

namespace {

struct Result {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) { return cogload::detail::format_fixed(v, digits); }

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2e", v);
    return buf;
}

fs::path config_path(const std::string& name) { return fs::path(COGLOAD_CONFIG_DIR) / name; }

const fs::path kWork = fs::temp_directory_path() / "cogload_acceptance";

int run_cli(const std::string& args) {
    const std::string cmd = std::string(COGLOAD_CLI) + " -q " + args + " > /dev/null 2> " + (kWork / "cli_stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Predictions of a finished run on its own test split.
struct TestPredictions {
    std::vector<int> truth;
    nn::Prediction pred;
};

TestPredictions predict_test(const pl::Prepared& p, const pl::RunResult& r) {
    const auto transformed = pl::transform_all(p, r.transform);
    const auto test = pl::make_batch(transformed, p.windows, p.split.test);
    return {test.labels, nn::predict(test.data, r.params)};
}

struct SeparabilityRun {
    pl::RunConfig cfg;
    pl::Prepared prepared;
    pl::RunResult result;
};

SeparabilityRun run_config(pl::RunConfig cfg) {
    SeparabilityRun s;
    s.cfg = cfg;
    s.prepared = pl::prepare(pl::acquire(cfg), cfg);
    pl::StageTimer timer;
    s.result = pl::run_selector(s.prepared, cfg, cfg.selector, timer);
    return s;
}

// Shared between criteria.
std::vector<SeparabilityRun> g_separability;
std::vector<metrics::ConfusionMatrix> g_confusions;

Result gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string where;
    std::size_t checked = 0, one_sided = 0;
    for (int m = 0; m < 20; ++m) {
        auto [batch, params] = oracle::tiny_problem(2 + m % 3, 6 + m % 5, 2, 1000 + static_cast<std::uint64_t>(m));
        const auto g = oracle::check_all(batch, params, 1e-3, 1e-4);
        checked += g.checked;
        one_sided += g.one_sided;
        if (g.max_rel_error > worst) {
            worst = g.max_rel_error;
            where = "model " + std::to_string(m) + " " + g.worst;
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-4 && secs < 30.0,
            "20 models, " + std::to_string(checked) + " gradients (" + std::to_string(one_sided) +
                " one-sided at ReLU kinks), max rel error " + sci(worst) + " at " + where + ", " + fmt(secs, 1) + " s"};
}

Result separability() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = pl::load_config(config_path("separability.json"));
    std::string detail;
    bool ok = cfg.epochs <= 200 && cfg.synth.effect_size == 3.0 && cfg.synth.n_informative_fnirs == 10;
    for (auto mode : {fusion::SplitMode::random, fusion::SplitMode::by_block}) {
        cfg.split_mode = mode;
        g_separability.push_back(run_config(cfg));
        const auto& s = g_separability.back();
        const double acc = s.result.report.metrics.accuracy;
        const double need = mode == fusion::SplitMode::random ? 0.95 : 0.85;
        ok = ok && acc >= need && s.prepared.windows.windows.size() >= 600;
        g_confusions.push_back(s.result.report.confusion);
        detail += fusion::to_string(mode) + " " + fmt(acc) + " (need " + fmt(need, 2) + "), ";
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 120.0;
    return {ok, detail + std::to_string(g_separability.front().prepared.windows.windows.size()) + " windows, " +
                    std::to_string(cfg.epochs) + " epochs, " + fmt(secs, 1) + " s"};
}

Result null_control() {
    const auto cfg = pl::load_config(config_path("null_control.json"));
    const auto gate = run_config(cfg);
    const double acc = gate.result.report.metrics.accuracy;
    g_confusions.push_back(gate.result.report.confusion);
    std::string detail = "random split, stride " + std::to_string(cfg.window_stride) + ": " + fmt(acc) + " on " +
                         std::to_string(gate.result.report.n_test) + " test windows (band [0.23, 0.45])";

    auto overlapping = cfg;
    overlapping.window_stride = 8;
    const auto leak = run_config(overlapping);
    auto blocks = overlapping;
    blocks.split_mode = fusion::SplitMode::by_block;
    const auto block = run_config(blocks);
    g_confusions.push_back(leak.result.report.confusion);
    g_confusions.push_back(block.result.report.confusion);
    detail += "; info: overlapping random " + fmt(leak.result.report.metrics.accuracy) + ", by_block " +
              fmt(block.result.report.metrics.accuracy);
    return {acc >= 0.23 && acc <= 0.45, detail};
}

Result extra_trees_recovery() {
    const auto d = synth::generate_tabular(synth::TabularConfig{});
    featsel::ExtraTreesConfig et;
    et.n_trees = 100;
    et.seed = 2024;
    const auto res = featsel::fit_extra_trees({d.values, d.names}, d.labels, et);
    const auto top = featsel::select_top_k(res.ranking, 10);
    int found = 0;
    for (const auto& name : d.informative) found += std::find(top.begin(), top.end(), name) != top.end();
    double sum = 0.0;
    for (const auto& e : res.ranking.entries) sum += e.score;
    return {found == 5 && std::abs(sum - 1.0) <= 1e-9,
            std::to_string(found) + "/5 informative in top 10, importance sum - 1 = " + sci(sum - 1.0)};
}

Result oracle_equivalences() {
    std::mt19937_64 rng(77);
    std::vector<std::string> detail;
    bool ok = true;
    auto note = [&](const std::string& what, double err, double tol) {
        ok = ok && err <= tol;
        detail.push_back(what + " " + sci(err));
    };

    {
        featsel::FeatureMatrix x{oracle::correlated(500, 8, 5), {}};
        for (int j = 0; j < 8; ++j) x.names.push_back("f" + std::to_string(j));
        std::vector<int> y(500);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = static_cast<int>(rng() % 3);
            x.values(static_cast<Eigen::Index>(i), 0) += 0.3 * y[i];
        }
        const auto f = featsel::anova_f(x, y);
        double err = 0;
        for (int j = 0; j < 8; ++j) {
            std::vector<double> col(x.values.col(j).data(), x.values.col(j).data() + 500);
            err = std::max(err, std::abs(f[static_cast<std::size_t>(j)] - oracle::anova(col, y)));
        }
        note("anova", err, 1e-9);
    }
    {
        std::vector<int> truth(300);
        Eigen::MatrixXd scores(300, 3);
        std::uniform_int_distribution<int> coarse(0, 20);
        for (std::size_t i = 0; i < truth.size(); ++i) {
            truth[i] = static_cast<int>(rng() % 3);
            for (int c = 0; c < 3; ++c) scores(static_cast<Eigen::Index>(i), c) = coarse(rng) / 10.0 + (truth[i] == c);
        }
        const auto r = metrics::roc_auc(scores, truth, metrics::Averaging::macro);
        double err = 0, mean = 0;
        for (int c = 0; c < 3; ++c) {
            std::vector<double> col(scores.col(c).data(), scores.col(c).data() + 300);
            std::vector<bool> pos;
            for (int t : truth) pos.push_back(t == c);
            const double want = oracle::pair_auc(col, pos);
            err = std::max(err, std::abs(*r.per_class[c] - want));
            mean += want / 3.0;
        }
        err = std::max(err, std::abs(r.auc - mean));
        note("roc_auc", err, 1e-9);
    }
    {
        const auto x = oracle::correlated(300, 10, 9);
        std::vector<std::string> names;
        for (int j = 0; j < 10; ++j) names.push_back("c" + std::to_string(j));
        const auto m = fusion::correlation_matrix(x, names);
        double err = 0;
        for (Eigen::Index a = 0; a < 10; ++a)
            for (Eigen::Index b = 0; b < 10; ++b) err = std::max(err, std::abs(m.values(a, b) - oracle::pearson(x.col(a), x.col(b))));
        note("correlation", err, 1e-12);
    }
    {
        synth::SynthConfig c;
        c.schedule = {{0, 20.0}, {2, 20.0}};
        const auto s = synth::generate_session(c, 0);
        std::vector<double> clock;
        for (double t : s.fnirs.timestamps)
            if (t <= s.eye.timestamps.back()) clock.push_back(t);
        const auto got = fusion::downsample(s.eye, clock);
        const auto want = oracle::bucket_means(s.eye.timestamps, s.eye.values, clock);
        note("downsample", (got.values - want).cwiseAbs().maxCoeff(), 1e-12);
    }
    {
        featsel::FeatureMatrix x{oracle::correlated(400, 12, 12), {}};
        for (int j = 0; j < 12; ++j) x.names.push_back("p" + std::to_string(j));
        const auto m = featsel::pca_fit(x, 12);
        const auto ev = oracle::jacobi_eigenvalues(oracle::covariance(x.values));
        double err = 0;
        for (int i = 0; i < 12; ++i) err = std::max(err, std::abs(m.explained_variance(i) - ev[static_cast<std::size_t>(i)]));
        note("pca eigenvalues", err, 1e-8);
        const Eigen::MatrixXd gram = m.components * m.components.transpose();
        note("pca orthonormality", (gram - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff(), 1e-8);
    }
    std::string joined;
    for (const auto& d : detail) joined += (joined.empty() ? "" : ", ") + d;
    return {ok, joined};
}

Result metric_identities() {
    if (g_separability.empty()) return {false, "needs the separability runs"};
    bool ok = true;
    double worst_recall = 0, worst_auc = 0;
    for (const auto& cm : g_confusions) {
        const auto m = metrics::classification_metrics(cm, metrics::Averaging::weighted);
        worst_recall = std::max(worst_recall, std::abs(m.recall - m.accuracy));
        ok = ok && m.accuracy == static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    }
    for (const auto& s : g_separability) {
        const auto tp = predict_test(s.prepared, s.result);
        const double from_sigmoid = metrics::roc_auc(tp.pred.scores, tp.truth).auc;
        const double from_logits = metrics::roc_auc(tp.pred.logits, tp.truth).auc;
        worst_auc = std::max(worst_auc, std::abs(from_sigmoid - from_logits));
        ok = ok && from_sigmoid == s.result.report.auc;
    }
    ok = ok && worst_recall <= 1e-12 && worst_auc <= 1e-12;
    return {ok, std::to_string(g_confusions.size()) + " confusion matrices, max |weighted recall - accuracy| " +
                    sci(worst_recall) + ", max |AUC(sigmoid) - AUC(logits)| " + sci(worst_auc)};
}

Result determinism() {
    const auto a = kWork / "det_a", b = kWork / "det_b";
    fs::remove_all(a);
    fs::remove_all(b);
    const std::string cfg = " -c " + config_path("quick.json").string();
    const int ra = run_cli("pipeline" + cfg + " -o " + a.string());
    const int rb = run_cli("pipeline" + cfg + " -o " + b.string());
    if (ra != 0 || rb != 0) return {false, "pipeline exit codes " + std::to_string(ra) + ", " + std::to_string(rb)};
    bool ok = true;
    std::string detail;
    for (const char* f : {"report.json", "model.ckpt"}) {
        const bool same = cogload::detail::read_file(a / f) == cogload::detail::read_file(b / f);
        ok = ok && same;
        detail += std::string(f) + (same ? " identical" : " DIFFERS") + " (" +
                  cogload::detail::sha256_file(a / f).substr(0, 12) + "), ";
    }
    return {ok, detail + "two runs into different output directories"};
}

Result comparison_harness() {
    const auto dir = kWork / "compare";
    fs::remove_all(dir);
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = run_cli("compare-selectors -c " + config_path("compare.json").string() + " -o " + dir.string());
    if (rc != 0) return {false, "compare-selectors exited " + std::to_string(rc)};
    const auto rows = metrics::parse_report_csv(cogload::detail::read_file(dir / "report.csv"));
    const std::vector<std::string> order{"variance_threshold", "pca", "anova", "extra_trees"};
    bool ok = rows.size() == 4;
    for (std::size_t i = 0; ok && i < 4; ++i) ok = rows[i].selector == order[i];

    const auto text = cogload::detail::read_file(dir / "report.txt");
    std::istringstream lines(text);
    std::string line;
    std::getline(lines, line);
    ok = ok && std::regex_match(line, std::regex("Selector +Accuracy +F1-score +AUC +Precision +Recall"));
    const std::regex row("(Variance threshold|PCA|ANOVA|Extra trees) +(\\d\\.\\d{4} +){4}\\d\\.\\d{4}");
    int table_rows = 0;
    for (int i = 0; i < 4 && std::getline(lines, line); ++i) table_rows += std::regex_match(line, row);
    ok = ok && table_rows == 4;

    const auto j = nlohmann::json::parse(cogload::detail::read_file(dir / "report.json"));
    double et = 0, control = 0;
    for (const auto& r : j["rows"]) {
        if (r["selector"] == "extra_trees") et = r["accuracy"].get<double>();
        g_confusions.push_back({});
        for (int t = 0; t < 3; ++t)
            for (int p = 0; p < 3; ++p) g_confusions.back().counts[t][p] = r["confusion"][t][p].get<long long>();
    }
    if (!j.contains("control") || j["control"].empty()) return {false, "no control row"};
    control = j["control"][0]["accuracy"].get<double>();
    ok = ok && et - control >= 0.05;
    std::string all;
    for (const auto& r : rows) all += r.selector + " " + fmt(r.values[0]) + ", ";
    return {ok, all + "random-20 control " + fmt(control) + ", margin " + fmt(et - control) + " (need 0.05), " +
                    fmt(seconds_since(t0), 1) + " s"};
}

Result standardization() {
    if (g_separability.empty()) return {false, "needs the separability runs"};
    const auto& s = g_separability.front();
    const auto rows = pl::train_rows(s.prepared);
    const auto scaler = fusion::fit_scaler(rows.values, s.prepared.datasets.front().names);
    const auto z = scaler.apply(rows.values);
    double worst_mean = 0, worst_std = 0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const double mean = z.col(c).mean();
        const double sd = std::sqrt((z.col(c).array() - mean).square().mean());
        worst_mean = std::max(worst_mean, std::abs(mean));
        worst_std = std::max(worst_std, std::abs(sd - 1.0));
    }
    const double round_trip = (scaler.invert(z) - rows.values).cwiseAbs().maxCoeff();
    return {worst_mean <= 1e-9 && worst_std <= 1e-6 && round_trip <= 1e-12,
            std::to_string(z.rows()) + " training rows x " + std::to_string(z.cols()) + " features, max |mean| " +
                sci(worst_mean) + ", max |std - 1| " + sci(worst_std) + ", inversion error " + sci(round_trip)};
}

}  // namespace

int main() {
    pl::quiet() = true;
    fs::create_directories(kWork);
    const std::vector<std::pair<std::string, std::function<Result()>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"end-to-end separability", separability},
        {"null control", null_control},
        {"extra-trees recovery", extra_trees_recovery},
        {"oracle equivalences", oracle_equivalences},
        {"metric identities", metric_identities},
        {"determinism", determinism},
        {"comparison harness", comparison_harness},
        {"standardization contract", standardization},
    };
    // Metric identities also cover the comparison run's confusion matrices.
    const std::vector<std::size_t> order{0, 1, 2, 3, 4, 7, 5, 6, 8};
    std::vector<Result> results(criteria.size());
    for (auto i : order) {
        try {
            results[i] = criteria[i].second();
        } catch (const std::exception& e) {
            results[i] = {false, std::string("exception: ") + e.what()};
        }
    }
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        std::cout << (results[i].pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": "
                  << results[i].detail << std::endl;
        failed += results[i].pass ? 0 : 1;
    }
    return failed;
}
