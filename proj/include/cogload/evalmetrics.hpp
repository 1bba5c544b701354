#pragma once

// Confusion matrices, precision/recall/F1, one-vs-rest ROC AUC and the
// selector comparison report (text table, CSV, JSON, confusion heatmaps).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cogload/detail/csv.hpp"
#include "cogload/detail/text.hpp"
#include "cogload/errors.hpp"

namespace cogload::metrics {

inline constexpr int kNumClasses = 3;

/// counts[t][p]: true class t predicted as p.
struct ConfusionMatrix {
    std::array<std::array<long long, kNumClasses>, kNumClasses> counts{};

    long long total() const {
        long long s = 0;
        for (const auto& r : counts)
            for (auto v : r) s += v;
        return s;
    }
    long long trace() const { return counts[0][0] + counts[1][1] + counts[2][2]; }
    long long support(int c) const { return counts[c][0] + counts[c][1] + counts[c][2]; }
    long long predicted(int c) const { return counts[0][c] + counts[1][c] + counts[2][c]; }
};

inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size())
        throw DimensionError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                              std::to_string(predicted.size()) + " predictions");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i], p = predicted[i];
        if (t < 0 || t >= kNumClasses || p < 0 || p >= kNumClasses)
            throw ValidationError("confusion: label outside {0,1,2} at position " + std::to_string(i));
        ++cm.counts[t][p];
    }
    return cm;
}

enum class Averaging { macro, weighted };

inline std::string to_string(Averaging a) { return a == Averaging::macro ? "macro" : "weighted"; }

inline Averaging parse_averaging(std::string_view s) {
    if (s == "macro") return Averaging::macro;
    if (s == "weighted") return Averaging::weighted;
    throw ValidationError("averaging must be 'macro' or 'weighted', got '" + std::string(s) + "'");
}

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long long support = 0;
    long long predicted = 0;
};

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::array<ClassMetrics, kNumClasses> per_class{};
    Averaging averaging = Averaging::weighted;
};

/// A class with no predicted positives has precision 0. Macro averages run
/// over the classes that occur in the truth or the predictions; weighted
/// averages weight by support.
inline Metrics classification_metrics(const ConfusionMatrix& cm, Averaging averaging = Averaging::weighted) {
    const long long total = cm.total();
    if (total <= 0) throw ValidationError("classification_metrics: empty confusion matrix");
    Metrics m;
    m.averaging = averaging;
    m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
    double weight_sum = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        auto& pc = m.per_class[c];
        pc.support = cm.support(c);
        pc.predicted = cm.predicted(c);
        const double tp = static_cast<double>(cm.counts[c][c]);
        pc.precision = pc.predicted > 0 ? tp / static_cast<double>(pc.predicted) : 0.0;
        pc.recall = pc.support > 0 ? tp / static_cast<double>(pc.support) : 0.0;
        pc.f1 = pc.precision + pc.recall > 0.0 ? 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall) : 0.0;
        double w = 0.0;
        if (averaging == Averaging::weighted) w = static_cast<double>(pc.support);
        else if (pc.support > 0 || pc.predicted > 0) w = 1.0;
        m.precision += w * pc.precision;
        m.recall += w * pc.recall;
        m.f1 += w * pc.f1;
        weight_sum += w;
    }
    m.precision /= weight_sum;
    m.recall /= weight_sum;
    m.f1 /= weight_sum;
    return m;
}

// ---------------------------------------------------------------------------
// AUC

struct AucResult {
    double auc = std::numeric_limits<double>::quiet_NaN();
    std::array<std::optional<double>, kNumClasses> per_class{};
    std::vector<std::string> warnings;
};

/// Mann-Whitney statistic from average ranks; ties count 1/2.
inline double binary_auc(std::span<const double> scores, const std::vector<bool>& positive) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    double npos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (positive[order[k]]) {
                rank_sum += avg;
                npos += 1.0;
            }
        i = j;
    }
    const double nneg = static_cast<double>(n) - npos;
    return (rank_sum - npos * (npos + 1.0) / 2.0) / (npos * nneg);
}

/// One-vs-rest AUC per class from an (n, 3) score matrix. A class without
/// positives or without negatives is excluded with a warning.
inline AucResult roc_auc(const Eigen::MatrixXd& scores, std::span<const int> truth,
                         Averaging averaging = Averaging::weighted) {
    if (scores.rows() != static_cast<Eigen::Index>(truth.size()) || scores.cols() != kNumClasses)
        throw DimensionError("roc_auc: scores must be (n, 3) with n = number of labels");
    if (!scores.allFinite()) throw NumericError("roc_auc: non-finite score");
    AucResult r;
    double total = 0.0, weight_sum = 0.0;
    std::vector<double> column(truth.size());
    std::vector<bool> positive(truth.size());
    for (int c = 0; c < kNumClasses; ++c) {
        std::size_t npos = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth[i] < 0 || truth[i] >= kNumClasses) throw ValidationError("roc_auc: label outside {0,1,2}");
            column[i] = scores(static_cast<Eigen::Index>(i), c);
            positive[i] = truth[i] == c;
            npos += positive[i] ? 1 : 0;
        }
        if (npos == 0 || npos == truth.size()) {
            r.warnings.push_back("class " + std::to_string(c) + " has no " + (npos == 0 ? "positives" : "negatives") +
                                 "; excluded from AUC");
            continue;
        }
        const double auc = binary_auc(column, positive);
        r.per_class[c] = auc;
        const double w = averaging == Averaging::weighted ? static_cast<double>(npos) : 1.0;
        total += w * auc;
        weight_sum += w;
    }
    if (weight_sum > 0.0) r.auc = total / weight_sum;
    else r.warnings.push_back("no class has both positives and negatives; AUC undefined");
    return r;
}

// ---------------------------------------------------------------------------
// Reports

/// Settings that identify how a report row was produced.
struct Fingerprint {
    std::string selector;
    int k = 0;
    int window_length = 0;
    int window_stride = 0;
    std::uint64_t seed = 0;
    std::string split_mode;
    std::string config_sha256;
};

struct MetricsReport {
    std::string selector;
    Metrics metrics;
    double auc = std::numeric_limits<double>::quiet_NaN();
    std::array<std::optional<double>, kNumClasses> per_class_auc{};
    ConfusionMatrix confusion;
    Fingerprint fingerprint;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::vector<std::string> selected_features;
    std::vector<std::string> warnings;
};

inline MetricsReport evaluate(std::string selector, std::span<const int> truth, std::span<const int> predicted,
                              const Eigen::MatrixXd& scores, Averaging averaging) {
    MetricsReport r;
    r.selector = std::move(selector);
    r.confusion = confusion(truth, predicted);
    r.metrics = classification_metrics(r.confusion, averaging);
    auto auc = roc_auc(scores, truth, averaging);
    r.auc = auc.auc;
    r.per_class_auc = auc.per_class;
    r.warnings = std::move(auc.warnings);
    return r;
}

/// Table 1 order: variance threshold, PCA, ANOVA, extra trees; anything else after.
inline int table_order(const std::string& selector) {
    static const std::array<const char*, 4> order{"variance_threshold", "pca", "anova", "extra_trees"};
    for (std::size_t i = 0; i < order.size(); ++i)
        if (selector == order[i]) return static_cast<int>(i);
    return static_cast<int>(order.size());
}

inline std::string display_name(const std::string& selector) {
    if (selector == "variance_threshold") return "Variance threshold";
    if (selector == "pca") return "PCA";
    if (selector == "anova") return "ANOVA";
    if (selector == "extra_trees") return "Extra trees";
    if (selector == "random") return "Random control";
    if (selector == "none") return "All features";
    return selector;
}

inline std::vector<MetricsReport> in_table_order(std::vector<MetricsReport> reports) {
    std::stable_sort(reports.begin(), reports.end(), [](const MetricsReport& a, const MetricsReport& b) {
        return table_order(a.selector) < table_order(b.selector);
    });
    return reports;
}

inline const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols{"Accuracy", "F1-score", "AUC", "Precision", "Recall"};
    return cols;
}

inline std::array<double, 5> row_values(const MetricsReport& r) {
    return {r.metrics.accuracy, r.metrics.f1, r.auc, r.metrics.precision, r.metrics.recall};
}

namespace detail {

inline std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

inline std::string fixed4(double v) { return std::isnan(v) ? std::string("nan") : cogload::detail::format_fixed(v, 4); }

inline std::string table(const std::vector<MetricsReport>& rows) {
    std::size_t name_w = std::string("Selector").size();
    for (const auto& r : rows) name_w = std::max(name_w, display_name(r.selector).size());
    std::string out = pad("Selector", name_w + 2);
    for (const auto& c : report_columns()) out += pad(c, std::max<std::size_t>(c.size(), 6) + 2);
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += "\n";
    for (const auto& r : rows) {
        std::string line = pad(display_name(r.selector), name_w + 2);
        const auto vals = row_values(r);
        for (std::size_t i = 0; i < vals.size(); ++i)
            line += pad(fixed4(vals[i]), std::max<std::size_t>(report_columns()[i].size(), 6) + 2);
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    return out;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    auto num = [](double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); };
    nlohmann::json per_class = nlohmann::json::array();
    for (int c = 0; c < kNumClasses; ++c) {
        const auto& pc = r.metrics.per_class[c];
        per_class.push_back({{"class", c},
                             {"precision", pc.precision},
                             {"recall", pc.recall},
                             {"f1", pc.f1},
                             {"support", pc.support},
                             {"auc", r.per_class_auc[c] ? nlohmann::json(*r.per_class_auc[c]) : nlohmann::json()}});
    }
    nlohmann::json cm = nlohmann::json::array();
    for (const auto& row : r.confusion.counts) cm.push_back(row);
    const auto& f = r.fingerprint;
    return {{"selector", r.selector},
            {"display_name", display_name(r.selector)},
            {"accuracy", r.metrics.accuracy},
            {"f1", r.metrics.f1},
            {"auc", num(r.auc)},
            {"precision", r.metrics.precision},
            {"recall", r.metrics.recall},
            {"averaging", to_string(r.metrics.averaging)},
            {"per_class", per_class},
            {"confusion", cm},
            {"n_train", r.n_train},
            {"n_test", r.n_test},
            {"selected_features", r.selected_features},
            {"warnings", r.warnings},
            {"fingerprint",
             {{"selector", f.selector},
              {"k", f.k},
              {"window_length", f.window_length},
              {"window_stride", f.window_stride},
              {"seed", f.seed},
              {"split_mode", f.split_mode},
              {"config_sha256", f.config_sha256}}}};
}

}  // namespace detail

struct RenderedReport {
    std::string text;
    std::string csv;
    std::string json;
};

/// Rows are the reports in Table 1 order; `control` rows are shown below the
/// table and kept out of the CSV.
inline RenderedReport render_report(const std::vector<MetricsReport>& reports,
                                    const std::vector<MetricsReport>& control = {}) {
    if (reports.empty()) throw ValidationError("render_report: no reports");
    const auto rows = in_table_order(reports);
    RenderedReport out;
    out.text = detail::table(rows);
    out.text += "\naveraging: " + to_string(rows.front().metrics.averaging) + "\n";
    for (const auto& r : rows) {
        const auto& f = r.fingerprint;
        out.text += display_name(r.selector) + ": k=" + std::to_string(f.k) + " window=" +
                    std::to_string(f.window_length) + "/" + std::to_string(f.window_stride) +
                    " seed=" + std::to_string(f.seed) + " split=" + f.split_mode + " train=" +
                    std::to_string(r.n_train) + " test=" + std::to_string(r.n_test) + "\n";
        for (const auto& w : r.warnings) out.text += "  warning: " + w + "\n";
    }
    if (!control.empty()) out.text += "\ncontrol\n" + detail::table(control);

    out.csv = "selector";
    for (const auto& c : report_columns()) out.csv += "," + c;
    out.csv += ",averaging,k,window_length,window_stride,seed,split_mode,config_sha256\n";
    for (const auto& r : rows) {
        out.csv += r.selector;
        for (double v : row_values(r)) out.csv += "," + (std::isnan(v) ? std::string("nan") : cogload::detail::format_double(v));
        const auto& f = r.fingerprint;
        out.csv += "," + to_string(r.metrics.averaging) + "," + std::to_string(f.k) + "," +
                   std::to_string(f.window_length) + "," + std::to_string(f.window_stride) + "," +
                   std::to_string(f.seed) + "," + f.split_mode + "," + f.config_sha256 + "\n";
    }

    nlohmann::json j;
    j["columns"] = report_columns();
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) j["rows"].push_back(detail::to_json(r));
    if (!control.empty()) {
        j["control"] = nlohmann::json::array();
        for (const auto& r : control) j["control"].push_back(detail::to_json(r));
    }
    out.json = j.dump(2) + "\n";
    return out;
}

struct ReportCsvRow {
    std::string selector;
    std::array<double, 5> values{};  // Accuracy, F1-score, AUC, Precision, Recall
};

inline std::vector<ReportCsvRow> parse_report_csv(std::string_view text, const std::string& source = "<report>") {
    const auto table = cogload::detail::parse_csv(text, source);
    if (table.header.size() < 6 || table.header[0] != "selector")
        throw ParseError(source, 1, "expected header selector,Accuracy,F1-score,AUC,Precision,Recall,...");
    for (std::size_t i = 0; i < report_columns().size(); ++i)
        if (table.header[i + 1] != report_columns()[i]) throw ParseError(source, 1, "unexpected column order");
    std::vector<ReportCsvRow> out;
    for (const auto& row : table.rows) {
        if (row.fields.size() != table.header.size()) throw ParseError(source, row.line, "wrong number of fields");
        ReportCsvRow r;
        r.selector = std::string(row.fields[0]);
        for (std::size_t i = 0; i < 5; ++i)
            r.values[i] = cogload::detail::parse_cell(row.fields[i + 1], source, row.line, table.header[i + 1]);
        out.push_back(r);
    }
    return out;
}

inline std::string confusion_to_csv(const ConfusionMatrix& cm) {
    std::string out = "true\\predicted,0,1,2\n";
    for (int t = 0; t < kNumClasses; ++t) {
        out += std::to_string(t);
        for (int p = 0; p < kNumClasses; ++p) out += "," + std::to_string(cm.counts[t][p]);
        out += "\n";
    }
    return out;
}

/// Row-normalized heatmap with counts in each cell.
inline std::string confusion_to_svg(const ConfusionMatrix& cm, const std::string& title) {
    const int cell = 80, left = 90, top = 60;
    const int width = left + 3 * cell + 20, height = top + 3 * cell + 50;
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                      std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"14\">\n";
    out += "<text x=\"" + std::to_string(width / 2) + "\" y=\"24\" text-anchor=\"middle\">" + title + "</text>\n";
    const char* names[] = {"0-back", "1-back", "2-back"};
    for (int t = 0; t < kNumClasses; ++t) {
        const double support = static_cast<double>(std::max(1LL, cm.support(t)));
        out += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" + std::to_string(top + t * cell + cell / 2 + 5) +
               "\" text-anchor=\"end\">" + names[t] + "</text>\n";
        for (int p = 0; p < kNumClasses; ++p) {
            const double frac = static_cast<double>(cm.counts[t][p]) / support;
            const int shade = static_cast<int>(std::lround(255.0 - 200.0 * frac));
            char fill[8];
            std::snprintf(fill, sizeof(fill), "#%02x%02xff", shade, shade);
            const int x = left + p * cell, y = top + t * cell;
            out += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
                   std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" + fill +
                   "\" stroke=\"#444\"/>\n";
            out += "<text x=\"" + std::to_string(x + cell / 2) + "\" y=\"" + std::to_string(y + cell / 2 + 5) +
                   "\" text-anchor=\"middle\">" + std::to_string(cm.counts[t][p]) + "</text>\n";
        }
    }
    for (int p = 0; p < kNumClasses; ++p)
        out += "<text x=\"" + std::to_string(left + p * cell + cell / 2) + "\" y=\"" +
               std::to_string(top + 3 * cell + 20) + "\" text-anchor=\"middle\">" + names[p] + "</text>\n";
    out += "<text x=\"" + std::to_string(left + 3 * cell / 2) + "\" y=\"" + std::to_string(height - 8) +
           "\" text-anchor=\"middle\">predicted</text>\n";
    out += "</svg>\n";
    return out;
}

/// Writes report.txt, report.csv, report.json and confusion_<selector>.csv/.svg;
/// returns the paths written.
inline std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir,
                                                       const std::vector<MetricsReport>& reports,
                                                       const std::vector<MetricsReport>& control = {}) {
    const auto rendered = render_report(reports, control);
    std::vector<std::filesystem::path> written;
    auto put = [&](const std::filesystem::path& p, const std::string& content) {
        cogload::detail::write_file_atomic(p, content);
        written.push_back(p);
    };
    put(dir / "report.txt", rendered.text);
    put(dir / "report.csv", rendered.csv);
    put(dir / "report.json", rendered.json);
    for (const auto& r : in_table_order(reports)) {
        put(dir / ("confusion_" + r.selector + ".csv"), confusion_to_csv(r.confusion));
        put(dir / ("confusion_" + r.selector + ".svg"), confusion_to_svg(r.confusion, display_name(r.selector)));
    }
    return written;
}

}  // namespace cogload::metrics
