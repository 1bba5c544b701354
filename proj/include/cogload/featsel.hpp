#pragma once

// Feature ranking and reduction: Extra Trees Gini importance, one-way ANOVA F,
// variance threshold and PCA.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cogload/detail/hash.hpp"
#include "cogload/detail/text.hpp"
#include "cogload/errors.hpp"

namespace cogload::featsel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kNumClasses = 3;

/// Samples in rows, named features in columns.
struct FeatureMatrix {
    Matrix values;
    std::vector<std::string> names;

    Eigen::Index samples() const { return values.rows(); }
    Eigen::Index features() const { return values.cols(); }

    void validate() const {
        if (static_cast<Eigen::Index>(names.size()) != values.cols())
            throw DimensionError("feature axis: " + std::to_string(names.size()) + " names for " +
                                 std::to_string(values.cols()) + " columns");
        if (values.rows() < 2) throw ValidationError("need at least 2 samples");
        if (!values.allFinite()) throw NumericError("feature matrix contains non-finite values");
        std::set<std::string> seen;
        for (const auto& n : names)
            if (!seen.insert(n).second) throw ValidationError("duplicate feature name '" + n + "'");
    }
};

inline void validate_labels(std::span<const int> labels, Eigen::Index samples, bool supervised = true) {
    if (static_cast<Eigen::Index>(labels.size()) != samples)
        throw DimensionError("sample axis: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(samples) + " rows");
    std::set<int> distinct;
    for (int y : labels) {
        if (y < 0 || y >= kNumClasses) throw ValidationError("label " + std::to_string(y) + " outside {0,1,2}");
        distinct.insert(y);
    }
    if (supervised && distinct.size() < 2) throw ValidationError("need at least two distinct classes");
}

struct RankedFeature {
    std::string name;
    double score = 0.0;
};

/// Descending by score; equal scores in name order.
struct ImportanceRanking {
    std::vector<RankedFeature> entries;
    std::string method;

    static ImportanceRanking from_scores(const std::vector<std::string>& names, std::span<const double> scores,
                                         std::string method) {
        if (names.size() != scores.size()) throw DimensionError("names and scores differ in length");
        ImportanceRanking r;
        r.method = std::move(method);
        for (std::size_t i = 0; i < names.size(); ++i) r.entries.push_back({names[i], scores[i]});
        std::sort(r.entries.begin(), r.entries.end(), [](const RankedFeature& a, const RankedFeature& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.name < b.name;
        });
        return r;
    }

    std::optional<double> score_of(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e.score;
        return std::nullopt;
    }
};

/// First k names of the ranking.
inline std::vector<std::string> select_top_k(const ImportanceRanking& ranking, std::size_t k) {
    if (k == 0) throw ValidationError("k must be positive");
    if (k > ranking.entries.size())
        throw ValidationError("k = " + std::to_string(k) + " exceeds the " + std::to_string(ranking.entries.size()) +
                              " ranked features");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(ranking.entries[i].name);
    return out;
}

/// CSV with header rank,feature_name,score,method; rank is 1-based.
inline std::string ranking_to_csv(const ImportanceRanking& r) {
    std::string out = "rank,feature_name,score,method\n";
    for (std::size_t i = 0; i < r.entries.size(); ++i)
        out += std::to_string(i + 1) + "," + r.entries[i].name + "," + cogload::detail::format_double(r.entries[i].score) +
               "," + r.method + "\n";
    return out;
}

inline ImportanceRanking ranking_from_csv(const std::string& text, const std::string& source = "<ranking>") {
    ImportanceRanking r;
    std::size_t lineno = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string_view line(text.data() + start, end - start);
        start = end + 1;
        ++lineno;
        if (cogload::detail::trim(line).empty()) continue;
        auto f = cogload::detail::split(line);
        if (lineno == 1) {
            if (f.size() != 4 || f[0] != "rank" || f[1] != "feature_name" || f[2] != "score" || f[3] != "method")
                throw ParseError(source, lineno, "expected header rank,feature_name,score,method");
            continue;
        }
        if (f.size() != 4) throw ParseError(source, lineno, "expected 4 columns");
        auto score = cogload::detail::parse_double(f[2]);
        if (!score) throw ParseError(source, lineno, "non-numeric score");
        r.entries.push_back({std::string(f[1]), *score});
        r.method = std::string(f[3]);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Gini

inline double gini_from_counts(const std::array<std::size_t, kNumClasses>& counts) {
    const double n = static_cast<double>(counts[0] + counts[1] + counts[2]);
    double s = 0.0;
    for (auto c : counts) {
        const double p = static_cast<double>(c) / n;
        s += p * p;
    }
    return 1.0 - s;
}

/// 1 - sum_c p_c^2 over a non-empty label subset.
inline double gini_impurity(std::span<const int> labels) {
    if (labels.empty()) throw ValidationError("gini_impurity: empty subset");
    std::array<std::size_t, kNumClasses> counts{};
    for (int y : labels) {
        if (y < 0 || y >= kNumClasses) throw ValidationError("label outside {0,1,2}");
        ++counts[static_cast<std::size_t>(y)];
    }
    return gini_from_counts(counts);
}

// ---------------------------------------------------------------------------
// Extra Trees

struct ExtraTreesConfig {
    int n_trees = 100;
    int k_features = 0;  // 0 selects ceil(sqrt(n_features))
    int min_samples_split = 2;
    std::optional<int> max_depth;
    std::uint64_t seed = 0;
};

struct TreeNode {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int samples = 0;
    std::array<int, kNumClasses> counts{};
};

struct Tree {
    std::vector<TreeNode> nodes;
};

struct ExtraTreesResult {
    std::vector<Tree> forest;
    ImportanceRanking ranking;
    std::vector<std::string> warnings;
};

namespace detail {

struct Candidate {
    std::uint64_t priority;
    int feature;
};

// Per-node randomness is keyed by (tree key, path from the root, feature
// name), never by column position, so reordering the columns of X reorders
// the importances and nothing else.
class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& x, std::span<const int> y, const ExtraTreesConfig& cfg, int k,
                std::uint64_t tree_key, const std::vector<std::uint64_t>& name_keys)
        : x_(x), y_(y), cfg_(cfg), k_(k), tree_key_(tree_key), name_keys_(name_keys),
          importance_(static_cast<std::size_t>(x.features()), 0.0) {}

    Tree build() {
        std::vector<int> idx(static_cast<std::size_t>(x_.samples()));
        std::iota(idx.begin(), idx.end(), 0);
        const double total = static_cast<double>(idx.size());
        struct Job {
            int node;
            std::size_t begin, end;
            int depth;
            std::uint64_t key;
        };
        Tree tree;
        tree.nodes.emplace_back();
        std::vector<Job> stack{{0, 0, idx.size(), 0, tree_key_}};
        std::vector<Candidate> candidates;
        while (!stack.empty()) {
            const Job job = stack.back();
            stack.pop_back();
            std::array<std::size_t, kNumClasses> counts{};
            for (std::size_t i = job.begin; i < job.end; ++i) ++counts[static_cast<std::size_t>(y_[idx[i]])];
            TreeNode& node = tree.nodes[static_cast<std::size_t>(job.node)];
            node.samples = static_cast<int>(job.end - job.begin);
            for (int c = 0; c < kNumClasses; ++c) node.counts[c] = static_cast<int>(counts[c]);

            const double impurity = gini_from_counts(counts);
            const bool pure = impurity == 0.0;
            const bool too_small = node.samples < cfg_.min_samples_split;
            const bool too_deep = cfg_.max_depth && job.depth >= *cfg_.max_depth;
            if (pure || too_small || too_deep) continue;

            // Candidate order for this node: ascending keyed priority.
            candidates.clear();
            for (int f = 0; f < x_.features(); ++f)
                candidates.push_back({cogload::detail::combine(job.key, name_keys_[static_cast<std::size_t>(f)]), f});
            auto cmp = [](const Candidate& a, const Candidate& b) { return a.priority > b.priority; };
            std::make_heap(candidates.begin(), candidates.end(), cmp);

            int drawn = 0;
            int best_feature = -1;
            double best_threshold = 0.0, best_gain = -1.0;
            const std::string* best_name = nullptr;
            while (drawn < k_ && !candidates.empty()) {
                std::pop_heap(candidates.begin(), candidates.end(), cmp);
                const Candidate cand = candidates.back();
                candidates.pop_back();
                const auto col = x_.values.col(cand.feature);
                double lo = std::numeric_limits<double>::infinity(), hi = -lo;
                for (std::size_t i = job.begin; i < job.end; ++i) {
                    const double v = col(idx[i]);
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                if (!(hi > lo)) continue;  // constant within node
                ++drawn;
                double u = cogload::detail::to_unit(cogload::detail::mix64(cand.priority));
                double threshold = lo + u * (hi - lo);
                if (!(threshold > lo) || !(threshold < hi)) threshold = lo + 0.5 * (hi - lo);

                std::array<std::size_t, kNumClasses> lc{}, rc{};
                for (std::size_t i = job.begin; i < job.end; ++i) {
                    const auto label = static_cast<std::size_t>(y_[idx[i]]);
                    if (col(idx[i]) < threshold) ++lc[label]; else ++rc[label];
                }
                const double nl = static_cast<double>(lc[0] + lc[1] + lc[2]);
                const double nr = static_cast<double>(rc[0] + rc[1] + rc[2]);
                if (nl == 0.0 || nr == 0.0) continue;
                const double n = nl + nr;
                const double gain = impurity - (nl / n) * gini_from_counts(lc) - (nr / n) * gini_from_counts(rc);
                const std::string& name = x_.names[static_cast<std::size_t>(cand.feature)];
                if (gain > best_gain || (gain == best_gain && best_name && name < *best_name)) {
                    best_gain = gain;
                    best_feature = cand.feature;
                    best_threshold = threshold;
                    best_name = &name;
                }
            }
            if (best_feature < 0) continue;

            const auto col = x_.values.col(best_feature);
            auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(job.begin),
                                      idx.begin() + static_cast<std::ptrdiff_t>(job.end),
                                      [&](int i) { return col(i) < best_threshold; });
            const auto split = static_cast<std::size_t>(mid - idx.begin());
            importance_[static_cast<std::size_t>(best_feature)] +=
                (static_cast<double>(node.samples) / total) * best_gain;

            const int left = static_cast<int>(tree.nodes.size());
            tree.nodes.emplace_back();
            tree.nodes.emplace_back();
            TreeNode& parent = tree.nodes[static_cast<std::size_t>(job.node)];
            parent.feature = best_feature;
            parent.threshold = best_threshold;
            parent.left = left;
            parent.right = left + 1;
            stack.push_back({left + 1, split, job.end, job.depth + 1, cogload::detail::combine(job.key, 2)});
            stack.push_back({left, job.begin, split, job.depth + 1, cogload::detail::combine(job.key, 1)});
        }
        return tree;
    }

    const std::vector<double>& importance() const { return importance_; }

private:
    const FeatureMatrix& x_;
    std::span<const int> y_;
    const ExtraTreesConfig& cfg_;
    int k_;
    std::uint64_t tree_key_;
    const std::vector<std::uint64_t>& name_keys_;
    std::vector<double> importance_;
};

}  // namespace detail

/// Fits an ensemble of extremely randomized trees on the full sample (no
/// bootstrap) and ranks features by mean decrease in Gini impurity.
///
/// At each node k_features candidates are drawn among the features that are
/// not constant within the node; each gets one cut point drawn uniformly in
/// the open interval (min, max) of its node values, and the candidate with
/// the largest impurity decrease wins. Per-split importance is the decrease
/// weighted by the node's share of the training samples; per-feature sums
/// are averaged over trees and normalized to sum to 1.
inline ExtraTreesResult fit_extra_trees(const FeatureMatrix& x, std::span<const int> y, ExtraTreesConfig cfg) {
    x.validate();
    validate_labels(y, x.samples(), false);
    const auto nf = static_cast<int>(x.features());
    if (cfg.n_trees < 1) throw ValidationError("n_trees must be >= 1");
    if (cfg.min_samples_split < 1) throw ValidationError("min_samples_split must be >= 1");
    if (cfg.max_depth && *cfg.max_depth < 1) throw ValidationError("max_depth must be >= 1");
    const int k = cfg.k_features > 0 ? cfg.k_features
                                     : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(nf))));
    if (k > nf) throw ValidationError("k_features exceeds the number of features");

    std::vector<std::uint64_t> name_keys;
    for (const auto& n : x.names) name_keys.push_back(cogload::detail::name_hash(n));

    ExtraTreesResult result;
    std::vector<double> total(static_cast<std::size_t>(nf), 0.0);
    for (int t = 0; t < cfg.n_trees; ++t) {
        const std::uint64_t key = cogload::detail::combine(cfg.seed, static_cast<std::uint64_t>(t));
        detail::TreeBuilder builder(x, y, cfg, k, key, name_keys);
        result.forest.push_back(builder.build());
        for (int f = 0; f < nf; ++f) total[static_cast<std::size_t>(f)] += builder.importance()[static_cast<std::size_t>(f)];
    }
    for (auto& v : total) v /= static_cast<double>(cfg.n_trees);

    // Normalizer summed in name order so it does not depend on column order.
    std::vector<int> by_name(static_cast<std::size_t>(nf));
    std::iota(by_name.begin(), by_name.end(), 0);
    std::sort(by_name.begin(), by_name.end(), [&](int a, int b) { return x.names[a] < x.names[b]; });
    double sum = 0.0;
    for (int f : by_name) sum += total[static_cast<std::size_t>(f)];
    if (sum > 0.0) {
        for (auto& v : total) v /= sum;
    } else {
        result.warnings.push_back("extra trees: no split was possible (constant features or pure labels); "
                                  "all importances are 0");
    }
    result.ranking = ImportanceRanking::from_scores(x.names, total, "extra_trees");
    return result;
}

// ---------------------------------------------------------------------------
// ANOVA

/// One-way ANOVA F = (SSB / (C - 1)) / (SSW / (N - C)) per feature, C being
/// the number of classes present. Constant features score 0; zero
/// within-class spread with nonzero between-class spread scores +inf.
inline std::vector<double> anova_f(const FeatureMatrix& x, std::span<const int> y) {
    x.validate();
    validate_labels(y, x.samples());
    std::array<double, kNumClasses> n{};
    for (int label : y) n[static_cast<std::size_t>(label)] += 1.0;
    int classes = 0;
    for (double c : n) classes += c > 0.0 ? 1 : 0;
    const double total = static_cast<double>(x.samples());
    if (total <= classes) throw ValidationError("anova: need more samples than classes");

    std::vector<double> out(static_cast<std::size_t>(x.features()));
    for (Eigen::Index f = 0; f < x.features(); ++f) {
        const auto col = x.values.col(f);
        std::array<double, kNumClasses> sum{};
        for (Eigen::Index i = 0; i < x.samples(); ++i) sum[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])] += col(i);
        const double grand = col.mean();
        std::array<double, kNumClasses> mean{};
        double ssb = 0.0;
        for (int c = 0; c < kNumClasses; ++c) {
            if (n[c] == 0.0) continue;
            mean[c] = sum[c] / n[c];
            ssb += n[c] * (mean[c] - grand) * (mean[c] - grand);
        }
        double ssw = 0.0;
        for (Eigen::Index i = 0; i < x.samples(); ++i) {
            const double d = col(i) - mean[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
            ssw += d * d;
        }
        // Spread below rounding noise counts as zero.
        const double scale = std::max(1.0, col.cwiseAbs().maxCoeff());
        const double tiny = 1e-24 * scale * scale * total;
        if (ssw <= tiny) {
            out[static_cast<std::size_t>(f)] = ssb <= tiny ? 0.0 : std::numeric_limits<double>::infinity();
        } else {
            out[static_cast<std::size_t>(f)] = (ssb / (classes - 1)) / (ssw / (total - classes));
        }
    }
    return out;
}

inline ImportanceRanking rank_anova(const FeatureMatrix& x, std::span<const int> y) {
    const auto f = anova_f(x, y);
    return ImportanceRanking::from_scores(x.names, f, "anova");
}

// ---------------------------------------------------------------------------
// Variance threshold

inline std::vector<double> population_variance(const FeatureMatrix& x) {
    std::vector<double> out(static_cast<std::size_t>(x.features()));
    for (Eigen::Index f = 0; f < x.features(); ++f) {
        const auto col = x.values.col(f);
        out[static_cast<std::size_t>(f)] = (col.array() - col.mean()).square().mean();
    }
    return out;
}

/// Keeps feature j iff its population variance exceeds tau.
inline std::vector<bool> variance_threshold(const FeatureMatrix& x, double tau) {
    const auto var = population_variance(x);
    std::vector<bool> keep(var.size());
    for (std::size_t j = 0; j < var.size(); ++j) keep[j] = var[j] > tau;
    return keep;
}

/// Features passing the threshold, ranked by variance.
inline ImportanceRanking rank_variance(const FeatureMatrix& x, double tau) {
    const auto var = population_variance(x);
    std::vector<std::string> names;
    std::vector<double> scores;
    for (std::size_t j = 0; j < var.size(); ++j)
        if (var[j] > tau) {
            names.push_back(x.names[j]);
            scores.push_back(var[j]);
        }
    return ImportanceRanking::from_scores(names, scores, "variance_threshold");
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
    Vector mean;                 // (n_features)
    Matrix components;           // (n_components, n_features), orthonormal rows
    Vector explained_variance;   // eigenvalues of the sample covariance, descending
    Vector explained_variance_ratio;
    std::vector<std::string> input_names;

    std::vector<std::string> output_names() const {
        std::vector<std::string> out;
        for (Eigen::Index i = 0; i < components.rows(); ++i) {
            std::string s = std::to_string(i + 1);
            out.push_back("pc" + std::string(s.size() < 2 ? 2 - s.size() : 0, '0') + s);
        }
        return out;
    }
};

/// Eigendecomposition of the (n - 1)-normalized covariance. Each component's
/// largest-magnitude entry is made positive.
inline PcaModel pca_fit(const FeatureMatrix& x, int n_components) {
    x.validate();
    const auto n = x.samples();
    const auto p = x.features();
    if (n_components < 1 || n_components > std::min(n, p))
        throw ValidationError("n_components = " + std::to_string(n_components) + " must be in [1, " +
                              std::to_string(std::min(n, p)) + "]");
    PcaModel m;
    m.input_names = x.names;
    m.mean = x.values.colwise().mean().transpose();
    const Matrix centered = x.values.rowwise() - m.mean.transpose();
    const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");

    // Eigen returns ascending eigenvalues.
    const Vector values = eig.eigenvalues().reverse();
    const Matrix vectors = eig.eigenvectors().rowwise().reverse();
    m.components = vectors.leftCols(n_components).transpose();
    for (Eigen::Index r = 0; r < m.components.rows(); ++r) {
        Eigen::Index arg = 0;
        m.components.row(r).cwiseAbs().maxCoeff(&arg);
        if (m.components(r, arg) < 0.0) m.components.row(r) *= -1.0;
    }
    m.explained_variance = values.head(n_components).cwiseMax(0.0);
    const double total = values.cwiseMax(0.0).sum();
    m.explained_variance_ratio = total > 0.0 ? Vector(m.explained_variance / total) : Vector::Zero(n_components);
    return m;
}

/// Projects mean-centered rows onto the components: (n, n_components).
inline Matrix pca_transform(const PcaModel& m, const Matrix& values) {
    if (values.cols() != m.mean.size())
        throw DimensionError("feature axis: PCA fitted on " + std::to_string(m.mean.size()) + " features, got " +
                             std::to_string(values.cols()));
    return (values.rowwise() - m.mean.transpose()) * m.components.transpose();
}

/// Maps reduced coordinates back to the input space.
inline Matrix pca_inverse(const PcaModel& m, const Matrix& reduced) {
    return (reduced * m.components).rowwise() + m.mean.transpose();
}

}  // namespace cogload::featsel
