#pragma once

// End-to-end orchestration shared by the command-line tool and the tests:
// configuration, acquisition (synthetic, raw streams or fused CSVs),
// alignment, windowing, splitting, standardization, feature selection,
// training, evaluation and the run manifest.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cogload/checkpoint.hpp"
#include "cogload/datafusion.hpp"
#include "cogload/detail/hash.hpp"
#include "cogload/detail/sha256.hpp"
#include "cogload/detail/text.hpp"
#include "cogload/errors.hpp"
#include "cogload/evalmetrics.hpp"
#include "cogload/featsel.hpp"
#include "cogload/nncore.hpp"
#include "cogload/synthgen.hpp"

namespace cogload::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Matrix = Eigen::MatrixXd;

/// Invalid or inconsistent configuration.
class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

enum ExitCode : int { kOk = 0, kConfigFailure = 1, kDataFailure = 2, kDivergence = 3, kPartialFailure = 4 };

/// A stage failed; exit_code classifies the underlying error.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what, int exit_code)
        : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)), exit_code_(exit_code) {}

    const std::string& stage() const noexcept { return stage_; }
    int exit_code() const noexcept { return exit_code_; }

private:
    std::string stage_;
    int exit_code_;
};

inline int classify(const std::exception& e) {
    if (auto* s = dynamic_cast<const StageError*>(&e)) return s->exit_code();
    if (dynamic_cast<const ConfigError*>(&e)) return kConfigFailure;
    if (dynamic_cast<const DivergenceError*>(&e)) return kDivergence;
    return kDataFailure;
}

// ---------------------------------------------------------------------------
// Logging

inline bool& quiet() {
    static bool q = false;
    return q;
}

inline void log(const std::string& msg) {
    if (!quiet()) std::cerr << "[cogload] " << msg << std::endl;
}

// ---------------------------------------------------------------------------
// Configuration

inline const std::vector<std::string>& selector_methods() {
    static const std::vector<std::string> m{"variance_threshold", "pca", "anova", "extra_trees", "random", "none"};
    return m;
}

struct SelectorConfig {
    std::string method = "extra_trees";
    int k = 20;
    std::string scope = "fnirs";  // fnirs | all
    double variance_tau = 0.0;
    int n_trees = 100;
    int k_features = 0;  // 0: ceil(sqrt(candidates))
    int min_samples_split = 2;
    std::optional<int> max_depth;
};

struct RunConfig {
    std::uint64_t seed = 42;
    std::string data_source = "synthetic";  // synthetic | streams | fused
    std::string data_dir;
    synth::SynthConfig synth;
    int window_length = 16;
    int window_stride = 8;
    double split_ratio = 0.8;
    fusion::SplitMode split_mode = fusion::SplitMode::random;
    SelectorConfig selector;
    int epochs = 1000;
    int batch_size = 32;
    double lr = 1e-3;
    metrics::Averaging averaging = metrics::Averaging::weighted;
    std::vector<std::string> compare_selectors{"variance_threshold", "pca", "anova", "extra_trees"};
    bool compare_control = true;
    int control_k = 20;
    std::string output_dir;

    std::uint64_t derived_seed(std::string_view purpose) const {
        return cogload::detail::combine(seed, cogload::detail::name_hash(purpose));
    }
};

inline json selector_to_json(const SelectorConfig& s) {
    return {{"method", s.method},
            {"k", s.k},
            {"scope", s.scope},
            {"variance_tau", s.variance_tau},
            {"extra_trees",
             {{"n_trees", s.n_trees},
              {"k_features", s.k_features},
              {"min_samples_split", s.min_samples_split},
              {"max_depth", s.max_depth ? json(*s.max_depth) : json()}}}};
}

inline json to_json(const RunConfig& c) {
    return {{"seed", c.seed},
            {"data", {{"source", c.data_source}, {"dir", c.data_dir}}},
            {"synth", synth::to_json(c.synth)},
            {"window", {{"length", c.window_length}, {"stride", c.window_stride}}},
            {"split", {{"ratio", c.split_ratio}, {"mode", fusion::to_string(c.split_mode)}}},
            {"selector", selector_to_json(c.selector)},
            {"train", {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}}},
            {"eval", {{"averaging", metrics::to_string(c.averaging)}}},
            {"compare", {{"selectors", c.compare_selectors}, {"control", c.compare_control}, {"control_k", c.control_k}}},
            {"output_dir", c.output_dir}};
}

namespace detail {

// Copies `user` onto `base`; every user key must already exist in `base`.
inline void merge_strict(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + " must be an object");
    for (const auto& [key, value] : user.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + here + "'");
        json& slot = base[key];
        if (slot.is_object() && here != "synth.schedule") merge_strict(slot, value, here);
        else slot = value;
    }
}

template <class T>
T get(const json& j, const char* key, const std::string& path) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "." + key + "': " + e.what());
    }
}

}  // namespace detail

inline json default_config_json() { return to_json(RunConfig{}); }

inline RunConfig from_json(const json& j) {
    using detail::get;
    RunConfig c;
    c.seed = get<std::uint64_t>(j, "seed", "");
    const auto& data = j.at("data");
    c.data_source = get<std::string>(data, "source", "data");
    c.data_dir = get<std::string>(data, "dir", "data");
    try {
        synth::update_from_json(c.synth, j.at("synth"));
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    c.window_length = get<int>(j.at("window"), "length", "window");
    c.window_stride = get<int>(j.at("window"), "stride", "window");
    c.split_ratio = get<double>(j.at("split"), "ratio", "split");
    try {
        c.split_mode = fusion::parse_split_mode(get<std::string>(j.at("split"), "mode", "split"));
        c.averaging = metrics::parse_averaging(get<std::string>(j.at("eval"), "averaging", "eval"));
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    const auto& s = j.at("selector");
    c.selector.method = get<std::string>(s, "method", "selector");
    c.selector.k = get<int>(s, "k", "selector");
    c.selector.scope = get<std::string>(s, "scope", "selector");
    c.selector.variance_tau = get<double>(s, "variance_tau", "selector");
    const auto& et = s.at("extra_trees");
    c.selector.n_trees = get<int>(et, "n_trees", "selector.extra_trees");
    c.selector.k_features = get<int>(et, "k_features", "selector.extra_trees");
    c.selector.min_samples_split = get<int>(et, "min_samples_split", "selector.extra_trees");
    if (!et.at("max_depth").is_null()) c.selector.max_depth = get<int>(et, "max_depth", "selector.extra_trees");
    c.epochs = get<int>(j.at("train"), "epochs", "train");
    c.batch_size = get<int>(j.at("train"), "batch_size", "train");
    c.lr = get<double>(j.at("train"), "lr", "train");
    c.compare_selectors = get<std::vector<std::string>>(j.at("compare"), "selectors", "compare");
    c.compare_control = get<bool>(j.at("compare"), "control", "compare");
    c.control_k = get<int>(j.at("compare"), "control_k", "compare");
    c.output_dir = get<std::string>(j, "output_dir", "");
    return c;
}

inline void validate_selector(const SelectorConfig& s) {
    const auto& m = selector_methods();
    if (std::find(m.begin(), m.end(), s.method) == m.end())
        throw ConfigError("selector.method '" + s.method + "' is not one of " + cogload::detail::join(m, ", "));
    if (s.k < 1) throw ConfigError("selector.k must be >= 1");
    if (s.scope != "fnirs" && s.scope != "all") throw ConfigError("selector.scope must be 'fnirs' or 'all'");
    if (s.n_trees < 1) throw ConfigError("selector.extra_trees.n_trees must be >= 1");
    if (s.k_features < 0) throw ConfigError("selector.extra_trees.k_features must be >= 0");
    if (s.min_samples_split < 1) throw ConfigError("selector.extra_trees.min_samples_split must be >= 1");
    if (s.max_depth && *s.max_depth < 1) throw ConfigError("selector.extra_trees.max_depth must be >= 1");
}

inline void validate(const RunConfig& c) {
    if (c.data_source != "synthetic" && c.data_source != "streams" && c.data_source != "fused")
        throw ConfigError("data.source must be 'synthetic', 'streams' or 'fused'");
    if (c.data_source != "synthetic" && c.data_dir.empty())
        throw ConfigError("data.dir is required when data.source is '" + c.data_source + "'");
    try {
        c.synth.validate();
        nn::TrainConfig{c.epochs, c.batch_size, c.lr, 0}.validate();
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    if (c.window_length < fusion::kMinWindow) throw ConfigError("window.length must be >= 5");
    if (c.window_stride < 1) throw ConfigError("window.stride must be >= 1");
    if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw ConfigError("split.ratio must be in (0, 1)");
    validate_selector(c.selector);
    for (const auto& m : c.compare_selectors) {
        SelectorConfig s = c.selector;
        s.method = m;
        validate_selector(s);
    }
    if (c.control_k < 1) throw ConfigError("compare.control_k must be >= 1");
    if (c.data_source == "synthetic" && c.selector.scope == "fnirs" && c.selector.k > fusion::kFnirsChannels)
        throw ConfigError("selector.k exceeds the 204 fNIRS channels");
}

/// "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
inline void apply_override(json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json* node = &cfg;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown config key '" + path + "'");
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    if (node->is_object() && path != "synth.schedule") {
        json wrapper = *node;
        detail::merge_strict(wrapper, value, path);
        *node = wrapper;
    } else {
        *node = value;
    }
}

/// Defaults, then the file (if any), then the overrides in order.
inline RunConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides = {}) {
    json cfg = default_config_json();
    if (file) {
        std::string text;
        try {
            text = cogload::detail::read_file(*file);
        } catch (const ParseError& e) {
            throw ConfigError(e.what());
        }
        json user = json::parse(text, nullptr, false);
        if (user.is_discarded()) throw ConfigError(file->string() + ": not valid JSON");
        detail::merge_strict(cfg, user, "");
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    RunConfig c = from_json(cfg);
    validate(c);
    return c;
}

/// SHA-256 of the canonical config, excluding the output location.
inline std::string config_fingerprint(const RunConfig& c) {
    json j = to_json(c);
    j.erase("output_dir");
    return cogload::detail::sha256_hex(j.dump());
}

/// --out, then output_dir in the config, then $COGLOAD_OUT_DIR, then ./cogload_out.
inline fs::path resolve_output_dir(const RunConfig& c, const std::optional<std::string>& flag) {
    if (flag && !flag->empty()) return *flag;
    if (!c.output_dir.empty()) return c.output_dir;
    if (const char* env = std::getenv("COGLOAD_OUT_DIR"); env && *env) return env;
    return "cogload_out";
}

// ---------------------------------------------------------------------------
// Stage bookkeeping

struct StageTimer {
    std::vector<std::pair<std::string, double>> timings;

    template <class F>
    auto run(const std::string& name, F&& f) -> decltype(f()) {
        log("stage " + name);
        const auto t0 = std::chrono::steady_clock::now();
        auto record = [&] {
            timings.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        };
        try {
            if constexpr (std::is_void_v<decltype(f())>) {
                f();
                record();
            } else {
                auto r = f();
                record();
                return r;
            }
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, e.what(), classify(e));
        }
    }
};

// ---------------------------------------------------------------------------
// Acquisition

struct SessionStreams {
    int index = 0;
    fusion::Stream fnirs;
    std::optional<fusion::Stream> eye;
    std::optional<fusion::Stream> driving;
    fusion::LabelTrack labels;
    std::vector<fs::path> files;
};

/// Session directories under `root` (session_*), or `root` itself when it
/// holds the stream files directly.
inline std::vector<fs::path> session_dirs(const fs::path& root, const std::string& marker) {
    if (!fs::is_directory(root)) throw ParseError(root.string(), 0, "data directory does not exist");
    std::vector<fs::path> dirs;
    if (fs::exists(root / marker)) return {root};
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && e.path().filename().string().starts_with("session_")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ParseError(root.string(), 0, "no session_* directories and no " + marker);
    return dirs;
}

inline std::vector<SessionStreams> load_streams(const fs::path& root, const std::vector<std::string>& eye_channels) {
    std::vector<SessionStreams> out;
    int index = 0;
    for (const auto& dir : session_dirs(root, "fnirs.csv")) {
        SessionStreams s;
        s.index = index++;
        s.fnirs = fusion::load_stream(dir / "fnirs.csv", fusion::fnirs_schema());
        s.labels = fusion::load_labels(dir / "labels.csv");
        s.files = {dir / "fnirs.csv", dir / "labels.csv"};
        if (fs::exists(dir / "eye.csv")) {
            s.eye = fusion::load_stream(dir / "eye.csv", fusion::eye_schema(eye_channels));
            s.files.push_back(dir / "eye.csv");
        }
        if (fs::exists(dir / "driving.csv")) {
            s.driving = fusion::load_stream(dir / "driving.csv", fusion::driving_schema());
            s.files.push_back(dir / "driving.csv");
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<SessionStreams> synthesize(const synth::SynthConfig& cfg) {
    std::vector<SessionStreams> out;
    for (auto& s : synth::generate_dataset(cfg))
        out.push_back({s.index, std::move(s.fnirs), std::move(s.eye), std::move(s.driving), std::move(s.labels), {}});
    return out;
}

inline std::vector<fusion::AlignedDataset> fuse(const std::vector<SessionStreams>& sessions) {
    std::vector<fusion::AlignedDataset> out;
    for (const auto& s : sessions) {
        out.push_back(fusion::align(s.fnirs, s.eye ? &*s.eye : nullptr, s.driving ? &*s.driving : nullptr, s.labels,
                                    {}, s.index));
        const auto& d = out.back();
        if (d.dropped_unlabeled || d.dropped_missing)
            log("session " + std::to_string(s.index) + ": dropped " + std::to_string(d.dropped_unlabeled) +
                " unlabeled and " + std::to_string(d.dropped_missing) + " incomplete rows");
    }
    return out;
}

inline std::vector<fusion::AlignedDataset> load_fused(const fs::path& root) {
    if (!fs::is_directory(root)) throw ParseError(root.string(), 0, "fused data directory does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_regular_file() && e.path().filename().string().starts_with("session_") && e.path().extension() == ".csv")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ParseError(root.string(), 0, "no session_*.csv files");
    std::vector<fusion::AlignedDataset> out;
    for (std::size_t i = 0; i < files.size(); ++i)
        out.push_back(fusion::dataset_from_csv(cogload::detail::read_file(files[i]), static_cast<int>(i),
                                               files[i].string()));
    for (const auto& d : out)
        if (d.names != out.front().names) throw ValidationError("fused sessions have different columns");
    return out;
}

inline std::string fused_file_name(int session) {
    std::string n = std::to_string(session);
    return "session_" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n + ".csv";
}

/// Datasets for the configured source, plus the input files read.
inline std::vector<fusion::AlignedDataset> acquire(const RunConfig& cfg, std::vector<fs::path>* inputs = nullptr) {
    if (cfg.data_source == "synthetic") return fuse(synthesize(cfg.synth));
    if (cfg.data_source == "fused") {
        auto d = load_fused(cfg.data_dir);
        if (inputs)
            for (const auto& x : d) inputs->push_back(fs::path(cfg.data_dir) / fused_file_name(x.session_id));
        return d;
    }
    auto sessions = load_streams(cfg.data_dir, cfg.synth.eye_channels);
    if (inputs)
        for (const auto& s : sessions) inputs->insert(inputs->end(), s.files.begin(), s.files.end());
    return fuse(sessions);
}

/// Content hash of the fused datasets (names, timestamps, labels, values).
inline std::string dataset_fingerprint(const std::vector<fusion::AlignedDataset>& datasets) {
    cogload::detail::Sha256 h;
    for (const auto& d : datasets) {
        h.update(cogload::detail::join(d.names));
        h.update(d.timestamps.data(), d.timestamps.size() * sizeof(double));
        h.update(d.labels.data(), d.labels.size() * sizeof(int));
        h.update(d.block_ids.data(), d.block_ids.size() * sizeof(int));
        h.update(d.values.data(), static_cast<std::size_t>(d.values.size()) * sizeof(double));
    }
    return h.hex();
}

// ---------------------------------------------------------------------------
// Windows and split

struct Prepared {
    std::vector<fusion::AlignedDataset> datasets;
    fusion::WindowSet windows;
    fusion::SplitResult split;
};

inline Prepared prepare(std::vector<fusion::AlignedDataset> datasets, const RunConfig& cfg) {
    if (datasets.empty()) throw ValidationError("no data");
    Prepared p;
    p.datasets = std::move(datasets);
    p.windows = fusion::window(p.datasets, cfg.window_length, cfg.window_stride);
    for (const auto& w : p.windows.warnings) log("window: " + w);
    p.split = fusion::split(p.windows.windows, cfg.split_ratio, cfg.derived_seed("split"), cfg.split_mode);
    log("windows: " + std::to_string(p.windows.windows.size()) + " (" + std::to_string(p.split.train.size()) +
        " train, " + std::to_string(p.split.test.size()) + " test, " + fusion::to_string(cfg.split_mode) + ")");
    return p;
}

/// Rows covered by at least one training window, stacked across datasets.
struct TrainRows {
    Matrix values;
    std::vector<int> labels;
};

inline TrainRows train_rows(const Prepared& p) {
    std::vector<std::vector<bool>> covered;
    for (const auto& d : p.datasets) covered.emplace_back(d.rows(), false);
    for (auto i : p.split.train) {
        const auto& w = p.windows.windows[i];
        for (int k = 0; k < p.windows.length; ++k) covered[static_cast<std::size_t>(w.dataset)][w.start + static_cast<std::size_t>(k)] = true;
    }
    std::size_t n = 0;
    for (const auto& c : covered) n += static_cast<std::size_t>(std::count(c.begin(), c.end(), true));
    TrainRows t;
    t.values.resize(static_cast<Eigen::Index>(n), p.datasets.front().values.cols());
    Eigen::Index r = 0;
    for (std::size_t d = 0; d < p.datasets.size(); ++d)
        for (std::size_t i = 0; i < covered[d].size(); ++i)
            if (covered[d][i]) {
                t.values.row(r++) = p.datasets[d].values.row(static_cast<Eigen::Index>(i));
                t.labels.push_back(p.datasets[d].labels[i]);
            }
    return t;
}

// ---------------------------------------------------------------------------
// Feature transform: scaler, then selection or projection

struct FeatureTransform {
    std::string method;
    std::vector<std::string> input_names;
    fusion::Scaler scaler;
    std::vector<std::string> candidates;   // columns the selector ranks
    std::vector<std::string> selected;     // chosen candidates, in input order
    std::vector<std::string> passthrough;  // non-candidate columns, in input order
    std::optional<featsel::PcaModel> pca;
    std::optional<featsel::ImportanceRanking> ranking;

    std::vector<std::string> output_names() const {
        std::vector<std::string> out = pca ? pca->output_names() : selected;
        out.insert(out.end(), passthrough.begin(), passthrough.end());
        return out;
    }

    std::vector<std::size_t> indices(const std::vector<std::string>& names) const {
        std::vector<std::size_t> out;
        for (const auto& n : names) {
            auto it = std::find(input_names.begin(), input_names.end(), n);
            if (it == input_names.end()) throw ValidationError("feature '" + n + "' missing from the data");
            out.push_back(static_cast<std::size_t>(it - input_names.begin()));
        }
        return out;
    }

    /// Raw dataset rows -> model features (rows, output width).
    Matrix apply(const Matrix& raw) const {
        const Matrix z = scaler.apply(raw);
        const auto pass = indices(passthrough);
        Matrix head;
        if (pca) {
            const auto cand = indices(candidates);
            Matrix c(z.rows(), static_cast<Eigen::Index>(cand.size()));
            for (std::size_t j = 0; j < cand.size(); ++j) c.col(static_cast<Eigen::Index>(j)) = z.col(static_cast<Eigen::Index>(cand[j]));
            head = featsel::pca_transform(*pca, c);
        } else {
            const auto sel = indices(selected);
            head.resize(z.rows(), static_cast<Eigen::Index>(sel.size()));
            for (std::size_t j = 0; j < sel.size(); ++j) head.col(static_cast<Eigen::Index>(j)) = z.col(static_cast<Eigen::Index>(sel[j]));
        }
        Matrix out(z.rows(), head.cols() + static_cast<Eigen::Index>(pass.size()));
        out.leftCols(head.cols()) = head;
        for (std::size_t j = 0; j < pass.size(); ++j)
            out.col(head.cols() + static_cast<Eigen::Index>(j)) = z.col(static_cast<Eigen::Index>(pass[j]));
        return out;
    }
};

namespace detail {

inline bool is_fnirs_name(const std::string& n) {
    static const auto names = fusion::fnirs_channel_names();
    static const std::set<std::string> set(names.begin(), names.end());
    return set.count(n) > 0;
}

inline featsel::FeatureMatrix columns(const Matrix& values, const std::vector<std::string>& all,
                                      const std::vector<std::string>& keep) {
    featsel::FeatureMatrix x;
    x.names = keep;
    x.values.resize(values.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
        const auto idx = std::find(all.begin(), all.end(), keep[j]) - all.begin();
        x.values.col(static_cast<Eigen::Index>(j)) = values.col(idx);
    }
    return x;
}

inline std::vector<std::string> in_input_order(const std::vector<std::string>& picked,
                                               const std::vector<std::string>& input) {
    std::set<std::string> set(picked.begin(), picked.end());
    std::vector<std::string> out;
    for (const auto& n : input)
        if (set.count(n)) out.push_back(n);
    return out;
}

}  // namespace detail

/// Fits the scaler on the training rows, then the selector. The variance
/// selector sees unscaled rows (standardized columns all have variance 1);
/// the others see standardized rows.
inline FeatureTransform fit_transform(const Prepared& p, const SelectorConfig& sel, std::uint64_t seed,
                                      std::vector<std::string>& warnings) {
    const auto& names = p.datasets.front().names;
    const TrainRows rows = train_rows(p);
    FeatureTransform t;
    t.method = sel.method;
    t.input_names = names;
    t.scaler = fusion::fit_scaler(rows.values, names);
    for (const auto& n : names) {
        const bool candidate = sel.method != "none" && (sel.scope == "all" || detail::is_fnirs_name(n));
        (candidate ? t.candidates : t.passthrough).push_back(n);
    }
    if (sel.method == "none") return t;
    if (t.candidates.empty()) throw ConfigError("selector scope '" + sel.scope + "' leaves no candidate columns");
    if (static_cast<std::size_t>(sel.k) > t.candidates.size())
        throw ConfigError("selector.k = " + std::to_string(sel.k) + " exceeds the " +
                          std::to_string(t.candidates.size()) + " candidate columns");

    const Matrix scaled = t.scaler.apply(rows.values);
    const auto k = static_cast<std::size_t>(sel.k);
    if (sel.method == "variance_threshold") {
        auto ranking = featsel::rank_variance(detail::columns(rows.values, names, t.candidates), sel.variance_tau);
        if (ranking.entries.empty()) throw ValidationError("variance threshold removed every candidate column");
        const std::size_t keep = std::min(k, ranking.entries.size());
        if (keep < k)
            warnings.push_back("variance threshold kept only " + std::to_string(keep) + " columns (k = " +
                               std::to_string(k) + ")");
        t.selected = detail::in_input_order(featsel::select_top_k(ranking, keep), names);
        t.ranking = std::move(ranking);
    } else if (sel.method == "pca") {
        t.pca = featsel::pca_fit(detail::columns(scaled, names, t.candidates), sel.k);
    } else if (sel.method == "anova") {
        auto ranking = featsel::rank_anova(detail::columns(scaled, names, t.candidates), rows.labels);
        t.selected = detail::in_input_order(featsel::select_top_k(ranking, k), names);
        t.ranking = std::move(ranking);
    } else if (sel.method == "extra_trees") {
        featsel::ExtraTreesConfig et;
        et.n_trees = sel.n_trees;
        et.k_features = sel.k_features;
        et.min_samples_split = sel.min_samples_split;
        et.max_depth = sel.max_depth;
        et.seed = seed;
        auto result = featsel::fit_extra_trees(detail::columns(scaled, names, t.candidates), rows.labels, et);
        warnings.insert(warnings.end(), result.warnings.begin(), result.warnings.end());
        t.selected = detail::in_input_order(featsel::select_top_k(result.ranking, k), names);
        t.ranking = std::move(result.ranking);
    } else if (sel.method == "random") {
        std::vector<std::string> shuffled = t.candidates;
        std::mt19937_64 rng(seed);
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        shuffled.resize(k);
        t.selected = detail::in_input_order(shuffled, names);
    }
    return t;
}

inline json transform_to_json(const FeatureTransform& t) {
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    json j{{"method", t.method},
           {"input_names", t.input_names},
           {"scaler", {{"mean", vec(t.scaler.mean)}, {"std", vec(t.scaler.std)}}},
           {"candidates", t.candidates},
           {"selected", t.selected},
           {"passthrough", t.passthrough},
           {"output_names", t.output_names()}};
    if (t.pca) {
        json comps = json::array();
        for (Eigen::Index r = 0; r < t.pca->components.rows(); ++r) comps.push_back(vec(t.pca->components.row(r).transpose()));
        j["pca"] = {{"mean", vec(t.pca->mean)},
                    {"components", comps},
                    {"explained_variance", vec(t.pca->explained_variance)},
                    {"explained_variance_ratio", vec(t.pca->explained_variance_ratio)}};
    } else {
        j["pca"] = nullptr;
    }
    return j;
}

inline FeatureTransform transform_from_json(const json& j) {
    auto vec = [](const json& a) {
        const auto v = a.get<std::vector<double>>();
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    FeatureTransform t;
    try {
        t.method = j.at("method").get<std::string>();
        t.input_names = j.at("input_names").get<std::vector<std::string>>();
        t.scaler.names = t.input_names;
        t.scaler.mean = vec(j.at("scaler").at("mean"));
        t.scaler.std = vec(j.at("scaler").at("std"));
        t.candidates = j.at("candidates").get<std::vector<std::string>>();
        t.selected = j.at("selected").get<std::vector<std::string>>();
        t.passthrough = j.at("passthrough").get<std::vector<std::string>>();
        if (!j.at("pca").is_null()) {
            featsel::PcaModel m;
            const auto& pj = j.at("pca");
            m.mean = vec(pj.at("mean"));
            const auto& comps = pj.at("components");
            m.components.resize(static_cast<Eigen::Index>(comps.size()), m.mean.size());
            for (std::size_t r = 0; r < comps.size(); ++r) m.components.row(static_cast<Eigen::Index>(r)) = vec(comps[r]).transpose();
            m.explained_variance = vec(pj.at("explained_variance"));
            m.explained_variance_ratio = vec(pj.at("explained_variance_ratio"));
            m.input_names = t.candidates;
            t.pca = std::move(m);
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("model transform: ") + e.what());
    }
    if (t.scaler.mean.size() != static_cast<Eigen::Index>(t.input_names.size()) || t.scaler.std.size() != t.scaler.mean.size())
        throw ValidationError("model transform: scaler width does not match input_names");
    return t;
}

// ---------------------------------------------------------------------------
// Training and evaluation

/// Model-ready windows (features, L) for the given window indices.
inline nn::SampleBatch make_batch(const std::vector<Matrix>& transformed, const fusion::WindowSet& ws,
                                  const std::vector<std::size_t>& which) {
    nn::SampleBatch b;
    for (auto i : which) {
        const auto& w = ws.windows[i];
        b.data.push_back(fusion::window_data(transformed[static_cast<std::size_t>(w.dataset)], w, ws.length));
        b.labels.push_back(w.label);
    }
    return b;
}

inline std::vector<Matrix> transform_all(const Prepared& p, const FeatureTransform& t) {
    std::vector<Matrix> out;
    for (const auto& d : p.datasets) {
        if (d.names != t.input_names) throw ValidationError("data columns do not match the fitted transform");
        out.push_back(t.apply(d.values));
    }
    return out;
}

struct RunResult {
    std::string selector;
    FeatureTransform transform;
    nn::ModelParams params;
    std::uint64_t init_seed = 0;
    std::vector<double> loss_history;
    metrics::MetricsReport report;
    std::vector<std::string> warnings;
};

inline metrics::MetricsReport evaluate_model(const Prepared& p, const FeatureTransform& t, const nn::ModelParams& params,
                                             const RunConfig& cfg, const std::string& selector, int k) {
    const auto transformed = transform_all(p, t);
    const auto test = make_batch(transformed, p.windows, p.split.test);
    const auto pred = nn::predict(test.data, params);
    auto report = metrics::evaluate(selector, test.labels, pred.labels, pred.scores, cfg.averaging);
    report.fingerprint = {selector,         k, cfg.window_length, cfg.window_stride, cfg.seed,
                          fusion::to_string(cfg.split_mode), config_fingerprint(cfg)};
    report.n_train = p.split.train.size();
    report.n_test = p.split.test.size();
    report.selected_features = t.output_names();
    return report;
}

/// Selector fit, training and evaluation on a prepared split.
inline RunResult run_selector(const Prepared& p, const RunConfig& cfg, const SelectorConfig& sel, StageTimer& timer) {
    RunResult r;
    r.selector = sel.method;
    r.transform = timer.run("select:" + sel.method, [&] {
        return fit_transform(p, sel, cfg.derived_seed("selector:" + sel.method), r.warnings);
    });
    for (const auto& w : r.warnings) log("warning: " + w);
    const auto transformed = timer.run("transform:" + sel.method, [&] { return transform_all(p, r.transform); });
    const auto train = make_batch(transformed, p.windows, p.split.train);
    r.init_seed = cfg.derived_seed("init");
    timer.run("train:" + sel.method, [&] {
        nn::TrainConfig tc{cfg.epochs, cfg.batch_size, cfg.lr, cfg.derived_seed("shuffle")};
        const int every = std::max(1, cfg.epochs / 10);
        auto fit = nn::fit(train, tc, nn::init_params(train.channels(), r.init_seed), [&](int epoch, double loss) {
            if ((epoch + 1) % every == 0 || epoch == 0)
                log(sel.method + " epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) +
                    " loss " + cogload::detail::format_fixed(loss, 6));
        });
        r.params = std::move(fit.params);
        r.loss_history = std::move(fit.loss_history);
    });
    r.report = timer.run("eval:" + sel.method, [&] {
        const int k = sel.method == "none" ? static_cast<int>(r.transform.candidates.size() + r.transform.passthrough.size())
                                           : sel.k;
        return evaluate_model(p, r.transform, r.params, cfg, sel.method, k);
    });
    r.report.warnings.insert(r.report.warnings.begin(), r.warnings.begin(), r.warnings.end());
    log(sel.method + ": accuracy " + cogload::detail::format_fixed(r.report.metrics.accuracy, 4));
    return r;
}

// ---------------------------------------------------------------------------
// Artifacts

struct ArtifactLog {
    std::vector<fs::path> files;

    void write(const fs::path& path, const std::string& content) {
        cogload::detail::write_file_atomic(path, content);
        files.push_back(path);
    }
    void add(const std::vector<fs::path>& paths) { files.insert(files.end(), paths.begin(), paths.end()); }
};

inline json model_json(const RunResult& r, const RunConfig& cfg) {
    return {{"format", "cogload-model 1"},
            {"selector", r.selector},
            {"checkpoint", "model.ckpt"},
            {"init_seed", r.init_seed},
            {"window", {{"length", cfg.window_length}, {"stride", cfg.window_stride}}},
            {"split", {{"ratio", cfg.split_ratio}, {"mode", fusion::to_string(cfg.split_mode)}, {"seed", cfg.seed}}},
            {"transform", transform_to_json(r.transform)}};
}

/// model.ckpt, model.json, loss_history.csv and ranking.csv (when ranked).
inline void write_model(const fs::path& dir, const RunResult& r, const RunConfig& cfg, ArtifactLog& log_) {
    log_.write(dir / "model.ckpt", nn::checkpoint_to_string(r.params, r.init_seed));
    log_.write(dir / "model.json", model_json(r, cfg).dump(2) + "\n");
    std::string loss = "epoch,loss\n";
    for (std::size_t e = 0; e < r.loss_history.size(); ++e)
        loss += std::to_string(e + 1) + "," + cogload::detail::format_double(r.loss_history[e]) + "\n";
    log_.write(dir / "loss_history.csv", loss);
    if (r.transform.ranking) log_.write(dir / "ranking.csv", featsel::ranking_to_csv(*r.transform.ranking));
}

struct LoadedModel {
    FeatureTransform transform;
    nn::Checkpoint checkpoint;
    json meta;
};

inline LoadedModel load_model(const fs::path& dir) {
    LoadedModel m;
    const auto text = cogload::detail::read_file(dir / "model.json");
    m.meta = json::parse(text, nullptr, false);
    if (m.meta.is_discarded() || !m.meta.is_object() || m.meta.value("format", "") != "cogload-model 1")
        throw ParseError((dir / "model.json").string(), 0, "not a cogload model description");
    m.transform = transform_from_json(m.meta.at("transform"));
    m.checkpoint = nn::load_checkpoint(dir / m.meta.value("checkpoint", "model.ckpt"));
    if (m.checkpoint.params.input_channels != static_cast<int>(m.transform.output_names().size()))
        throw ValidationError("checkpoint input channels do not match the feature transform");
    return m;
}

/// Config snapshot, seeds, input and data fingerprints, artifact hashes and
/// timings. Written last, atomically.
inline fs::path write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                               const std::vector<fs::path>& inputs, const std::string& data_fingerprint,
                               const ArtifactLog& artifacts, const StageTimer& timer, json extra = json::object()) {
    json m;
    m["command"] = command;
    m["config"] = to_json(cfg);
    m["config_sha256"] = config_fingerprint(cfg);
    m["seeds"] = {{"master", cfg.seed},
                  {"synth", cfg.synth.seed},
                  {"split", cfg.derived_seed("split")},
                  {"init", cfg.derived_seed("init")},
                  {"shuffle", cfg.derived_seed("shuffle")}};
    m["inputs"] = json::array();
    for (const auto& p : inputs) m["inputs"].push_back({{"path", p.string()}, {"sha256", cogload::detail::sha256_file(p)}});
    m["data_sha256"] = data_fingerprint;
    m["artifacts"] = json::array();
    for (const auto& p : artifacts.files)
        m["artifacts"].push_back({{"path", fs::relative(p, dir).generic_string()}, {"sha256", cogload::detail::sha256_file(p)}});
    m["timings_s"] = json::object();
    for (const auto& [name, secs] : timer.timings) m["timings_s"][name] = secs;
    for (auto& [k, v] : extra.items()) m[k] = v;
    const auto path = dir / "manifest.json";
    cogload::detail::write_file_atomic(path, m.dump(2) + "\n");
    return path;
}

}  // namespace cogload::pipeline
