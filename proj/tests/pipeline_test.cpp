#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "cogload/pipeline.hpp"

using namespace cogload;
using namespace cogload::pipeline;

namespace {

// Six 12 s blocks per session, two sessions: small enough for every selector.
RunConfig small_config() {
    RunConfig c;
    c.synth.schedule = {{0, 12.0}, {1, 12.0}, {2, 12.0}, {2, 12.0}, {0, 12.0}, {1, 12.0}};
    c.synth.drift_period_s = 12.0;
    c.synth.sessions = 2;
    c.window_length = 8;
    c.window_stride = 4;
    c.epochs = 3;
    c.selector.k = 6;
    c.selector.n_trees = 10;
    return c;
}

Prepared small_prepared(const RunConfig& c) { return prepare(acquire(c), c); }

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("cogload_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
    const auto j = default_config_json();
    const auto c = from_json(j);
    EXPECT_EQ(to_json(c), j);
    EXPECT_EQ(c.epochs, 1000);
    EXPECT_EQ(c.window_length, 16);
    EXPECT_EQ(c.selector.method, "extra_trees");
}

TEST(Config, OverridesAndFileMerge) {
    const auto dir = temp_dir("config");
    cogload::detail::write_file_atomic(dir / "c.json", R"({"train": {"epochs": 7}, "synth": {"effect_size": 0.5}})");
    const auto c = load_config(dir / "c.json", {"selector.method=anova", "train.lr=0.01", "split.mode=by_block"});
    EXPECT_EQ(c.epochs, 7);
    EXPECT_EQ(c.synth.effect_size, 0.5);
    EXPECT_EQ(c.selector.method, "anova");
    EXPECT_EQ(c.lr, 0.01);
    EXPECT_EQ(c.split_mode, fusion::SplitMode::by_block);
    EXPECT_EQ(c.batch_size, 32);
}

TEST(Config, RejectsUnknownAndInvalid) {
    EXPECT_THROW(load_config(std::nullopt, {"train.epoch=3"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"nokey"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"train.epochs=0"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"train.epochs=\"many\""}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"selector.method=lasso"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"window.length=4"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"split.ratio=1"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"data.source=streams"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"synth.effect_size=-1"}), ConfigError);
    const auto dir = temp_dir("badconfig");
    cogload::detail::write_file_atomic(dir / "bad.json", "{ not json");
    EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
    cogload::detail::write_file_atomic(dir / "extra.json", R"({"train": {"momentum": 0.9}})");
    EXPECT_THROW(load_config(dir / "extra.json"), ConfigError);
}

TEST(Config, OutputDirectoryPrecedence) {
    RunConfig c;
    ::unsetenv("COGLOAD_OUT_DIR");
    EXPECT_EQ(resolve_output_dir(c, std::nullopt), fs::path("cogload_out"));
    ::setenv("COGLOAD_OUT_DIR", "from_env", 1);
    EXPECT_EQ(resolve_output_dir(c, std::nullopt), fs::path("from_env"));
    c.output_dir = "from_config";
    EXPECT_EQ(resolve_output_dir(c, std::nullopt), fs::path("from_config"));
    EXPECT_EQ(resolve_output_dir(c, std::string("from_flag")), fs::path("from_flag"));
    ::unsetenv("COGLOAD_OUT_DIR");
}

TEST(Config, FingerprintIgnoresOutputDir) {
    RunConfig a, b;
    b.output_dir = "elsewhere";
    EXPECT_EQ(config_fingerprint(a), config_fingerprint(b));
    b.seed = 7;
    EXPECT_NE(config_fingerprint(a), config_fingerprint(b));
    EXPECT_NE(a.derived_seed("split"), a.derived_seed("init"));
}

TEST(Transform, EverySelectorProducesRequestedWidth) {
    const auto c = small_config();
    const auto p = small_prepared(c);
    const std::size_t extra = c.synth.eye_channels.size() + 10;
    for (const auto& method : {"variance_threshold", "pca", "anova", "extra_trees", "random"}) {
        SelectorConfig sel = c.selector;
        sel.method = method;
        std::vector<std::string> warnings;
        const auto t = fit_transform(p, sel, 5, warnings);
        EXPECT_EQ(t.output_names().size(), static_cast<std::size_t>(sel.k) + extra) << method;
        const auto z = t.apply(p.datasets.front().values);
        EXPECT_EQ(z.cols(), static_cast<Eigen::Index>(t.output_names().size()));
        EXPECT_EQ(t.candidates.size(), 204u);
    }
    SelectorConfig none = c.selector;
    none.method = "none";
    std::vector<std::string> warnings;
    EXPECT_EQ(fit_transform(p, none, 5, warnings).output_names().size(), 204u + extra);
}

TEST(Transform, ScopeAllRanksEveryColumn) {
    auto c = small_config();
    c.selector.scope = "all";
    c.selector.method = "anova";
    const auto p = small_prepared(c);
    std::vector<std::string> warnings;
    const auto t = fit_transform(p, c.selector, 1, warnings);
    EXPECT_TRUE(t.passthrough.empty());
    EXPECT_EQ(t.output_names().size(), 6u);
    c.selector.k = 1000;
    EXPECT_THROW(fit_transform(p, c.selector, 1, warnings), ConfigError);
}

TEST(Transform, ScalerFitsTrainingRowsOnly) {
    const auto c = small_config();
    const auto p = small_prepared(c);
    std::vector<std::string> warnings;
    const auto t = fit_transform(p, c.selector, 5, warnings);
    const auto rows = train_rows(p);
    const auto z = t.scaler.apply(rows.values);
    EXPECT_LE(z.colwise().mean().cwiseAbs().maxCoeff(), 1e-9);
    std::size_t all_rows = 0;
    for (const auto& d : p.datasets) all_rows += d.rows();
    EXPECT_LT(static_cast<std::size_t>(rows.values.rows()), all_rows);
}

TEST(Transform, JsonRoundTripIsExact) {
    const auto c = small_config();
    const auto p = small_prepared(c);
    for (const auto& method : {"pca", "anova"}) {
        SelectorConfig sel = c.selector;
        sel.method = method;
        std::vector<std::string> warnings;
        const auto t = fit_transform(p, sel, 5, warnings);
        const auto back = transform_from_json(nlohmann::json::parse(transform_to_json(t).dump()));
        EXPECT_EQ(back.output_names(), t.output_names());
        EXPECT_EQ(back.apply(p.datasets[1].values), t.apply(p.datasets[1].values)) << method;
    }
}

TEST(Run, SelectorRunIsDeterministic) {
    const auto c = small_config();
    const auto p = small_prepared(c);
    StageTimer timer;
    const auto a = run_selector(p, c, c.selector, timer);
    const auto b = run_selector(p, c, c.selector, timer);
    EXPECT_EQ(nn::checkpoint_to_string(a.params, a.init_seed), nn::checkpoint_to_string(b.params, b.init_seed));
    EXPECT_EQ(a.loss_history, b.loss_history);
    EXPECT_EQ(metrics::render_report({a.report}).json, metrics::render_report({b.report}).json);
    EXPECT_EQ(a.report.n_test, p.split.test.size());
    EXPECT_FALSE(timer.timings.empty());
}

TEST(Run, ModelArtifactsReload) {
    const auto c = small_config();
    const auto p = small_prepared(c);
    StageTimer timer;
    const auto r = run_selector(p, c, c.selector, timer);
    const auto dir = temp_dir("model");
    ArtifactLog art;
    write_model(dir, r, c, art);
    const auto m = load_model(dir);
    const auto again = evaluate_model(p, m.transform, m.checkpoint.params, c, "extra_trees", c.selector.k);
    EXPECT_EQ(again.metrics.accuracy, r.report.metrics.accuracy);
    EXPECT_EQ(again.auc, r.report.auc);
    const auto manifest = write_manifest(dir, "test", c, {}, "x", art, timer);
    const auto j = nlohmann::json::parse(cogload::detail::read_file(manifest));
    EXPECT_EQ(j["artifacts"].size(), art.files.size());
    EXPECT_EQ(j["artifacts"][0]["sha256"].get<std::string>().size(), 64u);
}

TEST(Run, StageErrorsCarryExitCodes) {
    StageTimer timer;
    try {
        timer.run("x", [] { throw DivergenceError(2, "boom"); });
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.exit_code(), kDivergence);
        EXPECT_EQ(e.stage(), "x");
    }
    EXPECT_EQ(classify(ConfigError("c")), kConfigFailure);
    EXPECT_EQ(classify(ParseError("f", 1, "p")), kDataFailure);
}

TEST(Acquire, StreamsAndFusedSourcesMatchSynthetic) {
    auto c = small_config();
    const auto dir = temp_dir("acquire");
    synth::write_dataset(dir / "raw", c.synth, synth::generate_dataset(c.synth));
    const auto direct = acquire(c);
    c.data_source = "streams";
    c.data_dir = (dir / "raw").string();
    std::vector<fs::path> inputs;
    const auto from_streams = acquire(c, &inputs);
    EXPECT_EQ(inputs.size(), 8u);
    ASSERT_EQ(from_streams.size(), direct.size());
    EXPECT_EQ(dataset_fingerprint(from_streams), dataset_fingerprint(direct));
    for (const auto& d : direct)
        cogload::detail::write_file_atomic(dir / "fused" / fused_file_name(d.session_id), fusion::dataset_to_csv(d));
    c.data_source = "fused";
    c.data_dir = (dir / "fused").string();
    EXPECT_EQ(dataset_fingerprint(acquire(c)), dataset_fingerprint(direct));
    c.data_dir = (dir / "missing").string();
    EXPECT_THROW(acquire(c), ParseError);
}
