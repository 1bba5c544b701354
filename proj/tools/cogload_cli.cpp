// cogload: command-line front end for the cognitive-load pipeline.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cogload/pipeline.hpp"

namespace pl = cogload::pipeline;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.overrides, "Override a config key: section.key=value (repeatable)");
    cmd->add_option("-o,--out", c.out, "Output directory");
}

struct Context {
    pl::RunConfig cfg;
    fs::path out;
};

Context load(const Common& c) {
    Context ctx;
    ctx.cfg = pl::load_config(c.config.empty() ? std::nullopt : std::optional<fs::path>(c.config), c.overrides);
    ctx.out = pl::resolve_output_dir(ctx.cfg, c.out.empty() ? std::nullopt : std::optional<std::string>(c.out));
    fs::create_directories(ctx.out);
    pl::log("output directory " + ctx.out.string());
    return ctx;
}

int cmd_synth(const Common& c) {
    auto ctx = load(c);
    pl::StageTimer timer;
    pl::ArtifactLog art;
    auto sessions = timer.run("synth", [&] { return cogload::synth::generate_dataset(ctx.cfg.synth); });
    art.add(timer.run("write", [&] { return cogload::synth::write_dataset(ctx.out, ctx.cfg.synth, sessions); }));
    pl::write_manifest(ctx.out, "synth", ctx.cfg, {}, "", art, timer);
    return pl::kOk;
}

int cmd_fuse(const Common& c) {
    auto ctx = load(c);
    pl::StageTimer timer;
    pl::ArtifactLog art;
    std::vector<fs::path> inputs;
    if (ctx.cfg.data_source == "fused") throw pl::ConfigError("fuse needs data.source 'synthetic' or 'streams'");
    auto datasets = timer.run("acquire", [&] { return pl::acquire(ctx.cfg, &inputs); });
    timer.run("write", [&] {
        for (const auto& d : datasets)
            art.write(ctx.out / "fused" / pl::fused_file_name(d.session_id), cogload::fusion::dataset_to_csv(d));
        Eigen::Index n = 0;
        for (const auto& d : datasets) n += d.values.rows();
        Eigen::MatrixXd all(n, datasets.front().values.cols());
        Eigen::Index r = 0;
        for (const auto& d : datasets) {
            all.middleRows(r, d.values.rows()) = d.values;
            r += d.values.rows();
        }
        const auto corr = cogload::fusion::correlation_matrix(all, datasets.front().names);
        art.write(ctx.out / "correlation.csv", cogload::fusion::correlation_to_csv(corr));
        art.write(ctx.out / "correlation.svg", cogload::fusion::correlation_to_svg(corr));
    });
    pl::write_manifest(ctx.out, "fuse", ctx.cfg, inputs, pl::dataset_fingerprint(datasets), art, timer);
    return pl::kOk;
}

struct Loaded {
    Context ctx;
    pl::Prepared prepared;
    std::vector<fs::path> inputs;
    std::string data_sha;
};

Loaded load_data(const Common& c, pl::StageTimer& timer) {
    Loaded l{load(c), {}, {}, {}};
    auto datasets = timer.run("acquire", [&] { return pl::acquire(l.ctx.cfg, &l.inputs); });
    l.data_sha = pl::dataset_fingerprint(datasets);
    l.prepared = timer.run("window", [&] { return pl::prepare(std::move(datasets), l.ctx.cfg); });
    return l;
}

int cmd_select(const Common& c) {
    pl::StageTimer timer;
    auto l = load_data(c, timer);
    pl::ArtifactLog art;
    std::vector<std::string> warnings;
    const auto& sel = l.ctx.cfg.selector;
    auto t = timer.run("select:" + sel.method, [&] {
        return pl::fit_transform(l.prepared, sel, l.ctx.cfg.derived_seed("selector:" + sel.method), warnings);
    });
    for (const auto& w : warnings) pl::log("warning: " + w);
    if (t.ranking) art.write(l.ctx.out / "ranking.csv", cogload::featsel::ranking_to_csv(*t.ranking));
    nlohmann::json j = pl::transform_to_json(t);
    j["warnings"] = warnings;
    art.write(l.ctx.out / "selection.json", j.dump(2) + "\n");
    pl::write_manifest(l.ctx.out, "select", l.ctx.cfg, l.inputs, l.data_sha, art, timer);
    for (const auto& n : t.output_names()) std::cout << n << "\n";
    return pl::kOk;
}

void write_run(const fs::path& out, const pl::RunResult& r, const pl::RunConfig& cfg, pl::ArtifactLog& art) {
    pl::write_model(out, r, cfg, art);
}

int cmd_train(const Common& c) {
    pl::StageTimer timer;
    auto l = load_data(c, timer);
    pl::ArtifactLog art;
    auto r = pl::run_selector(l.prepared, l.ctx.cfg, l.ctx.cfg.selector, timer);
    write_run(l.ctx.out, r, l.ctx.cfg, art);
    pl::write_manifest(l.ctx.out, "train", l.ctx.cfg, l.inputs, l.data_sha, art, timer);
    return pl::kOk;
}

int cmd_eval(const Common& c, const std::string& model_dir) {
    pl::StageTimer timer;
    auto ctx = load(c);
    auto model = timer.run("load-model", [&] { return pl::load_model(model_dir); });
    // Windowing and split come from the model so the test side matches training.
    ctx.cfg.window_length = model.meta.at("window").at("length").get<int>();
    ctx.cfg.window_stride = model.meta.at("window").at("stride").get<int>();
    ctx.cfg.split_ratio = model.meta.at("split").at("ratio").get<double>();
    ctx.cfg.split_mode = cogload::fusion::parse_split_mode(model.meta.at("split").at("mode").get<std::string>());
    ctx.cfg.seed = model.meta.at("split").at("seed").get<std::uint64_t>();
    std::vector<fs::path> inputs;
    auto datasets = timer.run("acquire", [&] { return pl::acquire(ctx.cfg, &inputs); });
    const auto data_sha = pl::dataset_fingerprint(datasets);
    auto prepared = timer.run("window", [&] { return pl::prepare(std::move(datasets), ctx.cfg); });
    const std::string selector = model.meta.at("selector").get<std::string>();
    auto report = timer.run("eval", [&] {
        const int k = static_cast<int>(model.transform.pca ? model.transform.pca->components.rows()
                                                           : static_cast<Eigen::Index>(model.transform.selected.size()));
        return pl::evaluate_model(prepared, model.transform, model.checkpoint.params, ctx.cfg, selector, k);
    });
    pl::ArtifactLog art;
    art.add(cogload::metrics::write_report(ctx.out, {report}));
    std::cout << cogload::metrics::render_report({report}).text;
    inputs.push_back(fs::path(model_dir) / "model.json");
    inputs.push_back(fs::path(model_dir) / "model.ckpt");
    pl::write_manifest(ctx.out, "eval", ctx.cfg, inputs, data_sha, art, timer);
    return pl::kOk;
}

int cmd_pipeline(const Common& c) {
    pl::StageTimer timer;
    auto l = load_data(c, timer);
    pl::ArtifactLog art;
    auto r = pl::run_selector(l.prepared, l.ctx.cfg, l.ctx.cfg.selector, timer);
    timer.run("artifacts", [&] {
        write_run(l.ctx.out, r, l.ctx.cfg, art);
        art.add(cogload::metrics::write_report(l.ctx.out, {r.report}));
        const auto rows = pl::train_rows(l.prepared);
        const auto z = r.transform.apply(rows.values);
        const auto corr = cogload::fusion::correlation_matrix(z, r.transform.output_names());
        art.write(l.ctx.out / "correlation.csv", cogload::fusion::correlation_to_csv(corr));
        art.write(l.ctx.out / "correlation.svg", cogload::fusion::correlation_to_svg(corr));
    });
    std::cout << cogload::metrics::render_report({r.report}).text;
    pl::write_manifest(l.ctx.out, "pipeline", l.ctx.cfg, l.inputs, l.data_sha, art, timer);
    return pl::kOk;
}

int cmd_compare(const Common& c) {
    pl::StageTimer timer;
    auto l = load_data(c, timer);
    const auto& cfg = l.ctx.cfg;
    pl::ArtifactLog art;
    std::vector<cogload::metrics::MetricsReport> reports;
    std::vector<cogload::metrics::MetricsReport> control;
    nlohmann::json failures = nlohmann::json::array();
    int first_code = pl::kOk;

    auto attempt = [&](const pl::SelectorConfig& sel, std::vector<cogload::metrics::MetricsReport>& into) {
        try {
            auto r = pl::run_selector(l.prepared, cfg, sel, timer);
            pl::write_model(l.ctx.out / "models" / sel.method, r, cfg, art);
            into.push_back(std::move(r.report));
        } catch (const std::exception& e) {
            const int code = pl::classify(e);
            if (code == pl::kConfigFailure) throw;
            pl::log("selector " + sel.method + " failed: " + e.what());
            failures.push_back({{"selector", sel.method}, {"error", e.what()}, {"exit_code", code}});
            if (first_code == pl::kOk) first_code = code;
        }
    };
    for (const auto& m : cfg.compare_selectors) {
        auto sel = cfg.selector;
        sel.method = m;
        attempt(sel, reports);
    }
    if (cfg.compare_control) {
        auto sel = cfg.selector;
        sel.method = "random";
        sel.k = cfg.control_k;
        attempt(sel, control);
    }
    if (reports.empty() && control.empty()) return first_code;
    art.add(cogload::metrics::write_report(l.ctx.out, reports, control));
    std::cout << cogload::metrics::render_report(reports, control).text;
    pl::write_manifest(l.ctx.out, "compare-selectors", cfg, l.inputs, l.data_sha, art, timer, {{"failures", failures}});
    return failures.empty() ? pl::kOk : pl::kPartialFailure;
}

int cmd_config(const Common& c) {
    const auto cfg = pl::load_config(c.config.empty() ? std::nullopt : std::optional<fs::path>(c.config), c.overrides);
    std::cout << pl::to_json(cfg).dump(2) << "\n";
    return pl::kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cognitive-load classification from fused fNIRS, eye-tracking and driving signals"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress logging");

    Common common;
    std::string model_dir;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-session dataset");
    auto* fuse = app.add_subcommand("fuse", "Align and fuse raw streams into per-session CSVs");
    auto* select = app.add_subcommand("select", "Fit the configured feature selector and write its ranking");
    auto* train = app.add_subcommand("train", "Select features and train the classifier");
    auto* eval = app.add_subcommand("eval", "Evaluate a trained model on the test split");
    auto* pipeline = app.add_subcommand("pipeline", "Run every stage end to end");
    auto* compare = app.add_subcommand("compare-selectors", "Train and evaluate one model per selector");
    auto* config = app.add_subcommand("config", "Print the resolved configuration");
    for (auto* cmd : {synth, fuse, select, train, eval, pipeline, compare, config}) add_common(cmd, common);
    eval->add_option("-m,--model", model_dir, "Directory holding model.json and model.ckpt")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? pl::kOk : pl::kConfigFailure;
    }
    pl::quiet() = quiet;

    try {
        if (*synth) return cmd_synth(common);
        if (*fuse) return cmd_fuse(common);
        if (*select) return cmd_select(common);
        if (*train) return cmd_train(common);
        if (*eval) return cmd_eval(common, model_dir);
        if (*pipeline) return cmd_pipeline(common);
        if (*compare) return cmd_compare(common);
        if (*config) return cmd_config(common);
    } catch (const std::exception& e) {
        std::cerr << "[cogload] error: " << e.what() << std::endl;
        return pl::classify(e);
    }
    return pl::kOk;
}
