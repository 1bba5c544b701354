#pragma once

// Synthetic multimodal sessions with controllable class structure.
//
// An informative fNIRS channel at load level l has mean l * effect_size *
// noise_sigma; every channel adds a sinusoidal drift and Gaussian noise.
// Driving speed and throttle, and the eye pupil channels, carry a scaled copy
// of the class effect; brake, gaze and the remaining driving channels do not.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cogload/datafusion.hpp"
#include "cogload/detail/hash.hpp"
#include "cogload/detail/text.hpp"
#include "cogload/errors.hpp"

namespace cogload::synth {

using Matrix = Eigen::MatrixXd;

struct ScheduledBlock {
    int level = 0;
    double duration_s = 30.0;
};

inline std::vector<ScheduledBlock> default_schedule() {
    std::vector<ScheduledBlock> out;
    for (int level : {0, 1, 2, 1, 2, 0, 2, 0, 1}) out.push_back({level, 30.0});
    return out;
}

struct SynthConfig {
    std::uint64_t seed = 42;
    double fnirs_hz = 8.0;
    double eye_hz = 120.0;
    double driving_hz = 60.0;
    std::vector<ScheduledBlock> schedule = default_schedule();
    int n_informative_fnirs = 10;
    double effect_size = 3.0;
    double noise_sigma = 1.0;
    double drift_amplitude = 0.5;  // in units of noise_sigma
    double drift_period_s = 30.0;
    int sessions = 3;
    double eye_effect_ratio = 0.5;
    double driving_effect_ratio = 1.0;
    std::vector<std::string> eye_channels = fusion::default_eye_channel_names();

    double duration() const {
        double d = 0.0;
        for (const auto& b : schedule) d += b.duration_s;
        return d;
    }

    void validate() const {
        auto positive = [](double v, const char* what) {
            if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string(what) + " must be positive");
        };
        positive(fnirs_hz, "fnirs_hz");
        positive(eye_hz, "eye_hz");
        positive(driving_hz, "driving_hz");
        positive(noise_sigma, "noise_sigma");
        positive(drift_period_s, "drift_period_s");
        if (schedule.empty()) throw ValidationError("block schedule is empty");
        for (const auto& b : schedule) {
            if (b.level < 0 || b.level > 2) throw ValidationError("block level must be 0, 1 or 2");
            positive(b.duration_s, "block duration");
        }
        if (n_informative_fnirs < 0 || n_informative_fnirs > fusion::kFnirsChannels)
            throw ValidationError("n_informative_fnirs must be in [0, 204]");
        if (!(effect_size >= 0.0)) throw ValidationError("effect_size must be >= 0");
        if (!(drift_amplitude >= 0.0)) throw ValidationError("drift_amplitude must be >= 0");
        if (!(eye_effect_ratio >= 0.0) || !(driving_effect_ratio >= 0.0))
            throw ValidationError("effect ratios must be >= 0");
        if (sessions < 1) throw ValidationError("sessions must be >= 1");
        fusion::eye_schema(eye_channels).validate();
    }
};

struct SynthSession {
    int index = 0;
    fusion::Stream fnirs;
    fusion::Stream eye;
    fusion::Stream driving;
    fusion::LabelTrack labels;
    std::vector<std::string> ground_truth;  // channels whose class means differ
};

/// Informative fNIRS channels for a seed; shared by every session.
inline std::vector<std::string> informative_fnirs_channels(const SynthConfig& cfg) {
    auto names = fusion::fnirs_channel_names();
    std::mt19937_64 rng(cogload::detail::combine(cfg.seed, cogload::detail::name_hash("informative")));
    std::shuffle(names.begin(), names.end(), rng);
    names.resize(static_cast<std::size_t>(cfg.n_informative_fnirs));
    std::sort(names.begin(), names.end());
    return names;
}

inline fusion::LabelTrack schedule_labels(const SynthConfig& cfg) {
    fusion::LabelTrack track;
    double t = 0.0;
    int block = 0;
    for (const auto& b : cfg.schedule) {
        track.intervals.push_back({t, t + b.duration_s, b.level, block++});
        t += b.duration_s;
    }
    return track;
}

namespace detail {

struct ChannelSpec {
    std::string name;
    double base = 0.0;
    double scale = 1.0;
    double effect = 0.0;  // class-mean step per level, in noise units
};

// t_i = i / rate for every i with t_i < duration.
inline std::vector<double> clock(double rate, double duration) {
    std::vector<double> ts;
    for (std::size_t i = 0;; ++i) {
        const double t = static_cast<double>(i) / rate;
        if (!(t < duration)) break;
        ts.push_back(t);
    }
    return ts;
}

inline fusion::Stream render(const SynthConfig& cfg, const fusion::StreamSchema& schema,
                             const std::vector<ChannelSpec>& specs, double rate, const fusion::LabelTrack& labels,
                             std::uint64_t key) {
    fusion::Stream s;
    s.schema = schema;
    s.timestamps = clock(rate, cfg.duration());
    const auto n = static_cast<Eigen::Index>(s.timestamps.size());
    s.values.resize(n, static_cast<Eigen::Index>(specs.size()));
    std::mt19937_64 rng(key);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::vector<double> phase(specs.size());
    for (auto& p : phase) p = phase_dist(rng);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    const double omega = 2.0 * std::numbers::pi / cfg.drift_period_s;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double t = s.timestamps[static_cast<std::size_t>(i)];
        const auto* iv = labels.at(t);
        const double level = iv ? iv->level : 0.0;
        for (std::size_t c = 0; c < specs.size(); ++c) {
            const auto& sp = specs[c];
            const double drift = cfg.drift_amplitude * cfg.noise_sigma * std::sin(omega * t + phase[c]);
            const double signal = level * sp.effect * cfg.noise_sigma + drift + noise(rng);
            s.values(i, static_cast<Eigen::Index>(c)) = sp.base + sp.scale * signal;
        }
    }
    return s;
}

}  // namespace detail

/// Deterministic in (cfg, index).
inline SynthSession generate_session(const SynthConfig& cfg, int index) {
    cfg.validate();
    if (index < 0) throw ValidationError("session index must be >= 0");
    SynthSession s;
    s.index = index;
    s.labels = schedule_labels(cfg);
    const std::uint64_t key = cogload::detail::combine(cfg.seed, static_cast<std::uint64_t>(index));

    const auto informative = informative_fnirs_channels(cfg);
    std::vector<detail::ChannelSpec> fnirs;
    for (const auto& name : fusion::fnirs_channel_names()) {
        const bool inf = std::binary_search(informative.begin(), informative.end(), name);
        fnirs.push_back({name, 0.0, 1.0, inf ? cfg.effect_size : 0.0});
        if (inf && cfg.effect_size > 0.0) s.ground_truth.push_back(name);
    }

    std::vector<detail::ChannelSpec> eye;
    for (const auto& name : cfg.eye_channels) {
        const bool pupil = name.starts_with("pupil");
        const double effect = pupil ? cfg.eye_effect_ratio * cfg.effect_size : 0.0;
        eye.push_back({name, pupil ? 3.5 : 0.0, pupil ? 0.3 : 0.1, effect});
        if (effect > 0.0) s.ground_truth.push_back(name);
    }

    std::vector<detail::ChannelSpec> driving;
    for (const auto& name : fusion::driving_channel_names()) {
        detail::ChannelSpec sp{name, 0.0, 1.0, 0.0};
        if (name == "car_speed") sp = {name, 60.0, 5.0, cfg.driving_effect_ratio * cfg.effect_size};
        else if (name == "throttle") sp = {name, 0.4, 0.1, cfg.driving_effect_ratio * cfg.effect_size};
        else if (name == "brake") sp = {name, 0.05, 0.02, 0.0};
        else if (name == "steering_wheel_angle") sp = {name, 0.0, 10.0, 0.0};
        else sp = {name, 0.0, 0.5, 0.0};
        driving.push_back(sp);
        if (sp.effect > 0.0) s.ground_truth.push_back(name);
    }

    using cogload::detail::combine;
    s.fnirs = detail::render(cfg, fusion::fnirs_schema(), fnirs, cfg.fnirs_hz, s.labels, combine(key, 1));
    s.eye = detail::render(cfg, fusion::eye_schema(cfg.eye_channels), eye, cfg.eye_hz, s.labels, combine(key, 2));
    s.driving = detail::render(cfg, fusion::driving_schema(), driving, cfg.driving_hz, s.labels, combine(key, 3));
    return s;
}

inline std::vector<SynthSession> generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<SynthSession> out;
    for (int i = 0; i < cfg.sessions; ++i) out.push_back(generate_session(cfg, i));
    return out;
}

// ---------------------------------------------------------------------------
// Tabular mode

struct TabularConfig {
    int n_samples = 600;
    int n_informative = 5;
    int n_noise = 45;
    double effect_size = 1.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 7;
};

struct TabularData {
    Matrix values;  // (n_samples, n_informative + n_noise)
    std::vector<std::string> names;
    std::vector<int> labels;
    std::vector<std::string> informative;
};

/// Balanced labels; informative columns have class mean level * effect_size *
/// noise_sigma, noise columns are pure noise. Column positions are shuffled.
inline TabularData generate_tabular(const TabularConfig& cfg) {
    if (cfg.n_samples < 3) throw ValidationError("n_samples must be >= 3");
    if (cfg.n_informative < 0 || cfg.n_noise < 0 || cfg.n_informative + cfg.n_noise < 1)
        throw ValidationError("need at least one feature");
    if (!(cfg.noise_sigma > 0.0)) throw ValidationError("noise_sigma must be positive");
    const int width = cfg.n_informative + cfg.n_noise;
    std::mt19937_64 rng(cfg.seed);
    TabularData d;
    for (int j = 0; j < width; ++j) {
        std::string n = std::to_string(j);
        d.names.push_back("feat_" + std::string(n.size() < 2 ? 2 - n.size() : 0, '0') + n);
    }
    std::vector<int> order(static_cast<std::size_t>(width));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> informative(static_cast<std::size_t>(width), false);
    for (int j = 0; j < cfg.n_informative; ++j) informative[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] = true;
    for (int j = 0; j < width; ++j)
        if (informative[static_cast<std::size_t>(j)]) d.informative.push_back(d.names[static_cast<std::size_t>(j)]);

    for (int i = 0; i < cfg.n_samples; ++i) d.labels.push_back(i % 3);
    std::shuffle(d.labels.begin(), d.labels.end(), rng);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    d.values.resize(cfg.n_samples, width);
    for (int i = 0; i < cfg.n_samples; ++i)
        for (int j = 0; j < width; ++j) {
            const double mean = informative[static_cast<std::size_t>(j)]
                                    ? d.labels[static_cast<std::size_t>(i)] * cfg.effect_size * cfg.noise_sigma
                                    : 0.0;
            d.values(i, j) = mean + noise(rng);
        }
    return d;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const SynthConfig& c) {
    nlohmann::json schedule = nlohmann::json::array();
    for (const auto& b : c.schedule) schedule.push_back({{"level", b.level}, {"duration_s", b.duration_s}});
    return {{"seed", c.seed},
            {"fnirs_hz", c.fnirs_hz},
            {"eye_hz", c.eye_hz},
            {"driving_hz", c.driving_hz},
            {"schedule", schedule},
            {"n_informative_fnirs", c.n_informative_fnirs},
            {"effect_size", c.effect_size},
            {"noise_sigma", c.noise_sigma},
            {"drift_amplitude", c.drift_amplitude},
            {"drift_period_s", c.drift_period_s},
            {"sessions", c.sessions},
            {"eye_effect_ratio", c.eye_effect_ratio},
            {"driving_effect_ratio", c.driving_effect_ratio},
            {"eye_channels", c.eye_channels}};
}

/// Keys absent from `j` keep their current value; unknown keys are rejected.
inline void update_from_json(SynthConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("synth config must be an object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "fnirs_hz") c.fnirs_hz = value.get<double>();
            else if (key == "eye_hz") c.eye_hz = value.get<double>();
            else if (key == "driving_hz") c.driving_hz = value.get<double>();
            else if (key == "n_informative_fnirs") c.n_informative_fnirs = value.get<int>();
            else if (key == "effect_size") c.effect_size = value.get<double>();
            else if (key == "noise_sigma") c.noise_sigma = value.get<double>();
            else if (key == "drift_amplitude") c.drift_amplitude = value.get<double>();
            else if (key == "drift_period_s") c.drift_period_s = value.get<double>();
            else if (key == "sessions") c.sessions = value.get<int>();
            else if (key == "eye_effect_ratio") c.eye_effect_ratio = value.get<double>();
            else if (key == "driving_effect_ratio") c.driving_effect_ratio = value.get<double>();
            else if (key == "eye_channels") c.eye_channels = value.get<std::vector<std::string>>();
            else if (key == "schedule") {
                c.schedule.clear();
                for (const auto& b : value) c.schedule.push_back({b.at("level").get<int>(), b.at("duration_s").get<double>()});
            } else {
                throw ValidationError("unknown synth key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("synth." + key + ": " + e.what());
        }
    }
}

inline std::filesystem::path session_dir(const std::filesystem::path& root, int index) {
    std::string n = std::to_string(index);
    return root / ("session_" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n);
}

/// Writes session_NNN/{fnirs,eye,driving,labels}.csv per session plus
/// synth_manifest.json with the config and ground truth. Returns the paths
/// written.
inline std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& root, const SynthConfig& cfg,
                                                        const std::vector<SynthSession>& sessions) {
    std::vector<std::filesystem::path> written;
    nlohmann::json manifest;
    manifest["config"] = to_json(cfg);
    manifest["informative_fnirs"] = informative_fnirs_channels(cfg);
    manifest["sessions"] = nlohmann::json::array();
    for (const auto& s : sessions) {
        const auto dir = session_dir(root, s.index);
        fusion::save_stream(dir / "fnirs.csv", s.fnirs);
        fusion::save_stream(dir / "eye.csv", s.eye);
        fusion::save_stream(dir / "driving.csv", s.driving);
        fusion::save_labels(dir / "labels.csv", s.labels);
        for (const char* f : {"fnirs.csv", "eye.csv", "driving.csv", "labels.csv"}) written.push_back(dir / f);
        manifest["sessions"].push_back({{"index", s.index},
                                        {"directory", dir.filename().string()},
                                        {"ground_truth", s.ground_truth}});
    }
    cogload::detail::write_file_atomic(root / "synth_manifest.json", manifest.dump(2) + "\n");
    written.push_back(root / "synth_manifest.json");
    return written;
}

}  // namespace cogload::synth
