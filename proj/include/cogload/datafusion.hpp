#pragma once

// Multimodal ingest and fusion: stream CSVs, label tracks, bucket-mean
// downsampling onto the fNIRS clock, standardization, correlation, windowing
// and train/test splitting.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cogload/detail/csv.hpp"
#include "cogload/detail/text.hpp"
#include "cogload/errors.hpp"

namespace cogload::fusion {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kFnirsPairs = 102;
inline constexpr int kFnirsChannels = 2 * kFnirsPairs;
inline constexpr int kMinWindow = 5;
inline constexpr const char* kTimestampColumn = "timestamp_s";

// ---------------------------------------------------------------------------
// Schemas

/// ch001_HbO2 .. ch102_HbO2 followed by ch001_HbR .. ch102_HbR.
inline std::vector<std::string> fnirs_channel_names() {
    std::vector<std::string> out;
    for (const char* suffix : {"HbO2", "HbR"})
        for (int i = 1; i <= kFnirsPairs; ++i) {
            std::string n = std::to_string(i);
            out.push_back("ch" + std::string(3 - n.size(), '0') + n + "_" + suffix);
        }
    return out;
}

inline std::vector<std::string> driving_channel_names() {
    return {"car_speed",           "angular_velocity_x",  "angular_velocity_y", "angular_velocity_z",
            "linear_acceleration_x", "linear_acceleration_y", "linear_acceleration_z",
            "steering_wheel_angle", "throttle",           "brake"};
}

inline std::vector<std::string> default_eye_channel_names() {
    return {"pupil_diameter_left", "pupil_diameter_right", "gaze_x", "gaze_y"};
}

enum class Modality { fnirs, eye, driving };

inline std::string to_string(Modality m) {
    switch (m) {
        case Modality::fnirs: return "fnirs";
        case Modality::eye: return "eye";
        case Modality::driving: return "driving";
    }
    return "?";
}

struct StreamSchema {
    Modality modality = Modality::fnirs;
    std::vector<std::string> channels;

    void validate() const {
        if (channels.empty()) throw ValidationError(to_string(modality) + " schema has no channels");
        std::set<std::string> seen;
        for (const auto& c : channels) {
            if (c == kTimestampColumn) throw ValidationError("channel may not be named timestamp_s");
            if (!seen.insert(c).second) throw ValidationError("duplicate channel '" + c + "'");
        }
        if (modality == Modality::fnirs) {
            if (channels.size() != static_cast<std::size_t>(kFnirsChannels))
                throw ValidationError("fnirs stream needs exactly 204 channels, got " + std::to_string(channels.size()));
            for (const auto& c : channels)
                if (!c.ends_with("O2") && !c.ends_with("R"))
                    throw ValidationError("fnirs channel '" + c + "' must end in O2 or R");
        }
        if (modality == Modality::driving && channels != driving_channel_names())
            throw ValidationError("driving stream must have the 10 standard channels in order");
    }
};

inline StreamSchema fnirs_schema() { return {Modality::fnirs, fnirs_channel_names()}; }
inline StreamSchema driving_schema() { return {Modality::driving, driving_channel_names()}; }
inline StreamSchema eye_schema(std::vector<std::string> channels = default_eye_channel_names()) {
    return {Modality::eye, std::move(channels)};
}

// ---------------------------------------------------------------------------
// Streams

/// values(i, c) is channel c at timestamps[i]. NaN marks a missing value.
struct Stream {
    StreamSchema schema;
    std::vector<double> timestamps;
    Matrix values;

    std::size_t size() const { return timestamps.size(); }
    const std::vector<std::string>& channels() const { return schema.channels; }

    void validate() const {
        schema.validate();
        if (values.rows() != static_cast<Eigen::Index>(timestamps.size()) ||
            values.cols() != static_cast<Eigen::Index>(schema.channels.size()))
            throw DimensionError(to_string(schema.modality) + " stream: values do not match timestamps x channels");
        for (std::size_t i = 0; i < timestamps.size(); ++i) {
            if (!std::isfinite(timestamps[i])) throw NumericError("non-finite timestamp at row " + std::to_string(i));
            if (i > 0 && !(timestamps[i] > timestamps[i - 1]))
                throw ValidationError("timestamps not strictly increasing at row " + std::to_string(i));
        }
    }
};

inline std::string stream_to_csv(const Stream& s) {
    std::string out = kTimestampColumn;
    for (const auto& c : s.channels()) out += "," + c;
    out += "\n";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += cogload::detail::format_double(s.timestamps[i]);
        for (Eigen::Index c = 0; c < s.values.cols(); ++c) {
            out += ',';
            out += cogload::detail::format_cell(s.values(static_cast<Eigen::Index>(i), c));
        }
        out += '\n';
    }
    return out;
}

/// Header must be timestamp_s followed by exactly the schema channels.
inline Stream stream_from_csv(std::string_view text, const StreamSchema& schema,
                              const std::string& source = "<stream>") {
    schema.validate();
    const auto table = cogload::detail::parse_csv(text, source);
    const auto& h = table.header;
    if (h.empty() || h[0] != kTimestampColumn) throw ParseError(source, 1, "first column must be timestamp_s");
    std::set<std::string_view> present(h.begin() + 1, h.end());
    for (const auto& c : schema.channels)
        if (!present.count(c)) throw ParseError(source, 1, "missing column '" + c + "'");
    if (h.size() != schema.channels.size() + 1)
        throw ParseError(source, 1, "expected " + std::to_string(schema.channels.size() + 1) + " columns, found " +
                                        std::to_string(h.size()));
    for (std::size_t c = 0; c < schema.channels.size(); ++c)
        if (h[c + 1] != schema.channels[c])
            throw ParseError(source, 1, "column " + std::to_string(c + 2) + " is '" + std::string(h[c + 1]) +
                                            "', expected '" + schema.channels[c] + "'");

    Stream s;
    s.schema = schema;
    s.values.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(schema.channels.size()));
    s.timestamps.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (row.fields.size() != h.size())
            throw ParseError(source, row.line, "expected " + std::to_string(h.size()) + " fields, found " +
                                                   std::to_string(row.fields.size()));
        auto ts = cogload::detail::parse_double(row.fields[0]);
        if (!ts || !std::isfinite(*ts)) throw ParseError(source, row.line, "bad timestamp");
        if (!s.timestamps.empty()) {
            if (*ts == s.timestamps.back()) throw ParseError(source, row.line, "duplicated timestamp");
            if (*ts < s.timestamps.back()) throw ParseError(source, row.line, "timestamp goes backwards");
        }
        s.timestamps.push_back(*ts);
        for (std::size_t c = 1; c < h.size(); ++c)
            s.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) =
                cogload::detail::parse_cell(row.fields[c], source, row.line, h[c]);
    }
    return s;
}

inline Stream load_stream(const std::filesystem::path& path, const StreamSchema& schema) {
    return stream_from_csv(cogload::detail::read_file(path), schema, path.string());
}

inline void save_stream(const std::filesystem::path& path, const Stream& s) {
    cogload::detail::write_file_atomic(path, stream_to_csv(s));
}

// ---------------------------------------------------------------------------
// Labels

struct LabelInterval {
    double start = 0.0;  // inclusive
    double end = 0.0;    // exclusive
    int level = 0;
    int block_id = 0;
};

struct LabelTrack {
    std::vector<LabelInterval> intervals;

    void validate() const {
        for (std::size_t i = 0; i < intervals.size(); ++i) {
            const auto& iv = intervals[i];
            if (!(iv.end > iv.start)) throw ValidationError("label interval " + std::to_string(i) + " is empty");
            if (iv.level < 0 || iv.level > 2) throw ValidationError("label level must be 0, 1 or 2");
            if (i > 0 && iv.start < intervals[i - 1].end)
                throw ValidationError("label intervals overlap or are unordered at interval " + std::to_string(i));
        }
    }

    /// Interval containing t, or nullptr.
    const LabelInterval* at(double t) const {
        auto it = std::upper_bound(intervals.begin(), intervals.end(), t,
                                   [](double v, const LabelInterval& iv) { return v < iv.start; });
        if (it == intervals.begin()) return nullptr;
        --it;
        return t < it->end ? &*it : nullptr;
    }
};

inline std::string labels_to_csv(const LabelTrack& track) {
    std::string out = "start_s,end_s,level,block_id\n";
    for (const auto& iv : track.intervals)
        out += cogload::detail::format_double(iv.start) + "," + cogload::detail::format_double(iv.end) + "," +
               std::to_string(iv.level) + "," + std::to_string(iv.block_id) + "\n";
    return out;
}

inline LabelTrack labels_from_csv(std::string_view text, const std::string& source = "<labels>") {
    const auto table = cogload::detail::parse_csv(text, source);
    const std::vector<std::string_view> want{"start_s", "end_s", "level", "block_id"};
    if (table.header != want) throw ParseError(source, 1, "expected header start_s,end_s,level,block_id");
    LabelTrack track;
    for (const auto& row : table.rows) {
        if (row.fields.size() != 4) throw ParseError(source, row.line, "expected 4 fields");
        auto start = cogload::detail::parse_double(row.fields[0]);
        auto end = cogload::detail::parse_double(row.fields[1]);
        auto level = cogload::detail::parse_int(row.fields[2]);
        auto block = cogload::detail::parse_int(row.fields[3]);
        if (!start || !end || !level || !block) throw ParseError(source, row.line, "non-numeric field");
        if (*level < 0 || *level > 2) throw ParseError(source, row.line, "level must be 0, 1 or 2");
        if (!(*end > *start)) throw ParseError(source, row.line, "end_s must exceed start_s");
        if (!track.intervals.empty() && *start < track.intervals.back().end)
            throw ParseError(source, row.line, "interval overlaps the previous one");
        track.intervals.push_back({*start, *end, static_cast<int>(*level), static_cast<int>(*block)});
    }
    return track;
}

inline LabelTrack load_labels(const std::filesystem::path& path) {
    return labels_from_csv(cogload::detail::read_file(path), path.string());
}

inline void save_labels(const std::filesystem::path& path, const LabelTrack& track) {
    cogload::detail::write_file_atomic(path, labels_to_csv(track));
}

// ---------------------------------------------------------------------------
// Downsampling

/// For each target t with period P (mean spacing of the targets) the output
/// is the mean of the source samples in [t - P/2, t + P/2); an empty bucket
/// takes the nearest source sample (earlier one on ties).
inline Stream downsample(const Stream& s, std::span<const double> targets) {
    if (s.size() == 0) throw RangeError(to_string(s.schema.modality) + " stream is empty");
    const double first = s.timestamps.front();
    const double last = s.timestamps.back();
    const std::size_t n = targets.size();
    const double period = n >= 2 ? (targets[n - 1] - targets[0]) / static_cast<double>(n - 1) : 0.0;

    Stream out;
    out.schema = s.schema;
    out.timestamps.assign(targets.begin(), targets.end());
    out.values.resize(static_cast<Eigen::Index>(n), s.values.cols());
    const auto& ts = s.timestamps;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = targets[i];
        if (t < first || t > last)
            throw RangeError("target " + cogload::detail::format_double(t) + " s is outside the " +
                             to_string(s.schema.modality) + " coverage [" + cogload::detail::format_double(first) + ", " +
                             cogload::detail::format_double(last) + "]");
        const auto lo = std::lower_bound(ts.begin(), ts.end(), t - period / 2.0) - ts.begin();
        const auto hi = std::lower_bound(ts.begin(), ts.end(), t + period / 2.0) - ts.begin();
        auto row = out.values.row(static_cast<Eigen::Index>(i));
        if (hi > lo) {
            row = s.values.row(lo);
            for (auto k = lo + 1; k < hi; ++k) row += s.values.row(k);
            row /= static_cast<double>(hi - lo);
        } else {
            auto k = std::lower_bound(ts.begin(), ts.end(), t) - ts.begin();
            if (k == static_cast<std::ptrdiff_t>(ts.size()) || (k > 0 && t - ts[k - 1] <= ts[k] - t)) --k;
            row = s.values.row(k);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Alignment

/// Fused rows at the fNIRS rate. Columns are fNIRS, then eye, then driving.
struct AlignedDataset {
    std::vector<double> timestamps;
    Matrix values;  // (rows, features)
    std::vector<std::string> names;
    std::vector<int> labels;
    std::vector<int> block_ids;
    int session_id = 0;
    std::size_t dropped_unlabeled = 0;
    std::size_t dropped_missing = 0;

    std::size_t rows() const { return timestamps.size(); }

    std::size_t column(const std::string& name) const {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw ValidationError("unknown feature '" + name + "'");
        return static_cast<std::size_t>(it - names.begin());
    }
};

/// Aligns up to three streams onto the fNIRS clock restricted to their common
/// time span. eye and driving may be null. An empty selection keeps every
/// fNIRS channel.
inline AlignedDataset align(const Stream& fnirs, const Stream* eye, const Stream* driving, const LabelTrack& labels,
                            const std::vector<std::string>& selected_fnirs = {}, int session_id = 0) {
    fnirs.validate();
    labels.validate();
    std::vector<const Stream*> others;
    for (const Stream* s : {eye, driving})
        if (s) {
            s->validate();
            others.push_back(s);
        }
    if (fnirs.size() == 0) throw RangeError("fnirs stream is empty");
    double lo = fnirs.timestamps.front(), hi = fnirs.timestamps.back();
    for (const Stream* s : others) {
        if (s->size() == 0) throw RangeError(to_string(s->schema.modality) + " stream is empty");
        lo = std::max(lo, s->timestamps.front());
        hi = std::min(hi, s->timestamps.back());
    }
    if (lo > hi) throw RangeError("streams do not overlap in time");

    std::vector<std::size_t> fnirs_cols;
    if (selected_fnirs.empty()) {
        fnirs_cols.resize(fnirs.channels().size());
        std::iota(fnirs_cols.begin(), fnirs_cols.end(), 0);
    } else {
        for (const auto& name : selected_fnirs) {
            auto it = std::find(fnirs.channels().begin(), fnirs.channels().end(), name);
            if (it == fnirs.channels().end()) throw ValidationError("selected fnirs channel '" + name + "' not found");
            fnirs_cols.push_back(static_cast<std::size_t>(it - fnirs.channels().begin()));
        }
    }

    std::vector<std::size_t> master;
    for (std::size_t i = 0; i < fnirs.size(); ++i)
        if (fnirs.timestamps[i] >= lo && fnirs.timestamps[i] <= hi) master.push_back(i);
    std::vector<double> clock;
    for (auto i : master) clock.push_back(fnirs.timestamps[i]);

    std::vector<Stream> resampled;
    for (const Stream* s : others) resampled.push_back(downsample(*s, clock));

    AlignedDataset d;
    d.session_id = session_id;
    for (auto c : fnirs_cols) d.names.push_back(fnirs.channels()[c]);
    for (const auto& r : resampled)
        for (const auto& c : r.channels()) d.names.push_back(c);
    std::set<std::string> unique(d.names.begin(), d.names.end());
    if (unique.size() != d.names.size()) throw ValidationError("feature names collide across streams");

    const auto width = static_cast<Eigen::Index>(d.names.size());
    Matrix buffer(static_cast<Eigen::Index>(master.size()), width);
    Eigen::Index kept = 0;
    for (std::size_t r = 0; r < master.size(); ++r) {
        const LabelInterval* iv = labels.at(clock[r]);
        if (!iv) {
            ++d.dropped_unlabeled;
            continue;
        }
        auto row = buffer.row(kept);
        Eigen::Index c = 0;
        for (auto fc : fnirs_cols) row(c++) = fnirs.values(static_cast<Eigen::Index>(master[r]), static_cast<Eigen::Index>(fc));
        for (const auto& s : resampled) {
            row.segment(c, s.values.cols()) = s.values.row(static_cast<Eigen::Index>(r));
            c += s.values.cols();
        }
        if (!row.allFinite()) {
            ++d.dropped_missing;
            continue;
        }
        d.timestamps.push_back(clock[r]);
        d.labels.push_back(iv->level);
        d.block_ids.push_back(iv->block_id);
        ++kept;
    }
    d.values = buffer.topRows(kept);
    return d;
}

inline std::string dataset_to_csv(const AlignedDataset& d) {
    std::string out = "timestamp_s,label,block_id";
    for (const auto& n : d.names) out += "," + n;
    out += "\n";
    for (std::size_t r = 0; r < d.rows(); ++r) {
        out += cogload::detail::format_double(d.timestamps[r]) + "," + std::to_string(d.labels[r]) + "," +
               std::to_string(d.block_ids[r]);
        for (Eigen::Index c = 0; c < d.values.cols(); ++c) {
            out += ',';
            out += cogload::detail::format_double(d.values(static_cast<Eigen::Index>(r), c));
        }
        out += '\n';
    }
    return out;
}

inline AlignedDataset dataset_from_csv(std::string_view text, int session_id = 0,
                                       const std::string& source = "<dataset>") {
    const auto table = cogload::detail::parse_csv(text, source);
    const auto& h = table.header;
    if (h.size() < 4 || h[0] != "timestamp_s" || h[1] != "label" || h[2] != "block_id")
        throw ParseError(source, 1, "expected header timestamp_s,label,block_id,<features...>");
    AlignedDataset d;
    d.session_id = session_id;
    for (std::size_t c = 3; c < h.size(); ++c) d.names.emplace_back(h[c]);
    std::set<std::string> unique(d.names.begin(), d.names.end());
    if (unique.size() != d.names.size()) throw ParseError(source, 1, "duplicate feature names");
    d.values.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(d.names.size()));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (row.fields.size() != h.size()) throw ParseError(source, row.line, "wrong number of fields");
        auto ts = cogload::detail::parse_double(row.fields[0]);
        auto label = cogload::detail::parse_int(row.fields[1]);
        auto block = cogload::detail::parse_int(row.fields[2]);
        if (!ts || !label || !block) throw ParseError(source, row.line, "non-numeric field");
        if (*label < 0 || *label > 2) throw ParseError(source, row.line, "label must be 0, 1 or 2");
        if (!d.timestamps.empty() && !(*ts > d.timestamps.back()))
            throw ParseError(source, row.line, "timestamps not strictly increasing");
        d.timestamps.push_back(*ts);
        d.labels.push_back(static_cast<int>(*label));
        d.block_ids.push_back(static_cast<int>(*block));
        for (std::size_t c = 3; c < h.size(); ++c) {
            const double v = cogload::detail::parse_cell(row.fields[c], source, row.line, h[c]);
            if (!std::isfinite(v)) throw ParseError(source, row.line, "missing value in column '" + std::string(h[c]) + "'");
            d.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 3)) = v;
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Standardization

/// z = (x - mean) / std with population statistics.
struct Scaler {
    std::vector<std::string> names;
    Vector mean;
    Vector std;

    Matrix apply(const Matrix& rows) const {
        if (rows.cols() != mean.size())
            throw DimensionError("feature axis: scaler fitted on " + std::to_string(mean.size()) + " features, got " +
                                 std::to_string(rows.cols()));
        return ((rows.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array()).matrix();
    }

    Matrix invert(const Matrix& z) const {
        if (z.cols() != mean.size()) throw DimensionError("feature axis: scaler width mismatch");
        return ((z.array().rowwise() * std.transpose().array()).rowwise() + mean.transpose().array()).matrix();
    }
};

inline Scaler fit_scaler(const Matrix& rows, const std::vector<std::string>& names) {
    if (rows.rows() < 2) throw ValidationError("scaler needs at least 2 training rows");
    if (static_cast<Eigen::Index>(names.size()) != rows.cols()) throw DimensionError("feature axis: names vs columns");
    if (!rows.allFinite()) throw NumericError("scaler input contains non-finite values");
    Scaler s;
    s.names = names;
    s.mean = rows.colwise().mean().transpose();
    s.std = ((rows.rowwise() - s.mean.transpose()).array().square().colwise().mean().sqrt()).transpose();
    std::vector<std::string> flat;
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
        // A constant column can leave a few ulps of spread from the mean's rounding.
        const double scale = std::max(1.0, rows.col(c).cwiseAbs().maxCoeff());
        if (!(s.std(c) > 1e-12 * scale)) flat.push_back(names[static_cast<std::size_t>(c)]);
    }
    if (!flat.empty()) throw ValidationError("zero-variance feature(s): " + cogload::detail::join(flat, ", "));
    return s;
}

inline Matrix apply_scaler(const Scaler& s, const Matrix& rows) { return s.apply(rows); }

// ---------------------------------------------------------------------------
// Correlation

struct CorrelationMatrix {
    std::vector<std::string> names;
    Matrix values;
};

/// Pearson correlation between columns. The diagonal is exactly 1; a constant
/// column correlates 0 with every other column.
inline CorrelationMatrix correlation_matrix(const Matrix& rows, const std::vector<std::string>& names) {
    if (rows.rows() < 2) throw ValidationError("correlation needs at least 2 rows");
    if (static_cast<Eigen::Index>(names.size()) != rows.cols()) throw DimensionError("feature axis: names vs columns");
    const Matrix centered = rows.rowwise() - rows.colwise().mean();
    const Matrix cross = centered.transpose() * centered;
    const Eigen::Index p = rows.cols();
    Vector norm(p);
    std::vector<bool> flat(static_cast<std::size_t>(p));
    for (Eigen::Index c = 0; c < p; ++c) {
        norm(c) = std::sqrt(cross(c, c));
        const double scale = std::max(1.0, rows.col(c).cwiseAbs().maxCoeff());
        flat[static_cast<std::size_t>(c)] = !(norm(c) > 1e-12 * scale);
    }
    CorrelationMatrix out{names, Matrix::Identity(p, p)};
    for (Eigen::Index a = 0; a < p; ++a)
        for (Eigen::Index b = a + 1; b < p; ++b) {
            double r = 0.0;
            if (!flat[static_cast<std::size_t>(a)] && !flat[static_cast<std::size_t>(b)])
                r = std::clamp(cross(a, b) / (norm(a) * norm(b)), -1.0, 1.0);
            out.values(a, b) = r;
            out.values(b, a) = r;
        }
    return out;
}

inline std::string correlation_to_csv(const CorrelationMatrix& m) {
    std::string out = "feature";
    for (const auto& n : m.names) out += "," + n;
    out += "\n";
    for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
        out += m.names[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < m.values.cols(); ++c) out += "," + cogload::detail::format_double(m.values(r, c));
        out += "\n";
    }
    return out;
}

namespace detail {

// Blue (-1) through white (0) to red (+1).
inline std::string diverging_color(double v) {
    v = std::clamp(v, -1.0, 1.0);
    const auto mix = [](double a, double b, double t) { return static_cast<int>(std::lround(a + (b - a) * t)); };
    int r, g, b;
    if (v < 0) {
        r = mix(255, 33, -v);
        g = mix(255, 102, -v);
        b = mix(255, 172, -v);
    } else {
        r = mix(255, 178, v);
        g = mix(255, 24, v);
        b = mix(255, 43, v);
    }
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace detail

/// Heatmap of the matrix, one square cell per pair.
inline std::string correlation_to_svg(const CorrelationMatrix& m, int cell = 12) {
    const int p = static_cast<int>(m.values.rows());
    const int margin = 160;
    const int size = margin + p * cell + 10;
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(size) + "\" height=\"" +
                      std::to_string(size) + "\" font-family=\"sans-serif\" font-size=\"" +
                      std::to_string(std::max(6, cell - 3)) + "\">\n";
    for (int r = 0; r < p; ++r) {
        const std::string name = detail::xml_escape(m.names[static_cast<std::size_t>(r)]);
        const int y = margin + r * cell;
        out += "<text x=\"" + std::to_string(margin - 4) + "\" y=\"" + std::to_string(y + cell - 3) +
               "\" text-anchor=\"end\">" + name + "</text>\n";
        out += "<text transform=\"translate(" + std::to_string(y + cell - 3) + "," + std::to_string(margin - 4) +
               ") rotate(-90)\">" + name + "</text>\n";
        for (int c = 0; c < p; ++c)
            out += "<rect x=\"" + std::to_string(margin + c * cell) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
                   std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" +
                   detail::diverging_color(m.values(r, c)) + "\"><title>" + name + " / " +
                   detail::xml_escape(m.names[static_cast<std::size_t>(c)]) + ": " +
                   cogload::detail::format_fixed(m.values(r, c), 3) + "</title></rect>\n";
    }
    out += "</svg>\n";
    return out;
}

// ---------------------------------------------------------------------------
// Windowing

/// A window of `length` consecutive rows of one dataset, inside one block.
struct WindowRef {
    int dataset = 0;  // index into the dataset list
    int session = 0;
    int block_id = 0;
    std::size_t start = 0;
    int label = 0;
};

struct WindowSet {
    std::vector<WindowRef> windows;
    int length = 0;
    int stride = 0;
    std::vector<std::string> warnings;
};

/// Sliding windows over runs of rows sharing block_id and label; a run
/// shorter than `length` is skipped with a warning.
inline WindowSet window(const std::vector<AlignedDataset>& datasets, int length, int stride) {
    if (length < kMinWindow) throw ValidationError("window length must be >= 5, got " + std::to_string(length));
    if (stride < 1) throw ValidationError("window stride must be >= 1, got " + std::to_string(stride));
    WindowSet out;
    out.length = length;
    out.stride = stride;
    for (std::size_t di = 0; di < datasets.size(); ++di) {
        const auto& d = datasets[di];
        std::size_t begin = 0;
        while (begin < d.rows()) {
            std::size_t end = begin + 1;
            while (end < d.rows() && d.block_ids[end] == d.block_ids[begin] && d.labels[end] == d.labels[begin]) ++end;
            const std::size_t run = end - begin;
            if (run < static_cast<std::size_t>(length)) {
                out.warnings.push_back("session " + std::to_string(d.session_id) + " block " +
                                       std::to_string(d.block_ids[begin]) + ": " + std::to_string(run) +
                                       " rows is shorter than the window length " + std::to_string(length) +
                                       "; skipped");
            } else {
                for (std::size_t s = begin; s + static_cast<std::size_t>(length) <= end; s += static_cast<std::size_t>(stride))
                    out.windows.push_back({static_cast<int>(di), d.session_id, d.block_ids[begin], s, d.labels[begin]});
            }
            begin = end;
        }
    }
    return out;
}

inline WindowSet window(const AlignedDataset& dataset, int length, int stride) {
    return window(std::vector<AlignedDataset>{dataset}, length, stride);
}

/// (features, length) slice of `values` for one window; `columns` picks and
/// orders the features (all when empty).
inline Matrix window_data(const Matrix& values, const WindowRef& w, int length,
                          const std::vector<std::size_t>& columns = {}) {
    const auto start = static_cast<Eigen::Index>(w.start);
    if (start + length > values.rows()) throw DimensionError("window runs past the end of the dataset");
    if (columns.empty()) return values.middleRows(start, length).transpose();
    Matrix out(static_cast<Eigen::Index>(columns.size()), length);
    for (std::size_t c = 0; c < columns.size(); ++c)
        out.row(static_cast<Eigen::Index>(c)) = values.col(static_cast<Eigen::Index>(columns[c])).segment(start, length).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Splitting

enum class SplitMode { random, by_block };

inline std::string to_string(SplitMode m) { return m == SplitMode::random ? "random" : "by_block"; }

inline SplitMode parse_split_mode(std::string_view s) {
    if (s == "random") return SplitMode::random;
    if (s == "by_block") return SplitMode::by_block;
    throw ValidationError("split mode must be 'random' or 'by_block', got '" + std::string(s) + "'");
}

/// Indices into the window list, each side ascending.
struct SplitResult {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

namespace detail {

// Per-group train quotas summing to round(ratio * total); leftover units go
// to the largest fractional parts, lower group first on ties.
inline std::vector<std::size_t> largest_remainder(const std::vector<std::size_t>& sizes, double ratio) {
    std::size_t total = 0;
    for (auto s : sizes) total += s;
    const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
    std::vector<std::size_t> quota(sizes.size());
    std::vector<double> frac(sizes.size());
    std::size_t assigned = 0;
    for (std::size_t g = 0; g < sizes.size(); ++g) {
        const double exact = ratio * static_cast<double>(sizes[g]);
        quota[g] = static_cast<std::size_t>(std::floor(exact));
        frac[g] = exact - static_cast<double>(quota[g]);
        assigned += quota[g];
    }
    std::vector<std::size_t> order(sizes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; assigned < target && i < order.size(); ++i) {
        if (quota[order[i]] < sizes[order[i]]) {
            ++quota[order[i]];
            ++assigned;
        }
    }
    return quota;
}

}  // namespace detail

/// random: windows shuffled per class with a seeded RNG, class-stratified.
/// by_block: whole (session, block) groups go to one side, stratified by the
/// block's level, so no block appears on both sides.
inline SplitResult split(const std::vector<WindowRef>& windows, double ratio, std::uint64_t seed, SplitMode mode) {
    if (windows.size() < 2) throw ValidationError("split needs at least 2 windows");
    if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split ratio must be in (0, 1)");
    std::mt19937_64 rng(seed);
    SplitResult out;

    if (mode == SplitMode::random) {
        std::array<std::vector<std::size_t>, 3> by_class;
        for (std::size_t i = 0; i < windows.size(); ++i) by_class.at(static_cast<std::size_t>(windows[i].label)).push_back(i);
        std::vector<std::size_t> sizes;
        for (auto& members : by_class) {
            std::shuffle(members.begin(), members.end(), rng);
            sizes.push_back(members.size());
        }
        const auto quota = detail::largest_remainder(sizes, ratio);
        for (std::size_t c = 0; c < by_class.size(); ++c) {
            if (sizes[c] == 0) continue;
            if (quota[c] == 0 || quota[c] == sizes[c])
                throw StratificationError("class " + std::to_string(c) + " would be absent from the " +
                                          (quota[c] == 0 ? "train" : "test") + " side (" + std::to_string(sizes[c]) +
                                          " windows)");
            out.train.insert(out.train.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
            out.test.insert(out.test.end(), by_class[c].begin() + static_cast<std::ptrdiff_t>(quota[c]), by_class[c].end());
        }
    } else {
        std::map<std::pair<int, int>, std::vector<std::size_t>> blocks;
        std::map<std::pair<int, int>, int> level;
        for (std::size_t i = 0; i < windows.size(); ++i) {
            const std::pair<int, int> key{windows[i].session, windows[i].block_id};
            blocks[key].push_back(i);
            auto [it, inserted] = level.emplace(key, windows[i].label);
            if (!inserted && it->second != windows[i].label)
                throw ValidationError("block " + std::to_string(key.second) + " of session " +
                                      std::to_string(key.first) + " mixes labels");
        }
        std::array<std::vector<std::pair<int, int>>, 3> by_class;
        for (const auto& [key, lv] : level) by_class.at(static_cast<std::size_t>(lv)).push_back(key);
        std::vector<std::size_t> sizes;
        for (auto& keys : by_class) {
            std::shuffle(keys.begin(), keys.end(), rng);
            sizes.push_back(keys.size());
        }
        const auto quota = detail::largest_remainder(sizes, ratio);
        for (std::size_t c = 0; c < by_class.size(); ++c)
            for (std::size_t k = 0; k < by_class[c].size(); ++k) {
                auto& side = k < quota[c] ? out.train : out.test;
                const auto& members = blocks[by_class[c][k]];
                side.insert(side.end(), members.begin(), members.end());
            }
    }
    if (out.train.empty() || out.test.empty())
        throw StratificationError("split leaves the " + std::string(out.train.empty() ? "train" : "test") + " side empty");
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

}  // namespace cogload::fusion
