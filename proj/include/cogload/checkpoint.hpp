#pragma once

// Text checkpoint:
//
//   cogload-checkpoint 1
//   kernel 3
//   conv_channels 16 32
//   rnn_input 32
//   rnn_hidden 64
//   rnn_layers 2
//   num_classes 3
//   input_channels <C>
//   seed <seed>
//   tensor <name> <dim>...
//   <values, row-major, shortest round-trip decimal, space separated>
//   ...
//   end
//
// Tensors appear in for_each_tensor order.

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cogload/detail/text.hpp"
#include "cogload/nncore.hpp"

namespace cogload::nn {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    ModelParams params;
    std::uint64_t seed = 0;
};

namespace detail {

// Row-major traversal; for conv weights this is the (out, in, kernel) order.
template <class T, class F>
void row_major(T& t, F&& f) {
    if constexpr (T::ColsAtCompileTime == 1) {
        for (Eigen::Index i = 0; i < t.size(); ++i) f(t(i));
    } else {
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) f(t(r, c));
    }
}

}  // namespace detail

inline std::string checkpoint_to_string(const ModelParams& params, std::uint64_t seed) {
    std::string out;
    out += "cogload-checkpoint " + std::to_string(kCheckpointVersion) + "\n";
    out += "kernel " + std::to_string(kKernel) + "\n";
    out += "conv_channels " + std::to_string(kConv1Channels) + " " + std::to_string(kConv2Channels) + "\n";
    out += "rnn_input " + std::to_string(kConv2Channels) + "\n";
    out += "rnn_hidden " + std::to_string(kHidden) + "\n";
    out += "rnn_layers " + std::to_string(kRnnLayers) + "\n";
    out += "num_classes " + std::to_string(kNumClasses) + "\n";
    out += "input_channels " + std::to_string(params.input_channels) + "\n";
    out += "seed " + std::to_string(seed) + "\n";
    for_each_tensor(params, [&](std::string_view name, const TensorShape& shape, const auto& t) {
        out += "tensor ";
        out += name;
        for (int d : shape.dims) out += " " + std::to_string(d);
        out += "\n";
        bool first = true;
        detail::row_major(t, [&](double v) {
            if (!first) out += ' ';
            first = false;
            out += cogload::detail::format_double(v);
        });
        out += "\n";
    });
    out += "end\n";
    return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, std::uint64_t seed) {
    cogload::detail::write_file_atomic(path, checkpoint_to_string(params, seed));
}

inline Checkpoint checkpoint_from_string(const std::string& text, const std::string& source = "<checkpoint>") {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto next = [&]() -> std::vector<std::string_view> {
        if (!std::getline(in, line)) throw ParseError(source, lineno, "unexpected end of file");
        ++lineno;
        return cogload::detail::split(line, ' ');
    };
    auto expect_ints = [&](std::string_view key, std::vector<long long> want) {
        auto f = next();
        if (f.size() != want.size() + 1 || f[0] != key)
            throw ParseError(source, lineno, "expected '" + std::string(key) + "'");
        for (std::size_t i = 0; i < want.size(); ++i) {
            auto v = cogload::detail::parse_int(f[i + 1]);
            if (!v || *v != want[i])
                throw ParseError(source, lineno, "architecture mismatch for '" + std::string(key) + "'");
        }
    };
    auto read_int = [&](std::string_view key) -> long long {
        auto f = next();
        if (f.size() != 2 || f[0] != key) throw ParseError(source, lineno, "expected '" + std::string(key) + "'");
        auto v = cogload::detail::parse_int(f[1]);
        if (!v) throw ParseError(source, lineno, "bad integer for '" + std::string(key) + "'");
        return *v;
    };

    expect_ints("cogload-checkpoint", {kCheckpointVersion});
    expect_ints("kernel", {kKernel});
    expect_ints("conv_channels", {kConv1Channels, kConv2Channels});
    expect_ints("rnn_input", {kConv2Channels});
    expect_ints("rnn_hidden", {kHidden});
    expect_ints("rnn_layers", {kRnnLayers});
    expect_ints("num_classes", {kNumClasses});
    const long long channels = read_int("input_channels");
    if (channels < 1) throw ParseError(source, lineno, "input_channels must be positive");

    Checkpoint ck;
    {
        auto f = next();
        if (f.size() != 2 || f[0] != "seed") throw ParseError(source, lineno, "expected 'seed'");
        std::uint64_t s = 0;
        auto [ptr, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), s);
        if (ec != std::errc() || ptr != f[1].data() + f[1].size()) throw ParseError(source, lineno, "bad seed");
        ck.seed = s;
    }
    ck.params = ModelParams::zeros(static_cast<int>(channels));
    for_each_tensor(ck.params, [&](std::string_view name, const TensorShape& shape, auto& t) {
        auto head = next();
        if (head.size() != shape.dims.size() + 2 || head[0] != "tensor" || head[1] != name)
            throw ParseError(source, lineno, "expected tensor '" + std::string(name) + "'");
        for (std::size_t i = 0; i < shape.dims.size(); ++i) {
            auto d = cogload::detail::parse_int(head[i + 2]);
            if (!d || *d != shape.dims[i]) throw ParseError(source, lineno, "shape mismatch for '" + std::string(name) + "'");
        }
        auto values = next();
        if (values.size() != shape.count())
            throw ParseError(source, lineno, "tensor '" + std::string(name) + "' has " +
                                                 std::to_string(values.size()) + " values, expected " +
                                                 std::to_string(shape.count()));
        std::size_t k = 0;
        detail::row_major(t, [&](double& v) {
            auto parsed = cogload::detail::parse_double(values[k]);
            if (!parsed || !std::isfinite(*parsed)) throw ParseError(source, lineno, "bad value in '" + std::string(name) + "'");
            v = *parsed;
            ++k;
        });
    });
    auto tail = next();
    if (tail.size() != 1 || tail[0] != "end") throw ParseError(source, lineno, "expected 'end'");
    return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return checkpoint_from_string(cogload::detail::read_file(path), path.string());
}

}  // namespace cogload::nn
