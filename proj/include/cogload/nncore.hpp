#pragma once

// Fixed-architecture 1D-CNN -> RNN classifier with hand-derived gradients.
//
//   input (C, T)
//     -> conv1d(C -> 16, k=3) -> relu        (16, T-2)
//     -> conv1d(16 -> 32, k=3) -> relu       (32, T-4)
//     -> 2-layer Elman RNN, hidden 64, tanh  (T-4 steps)
//     -> last hidden state of layer 2        (64)
//     -> dense(64 -> 3)                      raw logits
//
// Intermediate activations are kept "packed": a matrix of shape
// (channels, time * batch) where column t * batch + b holds time step t of
// sample b. Every per-step slice is then a contiguous block of columns and
// each layer is a single GEMM over the whole minibatch.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cogload/errors.hpp"

namespace cogload::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kKernel = 3;
inline constexpr int kConv1Channels = 16;
inline constexpr int kConv2Channels = 32;
inline constexpr int kHidden = 64;
inline constexpr int kRnnLayers = 2;
inline constexpr int kNumClasses = 3;
inline constexpr int kMinTime = 2 * (kKernel - 1) + 1;

/// A minibatch of multichannel sequences. data[b] is (channels, time).
struct SampleBatch {
    std::vector<Matrix> data;
    std::vector<int> labels;

    int size() const { return static_cast<int>(data.size()); }
    int channels() const { return data.empty() ? 0 : static_cast<int>(data.front().rows()); }
    int time() const { return data.empty() ? 0 : static_cast<int>(data.front().cols()); }
};

/// Weights of one valid 1D convolution. Row o of `weight` holds w[o][c][j]
/// at column c * kernel + j, i.e. the row-major flattening of (in, kernel).
struct Conv1dParams {
    Matrix weight;
    Vector bias;

    int out_channels() const { return static_cast<int>(weight.rows()); }
    int in_channels() const { return static_cast<int>(weight.cols()) / kKernel; }
    double& at(int o, int c, int j) { return weight(o, c * kKernel + j); }
    double at(int o, int c, int j) const { return weight(o, c * kKernel + j); }
};

struct RnnLayerParams {
    Matrix w_input;   // (hidden, in)
    Matrix w_hidden;  // (hidden, hidden)
    Vector bias;      // (hidden)
};

struct RnnParams {
    std::array<RnnLayerParams, kRnnLayers> layers;
};

struct DenseParams {
    Matrix weight;  // (classes, hidden)
    Vector bias;    // (classes)
};

struct ModelParams {
    int input_channels = 0;
    Conv1dParams conv1;
    Conv1dParams conv2;
    RnnParams rnn;
    DenseParams dense;

    /// All-zero parameters with the fixed architecture.
    static ModelParams zeros(int input_channels) {
        if (input_channels < 1) throw ValidationError("input_channels must be positive");
        ModelParams p;
        p.input_channels = input_channels;
        p.conv1.weight = Matrix::Zero(kConv1Channels, input_channels * kKernel);
        p.conv1.bias = Vector::Zero(kConv1Channels);
        p.conv2.weight = Matrix::Zero(kConv2Channels, kConv1Channels * kKernel);
        p.conv2.bias = Vector::Zero(kConv2Channels);
        for (int l = 0; l < kRnnLayers; ++l) {
            const int in = l == 0 ? kConv2Channels : kHidden;
            p.rnn.layers[l].w_input = Matrix::Zero(kHidden, in);
            p.rnn.layers[l].w_hidden = Matrix::Zero(kHidden, kHidden);
            p.rnn.layers[l].bias = Vector::Zero(kHidden);
        }
        p.dense.weight = Matrix::Zero(kNumClasses, kHidden);
        p.dense.bias = Vector::Zero(kNumClasses);
        return p;
    }
};

/// Logical shape of a parameter tensor as reported in checkpoints.
struct TensorShape {
    std::vector<int> dims;
    std::size_t count() const {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                               [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
    }
};

/// Visits every parameter tensor in declared order as f(name, shape, tensor),
/// where tensor is the Matrix or Vector holding the values.
template <class Params, class F>
void for_each_tensor(Params& p, F&& f) {
    const int c_in = p.input_channels;
    f(std::string_view("conv1.weight"), TensorShape{{kConv1Channels, c_in, kKernel}}, p.conv1.weight);
    f(std::string_view("conv1.bias"), TensorShape{{kConv1Channels}}, p.conv1.bias);
    f(std::string_view("conv2.weight"), TensorShape{{kConv2Channels, kConv1Channels, kKernel}},
      p.conv2.weight);
    f(std::string_view("conv2.bias"), TensorShape{{kConv2Channels}}, p.conv2.bias);
    static constexpr std::array<std::array<std::string_view, 3>, kRnnLayers> names{{
        {"rnn.l0.w_input", "rnn.l0.w_hidden", "rnn.l0.bias"},
        {"rnn.l1.w_input", "rnn.l1.w_hidden", "rnn.l1.bias"},
    }};
    for (int l = 0; l < kRnnLayers; ++l) {
        const int in = l == 0 ? kConv2Channels : kHidden;
        f(names[l][0], TensorShape{{kHidden, in}}, p.rnn.layers[l].w_input);
        f(names[l][1], TensorShape{{kHidden, kHidden}}, p.rnn.layers[l].w_hidden);
        f(names[l][2], TensorShape{{kHidden}}, p.rnn.layers[l].bias);
    }
    f(std::string_view("dense.weight"), TensorShape{{kNumClasses, kHidden}}, p.dense.weight);
    f(std::string_view("dense.bias"), TensorShape{{kNumClasses}}, p.dense.bias);
}

inline std::size_t parameter_count(const ModelParams& p) {
    std::size_t n = 0;
    for_each_tensor(p, [&](std::string_view, const TensorShape&, const auto& t) {
        n += static_cast<std::size_t>(t.size());
    });
    return n;
}

inline bool all_finite(const ModelParams& p) {
    bool ok = true;
    for_each_tensor(p, [&](std::string_view, const TensorShape&, const auto& t) {
        ok = ok && t.allFinite();
    });
    return ok;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor, fan_in = number of
/// inputs feeding one output unit of that matrix.
inline ModelParams init_params(int input_channels, std::uint64_t seed) {
    ModelParams p = ModelParams::zeros(input_channels);
    std::mt19937_64 rng(seed);
    auto fill = [&](auto& t, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
    };
    fill(p.conv1.weight, input_channels * kKernel);
    fill(p.conv1.bias, input_channels * kKernel);
    fill(p.conv2.weight, kConv1Channels * kKernel);
    fill(p.conv2.bias, kConv1Channels * kKernel);
    for (auto& layer : p.rnn.layers) {
        fill(layer.w_input, static_cast<int>(layer.w_input.cols()));
        fill(layer.w_hidden, kHidden);
        fill(layer.bias, kHidden);
    }
    fill(p.dense.weight, kHidden);
    fill(p.dense.bias, kHidden);
    return p;
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { relu, sigmoid, tanh };

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Matrix activation(Activation kind, const Matrix& x) {
    if (!x.allFinite()) throw NumericError("activation: non-finite input");
    switch (kind) {
        case Activation::relu:
            return x.cwiseMax(0.0);
        case Activation::sigmoid:
            return x.unaryExpr([](double v) { return sigmoid(v); });
        case Activation::tanh:
            return x.array().tanh().matrix();
    }
    return x;
}

// ---------------------------------------------------------------------------
// Packing helpers

namespace detail {

inline void check_sequences(const std::vector<Matrix>& data) {
    if (data.empty()) throw ValidationError("batch must contain at least one sample");
    const auto rows = data.front().rows();
    const auto cols = data.front().cols();
    for (std::size_t b = 0; b < data.size(); ++b) {
        if (data[b].rows() != rows)
            throw DimensionError("channel axis: sample " + std::to_string(b) + " has " +
                                 std::to_string(data[b].rows()) + " channels, expected " +
                                 std::to_string(rows));
        if (data[b].cols() != cols)
            throw DimensionError("time axis: sample " + std::to_string(b) + " has length " +
                                 std::to_string(data[b].cols()) + ", expected " + std::to_string(cols));
        if (!data[b].allFinite())
            throw NumericError("sample " + std::to_string(b) + " contains non-finite values");
    }
}

/// (C, T) samples -> (C, T * B), column t * B + b.
inline Matrix pack(const std::vector<Matrix>& data) {
    const int batch = static_cast<int>(data.size());
    const int time = static_cast<int>(data.front().cols());
    Matrix out(data.front().rows(), static_cast<Eigen::Index>(time) * batch);
    for (int b = 0; b < batch; ++b)
        for (int t = 0; t < time; ++t) out.col(static_cast<Eigen::Index>(t) * batch + b) = data[b].col(t);
    return out;
}

inline std::vector<Matrix> unpack(const Matrix& packed, int batch) {
    const int time = static_cast<int>(packed.cols()) / batch;
    std::vector<Matrix> out(batch, Matrix(packed.rows(), time));
    for (int b = 0; b < batch; ++b)
        for (int t = 0; t < time; ++t) out[b].col(t) = packed.col(static_cast<Eigen::Index>(t) * batch + b);
    return out;
}

/// Row c * K + j, column t * B + b of the result is input(c, (t + j) * B + b).
inline Matrix im2col(const Matrix& packed, int batch) {
    const int channels = static_cast<int>(packed.rows());
    const int time = static_cast<int>(packed.cols()) / batch;
    const int out_time = time - kKernel + 1;
    const Eigen::Index width = static_cast<Eigen::Index>(out_time) * batch;
    Matrix cols(static_cast<Eigen::Index>(channels) * kKernel, width);
    for (int c = 0; c < channels; ++c)
        for (int j = 0; j < kKernel; ++j)
            cols.row(c * kKernel + j) = packed.row(c).segment(static_cast<Eigen::Index>(j) * batch, width);
    return cols;
}

/// Adjoint of im2col.
inline Matrix col2im(const Matrix& dcols, int channels, int time, int batch) {
    const Eigen::Index width = dcols.cols();
    Matrix out = Matrix::Zero(channels, static_cast<Eigen::Index>(time) * batch);
    for (int c = 0; c < channels; ++c)
        for (int j = 0; j < kKernel; ++j)
            out.row(c).segment(static_cast<Eigen::Index>(j) * batch, width) += dcols.row(c * kKernel + j);
    return out;
}

inline void check_conv(const Conv1dParams& p, int channels, int time) {
    if (p.weight.cols() % kKernel != 0 || p.bias.size() != p.weight.rows())
        throw DimensionError("conv1d: malformed parameters");
    if (channels != p.in_channels())
        throw DimensionError("channel axis: input has " + std::to_string(channels) +
                             " channels, kernel expects " + std::to_string(p.in_channels()));
    if (time < kKernel)
        throw DimensionError("time axis: length " + std::to_string(time) + " is shorter than kernel " +
                             std::to_string(kKernel));
}

// Shifts a packed hidden sequence one step later in time, zero-filling step 0.
inline Matrix previous_states(const Matrix& packed, int batch) {
    Matrix prev = Matrix::Zero(packed.rows(), packed.cols());
    const Eigen::Index n = packed.cols() - batch;
    if (n > 0) prev.rightCols(n) = packed.leftCols(n);
    return prev;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Layers

/// Valid convolution: out[o][i] = sum_c sum_j x[c][i + j] * w[o][c][j] + b[o].
/// input[b] is (in_channels, time); result[b] is (out_channels, time - 2).
inline std::vector<Matrix> conv1d_forward(const std::vector<Matrix>& input, const Conv1dParams& params) {
    detail::check_sequences(input);
    detail::check_conv(params, static_cast<int>(input.front().rows()),
                       static_cast<int>(input.front().cols()));
    const int batch = static_cast<int>(input.size());
    Matrix out = params.weight * detail::im2col(detail::pack(input), batch);
    out.colwise() += params.bias;
    return detail::unpack(out, batch);
}

/// Hidden states of both RNN layers, packed (hidden, time * batch).
struct RnnTrace {
    std::array<Matrix, kRnnLayers> hidden;
    int batch = 0;
    int time = 0;
};

namespace detail {

inline RnnTrace rnn_packed(const Matrix& input, int batch, const RnnParams& params) {
    RnnTrace trace;
    trace.batch = batch;
    trace.time = static_cast<int>(input.cols()) / batch;
    const Matrix* layer_input = &input;
    for (int l = 0; l < kRnnLayers; ++l) {
        const auto& p = params.layers[l];
        if (layer_input->rows() != p.w_input.cols())
            throw DimensionError("feature axis: RNN layer " + std::to_string(l) + " expects " +
                                 std::to_string(p.w_input.cols()) + " features, got " +
                                 std::to_string(layer_input->rows()));
        Matrix pre = p.w_input * *layer_input;
        pre.colwise() += p.bias;
        Matrix& h = trace.hidden[l];
        h.resize(kHidden, pre.cols());
        for (int t = 0; t < trace.time; ++t) {
            auto step = pre.middleCols(static_cast<Eigen::Index>(t) * batch, batch);
            if (t > 0) step.noalias() += p.w_hidden * h.middleCols(static_cast<Eigen::Index>(t - 1) * batch, batch);
            h.middleCols(static_cast<Eigen::Index>(t) * batch, batch) = step.array().tanh().matrix();
        }
        layer_input = &h;
    }
    return trace;
}

}  // namespace detail

struct RnnOutput {
    std::vector<Matrix> outputs;               // per time step, (hidden, batch) of the top layer
    std::array<Matrix, kRnnLayers> final_hidden;  // per layer, (hidden, batch)
};

/// Two stacked Elman layers, h_t = tanh(W_x x_t + W_h h_{t-1} + b), h_0 = 0.
/// steps[t] is (features, batch).
inline RnnOutput rnn_forward(const std::vector<Matrix>& steps, const RnnParams& params) {
    if (steps.empty()) throw DimensionError("time axis: empty sequence");
    const auto batch = steps.front().cols();
    Matrix packed(steps.front().rows(), batch * static_cast<Eigen::Index>(steps.size()));
    for (std::size_t t = 0; t < steps.size(); ++t) {
        if (steps[t].rows() != steps.front().rows() || steps[t].cols() != batch)
            throw DimensionError("step " + std::to_string(t) + " has inconsistent shape");
        packed.middleCols(static_cast<Eigen::Index>(t) * batch, batch) = steps[t];
    }
    const RnnTrace trace = detail::rnn_packed(packed, static_cast<int>(batch), params);
    RnnOutput out;
    for (int t = 0; t < trace.time; ++t)
        out.outputs.push_back(trace.hidden[kRnnLayers - 1].middleCols(static_cast<Eigen::Index>(t) * batch, batch));
    for (int l = 0; l < kRnnLayers; ++l)
        out.final_hidden[l] = trace.hidden[l].rightCols(batch);
    return out;
}

// ---------------------------------------------------------------------------
// Whole model

/// Intermediates of one forward pass, needed by model_backward.
struct ForwardCache {
    int batch = 0;
    int time = 0;
    Matrix cols1, z1, a1;  // conv1 input columns, pre- and post-relu
    Matrix cols2, z2, a2;  // conv2
    RnnTrace rnn;
    Matrix logits;         // (batch, classes)
};

inline ForwardCache forward_cached(const std::vector<Matrix>& data, const ModelParams& params) {
    detail::check_sequences(data);
    const int channels = static_cast<int>(data.front().rows());
    const int time = static_cast<int>(data.front().cols());
    if (channels != params.input_channels)
        throw DimensionError("channel axis: input has " + std::to_string(channels) +
                             " channels, model expects " + std::to_string(params.input_channels));
    if (time < kMinTime)
        throw DimensionError("time axis: length " + std::to_string(time) + " is below the minimum of " +
                             std::to_string(kMinTime));

    ForwardCache c;
    c.batch = static_cast<int>(data.size());
    c.time = time;
    detail::check_conv(params.conv1, channels, time);
    c.cols1 = detail::im2col(detail::pack(data), c.batch);
    c.z1.noalias() = params.conv1.weight * c.cols1;
    c.z1.colwise() += params.conv1.bias;
    c.a1 = c.z1.cwiseMax(0.0);

    detail::check_conv(params.conv2, kConv1Channels, time - kKernel + 1);
    c.cols2 = detail::im2col(c.a1, c.batch);
    c.z2.noalias() = params.conv2.weight * c.cols2;
    c.z2.colwise() += params.conv2.bias;
    c.a2 = c.z2.cwiseMax(0.0);

    c.rnn = detail::rnn_packed(c.a2, c.batch, params.rnn);
    const Matrix last = c.rnn.hidden[kRnnLayers - 1].rightCols(c.batch);
    Matrix out = params.dense.weight * last;
    out.colwise() += params.dense.bias;
    c.logits = out.transpose();
    return c;
}

/// Raw logits (batch, 3). No output nonlinearity is applied.
inline Matrix model_forward(const std::vector<Matrix>& data, const ModelParams& params) {
    return forward_cached(data, params).logits;
}

inline Matrix model_forward(const SampleBatch& batch, const ModelParams& params) {
    return model_forward(batch.data, params);
}

struct LossGrad {
    double loss = 0.0;
    Matrix dlogits;  // (batch, classes)
};

/// Mean softmax cross-entropy and its gradient with respect to the logits.
inline LossGrad cross_entropy(const Matrix& logits, std::span<const int> labels) {
    if (logits.cols() != kNumClasses) throw DimensionError("class axis: expected 3 logits per sample");
    if (static_cast<std::size_t>(logits.rows()) != labels.size())
        throw DimensionError("batch axis: " + std::to_string(logits.rows()) + " logit rows vs " +
                             std::to_string(labels.size()) + " labels");
    if (labels.empty()) throw ValidationError("cross_entropy: empty batch");
    const double n = static_cast<double>(labels.size());
    LossGrad out;
    out.dlogits.resize(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= kNumClasses)
            throw ValidationError("label " + std::to_string(y) + " at index " + std::to_string(i) +
                                  " is outside {0,1,2}");
        const double mx = logits.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
        const double z = e.sum();
        out.loss += std::log(z) - (logits(i, y) - mx);
        out.dlogits.row(i) = e / z;
        out.dlogits(i, y) -= 1.0;
    }
    out.loss /= n;
    out.dlogits /= n;
    return out;
}

/// Backpropagates dlogits through the cached forward pass.
inline ModelParams model_backward(const ForwardCache& c, const Matrix& dlogits, const ModelParams& params) {
    if (dlogits.rows() != c.batch || dlogits.cols() != kNumClasses)
        throw DimensionError("dlogits must be (batch, 3)");
    const int batch = c.batch;
    ModelParams g = ModelParams::zeros(params.input_channels);

    // dense
    const Matrix dout = dlogits.transpose();  // (classes, batch)
    const Matrix& top = c.rnn.hidden[kRnnLayers - 1];
    g.dense.weight.noalias() = dout * top.rightCols(batch).transpose();
    g.dense.bias = dout.rowwise().sum();

    // BPTT, top layer first. `upstream` is the loss gradient arriving at each
    // hidden state from outside its own layer.
    Matrix upstream = Matrix::Zero(kHidden, top.cols());
    upstream.rightCols(batch).noalias() = params.dense.weight.transpose() * dout;
    Matrix dconv_out;
    for (int l = kRnnLayers - 1; l >= 0; --l) {
        const auto& p = params.rnn.layers[l];
        const Matrix& h = c.rnn.hidden[l];
        const Matrix& x = l == 0 ? c.a2 : c.rnn.hidden[l - 1];
        Matrix dpre(kHidden, h.cols());
        Matrix carry = Matrix::Zero(kHidden, batch);
        for (int t = c.rnn.time - 1; t >= 0; --t) {
            const Eigen::Index off = static_cast<Eigen::Index>(t) * batch;
            const Matrix dh = upstream.middleCols(off, batch) + carry;
            dpre.middleCols(off, batch) =
                (dh.array() * (1.0 - h.middleCols(off, batch).array().square())).matrix();
            carry.noalias() = p.w_hidden.transpose() * dpre.middleCols(off, batch);
        }
        auto& gl = g.rnn.layers[l];
        gl.w_input.noalias() = dpre * x.transpose();
        gl.w_hidden.noalias() = dpre * detail::previous_states(h, batch).transpose();
        gl.bias = dpre.rowwise().sum();
        if (l > 0) {
            upstream.noalias() = p.w_input.transpose() * dpre;
        } else {
            dconv_out.noalias() = p.w_input.transpose() * dpre;
        }
    }

    // conv2
    const Matrix dz2 = (dconv_out.array() * (c.z2.array() > 0.0).cast<double>()).matrix();
    g.conv2.weight.noalias() = dz2 * c.cols2.transpose();
    g.conv2.bias = dz2.rowwise().sum();
    const int t1 = c.time - kKernel + 1;
    const Matrix da1 = detail::col2im(params.conv2.weight.transpose() * dz2, kConv1Channels, t1, batch);

    // conv1
    const Matrix dz1 = (da1.array() * (c.z1.array() > 0.0).cast<double>()).matrix();
    g.conv1.weight.noalias() = dz1 * c.cols1.transpose();
    g.conv1.bias = dz1.rowwise().sum();
    return g;
}

struct Gradients {
    double loss = 0.0;
    ModelParams grad;
    Matrix logits;
};

/// Forward pass, mean cross-entropy and the exact gradient for every parameter.
inline Gradients model_backward(const SampleBatch& batch, const ModelParams& params) {
    if (static_cast<int>(batch.labels.size()) != batch.size())
        throw DimensionError("batch axis: data and labels differ in length");
    ForwardCache cache = forward_cached(batch.data, params);
    LossGrad lg = cross_entropy(cache.logits, batch.labels);
    Gradients out;
    out.loss = lg.loss;
    out.grad = model_backward(cache, lg.dlogits, params);
    out.logits = std::move(cache.logits);
    return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update over a flat parameter block. `step` is the
/// 1-based index of this update.
inline void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                        std::span<double> v, long step, const AdamConfig& cfg) {
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
        throw DimensionError("adam: parameter, gradient and moment sizes differ");
    if (step < 1) throw ValidationError("adam: step index must be >= 1");
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

struct AdamState {
    AdamConfig cfg;
    long step = 0;
    ModelParams m;
    ModelParams v;

    static AdamState init(const ModelParams& like, AdamConfig cfg = {}) {
        AdamState s;
        s.cfg = cfg;
        s.m = ModelParams::zeros(like.input_channels);
        s.v = ModelParams::zeros(like.input_channels);
        return s;
    }
};

inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state) {
    if (grads.input_channels != params.input_channels || state.m.input_channels != params.input_channels)
        throw DimensionError("adam: input_channels differ between params, gradients and state");
    std::vector<std::span<double>> p, m, v;
    std::vector<std::span<const double>> g;
    auto collect = [](auto& out) {
        return [&out](std::string_view, const TensorShape&, auto& t) {
            out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
        };
    };
    for_each_tensor(params, collect(p));
    for_each_tensor(grads, collect(g));
    for_each_tensor(state.m, collect(m));
    for_each_tensor(state.v, collect(v));
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i].size() != g[i].size()) throw DimensionError("adam: gradient tensor " + std::to_string(i) + " has wrong size");
    ++state.step;
    for (std::size_t i = 0; i < p.size(); ++i) adam_update(p[i], g[i], m[i], v[i], state.step, state.cfg);
}

// ---------------------------------------------------------------------------
// Training and inference

struct TrainConfig {
    int epochs = 1000;
    int batch_size = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ValidationError("epochs must be >= 1");
        if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be positive");
    }
};

struct FitResult {
    ModelParams params;
    std::vector<double> loss_history;  // one sample-weighted mean loss per epoch
};

/// Minibatch Adam over `epochs` seeded shuffles of `train`.
inline FitResult fit(const SampleBatch& train, const TrainConfig& cfg, ModelParams params,
                     const std::function<void(int, double)>& on_epoch = {}) {
    cfg.validate();
    detail::check_sequences(train.data);
    if (static_cast<int>(train.labels.size()) != train.size())
        throw DimensionError("batch axis: data and labels differ in length");

    AdamConfig adam;
    adam.lr = cfg.lr;
    AdamState state = AdamState::init(params, adam);
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(static_cast<std::size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);

    FitResult result;
    SampleBatch mb;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            mb.data.clear();
            mb.labels.clear();
            for (std::size_t i = start; i < end; ++i) {
                mb.data.push_back(train.data[order[i]]);
                mb.labels.push_back(train.labels[order[i]]);
            }
            Gradients g = model_backward(mb, params);
            if (!std::isfinite(g.loss)) throw DivergenceError(epoch, "non-finite minibatch loss");
            total += g.loss * static_cast<double>(end - start);
            adam_step(params, g.grad, state);
        }
        const double mean = total / static_cast<double>(order.size());
        if (!std::isfinite(mean) || !all_finite(params)) throw DivergenceError(epoch, "non-finite parameters");
        result.loss_history.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    result.params = std::move(params);
    return result;
}

struct Prediction {
    std::vector<int> labels;  // argmax of logits, lowest index on ties
    Matrix scores;            // elementwise sigmoid of logits, (n, 3)
    Matrix logits;            // (n, 3)
};

inline int argmax_label(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    int best = 0;
    for (int k = 1; k < row.size(); ++k)
        if (row(k) > row(best)) best = k;
    return best;
}

inline Prediction predict_logits(Matrix logits) {
    Prediction p;
    p.labels.resize(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) p.labels[static_cast<std::size_t>(i)] = argmax_label(logits.row(i));
    p.scores = logits.unaryExpr([](double v) { return sigmoid(v); });
    p.logits = std::move(logits);
    return p;
}

inline Prediction predict(const std::vector<Matrix>& data, const ModelParams& params, std::size_t chunk = 256) {
    Matrix logits(static_cast<Eigen::Index>(data.size()), kNumClasses);
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(data.size(), start + chunk);
        std::vector<Matrix> part(data.begin() + static_cast<std::ptrdiff_t>(start),
                                 data.begin() + static_cast<std::ptrdiff_t>(end));
        logits.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
            model_forward(part, params);
    }
    return predict_logits(std::move(logits));
}

}  // namespace cogload::nn
