#pragma once

// Finite-difference gradient oracle, test-only.
//
// The loss is recomputed per sample straight from the layer definitions,
// independent of the packed implementation under test. Outputs of stages
// upstream of the perturbed tensor are cached, so perturbing an RNN or dense
// weight only reruns what follows it.
//
// Central differences with step h. When the central stencil straddles a ReLU
// kink (the pattern of active units at theta +/- h differs from the one at
// theta) the oracle falls back to the second-order one-sided stencil on the
// side that stays in the same linear region, and shrinks h only if both
// sides are affected.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cogload/nncore.hpp"

namespace oracle {

using cogload::nn::Matrix;
using cogload::nn::ModelParams;
using cogload::nn::SampleBatch;
using cogload::nn::Vector;

/// out(o, t) = sum_c sum_j w(o, c * 3 + j) * x(c, t + j) + b(o)
inline Matrix conv(const Matrix& x, const cogload::nn::Conv1dParams& p) {
    const Eigen::Index out_time = x.cols() - 2;
    Matrix out = p.bias.replicate(1, out_time);
    for (Eigen::Index c = 0; c < x.rows(); ++c)
        for (int j = 0; j < 3; ++j) out.noalias() += p.weight.col(c * 3 + j) * x.row(c).segment(j, out_time);
    return out;
}

/// Columns are time steps.
inline Matrix elman(const Matrix& x, const cogload::nn::RnnLayerParams& p) {
    Matrix pre = p.w_input * x;
    pre.colwise() += p.bias;
    Matrix h(p.w_hidden.rows(), x.cols());
    Vector prev = Vector::Zero(p.w_hidden.rows());
    for (Eigen::Index t = 0; t < x.cols(); ++t) {
        Vector z = pre.col(t);
        z.noalias() += p.w_hidden * prev;
        prev = z.array().tanh().matrix();
        h.col(t) = prev;
    }
    return h;
}

/// Cached per-sample intermediates.
struct Trace {
    std::vector<Matrix> conv_out;  // relu(conv2(relu(conv1(x))))
    std::vector<Matrix> layer0;
    std::vector<Matrix> layer1;
    std::vector<bool> pattern;     // sign of every conv pre-activation
    double loss = 0.0;
};

enum class Stage { conv, layer0, layer1, dense };

inline Stage stage_of(std::string_view name) {
    if (name.starts_with("conv")) return Stage::conv;
    if (name.starts_with("rnn.l0")) return Stage::layer0;
    if (name.starts_with("rnn.l1")) return Stage::layer1;
    return Stage::dense;
}

/// Mean softmax cross-entropy of the dense head on the last top-layer state.
inline double head_loss(const std::vector<Matrix>& top, const std::vector<int>& labels,
                        const cogload::nn::DenseParams& d) {
    double total = 0.0;
    for (std::size_t b = 0; b < top.size(); ++b) {
        const Vector z = d.weight * top[b].col(top[b].cols() - 1) + d.bias;
        const double m = z.maxCoeff();
        total += m + std::log((z.array() - m).exp().sum()) - z(labels[b]);
    }
    return total / static_cast<double>(top.size());
}

/// Recomputes the trace from `from` onward; earlier stages are read from `t`.
inline void run(const SampleBatch& batch, const ModelParams& p, Stage from, Trace& t) {
    const std::size_t n = batch.data.size();
    if (from == Stage::conv) {
        t.conv_out.assign(n, Matrix());
        t.pattern.clear();
        for (std::size_t b = 0; b < n; ++b) {
            const Matrix z1 = conv(batch.data[b], p.conv1);
            const Matrix z2 = conv(z1.cwiseMax(0.0), p.conv2);
            for (Eigen::Index i = 0; i < z1.size(); ++i) t.pattern.push_back(z1.data()[i] > 0.0);
            for (Eigen::Index i = 0; i < z2.size(); ++i) t.pattern.push_back(z2.data()[i] > 0.0);
            t.conv_out[b] = z2.cwiseMax(0.0);
        }
    }
    if (from <= Stage::layer0) {
        t.layer0.assign(n, Matrix());
        for (std::size_t b = 0; b < n; ++b) t.layer0[b] = elman(t.conv_out[b], p.rnn.layers[0]);
    }
    if (from <= Stage::layer1) {
        t.layer1.assign(n, Matrix());
        for (std::size_t b = 0; b < n; ++b) t.layer1[b] = elman(t.layer0[b], p.rnn.layers[1]);
    }
    t.loss = head_loss(t.layer1, batch.labels, p.dense);
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::string worst;
    std::size_t checked = 0;
    std::size_t one_sided = 0;
};

/// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double numeric_derivative(const SampleBatch& batch, ModelParams& p, double& slot, Stage stage, double h,
                                 const Trace& base, Trace& scratch, bool& one_sided) {
    const double theta = slot;
    struct Eval {
        double loss;
        bool same_region;
    };
    auto at = [&](double x) {
        slot = x;
        run(batch, p, stage, scratch);
        slot = theta;
        return Eval{scratch.loss, stage != Stage::conv || scratch.pattern == base.pattern};
    };
    for (int attempt = 0; attempt < 4; ++attempt, h *= 0.1) {
        const Eval plus = at(theta + h);
        const Eval minus = at(theta - h);
        if (plus.same_region && minus.same_region) return (plus.loss - minus.loss) / (2.0 * h);
        if (minus.same_region) {
            const Eval minus2 = at(theta - 2.0 * h);
            if (minus2.same_region) {
                one_sided = true;
                return (3.0 * base.loss - 4.0 * minus.loss + minus2.loss) / (2.0 * h);
            }
        }
        if (plus.same_region) {
            const Eval plus2 = at(theta + 2.0 * h);
            if (plus2.same_region) {
                one_sided = true;
                return (-3.0 * base.loss + 4.0 * plus.loss - plus2.loss) / (2.0 * h);
            }
        }
    }
    const Eval plus = at(theta + h);
    const Eval minus = at(theta - h);
    return (plus.loss - minus.loss) / (2.0 * h);
}

inline double loss(const SampleBatch& batch, const ModelParams& p) {
    Trace t;
    run(batch, p, Stage::conv, t);
    return t.loss;
}

/// Compares every analytic gradient entry against finite differences.
inline GradCheck check_all(const SampleBatch& batch, const ModelParams& params, double h, double floor) {
    const auto analytic = cogload::nn::model_backward(batch, params).grad;
    ModelParams p = params;
    Trace base;
    run(batch, p, Stage::conv, base);
    std::vector<const double*> grads;
    cogload::nn::for_each_tensor(analytic, [&](std::string_view, const cogload::nn::TensorShape&, const auto& t) {
        grads.push_back(t.data());
    });
    GradCheck out;
    std::size_t tensor = 0;
    cogload::nn::for_each_tensor(p, [&](std::string_view name, const cogload::nn::TensorShape&, auto& t) {
        const Stage stage = stage_of(name);
        Trace scratch = base;
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            bool one_sided = false;
            const double num = numeric_derivative(batch, p, t.data()[i], stage, h, base, scratch, one_sided);
            const double err = rel_error(grads[tensor][i], num, floor);
            ++out.checked;
            if (one_sided) ++out.one_sided;
            if (err > out.max_rel_error) {
                out.max_rel_error = err;
                out.worst = std::string(name) + "[" + std::to_string(i) + "] analytic=" +
                            std::to_string(grads[tensor][i]) + " numeric=" + std::to_string(num);
            }
        }
        ++tensor;
    });
    return out;
}

/// Random tiny problem: N(0,1) inputs, random labels, seeded default init.
inline std::pair<SampleBatch, ModelParams> tiny_problem(int channels, int time, int batch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> label(0, 2);
    SampleBatch b;
    for (int i = 0; i < batch; ++i) {
        Matrix x(channels, time);
        for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = normal(rng);
        b.data.push_back(x);
        b.labels.push_back(label(rng));
    }
    return {b, cogload::nn::init_params(channels, seed ^ 0x5eedULL)};
}

}  // namespace oracle
