#ifndef CSQN_NN_HPP
#define CSQN_NN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "csqn/common.hpp"
#include "csqn/rng.hpp"

namespace csqn::nn {

// Flattened model parameters; single address space for all curvature math.
using ParamVector = std::vector<float>;

struct MlpArchitecture {
    int input_dim = 784;
    std::vector<int> hidden = {256, 256};
    int classes = 10;
    float dropout = 0.25f;

    void validate() const {
        if (input_dim <= 0 || classes <= 0)
            throw ConfigError("mlp: input_dim and classes must be positive");
        if (hidden.empty()) throw ConfigError("mlp: at least one hidden layer required");
        for (int h : hidden)
            if (h <= 0) throw ConfigError("mlp: hidden widths must be positive");
        if (!(dropout >= 0.0f && dropout < 1.0f))
            throw ConfigError("mlp: dropout must be in [0,1)");
    }

    std::vector<int> widths() const {
        std::vector<int> w;
        w.push_back(input_dim);
        w.insert(w.end(), hidden.begin(), hidden.end());
        w.push_back(classes);
        return w;
    }

    int layer_count() const { return static_cast<int>(hidden.size()) + 1; }

    int64_t param_count() const {
        const std::vector<int> w = widths();
        int64_t n = 0;
        for (size_t l = 0; l + 1 < w.size(); ++l)
            n += static_cast<int64_t>(w[l]) * w[l + 1] + w[l + 1];
        return n;
    }
};

// Non-owning view of a contiguous batch.
struct Batch {
    const float* inputs = nullptr;  // count x dim, row-major, values in [0,1]
    const uint8_t* labels = nullptr;
    int count = 0;
    int dim = 0;
};

enum class Mode { Train, Eval };

struct LayerView {
    const float* w;  // in x out, row-major
    const float* b;  // out
    int in, out;
};

inline std::vector<LayerView> layer_views(const MlpArchitecture& arch,
                                          const ParamVector& theta) {
    if (static_cast<int64_t>(theta.size()) != arch.param_count())
        throw DimensionError("theta length does not match architecture");
    std::vector<LayerView> views;
    const std::vector<int> w = arch.widths();
    const float* p = theta.data();
    for (size_t l = 0; l + 1 < w.size(); ++l) {
        LayerView v{p, p + static_cast<size_t>(w[l]) * w[l + 1], w[l], w[l + 1]};
        p += static_cast<size_t>(w[l]) * w[l + 1] + w[l + 1];
        views.push_back(v);
    }
    return views;
}

// He-normal weights, zero biases.
inline ParamVector init_params(const MlpArchitecture& arch, RngStream& rng) {
    arch.validate();
    ParamVector theta(arch.param_count());
    const std::vector<int> w = arch.widths();
    size_t off = 0;
    for (size_t l = 0; l + 1 < w.size(); ++l) {
        const float scale = std::sqrt(2.0f / static_cast<float>(w[l]));
        for (int64_t i = 0; i < static_cast<int64_t>(w[l]) * w[l + 1]; ++i)
            theta[off++] = scale * static_cast<float>(rng.normal());
        off += w[l + 1];  // biases stay zero
    }
    return theta;
}

struct ForwardRecord {
    std::vector<float> logits;                   // count x classes
    std::vector<std::vector<float>> pre;         // pre-activation per hidden layer
    std::vector<std::vector<float>> post;        // after relu (+ dropout) per hidden layer
    std::vector<std::vector<uint8_t>> masks;     // dropout masks, train mode only
};

namespace detail {

// out[rows x cols_out] += in[rows x cols_in] * w[cols_in x cols_out]
inline void mm_forward(const float* in, int rows, int cols_in, const float* w,
                       int cols_out, float* out) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < rows; ++b) {
        const float* ib = in + static_cast<size_t>(b) * cols_in;
        float* ob = out + static_cast<size_t>(b) * cols_out;
        for (int k = 0; k < cols_in; ++k) {
            const float v = ib[k];
            const float* wk = w + static_cast<size_t>(k) * cols_out;
            for (int j = 0; j < cols_out; ++j) ob[j] += v * wk[j];
        }
    }
}

// dw[cols_in x cols_out] += in^T[cols_in x rows] * dout[rows x cols_out]
inline void mm_grad_w(const float* in, const float* dout, int rows, int cols_in,
                      int cols_out, float* dw) {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < cols_in; ++k) {
        float* dwk = dw + static_cast<size_t>(k) * cols_out;
        for (int b = 0; b < rows; ++b) {
            const float v = in[static_cast<size_t>(b) * cols_in + k];
            const float* db = dout + static_cast<size_t>(b) * cols_out;
            for (int j = 0; j < cols_out; ++j) dwk[j] += v * db[j];
        }
    }
}

// din[rows x cols_in] = dout[rows x cols_out] * w^T
inline void mm_grad_in(const float* dout, const float* w, int rows, int cols_in,
                       int cols_out, float* din) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < rows; ++b) {
        const float* db = dout + static_cast<size_t>(b) * cols_out;
        float* ib = din + static_cast<size_t>(b) * cols_in;
        for (int k = 0; k < cols_in; ++k) {
            const float* wk = w + static_cast<size_t>(k) * cols_out;
            float s = 0.0f;
            for (int j = 0; j < cols_out; ++j) s += db[j] * wk[j];
            ib[k] = s;
        }
    }
}

}  // namespace detail

// Train mode applies inverted-scale dropout and records the masks so backprop
// is exact; eval mode uses no randomness at all.
inline ForwardRecord forward(const MlpArchitecture& arch, const ParamVector& theta,
                             const Batch& batch, Mode mode, RngStream& rng) {
    if (batch.dim != arch.input_dim)
        throw DimensionError("forward: batch width does not match architecture");
    const std::vector<LayerView> layers = layer_views(arch, theta);
    const int n_hidden = static_cast<int>(arch.hidden.size());
    const bool use_dropout = (mode == Mode::Train) && arch.dropout > 0.0f;
    const float keep = 1.0f - arch.dropout;

    ForwardRecord rec;
    rec.pre.resize(n_hidden);
    rec.post.resize(n_hidden);
    if (use_dropout) rec.masks.resize(n_hidden);

    const float* cur = batch.inputs;
    for (int l = 0; l < n_hidden; ++l) {
        const LayerView& lv = layers[l];
        std::vector<float>& pre = rec.pre[l];
        pre.assign(static_cast<size_t>(batch.count) * lv.out, 0.0f);
        for (int b = 0; b < batch.count; ++b)
            std::memcpy(pre.data() + static_cast<size_t>(b) * lv.out, lv.b,
                        sizeof(float) * lv.out);
        detail::mm_forward(cur, batch.count, lv.in, lv.w, lv.out, pre.data());

        std::vector<float>& post = rec.post[l];
        post.resize(pre.size());
        if (use_dropout) {
            std::vector<uint8_t>& mask = rec.masks[l];
            mask.resize(pre.size());
            for (size_t i = 0; i < pre.size(); ++i)
                mask[i] = rng.uniform01() < keep ? 1 : 0;
            for (size_t i = 0; i < pre.size(); ++i) {
                const float r = pre[i] > 0.0f ? pre[i] : 0.0f;
                post[i] = mask[i] ? r / keep : 0.0f;
            }
        } else {
            for (size_t i = 0; i < pre.size(); ++i)
                post[i] = pre[i] > 0.0f ? pre[i] : 0.0f;
        }
        cur = post.data();
    }

    const LayerView& out = layers[n_hidden];
    rec.logits.assign(static_cast<size_t>(batch.count) * out.out, 0.0f);
    for (int b = 0; b < batch.count; ++b)
        std::memcpy(rec.logits.data() + static_cast<size_t>(b) * out.out, out.b,
                    sizeof(float) * out.out);
    detail::mm_forward(cur, batch.count, out.in, out.w, out.out, rec.logits.data());
    return rec;
}

// Mean cross-entropy over the batch and its loss value.
inline double cross_entropy(const std::vector<float>& logits, const uint8_t* labels,
                            int count, int classes) {
    double total = 0.0;
    for (int b = 0; b < count; ++b) {
        const float* z = logits.data() + static_cast<size_t>(b) * classes;
        float m = z[0];
        for (int j = 1; j < classes; ++j) m = std::max(m, z[j]);
        double sum = 0.0;
        for (int j = 0; j < classes; ++j) sum += std::exp(static_cast<double>(z[j] - m));
        total += std::log(sum) + m - z[labels[b]];
    }
    return total / count;
}

struct LossGrad {
    double loss;
    std::vector<float> grad;  // same layout as theta
};

// Gradient of the mean cross-entropy w.r.t. theta via backprop. `grad_out`
// must be zeroed and sized like theta.
inline double loss_and_grad_into(const MlpArchitecture& arch, const ParamVector& theta,
                                 const Batch& batch, Mode mode, RngStream& rng,
                                 float* grad_out) {
    if (batch.count <= 0) throw DimensionError("loss_and_grad: empty batch");
    ForwardRecord rec = forward(arch, theta, batch, mode, rng);
    const std::vector<LayerView> layers = layer_views(arch, theta);
    const int n_hidden = static_cast<int>(arch.hidden.size());
    const int classes = arch.classes;
    const float keep = 1.0f - arch.dropout;
    const bool used_dropout = !rec.masks.empty();

    const double loss = cross_entropy(rec.logits, batch.labels, batch.count, classes);

    // d(mean CE)/d logits = (softmax - onehot) / count
    std::vector<float> dcur(rec.logits.size());
    const float inv_count = 1.0f / static_cast<float>(batch.count);
    for (int b = 0; b < batch.count; ++b) {
        const float* z = rec.logits.data() + static_cast<size_t>(b) * classes;
        float* d = dcur.data() + static_cast<size_t>(b) * classes;
        float m = z[0];
        for (int j = 1; j < classes; ++j) m = std::max(m, z[j]);
        double sum = 0.0;
        for (int j = 0; j < classes; ++j) sum += std::exp(static_cast<double>(z[j] - m));
        for (int j = 0; j < classes; ++j)
            d[j] = static_cast<float>(std::exp(static_cast<double>(z[j] - m)) / sum) * inv_count;
        d[batch.labels[b]] -= inv_count;
    }

    // offset of each layer's weight block in theta
    std::vector<size_t> offsets(layers.size());
    {
        size_t off = 0;
        for (size_t l = 0; l < layers.size(); ++l) {
            offsets[l] = off;
            off += static_cast<size_t>(layers[l].in) * layers[l].out + layers[l].out;
        }
    }

    for (int l = n_hidden; l >= 0; --l) {
        const LayerView& lv = layers[l];
        const float* in = (l == 0) ? batch.inputs : rec.post[l - 1].data();
        float* dw = grad_out + offsets[l];
        float* db = dw + static_cast<size_t>(lv.in) * lv.out;

        detail::mm_grad_w(in, dcur.data(), batch.count, lv.in, lv.out, dw);
        for (int b = 0; b < batch.count; ++b) {
            const float* d = dcur.data() + static_cast<size_t>(b) * lv.out;
            for (int j = 0; j < lv.out; ++j) db[j] += d[j];
        }

        if (l == 0) break;
        std::vector<float> din(static_cast<size_t>(batch.count) * lv.in);
        detail::mm_grad_in(dcur.data(), lv.w, batch.count, lv.in, lv.out, din.data());

        // back through dropout and relu of hidden layer l-1
        const std::vector<float>& pre = rec.pre[l - 1];
        if (used_dropout) {
            const std::vector<uint8_t>& mask = rec.masks[l - 1];
            for (size_t i = 0; i < din.size(); ++i)
                din[i] = (mask[i] && pre[i] > 0.0f) ? din[i] / keep : 0.0f;
        } else {
            for (size_t i = 0; i < din.size(); ++i)
                if (pre[i] <= 0.0f) din[i] = 0.0f;
        }
        dcur = std::move(din);
    }
    return loss;
}

inline LossGrad loss_and_grad(const MlpArchitecture& arch, const ParamVector& theta,
                              const Batch& batch, Mode mode, RngStream& rng) {
    LossGrad lg;
    lg.grad.assign(theta.size(), 0.0f);
    lg.loss = loss_and_grad_into(arch, theta, batch, mode, rng, lg.grad.data());
    return lg;
}

struct FisherResult {
    std::vector<double> omega;      // mean of elementwise-squared per-sample grads
    std::vector<double> mean_grad;  // mean per-sample gradient (= batch CE gradient)
};

// Empirical Fisher diagonal over the batch, eval mode forced. Samples are
// processed in fixed chunks so the accumulation order is independent of the
// thread count.
inline FisherResult fisher_diag_and_mean_grad(const MlpArchitecture& arch,
                                              const ParamVector& theta,
                                              const Batch& batch) {
    if (batch.count <= 0) throw DimensionError("per_sample_sq_grad: empty batch");
    const size_t n = theta.size();
    constexpr int kChunks = 16;
    const int chunks = std::min(kChunks, batch.count);

    std::vector<std::vector<double>> sq(chunks), sum(chunks);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < chunks; ++c) {
        const int lo = static_cast<int>(static_cast<int64_t>(batch.count) * c / chunks);
        const int hi = static_cast<int>(static_cast<int64_t>(batch.count) * (c + 1) / chunks);
        sq[c].assign(n, 0.0);
        sum[c].assign(n, 0.0);
        std::vector<float> g(n);
        RngStream dummy(0);
        for (int b = lo; b < hi; ++b) {
            std::fill(g.begin(), g.end(), 0.0f);
            Batch one{batch.inputs + static_cast<size_t>(b) * batch.dim,
                      batch.labels + b, 1, batch.dim};
            loss_and_grad_into(arch, theta, one, Mode::Eval, dummy, g.data());
            for (size_t i = 0; i < n; ++i) {
                const double gi = g[i];
                sq[c][i] += gi * gi;
                sum[c][i] += gi;
            }
        }
    }

    FisherResult out;
    out.omega.assign(n, 0.0);
    out.mean_grad.assign(n, 0.0);
    for (int c = 0; c < chunks; ++c)
        for (size_t i = 0; i < n; ++i) {
            out.omega[i] += sq[c][i];
            out.mean_grad[i] += sum[c][i];
        }
    const double inv = 1.0 / batch.count;
    for (size_t i = 0; i < n; ++i) {
        out.omega[i] *= inv;
        out.mean_grad[i] *= inv;
    }
    return out;
}

inline std::vector<double> per_sample_sq_grad(const MlpArchitecture& arch,
                                              const ParamVector& theta,
                                              const Batch& batch) {
    return fisher_diag_and_mean_grad(arch, theta, batch).omega;
}

enum class OptimizerKind { SgdMomentum, Adam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Adam;
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps_adam = 1e-8f;
    float momentum = 0.9f;
    int64_t step = 0;
    std::vector<float> m;  // first moment / velocity
    std::vector<float> v;  // second moment (Adam only)
};

inline void optimizer_step(OptimizerState& state, ParamVector& theta,
                           const std::vector<float>& grad) {
    if (grad.size() != theta.size())
        throw DimensionError("optimizer_step: gradient length mismatch");
    for (size_t i = 0; i < grad.size(); ++i)
        if (!std::isfinite(grad[i]))
            throw NumericalError("optimizer_step: non-finite gradient entry at index " +
                                 std::to_string(i));

    state.step += 1;
    if (state.kind == OptimizerKind::SgdMomentum) {
        if (state.m.size() != theta.size()) state.m.assign(theta.size(), 0.0f);
        const float mu = state.momentum, lr = state.lr;
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < static_cast<int64_t>(theta.size()); ++i) {
            state.m[i] = mu * state.m[i] + grad[i];
            theta[i] -= lr * state.m[i];
        }
    } else {
        if (state.m.size() != theta.size()) state.m.assign(theta.size(), 0.0f);
        if (state.v.size() != theta.size()) state.v.assign(theta.size(), 0.0f);
        const float b1 = state.beta1, b2 = state.beta2;
        const float bc1 = 1.0f - std::pow(b1, static_cast<float>(state.step));
        const float bc2 = 1.0f - std::pow(b2, static_cast<float>(state.step));
        const float lr = state.lr, eps = state.eps_adam;
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < static_cast<int64_t>(theta.size()); ++i) {
            state.m[i] = b1 * state.m[i] + (1.0f - b1) * grad[i];
            state.v[i] = b2 * state.v[i] + (1.0f - b2) * grad[i] * grad[i];
            const float mhat = state.m[i] / bc1;
            const float vhat = state.v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// Versioned binary checkpoint: magic "CSQN", version, N, widths, then theta
// as little-endian 32-bit floats.
inline void save_checkpoint(const std::string& path, const MlpArchitecture& arch,
                            const ParamVector& theta) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write("CSQN", 4);
    io::write_le<uint32_t>(os, 1u);
    io::write_le<uint64_t>(os, theta.size());
    const std::vector<int> w = arch.widths();
    io::write_le<uint32_t>(os, static_cast<uint32_t>(w.size()));
    for (int x : w) io::write_le<uint32_t>(os, static_cast<uint32_t>(x));
    for (float x : theta) io::write_le<float>(os, x);
    if (!os) throw DataError("checkpoint write failed: " + path);
}

struct CheckpointData {
    std::vector<int> widths;
    ParamVector theta;
};

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    io::read_bytes(is, magic, 4);
    if (std::memcmp(magic, "CSQN", 4) != 0)
        throw DataError("bad checkpoint magic: " + path);
    const uint32_t version = io::read_le<uint32_t>(is);
    if (version != 1) throw DataError("unsupported checkpoint version");
    const uint64_t n = io::read_le<uint64_t>(is);
    const uint32_t wc = io::read_le<uint32_t>(is);
    CheckpointData out;
    out.widths.resize(wc);
    for (uint32_t i = 0; i < wc; ++i)
        out.widths[i] = static_cast<int>(io::read_le<uint32_t>(is));
    out.theta.resize(n);
    for (uint64_t i = 0; i < n; ++i) out.theta[i] = io::read_le<float>(is);
    return out;
}

}  // namespace csqn::nn

#endif  // CSQN_NN_HPP
