#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gradmix/tensor.hpp"

namespace gradmix {

enum class OpKind {
    Value,
    Conv2d,
    Dense,
    Relu,
    MaxPool2,
    GlobalAvgPool,
    BatchNorm2d,
    L2Normalize,
    MatmulNT,
    Add,
    Sub,
    Mul,
    Scale,
    Log,
    Exp,
    RowSum,
    Sum,
    Mean,
    MulConst,
    DotConst,
    SoftmaxCE,
    BilinearResize,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Value: return "value";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Dense: return "dense";
        case OpKind::Relu: return "relu";
        case OpKind::MaxPool2: return "max-pool-2x2";
        case OpKind::GlobalAvgPool: return "global-average-pool";
        case OpKind::BatchNorm2d: return "batch-norm-2d";
        case OpKind::L2Normalize: return "l2-normalize";
        case OpKind::MatmulNT: return "matmul-nt";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Log: return "log";
        case OpKind::Exp: return "exp";
        case OpKind::RowSum: return "row-sum";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::MulConst: return "mul-const";
        case OpKind::DotConst: return "dot-const";
        case OpKind::SoftmaxCE: return "softmax-ce";
        case OpKind::BilinearResize: return "bilinear-resize";
    }
    return "?";
}

/// Batch-norm running statistics, owned by the model, updated by train-mode
/// forwards when update_running is set.
template <typename T>
struct BNStateT {
    TensorT<T> running_mean;
    TensorT<T> running_var;
    explicit BNStateT(int channels = 1)
        : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

using NodeId = int;

/// Reverse-mode tape over dense tensors. Nodes are appended in topological
/// order; backward walks the tape in reverse. Single-threaded per instance.
template <typename T>
class GraphT {
public:
    using Tensor = TensorT<T>;

    struct Node {
        OpKind kind = OpKind::Value;
        std::vector<NodeId> inputs;
        Tensor out;
        Tensor grad;            // same shape as out, allocated by backward
        bool grad_ready = false;
        // op parameters
        int stride = 1, pad = 0;
        T scalar = T(0);
        Tensor aux;             // mask for MulConst, weights for DotConst, saved xhat for BN, softmax probs
        Tensor aux2;            // BN saved inv-std per channel
        std::vector<int> labels;  // SoftmaxCE
        std::vector<int> idx;     // MaxPool argmax indices
        BNStateT<T>* bn_state = nullptr;
        bool bn_train = false;
        Tensor col;             // im2col buffer for conv backward
    };

    NodeId value(Tensor v) {
        Node n;
        n.kind = OpKind::Value;
        n.out = std::move(v);
        return push(std::move(n));
    }

    const Tensor& out(NodeId id) const { return node(id).out; }
    const Tensor& grad(NodeId id) const {
        const Node& n = node(id);
        if (!n.grad_ready) throw Error("graph: gradient not computed for node " + std::to_string(id));
        return n.grad;
    }
    bool has_grad(NodeId id) const { return node(id).grad_ready; }
    std::size_t size() const { return nodes_.size(); }

    /// Overwrite a leaf's value (used by finite-difference probing).
    void set_value(NodeId id, const Tensor& v) {
        Node& n = node(id);
        if (n.kind != OpKind::Value) throw Error("graph: set_value on non-leaf node");
        if (!n.out.same_shape(v)) throw Error("graph: set_value shape mismatch");
        n.out = v;
    }

    // ---- kernel catalog -------------------------------------------------

    NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride = 1, int pad = 0) {
        const Tensor& xi = out_of(x, "conv2d input");
        const Tensor& wi = out_of(w, "conv2d weight");
        const Tensor& bi = out_of(b, "conv2d bias");
        require(xi.ndim() == 4, "conv2d", "input must be NCHW, got " + shape_str(xi.shape));
        require(wi.ndim() == 4, "conv2d", "weight must be OC x C x KH x KW, got " + shape_str(wi.shape));
        require(xi.shape[1] == wi.shape[1],
                "conv2d", "input channels " + std::to_string(xi.shape[1]) +
                              " != weight channels " + std::to_string(wi.shape[1]));
        require(bi.ndim() == 1 && bi.shape[0] == wi.shape[0],
                "conv2d", "bias shape " + shape_str(bi.shape) + " != output channels");
        int N = xi.shape[0], C = xi.shape[1], H = xi.shape[2], W = xi.shape[3];
        int OC = wi.shape[0], KH = wi.shape[2], KW = wi.shape[3];
        int OH = (H + 2 * pad - KH) / stride + 1;
        int OW = (W + 2 * pad - KW) / stride + 1;
        require(OH >= 1 && OW >= 1, "conv2d", "kernel larger than padded input");

        Node n;
        n.kind = OpKind::Conv2d;
        n.inputs = {x, w, b};
        n.stride = stride;
        n.pad = pad;
        // im2col: rows = N*OH*OW, cols = C*KH*KW
        const int K = C * KH * KW;
        const std::size_t rows = static_cast<std::size_t>(N) * OH * OW;
        n.col = Tensor({static_cast<int>(rows), K});
        T* col = n.col.data.data();
        for (int img = 0; img < N; ++img)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T* row = col + ((static_cast<std::size_t>(img) * OH + oy) * OW + ox) * K;
                    int iy0 = oy * stride - pad, ix0 = ox * stride - pad;
                    int p = 0;
                    for (int c = 0; c < C; ++c)
                        for (int ky = 0; ky < KH; ++ky)
                            for (int kx = 0; kx < KW; ++kx, ++p) {
                                int iy = iy0 + ky, ix = ix0 + kx;
                                row[p] = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? xi.at4(img, c, iy, ix) : T(0);
                            }
                }
        n.out = Tensor({N, OC, OH, OW});
        // out[img, oc, oy, ox] = col_row . w[oc] + b[oc]
        for (int img = 0; img < N; ++img)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const T* row = col + ((static_cast<std::size_t>(img) * OH + oy) * OW + ox) * K;
                    for (int oc = 0; oc < OC; ++oc) {
                        const T* wrow = &wi.data[static_cast<std::size_t>(oc) * K];
                        T acc = bi.data[oc];
                        for (int p = 0; p < K; ++p) acc += row[p] * wrow[p];
                        n.out.at4(img, oc, oy, ox) = acc;
                    }
                }
        return push(std::move(n));
    }

    NodeId dense(NodeId x, NodeId w, NodeId b) {
        const Tensor& xi = out_of(x, "dense input");
        const Tensor& wi = out_of(w, "dense weight");
        const Tensor& bi = out_of(b, "dense bias");
        require(xi.ndim() == 2, "dense", "input must be 2-D, got " + shape_str(xi.shape));
        require(wi.ndim() == 2 && wi.shape[0] == xi.shape[1],
                "dense", "weight " + shape_str(wi.shape) + " incompatible with input " + shape_str(xi.shape));
        require(bi.ndim() == 1 && bi.shape[0] == wi.shape[1],
                "dense", "bias shape " + shape_str(bi.shape) + " != output features");
        int N = xi.shape[0], F = xi.shape[1], O = wi.shape[1];
        Node n;
        n.kind = OpKind::Dense;
        n.inputs = {x, w, b};
        n.out = Tensor({N, O});
        for (int i = 0; i < N; ++i) {
            for (int o = 0; o < O; ++o) n.out.at2(i, o) = bi.data[o];
            for (int f = 0; f < F; ++f) {
                T xv = xi.at2(i, f);
                const T* wrow = &wi.data[static_cast<std::size_t>(f) * O];
                T* orow = &n.out.data[static_cast<std::size_t>(i) * O];
                for (int o = 0; o < O; ++o) orow[o] += xv * wrow[o];
            }
        }
        return push(std::move(n));
    }

    NodeId relu(NodeId x) {
        Node n = unary(OpKind::Relu, x);
        for (auto& v : n.out.data) v = v > T(0) ? v : T(0);
        return push(std::move(n));
    }

    NodeId maxpool2(NodeId x) {
        const Tensor& xi = out_of(x, "max-pool-2x2 input");
        require(xi.ndim() == 4, "max-pool-2x2", "input must be NCHW, got " + shape_str(xi.shape));
        require(xi.shape[2] % 2 == 0 && xi.shape[3] % 2 == 0,
                "max-pool-2x2", "spatial dims must be even, got " + shape_str(xi.shape));
        int N = xi.shape[0], C = xi.shape[1], H = xi.shape[2], W = xi.shape[3];
        Node n;
        n.kind = OpKind::MaxPool2;
        n.inputs = {x};
        n.out = Tensor({N, C, H / 2, W / 2});
        n.idx.resize(n.out.numel());
        std::size_t o = 0;
        for (int img = 0; img < N; ++img)
            for (int c = 0; c < C; ++c)
                for (int oy = 0; oy < H / 2; ++oy)
                    for (int ox = 0; ox < W / 2; ++ox, ++o) {
                        T best = xi.at4(img, c, 2 * oy, 2 * ox);
                        int bi = 0;
                        for (int k = 1; k < 4; ++k) {
                            T v = xi.at4(img, c, 2 * oy + k / 2, 2 * ox + k % 2);
                            if (v > best) { best = v; bi = k; }
                        }
                        n.out.data[o] = best;
                        n.idx[o] = bi;
                    }
        return push(std::move(n));
    }

    NodeId global_avg_pool(NodeId x) {
        const Tensor& xi = out_of(x, "global-average-pool input");
        require(xi.ndim() == 4, "global-average-pool", "input must be NCHW, got " + shape_str(xi.shape));
        int N = xi.shape[0], C = xi.shape[1], HW = xi.shape[2] * xi.shape[3];
        Node n;
        n.kind = OpKind::GlobalAvgPool;
        n.inputs = {x};
        n.out = Tensor({N, C});
        for (int i = 0; i < N; ++i)
            for (int c = 0; c < C; ++c) {
                const T* p = &xi.data[(static_cast<std::size_t>(i) * C + c) * HW];
                T acc = T(0);
                for (int k = 0; k < HW; ++k) acc += p[k];
                n.out.at2(i, c) = acc / static_cast<T>(HW);
            }
        return push(std::move(n));
    }

    /// Train mode normalizes by batch statistics (and optionally updates the
    /// running stats); eval mode uses the stored running stats.
    NodeId batchnorm2d(NodeId x, NodeId gamma, NodeId beta, BNStateT<T>* state,
                       bool train, bool update_running, T momentum = T(0.1), T eps = T(1e-5)) {
        const Tensor& xi = out_of(x, "batch-norm-2d input");
        const Tensor& gi = out_of(gamma, "batch-norm-2d scale");
        const Tensor& bi = out_of(beta, "batch-norm-2d shift");
        require(xi.ndim() == 4, "batch-norm-2d", "input must be NCHW, got " + shape_str(xi.shape));
        int N = xi.shape[0], C = xi.shape[1], HW = xi.shape[2] * xi.shape[3];
        require(gi.ndim() == 1 && gi.shape[0] == C && bi.ndim() == 1 && bi.shape[0] == C,
                "batch-norm-2d", "scale/shift must have " + std::to_string(C) + " channels");
        require(state != nullptr, "batch-norm-2d", "missing running-stat state");

        Node n;
        n.kind = OpKind::BatchNorm2d;
        n.inputs = {x, gamma, beta};
        n.bn_state = state;
        n.bn_train = train;
        n.out = Tensor(xi.shape);
        n.aux = Tensor(xi.shape);   // xhat
        n.aux2 = Tensor({C, 2});    // per-channel (mean, inv_std)
        const std::size_t cnt = static_cast<std::size_t>(N) * HW;
        for (int c = 0; c < C; ++c) {
            T mean, var;
            if (train) {
                double m = 0;
                for (int i = 0; i < N; ++i) {
                    const T* p = &xi.data[(static_cast<std::size_t>(i) * C + c) * HW];
                    for (int k = 0; k < HW; ++k) m += p[k];
                }
                m /= static_cast<double>(cnt);
                double v = 0;
                for (int i = 0; i < N; ++i) {
                    const T* p = &xi.data[(static_cast<std::size_t>(i) * C + c) * HW];
                    for (int k = 0; k < HW; ++k) {
                        double d = p[k] - m;
                        v += d * d;
                    }
                }
                v /= static_cast<double>(cnt);  // biased variance, as normalization uses
                mean = static_cast<T>(m);
                var = static_cast<T>(v);
                if (update_running) {
                    state->running_mean.data[c] =
                        (T(1) - momentum) * state->running_mean.data[c] + momentum * mean;
                    state->running_var.data[c] =
                        (T(1) - momentum) * state->running_var.data[c] + momentum * var;
                }
            } else {
                mean = state->running_mean.data[c];
                var = state->running_var.data[c];
            }
            T inv_std = T(1) / std::sqrt(var + eps);
            n.aux2.at2(c, 0) = mean;
            n.aux2.at2(c, 1) = inv_std;
            for (int i = 0; i < N; ++i) {
                const T* p = &xi.data[(static_cast<std::size_t>(i) * C + c) * HW];
                T* xh = &n.aux.data[(static_cast<std::size_t>(i) * C + c) * HW];
                T* po = &n.out.data[(static_cast<std::size_t>(i) * C + c) * HW];
                for (int k = 0; k < HW; ++k) {
                    xh[k] = (p[k] - mean) * inv_std;
                    po[k] = gi.data[c] * xh[k] + bi.data[c];
                }
            }
        }
        return push(std::move(n));
    }

    /// Row-wise L2 normalization of a 2-D tensor (last axis).
    NodeId l2normalize(NodeId x, T eps = T(1e-12)) {
        const Tensor& xi = out_of(x, "l2-normalize input");
        require(xi.ndim() == 2 || xi.ndim() == 1, "l2-normalize",
                "input must be 1-D or 2-D, got " + shape_str(xi.shape));
        Node n;
        n.kind = OpKind::L2Normalize;
        n.inputs = {x};
        n.out = Tensor(xi.shape);
        int rows = xi.ndim() == 2 ? xi.shape[0] : 1;
        int cols = xi.ndim() == 2 ? xi.shape[1] : xi.shape[0];
        n.aux = Tensor({rows});  // saved norms
        for (int i = 0; i < rows; ++i) {
            const T* p = &xi.data[static_cast<std::size_t>(i) * cols];
            double s = 0;
            for (int j = 0; j < cols; ++j) s += static_cast<double>(p[j]) * p[j];
            T norm = static_cast<T>(std::sqrt(s));
            if (norm < eps) norm = eps;
            n.aux.data[i] = norm;
            T* po = &n.out.data[static_cast<std::size_t>(i) * cols];
            for (int j = 0; j < cols; ++j) po[j] = p[j] / norm;
        }
        return push(std::move(n));
    }

    /// C = A · Bᵀ for 2-D A (m×k) and B (n×k). With L2-normalized rows this
    /// is the pairwise-cosine-similarity matrix.
    NodeId matmul_nt(NodeId a, NodeId b) {
        const Tensor& ai = out_of(a, "matmul-nt lhs");
        const Tensor& bi = out_of(b, "matmul-nt rhs");
        require(ai.ndim() == 2 && bi.ndim() == 2 && ai.shape[1] == bi.shape[1],
                "matmul-nt", "shapes " + shape_str(ai.shape) + " and " + shape_str(bi.shape));
        int m = ai.shape[0], k = ai.shape[1], nn = bi.shape[0];
        Node n;
        n.kind = OpKind::MatmulNT;
        n.inputs = {a, b};
        n.out = Tensor({m, nn});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < nn; ++j) {
                const T* pa = &ai.data[static_cast<std::size_t>(i) * k];
                const T* pb = &bi.data[static_cast<std::size_t>(j) * k];
                T acc = T(0);
                for (int t = 0; t < k; ++t) acc += pa[t] * pb[t];
                n.out.at2(i, j) = acc;
            }
        return push(std::move(n));
    }

    /// Pairwise cosine similarity between rows of a and rows of b.
    NodeId pairwise_cosine(NodeId a, NodeId b) { return matmul_nt(l2normalize(a), l2normalize(b)); }

    NodeId add(NodeId a, NodeId b) { return binary(OpKind::Add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return binary(OpKind::Sub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return binary(OpKind::Mul, a, b); }

    NodeId scale(NodeId x, T c) {
        Node n = unary(OpKind::Scale, x);
        n.scalar = c;
        for (auto& v : n.out.data) v *= c;
        return push(std::move(n));
    }

    NodeId log(NodeId x) {
        Node n = unary(OpKind::Log, x);
        for (auto& v : n.out.data) v = std::log(v);
        return push(std::move(n));
    }

    NodeId exp(NodeId x) {
        Node n = unary(OpKind::Exp, x);
        for (auto& v : n.out.data) v = std::exp(v);
        return push(std::move(n));
    }

    NodeId row_sum(NodeId x) {
        const Tensor& xi = out_of(x, "row-sum input");
        require(xi.ndim() == 2, "row-sum", "input must be 2-D, got " + shape_str(xi.shape));
        Node n;
        n.kind = OpKind::RowSum;
        n.inputs = {x};
        n.out = Tensor({xi.shape[0]});
        for (int i = 0; i < xi.shape[0]; ++i) {
            T acc = T(0);
            for (int j = 0; j < xi.shape[1]; ++j) acc += xi.at2(i, j);
            n.out.data[i] = acc;
        }
        return push(std::move(n));
    }

    NodeId sum(NodeId x) {
        Node n;
        n.kind = OpKind::Sum;
        n.inputs = {x};
        const Tensor& xi = out_of(x, "sum input");
        T acc = T(0);
        for (T v : xi.data) acc += v;
        n.out = Tensor({1}, std::vector<T>{acc});
        return push(std::move(n));
    }

    NodeId mean(NodeId x) {
        Node n;
        n.kind = OpKind::Mean;
        n.inputs = {x};
        const Tensor& xi = out_of(x, "mean input");
        T acc = T(0);
        for (T v : xi.data) acc += v;
        n.out = Tensor({1}, std::vector<T>{acc / static_cast<T>(xi.numel())});
        return push(std::move(n));
    }

    /// Elementwise multiply by a constant tensor (no gradient to the mask).
    NodeId mul_const(NodeId x, Tensor mask) {
        const Tensor& xi = out_of(x, "mul-const input");
        require(xi.same_shape(mask), "mul-const",
                "mask " + shape_str(mask.shape) + " != input " + shape_str(xi.shape));
        Node n;
        n.kind = OpKind::MulConst;
        n.inputs = {x};
        n.aux = std::move(mask);
        n.out = Tensor(xi.shape);
        for (std::size_t i = 0; i < xi.numel(); ++i) n.out.data[i] = xi.data[i] * n.aux.data[i];
        return push(std::move(n));
    }

    /// Weighted sum against a constant weight tensor, producing a scalar.
    NodeId dot_const(NodeId x, Tensor weights) {
        const Tensor& xi = out_of(x, "dot-const input");
        require(xi.numel() == weights.numel(), "dot-const",
                "weights " + shape_str(weights.shape) + " != input " + shape_str(xi.shape));
        Node n;
        n.kind = OpKind::DotConst;
        n.inputs = {x};
        n.aux = std::move(weights);
        T acc = T(0);
        for (std::size_t i = 0; i < xi.numel(); ++i) acc += xi.data[i] * n.aux.data[i];
        n.out = Tensor({1}, std::vector<T>{acc});
        return push(std::move(n));
    }

    /// Mean softmax cross-entropy over the batch (fused, numerically stable).
    NodeId softmax_ce(NodeId logits, std::vector<int> labels) {
        const Tensor& li = out_of(logits, "softmax-ce logits");
        require(li.ndim() == 2, "softmax-ce", "logits must be 2-D, got " + shape_str(li.shape));
        int N = li.shape[0], C = li.shape[1];
        require(static_cast<int>(labels.size()) == N, "softmax-ce", "label count != batch size");
        for (int l : labels)
            require(l >= 0 && l < C, "softmax-ce", "label " + std::to_string(l) + " out of range [0," +
                                                       std::to_string(C) + ")");
        Node n;
        n.kind = OpKind::SoftmaxCE;
        n.inputs = {logits};
        n.labels = std::move(labels);
        n.aux = Tensor({N, C});  // probabilities
        double total = 0;
        for (int i = 0; i < N; ++i) {
            const T* row = &li.data[static_cast<std::size_t>(i) * C];
            T mx = row[0];
            for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
            double z = 0;
            for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(row[c] - mx));
            for (int c = 0; c < C; ++c)
                n.aux.at2(i, c) = static_cast<T>(std::exp(static_cast<double>(row[c] - mx)) / z);
            total += -(static_cast<double>(row[n.labels[i]] - mx) - std::log(z));
        }
        n.out = Tensor({1}, std::vector<T>{static_cast<T>(total / N)});
        return push(std::move(n));
    }

    NodeId bilinear(NodeId x, int dh, int dw) {
        const Tensor& xi = out_of(x, "bilinear-resize input");
        require(xi.ndim() == 4, "bilinear-resize", "input must be NCHW, got " + shape_str(xi.shape));
        Node n;
        n.kind = OpKind::BilinearResize;
        n.inputs = {x};
        n.out = bilinear_resize(xi, dh, dw);
        return push(std::move(n));
    }

    /// String-keyed dispatch into the catalog; unknown kinds are errors.
    NodeId apply(const std::string& kind, const std::vector<NodeId>& in,
                 const std::map<std::string, double>& params = {}) {
        auto p = [&](const char* k, double dflt) {
            auto it = params.find(k);
            return it == params.end() ? dflt : it->second;
        };
        if (kind == "conv2d") return conv2d(in.at(0), in.at(1), in.at(2),
                                            static_cast<int>(p("stride", 1)), static_cast<int>(p("pad", 0)));
        if (kind == "dense") return dense(in.at(0), in.at(1), in.at(2));
        if (kind == "relu") return relu(in.at(0));
        if (kind == "max-pool-2x2") return maxpool2(in.at(0));
        if (kind == "global-average-pool") return global_avg_pool(in.at(0));
        if (kind == "l2-normalize") return l2normalize(in.at(0));
        if (kind == "pairwise-cosine-similarity") return pairwise_cosine(in.at(0), in.at(1));
        if (kind == "add") return add(in.at(0), in.at(1));
        if (kind == "mul") return mul(in.at(0), in.at(1));
        if (kind == "scale") return scale(in.at(0), static_cast<T>(p("c", 1.0)));
        if (kind == "log") return log(in.at(0));
        if (kind == "exp") return exp(in.at(0));
        if (kind == "sum") return sum(in.at(0));
        if (kind == "mean") return mean(in.at(0));
        if (kind == "bilinear-resize") return bilinear(in.at(0), static_cast<int>(p("h", 1)),
                                                       static_cast<int>(p("w", 1)));
        throw Error("graph: unknown op kind '" + kind + "'");
    }

    // ---- taps -----------------------------------------------------------

    struct Tap {
        Tensor activation;
        Tensor gradient;
    };

    /// Register before backward; snapshots are taken at retrieval time.
    void register_tap(const std::string& name, NodeId id) {
        node(id);  // validates
        taps_[name] = id;
    }

    Tap tap(const std::string& name) const {
        auto it = taps_.find(name);
        if (it == taps_.end()) throw Error("graph: tap '" + name + "' not registered");
        const Node& n = node(it->second);
        if (!n.grad_ready)
            throw Error("graph: tap '" + name + "' has no gradient; run backward first");
        return Tap{n.out, n.grad};  // independent copies
    }

    std::map<std::string, Tap> taps() const {
        std::map<std::string, Tap> out;
        for (const auto& [name, id] : taps_) out.emplace(name, tap(name));
        return out;
    }

    // ---- backward -------------------------------------------------------

    void zero_grad() {
        for (auto& n : nodes_) {
            n.grad_ready = false;
            n.grad = Tensor();
        }
    }

    /// Reverse pass from a scalar loss. Deterministic: repeated calls after
    /// zero_grad produce identical gradients.
    void backward(NodeId loss) {
        Node& ln = node(loss);
        if (ln.out.numel() != 1)
            throw Error("backward: loss must be scalar, got shape " + shape_str(ln.out.shape));
        ensure_grad(loss);
        ln.grad.data[0] = T(1);
        for (NodeId id = loss; id >= 0; --id) {
            Node& n = node(id);
            if (!n.grad_ready) continue;
            backward_node(n);
        }
    }

private:
    std::vector<Node> nodes_;
    std::map<std::string, NodeId> taps_;

    Node& node(NodeId id) {
        if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
            throw Error("graph: invalid node id " + std::to_string(id));
        return nodes_[id];
    }
    const Node& node(NodeId id) const { return const_cast<GraphT*>(this)->node(id); }

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    const Tensor& out_of(NodeId id, const char* what) {
        (void)what;
        return node(id).out;
    }

    static void require(bool cond, const char* op, const std::string& msg) {
        if (!cond) throw Error(std::string(op) + ": " + msg);
    }

    Node unary(OpKind kind, NodeId x) {
        Node n;
        n.kind = kind;
        n.inputs = {x};
        n.out = node(x).out;
        return n;
    }

    NodeId binary(OpKind kind, NodeId a, NodeId b) {
        const Tensor& ai = node(a).out;
        const Tensor& bi = node(b).out;
        require(ai.same_shape(bi), op_name(kind),
                "shape mismatch " + shape_str(ai.shape) + " vs " + shape_str(bi.shape));
        Node n;
        n.kind = kind;
        n.inputs = {a, b};
        n.out = Tensor(ai.shape);
        for (std::size_t i = 0; i < ai.numel(); ++i) {
            switch (kind) {
                case OpKind::Add: n.out.data[i] = ai.data[i] + bi.data[i]; break;
                case OpKind::Sub: n.out.data[i] = ai.data[i] - bi.data[i]; break;
                case OpKind::Mul: n.out.data[i] = ai.data[i] * bi.data[i]; break;
                default: throw Error("binary: bad kind");
            }
        }
        return push(std::move(n));
    }

    Tensor& ensure_grad(NodeId id) {
        Node& n = node(id);
        if (!n.grad_ready) {
            n.grad = Tensor(n.out.shape, T(0));
            n.grad_ready = true;
        }
        return n.grad;
    }

    void backward_node(Node& n) {
        const Tensor& g = n.grad;
        switch (n.kind) {
            case OpKind::Value:
                break;
            case OpKind::Conv2d: {
                const Tensor& xi = node(n.inputs[0]).out;
                const Tensor& wi = node(n.inputs[1]).out;
                Tensor& gx = ensure_grad(n.inputs[0]);
                Tensor& gw = ensure_grad(n.inputs[1]);
                Tensor& gb = ensure_grad(n.inputs[2]);
                int N = xi.shape[0], C = xi.shape[1], H = xi.shape[2], W = xi.shape[3];
                int OC = wi.shape[0], KH = wi.shape[2], KW = wi.shape[3];
                int OH = n.out.shape[2], OW = n.out.shape[3];
                const int K = C * KH * KW;
                const T* col = n.col.data.data();
                std::vector<T> gcol_row(K);
                for (int img = 0; img < N; ++img)
                    for (int oy = 0; oy < OH; ++oy)
                        for (int ox = 0; ox < OW; ++ox) {
                            const std::size_t r = (static_cast<std::size_t>(img) * OH + oy) * OW + ox;
                            const T* crow = col + r * K;
                            std::fill(gcol_row.begin(), gcol_row.end(), T(0));
                            for (int oc = 0; oc < OC; ++oc) {
                                T go = g.at4(img, oc, oy, ox);
                                if (go == T(0)) continue;
                                gb.data[oc] += go;
                                T* gwrow = &gw.data[static_cast<std::size_t>(oc) * K];
                                const T* wrow = &wi.data[static_cast<std::size_t>(oc) * K];
                                for (int p = 0; p < K; ++p) {
                                    gwrow[p] += go * crow[p];
                                    gcol_row[p] += go * wrow[p];
                                }
                            }
                            // scatter gcol back to input
                            int iy0 = oy * n.stride - n.pad, ix0 = ox * n.stride - n.pad;
                            int p = 0;
                            for (int c = 0; c < C; ++c)
                                for (int ky = 0; ky < KH; ++ky)
                                    for (int kx = 0; kx < KW; ++kx, ++p) {
                                        int iy = iy0 + ky, ix = ix0 + kx;
                                        if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                            gx.at4(img, c, iy, ix) += gcol_row[p];
                                    }
                        }
                break;
            }
            case OpKind::Dense: {
                const Tensor& xi = node(n.inputs[0]).out;
                const Tensor& wi = node(n.inputs[1]).out;
                Tensor& gx = ensure_grad(n.inputs[0]);
                Tensor& gw = ensure_grad(n.inputs[1]);
                Tensor& gb = ensure_grad(n.inputs[2]);
                int N = xi.shape[0], F = xi.shape[1], O = wi.shape[1];
                for (int i = 0; i < N; ++i) {
                    const T* grow = &g.data[static_cast<std::size_t>(i) * O];
                    for (int o = 0; o < O; ++o) gb.data[o] += grow[o];
                    for (int f = 0; f < F; ++f) {
                        const T* wrow = &wi.data[static_cast<std::size_t>(f) * O];
                        T* gwrow = &gw.data[static_cast<std::size_t>(f) * O];
                        T xv = xi.at2(i, f);
                        T acc = T(0);
                        for (int o = 0; o < O; ++o) {
                            acc += grow[o] * wrow[o];
                            gwrow[o] += grow[o] * xv;
                        }
                        gx.at2(i, f) += acc;
                    }
                }
                break;
            }
            case OpKind::Relu: {
                const Tensor& xi = node(n.inputs[0]).out;
                Tensor& gx = ensure_grad(n.inputs[0]);
                // subgradient at 0 is 0
                for (std::size_t i = 0; i < xi.numel(); ++i)
                    if (xi.data[i] > T(0)) gx.data[i] += g.data[i];
                break;
            }
            case OpKind::MaxPool2: {
                const Tensor& xi = node(n.inputs[0]).out;
                Tensor& gx = ensure_grad(n.inputs[0]);
                int N = xi.shape[0], C = xi.shape[1], OH = n.out.shape[2], OW = n.out.shape[3];
                std::size_t o = 0;
                for (int img = 0; img < N; ++img)
                    for (int c = 0; c < C; ++c)
                        for (int oy = 0; oy < OH; ++oy)
                            for (int ox = 0; ox < OW; ++ox, ++o) {
                                int k = n.idx[o];
                                gx.at4(img, c, 2 * oy + k / 2, 2 * ox + k % 2) += g.data[o];
                            }
                break;
            }
            case OpKind::GlobalAvgPool: {
                const Tensor& xi = node(n.inputs[0]).out;
                Tensor& gx = ensure_grad(n.inputs[0]);
                int N = xi.shape[0], C = xi.shape[1], HW = xi.shape[2] * xi.shape[3];
                for (int i = 0; i < N; ++i)
                    for (int c = 0; c < C; ++c) {
                        T go = g.at2(i, c) / static_cast<T>(HW);
                        T* p = &gx.data[(static_cast<std::size_t>(i) * C + c) * HW];
                        for (int k = 0; k < HW; ++k) p[k] += go;
                    }
                break;
            }
            case OpKind::BatchNorm2d: {
                const Tensor& xi = node(n.inputs[0]).out;
                const Tensor& gi = node(n.inputs[1]).out;
                Tensor& gx = ensure_grad(n.inputs[0]);
                Tensor& gg = ensure_grad(n.inputs[1]);
                Tensor& gb = ensure_grad(n.inputs[2]);
                int N = xi.shape[0], C = xi.shape[1], HW = xi.shape[2] * xi.shape[3];
                const std::size_t cnt = static_cast<std::size_t>(N) * HW;
                for (int c = 0; c < C; ++c) {
                    T inv_std = n.aux2.at2(c, 1);
                    double sum_g = 0, sum_gx = 0;
                    for (int i = 0; i < N; ++i) {
                        const std::size_t base = (static_cast<std::size_t>(i) * C + c) * HW;
                        for (int k = 0; k < HW; ++k) {
                            sum_g += g.data[base + k];
                            sum_gx += static_cast<double>(g.data[base + k]) * n.aux.data[base + k];
                        }
                    }
                    gb.data[c] += static_cast<T>(sum_g);
                    gg.data[c] += static_cast<T>(sum_gx);
                    if (n.bn_train) {
                        const double m = static_cast<double>(cnt);
                        for (int i = 0; i < N; ++i) {
                            const std::size_t base = (static_cast<std::size_t>(i) * C + c) * HW;
                            for (int k = 0; k < HW; ++k) {
                                double gy = g.data[base + k];
                                double xh = n.aux.data[base + k];
                                gx.data[base + k] += static_cast<T>(
                                    gi.data[c] * inv_std * (gy - sum_g / m - xh * sum_gx / m));
                            }
                        }
                    } else {
                        for (int i = 0; i < N; ++i) {
                            const std::size_t base = (static_cast<std::size_t>(i) * C + c) * HW;
                            for (int k = 0; k < HW; ++k)
                                gx.data[base + k] += gi.data[c] * inv_std * g.data[base + k];
                        }
                    }
                }
                break;
            }
            case OpKind::L2Normalize: {
                const Tensor& xi = node(n.inputs[0]).out;
                Tensor& gx = ensure_grad(n.inputs[0]);
                int rows = xi.ndim() == 2 ? xi.shape[0] : 1;
                int cols = xi.ndim() == 2 ? xi.shape[1] : xi.shape[0];
                for (int i = 0; i < rows; ++i) {
                    T norm = n.aux.data[i];
                    const T* y = &n.out.data[static_cast<std::size_t>(i) * cols];
                    const T* gr = &g.data[static_cast<std::size_t>(i) * cols];
                    double dot = 0;
                    for (int j = 0; j < cols; ++j) dot += static_cast<double>(gr[j]) * y[j];
                    T* gxr = &gx.data[static_cast<std::size_t>(i) * cols];
                    for (int j = 0; j < cols; ++j)
                        gxr[j] += (gr[j] - static_cast<T>(dot) * y[j]) / norm;
                }
                break;
            }
            case OpKind::MatmulNT: {
                const Tensor& ai = node(n.inputs[0]).out;
                const Tensor& bi = node(n.inputs[1]).out;
                Tensor& ga = ensure_grad(n.inputs[0]);
                Tensor& gb = ensure_grad(n.inputs[1]);
                int m = ai.shape[0], k = ai.shape[1], nn = bi.shape[0];
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < nn; ++j) {
                        T go = g.at2(i, j);
                        if (go == T(0)) continue;
                        const T* pa = &ai.data[static_cast<std::size_t>(i) * k];
                        const T* pb = &bi.data[static_cast<std::size_t>(j) * k];
                        T* pga = &ga.data[static_cast<std::size_t>(i) * k];
                        T* pgb = &gb.data[static_cast<std::size_t>(j) * k];
                        for (int t = 0; t < k; ++t) {
                            pga[t] += go * pb[t];
                            pgb[t] += go * pa[t];
                        }
                    }
                break;
            }
            case OpKind::Add: {
                Tensor& ga = ensure_grad(n.inputs[0]);
                Tensor& gb = ensure_grad(n.inputs[1]);
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    ga.data[i] += g.data[i];
                    gb.data[i] += g.data[i];
                }
                break;
            }
            case OpKind::Sub: {
                Tensor& ga = ensure_grad(n.inputs[0]);
                Tensor& gb = ensure_grad(n.inputs[1]);
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    ga.data[i] += g.data[i];
                    gb.data[i] -= g.data[i];
                }
                break;
            }
            case OpKind::Mul: {
                const Tensor& ai = node(n.inputs[0]).out;
                const Tensor& bi = node(n.inputs[1]).out;
                Tensor& ga = ensure_grad(n.inputs[0]);
                Tensor& gb = ensure_grad(n.inputs[1]);
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    ga.data[i] += g.data[i] * bi.data[i];
                    gb.data[i] += g.data[i] * ai.data[i];
                }
                break;
            }
            case OpKind::Scale: {
                Tensor& gx = ensure_grad(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i] * n.scalar;
                break;
            }
            case OpKind::Log: {
                const Tensor& xi = node(n.inputs[0]).out;
                Tensor& gx = ensure_grad(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i] / xi.data[i];
                break;
            }
            case OpKind::Exp: {
                Tensor& gx = ensure_grad(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i] * n.out.data[i];
                break;
            }
            case OpKind::RowSum: {
                const Tensor& xi = node(n.inputs[0]).out;
                Tensor& gx = ensure_grad(n.inputs[0]);
                for (int i = 0; i < xi.shape[0]; ++i)
                    for (int j = 0; j < xi.shape[1]; ++j) gx.at2(i, j) += g.data[i];
                break;
            }
            case OpKind::Sum: {
                Tensor& gx = ensure_grad(n.inputs[0]);
                for (auto& v : gx.data) v += g.data[0];
                break;
            }
            case OpKind::Mean: {
                Tensor& gx = ensure_grad(n.inputs[0]);
                T go = g.data[0] / static_cast<T>(gx.numel());
                for (auto& v : gx.data) v += go;
                break;
            }
            case OpKind::MulConst: {
                Tensor& gx = ensure_grad(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i] * n.aux.data[i];
                break;
            }
            case OpKind::DotConst: {
                Tensor& gx = ensure_grad(n.inputs[0]);
                for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] += g.data[0] * n.aux.data[i];
                break;
            }
            case OpKind::SoftmaxCE: {
                Tensor& gx = ensure_grad(n.inputs[0]);
                int N = n.aux.shape[0], C = n.aux.shape[1];
                T go = g.data[0] / static_cast<T>(N);
                for (int i = 0; i < N; ++i)
                    for (int c = 0; c < C; ++c)
                        gx.at2(i, c) += go * (n.aux.at2(i, c) - (c == n.labels[i] ? T(1) : T(0)));
                break;
            }
            case OpKind::BilinearResize: {
                const Tensor& xi = node(n.inputs[0]).out;
                Tensor& gx = ensure_grad(n.inputs[0]);
                int N = xi.shape[0], C = xi.shape[1], sh = xi.shape[2], sw = xi.shape[3];
                int dh = n.out.shape[2], dw = n.out.shape[3];
                const double ry = dh > 1 ? static_cast<double>(sh - 1) / (dh - 1) : 0.0;
                const double rx = dw > 1 ? static_cast<double>(sw - 1) / (dw - 1) : 0.0;
                for (int img = 0; img < N; ++img)
                    for (int c = 0; c < C; ++c)
                        for (int y = 0; y < dh; ++y) {
                            double fy = y * ry;
                            int y0 = static_cast<int>(fy);
                            int y1 = std::min(y0 + 1, sh - 1);
                            double wy = fy - y0;
                            for (int x = 0; x < dw; ++x) {
                                double fx = x * rx;
                                int x0 = static_cast<int>(fx);
                                int x1 = std::min(x0 + 1, sw - 1);
                                double wx = fx - x0;
                                T go = g.at4(img, c, y, x);
                                gx.at4(img, c, y0, x0) += static_cast<T>((1 - wy) * (1 - wx)) * go;
                                gx.at4(img, c, y0, x1) += static_cast<T>((1 - wy) * wx) * go;
                                gx.at4(img, c, y1, x0) += static_cast<T>(wy * (1 - wx)) * go;
                                gx.at4(img, c, y1, x1) += static_cast<T>(wy * wx) * go;
                            }
                        }
                break;
            }
        }
    }
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;

}  // namespace gradmix
