#pragma once

#include <vector>

#include "gradmix/graph.hpp"

namespace gradmix {

/// Weights of the combined objective: theta scales the supervised term,
/// lambda the self-supervised term, gamma is the mask side-ratio whose
/// square weights the mixed term.
struct LossWeights {
    double theta = 1.0;
    double lambda = 1.0;
    double gamma = 0.5;
};

enum class SupConDenominator {
    AsPrinted,  // only different-label samples in the denominator
    Standard,   // all k != i
};

namespace detail {

template <typename T>
TensorT<T> offdiag_mask(int n) {
    TensorT<T> m({n, n}, T(1));
    for (int i = 0; i < n; ++i) m.at2(i, i) = T(0);
    return m;
}

}  // namespace detail

/// SimCLR loss over a 2N-row embedding node (rows 0..N-1 pair with rows
/// N..2N-1), mean over all 2N anchors.
template <typename T>
NodeId simclr_loss(GraphT<T>& g, NodeId z, int pairs, double tau) {
    const auto& zi = g.out(z);
    if (tau <= 0) throw Error("simclr: temperature must be positive");
    if (pairs < 1) throw Error("simclr: batch must contain at least one pair");
    if (zi.ndim() != 2 || zi.shape[0] != 2 * pairs)
        throw Error("simclr: embeddings must be 2N x D with N=" + std::to_string(pairs) +
                    ", got " + shape_str(zi.shape));
    const int n2 = 2 * pairs;

    NodeId sim = g.matmul_nt(z, z);
    NodeId logits = g.scale(sim, static_cast<T>(1.0 / tau));
    NodeId e = g.exp(logits);
    NodeId masked = g.mul_const(e, detail::offdiag_mask<T>(n2));
    NodeId logden = g.log(g.row_sum(masked));

    TensorT<T> pos_mask({n2, n2}, T(0));
    for (int i = 0; i < pairs; ++i) {
        pos_mask.at2(i, i + pairs) = T(1);
        pos_mask.at2(i + pairs, i) = T(1);
    }
    NodeId pos = g.row_sum(g.mul_const(logits, std::move(pos_mask)));
    return g.mean(g.sub(logden, pos));
}

/// SupCon loss; anchors with empty positive sets contribute zero and are
/// excluded from the mean.
template <typename T>
NodeId supcon_loss(GraphT<T>& g, NodeId z, const std::vector<int>& labels, double tau,
                   SupConDenominator mode = SupConDenominator::AsPrinted) {
    const auto& zi = g.out(z);
    if (tau <= 0) throw Error("supcon: temperature must be positive");
    if (zi.ndim() != 2) throw Error("supcon: embeddings must be 2-D, got " + shape_str(zi.shape));
    const int n = zi.shape[0];
    if (static_cast<int>(labels.size()) != n)
        throw Error("supcon: labels missing or wrong count (" + std::to_string(labels.size()) +
                    " for " + std::to_string(n) + " rows)");

    TensorT<T> denom_mask({n, n}, T(0));
    TensorT<T> pos_mask({n, n}, T(0));
    std::vector<int> pos_count(n, 0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            bool same = labels[i] == labels[k];
            if (same) {
                pos_mask.at2(i, k) = T(1);
                ++pos_count[i];
            }
            if (mode == SupConDenominator::Standard || !same) denom_mask.at2(i, k) = T(1);
        }

    int valid = 0;
    TensorT<T> anchor_w({n}, T(0));
    for (int i = 0; i < n; ++i)
        if (pos_count[i] > 0) ++valid;
    if (valid == 0) throw Error("supcon: no anchor has a positive pair");
    for (int i = 0; i < n; ++i) {
        if (pos_count[i] == 0) {
            // keep log finite for excluded anchors; their weight is zero
            denom_mask.at2(i, i) = T(1);
            continue;
        }
        bool empty_denom = true;
        for (int k = 0; k < n; ++k)
            if (denom_mask.at2(i, k) != T(0)) { empty_denom = false; break; }
        if (empty_denom) throw Error("supcon: anchor " + std::to_string(i) + " has empty denominator");
        anchor_w.data[i] = T(1) / static_cast<T>(valid);
        // fold the 1/|P(i)| averaging into the positive mask
        for (int k = 0; k < n; ++k) pos_mask.at2(i, k) /= static_cast<T>(pos_count[i]);
    }

    NodeId sim = g.matmul_nt(z, z);
    NodeId logits = g.scale(sim, static_cast<T>(1.0 / tau));
    NodeId e = g.exp(logits);
    NodeId logden = g.log(g.row_sum(g.mul_const(e, std::move(denom_mask))));
    NodeId pos = g.row_sum(g.mul_const(logits, std::move(pos_mask)));
    return g.dot_const(g.sub(logden, pos), std::move(anchor_w));
}

/// theta * supcon + lambda * simclr on one batch.
template <typename T>
NodeId contra_loss(GraphT<T>& g, NodeId z, int pairs, const std::vector<int>& labels, double tau,
                   const LossWeights& w, SupConDenominator mode = SupConDenominator::AsPrinted) {
    NodeId sup = g.scale(supcon_loss(g, z, labels, tau, mode), static_cast<T>(w.theta));
    NodeId ssl = g.scale(simclr_loss(g, z, pairs, tau), static_cast<T>(w.lambda));
    return g.add(sup, ssl);
}

/// Full objective: theta * supcon(clean) + lambda * (simclr(clean) +
/// gamma^2 * simclr(mixed)). gamma is the recorded mask ratio of the mixed
/// batch and must lie in [0.1, 0.5].
template <typename T>
NodeId full_objective(GraphT<T>& g, NodeId z_clean, NodeId z_mixed, int pairs,
                      const std::vector<int>& labels, double tau, const LossWeights& w,
                      SupConDenominator mode = SupConDenominator::AsPrinted) {
    if (w.gamma < 0.1 || w.gamma > 0.5)
        throw Error("full_objective: gamma " + std::to_string(w.gamma) + " outside [0.1, 0.5]");
    NodeId sup = g.scale(supcon_loss(g, z_clean, labels, tau, mode), static_cast<T>(w.theta));
    NodeId ssl_clean = simclr_loss(g, z_clean, pairs, tau);
    NodeId ssl_mixed = g.scale(simclr_loss(g, z_mixed, pairs, tau),
                               static_cast<T>(w.gamma * w.gamma));
    NodeId ssl = g.scale(g.add(ssl_clean, ssl_mixed), static_cast<T>(w.lambda));
    return g.add(sup, ssl);
}

/// Softmax cross-entropy, optionally combined with a SimCLR term on an
/// auxiliary batch: ce_weight * CE + lambda * simclr. The CE weight is a
/// distinct field from the mask ratio.
template <typename T>
NodeId ce_loss(GraphT<T>& g, NodeId logits, const std::vector<int>& labels) {
    return g.softmax_ce(logits, labels);
}

template <typename T>
NodeId ce_ssl_loss(GraphT<T>& g, NodeId logits, const std::vector<int>& labels, NodeId z_ssl,
                   int pairs, double tau, double ce_weight, double lambda) {
    NodeId ce = g.scale(g.softmax_ce(logits, labels), static_cast<T>(ce_weight));
    NodeId ssl = g.scale(simclr_loss(g, z_ssl, pairs, tau), static_cast<T>(lambda));
    return g.add(ce, ssl);
}

}  // namespace gradmix
