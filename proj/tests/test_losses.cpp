#include "doctest.h"

#include <cmath>
#include <random>

#include "gradmix/gradcheck.hpp"
#include "gradmix/losses.hpp"

using namespace gradmix;

namespace {

// independent brute-force evaluations, written directly from the formulas

double cosine(const TensorD& z, int i, int j) {
    double dot = 0, ni = 0, nj = 0;
    for (int d = 0; d < z.shape[1]; ++d) {
        dot += z.at2(i, d) * z.at2(j, d);
        ni += z.at2(i, d) * z.at2(i, d);
        nj += z.at2(j, d) * z.at2(j, d);
    }
    return dot / (std::sqrt(ni) * std::sqrt(nj));
}

double brute_simclr(const TensorD& z, int pairs, double tau) {
    const int n = 2 * pairs;
    double total = 0;
    for (int i = 0; i < n; ++i) {
        int j = i < pairs ? i + pairs : i - pairs;
        double denom = 0;
        for (int k = 0; k < n; ++k)
            if (k != i) denom += std::exp(cosine(z, i, k) / tau);
        total += -(cosine(z, i, j) / tau - std::log(denom));
    }
    return total / n;
}

double brute_supcon(const TensorD& z, const std::vector<int>& labels, double tau,
                    SupConDenominator mode) {
    const int n = z.shape[0];
    double total = 0;
    int valid = 0;
    for (int i = 0; i < n; ++i) {
        std::vector<int> pos;
        for (int p = 0; p < n; ++p)
            if (p != i && labels[p] == labels[i]) pos.push_back(p);
        if (pos.empty()) continue;
        ++valid;
        double denom = 0;
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            bool count = mode == SupConDenominator::Standard || labels[k] != labels[i];
            if (count) denom += std::exp(cosine(z, i, k) / tau);
        }
        double anchor = 0;
        for (int p : pos) anchor += -(cosine(z, i, p) / tau - std::log(denom));
        total += anchor / static_cast<double>(pos.size());
    }
    return total / valid;
}

TensorD normalized_random(int rows, int cols, std::mt19937& rng) {
    TensorD z = random_normal<double>({rows, cols}, rng, 0.0, 1.0);
    for (int i = 0; i < rows; ++i) {
        double n = 0;
        for (int d = 0; d < cols; ++d) n += z.at2(i, d) * z.at2(i, d);
        n = std::sqrt(n);
        for (int d = 0; d < cols; ++d) z.at2(i, d) /= n;
    }
    return z;
}

double eval_simclr(const TensorD& z, int pairs, double tau) {
    GraphD g;
    return g.out(simclr_loss(g, g.value(z), pairs, tau)).data[0];
}

double eval_supcon(const TensorD& z, const std::vector<int>& labels, double tau,
                   SupConDenominator mode) {
    GraphD g;
    return g.out(supcon_loss(g, g.value(z), labels, tau, mode)).data[0];
}

}  // namespace

TEST_CASE("simclr with a single pair is exactly zero") {
    std::mt19937 rng(1);
    TensorD z = normalized_random(2, 6, rng);
    CHECK(eval_simclr(z, 1, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("simclr at identical embeddings equals ln(2N-1), independent of tau") {
    TensorD z({8, 4});
    for (int i = 0; i < 8; ++i) z.at2(i, 0) = 1.0;
    for (double tau : {0.05, 0.1, 0.7})
        CHECK(eval_simclr(z, 4, tau) == doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("simclr equals the brute-force evaluation on seeded batches") {
    std::mt19937 rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        int pairs = 1 + static_cast<int>(rng() % 4);  // 2N <= 8
        TensorD z = normalized_random(2 * pairs, 5, rng);
        CHECK(eval_simclr(z, pairs, 0.1) ==
              doctest::Approx(brute_simclr(z, pairs, 0.1)).epsilon(1e-6));
    }
}

TEST_CASE("simclr rejects bad parameters") {
    std::mt19937 rng(2);
    TensorD z = normalized_random(4, 3, rng);
    GraphD g;
    NodeId zn = g.value(z);
    CHECK_THROWS_AS(simclr_loss(g, zn, 2, -1.0), Error);
    CHECK_THROWS_AS(simclr_loss(g, zn, 0, 0.1), Error);
    CHECK_THROWS_AS(simclr_loss(g, zn, 3, 0.1), Error);  // row count mismatch
}

TEST_CASE("supcon closed form: 2 classes x 2 identical embeddings, as printed") {
    TensorD z({4, 3});
    for (int i = 0; i < 4; ++i) z.at2(i, 1) = 1.0;
    std::vector<int> labels = {0, 0, 1, 1};
    // each anchor: one positive, two different-label denominator terms -> ln 2
    CHECK(eval_supcon(z, labels, 0.1, SupConDenominator::AsPrinted) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // standard mode: denominator has all 3 other samples -> ln 3
    CHECK(eval_supcon(z, labels, 0.1, SupConDenominator::Standard) ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("supcon excludes anchors with empty positive sets") {
    TensorD z({5, 3});
    for (int i = 0; i < 5; ++i) z.at2(i, 2) = 1.0;
    std::vector<int> labels = {0, 0, 0, 0, 7};  // singleton class 7
    // the four class-0 anchors each see 1 different-label denominator term;
    // identical embeddings make each anchor term ln 1 = 0
    CHECK(eval_supcon(z, labels, 0.1, SupConDenominator::AsPrinted) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(eval_supcon(z, labels, 0.1, SupConDenominator::Standard) ==
          doctest::Approx(std::log(4.0) - 0.0).epsilon(1e-12));
}

TEST_CASE("supcon equals brute force in both denominator modes") {
    std::mt19937 rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 4 + static_cast<int>(rng() % 5);  // 2N <= 8 plus odd sizes
        TensorD z = normalized_random(n, 4, rng);
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng() % 2));
        // ensure both classes occur at least twice so every anchor has a
        // positive and a non-empty printed-form denominator
        labels[0] = labels[1] = 0;
        labels[2] = labels[3] = 1;
        for (auto mode : {SupConDenominator::AsPrinted, SupConDenominator::Standard})
            CHECK(eval_supcon(z, labels, 0.1, mode) ==
                  doctest::Approx(brute_supcon(z, labels, 0.1, mode)).epsilon(1e-6));
    }
}

TEST_CASE("supcon error cases") {
    std::mt19937 rng(3);
    TensorD z = normalized_random(4, 3, rng);
    GraphD g;
    NodeId zn = g.value(z);
    CHECK_THROWS_WITH_AS(supcon_loss(g, zn, {0, 1, 2, 3}, 0.1),
                         doctest::Contains("no anchor"), Error);
    CHECK_THROWS_WITH_AS(supcon_loss(g, zn, {0, 1}, 0.1), doctest::Contains("labels"), Error);
    // all same label: every denominator is empty in as-printed mode
    CHECK_THROWS_WITH_AS(supcon_loss(g, zn, {5, 5, 5, 5}, 0.1),
                         doctest::Contains("empty denominator"), Error);
}

TEST_CASE("contra_loss recomposes from its parts") {
    std::mt19937 rng(9);
    TensorD z = normalized_random(6, 4, rng);
    std::vector<int> labels = {0, 1, 0, 0, 1, 0};
    double sup = eval_supcon(z, labels, 0.1, SupConDenominator::AsPrinted);
    double ssl = eval_simclr(z, 3, 0.1);

    LossWeights w;
    w.theta = 1.0;
    w.lambda = 1.2;
    GraphD g;
    double combined = g.out(contra_loss(g, g.value(z), 3, labels, 0.1, w)).data[0];
    CHECK(combined == doctest::Approx(1.0 * sup + 1.2 * ssl).epsilon(1e-9));

    SUBCASE("degenerate weights select a single term") {
        LossWeights w0;
        w0.theta = 0.0;
        w0.lambda = 2.0;
        GraphD g2;
        CHECK(g2.out(contra_loss(g2, g2.value(z), 3, labels, 0.1, w0)).data[0] ==
              doctest::Approx(2.0 * ssl).epsilon(1e-9));
    }
}

TEST_CASE("full objective applies the gamma-squared weight") {
    std::mt19937 rng(13);
    TensorD z_clean = normalized_random(6, 4, rng);
    TensorD z_mixed = normalized_random(6, 4, rng);
    std::vector<int> labels = {0, 1, 1, 0, 1, 1};
    LossWeights w;
    w.theta = 1.0;
    w.lambda = 1.0;
    w.gamma = 0.5;

    GraphD g;
    double total =
        g.out(full_objective(g, g.value(z_clean), g.value(z_mixed), 3, labels, 0.1, w)).data[0];
    double expected = eval_supcon(z_clean, labels, 0.1, SupConDenominator::AsPrinted) +
                      eval_simclr(z_clean, 3, 0.1) + 0.25 * eval_simclr(z_mixed, 3, 0.1);
    CHECK(total == doctest::Approx(expected).epsilon(1e-9));

    SUBCASE("mixed batch equal to clean gives L_supcon + 1.25 L_simclr") {
        GraphD g2;
        double t =
            g2.out(full_objective(g2, g2.value(z_clean), g2.value(z_clean), 3, labels, 0.1, w))
                .data[0];
        CHECK(t == doctest::Approx(eval_supcon(z_clean, labels, 0.1,
                                               SupConDenominator::AsPrinted) +
                                   1.25 * eval_simclr(z_clean, 3, 0.1))
                       .epsilon(1e-9));
    }

    SUBCASE("gamma outside the mask range is rejected") {
        LossWeights bad = w;
        bad.gamma = 0.7;
        GraphD g3;
        CHECK_THROWS_AS(
            full_objective(g3, g3.value(z_clean), g3.value(z_mixed), 3, labels, 0.1, bad), Error);
    }
}

TEST_CASE("cross-entropy: uniform logits give ln C, margin drives loss to zero") {
    GraphD g;
    NodeId logits = g.value(TensorD({2, 10}, 0.0));
    CHECK(g.out(ce_loss(g, logits, {3, 7})).data[0] ==
          doctest::Approx(std::log(10.0)).epsilon(1e-12));

    double prev = 1e9;
    for (double margin : {1.0, 4.0, 12.0}) {
        GraphD h;
        TensorD l({1, 4}, 0.0);
        l.at2(0, 2) = margin;
        double v = h.out(ce_loss(h, h.value(l), {2})).data[0];
        CHECK(v < prev);
        prev = v;
    }
    CHECK(prev < 1e-3);
}

TEST_CASE("cross-entropy matches brute force on random logits") {
    std::mt19937 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        TensorD l = random_normal<double>({4, 6}, rng, 0.0, 2.0);
        std::vector<int> y;
        for (int i = 0; i < 4; ++i) y.push_back(static_cast<int>(rng() % 6));
        double expected = 0;
        for (int i = 0; i < 4; ++i) {
            double z = 0;
            for (int c = 0; c < 6; ++c) z += std::exp(l.at2(i, c));
            expected += -(l.at2(i, y[i]) - std::log(z));
        }
        expected /= 4;
        GraphD g;
        CHECK(g.out(ce_loss(g, g.value(l), y)).data[0] ==
              doctest::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("ce+ssl combination recomposes") {
    std::mt19937 rng(41);
    TensorD logits = random_normal<double>({3, 4}, rng, 0.0, 1.0);
    TensorD z = normalized_random(6, 4, rng);
    std::vector<int> y = {0, 3, 2};
    GraphD g;
    double combined =
        g.out(ce_ssl_loss(g, g.value(logits), y, g.value(z), 3, 0.1, 0.7, 1.2)).data[0];
    GraphD g2;
    double ce = g2.out(ce_loss(g2, g2.value(logits), y)).data[0];
    CHECK(combined == doctest::Approx(0.7 * ce + 1.2 * eval_simclr(z, 3, 0.1)).epsilon(1e-9));
}

TEST_CASE("losses are invariant under consistent batch permutation") {
    std::mt19937 rng(53);
    TensorD z = normalized_random(8, 5, rng);
    std::vector<int> labels = {0, 1, 0, 1, 0, 1, 1, 0};
    double base_sup = eval_supcon(z, labels, 0.1, SupConDenominator::AsPrinted);

    // permute anchors while preserving the i <-> i+N pairing structure:
    // swap pair slots 1 and 3 in both halves
    std::vector<int> perm = {0, 3, 2, 1, 4, 7, 6, 5};
    TensorD zp({8, 5});
    std::vector<int> lp(8);
    for (int i = 0; i < 8; ++i) {
        lp[i] = labels[perm[i]];
        for (int d = 0; d < 5; ++d) zp.at2(i, d) = z.at2(perm[i], d);
    }
    CHECK(eval_supcon(zp, lp, 0.1, SupConDenominator::AsPrinted) ==
          doctest::Approx(base_sup).epsilon(1e-9));
    CHECK(eval_simclr(zp, 4, 0.1) == doctest::Approx(eval_simclr(z, 4, 0.1)).epsilon(1e-9));
}

TEST_CASE("every loss passes finite-difference checks on small batches") {
    std::mt19937 rng(61);
    TensorD z = random_normal<double>({6, 4}, rng, 0.0, 1.0);
    std::vector<int> labels = {0, 1, 0, 0, 1, 0};

    auto simclr_build = [](GraphD& g, const std::vector<NodeId>& p) {
        return simclr_loss(g, g.l2normalize(p[0]), 3, 0.1);
    };
    CHECK(finite_diff_check<double>(simclr_build, {{"z", z}}, 1e-6, 1e-6).pass);

    for (auto mode : {SupConDenominator::AsPrinted, SupConDenominator::Standard}) {
        auto supcon_build = [labels, mode](GraphD& g, const std::vector<NodeId>& p) {
            return supcon_loss(g, g.l2normalize(p[0]), labels, 0.1, mode);
        };
        CHECK(finite_diff_check<double>(supcon_build, {{"z", z}}, 1e-6, 1e-6).pass);
    }

    TensorD z2 = random_normal<double>({6, 4}, rng, 0.0, 1.0);
    LossWeights w;
    w.gamma = 0.3;
    auto full_build = [labels, w](GraphD& g, const std::vector<NodeId>& p) {
        return full_objective(g, g.l2normalize(p[0]), g.l2normalize(p[1]), 3, labels, 0.1, w);
    };
    CHECK(finite_diff_check<double>(full_build, {{"z", z}, {"zm", z2}}, 1e-6, 1e-6).pass);

    TensorD logits = random_normal<double>({3, 5}, rng, 0.0, 1.0);
    std::vector<int> y = {0, 4, 2};
    auto ce_build = [y, labels](GraphD& g, const std::vector<NodeId>& p) {
        return ce_ssl_loss(g, p[0], y, g.l2normalize(p[1]), 3, 0.1, 1.0, 0.5);
    };
    CHECK(finite_diff_check<double>(ce_build, {{"logits", logits}, {"z", z}}, 1e-6, 1e-6).pass);
}
