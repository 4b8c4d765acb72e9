#include "gradmix/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gradmix {

namespace {

void check_images(const Tensor& images, const char* op) {
    if (images.ndim() != 4) throw Error(std::string(op) + ": images must be NCHW, got " + shape_str(images.shape));
    if (images.shape[2] != images.shape[3])
        throw Error(std::string(op) + ": images must be square, got " + shape_str(images.shape));
}

float clamp01(float v) { return std::min(1.f, std::max(0.f, v)); }

/// Copies a resized version of `src` (full C×H×W image) into dst's rect.
void paste_resized(const Tensor& batch, int src_idx, Tensor& dst_batch, int dst_idx, int top,
                   int left, int side) {
    int C = batch.shape[1], H = batch.shape[2], W = batch.shape[3];
    std::vector<float> patch(static_cast<std::size_t>(side) * side);
    for (int c = 0; c < C; ++c) {
        const float* src = &batch.data[((static_cast<std::size_t>(src_idx) * C + c) * H) * W];
        bilinear_resize_plane(src, H, W, patch.data(), side, side);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                dst_batch.at4(dst_idx, c, top + y, left + x) = patch[static_cast<std::size_t>(y) * side + x];
    }
}

double sample_beta(std::mt19937& rng, double alpha) {
    std::gamma_distribution<double> gd(alpha, 1.0);
    double a = gd(rng), b = gd(rng);
    double s = a + b;
    return s > 0 ? a / s : 0.5;
}

/// One augmented view of one image; draw order is fixed for determinism.
void make_view(const Tensor& images, int i, Tensor& out, std::mt19937& rng,
               const ViewConfig& cfg) {
    int C = images.shape[1], S = images.shape[2];
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    // random resized crop (area scale in [min,max], square aspect)
    std::uniform_real_distribution<double> uscale(cfg.crop_scale_min, cfg.crop_scale_max);
    double scale = uscale(rng);
    int side = std::max(1, static_cast<int>(std::lround(S * std::sqrt(scale))));
    side = std::min(side, S);
    std::uniform_int_distribution<int> upos(0, S - side);
    int top = upos(rng), left = upos(rng);
    bool flip = u01(rng) < cfg.flip_p;
    bool do_bright = u01(rng) < cfg.jitter_p;
    std::uniform_real_distribution<double> uj(-cfg.jitter_strength, cfg.jitter_strength);
    double bright = uj(rng);
    bool do_contrast = u01(rng) < cfg.jitter_p;
    double contrast = uj(rng);
    bool do_gray = u01(rng) < cfg.gray_p;

    std::vector<float> plane(static_cast<std::size_t>(S) * S);
    std::vector<float> crop(static_cast<std::size_t>(side) * side);
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                crop[static_cast<std::size_t>(y) * side + x] = images.at4(i, c, top + y, left + x);
        bilinear_resize_plane(crop.data(), side, side, plane.data(), S, S);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                out.at4(i, c, y, x) = plane[static_cast<std::size_t>(y) * S + (flip ? S - 1 - x : x)];
    }
    if (do_bright)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x)
                    out.at4(i, c, y, x) = static_cast<float>(out.at4(i, c, y, x) + bright);
    if (do_contrast) {
        double mean = 0;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) mean += out.at4(i, c, y, x);
        mean /= static_cast<double>(C) * S * S;
        double f = 1.0 + contrast;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x)
                    out.at4(i, c, y, x) = static_cast<float>(mean + f * (out.at4(i, c, y, x) - mean));
    }
    if (do_gray && C > 1) {
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                float m = 0;
                for (int c = 0; c < C; ++c) m += out.at4(i, c, y, x);
                m /= static_cast<float>(C);
                for (int c = 0; c < C; ++c) out.at4(i, c, y, x) = m;
            }
    }
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) out.at4(i, c, y, x) = clamp01(out.at4(i, c, y, x));
}

}  // namespace

ViewBatch standard_views(const Tensor& images, std::mt19937& rng, const ViewConfig& cfg) {
    check_images(images, "standard_views");
    ViewBatch vb;
    vb.originals = images;
    vb.view_a = Tensor(images.shape);
    vb.view_b = Tensor(images.shape);
    int N = images.shape[0];
    for (int i = 0; i < N; ++i) make_view(images, i, vb.view_a, rng, cfg);
    for (int i = 0; i < N; ++i) make_view(images, i, vb.view_b, rng, cfg);
    return vb;
}

double sample_gamma(std::mt19937& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    return u(rng);
}

std::pair<Tensor, std::vector<MaskSpec>> gradmix_augment(const Tensor& images,
                                                         const AttributionMap& maps, double gamma,
                                                         std::mt19937& rng) {
    check_images(images, "gradmix");
    int N = images.shape[0], S = images.shape[2];
    if (N < 2) throw Error("gradmix: batch must contain at least 2 images (no donor otherwise)");
    if (maps.samples() != N) throw Error("gradmix: attribution maps do not match batch size");
    if (maps.values.shape[1] != S || maps.values.shape[2] != S)
        throw Error("gradmix: maps must be at image resolution");
    if (gamma < 0.1 || gamma > 0.5)
        throw Error("gradmix: gamma " + std::to_string(gamma) + " outside [0.1, 0.5]");

    Tensor out = images;
    std::vector<MaskSpec> specs(N);
    int side = std::max(1, static_cast<int>(std::lround(gamma * S)));
    std::uniform_int_distribution<int> udonor(0, N - 2);
    for (int i = 0; i < N; ++i) {
        auto [pr, pc] = peak_location(maps, i);
        MaskSpec& m = specs[i];
        m.gamma = gamma;
        m.center_row = pr;
        m.center_col = pc;
        m.side = side;
        m.top = std::clamp(pr - side / 2, 0, S - side);
        m.left = std::clamp(pc - side / 2, 0, S - side);
        int donor = udonor(rng);
        if (donor >= i) ++donor;
        paste_resized(images, donor, out, i, m.top, m.left, side);
    }
    return {std::move(out), std::move(specs)};
}

MixupResult mixup(const Tensor& images, const std::vector<int>& labels, double alpha,
                  std::mt19937& rng) {
    check_images(images, "mixup");
    if (alpha <= 0) throw Error("mixup: alpha must be positive");
    int N = images.shape[0];
    MixupResult r;
    r.lambda = sample_beta(rng, alpha);
    std::vector<int> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    r.images = Tensor(images.shape);
    const std::size_t stride = images.numel() / N;
    for (int i = 0; i < N; ++i) {
        const float* a = &images.data[i * stride];
        const float* b = &images.data[perm[i] * stride];
        float* o = &r.images.data[i * stride];
        for (std::size_t k = 0; k < stride; ++k)
            o[k] = static_cast<float>(r.lambda * a[k] + (1.0 - r.lambda) * b[k]);
        r.label_pairs.emplace_back(labels.empty() ? -1 : labels[i],
                                   labels.empty() ? -1 : labels[perm[i]]);
    }
    return r;
}

CutMixResult cutmix(const Tensor& images, const std::vector<int>& labels, double alpha,
                    std::mt19937& rng) {
    check_images(images, "cutmix");
    if (alpha <= 0) throw Error("cutmix: alpha must be positive");
    int N = images.shape[0], S = images.shape[2];
    CutMixResult r;
    double lambda = sample_beta(rng, alpha);
    int side = static_cast<int>(std::lround(S * std::sqrt(1.0 - lambda)));
    side = std::min(side, S);
    std::vector<int> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::uniform_int_distribution<int> upos(0, S - 1);
    int cy = upos(rng), cx = upos(rng);
    r.images = images;
    r.area_ratio = static_cast<double>(side) * side / (static_cast<double>(S) * S);
    for (int i = 0; i < N; ++i) {
        r.label_pairs.emplace_back(labels.empty() ? -1 : labels[i],
                                   labels.empty() ? -1 : labels[perm[i]]);
        if (side == 0) continue;
        int top = std::clamp(cy - side / 2, 0, S - side);
        int left = std::clamp(cx - side / 2, 0, S - side);
        paste_resized(images, perm[i], r.images, i, top, left, side);
    }
    return r;
}

Tensor cutout(const Tensor& images, int size, std::mt19937& rng) {
    check_images(images, "cutout");
    int N = images.shape[0], C = images.shape[1], S = images.shape[2];
    if (size > S) throw Error("cutout: size " + std::to_string(size) + " exceeds image side " +
                              std::to_string(S));
    Tensor out = images;
    std::uniform_int_distribution<int> upos(0, S - 1);
    for (int i = 0; i < N; ++i) {
        int cy = upos(rng), cx = upos(rng);
        int top = std::clamp(cy - size / 2, 0, S - size);
        int left = std::clamp(cx - size / 2, 0, S - size);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) out.at4(i, c, top + y, left + x) = 0.f;
    }
    return out;
}

}  // namespace gradmix
