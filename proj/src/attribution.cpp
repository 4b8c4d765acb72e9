#include "gradmix/attribution.hpp"

#include <algorithm>
#include <cmath>

namespace gradmix {

namespace {

void check_pair(const Tensor& a, const Tensor& g, const char* op) {
    if (a.ndim() != 4 || !a.same_shape(g))
        throw Error(std::string(op) + ": activation " + shape_str(a.shape) + " and gradient " +
                    shape_str(g.shape) + " must be identical NCHW tensors");
    if (a.shape[2] != a.shape[3])
        throw Error(std::string(op) + ": expected square feature maps, got " + shape_str(a.shape));
}

}  // namespace

AttributionMap gradcam(const Tensor& activation, const Tensor& gradient,
                       const std::string& layer_name) {
    check_pair(activation, gradient, "gradcam");
    int N = activation.shape[0], C = activation.shape[1];
    int H = activation.shape[2], W = activation.shape[3];
    const std::size_t hw = static_cast<std::size_t>(H) * W;

    AttributionMap out;
    out.values = Tensor({N, H, W}, 0.f);
    out.source_layers = {layer_name};
    out.resolution = H;
    for (int n = 0; n < N; ++n) {
        float* plane = &out.values.data[n * hw];
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
            double alpha = 0;
            for (std::size_t k = 0; k < hw; ++k) alpha += gradient.data[base + k];
            alpha /= static_cast<double>(hw);
            for (std::size_t k = 0; k < hw; ++k)
                plane[k] += static_cast<float>(alpha) * activation.data[base + k];
        }
        for (std::size_t k = 0; k < hw; ++k) plane[k] = std::max(plane[k], 0.f);
    }
    return out;
}

AttributionMap layercam(const Tensor& activation, const Tensor& gradient,
                        const std::string& layer_name) {
    check_pair(activation, gradient, "layercam");
    int N = activation.shape[0], C = activation.shape[1];
    int H = activation.shape[2], W = activation.shape[3];
    const std::size_t hw = static_cast<std::size_t>(H) * W;

    AttributionMap out;
    out.values = Tensor({N, H, W}, 0.f);
    out.source_layers = {layer_name};
    out.resolution = H;
    for (int n = 0; n < N; ++n) {
        float* plane = &out.values.data[n * hw];
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
                float gpos = std::max(gradient.data[base + k], 0.f);
                plane[k] += gpos * activation.data[base + k];
            }
        }
        for (std::size_t k = 0; k < hw; ++k) plane[k] = std::max(plane[k], 0.f);
    }
    return out;
}

AttributionMap aggregate(const std::vector<AttributionMap>& maps, int target_resolution) {
    if (maps.empty()) throw Error("aggregate: needs at least one attribution map");
    const int N = maps[0].samples();
    for (const auto& m : maps)
        if (m.samples() != N) throw Error("aggregate: maps disagree on sample count");

    const std::size_t hw = static_cast<std::size_t>(target_resolution) * target_resolution;
    AttributionMap out;
    out.values = Tensor({N, target_resolution, target_resolution}, 0.f);
    out.resolution = target_resolution;

    std::vector<float> up(hw);
    for (const auto& m : maps) {
        for (const auto& l : m.source_layers) out.source_layers.push_back(l);
        for (int n = 0; n < N; ++n) {
            bilinear_resize_plane(m.plane(n), m.values.shape[1], m.values.shape[2], up.data(),
                                  target_resolution, target_resolution);
            auto [lo, hi] = std::minmax_element(up.begin(), up.end());
            float span = *hi - *lo;
            float* acc = &out.values.data[n * hw];
            if (span > 0.f)
                for (std::size_t k = 0; k < hw; ++k) acc[k] += (up[k] - *lo) / span;
            // constant maps normalize to all-zeros
        }
    }
    return out;
}

std::pair<int, int> peak_location(const AttributionMap& map, int sample) {
    if (sample < 0 || sample >= map.samples())
        throw Error("peak_location: sample index out of range");
    const float* plane = map.plane(sample);
    int H = map.values.shape[1], W = map.values.shape[2];
    std::size_t best = 0;
    for (std::size_t k = 1; k < static_cast<std::size_t>(H) * W; ++k)
        if (plane[k] > plane[best]) best = k;
    return {static_cast<int>(best) / W, static_cast<int>(best) % W};
}

}  // namespace gradmix
