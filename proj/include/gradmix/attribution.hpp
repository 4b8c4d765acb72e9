#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gradmix/tensor.hpp"

namespace gradmix {

/// Nonnegative saliency maps, one H×W plane per sample (stored N×H×W).
struct AttributionMap {
    Tensor values;
    std::vector<std::string> source_layers;
    int resolution = 0;  // spatial side of `values`

    int samples() const { return values.shape[0]; }
    const float* plane(int n) const {
        return &values.data[static_cast<std::size_t>(n) * resolution_cells()];
    }
    std::size_t resolution_cells() const {
        return static_cast<std::size_t>(values.shape[1]) * values.shape[2];
    }
};

/// Channel-mean gradient weights, ReLU-filtered weighted activation sum.
AttributionMap gradcam(const Tensor& activation, const Tensor& gradient,
                       const std::string& layer_name);

/// Location-wise ReLU-ed gradient weighting, channel sum, final ReLU.
AttributionMap layercam(const Tensor& activation, const Tensor& gradient,
                        const std::string& layer_name);

/// Upsample each map to the target resolution, min-max normalize per sample
/// (constant maps normalize to zeros), and sum elementwise.
AttributionMap aggregate(const std::vector<AttributionMap>& maps, int target_resolution);

/// Argmax coordinate of one sample's plane; ties break to the smallest
/// row-major index.
std::pair<int, int> peak_location(const AttributionMap& map, int sample);

}  // namespace gradmix
