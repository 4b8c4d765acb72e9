#pragma once

#include <random>
#include <utility>
#include <vector>

#include "gradmix/attribution.hpp"
#include "gradmix/tensor.hpp"

namespace gradmix {

/// Square mask placement: side = round(gamma * image side), centered on the
/// attribution peak, shifted (never shrunk) to stay in bounds.
struct MaskSpec {
    double gamma = 0.0;
    int center_row = 0;
    int center_col = 0;
    int side = 0;
    int top = 0;
    int left = 0;
};

struct ViewBatch {
    Tensor originals;
    Tensor view_a;
    Tensor view_b;
};

struct ViewConfig {
    double crop_scale_min = 0.2;
    double crop_scale_max = 1.0;
    double flip_p = 0.5;
    double jitter_p = 0.8;
    double jitter_strength = 0.4;
    double gray_p = 0.2;
};

/// Two stochastic contrastive views per image: random resized crop,
/// horizontal flip, brightness/contrast jitter, channel-mean grayscale.
ViewBatch standard_views(const Tensor& images, std::mt19937& rng, const ViewConfig& cfg = {});

/// gamma ~ U(0.1, 0.5), the mask side-length ratio.
double sample_gamma(std::mt19937& rng, double lo = 0.1, double hi = 0.5);

/// Mask each image's most activated square with a bilinearly resized donor
/// drawn from the same batch (donor != target). One shared gamma per batch.
std::pair<Tensor, std::vector<MaskSpec>> gradmix_augment(const Tensor& images,
                                                         const AttributionMap& maps, double gamma,
                                                         std::mt19937& rng);

struct MixupResult {
    Tensor images;
    std::vector<std::pair<int, int>> label_pairs;
    double lambda = 1.0;
};

MixupResult mixup(const Tensor& images, const std::vector<int>& labels, double alpha,
                  std::mt19937& rng);

struct CutMixResult {
    Tensor images;
    std::vector<std::pair<int, int>> label_pairs;
    double area_ratio = 0.0;  // realized rect area / image area
};

CutMixResult cutmix(const Tensor& images, const std::vector<int>& labels, double alpha,
                    std::mt19937& rng);

/// Zero one size x size square per image, center uniform, clamped inside.
Tensor cutout(const Tensor& images, int size, std::mt19937& rng);

}  // namespace gradmix
