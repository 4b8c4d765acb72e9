#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gradmix/tensor.hpp"

namespace gradmix {

struct ImageDataset {
    Tensor images;  // N x C x H x W in [0,1]
    std::vector<int> labels;
    std::vector<std::string> class_names;

    int size() const { return images.ndim() == 4 ? images.shape[0] : 0; }
    int class_count() const {
        int c = 0;
        for (int l : labels) c = std::max(c, l + 1);
        return c;
    }
};

// IDX (big-endian, magic 0x803 images / 0x801 labels) and CIFAR-style
// binary (1 label byte + 3072 RGB-plane bytes per record, 32x32).
ImageDataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const ImageDataset& ds, const std::string& images_path,
              const std::string& labels_path);
ImageDataset load_cifar_binary(const std::string& path);
void save_cifar_binary(const ImageDataset& ds, const std::string& path);

struct BlobClassSpec {
    std::array<float, 3> color = {1.f, 0.f, 0.f};
    float center_row = 0.5f;  // relative [0,1]
    float center_col = 0.5f;
    float center_jitter = 0.1f;
    float sigma = 0.15f;  // relative to image side
};

/// Colored Gaussian blobs on noise backgrounds; pixels quantized to the
/// byte grid so file round-trips are bit-exact. Separable by construction.
ImageDataset synth_blobs(const std::vector<BlobClassSpec>& specs, int image_size, int n_per_class,
                         std::uint32_t seed);

struct OpenSetSplit {
    ImageDataset train_known;
    ImageDataset test_known;
    ImageDataset test_unknown;
    std::vector<int> known_classes;    // source class ids, in draw order
    std::vector<int> unknown_classes;  // source class ids (unknown source)
};

/// Known classes keep the source train/test partition; unknown classes
/// appear only at test. Class selection is a seeded draw; trial in [0,5)
/// picks among five fixed draws. Pass unknown_* = nullptr to draw unknown
/// classes from the known source (disjoint from the known ones).
OpenSetSplit make_split(const ImageDataset& known_train, const ImageDataset& known_test,
                        const ImageDataset* unknown_test, int known_count, int unknown_count,
                        int trial, std::uint32_t seed);

enum class CorruptionType {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    Brightness,
    Contrast,
    Pixelate,
};

const std::vector<CorruptionType>& all_corruption_types();
std::string corruption_name(CorruptionType t);
CorruptionType parse_corruption(const std::string& name);

struct CorruptionSpec {
    CorruptionType type = CorruptionType::GaussianNoise;
    int severity = 1;  // 1..5
};

Tensor corrupt(const Tensor& images, const CorruptionSpec& spec, std::uint32_t seed);

// parameterized primitives behind the severity tables
Tensor gaussian_noise(const Tensor& images, double sigma, std::mt19937& rng);
Tensor shot_noise(const Tensor& images, double photons, std::mt19937& rng);
Tensor impulse_noise(const Tensor& images, double rate, std::mt19937& rng);
Tensor defocus_blur(const Tensor& images, int radius);
Tensor brightness_shift(const Tensor& images, double delta);
Tensor contrast_scale(const Tensor& images, double factor);
Tensor pixelate(const Tensor& images, int factor);

}  // namespace gradmix
