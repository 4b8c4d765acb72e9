#pragma once

#include <string>
#include <vector>

#include "gradmix/encoder.hpp"

namespace gradmix {

enum class Objective { CE, CESSL, SupCon, SupConSSL, SupConSSLGradMix, SSLOnly };
enum class Augmentation { None, Mixup, Cutmix, Cutout, GradMix };
enum class AttributionRefresh { PerBatch, PerEpoch };

std::string objective_name(Objective o);
Objective parse_objective(const std::string& name);
std::string augmentation_name(Augmentation a);
Augmentation parse_augmentation(const std::string& name);
std::string refresh_name(AttributionRefresh r);
AttributionRefresh parse_refresh(const std::string& name);

struct RunConfig {
    RunConfig() { encoder.tap_names = {"conv3_2", "conv4_2", "conv5_2"}; }

    Objective objective = Objective::SupConSSLGradMix;
    Augmentation augmentation = Augmentation::GradMix;
    EncoderConfig encoder;
    double theta = 1.0;
    double lambda = 1.0;
    double tau = 0.1;
    double gamma_lo = 0.1;
    double gamma_hi = 0.5;
    double mix_alpha = 1.0;  // mixup/cutmix Beta parameter
    int cutout_size = 8;
    AttributionRefresh attribution_refresh = AttributionRefresh::PerBatch;
    int k = 3;  // scorer neighbors
    int epochs = 10;
    int batch_size = 64;
    int checkpoint_interval = 0;  // epochs; 0 = final only
    double lr_max = 1e-3;
    double lr_min = 5.12e-5;
    std::uint32_t seed = 1;
    std::string data_dir;  // default from GRADMIX_DATA_DIR
    std::string train_images, train_labels;  // dataset paths (idx pair or cifar file)
    std::string test_images, test_labels;
    std::string unknown_images, unknown_labels;
    std::string format = "synth";  // synth | idx | cifar
    int known_count = 2, unknown_count = 1, trial = 0;
    int synth_classes = 3, synth_per_class = 96, synth_size = 32;
    std::string out_dir = "runs/default";

    /// Range and consistency validation; throws with the offending field.
    void validate() const;
};

/// JSON (de)serialization; parse_config merges file values then overrides.
std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);
RunConfig load_config_file(const std::string& path);

}  // namespace gradmix
