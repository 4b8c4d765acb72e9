#pragma once

#include <map>
#include <string>
#include <vector>

#include "gradmix/attribution.hpp"
#include "gradmix/checkpoint.hpp"
#include "gradmix/config.hpp"
#include "gradmix/data.hpp"

namespace gradmix {

struct BatchLog {
    int epoch = 0;
    int batch = 0;
    double loss = 0.0;
    std::map<std::string, double> components;
    double gamma = 0.0;  // mask ratio; 0 when no mixing happened
};

struct TrainLog {
    std::vector<BatchLog> batches;
    std::vector<double> epoch_loss;  // mean batch loss per completed epoch
};

struct TrainResult {
    TrainLog log;
    long adam_t = 0;
    int epochs_run = 0;
};

/// Saliency maps for a batch: a separate-graph forward/backward over
/// [originals; paired views] with running-stat updates disabled; the
/// gradients never reach the optimizer. Per-sample maps cover the first
/// `originals` rows, aggregated to the input resolution.
AttributionMap attribution_maps(Encoder& enc, const Tensor& originals, const Tensor& view_b,
                                const std::vector<int>& labels, const RunConfig& cfg);

/// Same pass, returning the per-tap maps before aggregation.
std::vector<AttributionMap> attribution_layer_maps(Encoder& enc, const Tensor& originals,
                                                   const Tensor& view_b,
                                                   const std::vector<int>& labels,
                                                   const RunConfig& cfg);

/// Full training loop: seeded epoch shuffles, two contrastive views per
/// image, optional attribution-guided mixing, Adam with per-epoch cosine
/// annealing. Deterministic at thread count one; resuming from an epoch
/// checkpoint reproduces the uninterrupted run bit-exactly.
TrainResult train(Encoder& enc, const RunConfig& cfg, const ImageDataset& train_set,
                  const std::string& checkpoint_dir = "", const Checkpoint* resume = nullptr);

}  // namespace gradmix
