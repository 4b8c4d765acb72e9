#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gradmix/config.hpp"
#include "gradmix/encoder.hpp"

namespace gradmix {

/// Versioned binary container: ascii magic "GMIXCKPT", version, a JSON
/// header (config echo, counters, tensor name/shape/offset table), then raw
/// little-endian 32-bit float blocks. save -> load -> save is byte-identical.
struct Checkpoint {
    std::uint32_t version = 1;
    std::string config_json;
    std::vector<std::pair<std::string, Tensor>> tensors;
    int epoch = 0;
    long adam_t = 0;
    std::string rng_state;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Captures parameters, Adam moments, and batch-norm running stats.
Checkpoint snapshot_model(const Encoder& enc, const RunConfig& cfg, int epoch, long adam_t,
                          const std::string& rng_state);

/// Restores the model from a snapshot; validates the shape table.
void restore_model(Encoder& enc, const Checkpoint& ckpt);

}  // namespace gradmix
