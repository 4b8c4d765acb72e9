#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gradmix/graph.hpp"

namespace gradmix {

struct EncoderConfig {
    int input_resolution = 32;
    int input_channels = 3;
    std::vector<int> stage_widths = {16, 32, 64};
    int blocks_per_stage = 2;
    int embedding_dim = 128;
    std::vector<std::string> tap_names;
    bool classifier_head = false;
    int class_count = 0;
};

/// Trainable tensor with gradient and Adam moment accumulators.
struct Parameter {
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
    explicit Parameter(Tensor val)
        : value(std::move(val)), grad(value.shape, 0.f), m(value.shape, 0.f), v(value.shape, 0.f) {}
};

/// Small residual convolutional encoder with a projection head, optional
/// classifier head, and named block taps for attribution. Stage s block b
/// output is tapped under the name "conv{s+3}_{b+1}".
class Encoder {
public:
    Encoder(EncoderConfig config, std::uint32_t seed);

    struct Forward {
        NodeId embeddings = -1;                // 2-D, L2-normalized rows
        NodeId pooled = -1;                    // backbone GAP output
        NodeId logits = -1;                    // present iff classifier head
        std::map<std::string, NodeId> taps;    // configured tap nodes
    };

    /// Creates graph leaves holding the current parameter values, in
    /// parameter order. Two forwards in the same graph share one binding.
    std::vector<NodeId> bind(Graph& g) const;

    Forward forward(Graph& g, const std::vector<NodeId>& bound, const Tensor& images, bool train,
                    bool update_running_stats = true);

    const EncoderConfig& config() const { return cfg_; }
    std::size_t param_count() const;
    std::vector<std::pair<std::string, Parameter>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Parameter>>& parameters() const { return params_; }
    std::map<std::string, BNStateT<float>>& bn_states() { return bn_states_; }
    const std::map<std::string, BNStateT<float>>& bn_states() const { return bn_states_; }

    void zero_grad();
    /// Adds the bound leaves' gradients into the parameters' grad slots.
    void accumulate_grads(const Graph& g, const std::vector<NodeId>& bound);

    static std::string tap_name(int stage, int block) {
        return "conv" + std::to_string(stage + 3) + "_" + std::to_string(block + 1);
    }

private:
    EncoderConfig cfg_;
    std::vector<std::pair<std::string, Parameter>> params_;
    std::map<std::string, int> index_;
    std::map<std::string, BNStateT<float>> bn_states_;

    int add_param(const std::string& name, Tensor value);
    int idx(const std::string& name) const;
    void add_conv(const std::string& name, int cin, int cout, int k, std::mt19937& rng);
    void add_bn(const std::string& name, int channels);
    void add_dense(const std::string& name, int fin, int fout, std::mt19937& rng);
};

}  // namespace gradmix
