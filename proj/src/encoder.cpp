#include "gradmix/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace gradmix {

int Encoder::add_param(const std::string& name, Tensor value) {
    index_[name] = static_cast<int>(params_.size());
    params_.emplace_back(name, Parameter(std::move(value)));
    return index_[name];
}

int Encoder::idx(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("encoder: unknown parameter '" + name + "'");
    return it->second;
}

void Encoder::add_conv(const std::string& name, int cin, int cout, int k, std::mt19937& rng) {
    float bound = std::sqrt(6.0f / static_cast<float>(cin * k * k));
    add_param(name + ".w", random_uniform<float>({cout, cin, k, k}, rng, -bound, bound));
    add_param(name + ".b", Tensor({cout}, 0.f));
}

void Encoder::add_bn(const std::string& name, int channels) {
    add_param(name + ".g", Tensor({channels}, 1.f));
    add_param(name + ".s", Tensor({channels}, 0.f));
    bn_states_.emplace(name, BNStateT<float>(channels));
}

void Encoder::add_dense(const std::string& name, int fin, int fout, std::mt19937& rng) {
    float bound = std::sqrt(6.0f / static_cast<float>(fin));
    add_param(name + ".w", random_uniform<float>({fin, fout}, rng, -bound, bound));
    add_param(name + ".b", Tensor({fout}, 0.f));
}

Encoder::Encoder(EncoderConfig config, std::uint32_t seed) : cfg_(std::move(config)) {
    if (cfg_.embedding_dim < 2) throw Error("encoder: embedding dim must be >= 2");
    if (cfg_.stage_widths.empty()) throw Error("encoder: stage widths must be nonempty");
    if (cfg_.blocks_per_stage < 1) throw Error("encoder: blocks per stage must be >= 1");
    if (cfg_.classifier_head && cfg_.class_count < 2)
        throw Error("encoder: classifier head requires class count >= 2");

    std::set<std::string> valid_taps;
    for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s)
        for (int b = 0; b < cfg_.blocks_per_stage; ++b)
            valid_taps.insert(tap_name(static_cast<int>(s), b));
    for (const auto& t : cfg_.tap_names)
        if (!valid_taps.count(t)) throw Error("encoder: tap name '" + t + "' not found");

    std::mt19937 rng(seed);
    add_conv("stem.conv", cfg_.input_channels, cfg_.stage_widths[0], 3, rng);
    add_bn("stem.bn", cfg_.stage_widths[0]);

    int cin = cfg_.stage_widths[0];
    for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
        int cout = cfg_.stage_widths[s];
        for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
            std::string base = "stage" + std::to_string(s) + ".block" + std::to_string(b);
            int bin = b == 0 ? cin : cout;
            add_conv(base + ".conv1", bin, cout, 3, rng);
            add_bn(base + ".bn1", cout);
            add_conv(base + ".conv2", cout, cout, 3, rng);
            add_bn(base + ".bn2", cout);
            bool needs_proj = b == 0;  // stage entry downsamples (stride 2)
            if (needs_proj) {
                add_conv(base + ".proj", bin, cout, 1, rng);
                add_bn(base + ".projbn", cout);
            }
        }
        cin = cout;
    }

    int w_last = cfg_.stage_widths.back();
    add_dense("head.fc1", w_last, w_last, rng);
    add_dense("head.fc2", w_last, cfg_.embedding_dim, rng);
    if (cfg_.classifier_head) add_dense("cls", w_last, cfg_.class_count, rng);
}

std::vector<NodeId> Encoder::bind(Graph& g) const {
    std::vector<NodeId> ids;
    ids.reserve(params_.size());
    for (const auto& [name, p] : params_) ids.push_back(g.value(p.value));
    return ids;
}

Encoder::Forward Encoder::forward(Graph& g, const std::vector<NodeId>& bound, const Tensor& images,
                                  bool train, bool update_running_stats) {
    if (bound.size() != params_.size()) throw Error("encoder: binding does not match parameters");
    if (images.ndim() != 4 || images.shape[1] != cfg_.input_channels ||
        images.shape[2] != cfg_.input_resolution || images.shape[3] != cfg_.input_resolution)
        throw Error("encoder: input shape " + shape_str(images.shape) + " does not match config " +
                    std::to_string(cfg_.input_channels) + "x" + std::to_string(cfg_.input_resolution) +
                    "x" + std::to_string(cfg_.input_resolution));

    auto P = [&](const std::string& name) { return bound[idx(name)]; };
    auto bn = [&](NodeId x, const std::string& name) {
        return g.batchnorm2d(x, P(name + ".g"), P(name + ".s"), &bn_states_.at(name), train,
                             train && update_running_stats);
    };

    Forward fwd;
    NodeId x = g.value(images);
    x = g.relu(bn(g.conv2d(x, P("stem.conv.w"), P("stem.conv.b"), 1, 1), "stem.bn"));

    std::set<std::string> wanted(cfg_.tap_names.begin(), cfg_.tap_names.end());
    for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
        for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
            std::string base = "stage" + std::to_string(s) + ".block" + std::to_string(b);
            int stride = b == 0 ? 2 : 1;
            NodeId h = g.relu(bn(g.conv2d(x, P(base + ".conv1.w"), P(base + ".conv1.b"), stride, 1),
                                 base + ".bn1"));
            h = bn(g.conv2d(h, P(base + ".conv2.w"), P(base + ".conv2.b"), 1, 1), base + ".bn2");
            NodeId shortcut = b == 0
                                  ? bn(g.conv2d(x, P(base + ".proj.w"), P(base + ".proj.b"), stride, 0),
                                       base + ".projbn")
                                  : x;
            x = g.relu(g.add(h, shortcut));
            std::string tname = tap_name(static_cast<int>(s), b);
            if (wanted.count(tname)) {
                g.register_tap(tname, x);
                fwd.taps[tname] = x;
            }
        }
    }

    fwd.pooled = g.global_avg_pool(x);
    NodeId h = g.relu(g.dense(fwd.pooled, P("head.fc1.w"), P("head.fc1.b")));
    fwd.embeddings = g.l2normalize(g.dense(h, P("head.fc2.w"), P("head.fc2.b")));
    if (cfg_.classifier_head) fwd.logits = g.dense(fwd.pooled, P("cls.w"), P("cls.b"));
    return fwd;
}

std::size_t Encoder::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.numel();
    return n;
}

void Encoder::zero_grad() {
    for (auto& [name, p] : params_) p.grad.fill(0.f);
}

void Encoder::accumulate_grads(const Graph& g, const std::vector<NodeId>& bound) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!g.has_grad(bound[i])) continue;
        const Tensor& ng = g.grad(bound[i]);
        Tensor& pg = params_[i].second.grad;
        for (std::size_t k = 0; k < pg.numel(); ++k) pg.data[k] += ng.data[k];
    }
}

}  // namespace gradmix
