#include "gradmix/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gradmix/augment.hpp"
#include "gradmix/losses.hpp"
#include "gradmix/optimizer.hpp"

namespace gradmix {

namespace {

std::mt19937 epoch_rng(std::uint32_t seed, int epoch, std::uint32_t stream = 0) {
    std::seed_seq seq{seed, static_cast<std::uint32_t>(epoch), stream};
    return std::mt19937(seq);
}

std::string rng_state_string(std::uint32_t seed, int next_epoch) {
    std::ostringstream os;
    os << epoch_rng(seed, next_epoch);
    return os.str();
}

Tensor first_rows(const Tensor& x, int n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return gather_rows(x, idx);
}

bool wants_gradmix(const RunConfig& cfg) {
    if (cfg.objective == Objective::SupConSSLGradMix) return true;
    if (cfg.augmentation != Augmentation::GradMix) return false;
    return cfg.objective == Objective::SupCon || cfg.objective == Objective::SupConSSL ||
           cfg.objective == Objective::SSLOnly;
}

std::vector<int> doubled(const std::vector<int>& labels) {
    std::vector<int> out(labels);
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

}  // namespace

std::vector<AttributionMap> attribution_layer_maps(Encoder& enc, const Tensor& originals,
                                                   const Tensor& view_b,
                                                   const std::vector<int>& labels,
                                                   const RunConfig& cfg) {
    const int n = originals.shape[0];
    Graph g;  // separate graph: these gradients never reach the optimizer
    auto bound = enc.bind(g);
    auto fwd = enc.forward(g, bound, concat_rows(originals, view_b), /*train=*/true,
                           /*update_running_stats=*/false);

    bool homogeneous = !labels.empty() &&
                       std::all_of(labels.begin(), labels.end(),
                                   [&](int l) { return l == labels.front(); });
    NodeId loss;
    if (labels.empty() || homogeneous) {
        // single-class batches have no printed-form supcon denominator;
        // the saliency pass falls back to the self-supervised term

        loss = simclr_loss(g, fwd.embeddings, n, cfg.tau);
    } else {
        LossWeights w;
        w.theta = cfg.theta;
        w.lambda = cfg.lambda;
        loss = contra_loss(g, fwd.embeddings, n, doubled(labels), cfg.tau, w);
    }
    g.backward(loss);

    std::vector<AttributionMap> maps;
    for (const auto& name : cfg.encoder.tap_names) {
        auto tap = g.tap(name);
        maps.push_back(layercam(first_rows(tap.activation, n), first_rows(tap.gradient, n), name));
    }
    return maps;
}

AttributionMap attribution_maps(Encoder& enc, const Tensor& originals, const Tensor& view_b,
                                const std::vector<int>& labels, const RunConfig& cfg) {
    return aggregate(attribution_layer_maps(enc, originals, view_b, labels, cfg),
                     cfg.encoder.input_resolution);
}

TrainResult train(Encoder& enc, const RunConfig& cfg, const ImageDataset& train_set,
                  const std::string& checkpoint_dir, const Checkpoint* resume) {
    cfg.validate();
    const int n = train_set.size();
    if (n < 4) throw Error("train: training set needs at least 4 samples, got " + std::to_string(n));
    const int bs = std::min(cfg.batch_size, n);
    const int batches = std::max(1, n / bs);
    const bool gradmix_on = wants_gradmix(cfg);
    const bool contrastive = cfg.objective != Objective::CE && cfg.objective != Objective::CESSL;

    TrainResult result;
    long t = 0;
    int start_epoch = 0;
    if (resume) {
        restore_model(enc, *resume);
        t = resume->adam_t;
        start_epoch = resume->epoch;
        if (start_epoch > cfg.epochs)
            throw Error("train: checkpoint epoch " + std::to_string(start_epoch) +
                        " beyond configured total " + std::to_string(cfg.epochs));
    }

    LossWeights weights;
    weights.theta = cfg.theta;
    weights.lambda = cfg.lambda;

    auto save = [&](int completed_epochs, const std::string& name) {
        if (checkpoint_dir.empty()) return;
        Checkpoint ckpt = snapshot_model(enc, cfg, completed_epochs, t,
                                         rng_state_string(cfg.seed, completed_epochs));
        save_checkpoint(ckpt, checkpoint_dir + "/" + name);
    };

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
        auto rng = epoch_rng(cfg.seed, epoch);

        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        // per-epoch refresh: one saliency pass over the whole set up front
        Tensor epoch_maps;
        if (gradmix_on && cfg.attribution_refresh == AttributionRefresh::PerEpoch) {
            auto arng = epoch_rng(cfg.seed, epoch, 0xA77B);
            const int res = cfg.encoder.input_resolution;
            epoch_maps = Tensor({n, res, res});
            for (int off = 0; off < n; off += bs) {
                std::vector<int> idx;
                for (int i = off; i < std::min(off + bs, n); ++i) idx.push_back(i);
                if (static_cast<int>(idx.size()) < 2) break;  // no donor possible; reuse zeros
                Tensor imgs = gather_rows(train_set.images, idx);
                std::vector<int> lbls;
                for (int i : idx) lbls.push_back(train_set.labels[i]);
                ViewBatch vb = standard_views(imgs, arng);
                AttributionMap m = attribution_maps(enc, imgs, vb.view_b, lbls, cfg);
                for (std::size_t i = 0; i < idx.size(); ++i)
                    std::copy_n(m.plane(static_cast<int>(i)), m.resolution_cells(),
                                &epoch_maps.data[static_cast<std::size_t>(idx[i]) * res * res]);
            }
        }

        double epoch_loss = 0;
        for (int b = 0; b < batches; ++b) {
            std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(b) * bs,
                                 order.begin() + static_cast<std::ptrdiff_t>(b) * bs + bs);
            Tensor images = gather_rows(train_set.images, idx);
            std::vector<int> labels;
            for (int i : idx) labels.push_back(train_set.labels[i]);

            BatchLog blog;
            blog.epoch = epoch;
            blog.batch = b;

            Graph g;
            auto bound = enc.bind(g);
            NodeId loss = -1;

            if (contrastive) {
                ViewBatch views = standard_views(images, rng);
                if (cfg.augmentation == Augmentation::Cutout) {
                    views.view_a = cutout(views.view_a, cfg.cutout_size, rng);
                    views.view_b = cutout(views.view_b, cfg.cutout_size, rng);
                }
                auto fwd = enc.forward(g, bound, concat_rows(views.view_a, views.view_b), true);
                NodeId z = fwd.embeddings;
                std::vector<NodeId> terms;
                if (cfg.objective != Objective::SSLOnly) {
                    NodeId sup = supcon_loss(g, z, doubled(labels), cfg.tau);
                    blog.components["supcon"] = g.out(sup).data[0];
                    terms.push_back(g.scale(sup, static_cast<float>(cfg.theta)));
                }
                if (cfg.objective != Objective::SupCon || gradmix_on) {
                    NodeId ssl = simclr_loss(g, z, bs, cfg.tau);
                    blog.components["simclr"] = g.out(ssl).data[0];
                    if (cfg.objective != Objective::SupCon)
                        terms.push_back(g.scale(ssl, static_cast<float>(cfg.lambda)));
                }
                if (gradmix_on) {
                    double gamma = sample_gamma(rng, cfg.gamma_lo, cfg.gamma_hi);
                    blog.gamma = gamma;
                    AttributionMap maps;
                    if (cfg.attribution_refresh == AttributionRefresh::PerEpoch) {
                        maps.values = gather_rows(epoch_maps, idx);
                        maps.resolution = cfg.encoder.input_resolution;
                        maps.source_layers = cfg.encoder.tap_names;
                    } else {
                        maps = attribution_maps(enc, images, views.view_b, labels, cfg);
                    }
                    auto [mixed, specs] = gradmix_augment(images, maps, gamma, rng);
                    auto fwd_mixed = enc.forward(g, bound, concat_rows(mixed, views.view_b), true);
                    NodeId ssl_mixed = simclr_loss(g, fwd_mixed.embeddings, bs, cfg.tau);
                    blog.components["simclr_mixed"] = g.out(ssl_mixed).data[0];
                    terms.push_back(g.scale(ssl_mixed,
                                            static_cast<float>(cfg.lambda * gamma * gamma)));
                }
                loss = terms.front();
                for (std::size_t i = 1; i < terms.size(); ++i) loss = g.add(loss, terms[i]);
            } else {
                // cross-entropy objectives
                Tensor inputs = images;
                std::vector<std::pair<int, int>> label_pairs;
                double mix_lambda = 1.0;
                if (cfg.augmentation == Augmentation::Mixup) {
                    MixupResult m = mixup(images, labels, cfg.mix_alpha, rng);
                    inputs = std::move(m.images);
                    label_pairs = std::move(m.label_pairs);
                    mix_lambda = m.lambda;
                } else if (cfg.augmentation == Augmentation::Cutmix) {
                    CutMixResult m = cutmix(images, labels, cfg.mix_alpha, rng);
                    inputs = std::move(m.images);
                    label_pairs = std::move(m.label_pairs);
                    mix_lambda = m.area_ratio == 0.0 ? 1.0 : 1.0 - m.area_ratio;
                } else if (cfg.augmentation == Augmentation::Cutout) {
                    inputs = cutout(images, cfg.cutout_size, rng);
                }
                auto fwd = enc.forward(g, bound, inputs, true);
                NodeId ce;
                if (label_pairs.empty()) {
                    ce = g.softmax_ce(fwd.logits, labels);
                } else {
                    std::vector<int> la, lb;
                    for (auto [a, bb] : label_pairs) {
                        la.push_back(a);
                        lb.push_back(bb);
                    }
                    ce = g.add(g.scale(g.softmax_ce(fwd.logits, la),
                                       static_cast<float>(mix_lambda)),
                               g.scale(g.softmax_ce(fwd.logits, lb),
                                       static_cast<float>(1.0 - mix_lambda)));
                }
                blog.components["ce"] = g.out(ce).data[0];
                loss = ce;
                if (cfg.objective == Objective::CESSL) {
                    ViewBatch views = standard_views(images, rng);
                    auto fwd_v = enc.forward(g, bound, concat_rows(views.view_a, views.view_b), true);
                    NodeId ssl = simclr_loss(g, fwd_v.embeddings, bs, cfg.tau);
                    blog.components["simclr"] = g.out(ssl).data[0];
                    loss = g.add(loss, g.scale(ssl, static_cast<float>(cfg.lambda)));
                }
            }

            blog.loss = g.out(loss).data[0];
            if (!std::isfinite(blog.loss)) {
                std::ostringstream os;
                os << "train: non-finite loss at epoch " << epoch << " batch " << b
                   << "; components:";
                for (const auto& [k, v] : blog.components) os << ' ' << k << '=' << v;
                throw Error(os.str());
            }

            g.backward(loss);
            enc.zero_grad();
            enc.accumulate_grads(g, bound);
            ++t;
            for (auto& [pname, p] : enc.parameters()) adam_step(p, lr, t);

            epoch_loss += blog.loss;
            result.log.batches.push_back(std::move(blog));
        }

        result.log.epoch_loss.push_back(epoch_loss / batches);
        ++result.epochs_run;
        if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0 &&
            epoch + 1 < cfg.epochs)
            save(epoch + 1, "epoch_" + std::to_string(epoch + 1) + ".ckpt");
    }

    result.adam_t = t;
    save(cfg.epochs, "final.ckpt");
    return result;
}

}  // namespace gradmix
