#include "gradmix/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>

#include "gradmix/augment.hpp"
#include "gradmix/metrics.hpp"
#include "gradmix/optimizer.hpp"
#include "gradmix/scoring.hpp"
#include "gradmix/train.hpp"

namespace gradmix {

namespace {

using nlohmann::json;

std::vector<int> range_indices(int from, int to) {
    std::vector<int> idx(to - from);
    std::iota(idx.begin(), idx.end(), from);
    return idx;
}

/// Batched eval-mode forward, copying one named output per sample row.
Tensor batched_forward(Encoder& enc, const Tensor& images, int batch_size, bool want_logits) {
    if (want_logits && !enc.config().classifier_head)
        throw Error("eval: scorer requires a classifier head, but the checkpoint has none");
    const int n = images.shape[0];
    Tensor out;
    for (int off = 0; off < n; off += batch_size) {
        Tensor batch = gather_rows(images, range_indices(off, std::min(off + batch_size, n)));
        Graph g;
        auto bound = enc.bind(g);
        auto fwd = enc.forward(g, bound, batch, /*train=*/false);
        const Tensor& rows = g.out(want_logits ? fwd.logits : fwd.embeddings);
        out = off == 0 ? rows : concat_rows(out, rows);
    }
    return out;
}

Tensor pooled_features(Encoder& enc, const Tensor& images, int batch_size) {
    const int n = images.shape[0];
    Tensor out;
    for (int off = 0; off < n; off += batch_size) {
        Tensor batch = gather_rows(images, range_indices(off, std::min(off + batch_size, n)));
        Graph g;
        auto bound = enc.bind(g);
        auto fwd = enc.forward(g, bound, batch, /*train=*/false);
        const Tensor& rows = g.out(fwd.pooled);
        out = off == 0 ? rows : concat_rows(out, rows);
    }
    return out;
}

std::vector<float> row(const Tensor& t, int i) {
    const int d = t.shape[1];
    return std::vector<float>(&t.data[static_cast<std::size_t>(i) * d],
                              &t.data[static_cast<std::size_t>(i) * d] + d);
}

void write_pgm(const std::string& path, const float* plane, int h, int w) {
    float lo = plane[0], hi = plane[0];
    for (int i = 1; i < h * w; ++i) {
        lo = std::min(lo, plane[i]);
        hi = std::max(hi, plane[i]);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("export: cannot write " + path);
    f << "P5\n" << w << ' ' << h << "\n255\n";
    for (int i = 0; i < h * w; ++i) {
        double v = hi > lo ? (plane[i] - lo) / (hi - lo) : 0.0;
        f.put(static_cast<char>(std::lround(v * 255.0)));
    }
}

void write_float_grid(const std::string& path, const float* plane, int h, int w) {
    std::ofstream f(path);
    if (!f) throw Error("export: cannot write " + path);
    f.precision(9);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f << (x ? " " : "") << plane[static_cast<std::size_t>(y) * w + x];
        f << '\n';
    }
}

}  // namespace

Tensor embed_images(Encoder& enc, const Tensor& images, int batch_size) {
    return batched_forward(enc, images, batch_size, false);
}

Tensor logits_images(Encoder& enc, const Tensor& images, int batch_size) {
    return batched_forward(enc, images, batch_size, true);
}

Report eval_detection(Encoder& enc, const OpenSetSplit& split, const std::string& scorer, int k,
                      int batch_size) {
    if (scorer != "knn" && scorer != "msp" && scorer != "entropy" && scorer != "mahalanobis")
        throw Error("eval: unknown scorer '" + scorer + "'");

    int degenerate = 0;
    std::vector<ScoredSample> samples;
    json score_rows = json::array();

    auto add_scores = [&](const std::vector<double>& scores, bool positive, const char* set_name) {
        for (std::size_t i = 0; i < scores.size(); ++i) {
            samples.push_back({scores[i], positive});
            score_rows.push_back({{"set", set_name}, {"index", i}, {"score", scores[i]}});
        }
    };

    if (scorer == "msp" || scorer == "entropy") {
        auto score_logits = [&](const Tensor& images) {
            Tensor logits = logits_images(enc, images, batch_size);
            std::vector<double> scores;
            for (int i = 0; i < logits.shape[0]; ++i) {
                auto [msp, negent] = msp_and_entropy_scores(row(logits, i));
                scores.push_back(scorer == "msp" ? msp : negent);
            }
            return scores;
        };
        add_scores(score_logits(split.test_known.images), true, "known");
        add_scores(score_logits(split.test_unknown.images), false, "unknown");
    } else {
        Tensor train_z = embed_images(enc, split.train_known.images, batch_size);
        if (scorer == "knn") {
            FeatureBank bank(train_z, split.train_known.labels, k);
            auto score_bank = [&](const Tensor& images) {
                Tensor z = embed_images(enc, images, batch_size);
                std::vector<double> scores;
                for (int i = 0; i < z.shape[0]; ++i) {
                    DetectionResult r = knn_osr_score(bank, row(z, i));
                    if (r.degenerate) {
                        ++degenerate;
                        scores.push_back(0.0);
                    } else {
                        scores.push_back(r.score);
                    }
                }
                return scores;
            };
            add_scores(score_bank(split.test_known.images), true, "known");
            add_scores(score_bank(split.test_unknown.images), false, "unknown");
        } else {
            MahalanobisModel model = fit_mahalanobis(train_z, split.train_known.labels);
            auto score_m = [&](const Tensor& images) {
                Tensor z = embed_images(enc, images, batch_size);
                std::vector<double> scores;
                for (int i = 0; i < z.shape[0]; ++i)
                    scores.push_back(mahalanobis_score(model, row(z, i)));
                return scores;
            };
            add_scores(score_m(split.test_known.images), true, "known");
            add_scores(score_m(split.test_unknown.images), false, "unknown");
        }
    }

    Report rep;
    rep.data["scorer"] = scorer;
    rep.data["k"] = k;
    rep.data["known_classes"] = split.known_classes;
    rep.data["unknown_classes"] = split.unknown_classes;
    rep.data["counts"] = {{"test_known", split.test_known.size()},
                          {"test_unknown", split.test_unknown.size()}};
    rep.data["openness_percent"] = openness(static_cast<int>(split.known_classes.size()),
                                            static_cast<int>(split.unknown_classes.size()));
    rep.data["degenerate_scores"] = degenerate;
    rep.data["metrics"] = {{"auroc", auroc(samples)},
                           {"tnr_at_tpr95", tnr_at_tpr(samples, 0.95)},
                           {"dtacc", dtacc(samples)},
                           {"auin", aupr(samples, PositiveSide::In)},
                           {"auout", aupr(samples, PositiveSide::Out)}};
    rep.data["scores"] = std::move(score_rows);
    return rep;
}

Report eval_corruption(Encoder& enc, const ImageDataset& train_known,
                       const ImageDataset& clean_test, int k, int batch_size, std::uint32_t seed) {
    const bool use_head = enc.config().classifier_head;

    // classification rule shared by every cell
    FeatureBank* bank = nullptr;
    std::unique_ptr<FeatureBank> bank_holder;
    if (!use_head) {
        Tensor train_z = embed_images(enc, train_known.images, batch_size);
        bank_holder = std::make_unique<FeatureBank>(train_z, train_known.labels, k);
        bank = bank_holder.get();
    }
    auto accuracy_of = [&](const Tensor& images) {
        int correct = 0;
        if (use_head) {
            Tensor logits = logits_images(enc, images, batch_size);
            for (int i = 0; i < logits.shape[0]; ++i) {
                int best = 0;
                for (int c = 1; c < logits.shape[1]; ++c)
                    if (logits.at2(i, c) > logits.at2(i, best)) best = c;
                if (best == clean_test.labels[i]) ++correct;
            }
        } else {
            Tensor z = embed_images(enc, images, batch_size);
            for (int i = 0; i < z.shape[0]; ++i)
                if (knn_osr_score(*bank, row(z, i)).predicted == clean_test.labels[i]) ++correct;
        }
        return static_cast<double>(correct) / images.shape[0];
    };

    CorruptionGrid grid;
    grid.clean_accuracy = accuracy_of(clean_test.images);
    json cells = json::array();
    const auto& types = all_corruption_types();
    grid.accuracy.resize(types.size());
    for (std::size_t c = 0; c < types.size(); ++c) {
        for (int s = 1; s <= 5; ++s) {
            CorruptionSpec spec{types[c], s};
            std::uint32_t cell_seed = seed + static_cast<std::uint32_t>(c * 5 + s);
            double acc = accuracy_of(corrupt(clean_test.images, spec, cell_seed));
            grid.accuracy[c].push_back(acc);
            cells.push_back({{"type", corruption_name(types[c])},
                             {"severity", s},
                             {"accuracy", acc}});
        }
    }
    CorruptionAggregates agg = corruption_aggregates(grid);

    Report rep;
    rep.data["classifier"] = use_head ? "logits-argmax" : "knn-label-rule";
    rep.data["k"] = k;
    rep.data["clean_accuracy"] = grid.clean_accuracy;
    rep.data["cells"] = std::move(cells);
    json per_type = json::array();
    for (std::size_t c = 0; c < types.size(); ++c)
        per_type.push_back({{"type", corruption_name(types[c])},
                            {"mean_drop", agg.mean_drop_per_type[c]}});
    rep.data["mean_drop_per_type"] = std::move(per_type);
    rep.data["mean_drop_per_severity"] = agg.mean_drop_per_severity;
    rep.data["overall_mean_drop"] = agg.overall_mean;
    return rep;
}

Report linear_probe(Encoder& enc, const ImageDataset& ds, int epochs, double lr,
                    std::uint32_t seed, int batch_size, double holdout_fraction) {
    if (ds.size() < 10) throw Error("probe: needs at least 10 samples");
    if (holdout_fraction <= 0 || holdout_fraction >= 1)
        throw Error("probe: holdout fraction must be in (0,1)");
    const int classes = ds.class_count();
    if (classes < 2) throw Error("probe: needs at least 2 classes");

    Tensor feats = pooled_features(enc, ds.images, batch_size);
    const int n = feats.shape[0], d = feats.shape[1];

    std::mt19937 rng(seed);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int n_hold = std::max(1, static_cast<int>(n * holdout_fraction));
    std::vector<int> hold(order.begin(), order.begin() + n_hold);
    std::vector<int> tr(order.begin() + n_hold, order.end());

    Parameter w(Tensor({d, classes}));
    Parameter b(Tensor({classes}));
    {
        std::uniform_real_distribution<float> u(-std::sqrt(6.f / d), std::sqrt(6.f / d));
        for (auto& v : w.value.data) v = u(rng);
    }

    long t = 0;
    const int bs = std::min(batch_size, static_cast<int>(tr.size()));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(tr.begin(), tr.end(), rng);
        for (std::size_t off = 0; off + bs <= tr.size(); off += bs) {
            std::vector<int> idx(tr.begin() + static_cast<std::ptrdiff_t>(off),
                                 tr.begin() + static_cast<std::ptrdiff_t>(off) + bs);
            Tensor x = gather_rows(feats, idx);
            std::vector<int> y;
            for (int i : idx) y.push_back(ds.labels[i]);
            Graph g;
            NodeId xn = g.value(x);
            NodeId wn = g.value(w.value);
            NodeId bn = g.value(b.value);
            NodeId loss = g.softmax_ce(g.dense(xn, wn, bn), y);
            g.backward(loss);
            w.grad = g.grad(wn);
            b.grad = g.grad(bn);
            ++t;
            adam_step(w, lr, t);
            adam_step(b, lr, t);
        }
    }

    // holdout evaluation
    int top1 = 0, top5 = 0;
    for (int i : hold) {
        std::vector<std::pair<float, int>> scored;
        for (int c = 0; c < classes; ++c) {
            float logit = b.value.data[c];
            for (int j = 0; j < d; ++j) logit += feats.at2(i, j) * w.value.at2(j, c);
            scored.push_back({logit, c});
        }
        std::sort(scored.begin(), scored.end(), std::greater<>());
        if (scored[0].second == ds.labels[i]) ++top1;
        for (int r = 0; r < std::min(5, classes); ++r)
            if (scored[r].second == ds.labels[i]) { ++top5; break; }
    }

    Report rep;
    rep.data["probe"] = {{"epochs", epochs}, {"lr", lr}, {"classes", classes},
                         {"train_samples", static_cast<int>(tr.size())},
                         {"holdout_samples", n_hold}};
    rep.data["top1"] = static_cast<double>(top1) / n_hold;
    if (classes >= 5)
        rep.data["top5"] = static_cast<double>(top5) / n_hold;
    else
        rep.data["top5_note"] = "omitted: fewer than 5 classes";
    return rep;
}

Report export_attribution(Encoder& enc, const RunConfig& cfg, const Tensor& images,
                          const std::vector<int>& labels, const std::string& out_dir) {
    if (cfg.encoder.tap_names.empty()) throw Error("export: no layers tapped");
    std::filesystem::create_directories(out_dir);

    std::mt19937 rng(cfg.seed);
    ViewBatch views = standard_views(images, rng);
    std::vector<AttributionMap> layer_maps =
        attribution_layer_maps(enc, images, views.view_b, labels, cfg);
    AttributionMap agg = aggregate(layer_maps, cfg.encoder.input_resolution);

    static const double kThresholds[] = {1e-5, 2e-5, 5e-5, 1e-4, 2e-4, 5e-4, 1e-3};

    json maps_json = json::array();
    auto emit = [&](const AttributionMap& m, const std::string& tag) {
        const int res = m.resolution;
        for (int i = 0; i < m.samples(); ++i) {
            std::string stem = out_dir + "/img" + std::to_string(i) + "_" + tag;
            write_float_grid(stem + ".txt", m.plane(i), res, res);
            write_pgm(stem + ".pgm", m.plane(i), res, res);
            json sweep = json::array();
            for (double tau : kThresholds) {
                int count = 0;
                for (std::size_t p = 0; p < m.resolution_cells(); ++p)
                    if (m.plane(i)[p] > tau) ++count;
                sweep.push_back({{"tau", tau},
                                 {"activated_fraction",
                                  static_cast<double>(count) / m.resolution_cells()}});
            }
            maps_json.push_back({{"image", i}, {"layer", tag}, {"resolution", res},
                                 {"files", {stem + ".txt", stem + ".pgm"}},
                                 {"activated_area", std::move(sweep)}});
        }
    };
    for (const auto& m : layer_maps) emit(m, m.source_layers.front());
    emit(agg, "aggregate");

    Report rep;
    rep.data["out_dir"] = out_dir;
    rep.data["layers"] = cfg.encoder.tap_names;
    rep.data["maps"] = std::move(maps_json);
    return rep;
}

}  // namespace gradmix
