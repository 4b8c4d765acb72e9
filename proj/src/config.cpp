#include "gradmix/config.hpp"

#include <fstream>

#include "json.hpp"

namespace gradmix {

using nlohmann::json;

std::string objective_name(Objective o) {
    switch (o) {
        case Objective::CE: return "ce";
        case Objective::CESSL: return "ce+ssl";
        case Objective::SupCon: return "supcon";
        case Objective::SupConSSL: return "supcon+ssl";
        case Objective::SupConSSLGradMix: return "supcon+ssl+gradmix";
        case Objective::SSLOnly: return "ssl-only";
    }
    return "?";
}

Objective parse_objective(const std::string& name) {
    for (Objective o : {Objective::CE, Objective::CESSL, Objective::SupCon, Objective::SupConSSL,
                        Objective::SupConSSLGradMix, Objective::SSLOnly})
        if (objective_name(o) == name) return o;
    throw Error("config: unknown objective '" + name + "'");
}

std::string augmentation_name(Augmentation a) {
    switch (a) {
        case Augmentation::None: return "none";
        case Augmentation::Mixup: return "mixup";
        case Augmentation::Cutmix: return "cutmix";
        case Augmentation::Cutout: return "cutout";
        case Augmentation::GradMix: return "gradmix";
    }
    return "?";
}

Augmentation parse_augmentation(const std::string& name) {
    for (Augmentation a : {Augmentation::None, Augmentation::Mixup, Augmentation::Cutmix,
                           Augmentation::Cutout, Augmentation::GradMix})
        if (augmentation_name(a) == name) return a;
    throw Error("config: unknown augmentation '" + name + "'");
}

std::string refresh_name(AttributionRefresh r) {
    return r == AttributionRefresh::PerBatch ? "per-batch" : "per-epoch";
}

AttributionRefresh parse_refresh(const std::string& name) {
    if (name == "per-batch") return AttributionRefresh::PerBatch;
    if (name == "per-epoch") return AttributionRefresh::PerEpoch;
    throw Error("config: unknown attribution refresh mode '" + name + "'");
}

void RunConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw Error("config: " + msg);
    };
    require(theta >= 0, "theta must be >= 0");
    require(lambda >= 0, "lambda must be >= 0");
    require(tau > 0, "tau must be positive");
    require(gamma_lo >= 0.1 && gamma_hi <= 0.5 && gamma_lo <= gamma_hi,
            "gamma range must lie within [0.1, 0.5]");
    require(mix_alpha > 0, "mix alpha must be positive");
    require(cutout_size >= 1, "cutout size must be >= 1");
    require(k >= 1, "k must be >= 1");
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 2, "batch size must be >= 2");
    require(checkpoint_interval >= 0, "checkpoint interval must be >= 0");
    require(lr_max > 0 && lr_min > 0 && lr_min <= lr_max, "lr range invalid");
    const bool needs_gradmix = objective == Objective::SupConSSLGradMix ||
                               augmentation == Augmentation::GradMix;
    require(!needs_gradmix || !encoder.tap_names.empty(),
            "gradmix requires at least one tap name");
    const bool ce_objective = objective == Objective::CE || objective == Objective::CESSL;
    require(!(augmentation == Augmentation::Mixup || augmentation == Augmentation::Cutmix) ||
                ce_objective,
            "mixup/cutmix require a cross-entropy objective (label pairs)");
    require(!ce_objective || encoder.classifier_head,
            "cross-entropy objectives require a classifier head");
    require(format == "synth" || format == "idx" || format == "cifar",
            "format must be synth, idx, or cifar");
    require(known_count >= 2, "known class count must be >= 2");
    require(unknown_count >= 1, "unknown class count must be >= 1");
    require(trial >= 0 && trial < 5, "trial must be in [0,5)");
}

std::string config_to_json(const RunConfig& c) {
    json e;
    e["input_resolution"] = c.encoder.input_resolution;
    e["input_channels"] = c.encoder.input_channels;
    e["stage_widths"] = c.encoder.stage_widths;
    e["blocks_per_stage"] = c.encoder.blocks_per_stage;
    e["embedding_dim"] = c.encoder.embedding_dim;
    e["tap_names"] = c.encoder.tap_names;
    e["classifier_head"] = c.encoder.classifier_head;
    e["class_count"] = c.encoder.class_count;
    json j;
    j["objective"] = objective_name(c.objective);
    j["augmentation"] = augmentation_name(c.augmentation);
    j["encoder"] = e;
    j["theta"] = c.theta;
    j["lambda"] = c.lambda;
    j["tau"] = c.tau;
    j["gamma_lo"] = c.gamma_lo;
    j["gamma_hi"] = c.gamma_hi;
    j["mix_alpha"] = c.mix_alpha;
    j["cutout_size"] = c.cutout_size;
    j["attribution_refresh"] = refresh_name(c.attribution_refresh);
    j["k"] = c.k;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["checkpoint_interval"] = c.checkpoint_interval;
    j["lr_max"] = c.lr_max;
    j["lr_min"] = c.lr_min;
    j["seed"] = c.seed;
    j["data_dir"] = c.data_dir;
    j["train_images"] = c.train_images;
    j["train_labels"] = c.train_labels;
    j["test_images"] = c.test_images;
    j["test_labels"] = c.test_labels;
    j["unknown_images"] = c.unknown_images;
    j["unknown_labels"] = c.unknown_labels;
    j["format"] = c.format;
    j["known_count"] = c.known_count;
    j["unknown_count"] = c.unknown_count;
    j["trial"] = c.trial;
    j["synth_classes"] = c.synth_classes;
    j["synth_per_class"] = c.synth_per_class;
    j["synth_size"] = c.synth_size;
    j["out_dir"] = c.out_dir;
    return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(std::string("config: invalid structured text: ") + e.what());
    }
    RunConfig c;
    auto get = [&](const json& src, const char* key, auto& field) {
        if (src.contains(key)) {
            try {
                src.at(key).get_to(field);
            } catch (const json::exception& e) {
                throw Error("config: field '" + std::string(key) + "': " + e.what());
            }
        }
    };
    std::string s;
    if (j.contains("objective")) { j.at("objective").get_to(s); c.objective = parse_objective(s); }
    if (j.contains("augmentation")) { j.at("augmentation").get_to(s); c.augmentation = parse_augmentation(s); }
    if (j.contains("attribution_refresh")) {
        j.at("attribution_refresh").get_to(s);
        c.attribution_refresh = parse_refresh(s);
    }
    if (j.contains("encoder")) {
        const json& e = j.at("encoder");
        get(e, "input_resolution", c.encoder.input_resolution);
        get(e, "input_channels", c.encoder.input_channels);
        get(e, "stage_widths", c.encoder.stage_widths);
        get(e, "blocks_per_stage", c.encoder.blocks_per_stage);
        get(e, "embedding_dim", c.encoder.embedding_dim);
        get(e, "tap_names", c.encoder.tap_names);
        get(e, "classifier_head", c.encoder.classifier_head);
        get(e, "class_count", c.encoder.class_count);
    }
    get(j, "theta", c.theta);
    get(j, "lambda", c.lambda);
    get(j, "tau", c.tau);
    get(j, "gamma_lo", c.gamma_lo);
    get(j, "gamma_hi", c.gamma_hi);
    get(j, "mix_alpha", c.mix_alpha);
    get(j, "cutout_size", c.cutout_size);
    get(j, "k", c.k);
    get(j, "epochs", c.epochs);
    get(j, "batch_size", c.batch_size);
    get(j, "checkpoint_interval", c.checkpoint_interval);
    get(j, "lr_max", c.lr_max);
    get(j, "lr_min", c.lr_min);
    get(j, "seed", c.seed);
    get(j, "data_dir", c.data_dir);
    get(j, "train_images", c.train_images);
    get(j, "train_labels", c.train_labels);
    get(j, "test_images", c.test_images);
    get(j, "test_labels", c.test_labels);
    get(j, "unknown_images", c.unknown_images);
    get(j, "unknown_labels", c.unknown_labels);
    get(j, "format", c.format);
    get(j, "known_count", c.known_count);
    get(j, "unknown_count", c.unknown_count);
    get(j, "trial", c.trial);
    get(j, "synth_classes", c.synth_classes);
    get(j, "synth_per_class", c.synth_per_class);
    get(j, "synth_size", c.synth_size);
    get(j, "out_dir", c.out_dir);
    return c;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

}  // namespace gradmix
