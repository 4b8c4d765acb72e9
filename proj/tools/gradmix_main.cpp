// gradmix command-line front end: train, eval-osr, eval-ood, eval-corrupt,
// probe, export-maps, report. Flags mirror the run-config fields; --config
// loads a JSON file first and explicit flags override it. Exit code 0 on
// success; failures print a machine-readable error record to stderr.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "gradmix/checkpoint.hpp"
#include "gradmix/evaluate.hpp"
#include "gradmix/train.hpp"
#include "json.hpp"

namespace gm = gradmix;
using nlohmann::json;

namespace {

struct Flags {
    std::string config_path;
    std::string checkpoint;
    std::string scorer = "knn";
    std::string out_dir;
    std::string report_path;
    int probe_epochs = 50;
    double probe_lr = 1e-2;
    // string-typed so "unset" is distinguishable from a default
    std::map<std::string, std::string> overrides;
};

/// Resolve the run configuration: defaults <- config file <- explicit flags.
gm::RunConfig resolve_config(CLI::App* cmd, const Flags& flags) {
    gm::RunConfig cfg;
    if (!flags.config_path.empty()) cfg = gm::load_config_file(flags.config_path);
    json patch = json::object();
    for (const auto& [key, value] : flags.overrides) {
        if (!cmd->get_option("--" + key)->count()) continue;
        // numeric fields arrive as plain numbers; parse them as JSON values
        json v;
        try {
            v = json::parse(value);
        } catch (const json::exception&) {
            v = value;
        }
        if (key.rfind("encoder_", 0) == 0)
            patch["encoder"][key.substr(8)] = v;
        else
            patch[key] = v;
    }
    if (!patch.empty()) {
        json merged = json::parse(gm::config_to_json(cfg));
        merged.merge_patch(patch);
        cfg = gm::config_from_json(merged.dump());
    }
    if (cfg.data_dir.empty()) {
        const char* env = std::getenv("GRADMIX_DATA_DIR");
        if (env) cfg.data_dir = env;
    }
    return cfg;
}

std::string data_path(const gm::RunConfig& cfg, const std::string& p) {
    if (p.empty() || cfg.data_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
    return cfg.data_dir + "/" + p;
}

gm::ImageDataset load_set(const gm::RunConfig& cfg, const std::string& images,
                          const std::string& labels) {
    if (cfg.format == "idx") return gm::load_idx(data_path(cfg, images), data_path(cfg, labels));
    if (cfg.format == "cifar") return gm::load_cifar_binary(data_path(cfg, images));
    throw gm::Error("cli: file datasets need format idx or cifar");
}

/// Synthetic protocol or file-backed datasets, then the split protocol.
gm::OpenSetSplit make_protocol_split(const gm::RunConfig& cfg) {
    if (cfg.format == "synth") {
        std::vector<gm::BlobClassSpec> specs;
        std::mt19937 rng(cfg.seed);
        std::uniform_real_distribution<float> u(0.25f, 0.75f);
        for (int c = 0; c < cfg.synth_classes; ++c) {
            gm::BlobClassSpec sp;
            sp.color = {c % 3 == 0 ? 1.f : 0.15f, c % 3 == 1 ? 1.f : 0.15f,
                        c % 3 == 2 ? 1.f : 0.15f};
            sp.center_row = u(rng);
            sp.center_col = u(rng);
            sp.sigma = 0.12f + 0.03f * (c % 3);
            specs.push_back(sp);
        }
        auto train = gm::synth_blobs(specs, cfg.synth_size, cfg.synth_per_class, cfg.seed);
        auto test = gm::synth_blobs(specs, cfg.synth_size, cfg.synth_per_class / 3 + 4,
                                    cfg.seed + 1);
        return gm::make_split(train, test, nullptr, cfg.known_count, cfg.unknown_count, cfg.trial,
                              cfg.seed);
    }
    auto train = load_set(cfg, cfg.train_images, cfg.train_labels);
    auto test = load_set(cfg, cfg.test_images, cfg.test_labels);
    if (!cfg.unknown_images.empty()) {
        auto unknown = load_set(cfg, cfg.unknown_images, cfg.unknown_labels);
        return gm::make_split(train, test, &unknown, cfg.known_count, cfg.unknown_count, cfg.trial,
                              cfg.seed);
    }
    return gm::make_split(train, test, nullptr, cfg.known_count, cfg.unknown_count, cfg.trial,
                          cfg.seed);
}

gm::Encoder load_encoder(const std::string& path, gm::RunConfig& cfg) {
    gm::Checkpoint ckpt = gm::load_checkpoint(path);
    cfg = gm::config_from_json(ckpt.config_json);
    gm::Encoder enc(cfg.encoder, cfg.seed);
    gm::restore_model(enc, ckpt);
    return enc;
}

void write_report(const gm::Report& rep, const gm::RunConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.out_dir);
    rep.write(cfg.out_dir + "/" + name + ".json", cfg.out_dir + "/" + name + ".txt");
    std::cout << rep.machine_text() << '\n';
}

int run(int argc, char** argv) {
    CLI::App app{"attribution-guided contrastive open-set recognition lab"};
    app.require_subcommand(1);
    Flags flags;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", flags.config_path, "JSON config file");
        for (const char* key :
             {"objective", "augmentation", "attribution_refresh", "format", "out_dir",
              "data_dir", "train_images", "train_labels", "test_images", "test_labels",
              "unknown_images", "unknown_labels", "theta", "lambda", "tau", "gamma_lo",
              "gamma_hi", "k", "epochs", "batch_size", "checkpoint_interval", "lr_max",
              "lr_min", "seed", "known_count", "unknown_count", "trial", "synth_classes",
              "synth_per_class", "synth_size", "encoder_input_resolution",
              "encoder_input_channels", "encoder_stage_widths", "encoder_blocks_per_stage",
              "encoder_embedding_dim", "encoder_tap_names", "encoder_classifier_head",
              "encoder_class_count"})
            cmd->add_option("--" + std::string(key), flags.overrides[key]);
        return cmd;
    };

    auto* c_train = add_common(app.add_subcommand("train", "train a model"));
    auto* c_osr = add_common(app.add_subcommand("eval-osr", "open-set recognition metrics"));
    c_osr->add_option("--checkpoint", flags.checkpoint)->required();
    c_osr->add_option("--scorer", flags.scorer);
    auto* c_ood = add_common(app.add_subcommand("eval-ood", "out-of-distribution metrics"));
    c_ood->add_option("--checkpoint", flags.checkpoint)->required();
    c_ood->add_option("--scorer", flags.scorer);
    auto* c_corrupt = add_common(app.add_subcommand("eval-corrupt", "corruption robustness"));
    c_corrupt->add_option("--checkpoint", flags.checkpoint)->required();
    auto* c_probe = add_common(app.add_subcommand("probe", "frozen-encoder linear probe"));
    c_probe->add_option("--checkpoint", flags.checkpoint)->required();
    c_probe->add_option("--probe-epochs", flags.probe_epochs);
    c_probe->add_option("--probe-lr", flags.probe_lr);
    auto* c_maps = add_common(app.add_subcommand("export-maps", "export attribution maps"));
    c_maps->add_option("--checkpoint", flags.checkpoint)->required();
    c_maps->add_option("--maps-dir", flags.out_dir);
    auto* c_report = app.add_subcommand("report", "render a stored JSON report as a table");
    c_report->add_option("--report", flags.report_path)->required();

    CLI11_PARSE(app, argc, argv);

    if (c_report->parsed()) {
        std::ifstream f(flags.report_path);
        if (!f) throw gm::Error("cli: cannot open report " + flags.report_path);
        gm::Report rep;
        rep.data = json::parse(f);
        std::string table = flags.report_path + ".txt";
        rep.write(flags.report_path, table);
        std::ifstream t(table);
        std::cout << t.rdbuf();
        return 0;
    }

    if (c_train->parsed()) {
        gm::RunConfig cfg = resolve_config(c_train, flags);
        cfg.validate();
        gm::OpenSetSplit split = make_protocol_split(cfg);
        if (cfg.encoder.classifier_head && cfg.encoder.class_count == 0)
            cfg.encoder.class_count = split.train_known.class_count();
        gm::Encoder enc(cfg.encoder, cfg.seed);
        std::filesystem::create_directories(cfg.out_dir);
        gm::TrainResult res = gm::train(enc, cfg, split.train_known, cfg.out_dir);
        gm::Report rep;
        rep.data["config"] = json::parse(gm::config_to_json(cfg));
        rep.data["epochs_run"] = res.epochs_run;
        rep.data["epoch_loss"] = res.log.epoch_loss;
        rep.data["checkpoint"] = cfg.out_dir + "/final.ckpt";
        write_report(rep, cfg, "train_report");
        return 0;
    }

    // all remaining commands start from a checkpoint
    gm::RunConfig cfg;
    CLI::App* active = c_osr->parsed()       ? c_osr
                       : c_ood->parsed()     ? c_ood
                       : c_corrupt->parsed() ? c_corrupt
                       : c_probe->parsed()   ? c_probe
                                             : c_maps;
    gm::Encoder enc = load_encoder(flags.checkpoint, cfg);
    {  // allow flag overrides of the checkpointed config (e.g. paths, k)
        json merged = json::parse(gm::config_to_json(cfg));
        json pj = json::object();
        for (const auto& [key, value] : flags.overrides)
            if (active->get_option("--" + key)->count()) {
                json v;
                try {
                    v = json::parse(value);
                } catch (const json::exception&) {
                    v = value;
                }
                if (key.rfind("encoder_", 0) == 0)
                    pj["encoder"][key.substr(8)] = v;
                else
                    pj[key] = v;
            }
        merged.merge_patch(pj);
        cfg = gm::config_from_json(merged.dump());
        if (cfg.data_dir.empty()) {
            const char* env = std::getenv("GRADMIX_DATA_DIR");
            if (env) cfg.data_dir = env;
        }
    }

    if (c_osr->parsed() || c_ood->parsed()) {
        gm::OpenSetSplit split = make_protocol_split(cfg);
        gm::Report rep = gm::eval_detection(enc, split, flags.scorer, cfg.k, cfg.batch_size);
        rep.data["mode"] = c_osr->parsed() ? "osr" : "ood";
        write_report(rep, cfg, c_osr->parsed() ? "osr_report" : "ood_report");
        return 0;
    }
    if (c_corrupt->parsed()) {
        gm::OpenSetSplit split = make_protocol_split(cfg);
        gm::Report rep = gm::eval_corruption(enc, split.train_known, split.test_known, cfg.k,
                                             cfg.batch_size, cfg.seed);
        write_report(rep, cfg, "corruption_report");
        return 0;
    }
    if (c_probe->parsed()) {
        gm::OpenSetSplit split = make_protocol_split(cfg);
        gm::Report rep = gm::linear_probe(enc, split.test_known, flags.probe_epochs,
                                          flags.probe_lr, cfg.seed, cfg.batch_size);
        write_report(rep, cfg, "probe_report");
        return 0;
    }
    // export-maps
    gm::OpenSetSplit split = make_protocol_split(cfg);
    const int n = std::min(8, split.test_known.size());
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    gm::Tensor images = gm::gather_rows(split.test_known.images, idx);
    std::vector<int> labels(split.test_known.labels.begin(),
                            split.test_known.labels.begin() + n);
    std::string dir = flags.out_dir.empty() ? cfg.out_dir + "/maps" : flags.out_dir;
    gm::Report rep = gm::export_attribution(enc, cfg, images, labels, dir);
    write_report(rep, cfg, "maps_report");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const gm::Error& e) {
        std::cerr << json{{"error", e.what()}, {"kind", "gradmix"}}.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}, {"kind", "internal"}}.dump() << '\n';
        return 2;
    }
}
