#include "gradmix/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace gradmix {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'G', 'M', 'I', 'X', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw Error(std::string("checkpoint: truncated file reading ") + what);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

void write_f32_le(std::ostream& out, const std::vector<float>& data) {
    // serialize explicitly so the container is endian-stable
    for (float f : data) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json header;
    header["config"] = ckpt.config_json.empty() ? json::object() : json::parse(ckpt.config_json);
    header["epoch"] = ckpt.epoch;
    header["adam_t"] = ckpt.adam_t;
    header["rng_state"] = ckpt.rng_state;
    json table = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        table.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
        offset += t.numel() * 4;
    }
    header["tensors"] = table;
    const std::string htext = header.dump();

    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot write " + path);
    f.write(kMagic, 8);
    write_u32(f, kVersion);
    write_u32(f, static_cast<std::uint32_t>(htext.size()));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, t] : ckpt.tensors) write_f32_le(f, t.data);
    if (!f) throw Error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot open " + path);
    char magic[8];
    if (!f.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw Error("checkpoint: bad magic in " + path);
    Checkpoint c;
    c.version = read_u32(f, "version");
    if (c.version != kVersion)
        throw Error("checkpoint: unsupported version " + std::to_string(c.version));
    std::uint32_t hlen = read_u32(f, "header length");
    std::string htext(hlen, '\0');
    if (!f.read(htext.data(), hlen)) throw Error("checkpoint: truncated header");
    json header;
    try {
        header = json::parse(htext);
    } catch (const json::exception& e) {
        throw Error(std::string("checkpoint: corrupt header: ") + e.what());
    }
    c.config_json = header.at("config").dump();
    c.epoch = header.at("epoch").get<int>();
    c.adam_t = header.at("adam_t").get<long>();
    c.rng_state = header.at("rng_state").get<std::string>();

    std::uint64_t expect = 0;
    for (const json& entry : header.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        if (offset != expect)
            throw Error("checkpoint: shape table offset mismatch at block '" + name + "'");
        Tensor t(shape);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            std::uint32_t bits;
            unsigned char b[4];
            if (!f.read(reinterpret_cast<char*>(b), 4))
                throw Error("checkpoint: truncated data block '" + name + "'");
            bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
                   (std::uint32_t(b[3]) << 24);
            std::memcpy(&t.data[i], &bits, 4);
        }
        expect += t.numel() * 4;
        c.tensors.emplace_back(std::move(name), std::move(t));
    }
    return c;
}

Checkpoint snapshot_model(const Encoder& enc, const RunConfig& cfg, int epoch, long adam_t,
                          const std::string& rng_state) {
    Checkpoint c;
    c.config_json = config_to_json(cfg);
    c.epoch = epoch;
    c.adam_t = adam_t;
    c.rng_state = rng_state;
    for (const auto& [name, p] : enc.parameters()) {
        c.tensors.emplace_back("param:" + name, p.value);
        c.tensors.emplace_back("adam_m:" + name, p.m);
        c.tensors.emplace_back("adam_v:" + name, p.v);
    }
    for (const auto& [name, st] : enc.bn_states()) {
        c.tensors.emplace_back("bn_mean:" + name, st.running_mean);
        c.tensors.emplace_back("bn_var:" + name, st.running_var);
    }
    return c;
}

void restore_model(Encoder& enc, const Checkpoint& ckpt) {
    std::map<std::string, const Tensor*> blocks;
    for (const auto& [name, t] : ckpt.tensors) blocks[name] = &t;
    auto fetch = [&](const std::string& name, Tensor& dst) {
        auto it = blocks.find(name);
        if (it == blocks.end()) throw Error("checkpoint: missing block '" + name + "'");
        if (!dst.same_shape(*it->second))
            throw Error("checkpoint: shape mismatch for block '" + name + "': stored " +
                        shape_str(it->second->shape) + ", model " + shape_str(dst.shape));
        dst = *it->second;
    };
    for (auto& [name, p] : enc.parameters()) {
        fetch("param:" + name, p.value);
        fetch("adam_m:" + name, p.m);
        fetch("adam_v:" + name, p.v);
    }
    for (auto& [name, st] : enc.bn_states()) {
        fetch("bn_mean:" + name, st.running_mean);
        fetch("bn_var:" + name, st.running_var);
    }
}

}  // namespace gradmix
