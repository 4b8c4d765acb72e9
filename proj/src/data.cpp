#include "gradmix/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace gradmix {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw Error("idx: truncated file while reading " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open file: " + path);
    return f;
}

float byte_to_unit(unsigned char b) { return static_cast<float>(b) / 255.f; }
unsigned char unit_to_byte(float v) {
    return static_cast<unsigned char>(std::lround(std::min(1.f, std::max(0.f, v)) * 255.f));
}

float quantize(float v) { return byte_to_unit(unit_to_byte(v)); }

ImageDataset subset(const ImageDataset& ds, const std::vector<int>& indices,
                    const std::vector<int>& new_labels) {
    ImageDataset out;
    int C = ds.images.shape[1], H = ds.images.shape[2], W = ds.images.shape[3];
    out.images = Tensor({static_cast<int>(indices.size()), C, H, W});
    const std::size_t stride = static_cast<std::size_t>(C) * H * W;
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy_n(&ds.images.data[indices[i] * stride], stride, &out.images.data[i * stride]);
    out.labels = new_labels;
    return out;
}

}  // namespace

ImageDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    auto fi = open_in(images_path);
    std::uint32_t magic = read_be32(fi, "image magic");
    if (magic != kIdxImageMagic)
        throw Error("idx: bad image magic 0x" + std::to_string(magic) + " in " + images_path);
    int n = static_cast<int>(read_be32(fi, "image count"));
    int h = static_cast<int>(read_be32(fi, "rows"));
    int w = static_cast<int>(read_be32(fi, "cols"));

    ImageDataset ds;
    ds.images = Tensor({n, 1, h, w});
    std::vector<unsigned char> buf(static_cast<std::size_t>(n) * h * w);
    if (!fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw Error("idx: truncated pixel data in " + images_path);
    for (std::size_t i = 0; i < buf.size(); ++i) ds.images.data[i] = byte_to_unit(buf[i]);

    auto fl = open_in(labels_path);
    magic = read_be32(fl, "label magic");
    if (magic != kIdxLabelMagic)
        throw Error("idx: bad label magic 0x" + std::to_string(magic) + " in " + labels_path);
    int ln = static_cast<int>(read_be32(fl, "label count"));
    if (ln != n) throw Error("idx: label count " + std::to_string(ln) + " != image count " +
                             std::to_string(n));
    std::vector<unsigned char> lb(ln);
    if (!fl.read(reinterpret_cast<char*>(lb.data()), ln))
        throw Error("idx: truncated label data in " + labels_path);
    ds.labels.assign(lb.begin(), lb.end());
    return ds;
}

void save_idx(const ImageDataset& ds, const std::string& images_path,
              const std::string& labels_path) {
    if (ds.images.shape[1] != 1) throw Error("idx: format stores single-channel images");
    std::ofstream fi(images_path, std::ios::binary);
    if (!fi) throw Error("cannot write file: " + images_path);
    write_be32(fi, kIdxImageMagic);
    write_be32(fi, static_cast<std::uint32_t>(ds.size()));
    write_be32(fi, static_cast<std::uint32_t>(ds.images.shape[2]));
    write_be32(fi, static_cast<std::uint32_t>(ds.images.shape[3]));
    for (float v : ds.images.data) fi.put(static_cast<char>(unit_to_byte(v)));

    std::ofstream fl(labels_path, std::ios::binary);
    if (!fl) throw Error("cannot write file: " + labels_path);
    write_be32(fl, kIdxLabelMagic);
    write_be32(fl, static_cast<std::uint32_t>(ds.labels.size()));
    for (int l : ds.labels) {
        if (l < 0 || l > 255) throw Error("idx: label out of byte range");
        fl.put(static_cast<char>(l));
    }
}

ImageDataset load_cifar_binary(const std::string& path) {
    auto f = open_in(path);
    f.seekg(0, std::ios::end);
    const std::streamoff bytes = f.tellg();
    f.seekg(0);
    constexpr std::streamoff kRecord = 1 + 3 * 32 * 32;
    if (bytes % kRecord != 0)
        throw Error("cifar-binary: file size " + std::to_string(bytes) +
                    " is not a multiple of the record size in " + path);
    const int n = static_cast<int>(bytes / kRecord);
    ImageDataset ds;
    ds.images = Tensor({n, 3, 32, 32});
    std::vector<unsigned char> rec(kRecord);
    for (int i = 0; i < n; ++i) {
        if (!f.read(reinterpret_cast<char*>(rec.data()), kRecord))
            throw Error("cifar-binary: truncated record " + std::to_string(i));
        if (rec[0] >= 100)
            throw Error("cifar-binary: label " + std::to_string(rec[0]) + " out of range in record " +
                        std::to_string(i));
        ds.labels.push_back(rec[0]);
        for (std::size_t k = 0; k < 3 * 32 * 32; ++k)
            ds.images.data[static_cast<std::size_t>(i) * 3 * 32 * 32 + k] = byte_to_unit(rec[1 + k]);
    }
    return ds;
}

void save_cifar_binary(const ImageDataset& ds, const std::string& path) {
    if (ds.images.shape[1] != 3 || ds.images.shape[2] != 32 || ds.images.shape[3] != 32)
        throw Error("cifar-binary: format stores 3x32x32 images");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write file: " + path);
    for (int i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] < 0 || ds.labels[i] >= 100) throw Error("cifar-binary: label out of range");
        f.put(static_cast<char>(ds.labels[i]));
        for (std::size_t k = 0; k < 3 * 32 * 32; ++k)
            f.put(static_cast<char>(unit_to_byte(ds.images.data[static_cast<std::size_t>(i) * 3 * 32 * 32 + k])));
    }
}

ImageDataset synth_blobs(const std::vector<BlobClassSpec>& specs, int image_size, int n_per_class,
                         std::uint32_t seed) {
    if (specs.empty()) throw Error("synth_blobs: needs class specs");
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> bg(0.f, 0.2f);
    std::normal_distribution<float> jitter(0.f, 1.f);

    const int n = static_cast<int>(specs.size()) * n_per_class;
    ImageDataset ds;
    ds.images = Tensor({n, 3, image_size, image_size});
    int idx = 0;
    for (std::size_t cls = 0; cls < specs.size(); ++cls) {
        const auto& sp = specs[cls];
        for (int i = 0; i < n_per_class; ++i, ++idx) {
            float cy = (sp.center_row + sp.center_jitter * jitter(rng)) * (image_size - 1);
            float cx = (sp.center_col + sp.center_jitter * jitter(rng)) * (image_size - 1);
            float sigma = sp.sigma * image_size;
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < image_size; ++y)
                    for (int x = 0; x < image_size; ++x) {
                        float d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                        float v = bg(rng) + sp.color[c] * std::exp(-d2 / (2.f * sigma * sigma));
                        ds.images.at4(idx, c, y, x) = quantize(v);
                    }
            ds.labels.push_back(static_cast<int>(cls));
        }
    }
    return ds;
}

OpenSetSplit make_split(const ImageDataset& known_train, const ImageDataset& known_test,
                        const ImageDataset* unknown_test, int known_count, int unknown_count,
                        int trial, std::uint32_t seed) {
    if (trial < 0 || trial >= 5) throw Error("make_split: trial index must be in [0,5)");
    if (known_count < 2) throw Error("make_split: need at least 2 known classes");
    if (unknown_count < 1) throw Error("make_split: need at least 1 unknown class");
    const ImageDataset& usrc = unknown_test ? *unknown_test : known_test;
    const bool same_source = unknown_test == nullptr;

    const int kc = known_train.class_count();
    const int uc = usrc.class_count();
    if (known_count > kc) throw Error("make_split: known count exceeds source classes");
    if (same_source ? (known_count + unknown_count > kc) : (unknown_count > uc))
        throw Error("make_split: unknown count infeasible for source");

    // trial-index selects among five fixed seeded draws
    std::mt19937 rng(seed);
    std::vector<int> known_ids, unknown_ids;
    for (int t = 0; t <= trial; ++t) {
        std::vector<int> kperm(kc);
        std::iota(kperm.begin(), kperm.end(), 0);
        std::shuffle(kperm.begin(), kperm.end(), rng);
        known_ids.assign(kperm.begin(), kperm.begin() + known_count);
        if (same_source) {
            unknown_ids.assign(kperm.begin() + known_count,
                               kperm.begin() + known_count + unknown_count);
        } else {
            std::vector<int> uperm(uc);
            std::iota(uperm.begin(), uperm.end(), 0);
            std::shuffle(uperm.begin(), uperm.end(), rng);
            unknown_ids.assign(uperm.begin(), uperm.begin() + unknown_count);
        }
    }

    std::vector<int> kmap(kc, -1);
    for (std::size_t i = 0; i < known_ids.size(); ++i) kmap[known_ids[i]] = static_cast<int>(i);
    std::vector<int> umap(uc, -1);
    for (std::size_t i = 0; i < unknown_ids.size(); ++i) umap[unknown_ids[i]] = static_cast<int>(i);

    OpenSetSplit split;
    split.known_classes = known_ids;
    split.unknown_classes = unknown_ids;

    auto pick = [&](const ImageDataset& src, const std::vector<int>& map) {
        std::vector<int> idx, labels;
        for (int i = 0; i < src.size(); ++i)
            if (map[src.labels[i]] >= 0) {
                idx.push_back(i);
                labels.push_back(map[src.labels[i]]);
            }
        return subset(src, idx, labels);
    };
    split.train_known = pick(known_train, kmap);
    split.test_known = pick(known_test, kmap);
    split.test_unknown = pick(usrc, umap);
    return split;
}

const std::vector<CorruptionType>& all_corruption_types() {
    static const std::vector<CorruptionType> types = {
        CorruptionType::GaussianNoise, CorruptionType::ShotNoise,  CorruptionType::ImpulseNoise,
        CorruptionType::DefocusBlur,   CorruptionType::Brightness, CorruptionType::Contrast,
        CorruptionType::Pixelate,
    };
    return types;
}

std::string corruption_name(CorruptionType t) {
    switch (t) {
        case CorruptionType::GaussianNoise: return "gaussian-noise";
        case CorruptionType::ShotNoise: return "shot-noise";
        case CorruptionType::ImpulseNoise: return "impulse-noise";
        case CorruptionType::DefocusBlur: return "defocus-blur";
        case CorruptionType::Brightness: return "brightness";
        case CorruptionType::Contrast: return "contrast";
        case CorruptionType::Pixelate: return "pixelate";
    }
    return "?";
}

CorruptionType parse_corruption(const std::string& name) {
    for (CorruptionType t : all_corruption_types())
        if (corruption_name(t) == name) return t;
    throw Error("corrupt: unknown corruption type '" + name + "'");
}

Tensor gaussian_noise(const Tensor& images, double sigma, std::mt19937& rng) {
    Tensor out = images;
    if (sigma == 0) return out;
    std::normal_distribution<double> nd(0.0, sigma);
    for (auto& v : out.data) v = std::min(1.f, std::max(0.f, v + static_cast<float>(nd(rng))));
    return out;
}

Tensor shot_noise(const Tensor& images, double photons, std::mt19937& rng) {
    Tensor out = images;
    for (auto& v : out.data) {
        std::poisson_distribution<int> pd(static_cast<double>(v) * photons);
        v = std::min(1.f, std::max(0.f, static_cast<float>(pd(rng) / photons)));
    }
    return out;
}

Tensor impulse_noise(const Tensor& images, double rate, std::mt19937& rng) {
    Tensor out = images;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : out.data) {
        double r = u(rng);
        if (r < rate / 2) v = 0.f;
        else if (r < rate) v = 1.f;
    }
    return out;
}

Tensor defocus_blur(const Tensor& images, int radius) {
    if (radius <= 0) return images;
    const int k = 2 * radius + 1;
    std::vector<float> kernel(static_cast<std::size_t>(k) * k, 0.f);
    float wsum = 0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) {
                kernel[static_cast<std::size_t>(dy + radius) * k + dx + radius] = 1.f;
                wsum += 1.f;
            }
    for (auto& w : kernel) w /= wsum;

    int N = images.shape[0], C = images.shape[1], H = images.shape[2], W = images.shape[3];
    Tensor out(images.shape);
    for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    float acc = 0;
                    for (int dy = -radius; dy <= radius; ++dy)
                        for (int dx = -radius; dx <= radius; ++dx) {
                            float w = kernel[static_cast<std::size_t>(dy + radius) * k + dx + radius];
                            if (w == 0.f) continue;
                            int sy = std::clamp(y + dy, 0, H - 1);
                            int sx = std::clamp(x + dx, 0, W - 1);
                            acc += w * images.at4(i, c, sy, sx);
                        }
                    out.at4(i, c, y, x) = acc;
                }
    return out;
}

Tensor brightness_shift(const Tensor& images, double delta) {
    Tensor out = images;
    for (auto& v : out.data) v = std::min(1.f, std::max(0.f, v + static_cast<float>(delta)));
    return out;
}

Tensor contrast_scale(const Tensor& images, double factor) {
    int N = images.shape[0];
    const std::size_t stride = images.numel() / N;
    Tensor out = images;
    for (int i = 0; i < N; ++i) {
        double mean = 0;
        for (std::size_t kk = 0; kk < stride; ++kk) mean += images.data[i * stride + kk];
        mean /= static_cast<double>(stride);
        for (std::size_t kk = 0; kk < stride; ++kk) {
            double v = mean + factor * (images.data[i * stride + kk] - mean);
            out.data[i * stride + kk] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
        }
    }
    return out;
}

Tensor pixelate(const Tensor& images, int factor) {
    if (factor <= 1) return images;
    int N = images.shape[0], C = images.shape[1], H = images.shape[2], W = images.shape[3];
    Tensor out(images.shape);
    for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c)
            for (int by = 0; by < H; by += factor)
                for (int bx = 0; bx < W; bx += factor) {
                    int eh = std::min(by + factor, H), ew = std::min(bx + factor, W);
                    float acc = 0;
                    for (int y = by; y < eh; ++y)
                        for (int x = bx; x < ew; ++x) acc += images.at4(i, c, y, x);
                    acc /= static_cast<float>((eh - by) * (ew - bx));
                    for (int y = by; y < eh; ++y)
                        for (int x = bx; x < ew; ++x) out.at4(i, c, y, x) = acc;
                }
    return out;
}

Tensor corrupt(const Tensor& images, const CorruptionSpec& spec, std::uint32_t seed) {
    if (spec.severity < 1 || spec.severity > 5)
        throw Error("corrupt: severity must be in [1,5], got " + std::to_string(spec.severity));
    const int s = spec.severity - 1;
    std::mt19937 rng(seed);
    // repo-defined severity tables, strictly monotone per type
    static const double kGaussianSigma[5] = {0.04, 0.08, 0.13, 0.19, 0.26};
    static const double kShotPhotons[5] = {500, 250, 120, 60, 25};
    static const double kImpulseRate[5] = {0.02, 0.04, 0.07, 0.11, 0.17};
    static const int kDefocusRadius[5] = {1, 2, 3, 4, 5};
    static const double kBrightnessDelta[5] = {0.06, 0.12, 0.18, 0.26, 0.35};
    static const double kContrastFactor[5] = {0.75, 0.6, 0.45, 0.3, 0.15};
    static const int kPixelateFactor[5] = {2, 3, 4, 6, 8};
    switch (spec.type) {
        case CorruptionType::GaussianNoise: return gaussian_noise(images, kGaussianSigma[s], rng);
        case CorruptionType::ShotNoise: return shot_noise(images, kShotPhotons[s], rng);
        case CorruptionType::ImpulseNoise: return impulse_noise(images, kImpulseRate[s], rng);
        case CorruptionType::DefocusBlur: return defocus_blur(images, kDefocusRadius[s]);
        case CorruptionType::Brightness: return brightness_shift(images, kBrightnessDelta[s]);
        case CorruptionType::Contrast: return contrast_scale(images, kContrastFactor[s]);
        case CorruptionType::Pixelate: return pixelate(images, kPixelateFactor[s]);
    }
    throw Error("corrupt: unknown corruption type");
}

}  // namespace gradmix
