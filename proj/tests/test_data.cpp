#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "gradmix/data.hpp"

using namespace gradmix;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("gradmix_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<BlobClassSpec> three_blobs() {
    BlobClassSpec a, b, c;
    a.color = {1.f, 0.f, 0.f};
    a.center_row = 0.3f;
    a.center_col = 0.3f;
    b.color = {0.f, 1.f, 0.f};
    b.center_row = 0.7f;
    b.center_col = 0.3f;
    c.color = {0.f, 0.f, 1.f};
    c.center_row = 0.5f;
    c.center_col = 0.7f;
    return {a, b, c};
}

std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("synthetic blobs: deterministic, in range, byte-quantized, separable") {
    ImageDataset a = synth_blobs(three_blobs(), 16, 8, 7);
    ImageDataset b = synth_blobs(three_blobs(), 16, 8, 7);
    ImageDataset c = synth_blobs(three_blobs(), 16, 8, 8);
    CHECK(a.size() == 24);
    CHECK(a.class_count() == 3);
    CHECK(a.images.shape == std::vector<int>{24, 3, 16, 16});
    CHECK(a.images.data == b.images.data);
    CHECK(a.labels == b.labels);
    CHECK(a.images.data != c.images.data);
    for (float v : a.images.data) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
        // byte grid: v * 255 is an integer
        CHECK(std::round(v * 255.f) == doctest::Approx(v * 255.f).epsilon(1e-4));
    }

    SUBCASE("classes separate with a trivial color-channel classifier") {
        int correct = 0;
        for (int i = 0; i < a.size(); ++i) {
            double sums[3] = {0, 0, 0};
            for (int ch = 0; ch < 3; ++ch)
                for (int p = 0; p < 16 * 16; ++p)
                    sums[ch] += a.images.data[(static_cast<std::size_t>(i) * 3 + ch) * 256 + p];
            int pred = 0;
            for (int ch = 1; ch < 3; ++ch)
                if (sums[ch] > sums[pred]) pred = ch;
            if (pred == a.labels[i]) ++correct;
        }
        CHECK(correct == a.size());  // channel dominance matches the class color
    }
}

TEST_CASE("idx round-trip is bit-exact and rejects bad magic") {
    TempDir tmp;
    ImageDataset color = synth_blobs(three_blobs(), 8, 4, 3);
    // the idx format stores single-channel images; collapse to grayscale
    // on the byte grid so the round-trip can be bit-exact
    ImageDataset ds;
    ds.labels = color.labels;
    ds.images = Tensor({color.size(), 1, 8, 8});
    for (int i = 0; i < color.size(); ++i)
        for (int p = 0; p < 64; ++p) {
            float m = 0;
            for (int c = 0; c < 3; ++c)
                m += color.images.data[(static_cast<std::size_t>(i) * 3 + c) * 64 + p];
            ds.images.data[static_cast<std::size_t>(i) * 64 + p] =
                std::round(m / 3 * 255.f) / 255.f;
        }
    save_idx(ds, tmp.file("imgs.idx"), tmp.file("lbls.idx"));
    ImageDataset back = load_idx(tmp.file("imgs.idx"), tmp.file("lbls.idx"));
    CHECK(back.images.shape == ds.images.shape);
    CHECK(back.images.data == ds.images.data);
    CHECK(back.labels == ds.labels);

    SUBCASE("second save produces identical bytes") {
        save_idx(back, tmp.file("imgs2.idx"), tmp.file("lbls2.idx"));
        CHECK(read_bytes(tmp.file("imgs2.idx")) == read_bytes(tmp.file("imgs.idx")));
        CHECK(read_bytes(tmp.file("lbls2.idx")) == read_bytes(tmp.file("lbls.idx")));
    }
    SUBCASE("corrupted magic is rejected") {
        auto bytes = read_bytes(tmp.file("imgs.idx"));
        bytes[2] = 0x77;
        std::ofstream(tmp.file("bad.idx"), std::ios::binary)
            .write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        CHECK_THROWS_WITH_AS(load_idx(tmp.file("bad.idx"), tmp.file("lbls.idx")),
                             doctest::Contains("magic"), Error);
    }
    SUBCASE("truncated file is rejected") {
        auto bytes = read_bytes(tmp.file("imgs.idx"));
        bytes.resize(bytes.size() / 2);
        std::ofstream(tmp.file("short.idx"), std::ios::binary)
            .write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        CHECK_THROWS_AS(load_idx(tmp.file("short.idx"), tmp.file("lbls.idx")), Error);
    }
    SUBCASE("missing file error names the path") {
        CHECK_THROWS_WITH_AS(load_idx(tmp.file("absent.idx"), tmp.file("lbls.idx")),
                             doctest::Contains("absent.idx"), Error);
    }
}

TEST_CASE("cifar binary round-trip is bit-exact") {
    TempDir tmp;
    ImageDataset ds = synth_blobs(three_blobs(), 32, 4, 5);
    save_cifar_binary(ds, tmp.file("data.bin"));
    ImageDataset back = load_cifar_binary(tmp.file("data.bin"));
    CHECK(back.images.data == ds.images.data);
    CHECK(back.labels == ds.labels);
    save_cifar_binary(back, tmp.file("data2.bin"));
    CHECK(read_bytes(tmp.file("data2.bin")) == read_bytes(tmp.file("data.bin")));

    SUBCASE("non-32x32 data cannot be written in this format") {
        ImageDataset small = synth_blobs(three_blobs(), 16, 2, 5);
        CHECK_THROWS_AS(save_cifar_binary(small, tmp.file("bad.bin")), Error);
    }
    SUBCASE("trailing partial record is rejected") {
        auto bytes = read_bytes(tmp.file("data.bin"));
        bytes.resize(bytes.size() - 100);
        std::ofstream(tmp.file("trunc.bin"), std::ios::binary)
            .write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        CHECK_THROWS_AS(load_cifar_binary(tmp.file("trunc.bin")), Error);
    }
}

TEST_CASE("open-set splits: disjoint classes, dense relabeling, trial diversity") {
    std::vector<BlobClassSpec> specs;
    for (int i = 0; i < 6; ++i) {
        BlobClassSpec s;
        s.color = {i % 2 ? 1.f : 0.2f, i % 3 ? 0.6f : 0.1f, 0.4f};
        s.center_row = 0.2f + 0.1f * i;
        s.center_col = 0.8f - 0.1f * i;
        specs.push_back(s);
    }
    ImageDataset train = synth_blobs(specs, 8, 6, 11);
    ImageDataset test = synth_blobs(specs, 8, 4, 12);

    OpenSetSplit sp = make_split(train, test, nullptr, 3, 2, 0, 42);
    CHECK(sp.known_classes.size() == 3);
    CHECK(sp.unknown_classes.size() == 2);
    std::set<int> known(sp.known_classes.begin(), sp.known_classes.end());
    for (int u : sp.unknown_classes) CHECK(known.count(u) == 0);

    // relabeled densely: labels are 0..known_count-1
    std::set<int> seen(sp.train_known.labels.begin(), sp.train_known.labels.end());
    CHECK(seen == std::set<int>{0, 1, 2});
    CHECK(sp.train_known.size() == 3 * 6);
    CHECK(sp.test_known.size() == 3 * 4);
    CHECK(sp.test_unknown.size() == 2 * 4);

    SUBCASE("same trial reproduces; different trials differ somewhere") {
        OpenSetSplit again = make_split(train, test, nullptr, 3, 2, 0, 42);
        CHECK(again.known_classes == sp.known_classes);
        CHECK(again.train_known.images.data == sp.train_known.images.data);
        bool any_diff = false;
        for (int t = 1; t < 5; ++t) {
            OpenSetSplit other = make_split(train, test, nullptr, 3, 2, t, 42);
            if (other.known_classes != sp.known_classes ||
                other.unknown_classes != sp.unknown_classes)
                any_diff = true;
        }
        CHECK(any_diff);
    }
    SUBCASE("explicit unknown source keeps all its classes eligible") {
        ImageDataset other = synth_blobs(three_blobs(), 8, 4, 13);
        OpenSetSplit sp2 = make_split(train, test, &other, 4, 2, 1, 7);
        CHECK(sp2.unknown_classes.size() == 2);
        for (int u : sp2.unknown_classes) CHECK(u < 3);
        CHECK(sp2.test_unknown.size() == 2 * 4);
    }
    SUBCASE("impossible requests are rejected") {
        CHECK_THROWS_AS(make_split(train, test, nullptr, 6, 1, 0, 1), Error);
        CHECK_THROWS_AS(make_split(train, test, nullptr, 1, 1, 0, 1), Error);  // < 2 known
        CHECK_THROWS_AS(make_split(train, test, nullptr, 3, 2, 5, 1), Error);  // trial range
        CHECK_THROWS_AS(make_split(train, test, nullptr, 3, 0, 0, 1), Error);  // no unknowns
    }
}

TEST_CASE("corruptions: deterministic, in range, identity-free at severity > 0") {
    ImageDataset ds = synth_blobs(three_blobs(), 16, 4, 17);
    for (CorruptionType t : all_corruption_types()) {
        CorruptionSpec spec{t, 3};
        Tensor a = corrupt(ds.images, spec, 99);
        Tensor b = corrupt(ds.images, spec, 99);
        INFO("corruption ", corruption_name(t));
        CHECK(a.data == b.data);
        CHECK(a.data != ds.images.data);
        for (float v : a.data) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
    }

    SUBCASE("severity grows the mean distortion for the noise family") {
        for (CorruptionType t : {CorruptionType::GaussianNoise, CorruptionType::ShotNoise,
                                 CorruptionType::ImpulseNoise, CorruptionType::Brightness}) {
            double prev = -1;
            for (int sev = 1; sev <= 5; ++sev) {
                Tensor c = corrupt(ds.images, {t, sev}, 5);
                double dist = 0;
                for (std::size_t i = 0; i < c.numel(); ++i)
                    dist += std::abs(c.data[i] - ds.images.data[i]);
                INFO("corruption ", corruption_name(t), " severity ", sev);
                CHECK(dist > prev);
                prev = dist;
            }
        }
    }
    SUBCASE("severity bounds are enforced") {
        CHECK_THROWS_AS(corrupt(ds.images, {CorruptionType::GaussianNoise, 0}, 1), Error);
        CHECK_THROWS_AS(corrupt(ds.images, {CorruptionType::GaussianNoise, 6}, 1), Error);
    }
    SUBCASE("name round-trip") {
        for (CorruptionType t : all_corruption_types())
            CHECK(parse_corruption(corruption_name(t)) == t);
        CHECK_THROWS_AS(parse_corruption("fog"), Error);
        CHECK(all_corruption_types().size() == 7);
    }
}

TEST_CASE("corruption primitives behave as documented") {
    ImageDataset ds = synth_blobs(three_blobs(), 16, 2, 19);

    SUBCASE("brightness shifts the mean by roughly delta (modulo clipping)") {
        Tensor out = brightness_shift(ds.images, 0.1);
        double before = 0, after = 0;
        for (std::size_t i = 0; i < out.numel(); ++i) {
            before += ds.images.data[i];
            after += out.data[i];
        }
        CHECK(after / out.numel() - before / out.numel() ==
              doctest::Approx(0.1).epsilon(0.15));
    }
    SUBCASE("contrast with factor 1 is the identity") {
        Tensor out = contrast_scale(ds.images, 1.0);
        CHECK(out.data == ds.images.data);
    }
    SUBCASE("pixelate with factor 1 is the identity") {
        Tensor out = pixelate(ds.images, 1);
        CHECK(out.data == ds.images.data);
    }
    SUBCASE("pixelate makes each block constant") {
        Tensor out = pixelate(ds.images, 4);
        for (int c = 0; c < 3; ++c)
            for (int by = 0; by < 4; ++by)
                for (int bx = 0; bx < 4; ++bx) {
                    float v0 = out.at4(0, c, by * 4, bx * 4);
                    for (int y = 0; y < 4; ++y)
                        for (int x = 0; x < 4; ++x)
                            CHECK(out.at4(0, c, by * 4 + y, bx * 4 + x) == v0);
                }
    }
    SUBCASE("defocus blur preserves a constant image") {
        Tensor flat({1, 3, 16, 16}, 0.5f);
        Tensor out = defocus_blur(flat, 3);
        for (float v : out.data) CHECK(v == doctest::Approx(0.5f).epsilon(1e-5));
    }
}
