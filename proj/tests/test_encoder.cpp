#include "doctest.h"

#include <cmath>
#include <random>

#include "gradmix/encoder.hpp"

using namespace gradmix;

namespace {

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.input_resolution = 16;
    cfg.stage_widths = {4, 8, 8};
    cfg.blocks_per_stage = 1;
    cfg.embedding_dim = 16;
    return cfg;
}

Tensor random_images(int n, int res, std::uint32_t seed, int channels = 3) {
    std::mt19937 rng(seed);
    return random_uniform<float>({n, channels, res, res}, rng, 0.f, 1.f);
}

}  // namespace

TEST_CASE("encoder produces L2-normalized embeddings of the configured width") {
    EncoderConfig cfg;
    cfg.input_resolution = 32;
    cfg.tap_names = {"conv3_2", "conv4_2", "conv5_2"};
    Encoder enc(cfg, 7);
    Graph g;
    auto bound = enc.bind(g);
    auto fwd = enc.forward(g, bound, random_images(4, 32, 11), /*train=*/false);

    const Tensor& z = g.out(fwd.embeddings);
    CHECK(z.shape == std::vector<int>{4, 128});
    for (int i = 0; i < 4; ++i) {
        double norm = 0;
        for (int d = 0; d < 128; ++d) norm += double(z.at2(i, d)) * z.at2(i, d);
        CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-5);
    }

    SUBCASE("tap spatial resolutions follow the stage downsampling") {
        CHECK(g.out(fwd.taps.at("conv3_2")).shape[2] == 16);
        CHECK(g.out(fwd.taps.at("conv4_2")).shape[2] == 8);
        CHECK(g.out(fwd.taps.at("conv5_2")).shape[2] == 4);
        CHECK(g.out(fwd.taps.at("conv3_2")).shape[1] == 16);  // stage width
    }
}

TEST_CASE("same seed gives identical parameters and outputs; different seed differs") {
    auto cfg = small_config();
    Encoder a(cfg, 3), b(cfg, 3), c(cfg, 4);
    REQUIRE(a.param_count() == b.param_count());
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        CHECK(a.parameters()[i].second.value.data == b.parameters()[i].second.value.data);

    Tensor x = random_images(2, 16, 5);
    Graph ga, gb, gc;
    Tensor za = ga.out(a.forward(ga, a.bind(ga), x, false).embeddings);
    Tensor zb = gb.out(b.forward(gb, b.bind(gb), x, false).embeddings);
    Tensor zc = gc.out(c.forward(gc, c.bind(gc), x, false).embeddings);
    CHECK(za.data == zb.data);
    CHECK(za.data != zc.data);
}

TEST_CASE("eval-mode forward does not mutate batch-norm running statistics") {
    auto cfg = small_config();
    Encoder enc(cfg, 9);
    auto before = enc.bn_states();
    Graph g;
    enc.forward(g, enc.bind(g), random_images(3, 16, 2), /*train=*/false);
    for (const auto& [name, st] : enc.bn_states()) {
        CHECK(st.running_mean.data == before.at(name).running_mean.data);
        CHECK(st.running_var.data == before.at(name).running_var.data);
    }

    SUBCASE("train-mode forward does update them") {
        Graph h;
        enc.forward(h, enc.bind(h), random_images(3, 16, 2), /*train=*/true);
        bool changed = false;
        for (const auto& [name, st] : enc.bn_states())
            if (st.running_mean.data != before.at(name).running_mean.data) changed = true;
        CHECK(changed);
    }

    SUBCASE("train-mode with frozen stats leaves them untouched") {
        Graph h;
        enc.forward(h, enc.bind(h), random_images(3, 16, 2), /*train=*/true,
                    /*update_running_stats=*/false);
        for (const auto& [name, st] : enc.bn_states())
            CHECK(st.running_mean.data == before.at(name).running_mean.data);
    }
}

TEST_CASE("gradient flows to every parameter under a contrastive-style loss") {
    auto cfg = small_config();
    Encoder enc(cfg, 21);
    Tensor x = random_images(4, 16, 8);
    Graph g;
    auto bound = enc.bind(g);
    auto fwd = enc.forward(g, bound, x, true);
    // pull embeddings toward a fixed direction so no gradient vanishes by symmetry
    std::mt19937 rng(3);
    NodeId target = g.value(random_uniform<float>({4, cfg.embedding_dim}, rng, -1.f, 1.f));
    g.backward(g.sum(g.mul(fwd.embeddings, target)));
    enc.zero_grad();
    enc.accumulate_grads(g, bound);
    int touched = 0;
    for (const auto& [name, p] : enc.parameters()) {
        double mag = 0;
        for (float v : p.grad.data) mag += std::abs(v);
        if (mag > 0) ++touched;
    }
    // every parameter should receive gradient (batch-norm betas included)
    CHECK(touched == static_cast<int>(enc.parameters().size()));

    SUBCASE("zero_grad clears all slots") {
        enc.zero_grad();
        for (const auto& [name, p] : enc.parameters())
            for (float v : p.grad.data) CHECK(v == 0.f);
    }
}

TEST_CASE("classifier head produces logits with class_count columns") {
    auto cfg = small_config();
    cfg.classifier_head = true;
    cfg.class_count = 5;
    Encoder enc(cfg, 1);
    Graph g;
    auto fwd = enc.forward(g, enc.bind(g), random_images(3, 16, 4), false);
    CHECK(g.out(fwd.logits).shape == std::vector<int>{3, 5});

    SUBCASE("no head means no logits node") {
        auto cfg2 = small_config();
        Encoder enc2(cfg2, 1);
        Graph h;
        auto f2 = enc2.forward(h, enc2.bind(h), random_images(3, 16, 4), false);
        CHECK(f2.logits == -1);
    }
}

TEST_CASE("encoder configuration errors") {
    auto cfg = small_config();
    cfg.classifier_head = true;
    cfg.class_count = 1;
    CHECK_THROWS_AS(Encoder(cfg, 1), Error);

    auto cfg2 = small_config();
    cfg2.tap_names = {"conv9_9"};
    CHECK_THROWS_WITH_AS(Encoder(cfg2, 1), doctest::Contains("conv9_9"), Error);

    SUBCASE("input shape is validated") {
        auto cfg3 = small_config();
        Encoder enc3(cfg3, 1);
        Graph h;
        CHECK_THROWS_AS(enc3.forward(h, enc3.bind(h), random_images(2, 8, 1), false), Error);
        Graph h2;
        CHECK_THROWS_AS(enc3.forward(h2, enc3.bind(h2), random_images(2, 16, 1, 1), false),
                        Error);
    }
}

TEST_CASE("forward is bit-deterministic across repeated calls") {
    auto cfg = small_config();
    Encoder enc(cfg, 13);
    Tensor x = random_images(2, 16, 17);
    Graph g1, g2;
    Tensor a = g1.out(enc.forward(g1, enc.bind(g1), x, false).embeddings);
    Tensor b = g2.out(enc.forward(g2, enc.bind(g2), x, false).embeddings);
    CHECK(a.data == b.data);
}
