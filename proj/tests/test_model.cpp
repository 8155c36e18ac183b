#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>

#include "oracles.hpp"
#include "ypose/model.hpp"
#include "ypose/ops.hpp"

using namespace ypose;

namespace {

// Small-footprint spec used where full-scale builds would be wasteful.
ModelSpec tiny_spec() {
    ModelSpec spec;
    spec.backbone = "efficientnet";
    spec.scaling = {0.25, 0.25, 8, 8};
    spec.refinement = {8, 4, 2};
    spec.heads = {2, 4, 8};
    spec.input_size = 32;
    return spec;
}

Tensor<float> rand_image(int n, int size, std::uint64_t seed) {
    auto vals = oracle::random_vec(static_cast<std::size_t>(n) * 3 * size * size, seed);
    std::vector<float> data(vals.begin(), vals.end());
    return Tensor<float>::from_data({n, 3, size, size}, std::move(data));
}

}  // namespace

TEST_CASE("tiny model forward yields one normalized probability row per head") {
    auto model = Model::build(tiny_spec(), 7);
    auto probs = model.forward(rand_image(2, 32, 3), /*training=*/false);
    REQUIRE(probs.size() == 3);
    const std::vector<int> classes{2, 4, 8};
    for (std::size_t h = 0; h < probs.size(); ++h) {
        REQUIRE(probs[h].shape() == std::vector<int>{2, classes[h]});
        for (int n = 0; n < 2; ++n) {
            double sum = 0.0;
            for (int c = 0; c < classes[h]; ++c) {
                const float p = probs[h].at({n, c});
                CHECK(p > 0.0f);
                sum += p;
            }
            CHECK(std::abs(sum - 1.0) < 1e-5);
        }
    }
}

TEST_CASE("b0 bare spec: 1280 feature channels and 4.11 M parameters") {
    ModelSpec spec;
    spec.scaling = {1.0, 1.0, 8, 8};
    spec.refinement.num_units = 0;
    spec.heads = {82};
    auto model = Model::build(spec, 1);
    CHECK(model.feature_channels() == 1280);
    const auto params = count_params(model);
    CHECK(std::abs(static_cast<double>(params) / 4.11e6 - 1.0) < 0.02);
    // head classifier: exact fully-connected accounting
    auto rows = profile(model, 224);
    REQUIRE(rows.back().name == "heads.0");
    CHECK(rows.back().params == 1280u * 82 + 82);
    CHECK(rows.back().macs == 1280u * 82);
    // per-layer table sums to the totals
    std::size_t psum = 0, msum = 0;
    for (const auto& r : rows) {
        psum += r.params;
        msum += r.macs;
    }
    CHECK(psum == params);
    CHECK(msum == count_macs(model, 224));
}

TEST_CASE("profile follows the conv MAC convention Cout*Cin*k*k*Ho*Wo") {
    auto model = Model::build(tiny_spec(), 2);
    auto rows = profile(model, 32);
    REQUIRE(rows.front().name == "stem");
    // stem: 3x3 stride-2 conv, 3 -> stem_filters, output 16x16
    CHECK(rows.front().macs ==
          static_cast<std::size_t>(model.stem_filters()) * 3 * 9 * 16 * 16);
    auto csv = profile_csv(rows);
    CHECK(csv.rfind("layer_name,params,macs\n", 0) == 0);
}

TEST_CASE("builds are seed-deterministic, values do not change counts") {
    auto a = Model::build(tiny_spec(), 42);
    auto b = Model::build(tiny_spec(), 42);
    auto c = Model::build(tiny_spec(), 43);
    const auto& ea = a.params().entries();
    const auto& eb = b.params().entries();
    REQUIRE(ea.size() == eb.size());
    bool any_diff_from_c = false;
    for (std::size_t i = 0; i < ea.size(); ++i) {
        REQUIRE(ea[i].name == eb[i].name);
        const auto da = ea[i].tensor.data();
        const auto db = eb[i].tensor.data();
        REQUIRE(da.size() == db.size());
        for (std::size_t j = 0; j < da.size(); ++j) CHECK(da[j] == db[j]);
        const auto dc = c.params().entries()[i].tensor.data();
        for (std::size_t j = 0; j < da.size(); ++j) any_diff_from_c |= da[j] != dc[j];
    }
    CHECK(any_diff_from_c);
    CHECK(count_params(a) == count_params(c));  // structure-only, not value-dependent
}

TEST_CASE("doubling refinement units strictly increases params and macs") {
    auto spec = tiny_spec();
    spec.refinement.num_units = 4;
    auto m4 = Model::build(spec, 1);
    spec.refinement.num_units = 8;
    auto m8 = Model::build(spec, 1);
    CHECK(count_params(m8) > count_params(m4));
    CHECK(count_macs(m8, 32) > count_macs(m4, 32));
}

TEST_CASE("unknown backbone and invalid specs are rejected") {
    ModelSpec spec = tiny_spec();
    spec.backbone = "resnet";
    CHECK_THROWS_AS(Model::build(spec, 1), std::invalid_argument);
    spec = tiny_spec();
    spec.input_size = 100;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = tiny_spec();
    spec.heads.clear();
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("model spec serialization round-trips") {
    auto spec = tiny_spec();
    spec.scaling.width = 1.4;
    spec.scaling.depth = 1.8;
    auto text = spec.serialize();
    auto back = ModelSpec::deserialize(text);
    CHECK(back.serialize() == text);
    CHECK(back.scaling.width == spec.scaling.width);
    CHECK(back.heads == spec.heads);
    CHECK_THROWS_AS(ModelSpec::deserialize("nonsense"), std::invalid_argument);
}

TEST_CASE("checkpoint round-trip is byte-identical and restores forward bit-exactly") {
    auto model = Model::build(tiny_spec(), 11);
    auto image = rand_image(1, 32, 13);
    // change running stats away from defaults so buffers are exercised
    model.forward(image, /*training=*/true, 99);
    auto before = model.forward(image, false);

    const auto bytes = save_checkpoint(model);
    auto restored = load_checkpoint(bytes);
    const auto bytes2 = save_checkpoint(restored);
    REQUIRE(bytes.size() == bytes2.size());
    CHECK(bytes == bytes2);

    auto after = restored.forward(image, false);
    REQUIRE(after.size() == before.size());
    for (std::size_t h = 0; h < before.size(); ++h) {
        for (std::size_t i = 0; i < before[h].numel(); ++i) {
            CHECK(before[h].data()[i] == after[h].data()[i]);
        }
    }
}

TEST_CASE("checkpoint corruption and mismatch diagnostics") {
    auto model = Model::build(tiny_spec(), 17);
    auto bytes = save_checkpoint(model);

    SUBCASE("truncated stream") {
        std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 7);
        CHECK_THROWS_WITH_AS(load_checkpoint(cut), doctest::Contains("truncated"),
                             std::runtime_error);
    }
    SUBCASE("tampered length field") {
        // first tensor's name length lives right after magic+version+count
        bytes[12] = 0xff;
        bytes[13] = 0xff;
        CHECK_THROWS_AS(load_checkpoint(bytes), std::runtime_error);
    }
    SUBCASE("bad magic") {
        bytes[0] = 'X';
        CHECK_THROWS_WITH_AS(load_checkpoint(bytes), doctest::Contains("magic"),
                             std::runtime_error);
    }
    SUBCASE("unknown version") {
        bytes[4] = 9;
        CHECK_THROWS_WITH_AS(load_checkpoint(bytes), doctest::Contains("version"),
                             std::runtime_error);
    }
    SUBCASE("loading into a mismatched spec names the first bad tensor") {
        auto spec = tiny_spec();
        spec.scaling.width = 0.5;  // wider stem than the saved model
        auto other = Model::build(spec, 1);
        CHECK_THROWS_WITH_AS(load_weights(other, parse_checkpoint(bytes)),
                             doctest::Contains("stem.conv.weight"), std::runtime_error);
    }
}

TEST_CASE("an eval-mode model is shareable across concurrent workers") {
    auto model = Model::build(tiny_spec(), 31);
    auto image = rand_image(1, 32, 37);
    std::vector<float> reference;
    {
        NoGradGuard ng;
        auto probs = model.forward(image, false);
        reference.assign(probs[2].data().begin(), probs[2].data().end());
    }
    std::vector<std::vector<float>> results(4);
    std::vector<std::thread> workers;
    for (int t = 0; t < 4; ++t) {
        workers.emplace_back([&, t] {
            NoGradGuard ng;
            auto probs = model.forward(image, false);
            results[t].assign(probs[2].data().begin(), probs[2].data().end());
        });
    }
    for (auto& w : workers) w.join();
    for (const auto& r : results) {
        REQUIRE(r.size() == reference.size());
        for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i] == reference[i]);
    }
}

TEST_CASE("heatmap handles degenerate maps, stays in range, peaks where injected") {
    SUBCASE("constant feature map becomes all zeros") {
        auto features = Tensor<float>::filled({1, 4, 3, 3}, 5.0f);
        auto heat = heatmap_from_features(features, 24, 24);
        REQUIRE(heat.shape() == std::vector<int>{24, 24});
        for (float v : heat.data()) CHECK(v == 0.0f);
    }
    SUBCASE("single-hot feature peaks at the upsampled location") {
        auto features = Tensor<float>::zeros({1, 2, 4, 4});
        features.set({0, 0, 1, 2}, 8.0f);
        features.set({0, 1, 1, 2}, 8.0f);
        auto heat = heatmap_from_features(features, 32, 32);
        float best = -1.0f;
        int best_y = -1, best_x = -1;
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 32; ++x) {
                if (heat.at({y, x}) > best) {
                    best = heat.at({y, x});
                    best_y = y;
                    best_x = x;
                }
            }
        }
        // cell (1,2) of a 4x4 grid maps to the block around (12, 20) at 32x32;
        // half-pixel sampling means no output pixel hits the exact peak
        CHECK(best > 0.8f);
        CHECK(best_y >= 8);
        CHECK(best_y < 16);
        CHECK(best_x >= 16);
        CHECK(best_x < 24);
        for (float v : heat.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    SUBCASE("activation_map matches the image spatial size") {
        auto model = Model::build(tiny_spec(), 23);
        auto heat = activation_map(model, rand_image(1, 32, 29));
        REQUIRE(heat.shape() == std::vector<int>{32, 32});
        for (float v : heat.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}
