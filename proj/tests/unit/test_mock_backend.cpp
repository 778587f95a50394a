#include <doctest.h>

#include <cmath>

#include "latentdiff/error.hpp"
#include "latentdiff/mock_backend.hpp"

using namespace latentdiff;

// Frozen values printed by tests/support/golden_mock.py, an independent
// Python re-implementation of the backend.

namespace {

const MockBackend& mock() {
    static const MockBackend backend;
    return backend;
}

void check_prefix(const LatentTensor& t, std::initializer_list<double> expected, double tol) {
    std::size_t i = 0;
    for (double v : expected) {
        CHECK(std::abs(t[i] - v) <= tol);
        ++i;
    }
}

}  // namespace

TEST_CASE("topology") {
    const Topology& t = mock().topology();
    CHECK(t.latent_shape == Shape{8, 4, 4});
    CHECK(t.embedding_shape == Shape{4, 16});
    CHECK(t.cross_attention_blocks == 3);
    CHECK(t.injection_layers() == 3);
    CHECK(mock().id() == "mock-v1");
    CHECK(make_backend("mock-v1")->id() == "mock-v1");
    CHECK_THROWS_AS(make_backend("sd-1.5"), Error);
}

TEST_CASE("prompt embeddings match the python oracle") {
    const auto e = mock().encode_prompt("a");
    CHECK(e.shape() == Shape{4, 16});
    check_prefix(e, {-0.256538063287735, 0.9962446093559265, 0.9842130541801453, 0.37188172340393066}, 0.0);
    CHECK(mock().encode_prompt("a") == e);
    CHECK(mock().encode_prompt("b") != e);
}

TEST_CASE("initial latent matches the python oracle") {
    check_prefix(mock().initial_latent(0),
                 {0.7666215896606445, -0.1369440108537674, -0.9471324682235718, 0.9417639374732971}, 0.0);
    CHECK(mock().initial_latent(1) != mock().initial_latent(0));
}

TEST_CASE("control biases") {
    CHECK(MockBackend::control_layer_seed("edge:horse", 1) == 0x567cd49b78f22b1eULL);
    const ControlBiasSet set = mock().encode_control("edge:horse");
    REQUIRE(set.biases.size() == 3);
    for (const auto& b : set.biases) CHECK(b.shape() == Shape{8, 4, 4});
    check_prefix(set.biases[2],
                 {0.056391406804323196, 0.0686076283454895, 0.06944874674081802, -0.08012355864048004}, 0.0);
    CHECK(set.biases[0] != set.biases[1]);
    CHECK_THROWS_AS(mock().encode_control(""), Error);
}

TEST_CASE("reference loop matches the python oracle") {
    check_prefix(mock().reference_generate("a photo of a pelican", {}, 0, 5),
                 {0.6597725749015808, -0.0978199914097786, -0.7530245184898376, 0.792073130607605}, 1e-6);
    const std::vector<std::string> controls{"edge:horse", "pose:rider"};
    check_prefix(mock().reference_generate("a photo of a pelican", controls, 3, 4),
                 {-0.6784515976905823, 0.40741103887557983, 0.24533653259277344, -0.7441129684448242}, 1e-6);
}

TEST_CASE("denoise_step preconditions") {
    const auto e = mock().encode_prompt("x");
    const AttentionInputs in{std::span<const PromptEmbedding>(&e, 1), {}};
    CHECK_THROWS_AS(mock().denoise_step(LatentTensor::zeros({8, 4, 3}), 0, in, nullptr), Error);
    CHECK_THROWS_AS(mock().denoise_step(mock().initial_latent(0), -1, in, nullptr), Error);
    ControlBiasSet short_set{{LatentTensor::zeros({8, 4, 4})}};
    try {
        mock().denoise_step(mock().initial_latent(0), 0, in, &short_set);
        FAIL("expected LayerCountMismatch");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::LayerCountMismatch);
    }
}

TEST_CASE("preview decoding") {
    const PreviewImage img = mock().decode_preview(mock().initial_latent(5));
    CHECK(img.width == 64);
    CHECK(img.height == 64);
    CHECK(img.pixels.size() == 64 * 64);
    // nearest-neighbour blocks
    CHECK(img.at(0, 0) == img.at(15, 15));
    CHECK(img.to_pgm().rfind("P5\n64 64\n255\n", 0) == 0);
    CHECK(img.to_pgm().size() == 13 + 64 * 64);
    std::uint8_t lo = 255, hi = 0;
    for (auto p : img.pixels) {
        lo = std::min(lo, p);
        hi = std::max(hi, p);
    }
    CHECK(lo == 0);
    CHECK(hi == 255);

    const PreviewImage flat = mock().decode_preview(LatentTensor::filled({8, 4, 4}, 0.5f));
    for (auto p : flat.pixels) CHECK(p == 128);
}
