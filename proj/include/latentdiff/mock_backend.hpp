#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latentdiff/backend.hpp"

namespace latentdiff {

/// Deterministic toy diffusion backend registered as "mock-v1".
///
/// Topology: latent [8,4,4], embeddings [4 tokens, 16 dims], three
/// cross-attention blocks and three bias-injection layers of latent shape.
/// Each block projects the 16 spatial positions to queries, attends over the
/// prompt tokens, applies an output projection (the concept hook sees this
/// post-projection result), then h <- tanh(h + attn) + bias[block]. The step
/// update is latent + 0.1 * (h - latent).
///
/// All randomness comes from FNV-1a-64 seeds feeding SplitMix64 streams.
class MockBackend final : public Backend {
public:
    static constexpr std::string_view kId = "mock-v1";
    static constexpr std::size_t kChannels = 8;
    static constexpr std::size_t kHeight = 4;
    static constexpr std::size_t kWidth = 4;
    static constexpr std::size_t kPositions = kHeight * kWidth;
    static constexpr std::size_t kTokens = 4;
    static constexpr std::size_t kEmbedDim = 16;
    static constexpr std::size_t kHeadDim = 8;
    static constexpr std::size_t kBlocks = 3;
    static constexpr std::size_t kLayers = 3;
    static constexpr std::uint64_t kNetworkSeed = 0xD1FF0510ULL;
    static constexpr double kStepRate = 0.1;
    static constexpr double kBiasScale = 0.1;
    static constexpr std::size_t kPreviewScale = 16;

    MockBackend();

    std::string_view id() const override { return kId; }
    const Topology& topology() const override { return topology_; }

    LatentTensor initial_latent(std::uint64_t seed) const override;
    PromptEmbedding encode_prompt(std::string_view text) const override;
    ControlBiasSet encode_control(std::string_view control_ref) const override;
    LatentTensor denoise_step(const LatentTensor& latent, int t, const AttentionInputs& attention,
                              const ControlBiasSet* merged_bias) const override;
    PreviewImage decode_preview(const LatentTensor& latent) const override;

    /// Seed for layer `layer` of a control: FNV-1a-64 over the ref bytes
    /// followed by the layer index as 8 little-endian bytes.
    static std::uint64_t control_layer_seed(std::string_view control_ref, std::size_t layer);

    /// The un-hooked loop: one prompt, controls summed layerwise, no operator
    /// machinery.
    LatentTensor reference_generate(std::string_view prompt, std::span<const std::string> controls,
                                    std::uint64_t seed, int steps) const;

private:
    struct BlockWeights {
        std::array<double, kChannels * kHeadDim> query;     // [channel][head]
        std::array<double, kEmbedDim * kHeadDim> key;       // [embed][head]
        std::array<double, kEmbedDim * kHeadDim> value;     // [embed][head]
        std::array<double, kHeadDim * kChannels> output;    // [head][channel]
    };

    LatentTensor attend(const std::vector<double>& hidden, const BlockWeights& w,
                        const PromptEmbedding& embedding) const;

    Topology topology_;
    std::array<BlockWeights, kBlocks> blocks_;
};

}  // namespace latentdiff
