#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latentdiff/tensor.hpp"

namespace latentdiff {

/// Prompt embedding, shape [tokens, dim].
using PromptEmbedding = LatentTensor;

/// One additive bias per control-injection layer.
struct ControlBiasSet {
    std::vector<LatentTensor> biases;

    friend bool operator==(const ControlBiasSet&, const ControlBiasSet&) = default;
};

struct Topology {
    Shape latent_shape;
    Shape embedding_shape;
    std::size_t cross_attention_blocks = 0;
    std::vector<Shape> injection_layer_shapes;

    std::size_t injection_layers() const noexcept { return injection_layer_shapes.size(); }
};

/// 8-bit grayscale image serialized as binary netpbm P5.
struct PreviewImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, width*height

    std::string to_pgm() const;
    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

/// Receives the per-prompt attention results of cross-attention block
/// `block` and returns the single tensor that replaces the block output.
using ConceptCombiner = std::function<LatentTensor(std::size_t block, std::vector<LatentTensor> per_prompt)>;

struct AttentionInputs {
    std::span<const PromptEmbedding> embeddings;
    /// Empty: the first embedding's result is used as-is.
    ConceptCombiner combine;
};

/// The contract the hooked denoising loop drives. Implementations are
/// stateless and may be shared across threads.
class Backend {
public:
    virtual ~Backend() = default;

    virtual std::string_view id() const = 0;
    virtual const Topology& topology() const = 0;

    virtual LatentTensor initial_latent(std::uint64_t seed) const = 0;
    virtual PromptEmbedding encode_prompt(std::string_view text) const = 0;
    virtual ControlBiasSet encode_control(std::string_view control_ref) const = 0;

    /// One denoising pass. `merged_bias` may be null when no controls are bound.
    virtual LatentTensor denoise_step(const LatentTensor& latent, int t, const AttentionInputs& attention,
                                      const ControlBiasSet* merged_bias) const = 0;

    virtual PreviewImage decode_preview(const LatentTensor& latent) const = 0;
};

/// Resolves a backend id. Throws BackendUnavailable for unknown or
/// unavailable ids.
std::shared_ptr<const Backend> make_backend(std::string_view backend_id);

}  // namespace latentdiff
