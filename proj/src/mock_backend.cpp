#include "latentdiff/mock_backend.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "latentdiff/error.hpp"
#include "latentdiff/hash.hpp"

namespace latentdiff {

namespace {

std::vector<float> draw(SplitMix64& rng, std::size_t n, double scale = 1.0) {
    std::vector<float> out(n);
    for (float& v : out) v = static_cast<float>(rng.next_signed_unit() * scale);
    return out;
}

template <std::size_t N>
void fill(std::array<double, N>& dst, SplitMix64& rng, double scale) {
    for (double& v : dst) v = rng.next_signed_unit() * scale;
}

void require_latent(const LatentTensor& latent) {
    const Shape expected{MockBackend::kChannels, MockBackend::kHeight, MockBackend::kWidth};
    if (latent.shape() != expected) {
        throw Error(ErrorCode::ShapeMismatch,
                    "mock latent must be " + shape_to_string(expected) + ", got " + shape_to_string(latent.shape()));
    }
}

}  // namespace

MockBackend::MockBackend() {
    const Shape latent{kChannels, kHeight, kWidth};
    topology_.latent_shape = latent;
    topology_.embedding_shape = {kTokens, kEmbedDim};
    topology_.cross_attention_blocks = kBlocks;
    topology_.injection_layer_shapes.assign(kLayers, latent);

    SplitMix64 rng(kNetworkSeed);
    for (BlockWeights& w : blocks_) {
        fill(w.query, rng, 1.0 / std::sqrt(double(kChannels)));
        fill(w.key, rng, 2.0 / std::sqrt(double(kEmbedDim)));
        fill(w.value, rng, 1.0 / std::sqrt(double(kEmbedDim)));
        fill(w.output, rng, 1.0 / std::sqrt(double(kHeadDim)));
    }
}

LatentTensor MockBackend::initial_latent(std::uint64_t seed) const {
    SplitMix64 rng(seed);
    return LatentTensor(topology_.latent_shape, draw(rng, kChannels * kPositions));
}

PromptEmbedding MockBackend::encode_prompt(std::string_view text) const {
    if (text.empty()) throw Error(ErrorCode::EmptyPrompt, "prompt text is empty");
    SplitMix64 rng(fnv1a64(text));
    return PromptEmbedding(topology_.embedding_shape, draw(rng, kTokens * kEmbedDim));
}

std::uint64_t MockBackend::control_layer_seed(std::string_view control_ref, std::size_t layer) {
    std::byte le[8];
    for (int b = 0; b < 8; ++b) le[b] = std::byte((static_cast<std::uint64_t>(layer) >> (8 * b)) & 0xff);
    return fnv1a64(le, fnv1a64(control_ref));
}

ControlBiasSet MockBackend::encode_control(std::string_view control_ref) const {
    if (control_ref.empty()) throw Error(ErrorCode::EmptyControlRef, "control reference is empty");
    ControlBiasSet set;
    for (std::size_t layer = 0; layer < kLayers; ++layer) {
        SplitMix64 rng(control_layer_seed(control_ref, layer));
        const Shape& shape = topology_.injection_layer_shapes[layer];
        set.biases.emplace_back(shape, draw(rng, element_count(shape), kBiasScale));
    }
    return set;
}

LatentTensor MockBackend::attend(const std::vector<double>& hidden, const BlockWeights& w,
                                 const PromptEmbedding& embedding) const {
    if (embedding.shape() != topology_.embedding_shape) {
        throw Error(ErrorCode::ShapeMismatch, "embedding must be " + shape_to_string(topology_.embedding_shape));
    }
    std::array<double, kTokens * kHeadDim> keys{};
    std::array<double, kTokens * kHeadDim> values{};
    for (std::size_t tok = 0; tok < kTokens; ++tok) {
        for (std::size_t j = 0; j < kHeadDim; ++j) {
            double k = 0.0, v = 0.0;
            for (std::size_t e = 0; e < kEmbedDim; ++e) {
                const double x = embedding[tok * kEmbedDim + e];
                k += x * w.key[e * kHeadDim + j];
                v += x * w.value[e * kHeadDim + j];
            }
            keys[tok * kHeadDim + j] = k;
            values[tok * kHeadDim + j] = v;
        }
    }

    const double inv_sqrt_d = 1.0 / std::sqrt(double(kHeadDim));
    std::vector<float> out(kPositions * kChannels);
    for (std::size_t p = 0; p < kPositions; ++p) {
        std::array<double, kHeadDim> query{};
        for (std::size_t j = 0; j < kHeadDim; ++j) {
            for (std::size_t c = 0; c < kChannels; ++c) query[j] += hidden[p * kChannels + c] * w.query[c * kHeadDim + j];
        }
        std::array<double, kTokens> scores{};
        double peak = -INFINITY;
        for (std::size_t tok = 0; tok < kTokens; ++tok) {
            double s = 0.0;
            for (std::size_t j = 0; j < kHeadDim; ++j) s += query[j] * keys[tok * kHeadDim + j];
            scores[tok] = s * inv_sqrt_d;
            peak = std::max(peak, scores[tok]);
        }
        double total = 0.0;
        for (double& s : scores) {
            s = std::exp(s - peak);
            total += s;
        }
        std::array<double, kHeadDim> mixed{};
        for (std::size_t tok = 0; tok < kTokens; ++tok) {
            const double weight = scores[tok] / total;
            for (std::size_t j = 0; j < kHeadDim; ++j) mixed[j] += weight * values[tok * kHeadDim + j];
        }
        for (std::size_t c = 0; c < kChannels; ++c) {
            double o = 0.0;
            for (std::size_t j = 0; j < kHeadDim; ++j) o += mixed[j] * w.output[j * kChannels + c];
            out[p * kChannels + c] = static_cast<float>(o);
        }
    }
    return LatentTensor(Shape{kPositions, kChannels}, std::move(out));
}

LatentTensor MockBackend::denoise_step(const LatentTensor& latent, int t, const AttentionInputs& attention,
                                       const ControlBiasSet* merged_bias) const {
    require_latent(latent);
    if (t < 0) throw Error(ErrorCode::StepOutOfRange, "negative step index");
    if (attention.embeddings.empty()) throw Error(ErrorCode::ArityMismatch, "no prompt embeddings supplied");
    if (merged_bias && merged_bias->biases.size() != kLayers) {
        throw Error(ErrorCode::LayerCountMismatch, "mock backend expects 3 bias layers");
    }

    // hidden is [position][channel]; the latent is [channel][position].
    std::vector<double> hidden(kPositions * kChannels);
    for (std::size_t c = 0; c < kChannels; ++c) {
        for (std::size_t p = 0; p < kPositions; ++p) hidden[p * kChannels + c] = latent[c * kPositions + p];
    }

    const Shape attn_shape{kPositions, kChannels};
    for (std::size_t block = 0; block < kBlocks; ++block) {
        std::vector<LatentTensor> per_prompt;
        per_prompt.reserve(attention.embeddings.size());
        for (const PromptEmbedding& e : attention.embeddings) per_prompt.push_back(attend(hidden, blocks_[block], e));

        LatentTensor attn = attention.combine ? attention.combine(block, std::move(per_prompt))
                                              : std::move(per_prompt.front());
        if (attn.shape() != attn_shape) {
            throw Error(ErrorCode::ShapeMismatch, "concept operator changed the attention result shape");
        }

        const LatentTensor* bias = nullptr;
        if (merged_bias) {
            bias = &merged_bias->biases[block];
            if (bias->shape() != topology_.injection_layer_shapes[block]) {
                throw Error(ErrorCode::ShapeMismatch, "bias layer " + std::to_string(block) + " has wrong shape");
            }
        }
        for (std::size_t p = 0; p < kPositions; ++p) {
            for (std::size_t c = 0; c < kChannels; ++c) {
                double v = std::tanh(hidden[p * kChannels + c] + attn[p * kChannels + c]);
                if (bias) v += (*bias)[c * kPositions + p];
                hidden[p * kChannels + c] = v;
            }
        }
    }

    std::vector<float> next(kChannels * kPositions);
    for (std::size_t c = 0; c < kChannels; ++c) {
        for (std::size_t p = 0; p < kPositions; ++p) {
            const double x = latent[c * kPositions + p];
            next[c * kPositions + p] = static_cast<float>(x + kStepRate * (hidden[p * kChannels + c] - x));
        }
    }
    return LatentTensor(topology_.latent_shape, std::move(next));
}

PreviewImage MockBackend::decode_preview(const LatentTensor& latent) const {
    require_latent(latent);
    std::array<double, kPositions> means{};
    for (std::size_t p = 0; p < kPositions; ++p) {
        for (std::size_t c = 0; c < kChannels; ++c) means[p] += latent[c * kPositions + p];
        means[p] /= double(kChannels);
    }
    const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
    const double range = *hi - *lo;

    std::array<std::uint8_t, kPositions> cells{};
    for (std::size_t p = 0; p < kPositions; ++p) {
        // Degenerate range: uniform mid-gray.
        cells[p] = range > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * (means[p] - *lo) / range)) : 128;
    }

    PreviewImage img;
    img.width = kWidth * kPreviewScale;
    img.height = kHeight * kPreviewScale;
    img.pixels.resize(img.width * img.height);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            img.pixels[y * img.width + x] = cells[(y / kPreviewScale) * kWidth + x / kPreviewScale];
        }
    }
    return img;
}

LatentTensor MockBackend::reference_generate(std::string_view prompt, std::span<const std::string> controls,
                                             std::uint64_t seed, int steps) const {
    const PromptEmbedding embedding = encode_prompt(prompt);
    std::optional<ControlBiasSet> bias;
    for (const std::string& ref : controls) {
        ControlBiasSet set = encode_control(ref);
        if (!bias) {
            bias = std::move(set);
            continue;
        }
        for (std::size_t layer = 0; layer < kLayers; ++layer) {
            std::vector<float> sum(bias->biases[layer].data().begin(), bias->biases[layer].data().end());
            for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += set.biases[layer][i];
            bias->biases[layer] = LatentTensor(bias->biases[layer].shape(), std::move(sum));
        }
    }
    LatentTensor latent = initial_latent(seed);
    const AttentionInputs attention{std::span<const PromptEmbedding>(&embedding, 1), {}};
    for (int t = 0; t < steps; ++t) latent = denoise_step(latent, t, attention, bias ? &*bias : nullptr);
    return latent;
}

std::string PreviewImage::to_pgm() const {
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
    return out;
}

std::shared_ptr<const Backend> make_backend(std::string_view backend_id) {
    if (backend_id == MockBackend::kId) {
        static const auto mock = std::make_shared<const MockBackend>();
        return mock;
    }
    throw Error(ErrorCode::BackendUnavailable, "backend '" + std::string(backend_id) + "' is not available");
}

}  // namespace latentdiff
