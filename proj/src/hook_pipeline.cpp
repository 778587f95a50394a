#include "latentdiff/hook_pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "latentdiff/error.hpp"
#include "latentdiff/job_io.hpp"
#include "latentdiff/tensor_io.hpp"

namespace latentdiff {

std::string_view to_string(SiteKind kind) {
    switch (kind) {
        case SiteKind::concept_query: return "concept_query";
        case SiteKind::shape_bias: return "shape_bias";
        case SiteKind::feature_embedding: return "feature_embedding";
    }
    return "concept_query";
}

std::string_view to_string(Mode mode) { return mode == Mode::query_wise ? "query_wise" : "feature_wise"; }

Mode mode_from_string(std::string_view name) {
    if (name == "query_wise") return Mode::query_wise;
    if (name == "feature_wise") return Mode::feature_wise;
    throw Error(ErrorCode::ValidationError,
                "unknown mode '" + std::string(name) + "' (allowed: query_wise, feature_wise)", "mode");
}

// --- operations at the hook sites -------------------------------------------

LatentTensor apply_concept_operation(std::span<const LatentTensor> query_results, const OperatorSpec& spec,
                                     std::size_t step) {
    return apply_operator(spec, query_results, step);
}

ControlBiasSet apply_shape_operation(std::span<const ControlBiasSet> bias_sets, const OperatorSpec& spec,
                                     std::size_t step) {
    if (bias_sets.empty()) throw Error(ErrorCode::ArityMismatch, "no bias sets to combine");
    const std::size_t layers = bias_sets.front().biases.size();
    for (const ControlBiasSet& set : bias_sets) {
        if (set.biases.size() != layers) {
            throw Error(ErrorCode::LayerCountMismatch, "bias sets disagree on layer count");
        }
    }
    ControlBiasSet merged;
    merged.biases.reserve(layers);
    std::vector<LatentTensor> operands;
    for (std::size_t layer = 0; layer < layers; ++layer) {
        operands.clear();
        for (const ControlBiasSet& set : bias_sets) operands.push_back(set.biases[layer]);
        merged.biases.push_back(apply_operator(spec, operands, step));
    }
    return merged;
}

PromptEmbedding apply_feature_wise(std::span<const PromptEmbedding> embeddings, const OperatorSpec& spec,
                                   std::size_t step) {
    return apply_operator(spec, embeddings, step);
}

namespace {

LatentTensor sum_layer(std::span<const ControlBiasSet> sets, std::size_t layer) {
    const LatentTensor& first = sets.front().biases[layer];
    if (sets.size() == 1) return first;
    std::vector<float> acc(first.data().begin(), first.data().end());
    for (std::size_t k = 1; k < sets.size(); ++k) {
        const LatentTensor& b = sets[k].biases[layer];
        if (b.shape() != first.shape()) throw Error(ErrorCode::ShapeMismatch, "bias layer shapes differ");
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += b[i];
    }
    return LatentTensor(first.shape(), std::move(acc));
}

}  // namespace

ControlBiasSet sum_bias_sets(std::span<const ControlBiasSet> bias_sets) {
    if (bias_sets.empty()) throw Error(ErrorCode::ArityMismatch, "no bias sets to sum");
    const std::size_t layers = bias_sets.front().biases.size();
    for (const ControlBiasSet& set : bias_sets) {
        if (set.biases.size() != layers) throw Error(ErrorCode::LayerCountMismatch, "bias sets disagree on layer count");
    }
    ControlBiasSet out;
    for (std::size_t layer = 0; layer < layers; ++layer) out.biases.push_back(sum_layer(bias_sets, layer));
    return out;
}

// --- Pipeline ----------------------------------------------------------------

Pipeline::Pipeline(std::shared_ptr<const Backend> backend, std::size_t prompt_count, std::size_t control_count,
                   Mode mode)
    : backend_(std::move(backend)), prompt_count_(prompt_count), control_count_(control_count), mode_(mode) {
    if (!backend_) throw Error(ErrorCode::BackendUnavailable, "null backend");
    if (prompt_count_ == 0) throw Error(ErrorCode::ArityMismatch, "at least one prompt is required", "prompts");
}

Pipeline Pipeline::register_hook(const HookRegistration& reg) const {
    const Topology& topo = backend_->topology();
    const auto& block = reg.site.block_index;
    switch (reg.site.kind) {
        case SiteKind::concept_query:
            if (mode_ != Mode::query_wise) {
                throw Error(ErrorCode::ValidationError, "feature_wise mode forbids concept_query registrations");
            }
            if (block && *block >= topo.cross_attention_blocks) {
                throw Error(ErrorCode::UnknownSite,
                            "cross-attention block " + std::to_string(*block) + " does not exist (backend has " +
                                std::to_string(topo.cross_attention_blocks) + ")",
                            "block");
            }
            reg.spec.validate(prompt_count_);
            break;
        case SiteKind::feature_embedding:
            if (mode_ != Mode::feature_wise) {
                throw Error(ErrorCode::ValidationError, "feature_embedding sites require feature_wise mode");
            }
            if (block) throw Error(ErrorCode::UnknownSite, "the embedding stage has no blocks", "block");
            reg.spec.validate(prompt_count_);
            break;
        case SiteKind::shape_bias:
            if (block && *block >= topo.injection_layers()) {
                throw Error(ErrorCode::UnknownSite,
                            "injection layer " + std::to_string(*block) + " does not exist (backend has " +
                                std::to_string(topo.injection_layers()) + ")",
                            "block");
            }
            reg.spec.validate(control_count_);
            break;
    }
    Pipeline next = *this;
    auto same_site = [&](const HookRegistration& r) { return r.site == reg.site; };
    next.registrations_.erase(std::remove_if(next.registrations_.begin(), next.registrations_.end(), same_site),
                              next.registrations_.end());
    next.registrations_.push_back(reg);
    return next;
}

const OperatorSpec* Pipeline::lookup(SiteKind kind, std::size_t index) const {
    const OperatorSpec* fallback = nullptr;
    for (const HookRegistration& r : registrations_) {
        if (r.site.kind != kind) continue;
        if (!r.site.block_index) fallback = &r.spec;
        else if (*r.site.block_index == index) return &r.spec;
    }
    return fallback;
}

const OperatorSpec* Pipeline::concept_operator(std::size_t block) const {
    return lookup(SiteKind::concept_query, block);
}

const OperatorSpec* Pipeline::shape_operator(std::size_t layer) const {
    return control_count_ == 0 ? nullptr : lookup(SiteKind::shape_bias, layer);
}

const OperatorSpec* Pipeline::feature_operator() const { return lookup(SiteKind::feature_embedding, 0); }

HookCounters Pipeline::predict_counters(int steps) const {
    const Topology& topo = backend_->topology();
    HookCounters c;
    const auto n = static_cast<std::uint64_t>(std::max(steps, 0));
    for (std::size_t b = 0; b < topo.cross_attention_blocks; ++b) {
        if (concept_operator(b)) c.concept_query += n;
    }
    for (std::size_t l = 0; l < topo.injection_layers(); ++l) {
        if (shape_operator(l)) c.shape_bias += n;
    }
    if (feature_operator()) c.feature_embedding = n;
    return c;
}

Pipeline::RunOutput Pipeline::run(std::span<const std::string> prompts, std::span<const std::string> controls,
                                  std::uint64_t seed, int steps) const {
    if (prompts.size() != prompt_count_) {
        throw Error(ErrorCode::ArityMismatch, "pipeline bound to " + std::to_string(prompt_count_) + " prompts",
                    "prompts");
    }
    if (controls.size() != control_count_) {
        throw Error(ErrorCode::ArityMismatch, "pipeline bound to " + std::to_string(control_count_) + " controls",
                    "controls");
    }
    const Backend& backend = *backend_;
    const Topology& topo = backend.topology();

    // Embeddings and control biases are step-invariant: encode once.
    std::vector<PromptEmbedding> embeddings;
    embeddings.reserve(prompts.size());
    for (const std::string& p : prompts) embeddings.push_back(backend.encode_prompt(p));
    std::vector<ControlBiasSet> control_sets;
    control_sets.reserve(controls.size());
    for (const std::string& c : controls) {
        ControlBiasSet set = backend.encode_control(c);
        if (set.biases.size() != topo.injection_layers()) {
            throw Error(ErrorCode::LayerCountMismatch, "control bias set does not match backend layer count");
        }
        control_sets.push_back(std::move(set));
    }

    HookCounters counters;
    LatentTensor latent = backend.initial_latent(seed);
    const OperatorSpec* feature_op = mode_ == Mode::feature_wise ? feature_operator() : nullptr;

    std::vector<LatentTensor> layer_operands;
    for (int t = 0; t < steps; ++t) {
        const auto step = static_cast<std::size_t>(t);

        std::optional<ControlBiasSet> merged;
        if (!control_sets.empty()) {
            merged.emplace();
            for (std::size_t layer = 0; layer < topo.injection_layers(); ++layer) {
                if (const OperatorSpec* op = shape_operator(layer)) {
                    layer_operands.clear();
                    for (const ControlBiasSet& set : control_sets) layer_operands.push_back(set.biases[layer]);
                    merged->biases.push_back(apply_operator(*op, layer_operands, step));
                    ++counters.shape_bias;
                } else {
                    merged->biases.push_back(sum_layer(control_sets, layer));
                }
            }
        }

        std::optional<PromptEmbedding> merged_embedding;
        AttentionInputs attention;
        if (feature_op) {
            merged_embedding = apply_feature_wise(embeddings, *feature_op, step);
            ++counters.feature_embedding;
            attention.embeddings = std::span<const PromptEmbedding>(&*merged_embedding, 1);
        } else {
            attention.embeddings = embeddings;
            if (mode_ == Mode::query_wise) {
                attention.combine = [&](std::size_t block, std::vector<LatentTensor> per_prompt) {
                    if (const OperatorSpec* op = concept_operator(block)) {
                        ++counters.concept_query;
                        return apply_concept_operation(per_prompt, *op, step);
                    }
                    return std::move(per_prompt.front());
                };
            }
        }
        latent = backend.denoise_step(latent, t, attention, merged ? &*merged : nullptr);
    }
    return RunOutput{std::move(latent), counters};
}

// --- jobs --------------------------------------------------------------------

namespace {

void validate_registration(const HookRegistration& reg, std::size_t inputs, std::size_t sites, int steps,
                           double cap, const char* field) {
    if (reg.site.block_index && *reg.site.block_index >= sites) {
        throw Error(ErrorCode::UnknownSite,
                    "index " + std::to_string(*reg.site.block_index) + " out of range (" + std::to_string(sites) +
                        " sites)",
                    std::string(field) + ".block");
    }
    try {
        reg.spec.validate(inputs, static_cast<std::size_t>(steps));
    } catch (const Error& e) {
        throw e.with_field_prefix(field);
    }
    if (reg.spec.max_abs_weight() > cap) {
        throw Error(ErrorCode::ExtrapolationCap,
                    "|weight| " + std::to_string(reg.spec.max_abs_weight()) + " exceeds cap " + std::to_string(cap),
                    std::string(field) + ".weights");
    }
}

}  // namespace

void validate_job(const GenerationJob& job, const Topology& topology) {
    if (job.steps < 1) throw Error(ErrorCode::ValidationError, "steps must be a positive integer", "steps");
    if (job.prompts.empty()) throw Error(ErrorCode::ValidationError, "at least one prompt is required", "prompts");
    for (std::size_t i = 0; i < job.prompts.size(); ++i) {
        if (job.prompts[i].empty()) {
            throw Error(ErrorCode::EmptyPrompt, "prompt is empty", "prompts[" + std::to_string(i) + "]");
        }
    }
    for (std::size_t i = 0; i < job.controls.size(); ++i) {
        if (job.controls[i].empty()) {
            throw Error(ErrorCode::EmptyControlRef, "control reference is empty", "controls[" + std::to_string(i) + "]");
        }
    }
    if (!std::isfinite(job.max_abs_weight) || job.max_abs_weight <= 0.0) {
        throw Error(ErrorCode::ValidationError, "max_abs_weight must be positive", "max_abs_weight");
    }

    if (job.concept_registration) {
        const HookRegistration& reg = *job.concept_registration;
        const SiteKind expected = job.mode == Mode::query_wise ? SiteKind::concept_query : SiteKind::feature_embedding;
        if (reg.site.kind != expected) {
            throw Error(ErrorCode::ValidationError,
                        job.mode == Mode::feature_wise ? "feature_wise mode forbids concept_query registrations"
                                                       : "query_wise mode attaches the concept operator to "
                                                         "concept_query sites",
                        "concept_op");
        }
        const std::size_t sites = expected == SiteKind::concept_query ? topology.cross_attention_blocks : 1;
        if (expected == SiteKind::feature_embedding && reg.site.block_index) {
            throw Error(ErrorCode::UnknownSite, "the embedding stage has no blocks", "concept_op.block");
        }
        validate_registration(reg, job.prompts.size(), sites, job.steps, job.max_abs_weight, "concept_op");
    } else if (job.prompts.size() > 1) {
        throw Error(ErrorCode::ValidationError, "multiple prompts require a concept operator", "concept_op");
    }

    if (job.shape_registration) {
        const HookRegistration& reg = *job.shape_registration;
        if (reg.site.kind != SiteKind::shape_bias) {
            throw Error(ErrorCode::ValidationError, "shape operator must attach to shape_bias sites", "shape_op");
        }
        validate_registration(reg, job.controls.size(), topology.injection_layers(), job.steps, job.max_abs_weight,
                              "shape_op");
    }
}

Pipeline build_pipeline(std::shared_ptr<const Backend> backend, const GenerationJob& job) {
    Pipeline pipeline(std::move(backend), job.prompts.size(), job.controls.size(), job.mode);
    if (job.concept_registration) pipeline = pipeline.register_hook(*job.concept_registration);
    if (job.shape_registration) pipeline = pipeline.register_hook(*job.shape_registration);
    return pipeline;
}

GenerationResult run_generation(std::shared_ptr<const Backend> backend, const GenerationJob& job) {
    if (!backend) throw Error(ErrorCode::BackendUnavailable, "no backend");
    if (job.backend_id != backend->id()) {
        throw Error(ErrorCode::ValidationError,
                    "job targets '" + job.backend_id + "' but backend is '" + std::string(backend->id()) + "'",
                    "backend");
    }
    validate_job(job, backend->topology());
    const auto start = std::chrono::steady_clock::now();
    const Pipeline pipeline = build_pipeline(backend, job);
    Pipeline::RunOutput out = pipeline.run(job.prompts, job.controls, job.seed, job.steps);
    PreviewImage preview = backend->decode_preview(out.final_latent);
    const auto stop = std::chrono::steady_clock::now();

    const std::uint64_t latent_digest = out.final_latent.digest();
    return GenerationResult{std::move(out.final_latent),
                            std::move(preview),
                            {},
                            out.counters,
                            job_digest(job),
                            latent_digest,
                            std::chrono::duration<double, std::milli>(stop - start).count()};
}

GenerationResult run_generation(const GenerationJob& job) { return run_generation(make_backend(job.backend_id), job); }

void write_result_dir(const std::filesystem::path& dir, const GenerationJob& job, GenerationResult& result) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
    write_ltt(dir / "final.ltt", result.final_latent);
    write_file(dir / "preview.ppm", result.preview.to_pgm());
    result.preview_path = (dir / "preview.ppm").string();
    write_file(dir / "result.json", result_to_json(result).dump(2) + "\n");
    write_file(dir / "job.json", job_to_json(job).dump(2) + "\n");
}

}  // namespace latentdiff
