#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latentdiff/backend.hpp"
#include "latentdiff/tensor_ops.hpp"

namespace latentdiff {

enum class SiteKind { concept_query, shape_bias, feature_embedding };
enum class Mode { query_wise, feature_wise };

std::string_view to_string(SiteKind kind);
std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view name);

/// Where an operator is attached. An empty block index addresses every
/// cross-attention block (concept) or injection layer (shape).
struct HookSite {
    SiteKind kind = SiteKind::concept_query;
    std::optional<std::size_t> block_index;

    friend bool operator==(const HookSite&, const HookSite&) = default;
};

struct HookRegistration {
    HookSite site;
    OperatorSpec spec;

    friend bool operator==(const HookRegistration&, const HookRegistration&) = default;
};

struct GenerationJob {
    std::string backend_id = "mock-v1";
    std::uint64_t seed = 0;
    int steps = 5;
    Mode mode = Mode::query_wise;
    std::vector<std::string> prompts;
    std::vector<std::string> controls;
    /// concept_query in query_wise mode, feature_embedding in feature_wise mode.
    std::optional<HookRegistration> concept_registration;
    std::optional<HookRegistration> shape_registration;
    /// Cap on |weight| for any operator in the job.
    double max_abs_weight = kDefaultMaxAbsWeight;
    /// Not part of the job identity (excluded from the digest).
    std::string output_dir;

    friend bool operator==(const GenerationJob&, const GenerationJob&) = default;
};

struct HookCounters {
    std::uint64_t concept_query = 0;
    std::uint64_t shape_bias = 0;
    std::uint64_t feature_embedding = 0;

    friend bool operator==(const HookCounters&, const HookCounters&) = default;
};

struct GenerationResult {
    LatentTensor final_latent;
    PreviewImage preview;
    std::string preview_path;
    HookCounters hook_counters;
    std::uint64_t job_digest = 0;
    std::uint64_t latent_digest = 0;
    double elapsed_ms = 0.0;
};

/// Backend plus operator registrations, bound to a fixed number of prompts
/// and controls. Immutable: register_hook returns a new pipeline.
class Pipeline {
public:
    Pipeline(std::shared_ptr<const Backend> backend, std::size_t prompt_count, std::size_t control_count,
             Mode mode = Mode::query_wise);

    /// Registering twice on the same (kind, block) replaces the earlier spec.
    /// Throws UnknownSite, ArityMismatch or ValidationError.
    Pipeline register_hook(const HookRegistration& reg) const;

    const Backend& backend() const noexcept { return *backend_; }
    Mode mode() const noexcept { return mode_; }
    std::span<const HookRegistration> registrations() const noexcept { return registrations_; }

    /// Operator in effect at a concept block / shape layer, or null.
    const OperatorSpec* concept_operator(std::size_t block) const;
    const OperatorSpec* shape_operator(std::size_t layer) const;
    const OperatorSpec* feature_operator() const;

    HookCounters predict_counters(int steps) const;

    struct RunOutput {
        LatentTensor final_latent;
        HookCounters counters;
    };

    RunOutput run(std::span<const std::string> prompts, std::span<const std::string> controls, std::uint64_t seed,
                  int steps) const;

private:
    const OperatorSpec* lookup(SiteKind kind, std::size_t index) const;

    std::shared_ptr<const Backend> backend_;
    std::size_t prompt_count_;
    std::size_t control_count_;
    Mode mode_;
    std::vector<HookRegistration> registrations_;
};

/// Query-wise concept operation: combine the per-prompt attention results
/// of one cross-attention block into the tensor that replaces its output.
LatentTensor apply_concept_operation(std::span<const LatentTensor> query_results, const OperatorSpec& spec,
                                     std::size_t step);

/// Layerwise shape operation over the bias sets of several controls.
ControlBiasSet apply_shape_operation(std::span<const ControlBiasSet> bias_sets, const OperatorSpec& spec,
                                     std::size_t step);

/// Feature-wise baseline: combine prompt embeddings before attention.
PromptEmbedding apply_feature_wise(std::span<const PromptEmbedding> embeddings, const OperatorSpec& spec,
                                   std::size_t step);

/// Layerwise sum of bias sets, the merge used when no shape operator is set.
ControlBiasSet sum_bias_sets(std::span<const ControlBiasSet> bias_sets);

/// Throws ValidationError / ArityMismatch / AffineViolation / UnknownSite /
/// ExtrapolationCap with a field path into the job document.
void validate_job(const GenerationJob& job, const Topology& topology);

Pipeline build_pipeline(std::shared_ptr<const Backend> backend, const GenerationJob& job);

GenerationResult run_generation(std::shared_ptr<const Backend> backend, const GenerationJob& job);
/// Resolves job.backend_id; throws BackendUnavailable when unknown.
GenerationResult run_generation(const GenerationJob& job);

/// Writes final.ltt, preview.ppm, result.json and job.json into `dir` and
/// sets result.preview_path.
void write_result_dir(const std::filesystem::path& dir, const GenerationJob& job, GenerationResult& result);

}  // namespace latentdiff
