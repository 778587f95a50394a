#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentdiff/hook_pipeline.hpp"

namespace latentdiff {

enum class AttentionAttach { post_output_projection, pre_output_projection };

std::string_view to_string(AttentionAttach attach);

/// `adapter.json`: how hook registrations map onto a real Stable Diffusion +
/// ControlNet stack. Loading and planning never touch model weights.
struct AdapterConfig {
    std::string model_ref;
    AttentionAttach attention_attach = AttentionAttach::post_output_projection;
    std::vector<std::string> cross_attention_block_ids;
    std::vector<std::string> control_layer_ids;
    std::map<std::string, std::string> device;

    friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

AdapterConfig adapter_config_from_json(const nlohmann::json& doc);
AdapterConfig parse_adapter_config(std::string_view text);
/// Throws IoError, ParseError (with line/column) or SchemaError (with field path).
AdapterConfig load_adapter_config(const std::filesystem::path& path);
nlohmann::json adapter_config_to_json(const AdapterConfig& config);

struct Attachment {
    SiteKind kind;
    std::string target_id;
    OperatorSpec spec;
    /// Meaningful for concept_query attachments only.
    AttentionAttach attach = AttentionAttach::post_output_projection;

    friend bool operator==(const Attachment&, const Attachment&) = default;
};

inline constexpr std::string_view kEmbeddingStageId = "text_encoder.output";

using AttachmentPlan = std::vector<Attachment>;

/// Ordered concept (or feature) attachments followed by shape attachments.
AttachmentPlan plan_attachments(const AdapterConfig& config, const GenerationJob& job);
nlohmann::json plan_to_json(const AttachmentPlan& plan);

/// Hook invocations a runtime executing `plan` for `steps` must report.
HookCounters predict_external_counters(const AttachmentPlan& plan, int steps);

/// A model runtime able to execute an attachment plan. None is linked into
/// this library; hosts register one with register_external_runtime.
class ExternalRuntime {
public:
    virtual ~ExternalRuntime() = default;
    virtual std::string_view name() const = 0;

    struct Output {
        LatentTensor final_latent;
        PreviewImage preview;
        HookCounters counters;
    };

    virtual Output execute(const AdapterConfig& config, const std::filesystem::path& model_path,
                           const AttachmentPlan& plan, const GenerationJob& job) = 0;
};

using RuntimeFactory = std::function<std::shared_ptr<ExternalRuntime>()>;
void register_external_runtime(RuntimeFactory factory);
void clear_external_runtime();

/// Model location: $LATENTDIFF_MODEL_DIR/model_ref when the variable is set,
/// else model_ref itself.
std::filesystem::path resolve_model_path(const AdapterConfig& config);

/// Probes for a registered runtime and an existing model directory; null when
/// either is missing.
std::shared_ptr<ExternalRuntime> probe_external_runtime(const AdapterConfig& config);

/// Runs the job on the external stack. Throws BackendUnavailable when no
/// runtime or model is present. When `plan_log` is given, the plan JSON is
/// written to it verbatim before execution.
GenerationResult generate_external(const AdapterConfig& config, const GenerationJob& job,
                                   std::ostream* plan_log = nullptr);

}  // namespace latentdiff
