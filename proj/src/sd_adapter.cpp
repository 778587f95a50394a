#include "latentdiff/sd_adapter.hpp"

#include <chrono>
#include <cstdlib>
#include <mutex>
#include <set>

#include "latentdiff/error.hpp"
#include "latentdiff/job_io.hpp"
#include "latentdiff/tensor_io.hpp"

namespace latentdiff {

using nlohmann::json;

std::string_view to_string(AttentionAttach attach) {
    return attach == AttentionAttach::post_output_projection ? "post_output_projection" : "pre_output_projection";
}

namespace {

std::vector<std::string> id_list(const json& doc, const char* field) {
    if (!doc.contains(field)) throw Error(ErrorCode::SchemaError, "missing required field", field);
    const json& v = doc[field];
    if (!v.is_array() || v.empty()) throw Error(ErrorCode::SchemaError, "must be a nonempty array of strings", field);
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string path = std::string(field) + "[" + std::to_string(i) + "]";
        if (!v[i].is_string() || v[i].get<std::string>().empty()) {
            throw Error(ErrorCode::SchemaError, "must be a nonempty string", path);
        }
        std::string id = v[i].get<std::string>();
        if (!seen.insert(id).second) throw Error(ErrorCode::SchemaError, "duplicate id '" + id + "'", path);
        ids.push_back(std::move(id));
    }
    return ids;
}

}  // namespace

AdapterConfig adapter_config_from_json(const json& doc) {
    if (!doc.is_object()) throw Error(ErrorCode::SchemaError, "adapter config must be a JSON object");
    static const std::set<std::string> allowed{"model_ref", "attention_attach", "cross_attention_block_ids",
                                               "control_layer_ids", "device"};
    for (const auto& [key, _] : doc.items()) {
        if (!allowed.contains(key)) throw Error(ErrorCode::SchemaError, "unknown field", key);
    }
    AdapterConfig config;
    if (!doc.contains("model_ref") || !doc["model_ref"].is_string() || doc["model_ref"].get<std::string>().empty()) {
        throw Error(ErrorCode::SchemaError, "must be a nonempty string", "model_ref");
    }
    config.model_ref = doc["model_ref"].get<std::string>();
    if (doc.contains("attention_attach")) {
        const json& a = doc["attention_attach"];
        const std::string value = a.is_string() ? a.get<std::string>() : a.dump();
        if (value == "post_output_projection") {
            config.attention_attach = AttentionAttach::post_output_projection;
        } else if (value == "pre_output_projection") {
            config.attention_attach = AttentionAttach::pre_output_projection;
        } else {
            throw Error(ErrorCode::SchemaError,
                        "'" + value + "' is not allowed (allowed: post_output_projection, pre_output_projection)",
                        "attention_attach");
        }
    }
    config.cross_attention_block_ids = id_list(doc, "cross_attention_block_ids");
    config.control_layer_ids = id_list(doc, "control_layer_ids");
    if (doc.contains("device")) {
        const json& d = doc["device"];
        if (!d.is_object()) throw Error(ErrorCode::SchemaError, "must be an object of strings", "device");
        for (const auto& [key, value] : d.items()) {
            if (!value.is_string()) throw Error(ErrorCode::SchemaError, "must be a string", "device." + key);
            config.device[key] = value.get<std::string>();
        }
    }
    return config;
}

AdapterConfig parse_adapter_config(std::string_view text) { return adapter_config_from_json(parse_json_document(text)); }

AdapterConfig load_adapter_config(const std::filesystem::path& path) {
    return parse_adapter_config(read_file(path));
}

json adapter_config_to_json(const AdapterConfig& config) {
    return json{{"model_ref", config.model_ref},
                {"attention_attach", std::string(to_string(config.attention_attach))},
                {"cross_attention_block_ids", config.cross_attention_block_ids},
                {"control_layer_ids", config.control_layer_ids},
                {"device", config.device}};
}

AttachmentPlan plan_attachments(const AdapterConfig& config, const GenerationJob& job) {
    AttachmentPlan plan;
    if (job.prompts.size() > 1 && !job.concept_registration) {
        throw Error(ErrorCode::ArityMismatch, "multiple prompts require a concept operator", "concept_op");
    }
    if (job.concept_registration) {
        const HookRegistration& reg = *job.concept_registration;
        if (reg.spec.arity() != job.prompts.size()) {
            throw Error(ErrorCode::ArityMismatch,
                        "concept operator consumes " + std::to_string(reg.spec.arity()) + " inputs, job has " +
                            std::to_string(job.prompts.size()) + " prompts",
                        "concept_op");
        }
        if (job.mode == Mode::feature_wise) {
            plan.push_back({SiteKind::feature_embedding, std::string(kEmbeddingStageId), reg.spec,
                            config.attention_attach});
        } else if (reg.site.block_index) {
            if (*reg.site.block_index >= config.cross_attention_block_ids.size()) {
                throw Error(ErrorCode::UnknownSite, "block index outside cross_attention_block_ids", "concept_op.block");
            }
            plan.push_back({SiteKind::concept_query, config.cross_attention_block_ids[*reg.site.block_index], reg.spec,
                            config.attention_attach});
        } else {
            for (const std::string& id : config.cross_attention_block_ids) {
                plan.push_back({SiteKind::concept_query, id, reg.spec, config.attention_attach});
            }
        }
    }
    if (job.shape_registration) {
        const HookRegistration& reg = *job.shape_registration;
        if (reg.spec.arity() != job.controls.size()) {
            throw Error(ErrorCode::ArityMismatch,
                        "shape operator consumes " + std::to_string(reg.spec.arity()) + " inputs, job has " +
                            std::to_string(job.controls.size()) + " controls",
                        "shape_op");
        }
        if (reg.site.block_index) {
            if (*reg.site.block_index >= config.control_layer_ids.size()) {
                throw Error(ErrorCode::UnknownSite, "layer index outside control_layer_ids", "shape_op.block");
            }
            plan.push_back({SiteKind::shape_bias, config.control_layer_ids[*reg.site.block_index], reg.spec,
                            config.attention_attach});
        } else {
            for (const std::string& id : config.control_layer_ids) {
                plan.push_back({SiteKind::shape_bias, id, reg.spec, config.attention_attach});
            }
        }
    }
    return plan;
}

json plan_to_json(const AttachmentPlan& plan) {
    json out = json::array();
    for (const Attachment& a : plan) {
        json entry = operator_to_json(HookRegistration{HookSite{a.kind, std::nullopt}, a.spec});
        entry["site"] = std::string(to_string(a.kind));
        entry["target"] = a.target_id;
        if (a.kind == SiteKind::concept_query) entry["attach"] = std::string(to_string(a.attach));
        out.push_back(std::move(entry));
    }
    return out;
}

HookCounters predict_external_counters(const AttachmentPlan& plan, int steps) {
    HookCounters c;
    const auto n = static_cast<std::uint64_t>(std::max(steps, 0));
    for (const Attachment& a : plan) {
        switch (a.kind) {
            case SiteKind::concept_query: c.concept_query += n; break;
            case SiteKind::shape_bias: c.shape_bias += n; break;
            case SiteKind::feature_embedding: c.feature_embedding += n; break;
        }
    }
    return c;
}

namespace {

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

RuntimeFactory& registry() {
    static RuntimeFactory factory;
    return factory;
}

// One model instance owns the accelerator; executions are serialized.
std::mutex& execution_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

void register_external_runtime(RuntimeFactory factory) {
    std::lock_guard lock(registry_mutex());
    registry() = std::move(factory);
}

void clear_external_runtime() { register_external_runtime({}); }

std::filesystem::path resolve_model_path(const AdapterConfig& config) {
    if (const char* root = std::getenv("LATENTDIFF_MODEL_DIR"); root && *root) {
        return std::filesystem::path(root) / config.model_ref;
    }
    return config.model_ref;
}

std::shared_ptr<ExternalRuntime> probe_external_runtime(const AdapterConfig& config) {
    RuntimeFactory factory;
    {
        std::lock_guard lock(registry_mutex());
        factory = registry();
    }
    if (!factory) return nullptr;
    std::error_code ec;
    if (!std::filesystem::exists(resolve_model_path(config), ec)) return nullptr;
    return factory();
}

GenerationResult generate_external(const AdapterConfig& config, const GenerationJob& job, std::ostream* plan_log) {
    const AttachmentPlan plan = plan_attachments(config, job);
    if (plan_log) *plan_log << plan_to_json(plan).dump() << '\n';

    std::shared_ptr<ExternalRuntime> runtime = probe_external_runtime(config);
    if (!runtime) {
        throw Error(ErrorCode::BackendUnavailable, "no diffusion runtime or model found for '" + config.model_ref +
                                                       "' (looked in " + resolve_model_path(config).string() + ")");
    }
    const auto start = std::chrono::steady_clock::now();
    std::unique_lock lock(execution_mutex());
    ExternalRuntime::Output out = runtime->execute(config, resolve_model_path(config), plan, job);
    lock.unlock();
    const auto stop = std::chrono::steady_clock::now();
    const std::uint64_t latent_digest = out.final_latent.digest();
    return GenerationResult{std::move(out.final_latent),
                            std::move(out.preview),
                            {},
                            out.counters,
                            job_digest(job),
                            latent_digest,
                            std::chrono::duration<double, std::milli>(stop - start).count()};
}

}  // namespace latentdiff
