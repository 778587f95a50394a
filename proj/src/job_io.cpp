#include "latentdiff/job_io.hpp"

#include <set>

#include "latentdiff/error.hpp"
#include "latentdiff/hash.hpp"
#include "latentdiff/tensor_io.hpp"

namespace latentdiff {

using nlohmann::json;

nlohmann::json parse_json_document(std::string_view text) {
    try {
        return json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        // e.byte is 1-based and points just past the offending character.
        std::size_t line = 1, column = 1;
        const std::size_t limit = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
        for (std::size_t i = 0; i < limit; ++i) {
            if (text[i] == '\n') {
                ++line;
                column = 1;
            } else {
                ++column;
            }
        }
        throw Error(ErrorCode::ParseError,
                    "invalid JSON at line " + std::to_string(line) + ", column " + std::to_string(column));
    }
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& prefix) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.contains(key)) {
            throw Error(ErrorCode::ValidationError, "unknown field", prefix.empty() ? key : prefix + "." + key);
        }
    }
}

double number_at(const json& v, const std::string& field) {
    if (!v.is_number()) throw Error(ErrorCode::ValidationError, "expected a number", field);
    return v.get<double>();
}

std::string string_at(const json& v, const std::string& field) {
    if (!v.is_string()) throw Error(ErrorCode::ValidationError, "expected a string", field);
    return v.get<std::string>();
}

std::vector<std::string> strings_at(const json& v, const std::string& field) {
    if (!v.is_array()) throw Error(ErrorCode::ValidationError, "expected an array of strings", field);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(string_at(v[i], field + "[" + std::to_string(i) + "]"));
    return out;
}

Weights weights_at(const json& v, const std::string& field) {
    try {
        if (v.is_number()) return Weights::from_alpha(v.get<double>());
        if (!v.is_array()) throw Error(ErrorCode::ValidationError, "expected an array of weights or an alpha");
        std::vector<double> values;
        for (std::size_t i = 0; i < v.size(); ++i) values.push_back(number_at(v[i], "[" + std::to_string(i) + "]"));
        return Weights(std::move(values));
    } catch (const Error& e) {
        throw e.with_field_prefix(field);
    }
}

json weights_json(const Weights& w) { return json(std::vector<double>(w.values().begin(), w.values().end())); }

}  // namespace

HookRegistration operator_from_json(const json& doc, SiteKind default_kind) {
    if (!doc.is_object()) throw Error(ErrorCode::ValidationError, "operator must be an object");
    reject_unknown(doc, {"kind", "weights", "alpha", "schedule", "block"}, "");
    if (!doc.contains("kind")) throw Error(ErrorCode::ValidationError, "missing operator kind", "kind");

    HookRegistration reg;
    reg.site.kind = default_kind;
    reg.spec.kind = operator_kind_from_string(string_at(doc["kind"], "kind"));
    if (doc.contains("weights") && doc.contains("alpha")) {
        throw Error(ErrorCode::ValidationError, "give either weights or alpha, not both", "alpha");
    }
    if (doc.contains("weights")) reg.spec.weights = weights_at(doc["weights"], "weights");
    if (doc.contains("alpha")) reg.spec.weights = Weights::from_alpha(number_at(doc["alpha"], "alpha"));
    if (doc.contains("schedule")) {
        const json& s = doc["schedule"];
        if (!s.is_array() || s.empty()) throw Error(ErrorCode::ValidationError, "schedule must be a nonempty array", "schedule");
        for (std::size_t i = 0; i < s.size(); ++i) {
            reg.spec.schedule.push_back(weights_at(s[i], "schedule[" + std::to_string(i) + "]"));
        }
    }
    if (doc.contains("block")) {
        const json& b = doc["block"];
        if (!b.is_number_integer() || b.get<std::int64_t>() < 0) {
            throw Error(ErrorCode::ValidationError, "block must be a non-negative integer", "block");
        }
        reg.site.block_index = b.get<std::size_t>();
    }
    return reg;
}

json operator_to_json(const HookRegistration& reg) {
    json out = json::object();
    out["kind"] = std::string(to_string(reg.spec.kind));
    if (reg.spec.weights) out["weights"] = weights_json(*reg.spec.weights);
    if (!reg.spec.schedule.empty()) {
        json s = json::array();
        for (const Weights& w : reg.spec.schedule) s.push_back(weights_json(w));
        out["schedule"] = std::move(s);
    }
    if (reg.site.block_index) out["block"] = *reg.site.block_index;
    return out;
}

GenerationJob job_from_json(const json& doc) {
    if (!doc.is_object()) throw Error(ErrorCode::ValidationError, "job must be a JSON object");
    reject_unknown(doc,
                   {"version", "backend", "seed", "steps", "mode", "prompts", "controls", "concept_op", "shape_op",
                    "max_abs_weight", "output_dir"},
                   "");
    GenerationJob job;
    if (doc.contains("version")) {
        const json& v = doc["version"];
        if (!v.is_number_integer() || v.get<std::int64_t>() != kJobVersion) {
            throw Error(ErrorCode::ValidationError, "unsupported version (expected 1)", "version");
        }
    }
    if (doc.contains("backend")) job.backend_id = string_at(doc["backend"], "backend");
    if (doc.contains("seed")) {
        const json& s = doc["seed"];
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
            throw Error(ErrorCode::ValidationError, "seed must be an unsigned 64-bit integer", "seed");
        }
        job.seed = s.get<std::uint64_t>();
    }
    if (doc.contains("steps")) {
        const json& s = doc["steps"];
        if (!s.is_number_integer() || s.get<std::int64_t>() < 1 || s.get<std::int64_t>() > 100000) {
            throw Error(ErrorCode::ValidationError, "steps must be a positive integer", "steps");
        }
        job.steps = s.get<int>();
    }
    if (doc.contains("mode")) job.mode = mode_from_string(string_at(doc["mode"], "mode"));
    if (!doc.contains("prompts")) throw Error(ErrorCode::ValidationError, "missing field", "prompts");
    job.prompts = strings_at(doc["prompts"], "prompts");
    if (doc.contains("controls")) job.controls = strings_at(doc["controls"], "controls");

    const SiteKind concept_kind = job.mode == Mode::query_wise ? SiteKind::concept_query : SiteKind::feature_embedding;
    if (doc.contains("concept_op") && !doc["concept_op"].is_null()) {
        try {
            job.concept_registration = operator_from_json(doc["concept_op"], concept_kind);
        } catch (const Error& e) {
            throw e.with_field_prefix("concept_op");
        }
    }
    if (doc.contains("shape_op") && !doc["shape_op"].is_null()) {
        try {
            job.shape_registration = operator_from_json(doc["shape_op"], SiteKind::shape_bias);
        } catch (const Error& e) {
            throw e.with_field_prefix("shape_op");
        }
    }
    if (doc.contains("max_abs_weight")) job.max_abs_weight = number_at(doc["max_abs_weight"], "max_abs_weight");
    if (doc.contains("output_dir")) job.output_dir = string_at(doc["output_dir"], "output_dir");
    return job;
}

GenerationJob parse_job(std::string_view text) { return job_from_json(parse_json_document(text)); }

GenerationJob load_job(const std::filesystem::path& path) { return parse_job(read_file(path)); }

namespace {

json identity_json(const GenerationJob& job) {
    json out = json::object();
    out["version"] = kJobVersion;
    out["backend"] = job.backend_id;
    out["seed"] = job.seed;
    out["steps"] = job.steps;
    out["mode"] = std::string(to_string(job.mode));
    out["prompts"] = job.prompts;
    out["controls"] = job.controls;
    out["concept_op"] = job.concept_registration ? operator_to_json(*job.concept_registration) : json(nullptr);
    out["shape_op"] = job.shape_registration ? operator_to_json(*job.shape_registration) : json(nullptr);
    out["max_abs_weight"] = job.max_abs_weight;
    return out;
}

}  // namespace

json job_to_json(const GenerationJob& job) {
    json out = identity_json(job);
    if (!job.output_dir.empty()) out["output_dir"] = job.output_dir;
    return out;
}

std::string canonical_job_encoding(const GenerationJob& job) { return identity_json(job).dump(); }

std::uint64_t job_digest(const GenerationJob& job) { return fnv1a64(canonical_job_encoding(job)); }

json counters_to_json(const HookCounters& counters) {
    return json{{"concept_query", counters.concept_query},
                {"shape_bias", counters.shape_bias},
                {"feature_embedding", counters.feature_embedding}};
}

json result_to_json(const GenerationResult& result) {
    json out = json::object();
    out["job_digest"] = hex_digest(result.job_digest);
    out["latent_digest"] = hex_digest(result.latent_digest);
    out["hook_counters"] = counters_to_json(result.hook_counters);
    out["timings"] = json{{"elapsed_ms", result.elapsed_ms}};
    out["final_latent"] = "final.ltt";
    out["preview"] = result.preview_path;
    return out;
}

}  // namespace latentdiff
