#pragma once

// `.job.json` documents:
//   {version:1, backend, seed, steps, mode, prompts:[...], controls:[...],
//    concept_op:{kind, weights|alpha, schedule?, block?}, shape_op:{...},
//    max_abs_weight?, output_dir?}
// Unknown fields are rejected with a ValidationError naming the field.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "latentdiff/hook_pipeline.hpp"

namespace latentdiff {

inline constexpr int kJobVersion = 1;

GenerationJob job_from_json(const nlohmann::json& doc);
GenerationJob parse_job(std::string_view text);
GenerationJob load_job(const std::filesystem::path& path);

/// Full document, including output_dir when set.
nlohmann::json job_to_json(const GenerationJob& job);

/// Key-sorted compact encoding of the job identity (output_dir excluded).
std::string canonical_job_encoding(const GenerationJob& job);
/// FNV-1a-64 over canonical_job_encoding.
std::uint64_t job_digest(const GenerationJob& job);

nlohmann::json operator_to_json(const HookRegistration& reg);
HookRegistration operator_from_json(const nlohmann::json& doc, SiteKind default_kind);

nlohmann::json counters_to_json(const HookCounters& counters);
nlohmann::json result_to_json(const GenerationResult& result);

/// Parse with line/column in the ParseError message.
nlohmann::json parse_json_document(std::string_view text);

}  // namespace latentdiff
