#pragma once

// Batch experiments: mode sweeps, hybrid-concept pages, hull traversals.
// Every run that writes to disk leaves a manifest.json listing each job,
// its directory and digests, which replay_manifest re-executes.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentdiff/hook_pipeline.hpp"

namespace latentdiff {

// --- manifests ---------------------------------------------------------------

struct ManifestEntry {
    std::string id;
    std::string dir;  // relative to the manifest
    GenerationJob job;
    std::optional<std::uint64_t> latent_digest;  // absent when the job failed
};

struct Manifest {
    std::string kind;
    std::vector<ManifestEntry> entries;
};

nlohmann::json manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const nlohmann::json& doc);

struct ReplayReport {
    std::size_t replayed = 0;
    std::size_t matched = 0;
    std::vector<std::string> mismatched;  // ids whose latents differ
};

/// Re-runs every recorded job and compares final latents byte-for-byte with
/// the recorded final.ltt (or the recorded digest when the file is absent).
ReplayReport replay_manifest(const std::filesystem::path& manifest_path);

// --- sweep -------------------------------------------------------------------

struct SweepSpec {
    std::vector<std::string> prompts;  // exactly two
    std::optional<std::string> control_ref;
    std::size_t resolution = 9;
    std::vector<Mode> modes{Mode::query_wise, Mode::feature_wise};
    std::string backend_id = "mock-v1";
    std::uint64_t seed = 0;
    int steps = 5;
};

SweepSpec sweep_spec_from_json(const nlohmann::json& doc);
void validate_sweep_spec(const SweepSpec& spec);

struct SweepCellRun {
    GenerationJob job;
    std::optional<GenerationResult> result;
    std::string error;
};

struct SweepCell {
    double alpha = 0.0;
    bool with_control = false;
    std::map<Mode, SweepCellRun> runs;
    /// Mean absolute elementwise difference between query_wise and
    /// feature_wise final latents; present only when both modes succeeded.
    std::optional<double> mode_difference;
};

struct SweepReport {
    static constexpr std::string_view kMetric = "mean absolute elementwise difference of final latents";
    static constexpr double kEndpointTolerance = 1e-6;
    static constexpr double kDivergenceThreshold = 1e-9;

    std::vector<SweepCell> cells;
    std::size_t job_count = 0;
    std::size_t failed = 0;
    /// Largest cross-mode difference at alpha in {0,1}; empty with one mode.
    std::optional<double> endpoint_difference;
    /// Cross-mode difference at the alpha closest to 0.5 (no control).
    std::optional<double> midpoint_difference;

    bool endpoint_agreement() const;
    bool midpoint_divergence() const;
};

nlohmann::json sweep_report_to_json(const SweepReport& report);

/// Runs |modes| * resolution * (control ? 2 : 1) jobs. `out_dir` empty means
/// in-memory only.
SweepReport run_sweep(const SweepSpec& spec, const std::filesystem::path& out_dir = {});

// --- hybrid concept pages ------------------------------------------------------

class CaptionClient {
public:
    virtual ~CaptionClient() = default;
    virtual std::string_view id() const = 0;
    virtual std::string caption(const std::string& first, const std::string& second, const Weights& weights) = 0;
};

/// Deterministic template captions; always available.
class NullCaptioner final : public CaptionClient {
public:
    static constexpr std::string_view kId = "null-captioner";
    std::string_view id() const override { return kId; }
    std::string caption(const std::string& first, const std::string& second, const Weights& weights) override;
};

using CaptionClientFactory = std::function<std::shared_ptr<CaptionClient>()>;
void register_caption_client(std::string id, CaptionClientFactory factory);
/// Throws CaptionClientUnavailable for ids with no registered factory.
std::shared_ptr<CaptionClient> make_caption_client(std::string_view id);

struct PediaPair {
    std::string first;
    std::string second;
    Weights weights = Weights::from_alpha(0.5);
};

struct PediaSchedule {
    std::vector<PediaPair> pairs;
    std::string caption_client_id = std::string(NullCaptioner::kId);
    std::string page_template;
    std::string backend_id = "mock-v1";
    std::uint64_t seed = 0;
    int steps = 5;
};

PediaSchedule pedia_schedule_from_json(const nlohmann::json& doc);
/// Throws EmptySchedule or ValidationError.
void validate_pedia_schedule(const PediaSchedule& schedule);

struct PediaPage {
    PediaPair pair;
    GenerationJob job;
    GenerationResult result;
    std::string caption;
    std::string caption_client;
    bool caption_degraded = false;
};

/// One query-wise blended generation per pair, plus caption.txt and
/// page.json sidecars when `out_dir` is given.
std::vector<PediaPage> run_infinitepedia(const PediaSchedule& schedule, const std::filesystem::path& out_dir = {});

// --- hull traversal --------------------------------------------------------------

struct MotionSpec {
    std::vector<std::string> frames;
    std::vector<Weights> traversal;
    std::string prompt = "a horse in motion";
    std::string backend_id = "mock-v1";
    std::uint64_t seed = 0;
    int steps = 5;
    double max_abs_weight = kDefaultMaxAbsWeight;
};

MotionSpec motion_spec_from_json(const nlohmann::json& doc);
void validate_motion_spec(const MotionSpec& spec);

/// Layerwise sample of the per-frame bias hulls at `weights`.
ControlBiasSet merge_motion_biases(const Backend& backend, const std::vector<std::string>& frames,
                                   const Weights& weights);

struct MotionFrame {
    Weights weights;
    bool interior = false;
    GenerationJob job;
    std::optional<GenerationResult> result;
    std::string error;
};

std::vector<MotionFrame> run_latent_motion(const MotionSpec& spec, const std::filesystem::path& out_dir = {});

}  // namespace latentdiff
