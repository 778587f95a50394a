#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latentdiff/hook_pipeline.hpp"

namespace latentdiff {

enum class Region { meaningful, ambiguous, desert };

std::string_view to_string(Region region);
Region region_from_string(std::string_view name);

struct Thresholds {
    double low = 0.25;
    double high = 0.6;

    friend bool operator==(const Thresholds&, const Thresholds&) = default;
};

/// Throws BadThresholds unless 0 <= low < high <= 1.
void validate_thresholds(const Thresholds& t);

/// score < low: desert; score >= high: meaningful; otherwise ambiguous.
Region classify(double score, double t_low, double t_high);
inline Region classify(double score, const Thresholds& t) { return classify(score, t.low, t.high); }

/// Weight-space grid. arity 2: `resolution` evenly spaced alphas mapped to
/// [1-alpha, alpha]. arity > 2: every simplex lattice point with denominator
/// resolution-1. Enumeration runs the first weight from 1 down to 0.
std::vector<Weights> sample_grid(std::size_t arity, std::size_t resolution);

/// Number of points sample_grid returns: C(resolution-1 + arity-1, arity-1).
std::size_t lattice_point_count(std::size_t arity, std::size_t resolution);

enum class FieldAxis { concepts, shapes };

std::string_view to_string(FieldAxis axis);
FieldAxis field_axis_from_string(std::string_view name);

struct AxisSpec {
    FieldAxis kind = FieldAxis::concepts;
    std::size_t arity = 2;
    /// The prompts or control refs spanning the axis.
    std::vector<std::string> labels;

    friend bool operator==(const AxisSpec&, const AxisSpec&) = default;
};

struct FieldSample {
    Weights coords;
    double score = 0.0;
    Region region = Region::desert;
    bool failed = false;

    friend bool operator==(const FieldSample&, const FieldSample&) = default;
};

struct FieldMap {
    AxisSpec axis;
    std::size_t resolution = 0;
    std::string scorer_id;
    Thresholds thresholds;
    std::vector<FieldSample> samples;

    /// Re-classify cached scores under new thresholds; failed samples stay desert.
    void relabel(const Thresholds& t);

    friend bool operator==(const FieldMap&, const FieldMap&) = default;
};

/// Deterministic score in [0,1] for a generation result.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual std::string_view id() const = 0;
    virtual double score(const GenerationResult& result) const = 0;
};

/// 1 - (distance of the final latent's channel means from the reference
/// vertex's channel means) / scale, clamped to [0,1]. The scale is the
/// largest such distance among the axis vertices, so the reference scores 1
/// and the farthest vertex scores 0.
class LatentMeanDistanceScorer final : public Scorer {
public:
    static constexpr std::string_view kId = "latent-mean-distance";

    LatentMeanDistanceScorer(const LatentTensor& reference, double scale);
    /// Builds the scorer from one-hot vertex runs (vertex 0 is the reference).
    static LatentMeanDistanceScorer from_vertices(std::span<const GenerationResult> vertices);

    std::string_view id() const override { return kId; }
    double score(const GenerationResult& result) const override;

    /// Per-channel mean over spatial positions; assumes [C, ...] layout.
    static std::vector<double> channel_means(const LatentTensor& latent);

private:
    std::vector<double> reference_;
    double scale_;
};

inline constexpr std::string_view kClipSimilarityScorerId = "clip-similarity";

/// Resolves a scorer id given the one-hot vertex runs. "clip-similarity" is
/// reserved for real backends and raises BackendUnavailable here.
std::unique_ptr<Scorer> make_scorer(std::string_view scorer_id, std::span<const GenerationResult> vertices);

struct FieldMapRequest {
    GenerationJob job_template;
    FieldAxis axis = FieldAxis::concepts;
    std::size_t resolution = 9;
    std::string scorer_id = std::string(LatentMeanDistanceScorer::kId);
    Thresholds thresholds;
    std::size_t workers = 1;
};

/// The template with an affine operator carrying `weights` installed on `axis`.
GenerationJob instantiate_axis_job(const GenerationJob& job_template, FieldAxis axis, const Weights& weights);

FieldMap build_field_map(const FieldMapRequest& request);

/// Rounds to 9 significant decimal digits (the on-disk precision).
double quantize_sig9(double value);

nlohmann::json field_map_to_json(const FieldMap& map);
FieldMap field_map_from_json(const nlohmann::json& doc);
std::string export_field_map_string(const FieldMap& map);
void export_field_map(const FieldMap& map, const std::filesystem::path& path);
/// Throws IoError or ParseError (including for invalid thresholds).
FieldMap import_field_map(const std::filesystem::path& path);

}  // namespace latentdiff
