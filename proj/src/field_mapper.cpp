#include "latentdiff/field_mapper.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <thread>

#include "latentdiff/error.hpp"
#include "latentdiff/job_io.hpp"
#include "latentdiff/tensor_io.hpp"

namespace latentdiff {

using nlohmann::json;

std::string_view to_string(Region region) {
    switch (region) {
        case Region::meaningful: return "meaningful";
        case Region::ambiguous: return "ambiguous";
        case Region::desert: return "desert";
    }
    return "desert";
}

Region region_from_string(std::string_view name) {
    if (name == "meaningful") return Region::meaningful;
    if (name == "ambiguous") return Region::ambiguous;
    if (name == "desert") return Region::desert;
    throw Error(ErrorCode::ParseError, "unknown region '" + std::string(name) + "'");
}

std::string_view to_string(FieldAxis axis) { return axis == FieldAxis::concepts ? "concept" : "shape"; }

FieldAxis field_axis_from_string(std::string_view name) {
    if (name == "concept") return FieldAxis::concepts;
    if (name == "shape") return FieldAxis::shapes;
    throw Error(ErrorCode::ValidationError, "unknown axis '" + std::string(name) + "' (allowed: concept, shape)",
                "axis");
}

void validate_thresholds(const Thresholds& t) {
    if (!(std::isfinite(t.low) && std::isfinite(t.high) && t.low >= 0.0 && t.low < t.high && t.high <= 1.0)) {
        throw Error(ErrorCode::BadThresholds, "thresholds must satisfy 0 <= t_low < t_high <= 1");
    }
}

Region classify(double score, double t_low, double t_high) {
    validate_thresholds({t_low, t_high});
    if (score < t_low) return Region::desert;
    if (score >= t_high) return Region::meaningful;
    return Region::ambiguous;
}

// --- grids -------------------------------------------------------------------

std::size_t lattice_point_count(std::size_t arity, std::size_t resolution) {
    // C(n + k, k) with n = resolution - 1 parts to distribute, k = arity - 1.
    const std::size_t n = resolution - 1;
    const std::size_t k = arity - 1;
    std::size_t result = 1;
    for (std::size_t i = 1; i <= k; ++i) result = result * (n + i) / i;
    return result;
}

namespace {

void compositions(std::size_t remaining, std::size_t slots, std::vector<std::size_t>& prefix,
                  std::vector<std::vector<std::size_t>>& out) {
    if (slots == 1) {
        prefix.push_back(remaining);
        out.push_back(prefix);
        prefix.pop_back();
        return;
    }
    for (std::size_t take = remaining + 1; take-- > 0;) {
        prefix.push_back(take);
        compositions(remaining - take, slots - 1, prefix, out);
        prefix.pop_back();
    }
}

}  // namespace

std::vector<Weights> sample_grid(std::size_t arity, std::size_t resolution) {
    if (arity < 2) throw Error(ErrorCode::ArityMismatch, "grid arity must be at least 2");
    if (resolution < 2) throw Error(ErrorCode::BadResolution, "resolution must be at least 2");
    const auto denom = static_cast<double>(resolution - 1);
    std::vector<Weights> grid;
    if (arity == 2) {
        for (std::size_t i = 0; i < resolution; ++i) grid.push_back(Weights::from_alpha(double(i) / denom));
        return grid;
    }
    std::vector<std::vector<std::size_t>> points;
    std::vector<std::size_t> prefix;
    compositions(resolution - 1, arity, prefix, points);
    for (const auto& p : points) {
        std::vector<double> w(arity);
        for (std::size_t k = 0; k < arity; ++k) w[k] = double(p[k]) / denom;
        grid.emplace_back(std::move(w));
    }
    return grid;
}

// --- scoring -----------------------------------------------------------------

LatentMeanDistanceScorer::LatentMeanDistanceScorer(const LatentTensor& reference, double scale)
    : reference_(channel_means(reference)), scale_(scale > 0.0 ? scale : 1.0) {}

std::vector<double> LatentMeanDistanceScorer::channel_means(const LatentTensor& latent) {
    const std::size_t channels = latent.shape().front();
    const std::size_t per_channel = latent.size() / channels;
    std::vector<double> means(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < per_channel; ++i) means[c] += latent[c * per_channel + i];
        means[c] /= double(per_channel);
    }
    return means;
}

namespace {

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sum);
}

}  // namespace

LatentMeanDistanceScorer LatentMeanDistanceScorer::from_vertices(std::span<const GenerationResult> vertices) {
    if (vertices.empty()) throw Error(ErrorCode::ArityMismatch, "scorer needs at least one vertex run");
    const std::vector<double> ref = channel_means(vertices.front().final_latent);
    double scale = 0.0;
    for (const GenerationResult& v : vertices) scale = std::max(scale, euclidean(ref, channel_means(v.final_latent)));
    return LatentMeanDistanceScorer(vertices.front().final_latent, scale);
}

double LatentMeanDistanceScorer::score(const GenerationResult& result) const {
    const std::vector<double> means = channel_means(result.final_latent);
    if (means.size() != reference_.size()) throw Error(ErrorCode::ShapeMismatch, "latent channel count changed");
    return std::clamp(1.0 - euclidean(means, reference_) / scale_, 0.0, 1.0);
}

std::unique_ptr<Scorer> make_scorer(std::string_view scorer_id, std::span<const GenerationResult> vertices) {
    if (scorer_id == LatentMeanDistanceScorer::kId) {
        return std::make_unique<LatentMeanDistanceScorer>(LatentMeanDistanceScorer::from_vertices(vertices));
    }
    if (scorer_id == kClipSimilarityScorerId) {
        throw Error(ErrorCode::BackendUnavailable, "clip-similarity scoring requires an external model backend");
    }
    throw Error(ErrorCode::ValidationError, "unknown scorer '" + std::string(scorer_id) + "'", "scorer_id");
}

// --- building ----------------------------------------------------------------

GenerationJob instantiate_axis_job(const GenerationJob& job_template, FieldAxis axis, const Weights& weights) {
    GenerationJob job = job_template;
    if (axis == FieldAxis::concepts) {
        const SiteKind kind = job.mode == Mode::query_wise ? SiteKind::concept_query : SiteKind::feature_embedding;
        job.concept_registration = HookRegistration{HookSite{kind, std::nullopt}, OperatorSpec::affine(weights)};
    } else {
        job.shape_registration =
            HookRegistration{HookSite{SiteKind::shape_bias, std::nullopt}, OperatorSpec::affine(weights)};
    }
    return job;
}

double quantize_sig9(double value) {
    if (value == 0.0 || !std::isfinite(value)) return value;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", value);
    return std::strtod(buf, nullptr);
}

namespace {

Weights quantize(const Weights& w) {
    std::vector<double> q;
    for (double v : w.values()) q.push_back(quantize_sig9(v));
    return Weights(std::move(q));
}

}  // namespace

void FieldMap::relabel(const Thresholds& t) {
    validate_thresholds(t);
    thresholds = t;
    for (FieldSample& s : samples) s.region = s.failed ? Region::desert : classify(s.score, t);
}

FieldMap build_field_map(const FieldMapRequest& request) {
    validate_thresholds(request.thresholds);
    const GenerationJob& tmpl = request.job_template;
    const std::vector<std::string>& inputs = request.axis == FieldAxis::concepts ? tmpl.prompts : tmpl.controls;
    if (inputs.size() < 2) {
        throw Error(ErrorCode::ValidationError, "the " + std::string(to_string(request.axis)) +
                                                    " axis needs at least two " +
                                                    (request.axis == FieldAxis::concepts ? "prompts" : "controls"),
                    "axis");
    }
    const std::size_t arity = inputs.size();
    const std::vector<Weights> grid = sample_grid(arity, request.resolution);
    const auto backend = make_backend(tmpl.backend_id);

    std::vector<GenerationResult> vertices;
    for (std::size_t k = 0; k < arity; ++k) {
        vertices.push_back(run_generation(backend, instantiate_axis_job(tmpl, request.axis, Weights::one_hot(arity, k))));
    }
    const std::unique_ptr<Scorer> scorer = make_scorer(request.scorer_id, vertices);

    std::vector<std::optional<double>> scores(grid.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < grid.size(); i = next++) {
            try {
                scores[i] = scorer->score(run_generation(backend, instantiate_axis_job(tmpl, request.axis, grid[i])));
            } catch (const Error&) {
                scores[i].reset();
            }
        }
    };
    const std::size_t workers = std::clamp<std::size_t>(request.workers, 1, grid.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();

    FieldMap map;
    map.axis = AxisSpec{request.axis, arity, inputs};
    map.resolution = request.resolution;
    map.scorer_id = request.scorer_id;
    map.thresholds = request.thresholds;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        FieldSample s{quantize(grid[i]), 0.0, Region::desert, !scores[i].has_value()};
        if (scores[i]) {
            s.score = quantize_sig9(*scores[i]);
            s.region = classify(s.score, request.thresholds);
        }
        map.samples.push_back(std::move(s));
    }
    return map;
}

// --- file format -------------------------------------------------------------

json field_map_to_json(const FieldMap& map) {
    json samples = json::array();
    for (const FieldSample& s : map.samples) {
        json entry{{"coords", std::vector<double>(s.coords.values().begin(), s.coords.values().end())},
                   {"score", s.score},
                   {"region", std::string(to_string(s.region))}};
        if (s.failed) entry["failed"] = true;
        samples.push_back(std::move(entry));
    }
    return json{{"version", 1},
                {"axis", {{"kind", std::string(to_string(map.axis.kind))},
                          {"arity", map.axis.arity},
                          {"labels", map.axis.labels}}},
                {"resolution", map.resolution},
                {"scorer_id", map.scorer_id},
                {"thresholds", {map.thresholds.low, map.thresholds.high}},
                {"samples", std::move(samples)}};
}

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::ParseError, what); }

std::size_t positive_int(const json& doc, const char* key) {
    if (!doc.contains(key) || !doc[key].is_number_unsigned()) bad(std::string("'") + key + "' must be a positive integer");
    return doc[key].get<std::size_t>();
}

}  // namespace

FieldMap field_map_from_json(const json& doc) {
    if (!doc.is_object()) bad("field map must be a JSON object");
    if (doc.value("version", 0) != 1) bad("unsupported field map version");
    FieldMap map;
    if (!doc.contains("axis") || !doc["axis"].is_object()) bad("missing axis");
    const json& axis = doc["axis"];
    try {
        map.axis.kind = field_axis_from_string(axis.value("kind", ""));
    } catch (const Error& e) {
        bad(e.detail());
    }
    map.axis.arity = positive_int(axis, "arity");
    if (axis.contains("labels")) {
        for (const json& l : axis["labels"]) {
            if (!l.is_string()) bad("axis labels must be strings");
            map.axis.labels.push_back(l.get<std::string>());
        }
    }
    map.resolution = positive_int(doc, "resolution");
    if (!doc.contains("scorer_id") || !doc["scorer_id"].is_string()) bad("missing scorer_id");
    map.scorer_id = doc["scorer_id"].get<std::string>();

    const json& t = doc.value("thresholds", json());
    if (!t.is_array() || t.size() != 2 || !t[0].is_number() || !t[1].is_number()) bad("thresholds must be [t_low, t_high]");
    map.thresholds = {t[0].get<double>(), t[1].get<double>()};
    try {
        validate_thresholds(map.thresholds);
    } catch (const Error& e) {
        bad(e.detail());
    }

    if (!doc.contains("samples") || !doc["samples"].is_array()) bad("missing samples");
    for (const json& s : doc["samples"]) {
        if (!s.is_object() || !s.contains("coords") || !s.contains("score") || !s.contains("region")) {
            bad("sample needs coords, score and region");
        }
        std::vector<double> coords;
        for (const json& c : s["coords"]) {
            if (!c.is_number()) bad("coords must be numbers");
            coords.push_back(c.get<double>());
        }
        if (coords.size() != map.axis.arity) bad("sample arity differs from axis arity");
        if (!s["score"].is_number() || !s["region"].is_string()) bad("bad score or region");
        try {
            map.samples.push_back(FieldSample{Weights(std::move(coords)), s["score"].get<double>(),
                                              region_from_string(s["region"].get<std::string>()),
                                              s.value("failed", false)});
        } catch (const Error& e) {
            bad(e.detail());
        }
    }
    if (map.resolution < 2 || map.axis.arity < 2 ||
        map.samples.size() != lattice_point_count(map.axis.arity, map.resolution)) {
        bad("sample count does not match the grid size");
    }
    return map;
}

std::string export_field_map_string(const FieldMap& map) { return field_map_to_json(map).dump(2) + "\n"; }

void export_field_map(const FieldMap& map, const std::filesystem::path& path) {
    write_file(path, export_field_map_string(map));
}

FieldMap import_field_map(const std::filesystem::path& path) {
    return field_map_from_json(parse_json_document(read_file(path)));
}

}  // namespace latentdiff
