#include "latentdiff/harness.hpp"

#include <cmath>
#include <cstdio>
#include <mutex>
#include <set>

#include "latentdiff/error.hpp"
#include "latentdiff/hash.hpp"
#include "latentdiff/job_io.hpp"
#include "latentdiff/tensor_io.hpp"

namespace latentdiff {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void reject_unknown(const json& doc, const std::set<std::string>& allowed) {
    if (!doc.is_object()) throw Error(ErrorCode::ValidationError, "expected a JSON object");
    for (const auto& [key, _] : doc.items()) {
        if (!allowed.contains(key)) throw Error(ErrorCode::ValidationError, "unknown field", key);
    }
}

template <typename T>
T get_field(const json& doc, const char* key, T fallback) {
    if (!doc.contains(key)) return fallback;
    try {
        return doc[key].get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorCode::ValidationError, "wrong type", key);
    }
}

std::uint64_t get_seed(const json& doc) {
    if (!doc.contains("seed")) return 0;
    const json& s = doc["seed"];
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
        throw Error(ErrorCode::ValidationError, "seed must be an unsigned 64-bit integer", "seed");
    }
    return s.get<std::uint64_t>();
}

Weights weights_field(const json& v, const std::string& field) {
    try {
        if (v.is_number()) return Weights::from_alpha(v.get<double>());
        if (!v.is_array()) throw Error(ErrorCode::ValidationError, "expected weights array or alpha");
        std::vector<double> w;
        for (const json& x : v) {
            if (!x.is_number()) throw Error(ErrorCode::ValidationError, "weights must be numbers");
            w.push_back(x.get<double>());
        }
        return Weights(std::move(w));
    } catch (const Error& e) {
        throw e.with_field_prefix(field);
    }
}

json weights_json(const Weights& w) { return json(std::vector<double>(w.values().begin(), w.values().end())); }

std::string numbered(const char* prefix, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03zu", prefix, i);
    return buf;
}

/// Runs a job; on success writes its result directory when `dir` is set.
std::optional<GenerationResult> run_into(const GenerationJob& job, const fs::path& dir, std::string& error) {
    try {
        GenerationResult result = run_generation(job);
        if (!dir.empty()) {
            GenerationJob recorded = job;
            recorded.output_dir = dir.string();
            write_result_dir(dir, recorded, result);
        }
        return result;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::IoError) throw;
        error = e.what();
        return std::nullopt;
    }
}

void write_manifest(const fs::path& out_dir, const Manifest& manifest) {
    write_file(out_dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
}

}  // namespace

// --- manifests ---------------------------------------------------------------

json manifest_to_json(const Manifest& manifest) {
    json jobs = json::array();
    for (const ManifestEntry& e : manifest.entries) {
        GenerationJob job = e.job;
        job.output_dir.clear();
        json entry{{"id", e.id},
                   {"dir", e.dir},
                   {"job", job_to_json(job)},
                   {"job_digest", hex_digest(job_digest(job))},
                   {"latent_digest", e.latent_digest ? json(hex_digest(*e.latent_digest)) : json(nullptr)}};
        jobs.push_back(std::move(entry));
    }
    return json{{"version", 1}, {"kind", manifest.kind}, {"jobs", std::move(jobs)}};
}

Manifest manifest_from_json(const json& doc) {
    if (!doc.is_object() || !doc.contains("jobs") || !doc["jobs"].is_array()) {
        throw Error(ErrorCode::ParseError, "manifest needs a jobs array");
    }
    Manifest m;
    m.kind = doc.value("kind", "");
    for (const json& j : doc["jobs"]) {
        ManifestEntry e;
        e.id = j.value("id", "");
        e.dir = j.value("dir", "");
        e.job = job_from_json(j.at("job"));
        if (j.contains("latent_digest") && j["latent_digest"].is_string()) {
            e.latent_digest = std::stoull(j["latent_digest"].get<std::string>(), nullptr, 16);
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

ReplayReport replay_manifest(const fs::path& manifest_path) {
    const Manifest manifest = manifest_from_json(parse_json_document(read_file(manifest_path)));
    const fs::path base = manifest_path.parent_path();
    ReplayReport report;
    for (const ManifestEntry& e : manifest.entries) {
        if (!e.latent_digest) continue;  // recorded failure; nothing to compare
        ++report.replayed;
        bool same = false;
        try {
            const GenerationResult replay = run_generation(e.job);
            const fs::path recorded = base / e.dir / "final.ltt";
            if (!e.dir.empty() && fs::exists(recorded)) {
                same = read_file(recorded) == encode_ltt(replay.final_latent);
            } else {
                same = replay.latent_digest == *e.latent_digest;
            }
        } catch (const Error&) {
            same = false;
        }
        if (same) ++report.matched;
        else report.mismatched.push_back(e.id);
    }
    return report;
}

// --- sweep -------------------------------------------------------------------

SweepSpec sweep_spec_from_json(const json& doc) {
    reject_unknown(doc, {"prompts", "control", "resolution", "modes", "backend", "seed", "steps"});
    SweepSpec spec;
    spec.prompts = get_field<std::vector<std::string>>(doc, "prompts", {});
    if (doc.contains("control") && !doc["control"].is_null()) spec.control_ref = get_field<std::string>(doc, "control", "");
    spec.resolution = get_field<std::size_t>(doc, "resolution", spec.resolution);
    if (doc.contains("modes")) {
        spec.modes.clear();
        for (const std::string& m : get_field<std::vector<std::string>>(doc, "modes", {})) {
            spec.modes.push_back(mode_from_string(m));
        }
    }
    spec.backend_id = get_field<std::string>(doc, "backend", spec.backend_id);
    spec.seed = get_seed(doc);
    spec.steps = get_field<int>(doc, "steps", spec.steps);
    return spec;
}

void validate_sweep_spec(const SweepSpec& spec) {
    if (spec.prompts.size() != 2) throw Error(ErrorCode::ValidationError, "a sweep needs exactly two prompts", "prompts");
    if (spec.resolution < 3) {
        throw Error(ErrorCode::BadResolution, "resolution must be at least 3 to include an interior point",
                    "resolution");
    }
    if (spec.modes.empty()) throw Error(ErrorCode::ValidationError, "at least one mode is required", "modes");
    if (std::set<Mode>(spec.modes.begin(), spec.modes.end()).size() != spec.modes.size()) {
        throw Error(ErrorCode::ValidationError, "duplicate mode", "modes");
    }
    if (spec.steps < 1) throw Error(ErrorCode::ValidationError, "steps must be positive", "steps");
    if (spec.control_ref && spec.control_ref->empty()) {
        throw Error(ErrorCode::EmptyControlRef, "control reference is empty", "control");
    }
}

bool SweepReport::endpoint_agreement() const { return !endpoint_difference || *endpoint_difference <= kEndpointTolerance; }

bool SweepReport::midpoint_divergence() const {
    return midpoint_difference && *midpoint_difference > kDivergenceThreshold;
}

SweepReport run_sweep(const SweepSpec& spec, const fs::path& out_dir) {
    validate_sweep_spec(spec);
    SweepReport report;
    Manifest manifest{"sweep", {}};
    std::vector<bool> control_variants{false};
    if (spec.control_ref) control_variants.push_back(true);

    for (bool with_control : control_variants) {
        for (std::size_t i = 0; i < spec.resolution; ++i) {
            SweepCell cell;
            cell.alpha = double(i) / double(spec.resolution - 1);
            cell.with_control = with_control;
            for (Mode mode : spec.modes) {
                GenerationJob job;
                job.backend_id = spec.backend_id;
                job.seed = spec.seed;
                job.steps = spec.steps;
                job.mode = mode;
                job.prompts = spec.prompts;
                if (with_control) job.controls = {*spec.control_ref};
                const SiteKind kind = mode == Mode::query_wise ? SiteKind::concept_query : SiteKind::feature_embedding;
                job.concept_registration = HookRegistration{HookSite{kind, std::nullopt}, OperatorSpec::lerp(cell.alpha)};

                const std::string id = numbered("cell", i) + "_" + std::string(to_string(mode)) + (with_control ? "_control" : "");
                SweepCellRun run{job, std::nullopt, {}};
                run.result = run_into(job, out_dir.empty() ? fs::path() : out_dir / id, run.error);
                ++report.job_count;
                if (!run.result) ++report.failed;
                manifest.entries.push_back(
                    {id, id, job, run.result ? std::optional(run.result->latent_digest) : std::nullopt});
                cell.runs.emplace(mode, std::move(run));
            }
            const auto q = cell.runs.find(Mode::query_wise);
            const auto f = cell.runs.find(Mode::feature_wise);
            if (q != cell.runs.end() && f != cell.runs.end() && q->second.result && f->second.result) {
                cell.mode_difference = mean_abs_difference(q->second.result->final_latent, f->second.result->final_latent);
            }
            report.cells.push_back(std::move(cell));
        }
    }

    double best_mid = 2.0;
    for (const SweepCell& cell : report.cells) {
        if (!cell.mode_difference) continue;
        if (cell.alpha == 0.0 || cell.alpha == 1.0) {
            report.endpoint_difference = std::max(report.endpoint_difference.value_or(0.0), *cell.mode_difference);
        }
        if (!cell.with_control && std::abs(cell.alpha - 0.5) < best_mid) {
            best_mid = std::abs(cell.alpha - 0.5);
            report.midpoint_difference = cell.mode_difference;
        }
    }

    if (!out_dir.empty()) {
        write_file(out_dir / "report.json", sweep_report_to_json(report).dump(2) + "\n");
        write_manifest(out_dir, manifest);
    }
    return report;
}

json sweep_report_to_json(const SweepReport& report) {
    json cells = json::array();
    for (const SweepCell& cell : report.cells) {
        json runs = json::object();
        for (const auto& [mode, run] : cell.runs) {
            json r{{"job_digest", hex_digest(job_digest(run.job))}};
            if (run.result) {
                r["latent_digest"] = hex_digest(run.result->latent_digest);
                r["preview"] = run.result->preview_path;
            } else {
                r["error"] = run.error;
            }
            runs[std::string(to_string(mode))] = std::move(r);
        }
        cells.push_back(json{{"alpha", cell.alpha},
                             {"control", cell.with_control},
                             {"runs", std::move(runs)},
                             {"mode_difference", cell.mode_difference ? json(*cell.mode_difference) : json(nullptr)}});
    }
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return json{{"metric", std::string(SweepReport::kMetric)},
                {"endpoint_tolerance", SweepReport::kEndpointTolerance},
                {"divergence_threshold", SweepReport::kDivergenceThreshold},
                {"endpoint_difference", opt(report.endpoint_difference)},
                {"midpoint_difference", opt(report.midpoint_difference)},
                {"endpoint_agreement", report.endpoint_agreement()},
                {"midpoint_divergence", report.midpoint_divergence()},
                {"job_count", report.job_count},
                {"failed", report.failed},
                {"cells", std::move(cells)}};
}

// --- captions ------------------------------------------------------------------

std::string NullCaptioner::caption(const std::string& first, const std::string& second, const Weights& weights) {
    char mix[64];
    std::snprintf(mix, sizeof mix, "%.3f/%.3f", weights[0], weights.size() > 1 ? weights[1] : 0.0);
    return "Specimen: a hybrid of the " + first + " and the " + second + " (blend " + mix +
           "). Field notes pending.";
}

namespace {

std::mutex& caption_registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, CaptionClientFactory, std::less<>>& caption_registry() {
    static std::map<std::string, CaptionClientFactory, std::less<>> r;
    return r;
}

}  // namespace

void register_caption_client(std::string id, CaptionClientFactory factory) {
    std::lock_guard lock(caption_registry_mutex());
    caption_registry()[std::move(id)] = std::move(factory);
}

std::shared_ptr<CaptionClient> make_caption_client(std::string_view id) {
    if (id == NullCaptioner::kId) return std::make_shared<NullCaptioner>();
    std::lock_guard lock(caption_registry_mutex());
    const auto it = caption_registry().find(id);
    if (it == caption_registry().end() || !it->second) {
        throw Error(ErrorCode::CaptionClientUnavailable, "caption client '" + std::string(id) + "' is not registered");
    }
    return it->second();
}

// --- pages -------------------------------------------------------------------

PediaSchedule pedia_schedule_from_json(const json& doc) {
    reject_unknown(doc, {"pairs", "caption_client", "page_template", "backend", "seed", "steps"});
    PediaSchedule s;
    if (doc.contains("pairs")) {
        if (!doc["pairs"].is_array()) throw Error(ErrorCode::ValidationError, "pairs must be an array", "pairs");
        for (std::size_t i = 0; i < doc["pairs"].size(); ++i) {
            const json& p = doc["pairs"][i];
            const std::string path = "pairs[" + std::to_string(i) + "]";
            try {
                reject_unknown(p, {"first", "second", "alpha", "weights"});
            } catch (const Error& e) {
                throw e.with_field_prefix(path);
            }
            PediaPair pair;
            pair.first = get_field<std::string>(p, "first", "");
            pair.second = get_field<std::string>(p, "second", "");
            if (p.contains("alpha")) pair.weights = weights_field(p["alpha"], path + ".alpha");
            if (p.contains("weights")) pair.weights = weights_field(p["weights"], path + ".weights");
            s.pairs.push_back(std::move(pair));
        }
    }
    s.caption_client_id = get_field<std::string>(doc, "caption_client", s.caption_client_id);
    s.page_template = get_field<std::string>(doc, "page_template", "");
    s.backend_id = get_field<std::string>(doc, "backend", s.backend_id);
    s.seed = get_seed(doc);
    s.steps = get_field<int>(doc, "steps", s.steps);
    return s;
}

void validate_pedia_schedule(const PediaSchedule& schedule) {
    if (schedule.pairs.empty()) throw Error(ErrorCode::EmptySchedule, "schedule has no concept pairs", "pairs");
    for (std::size_t i = 0; i < schedule.pairs.size(); ++i) {
        const PediaPair& p = schedule.pairs[i];
        const std::string path = "pairs[" + std::to_string(i) + "]";
        if (p.first.empty() || p.second.empty()) throw Error(ErrorCode::EmptyPrompt, "concept is empty", path);
        if (p.first == p.second) throw Error(ErrorCode::ValidationError, "concepts in a pair must differ", path);
        if (p.weights.size() != 2) throw Error(ErrorCode::ArityMismatch, "pair weights need arity 2", path + ".weights");
    }
}

std::vector<PediaPage> run_infinitepedia(const PediaSchedule& schedule, const fs::path& out_dir) {
    validate_pedia_schedule(schedule);
    std::shared_ptr<CaptionClient> captioner;
    bool degraded = false;
    std::string warning;
    try {
        captioner = make_caption_client(schedule.caption_client_id);
    } catch (const Error& e) {
        captioner = std::make_shared<NullCaptioner>();
        degraded = true;
        warning = e.what();
    }

    std::vector<PediaPage> pages;
    Manifest manifest{"infinitepedia", {}};
    for (std::size_t i = 0; i < schedule.pairs.size(); ++i) {
        const PediaPair& pair = schedule.pairs[i];
        GenerationJob job;
        job.backend_id = schedule.backend_id;
        job.seed = schedule.seed;
        job.steps = schedule.steps;
        job.prompts = {pair.first, pair.second};
        job.concept_registration =
            HookRegistration{HookSite{SiteKind::concept_query, std::nullopt}, OperatorSpec::lerp(pair.weights[1])};

        const std::string id = numbered("page", i);
        const fs::path dir = out_dir.empty() ? fs::path() : out_dir / id;
        GenerationResult result = run_generation(job);
        if (!dir.empty()) {
            GenerationJob recorded = job;
            recorded.output_dir = dir.string();
            write_result_dir(dir, recorded, result);
        }

        PediaPage page{pair, job, std::move(result), {}, std::string(captioner->id()), degraded};
        try {
            page.caption = captioner->caption(pair.first, pair.second, pair.weights);
        } catch (const std::exception& e) {
            page.caption = NullCaptioner().caption(pair.first, pair.second, pair.weights);
            page.caption_client = NullCaptioner::kId;
            page.caption_degraded = true;
            warning = e.what();
        }

        if (!dir.empty()) {
            write_file(dir / "caption.txt", page.caption + "\n");
            json page_doc{{"pair", {{"first", pair.first}, {"second", pair.second}, {"weights", weights_json(pair.weights)}}},
                          {"caption_client", page.caption_client},
                          {"caption_degraded", page.caption_degraded},
                          {"caption", "caption.txt"},
                          {"preview", "preview.ppm"},
                          {"template", schedule.page_template},
                          {"job_digest", hex_digest(page.result.job_digest)},
                          {"latent_digest", hex_digest(page.result.latent_digest)}};
            if (page.caption_degraded) page_doc["warning"] = warning;
            write_file(dir / "page.json", page_doc.dump(2) + "\n");
        }
        manifest.entries.push_back({id, id, job, page.result.latent_digest});
        pages.push_back(std::move(page));
    }
    if (!out_dir.empty()) write_manifest(out_dir, manifest);
    return pages;
}

// --- motion ------------------------------------------------------------------

MotionSpec motion_spec_from_json(const json& doc) {
    reject_unknown(doc, {"frames", "traversal", "prompt", "backend", "seed", "steps", "max_abs_weight"});
    MotionSpec s;
    s.frames = get_field<std::vector<std::string>>(doc, "frames", {});
    if (doc.contains("traversal")) {
        if (!doc["traversal"].is_array()) throw Error(ErrorCode::ValidationError, "traversal must be an array", "traversal");
        for (std::size_t i = 0; i < doc["traversal"].size(); ++i) {
            s.traversal.push_back(weights_field(doc["traversal"][i], "traversal[" + std::to_string(i) + "]"));
        }
    }
    s.prompt = get_field<std::string>(doc, "prompt", s.prompt);
    s.backend_id = get_field<std::string>(doc, "backend", s.backend_id);
    s.seed = get_seed(doc);
    s.steps = get_field<int>(doc, "steps", s.steps);
    s.max_abs_weight = get_field<double>(doc, "max_abs_weight", s.max_abs_weight);
    return s;
}

void validate_motion_spec(const MotionSpec& spec) {
    if (spec.frames.size() < 2) throw Error(ErrorCode::ValidationError, "at least two frames are required", "frames");
    if (spec.traversal.empty()) throw Error(ErrorCode::ValidationError, "traversal is empty", "traversal");
    for (std::size_t i = 0; i < spec.traversal.size(); ++i) {
        if (spec.traversal[i].size() != spec.frames.size()) {
            throw Error(ErrorCode::ArityMismatch, "traversal point arity differs from frame count",
                        "traversal[" + std::to_string(i) + "]");
        }
    }
    if (spec.prompt.empty()) throw Error(ErrorCode::EmptyPrompt, "prompt is empty", "prompt");
}

ControlBiasSet merge_motion_biases(const Backend& backend, const std::vector<std::string>& frames,
                                   const Weights& weights) {
    std::vector<ControlBiasSet> sets;
    for (const std::string& f : frames) sets.push_back(backend.encode_control(f));
    ControlBiasSet merged;
    const std::size_t layers = backend.topology().injection_layers();
    for (std::size_t layer = 0; layer < layers; ++layer) {
        std::vector<LatentTensor> vertices;
        for (const ControlBiasSet& s : sets) vertices.push_back(s.biases[layer]);
        merged.biases.push_back(sample_frame(HullFrame(std::move(vertices), frames), weights).point);
    }
    return merged;
}

std::vector<MotionFrame> run_latent_motion(const MotionSpec& spec, const fs::path& out_dir) {
    validate_motion_spec(spec);
    std::vector<MotionFrame> frames;
    Manifest manifest{"latent_motion", {}};
    json points = json::array();
    for (std::size_t i = 0; i < spec.traversal.size(); ++i) {
        const Weights& w = spec.traversal[i];
        GenerationJob job;
        job.backend_id = spec.backend_id;
        job.seed = spec.seed;
        job.steps = spec.steps;
        job.prompts = {spec.prompt};
        job.controls = spec.frames;
        job.max_abs_weight = spec.max_abs_weight;
        job.shape_registration = HookRegistration{HookSite{SiteKind::shape_bias, std::nullopt}, OperatorSpec::affine(w)};

        const std::string id = numbered("frame", i);
        MotionFrame frame{w, w.inside_hull(), job, std::nullopt, {}};
        frame.result = run_into(job, out_dir.empty() ? fs::path() : out_dir / id, frame.error);

        json point{{"index", i}, {"weights", weights_json(w)}, {"interior", frame.interior}, {"dir", id}};
        if (frame.result) {
            point["latent_digest"] = hex_digest(frame.result->latent_digest);
            point["preview"] = id + "/preview.ppm";
        } else {
            point["error"] = frame.error;
        }
        points.push_back(std::move(point));
        manifest.entries.push_back(
            {id, id, job, frame.result ? std::optional(frame.result->latent_digest) : std::nullopt});
        frames.push_back(std::move(frame));
    }
    if (!out_dir.empty()) {
        write_file(out_dir / "sequence.json",
                   json{{"frames", spec.frames}, {"prompt", spec.prompt}, {"points", std::move(points)}}.dump(2) + "\n");
        write_manifest(out_dir, manifest);
    }
    return frames;
}

}  // namespace latentdiff
