// latentdiff command line: batch generation, experiments and the explorer service.
//
// Exit codes: 0 ok, 2 invalid input, 3 backend unavailable, 4 partial failure.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "latentdiff/error.hpp"
#include "latentdiff/field_mapper.hpp"
#include "latentdiff/harness.hpp"
#include "latentdiff/hash.hpp"
#include "latentdiff/hook_pipeline.hpp"
#include "latentdiff/job_io.hpp"
#include "latentdiff/sd_adapter.hpp"
#include "latentdiff/service.hpp"
#include "latentdiff/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace latentdiff;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 2;
constexpr int kUnavailable = 3;
constexpr int kPartial = 4;

int exit_code_for(const Error& e) {
    switch (e.code()) {
        case ErrorCode::BackendUnavailable:
        case ErrorCode::CaptionClientUnavailable: return kUnavailable;
        default: return kInvalid;
    }
}

nlohmann::json load_json(const fs::path& path) { return parse_json_document(read_file(path)); }

int cmd_generate(const fs::path& job_path, const fs::path& out, const std::optional<fs::path>& adapter,
                 bool print_plan) {
    GenerationJob job = load_job(job_path);
    const fs::path dir = out.empty() ? fs::path(job.output_dir) : out;
    if (dir.empty()) throw Error(ErrorCode::ValidationError, "no output directory (use --out or output_dir)", "output_dir");
    job.output_dir = dir.string();

    GenerationResult result = [&] {
        if (adapter) {
            const AdapterConfig config = load_adapter_config(*adapter);
            return generate_external(config, job, print_plan ? &std::cout : nullptr);
        }
        return run_generation(job);
    }();
    write_result_dir(dir, job, result);
    std::cout << "latent " << hex_digest(result.latent_digest) << "  job " << hex_digest(result.job_digest) << "  -> "
              << dir.string() << '\n';
    return kOk;
}

int cmd_sweep(const fs::path& spec_path, const fs::path& out) {
    const SweepReport report = run_sweep(sweep_spec_from_json(load_json(spec_path)), out);
    std::cout << report.job_count << " jobs, " << report.failed << " failed";
    if (report.endpoint_difference) std::cout << ", endpoint difference " << *report.endpoint_difference;
    if (report.midpoint_difference) std::cout << ", midpoint difference " << *report.midpoint_difference;
    std::cout << '\n';
    return report.failed ? kPartial : kOk;
}

int cmd_pedia(const fs::path& schedule_path, const fs::path& out) {
    const auto pages = run_infinitepedia(pedia_schedule_from_json(load_json(schedule_path)), out);
    bool degraded = false;
    for (const PediaPage& p : pages) degraded |= p.caption_degraded;
    std::cout << pages.size() << " pages";
    if (degraded) std::cout << " (captions fell back to " << NullCaptioner::kId << ")";
    std::cout << '\n';
    return kOk;
}

int cmd_motion(const fs::path& spec_path, const fs::path& out) {
    const auto frames = run_latent_motion(motion_spec_from_json(load_json(spec_path)), out);
    std::size_t failed = 0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (!frames[i].result) {
            ++failed;
            std::cerr << "frame " << i << ": " << frames[i].error << '\n';
        }
    }
    std::cout << frames.size() << " frames, " << failed << " failed\n";
    return failed ? kPartial : kOk;
}

int cmd_fieldmap(const fs::path& template_path, const std::string& axis, std::size_t resolution, const fs::path& out,
                 const std::string& scorer, double t_low, double t_high, std::size_t workers) {
    FieldMapRequest req;
    req.job_template = load_job(template_path);
    req.axis = field_axis_from_string(axis);
    req.resolution = resolution;
    req.scorer_id = scorer;
    req.thresholds = {t_low, t_high};
    req.workers = workers;
    const FieldMap map = build_field_map(req);
    export_field_map(map, out);
    std::map<Region, std::size_t> counts;
    std::size_t failed = 0;
    for (const FieldSample& s : map.samples) {
        ++counts[s.region];
        failed += s.failed;
    }
    std::cout << map.samples.size() << " samples: " << counts[Region::meaningful] << " meaningful, "
              << counts[Region::ambiguous] << " ambiguous, " << counts[Region::desert] << " desert\n";
    return failed ? kPartial : kOk;
}

int cmd_replay(const fs::path& manifest) {
    const ReplayReport report = replay_manifest(manifest);
    std::cout << report.matched << "/" << report.replayed << " jobs replayed byte-equal\n";
    for (const std::string& id : report.mismatched) std::cerr << "mismatch: " << id << '\n';
    return report.mismatched.empty() ? kOk : kPartial;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(const std::string& host, int port, std::size_t workers, const std::string& state_file,
              const std::string& cors_origin, std::size_t cap, const std::vector<std::string>& adapters) {
    ServiceOptions options;
    options.workers = workers;
    options.cors_origin = cors_origin;
    options.fieldmap_resolution_cap = cap;
    if (!state_file.empty()) options.state_file = state_file;
    for (const std::string& a : adapters) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw Error(ErrorCode::ValidationError, "expected BACKEND_ID=adapter.json, got '" + a + "'", "adapter");
        }
        options.external_backends[a.substr(0, eq)] = load_adapter_config(a.substr(eq + 1));
    }
    ExplorerService service(std::move(options));
    HttpServer server(service);
    const int bound = server.bind(host, port);
    if (bound < 0) {
        std::cerr << "error: cannot bind " << host << ":" << port << '\n';
        return 1;
    }
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on http://" << host << ":" << bound << std::endl;
    server.listen();
    g_server = nullptr;
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latentdiff: operators on diffusion latents, with a mock backend"};
    app.require_subcommand(1);

    fs::path job_path, out, spec_path, schedule_path, template_path, manifest;
    std::string adapter_path;
    bool print_plan = false;

    auto* generate = app.add_subcommand("generate", "Run one .job.json");
    generate->add_option("--job", job_path, "Job file")->required();
    generate->add_option("--out", out, "Result directory (defaults to the job's output_dir)");
    generate->add_option("--adapter", adapter_path, "adapter.json for an external diffusion runtime");
    generate->add_flag("--print-plan", print_plan, "Print the attachment plan before executing");

    auto* sweep = app.add_subcommand("sweep", "Query-wise vs feature-wise alpha sweep");
    sweep->add_option("--spec", spec_path)->required();
    sweep->add_option("--out", out)->required();

    auto* pedia = app.add_subcommand("pedia", "Hybrid-concept pages from a pair schedule");
    pedia->add_option("--schedule", schedule_path)->required();
    pedia->add_option("--out", out)->required();

    auto* motion = app.add_subcommand("motion", "Traverse the hull of control frames");
    motion->add_option("--spec", spec_path)->required();
    motion->add_option("--out", out)->required();

    std::string axis = "concept";
    std::size_t resolution = 9;
    std::string scorer(LatentMeanDistanceScorer::kId);
    double t_low = Thresholds{}.low, t_high = Thresholds{}.high;
    std::size_t workers = 0;
    auto* fieldmap = app.add_subcommand("fieldmap", "Score and classify an operator weight grid");
    fieldmap->add_option("--template", template_path)->required();
    fieldmap->add_option("--axis", axis)->check(CLI::IsMember({"concept", "shape"}));
    fieldmap->add_option("--resolution", resolution);
    fieldmap->add_option("--out", out)->required();
    fieldmap->add_option("--scorer", scorer);
    fieldmap->add_option("--t-low", t_low);
    fieldmap->add_option("--t-high", t_high);
    fieldmap->add_option("--workers", workers, "Concurrent grid evaluations");

    auto* replay = app.add_subcommand("replay", "Re-run a manifest and compare latents byte-for-byte");
    replay->add_option("--manifest", manifest)->required();

    std::string host = "127.0.0.1", state_file, cors_origin;
    int port = 8080;
    std::size_t cap = 33;
    std::vector<std::string> adapters;
    auto* serve = app.add_subcommand("serve", "HTTP explorer service");
    serve->add_option("--host", host);
    serve->add_option("--port", port);
    serve->add_option("--workers", workers, "Concurrent generations (default: CPU count)");
    serve->add_option("--state-file", state_file, "Append-only JSON-lines session log");
    serve->add_option("--cors-origin", cors_origin);
    serve->add_option("--fieldmap-cap", cap, "Largest field map resolution served");
    serve->add_option("--adapter", adapters, "BACKEND_ID=adapter.json, repeatable");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInvalid;
    }

    try {
        if (*generate) {
            return cmd_generate(job_path, out, adapter_path.empty() ? std::nullopt : std::optional<fs::path>(adapter_path),
                                print_plan);
        }
        if (*sweep) return cmd_sweep(spec_path, out);
        if (*pedia) return cmd_pedia(schedule_path, out);
        if (*motion) return cmd_motion(spec_path, out);
        if (*fieldmap) {
            return cmd_fieldmap(template_path, axis, resolution, out, scorer, t_low, t_high,
                                workers ? workers : std::max(1u, std::thread::hardware_concurrency()));
        }
        if (*replay) return cmd_replay(manifest);
        if (*serve) return cmd_serve(host, port, workers, state_file, cors_origin, cap, adapters);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
