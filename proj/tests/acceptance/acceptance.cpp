// Acceptance suite for the core library. One line per criterion; exit status
// is nonzero if any criterion fails. argv[1] is the path of the CLI binary.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <sys/wait.h>

#include "latentdiff/error.hpp"
#include "latentdiff/field_mapper.hpp"
#include "latentdiff/harness.hpp"
#include "latentdiff/hash.hpp"
#include "latentdiff/job_io.hpp"
#include "latentdiff/mock_backend.hpp"
#include "latentdiff/sd_adapter.hpp"
#include "latentdiff/service.hpp"
#include "latentdiff/tensor_io.hpp"
#include "oracles.hpp"

using namespace latentdiff;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// pinned tolerances and budgets
constexpr double kEndpointTol = 1e-6;
constexpr double kDivergenceFloor = 1e-9;
constexpr double kShiftTol = 1e-6;
constexpr double kNormTol = 1e-6;
constexpr double kLerpAffineTol = 1e-7;
constexpr double kMidpointTol = 1e-6;
constexpr int kAlgebraCases = 1000;

struct Outcome {
    bool ok = true;
    std::string detail;
};

// Records the first failure; later ones only bump the count.
class Verdict {
public:
    void require(bool cond, const std::string& what) {
        if (cond) return;
        if (failures_++ == 0) first_ = what;
    }
    Outcome outcome(std::string detail) const {
        if (failures_ == 0) return {true, std::move(detail)};
        return {false, first_ + (failures_ > 1 ? " (+" + std::to_string(failures_ - 1) + " more)" : "")};
    }

private:
    int failures_ = 0;
    std::string first_;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

const MockBackend& mock() {
    static const auto backend = make_backend("mock-v1");
    return static_cast<const MockBackend&>(*backend);
}

GenerationJob blend_job(const std::string& a, const std::string& b, double alpha, Mode mode, std::uint64_t seed) {
    GenerationJob job;
    job.seed = seed;
    job.mode = mode;
    job.prompts = {a, b};
    const SiteKind kind = mode == Mode::query_wise ? SiteKind::concept_query : SiteKind::feature_embedding;
    job.concept_registration = HookRegistration{HookSite{kind, std::nullopt}, OperatorSpec::lerp(alpha)};
    return job;
}

GenerationJob single_job(const std::string& prompt, std::uint64_t seed) {
    GenerationJob job;
    job.seed = seed;
    job.prompts = {prompt};
    return job;
}

struct PromptPair {
    std::string a, b;
    std::uint64_t seed;
};

std::vector<PromptPair> prompt_pairs() {
    std::mt19937_64 rng(2002);
    std::vector<PromptPair> pairs;
    while (pairs.size() < 20) {
        PromptPair p{oracle::random_word(rng), oracle::random_word(rng), rng()};
        if (p.a != p.b) pairs.push_back(std::move(p));
    }
    return pairs;
}

// 1 ---------------------------------------------------------------------------

Outcome pass_through() {
    std::mt19937_64 rng(1001);
    Verdict v;
    for (int i = 0; i < 50; ++i) {
        GenerationJob job = single_job(oracle::random_word(rng), rng());
        job.steps = 1 + static_cast<int>(rng() % 8);
        const std::size_t controls = rng() % 3;
        for (std::size_t c = 0; c < controls; ++c) job.controls.push_back("edge:" + oracle::random_word(rng));
        const GenerationResult r = run_generation(job);
        const LatentTensor ref = mock().reference_generate(job.prompts[0], job.controls, job.seed, job.steps);
        v.require(r.final_latent.bit_equal(ref), "seed " + std::to_string(job.seed) + " differs from reference loop");
        v.require(r.hook_counters == HookCounters{}, "hooks fired without registrations");
    }
    return v.outcome("50 seeds byte-exact");
}

// 2 ---------------------------------------------------------------------------

Outcome endpoint_collapse() {
    Verdict v;
    double worst = 0.0;
    for (const PromptPair& p : prompt_pairs()) {
        const LatentTensor only_a = run_generation(single_job(p.a, p.seed)).final_latent;
        const LatentTensor only_b = run_generation(single_job(p.b, p.seed)).final_latent;
        for (Mode mode : {Mode::query_wise, Mode::feature_wise}) {
            for (double alpha : {0.0, 1.0}) {
                const LatentTensor got = run_generation(blend_job(p.a, p.b, alpha, mode, p.seed)).final_latent;
                const double d = max_abs_difference(got, alpha == 0.0 ? only_a : only_b);
                worst = std::max(worst, d);
                v.require(d <= kEndpointTol, std::string(to_string(mode)) + " alpha=" + fmt(alpha) + " off by " +
                                                 fmt(d) + " for '" + p.a + "'/'" + p.b + "'");
            }
        }
    }
    return v.outcome("20 pairs, worst elementwise difference " + fmt(worst));
}

// 3 ---------------------------------------------------------------------------

Outcome midpoint_divergence() {
    int diverged = 0;
    double smallest = INFINITY;
    for (const PromptPair& p : prompt_pairs()) {
        const LatentTensor q = run_generation(blend_job(p.a, p.b, 0.5, Mode::query_wise, p.seed)).final_latent;
        const LatentTensor f = run_generation(blend_job(p.a, p.b, 0.5, Mode::feature_wise, p.seed)).final_latent;
        const double d = mean_abs_difference(q, f);
        smallest = std::min(smallest, d);
        if (d > kDivergenceFloor) ++diverged;
    }
    const std::string detail = std::to_string(diverged) + "/20 pairs diverge, smallest " + fmt(smallest);
    return {diverged >= 19, detail};
}

// 4 ---------------------------------------------------------------------------

LatentTensor unit_tensor(std::mt19937_64& rng, const Shape& s) {
    for (;;) {
        const LatentTensor t = oracle::random_tensor(rng, s);
        const double n = t.norm();
        if (n < 1e-3) continue;
        std::vector<float> v(t.data().begin(), t.data().end());
        for (float& x : v) x = static_cast<float>(x / n);
        return LatentTensor(s, std::move(v));
    }
}

Outcome operator_algebra() {
    std::mt19937_64 rng(4004);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Verdict v;
    double worst_shift = 0.0, worst_norm = 0.0, worst_consistency = 0.0;

    for (int i = 0; i < kAlgebraCases; ++i) {
        const Shape s = oracle::random_shape(rng);
        const auto a = oracle::random_tensor(rng, s);
        const auto b = oracle::random_tensor(rng, s);
        v.require(lerp(a, b, 0.0) == a && lerp(a, b, 1.0) == b, "lerp endpoint");
        if (a.norm() > 1e-3 && b.norm() > 1e-3) {
            v.require(slerp(a, b, 0.0) == a && slerp(a, b, 1.0) == b, "slerp endpoint");
        }
        v.require(apply_operator(OperatorSpec::identity(), std::vector{a}, 0) == a, "identity");
    }

    for (int i = 0; i < kAlgebraCases; ++i) {
        const Shape s = oracle::random_shape(rng);
        const std::size_t n = 2 + rng() % 5;
        std::vector<LatentTensor> xs;
        for (std::size_t k = 0; k < n; ++k) xs.push_back(oracle::random_tensor(rng, s));
        const std::size_t pick = rng() % n;
        v.require(affine_combine(xs, Weights::one_hot(n, pick)).bit_equal(xs[pick]), "one-hot recovery");
    }

    // T(x_i + c) == T(x_i) + c
    for (int i = 0; i < kAlgebraCases; ++i) {
        const Shape s = oracle::random_shape(rng);
        const std::size_t n = 1 + rng() % 5;
        const auto shift = oracle::random_tensor(rng, s);
        std::vector<LatentTensor> xs, shifted;
        for (std::size_t k = 0; k < n; ++k) {
            xs.push_back(oracle::random_tensor(rng, s));
            std::vector<float> sh(xs.back().size());
            for (std::size_t j = 0; j < sh.size(); ++j) sh[j] = xs.back()[j] + shift[j];
            shifted.emplace_back(s, std::move(sh));
        }
        const Weights w(oracle::random_affine_weights(rng, n));
        const LatentTensor lhs = affine_combine(shifted, w);
        const LatentTensor base = affine_combine(xs, w);
        std::vector<float> rhs(base.size());
        for (std::size_t j = 0; j < rhs.size(); ++j) rhs[j] = base[j] + shift[j];
        const double d = max_abs_difference(lhs, LatentTensor(s, std::move(rhs)));
        worst_shift = std::max(worst_shift, d);
        v.require(d <= kShiftTol, "shift equivariance off by " + fmt(d));
    }

    for (int i = 0; i < kAlgebraCases; ++i) {
        const Shape s{2 + rng() % 40};
        const auto a = unit_tensor(rng, s);
        const auto b = unit_tensor(rng, s);
        const double alpha = unit(rng);
        const double d = std::abs(slerp(a, b, alpha).norm() - 1.0);
        worst_norm = std::max(worst_norm, d);
        v.require(d <= kNormTol, "slerp norm drift " + fmt(d));
    }

    for (int i = 0; i < kAlgebraCases; ++i) {
        const Shape s = oracle::random_shape(rng);
        const auto a = oracle::random_tensor(rng, s);
        const auto b = oracle::random_tensor(rng, s);
        const double alpha = unit(rng) * 3.0 - 1.0;
        const double d = max_abs_difference(lerp(a, b, alpha), affine_combine(std::vector{a, b}, Weights::from_alpha(alpha)));
        worst_consistency = std::max(worst_consistency, d);
        v.require(d <= kLerpAffineTol, "lerp/affine differ by " + fmt(d));
    }
    return v.outcome("5 x " + std::to_string(kAlgebraCases) + " cases; shift " + fmt(worst_shift) + ", norm " +
                     fmt(worst_norm) + ", lerp/affine " + fmt(worst_consistency));
}

// 5 ---------------------------------------------------------------------------

Outcome hook_counters() {
    Verdict v;
    for (int steps : {1, 5, 50}) {
        GenerationJob job = blend_job("a pelican", "a violin", 0.5, Mode::query_wise, 9);
        job.steps = steps;
        job.controls = {"pose:rest", "pose:gallop"};
        job.shape_registration = HookRegistration{HookSite{SiteKind::shape_bias, std::nullopt}, OperatorSpec::lerp(0.5)};
        const GenerationResult r = run_generation(job);
        const auto want = static_cast<std::uint64_t>(3 * steps);
        v.require(r.hook_counters.concept_query == want, "concept count at steps=" + std::to_string(steps));
        v.require(r.hook_counters.shape_bias == want, "shape count at steps=" + std::to_string(steps));
        v.require(r.hook_counters.feature_embedding == 0, "feature hook fired in query_wise mode");
        v.require(build_pipeline(make_backend("mock-v1"), job).predict_counters(steps) == r.hook_counters,
                  "predicted counters differ at steps=" + std::to_string(steps));
    }
    return v.outcome("3*steps for steps 1, 5, 50");
}

// 6 ---------------------------------------------------------------------------

Outcome shape_composition() {
    std::mt19937_64 rng(6006);
    Verdict v;
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::string> frames;
        const std::size_t n = 2 + rng() % 4;
        for (std::size_t k = 0; k < n; ++k) frames.push_back("pose:" + oracle::random_word(rng));
        for (std::size_t k = 0; k < n; ++k) {
            const ControlBiasSet merged = merge_motion_biases(mock(), frames, Weights::one_hot(n, k));
            const ControlBiasSet direct = mock().encode_control(frames[k]);
            bool same = merged.biases.size() == direct.biases.size();
            for (std::size_t l = 0; same && l < direct.biases.size(); ++l) same = merged.biases[l].bit_equal(direct.biases[l]);
            v.require(same, "one-hot frame " + std::to_string(k) + " not recovered");
        }
        const std::vector<std::string> two{frames[0], frames[1]};
        const ControlBiasSet mid = merge_motion_biases(mock(), two, Weights::from_alpha(0.5));
        const ControlBiasSet a = mock().encode_control(two[0]);
        const ControlBiasSet b = mock().encode_control(two[1]);
        for (std::size_t l = 0; l < a.biases.size(); ++l) {
            const auto want = oracle::affine_sum({a.biases[l], b.biases[l]}, {0.5, 0.5});
            for (std::size_t j = 0; j < want.size(); ++j) {
                const double d = std::abs(static_cast<double>(mid.biases[l][j] - want[j]));
                worst = std::max(worst, d);
                v.require(d <= kMidpointTol, "midpoint layer " + std::to_string(l) + " off by " + fmt(d));
            }
        }
    }
    return v.outcome("10 frame sets; worst midpoint difference " + fmt(worst));
}

// 7 ---------------------------------------------------------------------------

int run_quiet(const std::string& cmd) {
    const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

Outcome determinism(const std::string& cli) {
    if (cli.empty()) return {false, "no CLI binary given"};
    std::mt19937_64 rng(7007);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const fs::path dir = oracle::scratch_dir("acceptance-replay");
    Verdict v;
    ExplorerService service;
    Manifest manifest{"generation", {}};

    for (int i = 0; i < 10; ++i) {
        json job = {{"seed", rng() % 100000}, {"steps", 1 + static_cast<int>(rng() % 6)},
                    {"mode", i % 2 ? "feature_wise" : "query_wise"}, {"backend", "mock-v1"}};
        job["prompts"] = {oracle::random_word(rng), oracle::random_word(rng)};
        job["concept_op"] = {{"kind", i % 3 ? "lerp" : "slerp"}, {"alpha", unit(rng)}};
        if (i % 4 == 0) {
            job["controls"] = {"pose:rest", "edge:" + oracle::random_word(rng)};
            job["shape_op"] = {{"kind", "affine"}, {"weights", {1.5, -0.5}}};
        } else {
            job["controls"] = json::array();
            job["shape_op"] = nullptr;
        }
        const std::string id = "job_" + std::to_string(i);
        write_file(dir / (id + ".json"), job.dump());
        const int rc = run_quiet(quote(cli) + " generate --job " + quote(dir / (id + ".json")) + " --out " + quote(dir / id));
        v.require(rc == 0, id + ": CLI exited " + std::to_string(rc));
        if (rc != 0) continue;
        const json cli_meta = parse_json_document(read_file(dir / id / "result.json"));

        // the service starts from its default draft; replace it wholesale
        json patch = job;
        patch["concept_op"]["block"] = nullptr;
        const std::string sid = json::parse(service.handle({"POST", "/sessions", {}, ""}).body)["id"];
        const HttpResponse put = service.handle({"PUT", "/sessions/" + sid + "/job", {}, patch.dump()});
        v.require(put.status == 200, id + ": service rejected job: " + put.body);
        const HttpResponse gen = service.handle({"POST", "/sessions/" + sid + "/generate", {}, ""});
        v.require(gen.status == 200, id + ": service generate " + std::to_string(gen.status));
        if (gen.status != 200) continue;
        const json svc_meta = json::parse(gen.body);
        v.require(svc_meta["latent_digest"] == cli_meta["latent_digest"], id + ": latent digests differ");
        v.require(svc_meta["job_digest"] == cli_meta["job_digest"], id + ": job digests differ");

        const GenerationJob parsed = job_from_json(job);
        manifest.entries.push_back(
            ManifestEntry{id, id, parsed, std::stoull(cli_meta["latent_digest"].get<std::string>(), nullptr, 16)});
    }
    write_file(dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
    const ReplayReport report = replay_manifest(dir / "manifest.json");
    v.require(report.replayed == 10 && report.matched == 10,
              std::to_string(report.matched) + "/" + std::to_string(report.replayed) + " replayed byte-equal");
    v.require(run_quiet(quote(cli) + " replay --manifest " + quote(dir / "manifest.json")) == 0, "CLI replay failed");
    fs::remove_all(dir);
    return v.outcome("10 jobs: CLI == service digests, manifest replays byte-equal");
}

// 8 ---------------------------------------------------------------------------

Region from_oracle(oracle::Region3 r) {
    switch (r) {
        case oracle::Region3::desert: return Region::desert;
        case oracle::Region3::ambiguous: return Region::ambiguous;
        case oracle::Region3::meaningful: return Region::meaningful;
    }
    return Region::desert;
}

Outcome field_maps() {
    std::mt19937_64 rng(8008);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Verdict v;
    for (int i = 0; i < 1000; ++i) {
        double lo = unit(rng), hi = unit(rng);
        if (lo > hi) std::swap(lo, hi);
        if (lo == hi) hi = std::nextafter(hi, 2.0);
        // bias some scores onto the thresholds themselves
        const double s = i % 10 == 0 ? lo : i % 10 == 1 ? hi : unit(rng);
        v.require(classify(s, lo, hi) == from_oracle(oracle::classify(s, lo, hi)), "classification of " + fmt(s));
    }
    for (int arity = 2; arity <= 4; ++arity) {
        for (int res = 2; res <= 9; ++res) {
            const auto grid = sample_grid(arity, res);
            const auto closed = oracle::choose(res - 1 + arity - 1, arity - 1);
            v.require(grid.size() == closed && oracle::lattice(arity, res).size() == closed &&
                          lattice_point_count(arity, res) == closed,
                      "grid count arity " + std::to_string(arity) + " resolution " + std::to_string(res));
        }
    }
    const fs::path dir = oracle::scratch_dir("acceptance-fieldmap");
    FieldMapRequest req;
    req.job_template.prompts = {"a heron", "a kettle", "a comet"};
    req.resolution = 4;
    const FieldMap map = build_field_map(req);
    export_field_map(map, dir / "a.fieldmap.json");
    const FieldMap back = import_field_map(dir / "a.fieldmap.json");
    v.require(back == map, "imported map differs");
    export_field_map(back, dir / "b.fieldmap.json");
    v.require(read_file(dir / "a.fieldmap.json") == read_file(dir / "b.fieldmap.json"), "re-export not byte-identical");
    fs::remove_all(dir);
    return v.outcome("1000 scores, 24 grid counts, round trip byte-identical");
}

// 9 ---------------------------------------------------------------------------

Outcome adapter_planning() {
    const AdapterConfig config = parse_adapter_config(R"({
        "model_ref": "acceptance-absent-model",
        "cross_attention_block_ids": ["down.0.attn2", "down.1.attn2", "mid.attn2", "up.1.attn2"],
        "control_layer_ids": ["cn.down.0", "cn.mid"]
    })");
    Verdict v;
    int plans = 0;
    for (Mode mode : {Mode::query_wise, Mode::feature_wise}) {
        for (std::size_t controls : {0u, 1u, 2u}) {
            GenerationJob job = blend_job("a", "b", 0.3, mode, 0);
            for (std::size_t c = 0; c < controls; ++c) job.controls.push_back("edge:" + std::to_string(c));
            if (controls) {
                job.shape_registration = HookRegistration{HookSite{SiteKind::shape_bias, std::nullopt},
                                                          OperatorSpec::affine(Weights::one_hot(controls, 0))};
            }
            std::vector<std::pair<SiteKind, std::string>> want;
            if (mode == Mode::feature_wise) {
                want.emplace_back(SiteKind::feature_embedding, "text_encoder.output");
            } else {
                for (const auto& id : config.cross_attention_block_ids) want.emplace_back(SiteKind::concept_query, id);
            }
            if (controls) {
                for (const auto& id : config.control_layer_ids) want.emplace_back(SiteKind::shape_bias, id);
            }
            const AttachmentPlan plan = plan_attachments(config, job);
            bool same = plan.size() == want.size();
            for (std::size_t i = 0; same && i < plan.size(); ++i) {
                same = plan[i].kind == want[i].first && plan[i].target_id == want[i].second &&
                       plan[i].attach == AttentionAttach::post_output_projection;
            }
            v.require(same, std::string(to_string(mode)) + " with " + std::to_string(controls) + " controls");
            ++plans;

            clear_external_runtime();
            try {
                generate_external(config, job);
                v.require(false, "model-absent generation returned");
            } catch (const Error& e) {
                v.require(e.code() == ErrorCode::BackendUnavailable, std::string("wrong error: ") + e.what());
            }
        }
    }
    return v.outcome(std::to_string(plans) + " plans match; model-absent runs raise BackendUnavailable");
}

struct Criterion {
    int number;
    const char* name;
    double budget_s;  // 0 means no budget
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";
    const std::vector<Criterion> criteria{
        {1, "pass-through fidelity", 5.0, pass_through},
        {2, "endpoint collapse", 10.0, endpoint_collapse},
        {3, "mid-path divergence", 10.0, midpoint_divergence},
        {4, "operator algebra", 30.0, operator_algebra},
        {5, "hook counter exactness", 0.0, hook_counters},
        {6, "shape-bias composition", 0.0, shape_composition},
        {7, "determinism and replay", 10.0, [&] { return determinism(cli); }},
        {8, "field map correctness", 5.0, field_maps},
        {9, "adapter planning", 2.0, adapter_planning},
    };
    int failed = 0;
    for (const Criterion& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget_s > 0 && secs >= c.budget_s) {
            out.ok = false;
            out.detail += "; over the " + fmt(c.budget_s) + " s budget";
        }
        char timing[32];
        std::snprintf(timing, sizeof timing, "%.2fs", secs);
        std::cout << (out.ok ? "PASS" : "FAIL") << "  " << c.number << ". " << c.name << "  [" << timing << "]  "
                  << out.detail << std::endl;
        if (!out.ok) ++failed;
    }
    std::cout << (failed ? std::to_string(failed) + " of 9 criteria failed" : std::string("all 9 criteria passed"))
              << std::endl;
    return failed ? 1 : 0;
}
