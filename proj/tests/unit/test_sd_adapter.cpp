#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "latentdiff/error.hpp"
#include "latentdiff/job_io.hpp"
#include "latentdiff/sd_adapter.hpp"
#include "latentdiff/tensor_io.hpp"
#include "oracles.hpp"

using namespace latentdiff;

namespace {

const char* kAdapter = R"({
    "model_ref": "sd15-controlnet",
    "cross_attention_block_ids": ["down.1.attn2", "mid.attn2", "up.2.attn2"],
    "control_layer_ids": ["cn.down.0", "cn.down.1", "cn.mid"],
    "device": {"unet": "cuda:0"}
})";

Error schema_error_of(std::string_view text) {
    try {
        parse_adapter_config(text);
    } catch (const Error& e) {
        return e;
    }
    FAIL("config should have been rejected");
    return Error(ErrorCode::ValidationError, "");
}

GenerationJob make_job(Mode mode, std::size_t prompts, std::size_t controls) {
    GenerationJob job;
    job.mode = mode;
    for (std::size_t i = 0; i < prompts; ++i) job.prompts.push_back("p" + std::to_string(i));
    for (std::size_t i = 0; i < controls; ++i) job.controls.push_back("c" + std::to_string(i));
    const SiteKind kind = mode == Mode::query_wise ? SiteKind::concept_query : SiteKind::feature_embedding;
    job.concept_registration =
        HookRegistration{HookSite{kind, std::nullopt}, OperatorSpec::affine(Weights::one_hot(prompts, 0))};
    if (controls) {
        job.shape_registration = HookRegistration{HookSite{SiteKind::shape_bias, std::nullopt},
                                                  OperatorSpec::affine(Weights::one_hot(controls, 0))};
    }
    return job;
}

class FakeRuntime final : public ExternalRuntime {
public:
    std::string_view name() const override { return "fake"; }
    Output execute(const AdapterConfig&, const std::filesystem::path&, const AttachmentPlan& plan,
                   const GenerationJob& job) override {
        PreviewImage img;
        img.width = img.height = 1;
        img.pixels = {7};
        return Output{LatentTensor::vector({1.0f, 2.0f}), img, predict_external_counters(plan, job.steps)};
    }
};

}  // namespace

TEST_CASE("adapter config parses") {
    const AdapterConfig c = parse_adapter_config(kAdapter);
    CHECK(c.model_ref == "sd15-controlnet");
    CHECK(c.attention_attach == AttentionAttach::post_output_projection);
    CHECK(c.cross_attention_block_ids.size() == 3);
    CHECK(c.device.at("unet") == "cuda:0");
    CHECK(adapter_config_from_json(adapter_config_to_json(c)) == c);
}

TEST_CASE("adapter config schema errors") {
    Error e = schema_error_of(R"({"model_ref":"m","cross_attention_block_ids":["a","a"],"control_layer_ids":["c"]})");
    CHECK(e.code() == ErrorCode::SchemaError);
    CHECK(e.field() == "cross_attention_block_ids[1]");
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);

    e = schema_error_of(
        R"({"model_ref":"m","attention_attach":"pre_softmax","cross_attention_block_ids":["a"],"control_layer_ids":["c"]})");
    CHECK(e.field() == "attention_attach");
    CHECK(std::string(e.what()).find("post_output_projection") != std::string::npos);
    CHECK(std::string(e.what()).find("pre_output_projection") != std::string::npos);

    CHECK(schema_error_of(R"({"model_ref":"m","cross_attention_block_ids":["a"],"control_layer_ids":["c"],"x":1})")
              .field() == "x");
    CHECK(schema_error_of(R"({"cross_attention_block_ids":["a"],"control_layer_ids":["c"]})").field() == "model_ref");
    CHECK(schema_error_of(R"({"model_ref":"m","cross_attention_block_ids":[],"control_layer_ids":["c"]})").field() ==
          "cross_attention_block_ids");
    CHECK(schema_error_of(R"({"model_ref":"m",})").code() == ErrorCode::ParseError);
}

TEST_CASE("attachment plans match an enumeration oracle") {
    const AdapterConfig c = parse_adapter_config(kAdapter);
    for (Mode mode : {Mode::query_wise, Mode::feature_wise}) {
        for (std::size_t controls : {0u, 1u, 2u}) {
            const GenerationJob job = make_job(mode, 2, controls);
            const AttachmentPlan plan = plan_attachments(c, job);

            // oracle: concept attachments first, then one shape attachment per control layer
            std::vector<std::pair<SiteKind, std::string>> expected;
            if (mode == Mode::feature_wise) {
                expected.emplace_back(SiteKind::feature_embedding, "text_encoder.output");
            } else {
                for (const auto& id : c.cross_attention_block_ids) expected.emplace_back(SiteKind::concept_query, id);
            }
            if (controls) {
                for (const auto& id : c.control_layer_ids) expected.emplace_back(SiteKind::shape_bias, id);
            }
            REQUIRE(plan.size() == expected.size());
            for (std::size_t i = 0; i < plan.size(); ++i) {
                CHECK(plan[i].kind == expected[i].first);
                CHECK(plan[i].target_id == expected[i].second);
            }
            const HookCounters hc = predict_external_counters(plan, 5);
            CHECK(hc.concept_query == (mode == Mode::query_wise ? 15u : 0u));
            CHECK(hc.feature_embedding == (mode == Mode::feature_wise ? 5u : 0u));
            CHECK(hc.shape_bias == (controls ? 15u : 0u));
        }
    }
}

TEST_CASE("single-block registrations and bad indices") {
    const AdapterConfig c = parse_adapter_config(kAdapter);
    GenerationJob job = make_job(Mode::query_wise, 2, 1);
    job.concept_registration->site.block_index = 1;
    job.shape_registration->site.block_index = 0;
    const AttachmentPlan plan = plan_attachments(c, job);
    REQUIRE(plan.size() == 2);
    CHECK(plan[0].target_id == "mid.attn2");
    CHECK(plan[1].target_id == "cn.down.0");
    job.concept_registration->site.block_index = 9;
    CHECK_THROWS_AS(plan_attachments(c, job), Error);

    GenerationJob wrong = make_job(Mode::query_wise, 2, 0);
    wrong.prompts.push_back("p2");
    try {
        plan_attachments(c, wrong);
        FAIL("expected ArityMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ArityMismatch);
    }
}

TEST_CASE("model-absent execution fails cleanly and still logs the plan") {
    clear_external_runtime();
    const AdapterConfig c = parse_adapter_config(kAdapter);
    std::ostringstream log;
    try {
        generate_external(c, make_job(Mode::query_wise, 2, 1), &log);
        FAIL("expected BackendUnavailable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BackendUnavailable);
    }
    const auto logged = parse_json_document(log.str());
    CHECK(logged.size() == 6);
    CHECK(logged[0]["target"] == "down.1.attn2");
    CHECK(logged[0]["attach"] == "post_output_projection");
}

TEST_CASE("registered runtimes execute when the model is present") {
    const auto dir = oracle::scratch_dir("models");
    std::filesystem::create_directories(dir / "sd15-controlnet");
    setenv("LATENTDIFF_MODEL_DIR", dir.c_str(), 1);
    const AdapterConfig c = parse_adapter_config(kAdapter);
    CHECK(resolve_model_path(c) == dir / "sd15-controlnet");

    CHECK(probe_external_runtime(c) == nullptr);
    register_external_runtime([] { return std::make_shared<FakeRuntime>(); });
    REQUIRE(probe_external_runtime(c) != nullptr);
    const GenerationResult r = generate_external(c, make_job(Mode::query_wise, 2, 2));
    CHECK(r.hook_counters.concept_query == 15);
    CHECK(r.hook_counters.shape_bias == 15);
    CHECK(r.latent_digest == LatentTensor::vector({1.0f, 2.0f}).digest());

    std::filesystem::remove_all(dir);
    CHECK(probe_external_runtime(c) == nullptr);
    clear_external_runtime();
    unsetenv("LATENTDIFF_MODEL_DIR");
}
