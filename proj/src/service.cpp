#include "latentdiff/service.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <mutex>
#include <semaphore>
#include <shared_mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "latentdiff/error.hpp"
#include "latentdiff/hash.hpp"
#include "latentdiff/job_io.hpp"

namespace latentdiff {

using nlohmann::json;

namespace {

std::string now_iso8601() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string make_id(char prefix, std::uint64_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c-%06llu", prefix, static_cast<unsigned long long>(n));
    return buf;
}

std::uint64_t id_number(const std::string& id) {
    if (id.size() < 3) return 0;
    try {
        return std::stoull(id.substr(2));
    } catch (const std::exception&) {
        return 0;
    }
}

HttpResponse json_response(int status, const json& body) { return {status, body.dump(), "application/json", {}}; }

int status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::BackendUnavailable:
        case ErrorCode::CaptionClientUnavailable: return 503;
        case ErrorCode::ParseError: return 400;
        case ErrorCode::IoError: return 500;
        default: return 422;
    }
}

HttpResponse error_response(int status, std::string_view code, const std::string& message, const std::string& field = {}) {
    return json_response(status, json{{"error", code}, {"message", message}, {"field", field.empty() ? json(nullptr) : json(field)}});
}

HttpResponse error_response(const Error& e) {
    return error_response(status_for(e.code()), to_string(e.code()), e.detail(), e.field());
}

HttpResponse not_found(const std::string& what) { return error_response(404, "NotFound", what + " not found"); }

}  // namespace

json default_draft() {
    return json{{"version", kJobVersion},
                {"backend", "mock-v1"},
                {"seed", 0},
                {"steps", 5},
                {"mode", "query_wise"},
                {"prompts", {"a photo of a pelican"}},
                {"controls", json::array()},
                {"concept_op", {{"kind", "identity"}}},
                {"shape_op", nullptr}};
}

json operator_catalog() {
    const json alpha{{"type", "number"}, {"description", "blend toward the second input"}};
    const json schedule{{"type", "array"}, {"items", "weights or alpha per denoising step"}};
    return json{{"version", 1},
                {"operators",
                 json::array({json{{"kind", "identity"}, {"arity", 1}, {"parameters", json::object()}},
                              json{{"kind", "lerp"},
                                   {"arity", 2},
                                   {"parameters", {{"alpha", alpha}, {"weights", {{"type", "array"}, {"length", 2}}},
                                                   {"schedule", schedule}}}},
                              json{{"kind", "slerp"},
                                   {"arity", 2},
                                   {"parameters", {{"alpha", alpha}, {"weights", {{"type", "array"}, {"length", 2}}},
                                                   {"schedule", schedule}}}},
                              json{{"kind", "affine"},
                                   {"arity", "n"},
                                   {"min_arity", 1},
                                   {"parameters",
                                    {{"weights", {{"type", "array"}, {"constraint", "sum to 1 within 1e-6"}}},
                                     {"schedule", schedule}}}}})}};
}

struct ExplorerService::Session {
    std::string id;
    std::mutex mutex;  // single writer per session
    json draft;
    std::vector<std::string> results;
    std::string created;
    std::string updated;

    json to_json() const {
        return json{{"id", id}, {"draft", draft}, {"results", results}, {"created", created}, {"updated", updated}};
    }
};

struct ExplorerService::StoredResult {
    std::string id;
    std::string session;
    std::mutex mutex;
    std::string status = "pending";  // pending | done | failed
    json meta;
    std::string preview;
};

struct ExplorerService::Impl {
    explicit Impl(std::size_t workers) : slots(static_cast<std::ptrdiff_t>(workers)) {}

    mutable std::shared_mutex sessions_mutex;
    std::map<std::string, std::shared_ptr<Session>> sessions;
    std::uint64_t next_session = 1;

    mutable std::shared_mutex results_mutex;
    std::map<std::string, std::shared_ptr<StoredResult>> results;
    std::uint64_t next_result = 1;

    std::mutex fieldmap_mutex;
    std::map<std::string, std::string> fieldmaps;

    std::mutex state_mutex;
    std::ofstream state;

    std::counting_semaphore<> slots;

    std::mutex async_mutex;
    std::vector<std::thread> async_jobs;
};

ExplorerService::ExplorerService(ServiceOptions options) : options_(std::move(options)) {
    if (options_.workers == 0) options_.workers = std::max(1u, std::thread::hardware_concurrency());
    impl_ = std::make_unique<Impl>(options_.workers);
    if (options_.state_file) {
        replay_state();
        impl_->state.open(*options_.state_file, std::ios::app);
        if (!impl_->state) {
            throw Error(ErrorCode::IoError, "cannot open state file " + options_.state_file->string());
        }
    }
}

ExplorerService::~ExplorerService() {
    std::lock_guard lock(impl_->async_mutex);
    for (std::thread& t : impl_->async_jobs) t.join();
}

std::size_t ExplorerService::session_count() const {
    std::shared_lock lock(impl_->sessions_mutex);
    return impl_->sessions.size();
}

// --- routing -------------------------------------------------------------------

HttpResponse ExplorerService::handle(const HttpRequest& request) {
    std::vector<std::string> parts;
    {
        std::stringstream ss(request.path);
        for (std::string part; std::getline(ss, part, '/');) {
            if (!part.empty()) parts.push_back(part);
        }
    }
    const std::string& m = request.method;
    const auto is = [&](std::size_t n, std::initializer_list<const char*> fixed) {
        if (parts.size() != n) return false;
        std::size_t i = 0;
        for (const char* f : fixed) {
            if (f && parts[i] != f) return false;
            ++i;
        }
        return true;
    };

    const HttpResponse wrong{405, "", "application/json", {}};
    HttpResponse res;
    bool matched = true;
    try {
        if (m == "OPTIONS") {
            res = {204, "", "text/plain", {}};
        } else if (is(1, {"health"})) {
            res = m == "GET" ? json_response(200, json{{"status", "ok"}}) : wrong;
        } else if (is(1, {"operators"})) {
            res = m == "GET" ? json_response(200, operator_catalog()) : wrong;
        } else if (is(1, {"sessions"})) {
            res = m == "POST" ? create_session() : wrong;
        } else if (is(2, {"sessions", nullptr})) {
            res = m == "GET" ? get_session(parts[1]) : wrong;
        } else if (is(3, {"sessions", nullptr, "job"})) {
            res = m == "PUT" ? update_draft(parts[1], request.body) : wrong;
        } else if (is(3, {"sessions", nullptr, "generate"})) {
            res = m == "POST" ? generate(parts[1]) : wrong;
        } else if (is(3, {"sessions", nullptr, "fieldmap"})) {
            res = m == "GET" ? get_fieldmap(parts[1], request.query) : wrong;
        } else if (is(2, {"results", nullptr})) {
            res = m == "GET" ? get_result(parts[1]) : wrong;
        } else if (is(3, {"results", nullptr, "preview"})) {
            res = m == "GET" ? get_preview(parts[1]) : wrong;
        } else {
            matched = false;
        }
    } catch (const Error& e) {
        res = error_response(e);
    } catch (const std::exception& e) {
        res = error_response(500, "InternalError", e.what());
    }
    if (!matched) res = error_response(404, "NotFound", "no route for " + request.path);
    if (res.status == 405 && res.body.empty()) {
        res = error_response(405, "MethodNotAllowed", m + " is not supported on " + request.path);
    }
    if (!options_.cors_origin.empty()) {
        res.headers["Access-Control-Allow-Origin"] = options_.cors_origin;
        res.headers["Access-Control-Allow-Methods"] = "GET, POST, PUT, OPTIONS";
        res.headers["Access-Control-Allow-Headers"] = "Content-Type";
        res.headers["Vary"] = "Origin";
    }
    return res;
}

// --- helpers -------------------------------------------------------------------

std::shared_ptr<ExplorerService::Session> ExplorerService::find_session(const std::string& id) const {
    std::shared_lock lock(impl_->sessions_mutex);
    const auto it = impl_->sessions.find(id);
    return it == impl_->sessions.end() ? nullptr : it->second;
}

std::shared_ptr<ExplorerService::StoredResult> ExplorerService::find_result(const std::string& rid) const {
    std::shared_lock lock(impl_->results_mutex);
    const auto it = impl_->results.find(rid);
    return it == impl_->results.end() ? nullptr : it->second;
}

GenerationJob ExplorerService::check_draft(const json& draft) const {
    GenerationJob job = job_from_json(draft);
    if (const auto ext = options_.external_backends.find(job.backend_id); ext != options_.external_backends.end()) {
        if (job.steps < 1) throw Error(ErrorCode::ValidationError, "steps must be positive", "steps");
        plan_attachments(ext->second, job);  // arity checks with field paths
        const auto steps = static_cast<std::size_t>(job.steps);
        if (job.concept_registration) job.concept_registration->spec.validate(job.prompts.size(), steps);
        if (job.shape_registration) job.shape_registration->spec.validate(job.controls.size(), steps);
        return job;
    }
    std::shared_ptr<const Backend> backend;
    try {
        backend = make_backend(job.backend_id);
    } catch (const Error& e) {
        throw Error(ErrorCode::ValidationError, e.detail(), "backend");
    }
    validate_job(job, backend->topology());
    return job;
}

HookCounters ExplorerService::predict(const GenerationJob& job) const {
    if (const auto ext = options_.external_backends.find(job.backend_id); ext != options_.external_backends.end()) {
        return predict_external_counters(plan_attachments(ext->second, job), job.steps);
    }
    return build_pipeline(make_backend(job.backend_id), job).predict_counters(job.steps);
}

GenerationResult ExplorerService::run_bounded(const GenerationJob& job) {
    impl_->slots.acquire();
    struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
    } release{impl_->slots};
    return run_generation(job);
}

std::string ExplorerService::store_result(const std::string& session_id, const GenerationJob& job,
                                          GenerationResult result, std::optional<std::string> rid) {
    auto stored = std::make_shared<StoredResult>();
    {
        std::unique_lock lock(impl_->results_mutex);
        if (rid) {
            impl_->next_result = std::max(impl_->next_result, id_number(*rid) + 1);
        } else {
            rid = make_id('r', impl_->next_result++);
        }
        stored->id = *rid;
        stored->session = session_id;
        impl_->results[*rid] = stored;
    }
    json meta = result_to_json(result);
    meta["result_id"] = *rid;
    meta["session_id"] = session_id;
    meta["backend"] = job.backend_id;
    meta["preview"] = "/results/" + *rid + "/preview";
    meta.erase("final_latent");
    std::lock_guard lock(stored->mutex);
    stored->status = "done";
    meta["status"] = stored->status;
    stored->meta = std::move(meta);
    stored->preview = result.preview.to_pgm();
    return *rid;
}

// --- handlers ------------------------------------------------------------------

HttpResponse ExplorerService::create_session() {
    auto s = std::make_shared<Session>();
    s->draft = default_draft();
    s->created = s->updated = now_iso8601();
    {
        std::unique_lock lock(impl_->sessions_mutex);
        s->id = make_id('s', impl_->next_session++);
        impl_->sessions[s->id] = s;
    }
    append_state(json{{"op", "create"}, {"id", s->id}, {"draft", s->draft}, {"at", s->created}});
    std::lock_guard lock(s->mutex);
    return json_response(201, s->to_json());
}

HttpResponse ExplorerService::get_session(const std::string& id) {
    const auto s = find_session(id);
    if (!s) return not_found("session " + id);
    std::lock_guard lock(s->mutex);
    return json_response(200, s->to_json());
}

HttpResponse ExplorerService::update_draft(const std::string& id, const std::string& body) {
    const auto s = find_session(id);
    if (!s) return not_found("session " + id);
    const json patch = parse_json_document(body);
    if (!patch.is_object()) return error_response(422, "ValidationError", "patch must be a JSON object");

    std::lock_guard lock(s->mutex);
    json draft = s->draft;
    draft.merge_patch(patch);
    const GenerationJob job = check_draft(draft);  // throws before anything is written
    const HookCounters predicted = predict(job);
    s->draft = std::move(draft);
    s->updated = now_iso8601();
    append_state(json{{"op", "update"}, {"id", id}, {"draft", s->draft}, {"at", s->updated}});
    json out = s->to_json();
    out["predicted_counters"] = counters_to_json(predicted);
    return json_response(200, out);
}

HttpResponse ExplorerService::generate(const std::string& id) {
    const auto s = find_session(id);
    if (!s) return not_found("session " + id);
    std::lock_guard lock(s->mutex);
    const GenerationJob job = check_draft(s->draft);

    if (const auto ext = options_.external_backends.find(job.backend_id); ext != options_.external_backends.end()) {
        if (!probe_external_runtime(ext->second)) {
            return error_response(503, to_string(ErrorCode::BackendUnavailable),
                                  "no diffusion runtime or model available for backend '" + job.backend_id + "'");
        }
        auto stored = std::make_shared<StoredResult>();
        {
            std::unique_lock rlock(impl_->results_mutex);
            stored->id = make_id('r', impl_->next_result++);
            stored->session = id;
            stored->meta = json{{"result_id", stored->id}, {"session_id", id}, {"status", "pending"}};
            impl_->results[stored->id] = stored;
        }
        s->results.push_back(stored->id);
        const AdapterConfig config = ext->second;
        std::lock_guard alock(impl_->async_mutex);
        impl_->async_jobs.emplace_back([this, stored, config, job] {
            impl_->slots.acquire();
            json meta;
            std::string preview;
            std::string status = "done";
            try {
                GenerationResult r = generate_external(config, job);
                meta = result_to_json(r);
                meta.erase("final_latent");
                meta["preview"] = "/results/" + stored->id + "/preview";
                preview = r.preview.to_pgm();
            } catch (const Error& e) {
                status = "failed";
                meta = json{{"error", to_string(e.code())}, {"message", e.detail()}};
            }
            impl_->slots.release();
            std::lock_guard rl(stored->mutex);
            meta["result_id"] = stored->id;
            meta["session_id"] = stored->session;
            meta["status"] = status;
            stored->status = status;
            stored->meta = std::move(meta);
            stored->preview = std::move(preview);
        });
        return json_response(202, json{{"result_id", stored->id}, {"status", "pending"}, {"poll", "/results/" + stored->id}});
    }

    GenerationResult result = run_bounded(job);
    const std::string rid = store_result(id, job, std::move(result));
    s->results.push_back(rid);
    s->updated = now_iso8601();
    append_state(json{{"op", "result"}, {"id", id}, {"rid", rid}, {"draft", s->draft}, {"at", s->updated}});
    const auto stored = find_result(rid);
    std::lock_guard rl(stored->mutex);
    return json_response(200, stored->meta);
}

HttpResponse ExplorerService::get_fieldmap(const std::string& id, const std::map<std::string, std::string>& query) {
    const auto s = find_session(id);
    if (!s) return not_found("session " + id);

    FieldMapRequest req;
    const auto param = [&](const char* key) -> std::optional<std::string> {
        const auto it = query.find(key);
        return it == query.end() ? std::nullopt : std::optional(it->second);
    };
    if (auto axis = param("axis")) {
        try {
            req.axis = field_axis_from_string(*axis);
        } catch (const Error& e) {
            throw Error(e.code(), e.detail(), "axis");
        }
    }
    const auto number = [&](const char* key, auto& out) {
        const auto v = param(key);
        if (!v) return;
        std::istringstream in(*v);
        std::remove_reference_t<decltype(out)> parsed{};
        if (!(in >> parsed) || !in.eof()) throw Error(ErrorCode::ValidationError, "not a number", key);
        out = parsed;
    };
    long long resolution = static_cast<long long>(req.resolution);
    number("resolution", resolution);
    if (resolution < 2 || static_cast<std::size_t>(resolution) > options_.fieldmap_resolution_cap) {
        return error_response(422, to_string(ErrorCode::BadResolution),
                              "resolution must be between 2 and " + std::to_string(options_.fieldmap_resolution_cap),
                              "resolution");
    }
    req.resolution = static_cast<std::size_t>(resolution);
    number("t_low", req.thresholds.low);
    number("t_high", req.thresholds.high);
    validate_thresholds(req.thresholds);
    req.workers = options_.workers;

    {
        std::lock_guard lock(s->mutex);
        req.job_template = check_draft(s->draft);
    }
    const std::string key = canonical_job_encoding(req.job_template) + "|" + std::string(to_string(req.axis)) + "|" +
                            std::to_string(req.resolution) + "|" + json(req.thresholds.low).dump() + "|" +
                            json(req.thresholds.high).dump();
    {
        std::lock_guard lock(impl_->fieldmap_mutex);
        if (const auto it = impl_->fieldmaps.find(key); it != impl_->fieldmaps.end()) {
            HttpResponse res{200, it->second, "application/json", {{"X-Cache", "hit"}}};
            return res;
        }
    }
    impl_->slots.acquire();
    std::string body;
    try {
        body = export_field_map_string(build_field_map(req));
    } catch (...) {
        impl_->slots.release();
        throw;
    }
    impl_->slots.release();
    std::lock_guard lock(impl_->fieldmap_mutex);
    impl_->fieldmaps.emplace(key, body);
    return HttpResponse{200, body, "application/json", {{"X-Cache", "miss"}}};
}

HttpResponse ExplorerService::get_result(const std::string& rid) {
    const auto r = find_result(rid);
    if (!r) return not_found("result " + rid);
    std::lock_guard lock(r->mutex);
    return json_response(200, r->meta);
}

HttpResponse ExplorerService::get_preview(const std::string& rid) {
    const auto r = find_result(rid);
    if (!r) return not_found("result " + rid);
    std::lock_guard lock(r->mutex);
    if (r->status == "pending") return json_response(202, json{{"result_id", rid}, {"status", "pending"}});
    if (r->status != "done") return error_response(404, "NotFound", "result " + rid + " has no preview");
    return HttpResponse{200, r->preview, "image/x-portable-graymap", {}};
}

// --- persistence ---------------------------------------------------------------

void ExplorerService::append_state(const json& record) {
    if (!options_.state_file) return;
    std::lock_guard lock(impl_->state_mutex);
    impl_->state << record.dump() << '\n';
    impl_->state.flush();
}

void ExplorerService::replay_state() {
    std::ifstream in(*options_.state_file);
    if (!in) return;  // first start
    for (std::string line; std::getline(in, line);) {
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object()) continue;  // torn trailing write
        const std::string op = rec.value("op", "");
        const std::string id = rec.value("id", "");
        if (op == "create") {
            auto s = std::make_shared<Session>();
            s->id = id;
            s->draft = rec.value("draft", default_draft());
            s->created = s->updated = rec.value("at", "");
            impl_->sessions[id] = s;
            impl_->next_session = std::max(impl_->next_session, id_number(id) + 1);
            continue;
        }
        const auto it = impl_->sessions.find(id);
        if (it == impl_->sessions.end()) continue;
        Session& s = *it->second;
        if (op == "update") {
            s.draft = rec.value("draft", s.draft);
            s.updated = rec.value("at", s.updated);
        } else if (op == "result") {
            const std::string rid = rec.value("rid", "");
            try {
                const GenerationJob job = job_from_json(rec.at("draft"));
                store_result(id, job, run_generation(job), rid);
                s.results.push_back(rid);
            } catch (const std::exception&) {
                // results from backends that are gone are dropped
            }
        }
    }
}

// --- HTTP binding --------------------------------------------------------------

struct HttpServer::Impl {
    explicit Impl(ExplorerService& s) : service(s) {}
    ExplorerService& service;
    httplib::Server server;
};

HttpServer::HttpServer(ExplorerService& service) : impl_(std::make_unique<Impl>(service)) {
    const std::size_t threads = std::max<std::size_t>(8, service.options().workers * 2);
    impl_->server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
        HttpRequest request{req.method, req.path, {}, req.body};
        for (const auto& [k, v] : req.params) request.query.emplace(k, v);
        HttpResponse out = impl_->service.handle(request);
        res.status = out.status;
        for (const auto& [k, v] : out.headers) res.set_header(k, v);
        if (out.status != 204) res.set_content(out.body, out.content_type);
    };
    impl_->server.Get(R"(/.*)", forward);
    impl_->server.Post(R"(/.*)", forward);
    impl_->server.Put(R"(/.*)", forward);
    impl_->server.Delete(R"(/.*)", forward);
    impl_->server.Options(R"(/.*)", forward);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
}

bool serve(ExplorerService& service, const std::string& host, int port) {
    HttpServer server(service);
    if (server.bind(host, port) < 0) return false;
    return server.listen();
}

}  // namespace latentdiff
