#pragma once

// Session-based HTTP facade over the pipeline and the field mapper.
//
// Routing lives in ExplorerService::handle so it can be driven without a
// socket; serve() binds it to cpp-httplib.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "latentdiff/field_mapper.hpp"
#include "latentdiff/sd_adapter.hpp"

namespace latentdiff {

struct ServiceOptions {
    std::size_t fieldmap_resolution_cap = 33;
    std::size_t workers = 0;  // 0: hardware concurrency
    std::optional<std::filesystem::path> state_file;
    std::string cors_origin;
    /// Backend ids served by an external runtime, keyed by job "backend".
    std::map<std::string, AdapterConfig> external_backends;
};

struct HttpRequest {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
};

struct HttpResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
    std::map<std::string, std::string> headers;
};

/// The draft a new session starts with.
nlohmann::json default_draft();

nlohmann::json operator_catalog();

class ExplorerService {
public:
    explicit ExplorerService(ServiceOptions options = {});
    ~ExplorerService();
    ExplorerService(const ExplorerService&) = delete;
    ExplorerService& operator=(const ExplorerService&) = delete;

    HttpResponse handle(const HttpRequest& request);

    const ServiceOptions& options() const noexcept { return options_; }
    std::size_t session_count() const;

private:
    struct Session;
    struct StoredResult;

    HttpResponse create_session();
    HttpResponse get_session(const std::string& id);
    HttpResponse update_draft(const std::string& id, const std::string& body);
    HttpResponse generate(const std::string& id);
    HttpResponse get_fieldmap(const std::string& id, const std::map<std::string, std::string>& query);
    HttpResponse get_result(const std::string& rid);
    HttpResponse get_preview(const std::string& rid);

    std::shared_ptr<Session> find_session(const std::string& id) const;
    std::shared_ptr<StoredResult> find_result(const std::string& rid) const;
    /// Parses and validates a draft; throws Error with a field path.
    GenerationJob check_draft(const nlohmann::json& draft) const;
    HookCounters predict(const GenerationJob& job) const;
    GenerationResult run_bounded(const GenerationJob& job);
    std::string store_result(const std::string& session_id, const GenerationJob& job, GenerationResult result,
                             std::optional<std::string> rid = std::nullopt);

    void append_state(const nlohmann::json& record);
    void replay_state();

    ServiceOptions options_;
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// cpp-httplib server forwarding every request to an ExplorerService.
class HttpServer {
public:
    explicit HttpServer(ExplorerService& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Port 0 picks a free port. Returns the bound port, or -1.
    int bind(const std::string& host, int port);
    /// Blocks until stop() is called.
    bool listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Binds and blocks. Returns false when the port cannot be bound.
bool serve(ExplorerService& service, const std::string& host, int port);

}  // namespace latentdiff
