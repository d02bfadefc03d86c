#include <csignal>
#include <iostream>

#include "httplib.h"
#include "rainex/service.hpp"

namespace rainex::service {

namespace {

Params params_of(const httplib::Request& req) {
    Params p;
    for (const auto& [k, v] : req.params) p[k] = v;
    return p;
}

void reply(httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body.dump(), "application/json");
}

}  // namespace

void bind(httplib::Server& server, Service& service) {
    server.Get("/api/v1/frames", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.frames(params_of(req)));
    });
    server.Post("/api/v1/query", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.query(req.body));
    });
    server.Post("/api/v1/perturb", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.perturb(req.body));
    });
    server.Get("/api/v1/logs", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.logs(params_of(req)));
    });
    server.Get("/api/v1/importance", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.importance(params_of(req)));
    });
    server.Get("/api/v1/concepts", [&](const httplib::Request&, httplib::Response& res) {
        reply(res, service.concepts());
    });
}

namespace {
httplib::Server* g_server = nullptr;
extern "C" void stop_server(int) {
    if (g_server) g_server->stop();
}
}  // namespace

void serve(const config::PipelineConfig& config) {
    auto ws = std::make_shared<const pipeline::Workspace>(config);
    auto log = std::make_shared<SearchLog>(config.search_log_file());
    if (log->recovered_bytes())
        std::cerr << "search log: dropped " << log->recovered_bytes() << " bytes of a torn record\n";
    Service service(ws, log);
    httplib::Server server;
    bind(server, service);
    g_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    std::cerr << "serving /api/v1 on http://" << config.host << ":" << config.port << "\n";
    if (!server.listen(config.host, config.port)) {
        g_server = nullptr;
        throw Error("cannot listen on " + config.host + ":" + std::to_string(config.port));
    }
    g_server = nullptr;
}

}  // namespace rainex::service
