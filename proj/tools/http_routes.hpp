#pragma once
// HTTP routes of `platalloc serve`, shared with the endpoint tests.
#include <cstdint>
#include <mutex>
#include <string>

// Eigen (via service.hpp) must precede httplib.h, which pulls in <resolv.h> and its `_res` macro.
#include "platalloc/service.hpp"

#include <httplib.h>

namespace platalloc::http {

namespace svc = platalloc::service;
using svc::json;

inline void add_cors(httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
}

inline void send_error(httplib::Response& res, const std::exception& e) {
    res.status = svc::http_status(svc::classify_error(e));
    res.set_content(svc::error_document(e).dump(2) + "\n", "application/json");
}

inline void send_document(httplib::Response& res, const std::string& command, const json& doc,
                          const std::string& format) {
    res.set_content(svc::render(command, doc, format),
                    format == "csv" ? "text/csv; charset=utf-8" : "application/json");
}

inline std::string query_format(const httplib::Request& req) {
    return req.has_param("format") ? req.get_param_value("format") : "json";
}

/// GET /solve, /curve, /tables and POST /simulate with permissive CORS headers.
inline void install_routes(httplib::Server& server, unsigned threads) {
    server.set_pre_routing_handler([](const httplib::Request&, httplib::Response& res) {
        add_cors(res);
        return httplib::Server::HandlerResponse::Unhandled;
    });
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    const auto get_route = [&server](const char* path, const char* command, json (*run)(const json&)) {
        server.Get(path, [=](const httplib::Request& req, httplib::Response& res) {
            try {
                const auto format = query_format(req);
                if (format != "json" && format != "csv")
                    throw platalloc::ValidationError("unknown format '" + format + "'");
                send_document(res, command, run(svc::request_from_query(req.params)), format);
            } catch (const json::exception& e) {
                send_error(res, platalloc::ValidationError(e.what()));
            } catch (const std::exception& e) {
                send_error(res, e);
            }
        });
    };
    get_route("/solve", "solve", &svc::run_solve);
    get_route("/curve", "curve", &svc::run_curve);
    get_route("/tables", "tables", &svc::run_tables);

    server.Post("/simulate", [threads](const httplib::Request& req, httplib::Response& res) {
        try {
            const json body = req.body.empty() ? json::object() : json::parse(req.body);
            const bool stream = req.has_param("stream") && req.get_param_value("stream") == "1";
            if (!stream) {
                send_document(res, "simulate", svc::run_simulate(body, threads, {}, svc::kHttpMaxReps),
                              "json");
                return;
            }
            // Validate before committing to a 200 streaming response.
            const auto parsed = svc::parse_simulate(body);
            if (parsed.reps > svc::kHttpMaxReps)
                throw platalloc::ValidationError("reps exceeds the per-request cap of " +
                                                 std::to_string(svc::kHttpMaxReps));
            res.set_chunked_content_provider(
                "application/x-ndjson", [body, threads](std::size_t, httplib::DataSink& sink) {
                    std::mutex write_mutex;
                    const auto progress = [&](std::int64_t done) {
                        const auto line = json{{"progress", done}}.dump() + "\n";
                        std::lock_guard lock(write_mutex);
                        sink.write(line.data(), line.size());
                    };
                    std::string last;
                    try {
                        last = json{{"result", svc::run_simulate(body, threads, progress)}}.dump() + "\n";
                    } catch (const std::exception& e) {
                        last = svc::error_document(e).dump() + "\n";
                    }
                    sink.write(last.data(), last.size());
                    sink.done();
                    return true;
                });
        } catch (const json::exception& e) {
            send_error(res, platalloc::ValidationError(std::string("malformed JSON body: ") + e.what()));
        } catch (const std::exception& e) {
            send_error(res, e);
        }
    });
}

}  // namespace platalloc::http
