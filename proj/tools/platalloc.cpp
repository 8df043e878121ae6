// Command-line front end: solve, curve, tables, simulate, and an HTTP service.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "platalloc/service.hpp"
#include "http_routes.hpp"

#include <CLI11.hpp>

namespace svc = platalloc::service;
using svc::json;

namespace {

struct Globals {
    std::string format = "json";
    std::uint64_t seed = svc::kDefaultSeed;
    std::string out;
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
};

// Flags that were given (on the command line or via the environment) become request fields.
template <class T>
void put(json& req, const CLI::Option* opt, const char* key, const T& value) {
    if (opt->count() > 0) req[key] = value;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
        std::size_t used = 0;
        const int v = std::stoi(item, &used);
        if (used != item.size()) throw platalloc::ValidationError("bad integer '" + item + "'");
        out.push_back(v);
    }
    return out;
}

void emit(const Globals& g, const std::string& text) {
    if (g.out.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream file(g.out, std::ios::binary);
    if (!file) throw platalloc::ValidationError("cannot open output file '" + g.out + "'");
    file << text;
}

int fail(const std::exception& e) {
    std::cerr << svc::error_document(e).dump() << "\n";
    return svc::exit_code(svc::classify_error(e));
}

int serve(const std::string& host, int port, const std::string& static_dir, unsigned threads) {
    httplib::Server server;
    if (!static_dir.empty() && !server.set_mount_point("/", static_dir))
        throw platalloc::ValidationError("static directory '" + static_dir + "' does not exist");
    platalloc::http::install_routes(server, threads);
    std::cerr << "platalloc serving on http://" << host << ":" << port << "\n";
    if (!server.listen(host, port)) throw std::runtime_error("cannot listen on port " + std::to_string(port));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Minimax-variance allocation for three-period platform trials with a shared control."};
    app.footer(
        "Configuration precedence: command-line flags > PLATALLOC_* environment variables > defaults.\n"
        "Exit codes: 0 success, 2 invalid input, 3 solver or numerical failure.");
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--format", g.format, "Output format")
        ->check(CLI::IsMember({"json", "csv"}))
        ->envname("PLATALLOC_FORMAT");
    auto* seed_opt = app.add_option("--seed", g.seed, "Master seed for simulations")->envname("PLATALLOC_SEED");
    app.add_option("--out", g.out, "Write output to FILE instead of stdout")->envname("PLATALLOC_OUT");
    app.add_option("--threads", g.threads, "Worker threads for simulations")
        ->check(CLI::PositiveNumber)
        ->envname("PLATALLOC_THREADS");

    // Design flags shared by solve, tables and simulate.
    struct DesignFlags {
        std::string design_case = "unrestricted", mode = "cc";
        double r1 = 0, r2 = 0;
        CLI::Option *case_opt, *mode_opt, *r1_opt, *r2_opt;
        void add(CLI::App* cmd) {
            case_opt = cmd->add_option("--case", design_case, "unrestricted | fixed_r1 | fixed_r1_r2");
            r1_opt = cmd->add_option("--r1", r1, "Fraction of patients in period 1");
            r2_opt = cmd->add_option("--r2", r2, "Fraction of patients in period 2");
            mode_opt = cmd->add_option("--mode", mode, "cc (concurrent controls) | ncc (non-concurrent)")
                           ->envname("PLATALLOC_MODE");
        }
        void fill(json& req) const {
            put(req, case_opt, "case", design_case);
            put(req, r1_opt, "r1", r1);
            put(req, r2_opt, "r2", r2);
            put(req, mode_opt, "mode", mode);
        }
    };

    auto* solve_cmd = app.add_subcommand("solve", "Optimal allocation for a design case");
    DesignFlags solve_flags;
    solve_flags.add(solve_cmd);
    double solve_n = 1, solve_sigma = 1;
    auto* solve_n_opt = solve_cmd->add_option("--n", solve_n, "Total sample size (scales variances)");
    auto* solve_sigma_opt = solve_cmd->add_option("--sigma", solve_sigma, "Outcome standard deviation");

    auto* curve_cmd = app.add_subcommand("curve", "Optimal period-2 allocation as r2 varies");
    double curve_r1 = 0, curve_n = 1, curve_sigma = 1;
    std::string curve_mode = "both";
    std::int64_t curve_grid = 101;
    auto* curve_r1_opt = curve_cmd->add_option("--r1", curve_r1, "Fraction of patients in period 1")->required();
    auto* curve_mode_opt = curve_cmd->add_option("--mode", curve_mode, "cc | ncc | both");
    auto* curve_grid_opt = curve_cmd->add_option("--grid", curve_grid, "Number of r2 grid points (2..10000)");
    auto* curve_n_opt = curve_cmd->add_option("--n", curve_n, "Total sample size");
    auto* curve_sigma_opt = curve_cmd->add_option("--sigma", curve_sigma, "Outcome standard deviation");

    auto* tables_cmd = app.add_subcommand("tables", "Integer sample-size tables for three strategies");
    DesignFlags tables_flags;
    tables_flags.add(tables_cmd);
    std::int64_t tables_n = 0;
    std::string tables_rounding = "nearest";
    auto* tables_n_opt = tables_cmd->add_option("--n", tables_n, "Total sample size")->required();
    auto* tables_rounding_opt =
        tables_cmd->add_option("--rounding", tables_rounding, "nearest | largest-remainder");

    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo power / type-1 error of a design");
    std::string request_file;
    sim_cmd->add_option("--request", request_file, "JSON request file (same body as POST /simulate)");
    DesignFlags sim_flags;
    sim_flags.add(sim_cmd);
    std::int64_t sim_n = 0, sim_reps = 10000;
    std::string sim_strategy, sim_rounding, sim_control, sim_arm1, sim_arm2, sim_trend = "none",
                                                                         sim_inference = "t", sim_shifts;
    double sim_mu0 = 0, sim_sigma = 1, sim_alpha = 0.025, sim_level = 0.95, sim_slope = 0;
    std::vector<double> sim_theta;
    auto* sim_n_opt = sim_cmd->add_option("--n", sim_n, "Total sample size of a solved design");
    auto* sim_strategy_opt = sim_cmd->add_option("--strategy", sim_strategy, "one_to_one | sqrt_k | optimal");
    auto* sim_rounding_opt = sim_cmd->add_option("--rounding", sim_rounding, "nearest | largest-remainder");
    auto* sim_control_opt = sim_cmd->add_option("--control", sim_control, "Explicit control counts p1,p2,p3");
    sim_cmd->add_option("--arm1", sim_arm1, "Explicit arm-1 counts p1,p2,p3");
    sim_cmd->add_option("--arm2", sim_arm2, "Explicit arm-2 counts p1,p2,p3");
    auto* sim_mu0_opt = sim_cmd->add_option("--mu0", sim_mu0, "Control mean");
    auto* sim_theta_opt = sim_cmd->add_option("--theta", sim_theta, "Effect of both arms, or of arm 1 and arm 2")
                              ->expected(1, 2);
    auto* sim_sigma_opt = sim_cmd->add_option("--sigma", sim_sigma, "Outcome standard deviation");
    auto* sim_trend_opt = sim_cmd->add_option("--trend", sim_trend, "none | linear | step");
    sim_cmd->add_option("--slope", sim_slope, "Linear trend: shift at the end of enrollment");
    sim_cmd->add_option("--shifts", sim_shifts, "Step trend: per-period shifts s1,s2,s3");
    auto* sim_alpha_opt = sim_cmd->add_option("--alpha", sim_alpha, "One-sided significance level");
    auto* sim_level_opt = sim_cmd->add_option("--level", sim_level, "Two-sided confidence level");
    auto* sim_inference_opt = sim_cmd->add_option("--inference", sim_inference, "t (estimated sigma) | z (known sigma)");
    auto* sim_reps_opt = sim_cmd->add_option("--reps", sim_reps, "Replicates")->envname("PLATALLOC_REPS");

    auto* serve_cmd = app.add_subcommand("serve", "JSON-over-HTTP service for the explorer");
    int port = 8080;
    std::string host = "127.0.0.1", static_dir;
    serve_cmd->add_option("--port", port, "TCP port")->envname("PLATALLOC_PORT");
    serve_cmd->add_option("--host", host, "Bind address")->envname("PLATALLOC_HOST");
    serve_cmd->add_option("--static", static_dir, "Directory of static UI assets to mount at /");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(platalloc::ValidationError(e.what()));
    }

    try {
        if (solve_cmd->parsed()) {
            json req = json::object();
            solve_flags.fill(req);
            put(req, solve_n_opt, "n", solve_n);
            put(req, solve_sigma_opt, "sigma", solve_sigma);
            emit(g, svc::render("solve", svc::run_solve(req), g.format));
        } else if (curve_cmd->parsed()) {
            json req = json::object();
            put(req, curve_r1_opt, "r1", curve_r1);
            put(req, curve_mode_opt, "mode", curve_mode);
            put(req, curve_grid_opt, "grid", curve_grid);
            put(req, curve_n_opt, "n", curve_n);
            put(req, curve_sigma_opt, "sigma", curve_sigma);
            emit(g, svc::render("curve", svc::run_curve(req), g.format));
        } else if (tables_cmd->parsed()) {
            json req = json::object();
            tables_flags.fill(req);
            put(req, tables_n_opt, "n", tables_n);
            put(req, tables_rounding_opt, "rounding", tables_rounding);
            emit(g, svc::render("tables", svc::run_tables(req), g.format));
        } else if (sim_cmd->parsed()) {
            json req = json::object();
            if (!request_file.empty()) {
                std::ifstream in(request_file);
                if (!in) throw platalloc::ValidationError("cannot read request file '" + request_file + "'");
                try {
                    req = json::parse(in);
                } catch (const json::exception& e) {
                    throw platalloc::ValidationError(std::string("malformed request file: ") + e.what());
                }
            }
            sim_flags.fill(req);
            put(req, sim_n_opt, "n", sim_n);
            put(req, sim_strategy_opt, "strategy", sim_strategy);
            put(req, sim_rounding_opt, "rounding", sim_rounding);
            if (sim_control_opt->count() > 0 || !sim_arm1.empty() || !sim_arm2.empty()) {
                req["counts"] = {{"control", parse_int_list(sim_control)},
                                 {"arm1", parse_int_list(sim_arm1)},
                                 {"arm2", parse_int_list(sim_arm2)}};
            }
            put(req, sim_mu0_opt, "mu0", sim_mu0);
            if (sim_theta_opt->count() > 0)
                req["theta"] = sim_theta.size() == 1 ? json(sim_theta[0]) : json(sim_theta);
            put(req, sim_sigma_opt, "sigma", sim_sigma);
            if (sim_trend_opt->count() > 0) {
                json trend{{"kind", sim_trend}};
                if (sim_trend == "linear") trend["slope"] = sim_slope;
                if (sim_trend == "step") {
                    std::vector<double> shifts;
                    std::stringstream in(sim_shifts);
                    for (std::string item; std::getline(in, item, ',');) shifts.push_back(std::stod(item));
                    trend["shifts"] = shifts;
                }
                req["trend"] = trend;
            }
            put(req, sim_alpha_opt, "alpha", sim_alpha);
            put(req, sim_level_opt, "level", sim_level);
            put(req, sim_inference_opt, "inference", sim_inference);
            put(req, sim_reps_opt, "reps", sim_reps);
            put(req, seed_opt, "seed", g.seed);
            emit(g, svc::render("simulate", svc::run_simulate(req, g.threads), g.format));
        } else if (serve_cmd->parsed()) {
            return serve(host, port, static_dir, g.threads);
        }
    } catch (const json::exception& e) {
        return fail(platalloc::ValidationError(e.what()));
    } catch (const std::exception& e) {
        return fail(e);
    }
    return 0;
}
