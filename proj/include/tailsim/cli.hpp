#pragma once

// Command-line entry points: run, bench, serve, bound, report.
//
// run writes requests.csv, queues.csv (snapshots), summary.json, config.json
// and manifest.json; with --scheduler da also decisions.csv, one row per
// request with the predicted delay of the chosen plan.
//
// Exit codes: 0 success, 1 runtime/module error, 2 usage error (bad flags,
// unknown scheduler, empty bench grid, port in use).

#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "tailsim/analytics.hpp"
#include "tailsim/bench.hpp"
#include "tailsim/config.hpp"
#include "tailsim/errors.hpp"
#include "tailsim/gateway.hpp"
#include "tailsim/io.hpp"
#include "tailsim/metrics.hpp"
#include "tailsim/plans.hpp"
#include "tailsim/schedulers.hpp"
#include "tailsim/simulator.hpp"
#include "tailsim/workload.hpp"

namespace tailsim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flags shared by every command that loads a config.
struct ConfigFlags {
    std::string config;
    std::optional<std::string> mode;
    std::optional<double> delta_ms;
    std::optional<double> gamma_ms;
    std::optional<double> load_scale;

    void add_to(CLI::App& app, bool required = true)
    {
        auto* opt = app.add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
        if (required)
            opt->required();
        app.add_option("--mode", mode, "simulation mode")->check(CLI::IsMember({"analytic", "coupled"}));
        app.add_option("--delta-ms", delta_ms, "step window length (ms)");
        app.add_option("--gamma-ms", gamma_ms, "tail threshold (ms)");
        app.add_option("--load-scale", load_scale, "multiplier on every arrival rate");
    }

    SimulationConfig load() const
    {
        auto c = load_config(config);
        if (mode)
            c.sim.mode = parse_sim_mode(*mode);
        if (delta_ms)
            c.step.delta_ms = *delta_ms;
        if (gamma_ms)
            c.reward.gamma = *gamma_ms;
        if (load_scale)
            c.sim.load_scale = *load_scale;
        validate(c);
        return c;
    }

    nlohmann::json overrides() const
    {
        nlohmann::json j = nlohmann::json::object();
        if (mode)
            j["mode"] = *mode;
        if (delta_ms)
            j["delta_ms"] = *delta_ms;
        if (gamma_ms)
            j["gamma_ms"] = *gamma_ms;
        if (load_scale)
            j["load_scale"] = *load_scale;
        return j;
    }
};

namespace detail {

inline std::filesystem::path prepare_out_dir(const std::string& out)
{
    std::filesystem::path dir(out);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& content)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot write " + path.string());
    f << content;
}

template <typename Fn>
void write_with(const std::filesystem::path& path, Fn&& fn)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot write " + path.string());
    fn(f);
}

inline std::string utc_now()
{
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

inline bool same_file(const std::filesystem::path& a, const std::filesystem::path& b)
{
    std::error_code ec;
    return std::filesystem::exists(a) && std::filesystem::exists(b) && std::filesystem::equivalent(a, b, ec);
}

} // namespace detail

struct RunFlags {
    ConfigFlags cfg;
    std::optional<std::uint64_t> seed;
    std::string scheduler = "rd";
    std::string policy;
    std::string out;
    std::optional<double> drain_cap_ms; // default 10 * delta_ms
};

inline int cmd_run(const RunFlags& f, const std::vector<std::string>& argv, std::ostream& log)
{
    const auto started = std::chrono::steady_clock::now();
    const auto config = f.cfg.load();
    const std::uint64_t seed = f.seed.value_or(config.seed);
    PlanCatalog catalog(config);

    std::optional<PlanDistributions> policy;
    if (f.scheduler == "policy") {
        if (f.policy.empty())
            throw UsageError("--scheduler policy requires --policy <file>");
        std::ifstream in(f.policy);
        if (!in)
            throw UsageError("cannot open policy file " + f.policy);
        policy = parse_policy_json(nlohmann::json::parse(in), catalog);
    }
    auto scheduler = make_scheduler(f.scheduler, catalog, config, seed, policy ? &*policy : nullptr);
    std::vector<DelayAwareDecision> decisions;
    if (auto* da = dynamic_cast<DelayAwareScheduler*>(scheduler.get()))
        da->set_log(&decisions);

    const auto trace = generate_workload(config, seed);
    RunOptions opts;
    opts.mode = config.sim.mode;
    opts.seed = seed;
    opts.snapshot_interval_ms = config.step.delta_ms / 100.0;
    opts.drain_cap_ms = f.drain_cap_ms.value_or(10.0 * config.step.delta_ms);
    const auto result = run(config, catalog, trace, *scheduler, opts);

    const auto dir = detail::prepare_out_dir(f.out);
    detail::write_with(dir / "requests.csv", [&](std::ostream& o) { write_requests_csv(o, result.requests); });
    detail::write_with(dir / "queues.csv", [&](std::ostream& o) { write_snapshots_csv(o, result.snapshots); });
    if (f.scheduler == "da")
        detail::write_with(dir / "decisions.csv", [&](std::ostream& o) {
            o << "id,t_ms,service_id,size,plan,predicted_ms\n";
            for (std::size_t k = 0; k < decisions.size(); ++k) {
                const auto& d = decisions[k];
                o << k << ',' << csv::num(d.t_ms) << ',' << config.services[d.service_index].id << ','
                  << csv::num(d.size) << ',' << plan_to_string(d.plan) << ',' << csv::num(d.predicted_ms) << '\n';
            }
        });
    const auto summary = summary_json(result.requests, result.snapshots);
    detail::write_file(dir / "summary.json", summary.dump(2) + "\n");
    detail::write_file(dir / "config.json", to_json(config).dump(2) + "\n");

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    nlohmann::json manifest = {{"command", "run"},
                               {"argv", argv},
                               {"config", f.cfg.config},
                               {"config_echo", "config.json"},
                               {"overrides", f.cfg.overrides()},
                               {"seed", seed},
                               {"scheduler", f.scheduler},
                               {"policy", f.policy.empty() ? nlohmann::json(nullptr) : nlohmann::json(f.policy)},
                               {"mode", std::string(to_string(config.sim.mode))},
                               {"out", f.out},
                               {"drain_cap_ms", opts.drain_cap_ms},
                               {"drained", result.drained},
                               {"end_ms", result.end_ms},
                               {"started_utc", detail::utc_now()},
                               {"wall_ms", wall_ms}};
    detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    log << "run: " << result.requests.size() << " requests, scheduler " << f.scheduler << ", seed " << seed
        << ", output in " << dir.string() << "\n";
    if (!summary["latency_ms"].is_null())
        log << "latency_ms: " << summary["latency_ms"].dump() << "\n";
    return kExitOk;
}

struct BenchFlags {
    ConfigFlags cfg;
    std::string out;
    std::optional<double> target_utilization;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> schedulers;
    unsigned threads = 0;
};

inline void print_bench_table(std::ostream& os, const std::vector<BenchRow>& rows)
{
    os << std::left << std::setw(10) << "scenario" << std::setw(10) << "scheduler" << std::right;
    for (const char* h : {"p50", "p90", "p95", "p99", "p99.9", "avg_queue"})
        os << std::setw(12) << h;
    os << std::setw(10) << "infinite" << "\n";
    os << std::fixed << std::setprecision(2);
    for (const auto& r : rows) {
        os << std::left << std::setw(10) << r.scenario << std::setw(10) << r.scheduler << std::right;
        for (double v : {r.p50, r.p90, r.p95, r.p99, r.p999, r.avg_queue})
            os << std::setw(12) << v;
        os << std::setw(10) << r.infinite << "\n";
    }
    os << std::defaultfloat;
}

inline int cmd_bench(const BenchFlags& f, const std::vector<std::string>& argv, std::ostream& log)
{
    const auto started = std::chrono::steady_clock::now();
    auto config = f.cfg.load();
    if (f.target_utilization)
        config.bench.target_utilization = *f.target_utilization;
    if (!f.seeds.empty())
        config.bench.seeds = f.seeds;
    if (!f.schedulers.empty())
        config.bench.schedulers = f.schedulers;
    const auto& b = config.bench;
    if (b.scenarios.empty() || b.schedulers.empty() || b.seeds.empty())
        throw UsageError("bench grid is empty: the config needs bench.scenarios, schedulers and seeds");
    for (const auto& name : b.schedulers)
        if (name != "rd" && name != "gd" && name != "da")
            throw UsageError("bench scheduler must be one of rd, gd, da; got '" + name + "'");

    std::vector<BenchCell> cells;
    const auto rows = run_bench(config, {f.threads}, &cells);

    print_bench_table(log, rows);
    if (!f.out.empty()) {
        const auto dir = detail::prepare_out_dir(f.out);
        detail::write_with(dir / "bench.csv", [&](std::ostream& o) { write_bench_csv(o, rows); });
        detail::write_with(dir / "cells.csv", [&](std::ostream& o) {
            o << "scenario,scheduler,seed,load_scale,count,infinite,p50,p90,p95,p99,p99.9,mean,max,avg_queue\n";
            for (const auto& c : cells) {
                const auto& l = c.latency;
                o << c.scenario << ',' << c.scheduler << ',' << c.seed << ',' << csv::num(c.load_scale) << ','
                  << l.count << ',' << l.infinite_count << ',' << csv::num(l.p50) << ',' << csv::num(l.p90) << ','
                  << csv::num(l.p95) << ',' << csv::num(l.p99) << ',' << csv::num(l.p999) << ','
                  << csv::num(l.mean) << ',' << csv::num(l.max) << ',' << csv::num(c.avg_queue) << '\n';
            }
        });
        detail::write_file(dir / "config.json", to_json(config).dump(2) + "\n");
        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        nlohmann::json manifest = {{"command", "bench"},
                                   {"argv", argv},
                                   {"config", f.cfg.config},
                                   {"config_echo", "config.json"},
                                   {"overrides", f.cfg.overrides()},
                                   {"mode", std::string(to_string(config.sim.mode))},
                                   {"out", f.out},
                                   {"started_utc", detail::utc_now()},
                                   {"wall_ms", wall_ms}};
        detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    }
    return kExitOk;
}

struct ServeFlags {
    ConfigFlags cfg;
    std::string host = "127.0.0.1";
    int port = 8080;
};

// Blocks until SIGTERM or SIGINT. The signals are blocked in every thread and
// collected synchronously, so shutdown runs on an ordinary thread.
inline int cmd_serve(const ServeFlags& f, std::ostream& log)
{
    const auto config = f.cfg.load();
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGTERM);
    sigaddset(&set, SIGINT);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    GatewayServer server(config);
    int port = f.port;
    if (port == 0) {
        port = server.bind_any(f.host);
        if (port < 0)
            throw UsageError("cannot bind " + f.host);
    } else if (!server.bind(f.host, port)) {
        throw UsageError("cannot bind " + f.host + ":" + std::to_string(port) + " (port in use?)");
    }
    server.start();
    log << "listening on " << f.host << ":" << port << std::endl;

    int sig = 0;
    sigwait(&set, &sig);
    log << "signal " << sig << ", closing " << server.gateway().session_count() << " session(s)" << std::endl;
    server.stop();
    return kExitOk;
}

struct BoundFlags {
    ConfigFlags cfg;
    std::string omega;
};

inline nlohmann::json bound_json(const SimulationConfig& config, const OmegaMatrix& omega)
{
    const auto a = analyze_system(config, omega, config.reward.gamma);
    nlohmann::json servers = nlohmann::json::array();
    for (const auto& s : a.servers) {
        servers.push_back({{"id", s.server_id},
                           {"arrival_rate", s.arrival_rate},
                           {"mean_size", s.mean_size},
                           {"mu", s.mu},
                           {"phi", s.phi.values()},
                           {"stable", s.phi.stable()},
                           {"x_star", s.bound.x_star},
                           {"eta_star", s.bound.eta_star},
                           {"vacuous", s.bound.vacuous}});
    }
    return {{"gamma_ms", config.reward.gamma}, {"servers", servers}, {"kappa_bound", a.bound.kappa_bound}};
}

// Without --omega the uniform plan distribution defines the routing.
inline int cmd_bound(const BoundFlags& f, std::ostream& out)
{
    const auto config = f.cfg.load();
    OmegaMatrix omega;
    if (f.omega.empty()) {
        omega = policy_to_omega(PlanCatalog(config), uniform_distributions(PlanCatalog(config)));
    } else {
        std::ifstream in(f.omega);
        if (!in)
            throw UsageError("cannot open omega file " + f.omega);
        omega = read_omega_csv(in, config.service_count(), config.server_count());
    }
    out << bound_json(config, omega).dump(2) << "\n";
    return kExitOk;
}

struct ReportFlags {
    std::string requests;
    std::string queues;
    std::string out;
    std::size_t resolution = 1000;
};

inline int cmd_report(const ReportFlags& f, std::ostream& log)
{
    const auto dir = std::filesystem::path(f.out);
    for (const char* name : {"summary.json", "cdf.csv", "queues.csv"}) {
        if (detail::same_file(dir / name, f.requests) || (!f.queues.empty() && detail::same_file(dir / name, f.queues)))
            throw UsageError(std::string("report would overwrite its input ") + (dir / name).string());
    }
    std::ifstream rin(f.requests);
    if (!rin)
        throw UsageError("cannot open " + f.requests);
    const auto requests = read_requests_csv(rin);
    std::vector<QueueSnapshot> snapshots;
    if (!f.queues.empty()) {
        std::ifstream qin(f.queues);
        if (!qin)
            throw UsageError("cannot open " + f.queues);
        snapshots = read_snapshots_csv(qin);
    }
    detail::prepare_out_dir(f.out);
    const auto summary = summary_json(requests, snapshots);
    detail::write_file(dir / "summary.json", summary.dump(2) + "\n");
    const auto lat = latencies_of(requests);
    detail::write_with(dir / "cdf.csv", [&](std::ostream& o) { write_cdf_csv(o, export_cdf(lat, f.resolution)); });
    if (!snapshots.empty())
        detail::write_with(dir / "queues.csv",
                           [&](std::ostream& o) { write_queue_averages_csv(o, average_queue_length(snapshots)); });
    const auto s = summarize(lat);
    log << "report: " << s.count << " finite latencies, " << s.infinite_count << " unfinished; p99 = " << s.p99
        << " ms\n";
    return kExitOk;
}

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"tailsim: tail-latency simulator and analytics for distributed edge computing", "tailsim"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "expand help for every subcommand");

    RunFlags run_f;
    auto* run_cmd = app.add_subcommand("run", "simulate one trace with one scheduler");
    run_f.cfg.add_to(*run_cmd);
    run_cmd->add_option("--seed", run_f.seed, "trace and scheduler seed (default: config seed)");
    run_cmd->add_option("--scheduler", run_f.scheduler, "rd | gd | da | policy")
        ->check(CLI::IsMember({"rd", "gd", "da", "policy"}));
    run_cmd->add_option("--policy", run_f.policy, "plan distributions {service_id: [p...]} for --scheduler policy");
    run_cmd->add_option("--out", run_f.out, "output directory")->required();
    run_cmd->add_option("--drain-cap-ms", run_f.drain_cap_ms, "time allowed after the last arrival (default: 10 * delta)");

    BenchFlags bench_f;
    auto* bench_cmd = app.add_subcommand("bench", "scenario x scheduler percentile table");
    bench_f.cfg.add_to(*bench_cmd);
    bench_cmd->add_option("--out", bench_f.out, "output directory for bench.csv and cells.csv");
    bench_cmd->add_option("--target-utilization", bench_f.target_utilization, "mean utilization to tune to");
    bench_cmd->add_option("--seeds", bench_f.seeds, "override bench.seeds");
    bench_cmd->add_option("--schedulers", bench_f.schedulers, "override bench.schedulers");
    bench_cmd->add_option("--threads", bench_f.threads, "worker threads (0: all cores)");

    ServeFlags serve_f;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP learning environment");
    serve_f.cfg.add_to(*serve_cmd);
    serve_cmd->add_option("--host", serve_f.host, "bind address");
    serve_cmd->add_option("--port", serve_f.port, "port (0: any free port)");

    BoundFlags bound_f;
    auto* bound_cmd = app.add_subcommand("bound", "per-server Chernoff bound and system bound");
    bound_f.cfg.add_to(*bound_cmd);
    bound_cmd->add_option("--omega", bound_f.omega, "I x M routing matrix CSV")->check(CLI::ExistingFile);

    ReportFlags report_f;
    auto* report_cmd = app.add_subcommand("report", "summary, CDF and queue averages from run outputs");
    report_cmd->add_option("--requests", report_f.requests, "per-request CSV")->required()->check(CLI::ExistingFile);
    report_cmd->add_option("--queues", report_f.queues, "snapshot CSV")->check(CLI::ExistingFile);
    report_cmd->add_option("--out", report_f.out, "output directory")->required();
    report_cmd->add_option("--resolution", report_f.resolution, "maximum CDF points (0: all)");

    std::vector<std::string> args(argv + (argc > 0 ? 1 : 0), argv + argc);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const CLI::App* sub = nullptr;
        for (const auto* s : app.get_subcommands())
            sub = s;
        err << (sub ? sub->help() : app.help());
        return kExitUsage;
    }

    try {
        if (*run_cmd)
            return cmd_run(run_f, args, out);
        if (*bench_cmd)
            return cmd_bench(bench_f, args, out);
        if (*serve_cmd)
            return cmd_serve(serve_f, out);
        if (*bound_cmd)
            return cmd_bound(bound_f, out);
        if (*report_cmd)
            return cmd_report(report_f, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitUsage;
}

} // namespace tailsim::cli
