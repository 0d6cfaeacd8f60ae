#pragma once

// Scenario x scheduler x seed benchmark grid.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tailsim/config.hpp"
#include "tailsim/csv.hpp"
#include "tailsim/metrics.hpp"
#include "tailsim/plans.hpp"
#include "tailsim/schedulers.hpp"
#include "tailsim/simulator.hpp"
#include "tailsim/workload.hpp"

namespace tailsim {

// Offered work over total capacity per stage, averaged over the three stages.
// Routing does not enter: it is the load the system carries as a whole.
inline double mean_utilization(const SimulationConfig& c)
{
    double work = 0.0; // cycles/ms
    for (std::size_t i = 0; i < c.service_count(); ++i)
        work += c.effective_lambda(i) * c.services[i].mean_size;
    double u = 0.0;
    for (std::size_t k = 0; k < kStageCount; ++k) {
        double cap = 0.0;
        for (const auto& s : c.servers)
            cap += s.rates[k];
        u += work / cap;
    }
    return u / static_cast<double>(kStageCount);
}

// Utilization is linear in the load scale, so the tuned scale is closed-form.
inline double tune_load_scale(SimulationConfig c, double target)
{
    c.sim.load_scale = 1.0;
    return target / mean_utilization(c);
}

inline std::vector<double> latencies_of(const std::vector<RequestRecord>& requests)
{
    std::vector<double> out;
    out.reserve(requests.size());
    for (const auto& r : requests)
        out.push_back(r.latency_ms);
    return out;
}

struct BenchCell {
    std::string scenario;
    std::string scheduler;
    std::uint64_t seed = 0;
    double load_scale = 1.0;
    LatencySummary latency;
    double avg_queue = 0.0;
};

struct BenchRow {
    std::string scenario;
    std::string scheduler;
    double load_scale = 1.0;
    std::size_t seeds = 0;
    // medians over seeds
    double p50 = 0.0, p90 = 0.0, p95 = 0.0, p99 = 0.0, p999 = 0.0, mean = 0.0, max = 0.0;
    double avg_queue = 0.0;
    std::size_t infinite = 0; // summed over seeds
};

inline double median(std::vector<double> v)
{
    if (v.empty())
        throw std::invalid_argument("median of an empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// One simulation: the scenario config (already restricted and scaled), one
// scheduler, one seed. Queues are sampled every delta/100; the drain phase
// lasts at most 10 delta.
inline BenchCell run_bench_cell(const SimulationConfig& config, const std::string& scenario,
                                const std::string& scheduler, std::uint64_t seed)
{
    PlanCatalog catalog(config);
    auto sched = make_scheduler(scheduler, catalog, config, seed);
    const auto trace = generate_workload(config, seed);
    RunOptions opts;
    opts.mode = config.sim.mode;
    opts.seed = seed;
    opts.snapshot_interval_ms = config.step.delta_ms / 100.0;
    opts.drain_cap_ms = 10.0 * config.step.delta_ms;
    auto result = run(config, catalog, trace, *sched, opts);

    BenchCell cell;
    cell.scenario = scenario;
    cell.scheduler = scheduler;
    cell.seed = seed;
    cell.load_scale = config.sim.load_scale;
    const auto lat = latencies_of(result.requests);
    cell.latency = summarize(lat);
    cell.avg_queue = average_queue_length(result.snapshots).overall;
    return cell;
}

inline std::vector<BenchRow> aggregate_bench(const std::vector<BenchCell>& cells)
{
    std::vector<BenchRow> rows;
    for (const auto& c : cells) {
        auto it = std::find_if(rows.begin(), rows.end(), [&](const BenchRow& r) {
            return r.scenario == c.scenario && r.scheduler == c.scheduler;
        });
        if (it == rows.end()) {
            BenchRow r;
            r.scenario = c.scenario;
            r.scheduler = c.scheduler;
            r.load_scale = c.load_scale;
            rows.push_back(r);
        }
    }
    for (auto& r : rows) {
        std::vector<double> p50, p90, p95, p99, p999, mean, mx, q;
        for (const auto& c : cells) {
            if (c.scenario != r.scenario || c.scheduler != r.scheduler)
                continue;
            p50.push_back(c.latency.p50);
            p90.push_back(c.latency.p90);
            p95.push_back(c.latency.p95);
            p99.push_back(c.latency.p99);
            p999.push_back(c.latency.p999);
            mean.push_back(c.latency.mean);
            mx.push_back(c.latency.max);
            q.push_back(c.avg_queue);
            r.infinite += c.latency.infinite_count;
            ++r.seeds;
        }
        r.p50 = median(p50);
        r.p90 = median(p90);
        r.p95 = median(p95);
        r.p99 = median(p99);
        r.p999 = median(p999);
        r.mean = median(mean);
        r.max = median(mx);
        r.avg_queue = median(q);
    }
    return rows;
}

struct BenchOptions {
    unsigned threads = 0; // 0: hardware concurrency
};

// Runs every (scenario, scheduler, seed) cell; cells are independent and run
// in parallel. Rows come out in scenario-then-scheduler order.
inline std::vector<BenchRow> run_bench(const SimulationConfig& base, BenchOptions options = {},
                                       std::vector<BenchCell>* cells_out = nullptr)
{
    const auto& b = base.bench;
    if (b.scenarios.empty() || b.schedulers.empty() || b.seeds.empty())
        throw std::invalid_argument("bench grid is empty");

    struct Job {
        std::size_t scenario;
        std::size_t scheduler;
        std::uint64_t seed;
    };
    std::vector<SimulationConfig> configs;
    for (const auto& sc : b.scenarios) {
        auto c = restrict_config(base, sc.servers, sc.services);
        c.sim.load_scale = tune_load_scale(c, b.target_utilization);
        configs.push_back(std::move(c));
    }
    // Reject unknown scheduler names before spending time on simulations.
    for (const auto& name : b.schedulers) {
        PlanCatalog catalog(configs.front());
        make_scheduler(name, catalog, configs.front(), 0);
    }
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < b.scenarios.size(); ++s)
        for (std::size_t k = 0; k < b.schedulers.size(); ++k)
            for (auto seed : b.seeds)
                jobs.push_back({s, k, seed});

    std::vector<BenchCell> cells(jobs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (std::size_t idx; (idx = next.fetch_add(1)) < jobs.size();) {
            const auto& j = jobs[idx];
            try {
                cells[idx] = run_bench_cell(configs[j.scenario], b.scenarios[j.scenario].name,
                                            b.schedulers[j.scheduler], j.seed);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure)
                    failure = std::current_exception();
            }
        }
    };
    unsigned n = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
    n = static_cast<unsigned>(std::min<std::size_t>(n, jobs.size()));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t)
        pool.emplace_back(worker);
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
    if (cells_out)
        *cells_out = cells;
    return aggregate_bench(cells);
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows)
{
    out << "scenario,scheduler,load_scale,seeds,p50,p90,p95,p99,p99.9,mean,max,avg_queue,infinite\n";
    for (const auto& r : rows)
        out << r.scenario << ',' << r.scheduler << ',' << csv::num(r.load_scale) << ',' << r.seeds << ','
            << csv::num(r.p50) << ',' << csv::num(r.p90) << ',' << csv::num(r.p95) << ',' << csv::num(r.p99) << ','
            << csv::num(r.p999) << ',' << csv::num(r.mean) << ',' << csv::num(r.max) << ','
            << csv::num(r.avg_queue) << ',' << r.infinite << '\n';
}

} // namespace tailsim
