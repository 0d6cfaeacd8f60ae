#pragma once

// Reproducible Poisson request traces.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "tailsim/config.hpp"
#include "tailsim/csv.hpp"
#include "tailsim/errors.hpp"
#include "tailsim/rng.hpp"

namespace tailsim {

struct TraceEntry {
    double arrival_ms = 0.0;
    ServiceId service_id = 0;
    double size_cycles = 0.0;

    bool operator==(const TraceEntry&) const = default;
};

struct RequestTrace {
    std::vector<TraceEntry> entries; // sorted by arrival, ties by service position
    std::uint64_t seed = 0;
    double horizon_ms = 0.0;
};

// Each service draws from its own substream so adding a service never perturbs
// the arrivals of the others.
inline RequestTrace generate_workload(const SimulationConfig& config, std::uint64_t seed, double horizon_ms)
{
    if (!(horizon_ms > 0.0))
        throw ConfigError("sim.horizon_ms", "horizon must be positive");
    RequestTrace trace;
    trace.seed = seed;
    trace.horizon_ms = horizon_ms;

    struct Keyed {
        TraceEntry e;
        std::size_t pos;
    };
    std::vector<Keyed> all;
    const std::uint64_t base = mix_seed(seed, streams::kTrace);
    for (std::size_t i = 0; i < config.service_count(); ++i) {
        const auto& svc = config.services[i];
        Rng rng(mix_seed(base, i));
        std::exponential_distribution<double> gap(config.effective_lambda(i));
        std::exponential_distribution<double> size(1.0 / svc.mean_size);
        double t = gap(rng);
        while (t < horizon_ms) {
            double c = svc.size_distribution == SizeDistribution::deterministic ? svc.mean_size : size(rng);
            if (c <= 0.0)
                c = svc.mean_size * 1e-12; // exponential draws of exactly 0 are measure-zero but possible
            all.push_back({{t, svc.id, c}, i});
            t += gap(rng);
        }
    }
    std::sort(all.begin(), all.end(), [](const Keyed& a, const Keyed& b) {
        return std::tie(a.e.arrival_ms, a.pos) < std::tie(b.e.arrival_ms, b.pos);
    });
    trace.entries.reserve(all.size());
    for (auto& k : all)
        trace.entries.push_back(k.e);
    return trace;
}

inline RequestTrace generate_workload(const SimulationConfig& config, std::uint64_t seed)
{
    return generate_workload(config, seed, config.sim.horizon_ms);
}

inline void write_trace_csv(std::ostream& out, const RequestTrace& trace)
{
    out << "arrival_ms,service_id,size_cycles\n";
    for (const auto& e : trace.entries)
        out << csv::num(e.arrival_ms) << ',' << e.service_id << ',' << csv::num(e.size_cycles) << '\n';
}

inline RequestTrace read_trace_csv(std::istream& in)
{
    RequestTrace trace;
    auto rows = csv::read(in, {"arrival_ms", "service_id", "size_cycles"});
    for (const auto& r : rows) {
        TraceEntry e{csv::to_double(r[0]), static_cast<ServiceId>(csv::to_long(r[1])), csv::to_double(r[2])};
        if (!(e.size_cycles > 0.0))
            throw ConfigError("size_cycles", "trace sizes must be positive");
        if (!trace.entries.empty() && e.arrival_ms < trace.entries.back().arrival_ms)
            throw ConfigError("arrival_ms", "trace must be sorted by arrival time");
        trace.entries.push_back(e);
    }
    if (!trace.entries.empty())
        trace.horizon_ms = trace.entries.back().arrival_ms;
    return trace;
}

} // namespace tailsim
