#pragma once

// Latency percentiles, empirical CDFs and queue-congestion summaries.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tailsim/queue_state.hpp"

namespace tailsim {

// Nearest-rank percentile: the ceil(p * n)-th smallest value.
inline double percentile_sorted(std::span<const double> sorted, double p)
{
    if (sorted.empty())
        throw std::invalid_argument("percentile: empty input");
    if (!(p > 0.0) || p > 1.0)
        throw std::invalid_argument("percentile: p must lie in (0, 1]");
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(p * n));
    // p * n can land a hair above an integer (0.99 * 100 = 99.00000000000001)
    if (rank > 1 && static_cast<double>(rank - 1) >= p * n - 1e-9 * n)
        --rank;
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

inline double percentile(std::vector<double> values, double p)
{
    std::sort(values.begin(), values.end());
    return percentile_sorted(values, p);
}

struct LatencySummary {
    std::size_t count = 0; // finite latencies
    std::size_t infinite_count = 0;
    double p50 = 0.0;
    double p90 = 0.0;
    double p95 = 0.0;
    double p99 = 0.0;
    double p999 = 0.0;
    double mean = 0.0;
    double max = 0.0;

    nlohmann::json to_json() const
    {
        return {{"count", count}, {"infinite_count", infinite_count},
                {"p50", p50},     {"p90", p90},
                {"p95", p95},     {"p99", p99},
                {"p99.9", p999},  {"mean", mean},
                {"max", max}};
    }
};

// Infinite latencies (requests cut off by the drain cap) are counted apart and
// kept out of the percentiles.
inline LatencySummary summarize(std::span<const double> latencies)
{
    LatencySummary s;
    std::vector<double> finite;
    finite.reserve(latencies.size());
    for (double v : latencies) {
        if (std::isfinite(v))
            finite.push_back(v);
        else
            ++s.infinite_count;
    }
    s.count = finite.size();
    if (finite.empty())
        return s;
    std::sort(finite.begin(), finite.end());
    s.p50 = percentile_sorted(finite, 0.50);
    s.p90 = percentile_sorted(finite, 0.90);
    s.p95 = percentile_sorted(finite, 0.95);
    s.p99 = percentile_sorted(finite, 0.99);
    s.p999 = percentile_sorted(finite, 0.999);
    double sum = 0.0;
    for (double v : finite)
        sum += v;
    s.mean = sum / static_cast<double>(finite.size());
    s.max = finite.back();
    return s;
}

struct CdfPoint {
    double latency_ms = 0.0;
    double fraction = 0.0;
};

// Step CDF over finite latencies: one point per distinct value (fraction of
// samples <= value). With resolution > 0 and more distinct values than that,
// keeps `resolution` points evenly spaced in rank, always including the last.
inline std::vector<CdfPoint> export_cdf(std::span<const double> latencies, std::size_t resolution = 0)
{
    std::vector<double> v;
    for (double x : latencies)
        if (std::isfinite(x))
            v.push_back(x);
    std::sort(v.begin(), v.end());
    std::vector<CdfPoint> full;
    const auto n = static_cast<double>(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (k + 1 < v.size() && v[k + 1] == v[k])
            continue;
        full.push_back({v[k], static_cast<double>(k + 1) / n});
    }
    if (resolution == 0 || full.size() <= resolution)
        return full;
    std::vector<CdfPoint> out;
    out.reserve(resolution);
    for (std::size_t r = 1; r <= resolution; ++r) {
        const std::size_t idx = (r * full.size()) / resolution - 1;
        out.push_back(full[idx]);
    }
    return out;
}

// Evaluate a step CDF at x.
inline double cdf_at(const std::vector<CdfPoint>& cdf, double x)
{
    auto it = std::upper_bound(cdf.begin(), cdf.end(), x,
                               [](double value, const CdfPoint& p) { return value < p.latency_ms; });
    if (it == cdf.begin())
        return 0.0;
    return std::prev(it)->fraction;
}

struct QueueLengthSummary {
    std::vector<double> per_server; // mean of q_up + q_srv + q_down
    double overall = 0.0;           // mean across servers
};

inline QueueLengthSummary average_queue_length(std::span<const QueueSnapshot> snapshots)
{
    if (snapshots.empty())
        throw std::invalid_argument("average_queue_length: no snapshots");
    QueueLengthSummary s;
    const std::size_t m = snapshots.front().servers.size();
    s.per_server.assign(m, 0.0);
    for (const auto& snap : snapshots) {
        if (snap.servers.size() != m)
            throw std::invalid_argument("average_queue_length: inconsistent server count");
        for (std::size_t j = 0; j < m; ++j)
            s.per_server[j] += static_cast<double>(snap.servers[j].total_length());
    }
    for (auto& v : s.per_server)
        v /= static_cast<double>(snapshots.size());
    double sum = 0.0;
    for (double v : s.per_server)
        sum += v;
    s.overall = m ? sum / static_cast<double>(m) : 0.0;
    return s;
}

} // namespace tailsim
