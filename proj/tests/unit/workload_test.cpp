#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "tailsim/workload.hpp"
#include "test_support.hpp"

using namespace tailsim;

namespace {

// All nine table services on one catch-all server; the trace generator only
// looks at the services.
SimulationConfig nine_services()
{
    SimulationConfig c;
    c.servers.push_back({1, {1e7, 1e7, 1e7}, {1, 2, 3, 4, 5, 6, 7, 8, 9}});
    const double lambda[] = {4, 5, 6, 3, 4, 5, 4, 4, 3};
    const double size[] = {4.1, 4.0, 4.2, 4.9, 4.0, 4.0, 4.2, 4.5, 4.9};
    for (int i = 0; i < 9; ++i)
        c.services.push_back({i + 1, units::per_second_to_per_ms(lambda[i] * 100), size[i] * 1e7,
                              SizeDistribution::exponential});
    validate(c);
    return c;
}

} // namespace

TEST(Workload, PerServiceCountsMatchRates)
{
    const auto c = nine_services();
    const double horizon = 20000.0;
    const auto trace = generate_workload(c, 3, horizon);
    std::map<ServiceId, std::size_t> counts;
    for (const auto& e : trace.entries)
        ++counts[e.service_id];
    for (std::size_t i = 0; i < c.service_count(); ++i) {
        const double expected = c.services[i].lambda * horizon;
        const double n = static_cast<double>(counts[c.services[i].id]);
        EXPECT_LE(std::abs(n - expected), 3.0 * std::sqrt(expected)) << "service " << c.services[i].id;
    }
}

TEST(Workload, SortedAndPositive)
{
    const auto trace = generate_workload(nine_services(), 11, 5000.0);
    ASSERT_FALSE(trace.entries.empty());
    for (std::size_t k = 0; k < trace.entries.size(); ++k) {
        EXPECT_GT(trace.entries[k].size_cycles, 0.0);
        EXPECT_GE(trace.entries[k].arrival_ms, 0.0);
        EXPECT_LT(trace.entries[k].arrival_ms, 5000.0);
        if (k) {
            EXPECT_LE(trace.entries[k - 1].arrival_ms, trace.entries[k].arrival_ms);
        }
    }
}

TEST(Workload, MeanSizeMatches)
{
    const auto c = nine_services();
    const auto trace = generate_workload(c, 5, 20000.0);
    std::map<ServiceId, std::pair<double, std::size_t>> acc;
    for (const auto& e : trace.entries) {
        acc[e.service_id].first += e.size_cycles;
        ++acc[e.service_id].second;
    }
    for (const auto& s : c.services) {
        const auto [sum, n] = acc[s.id];
        const double mean = sum / static_cast<double>(n);
        // exponential: sd of the mean is c / sqrt(n)
        EXPECT_LE(std::abs(mean - s.mean_size), 4.0 * s.mean_size / std::sqrt(static_cast<double>(n)));
    }
}

TEST(Workload, DeterministicSizes)
{
    SimulationConfig c;
    c.servers.push_back({1, {1e6, 1e6, 1e6}, {1}});
    c.services.push_back({1, 0.001, 4.2e7, SizeDistribution::deterministic});
    const auto trace = generate_workload(c, 1, 5000.0);
    ASSERT_FALSE(trace.entries.empty());
    for (const auto& e : trace.entries)
        EXPECT_EQ(e.size_cycles, 4.2e7);
}

TEST(Workload, SameSeedSameBytes)
{
    const auto c = nine_services();
    std::ostringstream a, b, other;
    write_trace_csv(a, generate_workload(c, 42, 3000.0));
    write_trace_csv(b, generate_workload(c, 42, 3000.0));
    write_trace_csv(other, generate_workload(c, 43, 3000.0));
    EXPECT_EQ(a.str(), b.str());
    EXPECT_NE(a.str(), other.str());
}

TEST(Workload, HorizonMustBePositive)
{
    EXPECT_THROW(generate_workload(nine_services(), 1, 0.0), ConfigError);
    EXPECT_THROW(generate_workload(nine_services(), 1, -5.0), ConfigError);
}

TEST(Workload, AddingAServiceLeavesOthersUnchanged)
{
    auto c = nine_services();
    const auto full = generate_workload(c, 9, 2000.0);
    c.services.pop_back();
    const auto fewer = generate_workload(c, 9, 2000.0);
    std::vector<TraceEntry> kept;
    for (const auto& e : full.entries)
        if (e.service_id != 9)
            kept.push_back(e);
    ASSERT_EQ(kept.size(), fewer.entries.size());
    for (std::size_t k = 0; k < kept.size(); ++k) {
        EXPECT_EQ(kept[k].arrival_ms, fewer.entries[k].arrival_ms);
        EXPECT_EQ(kept[k].size_cycles, fewer.entries[k].size_cycles);
    }
}

// Chi-square goodness of fit of one service's inter-arrival gaps against the
// exponential law, 20 equiprobable bins (df = 19, 1% critical value 36.191).
TEST(Workload, InterArrivalsAreExponential)
{
    auto c = nine_services();
    const auto trace = generate_workload(c, 2024, 40000.0);
    for (const auto& s : c.services) {
        std::vector<double> gaps;
        double last = 0.0;
        for (const auto& e : trace.entries)
            if (e.service_id == s.id) {
                gaps.push_back(e.arrival_ms - last);
                last = e.arrival_ms;
            }
        ASSERT_GE(gaps.size(), 10000u);
        constexpr int bins = 20;
        std::vector<double> observed(bins, 0.0);
        for (double g : gaps) {
            const double u = 1.0 - std::exp(-s.lambda * g); // CDF maps to U(0,1)
            observed[std::min(bins - 1, static_cast<int>(u * bins))] += 1.0;
        }
        const double expected = static_cast<double>(gaps.size()) / bins;
        double chi2 = 0.0;
        for (double o : observed)
            chi2 += (o - expected) * (o - expected) / expected;
        EXPECT_LT(chi2, 36.191) << "service " << s.id;
    }
}

TEST(Workload, TraceCsvRoundTrip)
{
    const auto trace = generate_workload(nine_services(), 8, 1000.0);
    std::stringstream s;
    write_trace_csv(s, trace);
    const auto back = read_trace_csv(s);
    ASSERT_EQ(back.entries.size(), trace.entries.size());
    for (std::size_t k = 0; k < trace.entries.size(); ++k) {
        EXPECT_EQ(back.entries[k].arrival_ms, trace.entries[k].arrival_ms);
        EXPECT_EQ(back.entries[k].service_id, trace.entries[k].service_id);
        EXPECT_EQ(back.entries[k].size_cycles, trace.entries[k].size_cycles);
    }
}

TEST(Workload, TraceCsvRejectsBadInput)
{
    std::istringstream wrong_header("t,service,size\n1,1,1\n");
    EXPECT_THROW(read_trace_csv(wrong_header), std::invalid_argument);
    std::istringstream unsorted("arrival_ms,service_id,size_cycles\n2,1,5\n1,1,5\n");
    EXPECT_THROW(read_trace_csv(unsorted), ConfigError);
    std::istringstream zero_size("arrival_ms,service_id,size_cycles\n1,1,0\n");
    EXPECT_THROW(read_trace_csv(zero_size), ConfigError);
}
