#pragma once

// Parallel plans: the candidate server subsets over which a request of a given
// service may be evenly split.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "tailsim/config.hpp"
#include "tailsim/errors.hpp"

namespace tailsim {

// Sorted, duplicate-free server ids.
using Plan = std::vector<ServerId>;

inline std::string plan_to_string(const Plan& plan)
{
    std::string out;
    for (std::size_t k = 0; k < plan.size(); ++k) {
        if (k)
            out += '+';
        out += std::to_string(plan[k]);
    }
    return out;
}

// All non-empty subsets of `supporters` with at most `subset_cap` members,
// ordered by cardinality and then lexicographically by server id.
inline std::vector<Plan> enumerate_plans(std::vector<ServerId> supporters, int subset_cap)
{
    if (supporters.empty())
        throw ConfigError("", "service has no supporting server");
    if (subset_cap < 1)
        throw ConfigError("sim.subset_cap", "must be >= 1");
    std::sort(supporters.begin(), supporters.end());
    supporters.erase(std::unique(supporters.begin(), supporters.end()), supporters.end());

    const std::size_t n = supporters.size();
    const std::size_t max_k = std::min(n, static_cast<std::size_t>(subset_cap));
    std::vector<Plan> plans;
    std::vector<std::size_t> idx;
    for (std::size_t k = 1; k <= max_k; ++k) {
        idx.resize(k);
        for (std::size_t t = 0; t < k; ++t)
            idx[t] = t;
        while (true) {
            Plan p(k);
            for (std::size_t t = 0; t < k; ++t)
                p[t] = supporters[idx[t]];
            plans.push_back(std::move(p));
            // next k-combination in lexicographic order
            std::size_t t = k;
            while (t > 0 && idx[t - 1] == n - k + (t - 1))
                --t;
            if (t == 0)
                break;
            ++idx[t - 1];
            for (std::size_t u = t; u < k; ++u)
                idx[u] = idx[u - 1] + 1;
        }
    }
    return plans;
}

inline std::vector<Plan> enumerate_plans(const SimulationConfig& config, ServiceId service, int subset_cap)
{
    auto supporters = config.supporters(service);
    if (supporters.empty())
        throw ConfigError("services", "unsupported service " + std::to_string(service));
    return enumerate_plans(std::move(supporters), subset_cap);
}

// B_i for every service, indexed by the service's position in the config.
class PlanCatalog {
public:
    PlanCatalog() = default;

    explicit PlanCatalog(const SimulationConfig& config)
        : PlanCatalog(config, config.sim.subset_cap) {}

    PlanCatalog(const SimulationConfig& config, int subset_cap)
        : server_count_(config.server_count())
    {
        for (const auto& s : config.services) {
            service_ids_.push_back(s.id);
            plans_.push_back(enumerate_plans(config, s.id, subset_cap));
        }
    }

    // For tests and tools that want a catalog without a full config.
    PlanCatalog(std::vector<ServiceId> service_ids, std::vector<std::vector<Plan>> plans, std::size_t server_count)
        : service_ids_(std::move(service_ids)), plans_(std::move(plans)), server_count_(server_count) {}

    std::size_t service_count() const { return plans_.size(); }
    std::size_t server_count() const { return server_count_; }
    ServiceId service_id(std::size_t index) const { return service_ids_.at(index); }
    const std::vector<Plan>& plans(std::size_t service_index) const { return plans_.at(service_index); }

    std::size_t index_of(ServiceId id) const
    {
        for (std::size_t i = 0; i < service_ids_.size(); ++i)
            if (service_ids_[i] == id)
                return i;
        throw std::out_of_range("service " + std::to_string(id) + " not in catalog");
    }

    bool contains(std::size_t service_index, const Plan& plan) const
    {
        const auto& ps = plans(service_index);
        return std::find(ps.begin(), ps.end(), plan) != ps.end();
    }

    // |B_i| per service; the action shape exposed to learning clients.
    std::vector<std::size_t> shapes() const
    {
        std::vector<std::size_t> out;
        for (const auto& ps : plans_)
            out.push_back(ps.size());
        return out;
    }

    std::size_t total_plans() const
    {
        std::size_t n = 0;
        for (const auto& ps : plans_)
            n += ps.size();
        return n;
    }

private:
    std::vector<ServiceId> service_ids_;
    std::vector<std::vector<Plan>> plans_;
    std::size_t server_count_ = 0;
};

} // namespace tailsim
