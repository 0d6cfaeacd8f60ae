#pragma once

// Plan-selection policies and the mapping from per-service plan distributions
// to per-server routing probabilities omega.

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tailsim/analytics.hpp"
#include "tailsim/config.hpp"
#include "tailsim/errors.hpp"
#include "tailsim/plans.hpp"
#include "tailsim/queue_state.hpp"
#include "tailsim/rng.hpp"

namespace tailsim {

inline constexpr double kDistributionSumTolerance = 1e-9;

// One probability vector over B_i per service, in catalog order.
using PlanDistributions = std::vector<std::vector<double>>;

inline void validate_distribution(const std::vector<double>& dist, std::size_t expected, const std::string& field)
{
    if (dist.size() != expected)
        throw ValidationError(field, "expected " + std::to_string(expected) + " probabilities, got " +
                                         std::to_string(dist.size()));
    double sum = 0.0;
    for (std::size_t k = 0; k < dist.size(); ++k) {
        if (!std::isfinite(dist[k]) || dist[k] < 0.0)
            throw ValidationError(field + "[" + std::to_string(k) + "]", "probability must be finite and >= 0");
        sum += dist[k];
    }
    if (std::abs(sum - 1.0) > kDistributionSumTolerance)
        throw ValidationError(field, "probabilities sum to " + std::to_string(sum) + ", expected 1");
}

inline void validate_distributions(const PlanCatalog& catalog, const PlanDistributions& dists,
                                   const std::string& field = "action")
{
    if (dists.size() != catalog.service_count())
        throw ValidationError(field, "expected " + std::to_string(catalog.service_count()) +
                                         " distributions, got " + std::to_string(dists.size()));
    for (std::size_t i = 0; i < dists.size(); ++i)
        validate_distribution(dists[i], catalog.plans(i).size(), field + "[" + std::to_string(i) + "]");
}

inline PlanDistributions uniform_distributions(const PlanCatalog& catalog)
{
    PlanDistributions out;
    for (std::size_t i = 0; i < catalog.service_count(); ++i) {
        const auto n = catalog.plans(i).size();
        out.emplace_back(n, 1.0 / static_cast<double>(n));
    }
    return out;
}

// omega_ij = sum_k Pr(B_i(k)) * 1{j in B_i(k)}
inline OmegaMatrix policy_to_omega(const PlanCatalog& catalog, const PlanDistributions& dists)
{
    if (dists.size() != catalog.service_count())
        throw ValidationError("distributions", "one distribution per service required");
    OmegaMatrix omega(catalog.service_count(), catalog.server_count());
    for (std::size_t i = 0; i < catalog.service_count(); ++i) {
        const auto& plans = catalog.plans(i);
        if (dists[i].size() != plans.size())
            throw ValidationError("distributions[" + std::to_string(i) + "]",
                                  "length " + std::to_string(dists[i].size()) + " != |B_i| = " +
                                      std::to_string(plans.size()));
        for (std::size_t k = 0; k < plans.size(); ++k)
            for (ServerId j : plans[k])
                omega(i, static_cast<std::size_t>(j - 1)) += dists[i][k];
    }
    return omega;
}

struct PolicyMatrix {
    PlanDistributions distributions;
    OmegaMatrix omega;

    PolicyMatrix() = default;
    PolicyMatrix(const PlanCatalog& catalog, PlanDistributions dists)
        : distributions(std::move(dists))
    {
        validate_distributions(catalog, distributions);
        omega = policy_to_omega(catalog, distributions);
    }

    static PolicyMatrix uniform(const PlanCatalog& catalog) { return {catalog, uniform_distributions(catalog)}; }
};

// --- individual rules -------------------------------------------------------

inline const Plan& choose_plan_random(const std::vector<Plan>& plans, Rng& rng)
{
    std::uniform_int_distribution<std::size_t> pick(0, plans.size() - 1);
    return plans[pick(rng)];
}

namespace detail {

// Total order used by every tie-break: cardinality, then lexicographic ids.
inline bool plan_less(const Plan& a, const Plan& b)
{
    if (a.size() != b.size())
        return a.size() < b.size();
    return a < b;
}

} // namespace detail

// Largest plan; among equals the lexicographically smallest.
inline const Plan& choose_plan_greedy(const std::vector<Plan>& plans)
{
    const Plan* best = &plans.front();
    for (const auto& p : plans)
        if (p.size() > best->size() || (p.size() == best->size() && p < *best))
            best = &p;
    return *best;
}

// Predicted completion of a plan: the slowest member's summed stage delay when
// each member receives size/|plan| cycles on top of its current backlog.
inline double predicted_plan_delay(const SimulationConfig& config, const QueueSnapshot& queues, const Plan& plan,
                                   double size)
{
    const double share = size / static_cast<double>(plan.size());
    double worst = 0.0;
    for (ServerId j : plan) {
        const auto& spec = config.server(j);
        const auto& q = queues.server(j);
        double d = 0.0;
        for (std::size_t k = 0; k < kStageCount; ++k)
            d += (q.backlog[k] + share) / spec.rates[k];
        worst = std::max(worst, d);
    }
    return worst;
}

inline const Plan& choose_plan_delay_aware(const SimulationConfig& config, const std::vector<Plan>& plans,
                                           const QueueSnapshot& queues, double size)
{
    const Plan* best = nullptr;
    double best_delay = std::numeric_limits<double>::infinity();
    for (const auto& p : plans) {
        const double d = predicted_plan_delay(config, queues, p, size);
        if (best == nullptr || d < best_delay || (d == best_delay && detail::plan_less(p, *best))) {
            best = &p;
            best_delay = d;
        }
    }
    return *best;
}

inline const Plan& choose_plan_probabilistic(const std::vector<Plan>& plans, const std::vector<double>& dist,
                                             Rng& rng)
{
    validate_distribution(dist, plans.size(), "distribution");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = u(rng);
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < plans.size(); ++k) {
        if (dist[k] <= 0.0)
            continue;
        last_positive = k;
        acc += dist[k];
        if (r < acc)
            return plans[k];
    }
    return plans[last_positive]; // r landed in the rounding gap below 1
}

// --- scheduler objects driven by the simulator --------------------------------

struct DecisionContext {
    std::size_t service_index = 0;
    double size = 0.0;
    double now = 0.0;
    const QueueSnapshot* queues = nullptr; // set only when needs_queues()
};

class Scheduler {
public:
    virtual ~Scheduler() = default;
    virtual Plan choose(const DecisionContext& ctx) = 0;
    virtual bool needs_queues() const { return false; }
    virtual std::string_view name() const = 0;
};

class RandomScheduler final : public Scheduler {
public:
    RandomScheduler(const PlanCatalog& catalog, std::uint64_t seed)
        : catalog_(catalog), rng_(mix_seed(seed, streams::kScheduler)) {}
    Plan choose(const DecisionContext& ctx) override { return choose_plan_random(catalog_.plans(ctx.service_index), rng_); }
    std::string_view name() const override { return "rd"; }

private:
    const PlanCatalog& catalog_;
    Rng rng_;
};

class GreedyScheduler final : public Scheduler {
public:
    explicit GreedyScheduler(const PlanCatalog& catalog) : catalog_(catalog) {}
    Plan choose(const DecisionContext& ctx) override { return choose_plan_greedy(catalog_.plans(ctx.service_index)); }
    std::string_view name() const override { return "gd"; }

private:
    const PlanCatalog& catalog_;
};

struct DelayAwareDecision {
    double t_ms = 0.0;
    std::size_t service_index = 0;
    double size = 0.0;
    Plan plan;
    double predicted_ms = 0.0;
};

// Re-evaluated on every arrival against the live queue state. With a log
// attached, every decision is recorded together with its predicted delay.
class DelayAwareScheduler final : public Scheduler {
public:
    DelayAwareScheduler(const PlanCatalog& catalog, const SimulationConfig& config)
        : catalog_(catalog), config_(config) {}
    Plan choose(const DecisionContext& ctx) override
    {
        const auto& plan = choose_plan_delay_aware(config_, catalog_.plans(ctx.service_index), *ctx.queues, ctx.size);
        if (log_)
            log_->push_back({ctx.now, ctx.service_index, ctx.size, plan,
                             predicted_plan_delay(config_, *ctx.queues, plan, ctx.size)});
        return plan;
    }
    bool needs_queues() const override { return true; }
    std::string_view name() const override { return "da"; }

    void set_log(std::vector<DelayAwareDecision>* log) { log_ = log; }

private:
    const PlanCatalog& catalog_;
    const SimulationConfig& config_;
    std::vector<DelayAwareDecision>* log_ = nullptr;
};

class PolicyScheduler final : public Scheduler {
public:
    PolicyScheduler(const PlanCatalog& catalog, PlanDistributions dists, std::uint64_t seed)
        : catalog_(catalog), policy_(catalog, std::move(dists)), rng_(mix_seed(seed, streams::kScheduler)) {}

    void install(PlanDistributions dists) { policy_ = PolicyMatrix(catalog_, std::move(dists)); }
    const PolicyMatrix& policy() const { return policy_; }

    Plan choose(const DecisionContext& ctx) override
    {
        return choose_plan_probabilistic(catalog_.plans(ctx.service_index), policy_.distributions[ctx.service_index],
                                         rng_);
    }
    std::string_view name() const override { return "policy"; }

private:
    const PlanCatalog& catalog_;
    PolicyMatrix policy_;
    Rng rng_;
};

// {"<service_id>": [p_1, ..., p_|B_i|], ...}; services left out get uniform.
inline PlanDistributions parse_policy_json(const nlohmann::json& doc, const PlanCatalog& catalog)
{
    if (!doc.is_object())
        throw ValidationError("policy", "expected an object keyed by service id");
    PlanDistributions dists = uniform_distributions(catalog);
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        ServiceId id = 0;
        try {
            id = std::stoi(it.key());
        } catch (const std::exception&) {
            throw ValidationError("policy." + it.key(), "key is not a service id");
        }
        std::size_t i = 0;
        try {
            i = catalog.index_of(id);
        } catch (const std::out_of_range&) {
            throw ValidationError("policy." + it.key(), "unknown service");
        }
        if (!it->is_array())
            throw ValidationError("policy." + it.key(), "expected an array of probabilities");
        for (const auto& v : *it)
            if (!v.is_number())
                throw ValidationError("policy." + it.key(), "expected numbers");
        dists[i] = it->get<std::vector<double>>();
    }
    validate_distributions(catalog, dists, "policy");
    return dists;
}

inline std::unique_ptr<Scheduler> make_scheduler(std::string_view name, const PlanCatalog& catalog,
                                                 const SimulationConfig& config, std::uint64_t seed,
                                                 const PlanDistributions* policy = nullptr)
{
    if (name == "rd")
        return std::make_unique<RandomScheduler>(catalog, seed);
    if (name == "gd")
        return std::make_unique<GreedyScheduler>(catalog);
    if (name == "da")
        return std::make_unique<DelayAwareScheduler>(catalog, config);
    if (name == "policy")
        return std::make_unique<PolicyScheduler>(catalog, policy ? *policy : uniform_distributions(catalog), seed);
    throw ValidationError("scheduler", "unknown scheduler '" + std::string(name) + "' (expected rd|gd|da|policy)");
}

} // namespace tailsim
