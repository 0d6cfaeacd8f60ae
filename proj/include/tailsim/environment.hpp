#pragma once

// Stepped learning environment over the simulator.
//
// An episode is N windows of length Delta. Each step installs a per-service
// plan distribution, advances the simulator by one window while sampling the
// queues every Delta/100, credits finished requests to the window and returns
// the enhanced state together with the window reward
//
//     R = sum_{n credited} beta1 1{d_n < gamma} - beta2 1{d_n >= gamma}
//                          - beta3 * mean_{j in plan(n)} (eps_u^j + eps_s^j + eps_d^j)
//
// where eps is the positive growth of each stage's queue length over the window.
//
// Crediting rule (every arrival is credited exactly once):
//   * an arrival of the window that departed by the window end is credited now;
//   * one still in flight that arrived more than gamma before the window end
//     is credited now as a tail event (its latency already exceeds gamma);
//   * one still in flight that arrived within gamma of the window end is
//     deferred to the window in which it departs;
//   * at the end of the episode everything still in flight is credited as a
//     tail event.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tailsim/analytics.hpp"
#include "tailsim/config.hpp"
#include "tailsim/errors.hpp"
#include "tailsim/plans.hpp"
#include "tailsim/queue_state.hpp"
#include "tailsim/rng.hpp"
#include "tailsim/schedulers.hpp"
#include "tailsim/simulator.hpp"
#include "tailsim/workload.hpp"

namespace tailsim {

inline constexpr std::size_t kQueueFeatures = 12;    // max, min, ave, var x 3 stages
inline constexpr std::size_t kAnalyticFeatures = 6;  // eta, eta', eta'', T, T', T''
inline constexpr std::size_t kFeaturesPerServer = kQueueFeatures + kAnalyticFeatures;
inline constexpr std::size_t kSamplesPerWindow = 100;

inline constexpr const char* kEpsilonRule = "plan_averaged_positive_growth";

// Server-major, feature-minor:
//   q_max[u,s,d], q_min[u,s,d], q_ave[u,s,d], q_var[u,s,d],
//   eta, d_eta, d2_eta, mgf, d_mgf, d2_mgf
struct EnhancedState {
    std::vector<double> values;

    std::size_t servers() const { return values.size() / kFeaturesPerServer; }
    std::span<const double> server(std::size_t j) const
    {
        return std::span<const double>(values).subspan(j * kFeaturesPerServer, kFeaturesPerServer);
    }
};

// Analytic features of one server; the vacuous sentinel is (1, 0, 0, 0, 0, 0).
inline std::array<double, kAnalyticFeatures> analytic_features(const ServerAnalysis& a)
{
    const auto& b = a.bound;
    if (b.vacuous)
        return {1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    return {b.eta.value, b.eta.grad, b.eta.hess, b.mgf.value, b.mgf.grad, b.mgf.hess};
}

// Queue statistics over the window's snapshots plus analytic features at x*
// under the installed routing matrix.
inline EnhancedState compute_enhanced_state(std::span<const QueueSnapshot> window, const OmegaMatrix& omega,
                                            const SimulationConfig& config)
{
    if (window.empty())
        throw std::invalid_argument("compute_enhanced_state: at least one snapshot is required");
    const std::size_t m = config.server_count();
    const auto analysis = analyze_system(config, omega, config.reward.gamma);
    EnhancedState state;
    state.values.assign(m * kFeaturesPerServer, 0.0);
    const auto n = static_cast<double>(window.size());
    for (std::size_t j = 0; j < m; ++j) {
        double* f = state.values.data() + j * kFeaturesPerServer;
        for (std::size_t k = 0; k < kStageCount; ++k) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -lo;
            double sum = 0.0;
            for (const auto& s : window) {
                const auto q = static_cast<double>(s.servers.at(j).length[k]);
                lo = std::min(lo, q);
                hi = std::max(hi, q);
                sum += q;
            }
            const double mean = sum / n;
            double var = 0.0;
            for (const auto& s : window) {
                const double d = static_cast<double>(s.servers[j].length[k]) - mean;
                var += d * d;
            }
            f[0 + k] = hi;
            f[3 + k] = lo;
            f[6 + k] = mean;
            f[9 + k] = var / n;
        }
        const auto a = analytic_features(analysis.servers[j]);
        std::copy(a.begin(), a.end(), f + kQueueFeatures);
    }
    return state;
}

// Per-request reward term.
inline double request_reward(const RewardConfig& r, double latency_ms, double mean_growth)
{
    const double hit = latency_ms < r.gamma ? r.beta1 : -r.beta2;
    return hit - r.beta3 * mean_growth;
}

struct CreditEntry {
    std::uint64_t request_id = 0;
    double latency_ms = 0.0; // +inf when credited while still in flight
    bool tail = false;       // counted as d >= gamma
    double mean_growth = 0.0;
    double reward = 0.0;
};

struct StepWindow {
    std::size_t index = 0;
    double start_ms = 0.0;
    double end_ms = 0.0;
    std::vector<CreditEntry> credited;
    std::vector<std::uint64_t> deferred; // carried into the next window
    std::vector<std::array<double, kStageCount>> epsilon; // per server
};

struct StepResult {
    EnhancedState state;
    double reward = 0.0;
    bool done = false;
    StepWindow window;
    double kappa_bound = 0.0;

    nlohmann::json info() const
    {
        return {{"window_index", window.index},
                {"credited", window.credited.size()},
                {"deferred", window.deferred.size()},
                {"kappa_bound", kappa_bound},
                {"epsilon_rule", kEpsilonRule}};
    }
};

class Environment {
public:
    explicit Environment(SimulationConfig config)
        : config_(std::move(config)), catalog_(config_)
    {
        validate(config_);
    }

    Environment(const Environment&) = delete;
    Environment& operator=(const Environment&) = delete;

    const SimulationConfig& config() const { return config_; }
    const PlanCatalog& catalog() const { return catalog_; }
    std::size_t state_dim() const { return config_.server_count() * kFeaturesPerServer; }
    bool started() const { return sim_ != nullptr; }
    bool done() const { return started() && window_ >= static_cast<std::size_t>(config_.step.steps_per_episode); }
    std::size_t window_index() const { return window_; }

    // Fresh episode: new trace from (seed, episode), idle queues, uniform policy.
    EnhancedState reset(std::uint64_t seed, std::uint64_t episode = 0)
    {
        const std::uint64_t s = mix_seed(mix_seed(seed, streams::kEpisode), episode);
        sim_.reset();
        scheduler_ = std::make_unique<PolicyScheduler>(catalog_, uniform_distributions(catalog_), s);
        sim_ = std::make_unique<Simulator>(config_, catalog_, *scheduler_,
                                           SimulatorOptions{config_.sim.mode, s, false});
        trace_ = generate_workload(config_, s, grid_time(kSamplesPerWindow * episode_steps()));
        sim_->load(trace_);
        window_ = 0;
        next_unassigned_ = 0;
        deferred_.clear();
        windows_.clear();
        snapshots_.clear();
        snapshots_.push_back(sim_->snapshot());
        const std::span<const QueueSnapshot> first(snapshots_.data(), 1);
        return compute_enhanced_state(first, scheduler_->policy().omega, config_);
    }

    StepResult step(const PlanDistributions& action)
    {
        if (!started())
            throw ProtocolError("step before reset");
        if (done())
            throw ProtocolError("episode is finished; call reset");
        validate_distributions(catalog_, action);
        scheduler_->install(action);

        const std::size_t n = window_;
        const std::size_t first_sample = snapshots_.size() - 1;
        for (std::size_t k = 1; k <= kSamplesPerWindow; ++k) {
            sim_->advance_to(grid_time(n * kSamplesPerWindow + k));
            snapshots_.push_back(sim_->snapshot());
        }
        const std::span<const QueueSnapshot> samples(snapshots_.data() + first_sample, kSamplesPerWindow + 1);

        StepResult out;
        out.window.index = n;
        out.window.start_ms = samples.front().t_ms;
        out.window.end_ms = samples.back().t_ms;
        ++window_;
        out.done = done();
        out.window.epsilon = queue_growth(samples.front(), samples.back());
        credit(out.window, out.done);
        for (const auto& c : out.window.credited)
            out.reward += c.reward;
        out.state = compute_enhanced_state(samples, scheduler_->policy().omega, config_);
        out.kappa_bound = analyze_system(config_, scheduler_->policy().omega, config_.reward.gamma).bound.kappa_bound;
        windows_.push_back(out.window);
        return out;
    }

    // Episode artifacts, for export and auditing.
    const RequestTrace& trace() const { return trace_; }
    const std::vector<RequestRecord>& requests() const { return sim_->requests(); }
    const std::vector<QueueSnapshot>& snapshots() const { return snapshots_; }
    const std::vector<StepWindow>& windows() const { return windows_; }

private:
    std::size_t episode_steps() const { return static_cast<std::size_t>(config_.step.steps_per_episode); }

    // Sample instants are g * Delta / 100 for integer g; window n spans
    // samples 100 n .. 100 (n + 1).
    double grid_time(std::size_t g) const
    {
        return static_cast<double>(g) * config_.step.delta_ms / static_cast<double>(kSamplesPerWindow);
    }

    static std::vector<std::array<double, kStageCount>> queue_growth(const QueueSnapshot& start,
                                                                     const QueueSnapshot& end)
    {
        std::vector<std::array<double, kStageCount>> eps(start.servers.size());
        for (std::size_t j = 0; j < eps.size(); ++j)
            for (std::size_t k = 0; k < kStageCount; ++k) {
                const double grow = static_cast<double>(end.servers[j].length[k]) -
                                    static_cast<double>(start.servers[j].length[k]);
                eps[j][k] = std::max(0.0, grow);
            }
        return eps;
    }

    CreditEntry make_entry(const RequestRecord& r, const StepWindow& w, bool in_flight) const
    {
        CreditEntry e;
        e.request_id = r.id;
        e.latency_ms = in_flight ? kNever : r.latency_ms;
        e.tail = in_flight || r.latency_ms >= config_.reward.gamma;
        double growth = 0.0;
        for (ServerId j : r.plan) {
            const auto& eps = w.epsilon[static_cast<std::size_t>(j - 1)];
            growth += eps[0] + eps[1] + eps[2];
        }
        e.mean_growth = growth / static_cast<double>(r.plan.size());
        e.reward = request_reward(config_.reward, e.latency_ms, e.mean_growth);
        return e;
    }

    void credit(StepWindow& w, bool episode_end)
    {
        const auto& reqs = sim_->requests();
        const double t_end = w.end_ms;
        const double gamma = config_.reward.gamma;
        const auto departed = [&](const RequestRecord& r) { return r.completed() && r.departure_ms <= t_end; };

        std::vector<std::uint64_t> still_deferred;
        for (std::uint64_t id : deferred_) {
            const auto& r = reqs[id];
            if (departed(r))
                w.credited.push_back(make_entry(r, w, false));
            else if (episode_end)
                w.credited.push_back(make_entry(r, w, true));
            else
                still_deferred.push_back(id);
        }
        for (; next_unassigned_ < reqs.size() && reqs[next_unassigned_].arrival_ms < t_end; ++next_unassigned_) {
            const auto& r = reqs[next_unassigned_];
            if (departed(r))
                w.credited.push_back(make_entry(r, w, false));
            else if (episode_end || r.arrival_ms < t_end - gamma)
                w.credited.push_back(make_entry(r, w, true));
            else
                still_deferred.push_back(r.id);
        }
        deferred_ = std::move(still_deferred);
        w.deferred = deferred_;
    }

    SimulationConfig config_;
    PlanCatalog catalog_;
    std::unique_ptr<PolicyScheduler> scheduler_;
    std::unique_ptr<Simulator> sim_;
    RequestTrace trace_;
    std::size_t window_ = 0;
    std::size_t next_unassigned_ = 0;
    std::vector<std::uint64_t> deferred_;
    std::vector<StepWindow> windows_;
    std::vector<QueueSnapshot> snapshots_;
};

} // namespace tailsim
