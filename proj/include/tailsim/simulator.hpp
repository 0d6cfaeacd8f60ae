#pragma once

// Discrete-event simulation of M edge servers, each a FCFS tandem
// uplink -> server -> downlink. A request is split evenly over the servers of
// its plan; it departs when the last of its sub-tasks leaves a downlink.
//
// Events are ordered by (time, insertion sequence), so a run is a pure
// function of (config, trace, scheduler state, seed).

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <queue>
#include <random>
#include <stdexcept>
#include <vector>

#include "tailsim/config.hpp"
#include "tailsim/errors.hpp"
#include "tailsim/plans.hpp"
#include "tailsim/queue_state.hpp"
#include "tailsim/rng.hpp"
#include "tailsim/schedulers.hpp"
#include "tailsim/workload.hpp"

namespace tailsim {

inline constexpr double kNever = std::numeric_limits<double>::infinity();

struct StageTimes {
    double enqueue = kNever;
    double start = kNever;
    double finish = kNever;
};

struct SubTask {
    std::size_t request = 0;
    ServerId server = 0;
    double work = 0.0; // cycles
    std::array<StageTimes, kStageCount> stages{};
};

struct RequestRecord {
    std::uint64_t id = 0;
    ServiceId service_id = 0;
    double arrival_ms = 0.0;
    double size = 0.0;
    Plan plan;
    double departure_ms = kNever;
    double latency_ms = kNever; // +inf while in flight or when cut off by the drain cap

    bool completed() const { return std::isfinite(departure_ms); }
};

// Even split of `size` over `parts` shares. All shares are size/parts except
// the last, which takes the remainder so the shares sum to `size` exactly.
inline std::vector<double> split_work(double size, std::size_t parts)
{
    if (parts == 0)
        throw ProtocolError("split_work: empty plan");
    std::vector<double> shares(parts, size / static_cast<double>(parts));
    double head = 0.0;
    for (std::size_t k = 0; k + 1 < parts; ++k)
        head += shares[k];
    shares.back() = size - head;
    return shares;
}

// Service time of one stage: deterministic work/rate in coupled mode, an
// exponential draw with that mean in analytic mode.
inline double stage_service_time(double work, double rate, SimMode mode, Rng& rng)
{
    const double mean = work / rate;
    if (mode == SimMode::coupled || mean <= 0.0)
        return mean;
    std::exponential_distribution<double> d(1.0 / mean);
    return d(rng);
}

struct SimulatorOptions {
    SimMode mode = SimMode::coupled;
    std::uint64_t seed = 1;
    bool keep_history = true; // retain finished sub-tasks (needed for past snapshots)
};

class Simulator {
public:
    Simulator(const SimulationConfig& config, const PlanCatalog& catalog, Scheduler& scheduler,
              SimulatorOptions options = {})
        : config_(config),
          catalog_(catalog),
          scheduler_(scheduler),
          options_(options),
          rng_(mix_seed(options.seed, streams::kService)),
          nodes_(config.server_count())
    {
    }

    Simulator(const Simulator&) = delete;
    Simulator& operator=(const Simulator&) = delete;

    // Queue the arrivals of `trace`; must not precede already loaded arrivals.
    void load(const RequestTrace& trace)
    {
        for (const auto& e : trace.entries) {
            if (!arrivals_.empty() && e.arrival_ms < arrivals_.back().arrival_ms)
                throw ProtocolError("trace is not sorted by arrival time");
            if (e.arrival_ms < clock_)
                throw ProtocolError("trace arrival precedes the simulation clock");
            arrivals_.push_back(e);
        }
        if (!arrival_scheduled_)
            schedule_next_arrival();
    }

    double now() const { return clock_; }

    // Process every event with time <= t, then set the clock to t.
    void advance_to(double t)
    {
        if (t < clock_)
            throw ProtocolError("advance_to: time moves backwards");
        while (!events_.empty() && events_.top().time <= t)
            process(pop());
        clock_ = t;
    }

    // Process events until the system is empty or the clock would pass `cap`.
    // Returns true if everything drained.
    bool drain(double cap)
    {
        while (!events_.empty() && events_.top().time <= cap)
            process(pop());
        if (events_.empty())
            return true;
        clock_ = std::max(clock_, cap);
        return false;
    }

    bool idle() const { return events_.empty(); }
    std::size_t arrived() const { return requests_.size(); }
    std::size_t completed() const { return completed_; }
    std::size_t in_flight() const { return requests_.size() - completed_; }
    double last_arrival_ms() const { return arrivals_.empty() ? 0.0 : arrivals_.back().arrival_ms; }

    const std::vector<RequestRecord>& requests() const { return requests_; }
    std::vector<RequestRecord> take_requests() { return std::move(requests_); }
    const std::vector<SubTask>& subtasks() const { return subtasks_; }
    const SimulationConfig& config() const { return config_; }

    // Queue state at the current clock.
    QueueSnapshot snapshot() const
    {
        QueueSnapshot s;
        s.t_ms = clock_;
        s.servers.resize(nodes_.size());
        for (std::size_t j = 0; j < nodes_.size(); ++j) {
            for (std::size_t k = 0; k < kStageCount; ++k) {
                const auto& st = nodes_[j].stages[k];
                s.servers[j].length[k] = st.queue.size();
                double backlog = st.queue.size() > 1 ? st.waiting_work : 0.0;
                if (st.busy)
                    backlog += remaining_work(subtasks_[st.queue.front()], k, clock_);
                s.servers[j].backlog[k] = backlog;
            }
        }
        return s;
    }

    // Queue state at an earlier instant, rebuilt from sub-task timestamps.
    QueueSnapshot snapshot(double at) const
    {
        if (at > clock_)
            throw ProtocolError("snapshot: requested time is in the future");
        if (at == clock_)
            return snapshot();
        if (!options_.keep_history)
            throw ProtocolError("snapshot: past snapshots need keep_history");
        QueueSnapshot s;
        s.t_ms = at;
        s.servers.resize(nodes_.size());
        for (const auto& st : subtasks_) {
            auto& q = s.servers[static_cast<std::size_t>(st.server - 1)];
            for (std::size_t k = 0; k < kStageCount; ++k) {
                if (st.stages[k].enqueue <= at && at < st.stages[k].finish) {
                    ++q.length[k];
                    q.backlog[k] += remaining_work(st, k, at);
                }
            }
        }
        return s;
    }

private:
    enum class EventKind : std::uint8_t { arrival, stage_done };

    struct Event {
        double time;
        std::uint64_t seq;
        EventKind kind;
        std::uint32_t server; // index, stage_done only
        std::uint32_t stage;  // stage_done only
    };

    struct Later {
        bool operator()(const Event& a, const Event& b) const
        {
            if (a.time != b.time)
                return a.time > b.time;
            return a.seq > b.seq;
        }
    };

    struct StageQueue {
        std::deque<std::size_t> queue; // head is in service when busy
        bool busy = false;
        double busy_until = 0.0;
        double waiting_work = 0.0; // work of queue entries behind the head
    };

    struct Node {
        std::array<StageQueue, kStageCount> stages;
    };

    static double remaining_work(const SubTask& st, std::size_t stage, double at)
    {
        const auto& t = st.stages[stage];
        if (!(t.start <= at))
            return st.work;
        const double span = t.finish - t.start;
        return span > 0.0 ? st.work * (t.finish - at) / span : 0.0;
    }

    void push(double time, EventKind kind, std::uint32_t server = 0, std::uint32_t stage = 0)
    {
        events_.push(Event{time, next_seq_++, kind, server, stage});
    }

    Event pop()
    {
        Event e = events_.top();
        events_.pop();
        clock_ = e.time;
        return e;
    }

    void schedule_next_arrival()
    {
        if (next_arrival_ < arrivals_.size()) {
            push(arrivals_[next_arrival_].arrival_ms, EventKind::arrival);
            arrival_scheduled_ = true;
        } else {
            arrival_scheduled_ = false;
        }
    }

    void process(const Event& e)
    {
        if (e.kind == EventKind::arrival)
            on_arrival();
        else
            on_stage_done(e.server, e.stage);
    }

    void validate_plan(const Plan& plan, ServiceId service) const
    {
        if (plan.empty())
            throw ProtocolError("scheduler returned an empty plan for service " + std::to_string(service));
        for (std::size_t k = 0; k < plan.size(); ++k) {
            const ServerId j = plan[k];
            if (j < 1 || static_cast<std::size_t>(j) > config_.server_count())
                throw ProtocolError("scheduler returned unknown server " + std::to_string(j));
            if (k > 0 && plan[k - 1] >= j)
                throw ProtocolError("scheduler returned a plan that is not sorted and duplicate-free");
            if (!config_.server(j).supports(service))
                throw ProtocolError("scheduler routed service " + std::to_string(service) + " to server " +
                                    std::to_string(j) + ", which does not support it");
        }
    }

    void on_arrival()
    {
        const TraceEntry entry = arrivals_[next_arrival_++];
        schedule_next_arrival();

        RequestRecord rec;
        rec.id = requests_.size();
        rec.service_id = entry.service_id;
        rec.arrival_ms = entry.arrival_ms;
        rec.size = entry.size_cycles;

        DecisionContext ctx;
        ctx.service_index = catalog_.index_of(entry.service_id);
        ctx.size = entry.size_cycles;
        ctx.now = clock_;
        QueueSnapshot queues;
        if (scheduler_.needs_queues()) {
            queues = snapshot();
            ctx.queues = &queues;
        }
        rec.plan = scheduler_.choose(ctx);
        validate_plan(rec.plan, rec.service_id);

        const std::size_t req = requests_.size();
        requests_.push_back(std::move(rec));
        pending_parts_.push_back(static_cast<std::uint32_t>(requests_[req].plan.size()));

        const auto shares = split_work(entry.size_cycles, requests_[req].plan.size());
        for (std::size_t k = 0; k < shares.size(); ++k) {
            SubTask st;
            st.request = req;
            st.server = requests_[req].plan[k];
            st.work = shares[k];
            enqueue(store(st), 0);
        }
    }

    std::size_t store(const SubTask& st)
    {
        if (!options_.keep_history && !free_slots_.empty()) {
            const std::size_t slot = free_slots_.back();
            free_slots_.pop_back();
            subtasks_[slot] = st;
            return slot;
        }
        subtasks_.push_back(st);
        return subtasks_.size() - 1;
    }

    void enqueue(std::size_t task, std::size_t stage)
    {
        SubTask& st = subtasks_[task];
        st.stages[stage].enqueue = clock_;
        auto& q = nodes_[static_cast<std::size_t>(st.server - 1)].stages[stage];
        q.queue.push_back(task);
        if (q.busy)
            q.waiting_work += st.work;
        else
            start_service(static_cast<std::size_t>(st.server - 1), stage);
    }

    void start_service(std::size_t server, std::size_t stage)
    {
        auto& q = nodes_[server].stages[stage];
        SubTask& st = subtasks_[q.queue.front()];
        const double rate = config_.servers[server].rates[stage];
        const double duration = stage_service_time(st.work, rate, options_.mode, rng_);
        st.stages[stage].start = clock_;
        st.stages[stage].finish = clock_ + duration;
        q.busy = true;
        q.busy_until = st.stages[stage].finish;
        push(st.stages[stage].finish, EventKind::stage_done, static_cast<std::uint32_t>(server),
             static_cast<std::uint32_t>(stage));
    }

    void on_stage_done(std::size_t server, std::size_t stage)
    {
        auto& q = nodes_[server].stages[stage];
        const std::size_t task = q.queue.front();
        q.queue.pop_front();
        q.busy = false;
        if (!q.queue.empty()) {
            q.waiting_work -= subtasks_[q.queue.front()].work;
            if (q.queue.size() == 1)
                q.waiting_work = 0.0; // drop accumulated rounding once nothing waits
            start_service(server, stage);
        } else {
            q.waiting_work = 0.0;
        }

        if (stage + 1 < kStageCount) {
            enqueue(task, stage + 1);
            return;
        }
        const std::size_t req = subtasks_[task].request;
        if (!options_.keep_history)
            free_slots_.push_back(task);
        if (--pending_parts_[req] == 0) {
            auto& rec = requests_[req];
            rec.departure_ms = clock_;
            rec.latency_ms = clock_ - rec.arrival_ms;
            ++completed_;
        }
    }

    const SimulationConfig& config_;
    const PlanCatalog& catalog_;
    Scheduler& scheduler_;
    SimulatorOptions options_;
    Rng rng_;

    std::vector<Node> nodes_;
    std::priority_queue<Event, std::vector<Event>, Later> events_;
    std::uint64_t next_seq_ = 0;
    double clock_ = 0.0;

    std::vector<TraceEntry> arrivals_;
    std::size_t next_arrival_ = 0;
    bool arrival_scheduled_ = false;

    std::vector<RequestRecord> requests_;
    std::vector<std::uint32_t> pending_parts_;
    std::size_t completed_ = 0;
    std::vector<SubTask> subtasks_;
    std::vector<std::size_t> free_slots_;
};

struct RunOptions {
    SimMode mode = SimMode::coupled;
    std::uint64_t seed = 1;
    double snapshot_interval_ms = 0.0; // 0 disables periodic snapshots
    double drain_cap_ms = 10000.0;     // after the last arrival
    bool keep_history = false;
};

struct SimulationResult {
    std::vector<RequestRecord> requests;
    std::vector<QueueSnapshot> snapshots;
    double end_ms = 0.0;
    bool drained = true;
};

using SnapshotObserver = std::function<void(const QueueSnapshot&)>;

// Batch run: feed the whole trace, sample snapshots on a fixed grid, then
// drain up to `drain_cap_ms` past the last arrival. Requests still in flight
// at the cap keep latency = +inf.
inline SimulationResult run(const SimulationConfig& config, const PlanCatalog& catalog, const RequestTrace& trace,
                            Scheduler& scheduler, const RunOptions& options, const SnapshotObserver& observer = {})
{
    Simulator sim(config, catalog, scheduler, {options.mode, options.seed, options.keep_history});
    sim.load(trace);
    SimulationResult result;
    const double last = trace.entries.empty() ? 0.0 : trace.entries.back().arrival_ms;
    const double cap = last + options.drain_cap_ms;

    if (options.snapshot_interval_ms > 0.0) {
        for (std::uint64_t k = 0;; ++k) {
            const double t = static_cast<double>(k) * options.snapshot_interval_ms;
            if (t > cap)
                break;
            sim.advance_to(t);
            auto snap = sim.snapshot();
            if (observer)
                observer(snap);
            result.snapshots.push_back(std::move(snap));
            if (t >= last && sim.idle())
                break;
        }
    }
    result.drained = sim.drain(cap);
    result.end_ms = sim.now();
    result.requests = sim.take_requests();
    return result;
}

} // namespace tailsim
