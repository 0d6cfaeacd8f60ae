#pragma once

// Static description of an edge deployment: servers with three-stage
// capabilities, services with Poisson arrival rates, and the knobs used by the
// simulator, the learning gateway and the bench driver.
//
// Canonical units: time in ms, arrival rates in requests/ms, task sizes in
// CPU cycles, stage rates in cycles/ms.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tailsim/errors.hpp"

namespace tailsim {

using ServerId = int;
using ServiceId = int;

enum class Stage : std::size_t { uplink = 0, server = 1, downlink = 2 };
inline constexpr std::size_t kStageCount = 3;
inline constexpr std::array<Stage, kStageCount> kStages{Stage::uplink, Stage::server, Stage::downlink};

enum class SizeDistribution { exponential, deterministic };
enum class SimMode { analytic, coupled };

namespace units {

inline constexpr double kMsPerSecond = 1000.0;

constexpr double per_second_to_per_ms(double rate) { return rate / kMsPerSecond; }
constexpr double per_ms_to_per_second(double rate) { return rate * kMsPerSecond; }

} // namespace units

inline std::string_view to_string(SimMode m) { return m == SimMode::analytic ? "analytic" : "coupled"; }
inline std::string_view to_string(SizeDistribution d)
{
    return d == SizeDistribution::exponential ? "exponential" : "deterministic";
}

inline SimMode parse_sim_mode(std::string_view s)
{
    if (s == "analytic")
        return SimMode::analytic;
    if (s == "coupled")
        return SimMode::coupled;
    throw ConfigError("sim.mode", "expected 'analytic' or 'coupled', got '" + std::string(s) + "'");
}

struct ServerSpec {
    ServerId id = 0;
    std::array<double, kStageCount> rates{}; // uplink, server, downlink (cycles/ms)
    std::vector<ServiceId> supported;

    double rate(Stage s) const { return rates[static_cast<std::size_t>(s)]; }
    bool supports(ServiceId service) const
    {
        return std::find(supported.begin(), supported.end(), service) != supported.end();
    }
};

struct ServiceSpec {
    ServiceId id = 0;
    double lambda = 0.0;    // requests/ms, before load scaling
    double mean_size = 0.0; // cycles
    SizeDistribution size_distribution = SizeDistribution::exponential;
};

struct RewardConfig {
    double gamma = 40.0; // tail threshold (ms)
    double beta1 = 0.1;
    double beta2 = 0.3;
    double beta3 = 0.1;
    double sigma = 0.99; // discount used by the agent; echoed to clients
};

struct StepConfig {
    double delta_ms = 1000.0;
    int steps_per_episode = 15;
};

struct SimSettings {
    SimMode mode = SimMode::coupled;
    double load_scale = 1.0;
    double horizon_ms = 60000.0;
    int subset_cap = 6;
};

struct BenchScenario {
    std::string name;
    std::vector<ServerId> servers;
    std::vector<ServiceId> services;
};

struct BenchSettings {
    std::vector<BenchScenario> scenarios;
    std::vector<std::string> schedulers{"rd", "gd", "da"};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    double target_utilization = 0.8;
};

struct SimulationConfig {
    std::vector<ServerSpec> servers;   // ids dense 1..M, stored in id order
    std::vector<ServiceSpec> services; // column order of every per-service vector
    RewardConfig reward;
    StepConfig step;
    SimSettings sim;
    BenchSettings bench;
    std::uint64_t seed = 1;

    std::size_t server_count() const { return servers.size(); }
    std::size_t service_count() const { return services.size(); }

    const ServerSpec& server(ServerId id) const
    {
        if (id < 1 || static_cast<std::size_t>(id) > servers.size())
            throw std::out_of_range("unknown server id " + std::to_string(id));
        return servers[static_cast<std::size_t>(id - 1)];
    }

    std::size_t service_index(ServiceId id) const
    {
        for (std::size_t i = 0; i < services.size(); ++i)
            if (services[i].id == id)
                return i;
        throw std::out_of_range("unknown service id " + std::to_string(id));
    }

    // Arrival rate after the global load scale is applied.
    double effective_lambda(std::size_t service_index) const
    {
        return services[service_index].lambda * sim.load_scale;
    }

    std::vector<ServerId> supporters(ServiceId service) const
    {
        std::vector<ServerId> out;
        for (const auto& s : servers)
            if (s.supports(service))
                out.push_back(s.id);
        return out;
    }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown_keys(const json& obj, const std::string& where,
                                std::initializer_list<std::string_view> allowed)
{
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw ConfigError(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
    }
}

inline const json& require(const json& obj, const std::string& key, const std::string& where)
{
    auto it = obj.find(key);
    if (it == obj.end())
        throw ConfigError(where + key, "missing required key");
    return *it;
}

inline double number(const json& v, const std::string& key)
{
    if (!v.is_number())
        throw ConfigError(key, "expected a number");
    return v.get<double>();
}

inline double positive(const json& v, const std::string& key)
{
    double x = number(v, key);
    if (!(x > 0.0) || !std::isfinite(x))
        throw ConfigError(key, "non-positive rate or size (" + v.dump() + ")");
    return x;
}

inline std::int64_t integer(const json& v, const std::string& key)
{
    if (!v.is_number_integer())
        throw ConfigError(key, "expected an integer");
    return v.get<std::int64_t>();
}

inline ServerSpec parse_server(const json& j, std::size_t pos)
{
    const std::string where = "servers[" + std::to_string(pos) + "].";
    if (!j.is_object())
        throw ConfigError("servers[" + std::to_string(pos) + "]", "expected an object");
    reject_unknown_keys(j, "servers[" + std::to_string(pos) + "]", {"id", "rates", "supported"});
    ServerSpec s;
    s.id = static_cast<ServerId>(integer(require(j, "id", where), where + "id"));
    const json& rates = require(j, "rates", where);
    if (!rates.is_array() || rates.size() != kStageCount)
        throw ConfigError(where + "rates", "expected [r_u, r_s, r_d]");
    for (std::size_t k = 0; k < kStageCount; ++k)
        s.rates[k] = positive(rates[k], where + "rates[" + std::to_string(k) + "]");
    const json& sup = require(j, "supported", where);
    if (!sup.is_array() || sup.empty())
        throw ConfigError(where + "supported", "expected a non-empty list of service ids");
    for (std::size_t k = 0; k < sup.size(); ++k)
        s.supported.push_back(static_cast<ServiceId>(integer(sup[k], where + "supported")));
    std::sort(s.supported.begin(), s.supported.end());
    s.supported.erase(std::unique(s.supported.begin(), s.supported.end()), s.supported.end());
    return s;
}

inline ServiceSpec parse_service(const json& j, std::size_t pos)
{
    const std::string where = "services[" + std::to_string(pos) + "].";
    if (!j.is_object())
        throw ConfigError("services[" + std::to_string(pos) + "]", "expected an object");
    reject_unknown_keys(j, "services[" + std::to_string(pos) + "]",
                        {"id", "lambda", "lambda_per_s", "mean_size", "size_distribution"});
    ServiceSpec s;
    s.id = static_cast<ServiceId>(integer(require(j, "id", where), where + "id"));
    const bool per_ms = j.contains("lambda");
    const bool per_s = j.contains("lambda_per_s");
    if (per_ms == per_s)
        throw ConfigError(where + "lambda", "give exactly one of lambda (req/ms) or lambda_per_s (req/s)");
    s.lambda = per_ms ? positive(j["lambda"], where + "lambda")
                      : units::per_second_to_per_ms(positive(j["lambda_per_s"], where + "lambda_per_s"));
    s.mean_size = positive(require(j, "mean_size", where), where + "mean_size");
    if (auto it = j.find("size_distribution"); it != j.end()) {
        if (*it == "exponential")
            s.size_distribution = SizeDistribution::exponential;
        else if (*it == "deterministic")
            s.size_distribution = SizeDistribution::deterministic;
        else
            throw ConfigError(where + "size_distribution", "expected 'exponential' or 'deterministic'");
    }
    return s;
}

} // namespace detail

// Structural checks shared by the parser and by programmatically built configs.
inline void validate(const SimulationConfig& c)
{
    if (c.servers.empty())
        throw ConfigError("servers", "at least one server is required");
    if (c.services.empty())
        throw ConfigError("services", "at least one service is required");
    for (std::size_t k = 0; k < c.servers.size(); ++k) {
        const auto& s = c.servers[k];
        const std::string where = "servers[" + std::to_string(k) + "]";
        if (s.id != static_cast<ServerId>(k + 1))
            throw ConfigError(where + ".id", "server ids must be unique and dense 1..M in order");
        for (double r : s.rates)
            if (!(r > 0.0) || !std::isfinite(r))
                throw ConfigError(where + ".rates", "non-positive rate");
        if (s.supported.empty())
            throw ConfigError(where + ".supported", "must be non-empty");
    }
    std::set<ServiceId> seen;
    for (std::size_t k = 0; k < c.services.size(); ++k) {
        const auto& s = c.services[k];
        const std::string where = "services[" + std::to_string(k) + "]";
        if (s.id <= 0 || !seen.insert(s.id).second)
            throw ConfigError(where + ".id", "service ids must be positive and unique");
        if (!(s.lambda > 0.0) || !std::isfinite(s.lambda))
            throw ConfigError(where + ".lambda", "non-positive rate");
        if (!(s.mean_size > 0.0) || !std::isfinite(s.mean_size))
            throw ConfigError(where + ".mean_size", "non-positive size");
        if (c.supporters(s.id).empty())
            throw ConfigError(where, "unsupported service " + std::to_string(s.id) + ": no server supports it");
    }
    const auto& r = c.reward;
    if (!(r.gamma > 0.0))
        throw ConfigError("reward.gamma", "must be positive");
    if (!(r.beta1 > 0.0) || !(r.beta2 > 0.0) || !(r.beta3 > 0.0))
        throw ConfigError("reward", "beta1, beta2 and beta3 must be positive");
    if (!(r.sigma > 0.0) || r.sigma > 1.0)
        throw ConfigError("reward.sigma", "must lie in (0, 1]");
    if (!(c.step.delta_ms > 0.0))
        throw ConfigError("step.delta_ms", "must be positive");
    if (c.step.delta_ms < 10.0 * r.gamma)
        throw ConfigError("step.delta_ms", "window must satisfy delta_ms >= 10 * reward.gamma");
    if (c.step.steps_per_episode < 1)
        throw ConfigError("step.steps_per_episode", "must be >= 1");
    if (!(c.sim.load_scale > 0.0))
        throw ConfigError("sim.load_scale", "must be positive");
    if (!(c.sim.horizon_ms > 0.0))
        throw ConfigError("sim.horizon_ms", "must be positive");
    if (c.sim.subset_cap < 1)
        throw ConfigError("sim.subset_cap", "must be >= 1");
}

inline SimulationConfig parse_config(const nlohmann::json& doc)
{
    using detail::integer;
    using detail::number;
    using detail::positive;
    if (!doc.is_object())
        throw ConfigError("", "config root must be a JSON object");
    detail::reject_unknown_keys(doc, "", {"servers", "services", "reward", "step", "sim", "bench", "seed"});

    SimulationConfig c;
    const auto& servers = detail::require(doc, "servers", "");
    if (!servers.is_array())
        throw ConfigError("servers", "expected an array");
    for (std::size_t k = 0; k < servers.size(); ++k)
        c.servers.push_back(detail::parse_server(servers[k], k));
    std::sort(c.servers.begin(), c.servers.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

    const auto& services = detail::require(doc, "services", "");
    if (!services.is_array())
        throw ConfigError("services", "expected an array");
    for (std::size_t k = 0; k < services.size(); ++k)
        c.services.push_back(detail::parse_service(services[k], k));

    if (auto it = doc.find("reward"); it != doc.end()) {
        detail::reject_unknown_keys(*it, "reward", {"gamma", "beta1", "beta2", "beta3", "sigma"});
        auto& r = c.reward;
        if (it->contains("gamma")) r.gamma = number((*it)["gamma"], "reward.gamma");
        if (it->contains("beta1")) r.beta1 = number((*it)["beta1"], "reward.beta1");
        if (it->contains("beta2")) r.beta2 = number((*it)["beta2"], "reward.beta2");
        if (it->contains("beta3")) r.beta3 = number((*it)["beta3"], "reward.beta3");
        if (it->contains("sigma")) r.sigma = number((*it)["sigma"], "reward.sigma");
    }
    if (auto it = doc.find("step"); it != doc.end()) {
        detail::reject_unknown_keys(*it, "step", {"delta_ms", "steps_per_episode"});
        if (it->contains("delta_ms")) c.step.delta_ms = number((*it)["delta_ms"], "step.delta_ms");
        if (it->contains("steps_per_episode"))
            c.step.steps_per_episode = static_cast<int>(integer((*it)["steps_per_episode"], "step.steps_per_episode"));
    }
    if (auto it = doc.find("sim"); it != doc.end()) {
        detail::reject_unknown_keys(*it, "sim", {"mode", "load_scale", "horizon_ms", "subset_cap"});
        if (it->contains("mode")) {
            if (!(*it)["mode"].is_string())
                throw ConfigError("sim.mode", "expected a string");
            c.sim.mode = parse_sim_mode((*it)["mode"].get<std::string>());
        }
        if (it->contains("load_scale")) c.sim.load_scale = positive((*it)["load_scale"], "sim.load_scale");
        if (it->contains("horizon_ms")) c.sim.horizon_ms = number((*it)["horizon_ms"], "sim.horizon_ms");
        if (it->contains("subset_cap"))
            c.sim.subset_cap = static_cast<int>(integer((*it)["subset_cap"], "sim.subset_cap"));
    }
    if (auto it = doc.find("bench"); it != doc.end()) {
        detail::reject_unknown_keys(*it, "bench", {"scenarios", "schedulers", "seeds", "target_utilization"});
        auto& b = c.bench;
        if (it->contains("scenarios")) {
            const auto& arr = (*it)["scenarios"];
            if (!arr.is_array())
                throw ConfigError("bench.scenarios", "expected an array");
            for (std::size_t k = 0; k < arr.size(); ++k) {
                const std::string where = "bench.scenarios[" + std::to_string(k) + "]";
                detail::reject_unknown_keys(arr[k], where, {"name", "servers", "services"});
                BenchScenario sc;
                sc.name = arr[k].value("name", "scenario" + std::to_string(k));
                for (const auto& v : detail::require(arr[k], "servers", where + "."))
                    sc.servers.push_back(static_cast<ServerId>(integer(v, where + ".servers")));
                for (const auto& v : detail::require(arr[k], "services", where + "."))
                    sc.services.push_back(static_cast<ServiceId>(integer(v, where + ".services")));
                b.scenarios.push_back(std::move(sc));
            }
        }
        if (it->contains("schedulers"))
            b.schedulers = (*it)["schedulers"].get<std::vector<std::string>>();
        if (it->contains("seeds"))
            b.seeds = (*it)["seeds"].get<std::vector<std::uint64_t>>();
        if (it->contains("target_utilization"))
            b.target_utilization = positive((*it)["target_utilization"], "bench.target_utilization");
    }
    if (auto it = doc.find("seed"); it != doc.end()) {
        if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0))
            throw ConfigError("seed", "expected a non-negative integer");
        c.seed = it->get<std::uint64_t>();
    }
    validate(c);
    return c;
}

inline SimulationConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("", "cannot open config file " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("", std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(doc);
}

// Echo in the same schema `parse_config` accepts.
inline nlohmann::json to_json(const SimulationConfig& c)
{
    nlohmann::json j;
    j["servers"] = nlohmann::json::array();
    for (const auto& s : c.servers)
        j["servers"].push_back({{"id", s.id}, {"rates", s.rates}, {"supported", s.supported}});
    j["services"] = nlohmann::json::array();
    for (const auto& s : c.services)
        j["services"].push_back({{"id", s.id},
                                 {"lambda", s.lambda},
                                 {"mean_size", s.mean_size},
                                 {"size_distribution", std::string(to_string(s.size_distribution))}});
    j["reward"] = {{"gamma", c.reward.gamma},
                   {"beta1", c.reward.beta1},
                   {"beta2", c.reward.beta2},
                   {"beta3", c.reward.beta3},
                   {"sigma", c.reward.sigma}};
    j["step"] = {{"delta_ms", c.step.delta_ms}, {"steps_per_episode", c.step.steps_per_episode}};
    j["sim"] = {{"mode", std::string(to_string(c.sim.mode))},
                {"load_scale", c.sim.load_scale},
                {"horizon_ms", c.sim.horizon_ms},
                {"subset_cap", c.sim.subset_cap}};
    nlohmann::json scenarios = nlohmann::json::array();
    for (const auto& sc : c.bench.scenarios)
        scenarios.push_back({{"name", sc.name}, {"servers", sc.servers}, {"services", sc.services}});
    j["bench"] = {{"scenarios", scenarios},
                  {"schedulers", c.bench.schedulers},
                  {"seeds", c.bench.seeds},
                  {"target_utilization", c.bench.target_utilization}};
    j["seed"] = c.seed;
    return j;
}

// Restrict a config to a subset of servers and services. Servers are renumbered
// densely in the given order; services keep their ids.
inline SimulationConfig restrict_config(const SimulationConfig& base, const std::vector<ServerId>& servers,
                                        const std::vector<ServiceId>& services)
{
    SimulationConfig c = base;
    c.servers.clear();
    c.services.clear();
    for (std::size_t k = 0; k < servers.size(); ++k) {
        ServerSpec s = base.server(servers[k]);
        s.id = static_cast<ServerId>(k + 1);
        c.servers.push_back(std::move(s));
    }
    for (ServiceId id : services)
        c.services.push_back(base.services[base.service_index(id)]);
    for (auto& s : c.servers) {
        std::vector<ServiceId> kept;
        for (ServiceId id : s.supported)
            if (std::find(services.begin(), services.end(), id) != services.end())
                kept.push_back(id);
        if (kept.empty())
            kept = s.supported; // supported must stay non-empty; extra ids are never routed
        s.supported = std::move(kept);
    }
    validate(c);
    return c;
}

} // namespace tailsim
