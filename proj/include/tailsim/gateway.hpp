#pragma once

// HTTP + JSON front end for Environment sessions.
//
//   POST   /v1/reset    {seed, episode?, session?} -> {session, state, m, i, plan_shapes}
//   POST   /v1/step     {session, action}          -> {state, reward, done, info}
//   GET    /v1/spec     ?session=                  -> config echo and state layout
//   DELETE /v1/session  ?session=                  -> {deleted}
//
// Every session owns one Environment; calls on a session run one at a time.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "tailsim/config.hpp"
#include "tailsim/environment.hpp"
#include "tailsim/errors.hpp"

namespace tailsim {

struct HttpError : std::runtime_error {
    HttpError(int status, std::string field, const std::string& message)
        : std::runtime_error(message), status(status), field(std::move(field)) {}
    int status;
    std::string field;
};

class Gateway {
public:
    explicit Gateway(SimulationConfig config) : config_(std::move(config)) { validate(config_); }

    nlohmann::json reset(const nlohmann::json& body)
    {
        if (!body.is_object())
            throw HttpError(400, "body", "expected a JSON object");
        const std::uint64_t seed = unsigned_field(body, "seed", config_.seed);
        const std::uint64_t episode = unsigned_field(body, "episode", 0);

        std::shared_ptr<Session> session;
        std::string token;
        if (body.contains("session")) {
            token = string_field(body, "session");
            session = find(token);
        } else {
            session = std::make_shared<Session>(config_);
            std::lock_guard lock(mu_);
            token = "s" + std::to_string(++next_id_);
            sessions_.emplace(token, session);
        }
        std::lock_guard lock(session->mu);
        const auto state = session->env.reset(seed, episode);
        const auto& catalog = session->env.catalog();
        return {{"session", token},
                {"state", state.values},
                {"m", config_.server_count()},
                {"i", config_.service_count()},
                {"plan_shapes", catalog.shapes()}};
    }

    nlohmann::json step(const nlohmann::json& body)
    {
        if (!body.is_object())
            throw HttpError(400, "body", "expected a JSON object");
        auto session = find(string_field(body, "session"));
        if (!body.contains("action"))
            throw HttpError(400, "action", "missing action");
        const auto action = parse_action(body["action"]);

        std::lock_guard lock(session->mu);
        if (!session->env.started())
            throw HttpError(409, "session", "session has not been reset");
        if (session->env.done())
            throw HttpError(409, "session", "episode is finished; call /v1/reset");
        StepResult r;
        try {
            r = session->env.step(action);
        } catch (const ValidationError& e) {
            throw HttpError(400, e.field(), e.what());
        }
        return {{"state", r.state.values}, {"reward", r.reward}, {"done", r.done}, {"info", r.info()}};
    }

    nlohmann::json spec(const std::string& token)
    {
        auto session = find(token);
        std::lock_guard lock(session->mu);
        const auto& catalog = session->env.catalog();
        nlohmann::json plans = nlohmann::json::array();
        for (std::size_t i = 0; i < catalog.service_count(); ++i)
            plans.push_back(catalog.plans(i));
        return {{"session", token},
                {"config", to_json(config_)},
                {"state_dim", session->env.state_dim()},
                {"plan_shapes", catalog.shapes()},
                {"plans", plans},
                {"state_layout",
                 {{"order", "server-major, feature-minor"},
                  {"features",
                   {"q_max_up", "q_max_srv", "q_max_down", "q_min_up", "q_min_srv", "q_min_down", "q_ave_up",
                    "q_ave_srv", "q_ave_down", "q_var_up", "q_var_srv", "q_var_down", "eta", "d_eta", "d2_eta", "mgf",
                    "d_mgf", "d2_mgf"}}}},
                {"epsilon_rule", kEpsilonRule}};
    }

    nlohmann::json remove(const std::string& token)
    {
        std::shared_ptr<Session> victim;
        {
            std::lock_guard lock(mu_);
            auto it = sessions_.find(token);
            if (it == sessions_.end())
                throw HttpError(404, "session", "unknown session '" + token + "'");
            victim = std::move(it->second);
            sessions_.erase(it);
        }
        std::lock_guard wait(victim->mu); // let an in-progress call finish
        return {{"deleted", token}};
    }

    std::size_t session_count() const
    {
        std::lock_guard lock(mu_);
        return sessions_.size();
    }

    void clear()
    {
        std::lock_guard lock(mu_);
        sessions_.clear();
    }

    static PlanDistributions parse_action(const nlohmann::json& a)
    {
        if (!a.is_array())
            throw HttpError(400, "action", "expected an array of per-service probability arrays");
        PlanDistributions out;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const std::string field = "action[" + std::to_string(i) + "]";
            if (!a[i].is_array())
                throw HttpError(400, field, "expected an array of probabilities");
            std::vector<double> d;
            for (std::size_t k = 0; k < a[i].size(); ++k) {
                if (!a[i][k].is_number())
                    throw HttpError(400, field + "[" + std::to_string(k) + "]", "expected a number");
                d.push_back(a[i][k].get<double>());
            }
            out.push_back(std::move(d));
        }
        return out;
    }

private:
    struct Session {
        explicit Session(const SimulationConfig& c) : env(c) {}
        std::mutex mu;
        Environment env;
    };

    std::shared_ptr<Session> find(const std::string& token)
    {
        std::lock_guard lock(mu_);
        auto it = sessions_.find(token);
        if (it == sessions_.end())
            throw HttpError(404, "session", "unknown session '" + token + "'");
        return it->second;
    }

    static std::string string_field(const nlohmann::json& body, const std::string& key)
    {
        auto it = body.find(key);
        if (it == body.end() || !it->is_string())
            throw HttpError(400, key, "expected a string");
        return it->get<std::string>();
    }

    static std::uint64_t unsigned_field(const nlohmann::json& body, const std::string& key, std::uint64_t fallback)
    {
        auto it = body.find(key);
        if (it == body.end())
            return fallback;
        if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0))
            throw HttpError(400, key, "expected a non-negative integer");
        return it->get<std::uint64_t>();
    }

    SimulationConfig config_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t next_id_ = 0;
};

// httplib transport around a Gateway.
class GatewayServer {
public:
    explicit GatewayServer(SimulationConfig config) : gateway_(std::move(config))
    {
        // httplib's default also sets SO_REUSEPORT, which would let a second
        // server share a port that is already in use.
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
        routes();
    }

    ~GatewayServer() { stop(); }

    // Returns false when the address cannot be bound.
    bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }

    // Binds an ephemeral port and returns it, or -1.
    int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }

    // Blocks until stop().
    bool listen() { return server_.listen_after_bind(); }

    void start()
    {
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    void stop()
    {
        server_.stop();
        if (thread_.joinable())
            thread_.join();
        gateway_.clear();
    }

    Gateway& gateway() { return gateway_; }

private:
    template <typename Fn>
    static void respond(httplib::Response& res, Fn&& fn)
    {
        try {
            res.set_content(fn().dump(), "application/json");
            res.status = 200;
        } catch (const HttpError& e) {
            res.status = e.status;
            res.set_content(nlohmann::json{{"error", e.what()}, {"field", e.field}}.dump(), "application/json");
        } catch (const nlohmann::json::exception& e) {
            res.status = 400;
            res.set_content(nlohmann::json{{"error", e.what()}, {"field", "body"}}.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 500;
            res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
        }
    }

    static nlohmann::json body_of(const httplib::Request& req)
    {
        if (req.body.empty())
            return nlohmann::json::object();
        try {
            return nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::parse_error& e) {
            throw HttpError(400, "body", std::string("invalid JSON: ") + e.what());
        }
    }

    static std::string session_of(const httplib::Request& req)
    {
        if (req.has_param("session"))
            return req.get_param_value("session");
        const auto body = body_of(req);
        if (body.is_object() && body.contains("session") && body["session"].is_string())
            return body["session"].get<std::string>();
        throw HttpError(400, "session", "missing session");
    }

    void routes()
    {
        server_.Post("/v1/reset", [this](const httplib::Request& req, httplib::Response& res) {
            respond(res, [&] { return gateway_.reset(body_of(req)); });
        });
        server_.Post("/v1/step", [this](const httplib::Request& req, httplib::Response& res) {
            respond(res, [&] { return gateway_.step(body_of(req)); });
        });
        server_.Get("/v1/spec", [this](const httplib::Request& req, httplib::Response& res) {
            respond(res, [&] { return gateway_.spec(session_of(req)); });
        });
        server_.Delete("/v1/session", [this](const httplib::Request& req, httplib::Response& res) {
            respond(res, [&] { return gateway_.remove(session_of(req)); });
        });
    }

    Gateway gateway_;
    httplib::Server server_;
    std::thread thread_;
};

} // namespace tailsim
