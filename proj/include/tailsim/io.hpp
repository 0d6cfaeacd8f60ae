#pragma once

// CSV formats for per-request records, queue snapshots and report outputs.
//
//   requests:  id,service_id,arrival_ms,departure_ms,latency_ms,plan
//   snapshots: t_ms,server_id,q_up,q_srv,q_down,backlog_up,backlog_srv,backlog_down
//   cdf:       latency_ms,fraction
//   averages:  server_id,avg_queue_length   (last row "all" is the cross-server mean)
//   omega:     one row per service, one column per server, no header
//
// Numbers use the shortest round-trip decimal form, so reading a file back
// reproduces the doubles bit for bit. Unfinished requests carry "inf".

#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tailsim/analytics.hpp"
#include "tailsim/csv.hpp"
#include "tailsim/metrics.hpp"
#include "tailsim/queue_state.hpp"
#include "tailsim/simulator.hpp"

namespace tailsim {

inline const std::vector<std::string> kRequestCsvHeader{"id",         "service_id", "arrival_ms",
                                                        "departure_ms", "latency_ms", "plan"};
inline const std::vector<std::string> kSnapshotCsvHeader{"t_ms",       "server_id",   "q_up",       "q_srv",
                                                         "q_down",     "backlog_up",  "backlog_srv", "backlog_down"};

inline void write_requests_csv(std::ostream& out, const std::vector<RequestRecord>& records)
{
    out << "id,service_id,arrival_ms,departure_ms,latency_ms,plan\n";
    for (const auto& r : records)
        out << r.id << ',' << r.service_id << ',' << csv::num(r.arrival_ms) << ',' << csv::num(r.departure_ms) << ','
            << csv::num(r.latency_ms) << ',' << plan_to_string(r.plan) << '\n';
}

inline Plan parse_plan(const std::string& s)
{
    Plan p;
    for (const auto& part : csv::split(s, '+'))
        p.push_back(static_cast<ServerId>(csv::to_long(part)));
    return p;
}

// `size` is not part of the format and reads back as 0.
inline std::vector<RequestRecord> read_requests_csv(std::istream& in)
{
    std::vector<RequestRecord> out;
    for (const auto& row : csv::read(in, kRequestCsvHeader)) {
        RequestRecord r;
        r.id = static_cast<std::uint64_t>(csv::to_long(row[0]));
        r.service_id = static_cast<ServiceId>(csv::to_long(row[1]));
        r.arrival_ms = csv::to_double(row[2]);
        r.departure_ms = csv::to_double(row[3]);
        r.latency_ms = csv::to_double(row[4]);
        r.plan = parse_plan(row[5]);
        out.push_back(std::move(r));
    }
    return out;
}

inline void write_snapshots_csv(std::ostream& out, const std::vector<QueueSnapshot>& snapshots)
{
    out << "t_ms,server_id,q_up,q_srv,q_down,backlog_up,backlog_srv,backlog_down\n";
    for (const auto& s : snapshots)
        for (std::size_t j = 0; j < s.servers.size(); ++j) {
            const auto& q = s.servers[j];
            out << csv::num(s.t_ms) << ',' << (j + 1) << ',' << q.length[0] << ',' << q.length[1] << ','
                << q.length[2] << ',' << csv::num(q.backlog[0]) << ',' << csv::num(q.backlog[1]) << ','
                << csv::num(q.backlog[2]) << '\n';
        }
}

// Rows are grouped by t_ms in file order; server ids must be dense per instant.
inline std::vector<QueueSnapshot> read_snapshots_csv(std::istream& in)
{
    std::vector<QueueSnapshot> out;
    for (const auto& row : csv::read(in, kSnapshotCsvHeader)) {
        const double t = csv::to_double(row[0]);
        if (out.empty() || out.back().t_ms != t)
            out.push_back(QueueSnapshot{t, {}});
        auto& snap = out.back();
        const auto id = static_cast<std::size_t>(csv::to_long(row[1]));
        if (id != snap.servers.size() + 1)
            throw std::invalid_argument("snapshot CSV: server ids must be dense and ordered within an instant");
        ServerQueueState q;
        for (std::size_t k = 0; k < kStageCount; ++k) {
            q.length[k] = static_cast<std::size_t>(csv::to_long(row[2 + k]));
            q.backlog[k] = csv::to_double(row[5 + k]);
        }
        snap.servers.push_back(q);
    }
    return out;
}

inline void write_cdf_csv(std::ostream& out, const std::vector<CdfPoint>& cdf)
{
    out << "latency_ms,fraction\n";
    for (const auto& p : cdf)
        out << csv::num(p.latency_ms) << ',' << csv::num(p.fraction) << '\n';
}

inline void write_queue_averages_csv(std::ostream& out, const QueueLengthSummary& q)
{
    out << "server_id,avg_queue_length\n";
    for (std::size_t j = 0; j < q.per_server.size(); ++j)
        out << (j + 1) << ',' << csv::num(q.per_server[j]) << '\n';
    out << "all," << csv::num(q.overall) << '\n';
}

// Run summary; a function of the request records (and snapshots, if given) only.
inline nlohmann::json summary_json(const std::vector<RequestRecord>& requests,
                                   std::span<const QueueSnapshot> snapshots = {})
{
    std::vector<double> lat;
    lat.reserve(requests.size());
    for (const auto& r : requests)
        lat.push_back(r.latency_ms);
    nlohmann::json j;
    j["requests"] = requests.size();
    j["latency_ms"] = requests.empty() ? nlohmann::json(nullptr) : summarize(lat).to_json();
    if (!snapshots.empty()) {
        const auto q = average_queue_length(snapshots);
        j["avg_queue_length"] = {{"per_server", q.per_server}, {"overall", q.overall}};
    }
    return j;
}

// Blank lines and lines starting with '#' are skipped.
inline OmegaMatrix read_omega_csv(std::istream& in, std::size_t services, std::size_t servers)
{
    OmegaMatrix omega(services, servers);
    std::size_t row = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line.front() == '#')
            continue;
        const auto cells = csv::split(line);
        if (row >= services)
            throw std::invalid_argument("omega CSV: more than " + std::to_string(services) + " rows");
        if (cells.size() != servers)
            throw std::invalid_argument("omega CSV: row " + std::to_string(row + 1) + " has " +
                                        std::to_string(cells.size()) + " columns, expected " +
                                        std::to_string(servers));
        for (std::size_t j = 0; j < servers; ++j) {
            const double w = csv::to_double(cells[j]);
            if (!(w >= 0.0 && w <= 1.0))
                throw std::invalid_argument("omega CSV: entry (" + std::to_string(row + 1) + "," +
                                            std::to_string(j + 1) + ") outside [0, 1]");
            omega(row, j) = w;
        }
        ++row;
    }
    if (row != services)
        throw std::invalid_argument("omega CSV: " + std::to_string(row) + " rows, expected " +
                                    std::to_string(services));
    return omega;
}

} // namespace tailsim
