#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "tailsim/config.hpp"

namespace tailsim {

struct ServerQueueState {
    std::array<std::size_t, kStageCount> length{}; // tasks waiting or in service
    std::array<double, kStageCount> backlog{};     // pending cycles

    std::size_t total_length() const { return length[0] + length[1] + length[2]; }
};

struct QueueSnapshot {
    double t_ms = 0.0;
    std::vector<ServerQueueState> servers; // index = server id - 1

    const ServerQueueState& server(ServerId id) const { return servers.at(static_cast<std::size_t>(id - 1)); }
};

} // namespace tailsim
