#pragma once

// Closed-form tail analytics for one uplink -> server -> downlink tandem of
// M/M/1 stages.
//
// With per-stage drift phi_k = mu_k - Lambda, the sojourn time T of the tandem
// has moment-generating function
//
//     M(x) = prod_k phi_k / (phi_k - x),           0 <= x < min_k phi_k,
//
// and the Chernoff bound gives P(T > gamma) <= eta(x) = M(x) exp(-x gamma).
// eta is convex on (0, min phi); its minimizer solves S1(x) = gamma where
// S1(x) = sum_k 1/(phi_k - x) is strictly increasing there.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tailsim/config.hpp"
#include "tailsim/errors.hpp"

namespace tailsim {

// Dense I x M matrix of per-(service, server) routing probabilities.
class OmegaMatrix {
public:
    OmegaMatrix() = default;
    OmegaMatrix(std::size_t services, std::size_t servers)
        : rows_(services), cols_(servers), data_(services * servers, 0.0) {}

    std::size_t services() const { return rows_; }
    std::size_t servers() const { return cols_; }

    // (service position, server position); server position = server id - 1
    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::vector<double> column(std::size_t j) const
    {
        std::vector<double> out(rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            out[i] = (*this)(i, j);
        return out;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct PhiTriple {
    double uplink = 0.0;
    double server = 0.0;
    double downlink = 0.0;

    std::array<double, kStageCount> values() const { return {uplink, server, downlink}; }
    double min() const { return std::min({uplink, server, downlink}); }
    bool stable() const
    {
        return uplink > 0.0 && server > 0.0 && downlink > 0.0 && std::isfinite(uplink) && std::isfinite(server) &&
               std::isfinite(downlink);
    }
};

// A function value with its first and second derivative in x.
struct Derivatives {
    double value = 0.0;
    double grad = 0.0;
    double hess = 0.0;
};

struct BoundEvaluation {
    double x = 0.0; // evaluation point, equal to x_star for minimize_eta
    Derivatives mgf;
    Derivatives eta;
    double x_star = 0.0;
    double eta_star = 1.0; // min(eta(x*), 1)
    bool vacuous = true;
    int iterations = 0;
};

struct SystemBound {
    std::vector<double> per_server;
    double kappa_bound = 0.0;
};

// Lambda_j = sum_i lambda_i * omega_ij
inline double aggregate_arrival_rate(std::span<const double> lambdas, std::span<const double> omega_col)
{
    if (lambdas.size() != omega_col.size())
        throw std::invalid_argument("aggregate_arrival_rate: length mismatch (" + std::to_string(lambdas.size()) +
                                    " rates vs " + std::to_string(omega_col.size()) + " probabilities)");
    double total = 0.0;
    for (std::size_t i = 0; i < lambdas.size(); ++i)
        total += lambdas[i] * omega_col[i];
    return total;
}

// Traffic-weighted mean task size seen by one server.
inline double mean_task_size(std::span<const double> lambdas, std::span<const double> sizes,
                             std::span<const double> omega_col)
{
    if (lambdas.size() != sizes.size() || lambdas.size() != omega_col.size())
        throw std::invalid_argument("mean_task_size: length mismatch");
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        num += sizes[i] * lambdas[i] * omega_col[i];
        den += lambdas[i] * omega_col[i];
    }
    if (!(den > 0.0))
        throw DomainError("mean_task_size: no traffic routed to this server");
    return num / den;
}

// (mu_u, mu_s, mu_d) in requests/ms.
inline std::array<double, kStageCount> service_rates(const ServerSpec& server, double mean_size)
{
    if (!(mean_size > 0.0))
        throw DomainError("service_rates: mean size must be positive");
    return {server.rates[0] / mean_size, server.rates[1] / mean_size, server.rates[2] / mean_size};
}

inline PhiTriple make_phi(const std::array<double, kStageCount>& mu, double aggregate_rate)
{
    return {mu[0] - aggregate_rate, mu[1] - aggregate_rate, mu[2] - aggregate_rate};
}

namespace detail {

inline void check_domain(const PhiTriple& phi, double x)
{
    if (!phi.stable())
        throw InstabilityError("unstable tandem: phi = (" + std::to_string(phi.uplink) + ", " +
                               std::to_string(phi.server) + ", " + std::to_string(phi.downlink) + ")");
    if (!(x >= 0.0) || !(x < phi.min()))
        throw DomainError("exponent x = " + std::to_string(x) + " outside [0, min phi = " +
                          std::to_string(phi.min()) + ")");
}

} // namespace detail

// S1 = sum 1/(phi_k - x), S2 = sum 1/(phi_k - x)^2
struct StageSums {
    double s1 = 0.0;
    double s2 = 0.0;
};

inline StageSums stage_sums(const PhiTriple& phi, double x)
{
    StageSums s;
    for (double p : phi.values()) {
        const double y = 1.0 / (p - x);
        s.s1 += y;
        s.s2 += y * y;
    }
    return s;
}

inline Derivatives mgf_response(const PhiTriple& phi, double x)
{
    detail::check_domain(phi, x);
    double t = 1.0;
    for (double p : phi.values())
        t *= p / (p - x);
    const auto s = stage_sums(phi, x);
    return {t, t * s.s1, t * (s.s1 * s.s1 + s.s2)};
}

// Second derivative through the pairwise form
// (y_u + y_s)^2 + (y_s + y_d)^2 + (y_u + y_d)^2, an independent route to the
// same quantity as S1^2 + S2.
inline double mgf_hess_pairwise(const PhiTriple& phi, double x)
{
    detail::check_domain(phi, x);
    const double yu = 1.0 / (phi.uplink - x);
    const double ys = 1.0 / (phi.server - x);
    const double yd = 1.0 / (phi.downlink - x);
    const double t = (phi.uplink * yu) * (phi.server * ys) * (phi.downlink * yd);
    return t * ((yu + ys) * (yu + ys) + (ys + yd) * (ys + yd) + (yu + yd) * (yu + yd));
}

// eta = exp(log T - x gamma), eta' = eta (S1 - gamma), eta'' = eta ((S1 - gamma)^2 + S2).
// The log form keeps eta'' free of cancellation; eta underflows to 0 only
// when the true value is below the smallest double.
inline Derivatives chernoff_eta(const PhiTriple& phi, double gamma, double x)
{
    if (!(gamma > 0.0))
        throw DomainError("gamma must be positive");
    detail::check_domain(phi, x);
    double log_t = 0.0;
    for (double p : phi.values())
        log_t += std::log(p / (p - x));
    const double eta = std::exp(log_t - x * gamma);
    const auto s = stage_sums(phi, x);
    const double d = s.s1 - gamma;
    return {eta, eta * d, eta * (d * d + s.s2)};
}

inline constexpr double kDefaultBoundTolerance = 1e-12;
inline constexpr int kMaxBisectionIterations = 200;

// Minimize eta over (0, min phi) by bisection on S1(x) - gamma.
inline BoundEvaluation minimize_eta(const PhiTriple& phi, double gamma, double tol = kDefaultBoundTolerance)
{
    if (!phi.stable())
        throw InstabilityError("minimize_eta: unstable tandem (some phi <= 0)");
    if (!(gamma > 0.0))
        throw DomainError("minimize_eta: gamma must be positive");

    BoundEvaluation out;
    if (stage_sums(phi, 0.0).s1 >= gamma) {
        // eta is non-decreasing on the whole domain; the best bound is eta(0) = 1.
        out.vacuous = true;
        out.eta_star = 1.0;
        return out;
    }

    double lo = 0.0;
    double hi = phi.min() * (1.0 - 1e-12);
    double x = hi;
    double best_x = hi;
    double best_err = std::abs(stage_sums(phi, hi).s1 - gamma);
    int it = 0;
    if (stage_sums(phi, hi).s1 > gamma) {
        for (; it < kMaxBisectionIterations; ++it) {
            x = 0.5 * (lo + hi);
            if (x <= lo || x >= hi)
                break; // bracket collapsed to adjacent doubles
            const double g = stage_sums(phi, x).s1 - gamma;
            if (std::abs(g) < best_err) {
                best_err = std::abs(g);
                best_x = x;
            }
            if (std::abs(g) <= tol * gamma)
                break;
            (g < 0.0 ? lo : hi) = x;
        }
        x = best_x;
    }

    out.vacuous = false;
    out.iterations = it;
    out.x = out.x_star = x;
    out.mgf = mgf_response(phi, x);
    out.eta = chernoff_eta(phi, gamma, x);
    if (!(out.eta.hess > 0.0) && out.eta.value > 0.0)
        throw std::logic_error("minimize_eta: second derivative not positive at the minimizer");
    out.eta_star = std::min(out.eta.value, 1.0);
    if (out.eta.value >= 1.0)
        out.vacuous = true;
    return out;
}

// Like minimize_eta, but an unstable tandem yields the vacuous sentinel
// (eta* = 1, every other feature 0) instead of an error.
inline BoundEvaluation bound_or_vacuous(const PhiTriple& phi, double gamma, double tol = kDefaultBoundTolerance)
{
    if (!phi.stable())
        return BoundEvaluation{};
    return minimize_eta(phi, gamma, tol);
}

// kappa <= 1 - prod_j (1 - min(eta_j, 1))
inline SystemBound system_tail_bound(std::span<const double> etas)
{
    if (etas.empty())
        throw std::invalid_argument("system_tail_bound: no servers");
    SystemBound b;
    double survive = 1.0;
    for (double e : etas) {
        if (!(e >= 0.0))
            throw std::invalid_argument("system_tail_bound: negative or NaN eta");
        b.per_server.push_back(e);
        survive *= 1.0 - std::min(e, 1.0);
    }
    b.kappa_bound = 1.0 - survive;
    return b;
}

// Everything the analytic model says about one server under a routing matrix.
struct ServerAnalysis {
    ServerId server_id = 0;
    double arrival_rate = 0.0; // Lambda_j
    double mean_size = 0.0;    // c-bar_j, 0 without traffic
    std::array<double, kStageCount> mu{};
    PhiTriple phi;
    bool has_traffic = false;
    BoundEvaluation bound; // eta* = 0 when no traffic reaches the server
};

inline ServerAnalysis analyze_server(const SimulationConfig& config, const OmegaMatrix& omega, ServerId server_id,
                                     double gamma, double tol = kDefaultBoundTolerance)
{
    if (omega.services() != config.service_count() || omega.servers() != config.server_count())
        throw std::invalid_argument("omega shape does not match config");
    std::vector<double> lambdas(config.service_count());
    std::vector<double> sizes(config.service_count());
    for (std::size_t i = 0; i < config.service_count(); ++i) {
        lambdas[i] = config.effective_lambda(i);
        sizes[i] = config.services[i].mean_size;
    }
    const auto col = omega.column(static_cast<std::size_t>(server_id - 1));
    ServerAnalysis a;
    a.server_id = server_id;
    a.arrival_rate = aggregate_arrival_rate(lambdas, col);
    if (!(a.arrival_rate > 0.0)) {
        // An idle server never produces a tail event.
        a.bound.vacuous = false;
        a.bound.eta_star = 0.0;
        return a;
    }
    a.has_traffic = true;
    a.mean_size = mean_task_size(lambdas, sizes, col);
    a.mu = service_rates(config.server(server_id), a.mean_size);
    a.phi = make_phi(a.mu, a.arrival_rate);
    a.bound = bound_or_vacuous(a.phi, gamma, tol);
    return a;
}

struct SystemAnalysis {
    std::vector<ServerAnalysis> servers;
    SystemBound bound;
};

inline SystemAnalysis analyze_system(const SimulationConfig& config, const OmegaMatrix& omega, double gamma,
                                     double tol = kDefaultBoundTolerance)
{
    SystemAnalysis out;
    std::vector<double> etas;
    for (const auto& s : config.servers) {
        out.servers.push_back(analyze_server(config, omega, s.id, gamma, tol));
        etas.push_back(out.servers.back().bound.eta_star);
    }
    out.bound = system_tail_bound(etas);
    return out;
}

} // namespace tailsim
