#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "tailsim/analytics.hpp"
#include "tailsim/schedulers.hpp"
#include "test_support.hpp"

using namespace tailsim;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Direct product form, written out independently of the library.
double mgf_direct(const PhiTriple& p, double x)
{
    return p.uplink / (p.uplink - x) * p.server / (p.server - x) * p.downlink / (p.downlink - x);
}

double eta_direct(const PhiTriple& p, double gamma, double x) { return mgf_direct(p, x) * std::exp(-x * gamma); }

// Golden-section minimization of log eta over (0, b).
double golden_min(const PhiTriple& p, double gamma, double b)
{
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 0.0, hi = b;
    for (int i = 0; i < 300; ++i) {
        const double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
        if (std::log(eta_direct(p, gamma, x1)) < std::log(eta_direct(p, gamma, x2)))
            hi = x2;
        else
            lo = x1;
    }
    return 0.5 * (lo + hi);
}

} // namespace

TEST(AggregateRate, HandArithmetic)
{
    const std::vector<double> lambda{0.4, 0.5};
    EXPECT_NEAR(aggregate_arrival_rate(lambda, std::vector<double>{0.5, 0.2}), 0.3, 1e-15);
    EXPECT_EQ(aggregate_arrival_rate(lambda, std::vector<double>{0.0, 0.0}), 0.0);
    EXPECT_EQ(aggregate_arrival_rate(lambda, std::vector<double>{0.0, 1.0}), 0.5);
    EXPECT_THROW(aggregate_arrival_rate(lambda, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(MeanTaskSize, Mixtures)
{
    EXPECT_EQ(mean_task_size(std::vector<double>{0.4}, std::vector<double>{4.1e7}, std::vector<double>{1.0}), 4.1e7);
    EXPECT_DOUBLE_EQ(mean_task_size(std::vector<double>{1, 1}, std::vector<double>{2, 4}, std::vector<double>{0.5, 0.5}),
                     3.0);
    EXPECT_DOUBLE_EQ(mean_task_size(std::vector<double>{3, 1}, std::vector<double>{2, 4}, std::vector<double>{1, 1}),
                     2.5);
    EXPECT_THROW(mean_task_size(std::vector<double>{1, 1}, std::vector<double>{2, 4}, std::vector<double>{0, 0}),
                 DomainError);
}

TEST(MeanTaskSize, WithinSizeRange)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> l(5), c(5), w(5);
        double lo = 1e300, hi = 0;
        for (int i = 0; i < 5; ++i) {
            l[i] = 0.1 + u(rng);
            c[i] = 1e6 * (1 + 50 * u(rng));
            w[i] = u(rng) < 0.3 ? 0.0 : u(rng);
            if (w[i] > 0) {
                lo = std::min(lo, c[i]);
                hi = std::max(hi, c[i]);
            }
        }
        if (hi == 0)
            continue;
        const double m = mean_task_size(l, c, w);
        EXPECT_GE(m, lo * (1 - 1e-15));
        EXPECT_LE(m, hi * (1 + 1e-15));
    }
}

TEST(ServiceRates, TableValues)
{
    ServerSpec s3{3, {8.0e6, 8.7e6, 8.0e6}, {1}};
    EXPECT_NEAR(service_rates(s3, 4.1e7)[1], 0.21220, 5e-6);
    ServerSpec unit{1, {5.0, 7.0, 9.0}, {1}};
    EXPECT_EQ(service_rates(unit, 7.0)[1], 1.0);
    ServerSpec s1{1, {5.4e6, 7.2e6, 5.4e6}, {1}};
    const auto mu = service_rates(s1, 4.5e7);
    EXPECT_NEAR(mu[0], 0.12, 1e-15);
    EXPECT_NEAR(mu[1], 0.16, 1e-15);
    EXPECT_NEAR(mu[2], 0.12, 1e-15);
    EXPECT_THROW(service_rates(s1, 0.0), DomainError);
}

TEST(Mgf, AtZeroIsOne)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.01, 10.0);
    for (int t = 0; t < 100; ++t) {
        PhiTriple p{u(rng), u(rng), u(rng)};
        const auto m = mgf_response(p, 0.0);
        EXPECT_NEAR(m.value, 1.0, 1e-14);
        const double s1 = 1 / p.uplink + 1 / p.server + 1 / p.downlink;
        const double s2 = 1 / (p.uplink * p.uplink) + 1 / (p.server * p.server) + 1 / (p.downlink * p.downlink);
        EXPECT_LE(rel_err(m.grad, s1), 1e-14);
        EXPECT_LE(rel_err(m.hess, s1 * s1 + s2), 1e-14);
        EXPECT_EQ(chernoff_eta(p, u(rng), 0.0).value, 1.0);
    }
}

TEST(Mgf, HandProduct)
{
    const PhiTriple p{1, 2, 4};
    const auto m = mgf_response(p, 0.5);
    EXPECT_NEAR(m.value, 2.0 * (2.0 / 1.5) * (4.0 / 3.5), 1e-14);
    EXPECT_NEAR(m.value, 3.047619, 1e-6);
    EXPECT_NEAR(chernoff_eta(p, 10.0, 0.5).value, 0.020534, 1e-6);
    EXPECT_NEAR(chernoff_eta(p, 10.0, 0.5).value, 3.0476190476190474 * std::exp(-5.0), 1e-15);
}

TEST(Mgf, GradientMatchesFiniteDifference)
{
    const PhiTriple p{1, 2, 4};
    const double h = 1e-6;
    const double fd = (mgf_direct(p, 0.5 + h) - mgf_direct(p, 0.5 - h)) / (2 * h);
    EXPECT_LE(rel_err(mgf_response(p, 0.5).grad, fd), 1e-6);
}

TEST(Mgf, PairwiseFormAgrees)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.001, 5.0);
    for (int t = 0; t < 1000; ++t) {
        PhiTriple p{u(rng), u(rng), u(rng)};
        const double x = std::uniform_real_distribution<double>(0.0, 0.999)(rng) * p.min();
        EXPECT_LE(rel_err(mgf_hess_pairwise(p, x), mgf_response(p, x).hess), 1e-12);
    }
}

TEST(Mgf, PositiveOnDomain)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.001, 5.0);
    for (int t = 0; t < 500; ++t) {
        PhiTriple p{u(rng), u(rng), u(rng)};
        const double x = std::uniform_real_distribution<double>(1e-9, 0.999999)(rng) * p.min();
        const auto m = mgf_response(p, x);
        EXPECT_GT(m.value, 1.0);
        EXPECT_GT(m.grad, 0.0);
        EXPECT_GT(m.hess, 0.0);
    }
}

TEST(Mgf, DomainAndStabilityErrors)
{
    const PhiTriple p{1, 2, 4};
    EXPECT_THROW(mgf_response(p, 1.0), DomainError);
    EXPECT_THROW(mgf_response(p, 1.5), DomainError);
    EXPECT_THROW(mgf_response(p, -0.1), DomainError);
    EXPECT_THROW(mgf_response(PhiTriple{1, -2, 4}, 0.1), InstabilityError);
    EXPECT_THROW(mgf_response(PhiTriple{0, 2, 4}, 0.0), InstabilityError);
    EXPECT_THROW(chernoff_eta(p, 0.0, 0.1), DomainError);
}

TEST(Eta, DerivativesMatchFiniteDifferences)
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.01, 2.0);
    for (int t = 0; t < 100; ++t) {
        PhiTriple p{u(rng), u(rng), u(rng)};
        const double gamma = std::uniform_real_distribution<double>(1.0, 200.0)(rng);
        const double x = std::uniform_real_distribution<double>(0.01, 0.9)(rng) * p.min();
        const double h = 1e-5 * (p.min() - x);
        const auto a = chernoff_eta(p, gamma, x);
        const auto hi = chernoff_eta(p, gamma, x + h), lo = chernoff_eta(p, gamma, x - h);
        EXPECT_LE(rel_err((hi.value - lo.value) / (2 * h), a.grad), 1e-6);
        EXPECT_LE(rel_err((hi.grad - lo.grad) / (2 * h), a.hess), 1e-6);
        const auto m = a.value / std::exp(-x * gamma);
        EXPECT_LE(rel_err(m, mgf_direct(p, x)), 1e-13);
    }
}

TEST(MinimizeEta, InteriorRootMatchesGoldenSection)
{
    const PhiTriple p{1, 2, 4};
    const auto b = minimize_eta(p, 4.0);
    ASSERT_FALSE(b.vacuous);
    EXPECT_LE(std::abs(1 / (1 - b.x_star) + 1 / (2 - b.x_star) + 1 / (4 - b.x_star) - 4.0), 1e-10 * 4.0);
    EXPECT_NEAR(b.x_star, golden_min(p, 4.0, 1.0), 1e-6);
    EXPECT_LT(b.eta_star, 1.0);
    EXPECT_GT(eta_direct(p, 4.0, b.x_star + 0.01), b.eta_star);
    EXPECT_GT(eta_direct(p, 4.0, b.x_star - 0.01), b.eta_star);
    EXPECT_GT(b.eta.hess, 0.0);
    EXPECT_EQ(b.eta_star, b.eta.value);
}

TEST(MinimizeEta, VacuousBelowS1AtZero)
{
    const auto b = minimize_eta(PhiTriple{1, 2, 4}, 1.5);
    EXPECT_TRUE(b.vacuous);
    EXPECT_EQ(b.eta_star, 1.0);
    EXPECT_EQ(b.x_star, 0.0);
    EXPECT_EQ(b.eta.value, 0.0); // sentinel: derivatives zeroed
    EXPECT_EQ(b.mgf.value, 0.0);
}

TEST(MinimizeEta, LargeGammaDecays)
{
    const PhiTriple p{1, 2, 4};
    const double gamma = 1e3;
    const double x = 0.9 * p.min();
    EXPECT_LE(minimize_eta(p, gamma).eta_star, std::exp(-x * gamma) * mgf_direct(p, x));
    double prev = 1.0;
    for (double g = 1.0; g <= 400.0; g *= 1.2) {
        const double e = minimize_eta(p, g).eta_star;
        EXPECT_LE(e, prev) << g;
        prev = e;
    }
}

TEST(MinimizeEta, GridMinimumOverRandomPhi)
{
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.01, 3.0);
    for (int t = 0; t < 50; ++t) {
        PhiTriple p{u(rng), u(rng), u(rng)};
        const double s1 = 1 / p.uplink + 1 / p.server + 1 / p.downlink;
        const double gamma = s1 * std::uniform_real_distribution<double>(1.05, 30.0)(rng);
        const auto b = minimize_eta(p, gamma);
        ASSERT_FALSE(b.vacuous);
        const auto sums = stage_sums(p, b.x_star);
        EXPECT_LE(std::abs(sums.s1 - gamma), 1e-10 * gamma);
        for (int k = 1; k < 1000; ++k) {
            const double x = p.min() * k / 1000.0;
            EXPECT_LE(b.eta.value, eta_direct(p, gamma, x) * (1 + 1e-12));
        }
    }
}

TEST(MinimizeEta, ErrorsAndGracefulVariant)
{
    EXPECT_THROW(minimize_eta(PhiTriple{-0.1, 1, 1}, 10.0), InstabilityError);
    EXPECT_THROW(minimize_eta(PhiTriple{1, 1, 1}, 0.0), DomainError);
    const auto b = bound_or_vacuous(PhiTriple{-0.1, 1, 1}, 10.0);
    EXPECT_TRUE(b.vacuous);
    EXPECT_EQ(b.eta_star, 1.0);
}

TEST(SystemBound, Examples)
{
    EXPECT_DOUBLE_EQ(system_tail_bound(std::vector<double>{0.3}).kappa_bound, 0.3);
    EXPECT_DOUBLE_EQ(system_tail_bound(std::vector<double>{0.5, 0.5}).kappa_bound, 0.75);
    EXPECT_EQ(system_tail_bound(std::vector<double>{0.1, 1.7}).kappa_bound, 1.0);
    EXPECT_THROW(system_tail_bound(std::vector<double>{}), std::invalid_argument);
    EXPECT_THROW(system_tail_bound(std::vector<double>{-0.1}), std::invalid_argument);
}

TEST(SystemBound, BetweenMaxAndSum)
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 0.5);
    for (int t = 0; t < 500; ++t) {
        std::vector<double> e(1 + t % 6);
        for (auto& v : e)
            v = u(rng);
        const double k = system_tail_bound(e).kappa_bound;
        double mx = 0, sum = 0;
        for (double v : e) {
            mx = std::max(mx, v);
            sum += v;
        }
        EXPECT_GE(k, mx - 1e-15);
        EXPECT_LE(k, std::min(1.0, sum) + 1e-15);
    }
}

TEST(AnalyzeServer, UsesRoutedTraffic)
{
    // One server, one service routed entirely there.
    SimulationConfig c;
    c.servers.push_back({1, {5.4e6, 7.2e6, 5.4e6}, {1}});
    c.services.push_back({1, 0.05, 4.5e7, SizeDistribution::exponential});
    OmegaMatrix w(1, 1);
    w(0, 0) = 1.0;
    const auto a = analyze_server(c, w, 1, 40.0);
    EXPECT_TRUE(a.has_traffic);
    EXPECT_NEAR(a.mu[0], 0.12, 1e-15);
    EXPECT_NEAR(a.phi.uplink, 0.07, 1e-15);
    EXPECT_NEAR(a.phi.server, 0.11, 1e-15);
    const auto direct = minimize_eta(PhiTriple{0.12 - 0.05, 0.16 - 0.05, 0.12 - 0.05}, 40.0);
    EXPECT_NEAR(a.bound.eta_star, direct.eta_star, 1e-12);

    w(0, 0) = 0.0;
    const auto idle = analyze_server(c, w, 1, 40.0);
    EXPECT_FALSE(idle.has_traffic);
    EXPECT_EQ(idle.bound.eta_star, 0.0);
    EXPECT_FALSE(idle.bound.vacuous);
}

TEST(AnalyzeSystem, OverloadedServerIsVacuous)
{
    auto c = tailsim::testing::paper_config();
    PlanCatalog catalog(c);
    const auto w = policy_to_omega(catalog, uniform_distributions(catalog));
    c.sim.load_scale = 1.0; // raw table rates overload every server
    const auto a = analyze_system(c, w, c.reward.gamma);
    ASSERT_EQ(a.servers.size(), 4u);
    for (const auto& s : a.servers) {
        EXPECT_FALSE(s.phi.stable());
        EXPECT_TRUE(s.bound.vacuous);
    }
    EXPECT_EQ(a.bound.kappa_bound, 1.0);
    EXPECT_THROW(analyze_system(c, OmegaMatrix(2, 2), 40.0), std::invalid_argument);
}
