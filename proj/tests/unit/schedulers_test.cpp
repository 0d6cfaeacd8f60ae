#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "tailsim/schedulers.hpp"
#include "test_support.hpp"

using namespace tailsim;

namespace {

QueueSnapshot idle(std::size_t servers)
{
    QueueSnapshot q;
    q.servers.resize(servers);
    return q;
}

// Frequencies within 3 sigma of the multinomial expectation.
void expect_frequencies(const std::vector<std::size_t>& counts, const std::vector<double>& p, std::size_t n)
{
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double mean = p[k] * static_cast<double>(n);
        const double sd = std::sqrt(static_cast<double>(n) * p[k] * (1 - p[k]));
        EXPECT_LE(std::abs(static_cast<double>(counts[k]) - mean), 3.0 * sd + 1e-12) << "plan " << k;
    }
}

} // namespace

TEST(PolicyToOmega, PaperPlanSet)
{
    PlanCatalog catalog({1}, {enumerate_plans({3, 5}, 6)}, 5);
    const auto w = policy_to_omega(catalog, {{0.2, 0.3, 0.5}});
    EXPECT_NEAR(w(0, 2), 0.7, 1e-15);
    EXPECT_NEAR(w(0, 4), 0.8, 1e-15);
    EXPECT_EQ(w(0, 0), 0.0);
    EXPECT_EQ(w(0, 1), 0.0);
    EXPECT_EQ(w(0, 3), 0.0);

    const auto one_hot = policy_to_omega(catalog, {{0.0, 1.0, 0.0}});
    EXPECT_EQ(one_hot(0, 4), 1.0);
    EXPECT_EQ(one_hot(0, 2), 0.0);
    EXPECT_THROW(policy_to_omega(catalog, {{0.5, 0.5}}), ValidationError);
}

TEST(PolicyToOmega, MatchesIndicatorBruteForce)
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (unsigned mask = 1; mask < 16; ++mask) {
        std::vector<ServerId> sup;
        for (int b = 0; b < 4; ++b)
            if (mask & (1u << b))
                sup.push_back(b + 1);
        for (int cap = 1; cap <= 4; ++cap) {
            PlanCatalog catalog({1}, {enumerate_plans(sup, cap)}, 4);
            const auto& plans = catalog.plans(0);
            for (int t = 0; t < 50; ++t) {
                std::vector<double> p(plans.size());
                double s = 0;
                for (auto& v : p)
                    s += v = u(rng);
                for (auto& v : p)
                    v /= s;
                const auto w = policy_to_omega(catalog, {p});
                for (int j = 1; j <= 4; ++j) {
                    double brute = 0.0;
                    for (std::size_t k = 0; k < plans.size(); ++k) {
                        bool in = false;
                        for (ServerId x : plans[k])
                            in = in || x == j;
                        brute += in ? p[k] : 0.0;
                    }
                    EXPECT_NEAR(w(0, static_cast<std::size_t>(j - 1)), brute, 1e-12);
                    EXPECT_GE(w(0, static_cast<std::size_t>(j - 1)), 0.0);
                    EXPECT_LE(w(0, static_cast<std::size_t>(j - 1)), 1.0 + 1e-12);
                    if (!(mask & (1u << (j - 1)))) {
                        EXPECT_EQ(w(0, static_cast<std::size_t>(j - 1)), 0.0);
                    }
                }
            }
        }
    }
}

TEST(Distributions, Validation)
{
    EXPECT_NO_THROW(validate_distribution({0.2, 0.3, 0.5}, 3, "d"));
    EXPECT_THROW(validate_distribution({0.2, 0.3, 0.3}, 3, "d"), ValidationError);
    EXPECT_THROW(validate_distribution({0.5, 0.5}, 3, "d"), ValidationError);
    EXPECT_THROW(validate_distribution({1.2, -0.2}, 2, "d"), ValidationError);
    EXPECT_THROW(validate_distribution({NAN, 1.0}, 2, "d"), ValidationError);
    EXPECT_NO_THROW(validate_distribution({1.0 - 5e-10, 0.0}, 2, "d"));
    try {
        validate_distribution({0.5, -0.5, 1.0}, 3, "action[2]");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.field(), "action[2][1]");
    }
}

TEST(RandomChoice, UniformOverPlans)
{
    const auto plans = enumerate_plans({3, 5}, 6);
    Rng rng(1);
    const std::size_t n = 300000;
    std::vector<std::size_t> counts(3, 0);
    for (std::size_t t = 0; t < n; ++t) {
        const auto& p = choose_plan_random(plans, rng);
        counts[static_cast<std::size_t>(std::find(plans.begin(), plans.end(), p) - plans.begin())]++;
    }
    expect_frequencies(counts, {1.0 / 3, 1.0 / 3, 1.0 / 3}, n);

    const std::vector<Plan> single{{4}};
    for (int t = 0; t < 10; ++t)
        EXPECT_EQ(choose_plan_random(single, rng), Plan{4});
    Rng a(77), b(77);
    for (int t = 0; t < 100; ++t)
        EXPECT_EQ(choose_plan_random(plans, a), choose_plan_random(plans, b));
}

TEST(GreedyChoice, LargestPlan)
{
    EXPECT_EQ(choose_plan_greedy(enumerate_plans({3, 5}, 6)), (Plan{3, 5}));
    EXPECT_EQ(choose_plan_greedy(std::vector<Plan>{{2}, {1}}), Plan{1});
    EXPECT_EQ(choose_plan_greedy(enumerate_plans({1, 2, 3, 4}, 2)), (Plan{1, 2}));
}

TEST(DelayAwareChoice, HalvedWorkWinsWhenIdle)
{
    const auto c = tailsim::testing::paper_config();
    const std::vector<Plan> plans{{1}, {1, 2}};
    const auto q = idle(4);
    EXPECT_EQ(choose_plan_delay_aware(c, plans, q, 9e6), (Plan{1, 2}));
    // the stated predictor, by hand
    const double alone = 9e6 / 5.4e6 + 9e6 / 7.2e6 + 9e6 / 5.4e6;
    const double s1 = 4.5e6 / 5.4e6 + 4.5e6 / 7.2e6 + 4.5e6 / 5.4e6;
    const double s2 = 4.5e6 / 7.0e6 + 4.5e6 / 8.0e6 + 4.5e6 / 6.0e6;
    EXPECT_NEAR(predicted_plan_delay(c, q, {1}, 9e6), alone, 1e-12);
    EXPECT_NEAR(predicted_plan_delay(c, q, {1, 2}, 9e6), std::max(s1, s2), 1e-12);
}

TEST(DelayAwareChoice, AvoidsBackloggedServer)
{
    const auto c = tailsim::testing::paper_config();
    auto q = idle(4);
    q.servers[0].backlog = {1e9, 1e9, 1e9};
    EXPECT_EQ(choose_plan_delay_aware(c, {{1}, {3}, {1, 3}}, q, 4e7), Plan{3});
}

TEST(DelayAwareChoice, TiesGoToSmallerPlan)
{
    SimulationConfig c;
    c.servers.push_back({1, {1e6, 1e6, 1e6}, {1}});
    c.servers.push_back({2, {1e6, 1e6, 1e6}, {1}});
    c.services.push_back({1, 0.1, 1e6, SizeDistribution::exponential});
    auto q = idle(2);
    // {2} alone: 3 ms. {1,2} with server 1 pre-loaded so its finish is also 3 ms.
    q.servers[0].backlog = {0.5e6, 0.5e6, 0.5e6};
    q.servers[1].backlog = {0.5e6, 0.5e6, 0.5e6};
    const double split = predicted_plan_delay(c, q, {1, 2}, 1e6);
    const double one = predicted_plan_delay(c, q, {2}, 1e6);
    ASSERT_EQ(split, 3.0);
    ASSERT_EQ(one, 4.5);
    q.servers[1].backlog = {0.0, 0.0, 0.0};
    ASSERT_EQ(predicted_plan_delay(c, q, {2}, 1e6), 3.0);
    EXPECT_EQ(choose_plan_delay_aware(c, {{1, 2}, {2}}, q, 1e6), Plan{2});
    EXPECT_EQ(choose_plan_delay_aware(c, {{2}, {1, 2}}, q, 1e6), Plan{2});
}

TEST(ProbabilisticChoice, Frequencies)
{
    const auto plans = enumerate_plans({3, 5}, 6);
    const std::vector<double> p{0.2, 0.3, 0.5};
    Rng rng(3);
    const std::size_t n = 100000;
    std::vector<std::size_t> counts(3, 0);
    for (std::size_t t = 0; t < n; ++t) {
        const auto& pick = choose_plan_probabilistic(plans, p, rng);
        counts[static_cast<std::size_t>(std::find(plans.begin(), plans.end(), pick) - plans.begin())]++;
    }
    expect_frequencies(counts, p, n);
    for (int t = 0; t < 100; ++t)
        EXPECT_EQ(choose_plan_probabilistic(plans, {0, 1, 0}, rng), Plan{5});
    EXPECT_THROW(choose_plan_probabilistic(plans, {0.2, 0.3, 0.3}, rng), ValidationError);
}

TEST(Schedulers, NeverInventPlans)
{
    auto c = tailsim::testing::paper_config();
    PlanCatalog catalog(c);
    auto q = idle(4);
    std::mt19937_64 rng(8);
    for (const char* name : {"rd", "gd", "da", "policy"}) {
        auto s = make_scheduler(name, catalog, c, 5);
        EXPECT_EQ(s->name(), name);
        for (int t = 0; t < 2000; ++t) {
            for (auto& srv : q.servers)
                for (auto& b : srv.backlog)
                    b = std::uniform_real_distribution<double>(0, 1e8)(rng);
            DecisionContext ctx;
            ctx.service_index = static_cast<std::size_t>(t) % catalog.service_count();
            ctx.size = 4e7;
            ctx.queues = &q;
            EXPECT_TRUE(catalog.contains(ctx.service_index, s->choose(ctx)));
        }
    }
    EXPECT_THROW(make_scheduler("qla", catalog, c, 1), ValidationError);
}

TEST(Schedulers, GreedyAndDelayAwareAreDeterministic)
{
    auto c = tailsim::testing::paper_config();
    PlanCatalog catalog(c);
    auto q = idle(4);
    q.servers[2].backlog = {3e7, 1e7, 0};
    auto d1 = make_scheduler("da", catalog, c, 1), d2 = make_scheduler("da", catalog, c, 2);
    auto g1 = make_scheduler("gd", catalog, c, 1), g2 = make_scheduler("gd", catalog, c, 2);
    for (std::size_t i = 0; i < catalog.service_count(); ++i) {
        DecisionContext ctx{i, 4.3e7, 0.0, &q};
        EXPECT_EQ(d1->choose(ctx), d2->choose(ctx));
        EXPECT_EQ(g1->choose(ctx), g2->choose(ctx));
    }
}

TEST(PolicyJson, Parsing)
{
    const auto c = tailsim::testing::paper_config();
    PlanCatalog catalog(c);
    const auto d = parse_policy_json(nlohmann::json::parse(R"({"4": [1.0], "2": [0.5, 0.25, 0.25]})"), catalog);
    EXPECT_EQ(d[1], (std::vector<double>{0.5, 0.25, 0.25}));
    EXPECT_EQ(d[0], std::vector<double>(7, 1.0 / 7)); // unspecified: uniform
    EXPECT_THROW(parse_policy_json(nlohmann::json::parse(R"({"9": [1.0]})"), catalog), ValidationError);
    EXPECT_THROW(parse_policy_json(nlohmann::json::parse(R"({"2": [0.5, 0.5]})"), catalog), ValidationError);
    EXPECT_THROW(parse_policy_json(nlohmann::json::parse(R"({"x": [1]})"), catalog), ValidationError);
    EXPECT_THROW(parse_policy_json(nlohmann::json::parse("[1]"), catalog), ValidationError);
}

TEST(PolicyScheduler, InstallRevalidates)
{
    const auto c = tailsim::testing::toy_config();
    PlanCatalog catalog(c);
    PolicyScheduler s(catalog, uniform_distributions(catalog), 1);
    EXPECT_THROW(s.install({{1.0}}), ValidationError);
    s.install({{0, 1, 0}, {1.0}});
    EXPECT_EQ(s.policy().omega(0, 1), 1.0);
    EXPECT_EQ(s.policy().omega(0, 0), 0.0);
    DecisionContext ctx;
    EXPECT_EQ(s.choose(ctx), Plan{2});
}

TEST(DelayAwareScheduler, LogsPredictedDelay)
{
    const auto c = tailsim::testing::paper_config();
    PlanCatalog catalog(c);
    DelayAwareScheduler s(catalog, c);
    std::vector<DelayAwareDecision> log;
    s.set_log(&log);
    auto q = idle(4);
    q.servers[1].backlog = {2e7, 0, 0};
    DecisionContext ctx{0, 9e6, 12.5, &q};
    const auto plan = s.choose(ctx);
    ASSERT_EQ(log.size(), 1u);
    EXPECT_EQ(log[0].plan, plan);
    EXPECT_EQ(log[0].t_ms, 12.5);
    EXPECT_EQ(log[0].predicted_ms, predicted_plan_delay(c, q, plan, 9e6));
    for (const auto& p : catalog.plans(0))
        EXPECT_LE(log[0].predicted_ms, predicted_plan_delay(c, q, p, 9e6));
}
