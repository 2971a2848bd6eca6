#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "popo/envs.hpp"
#include "support.hpp"

using namespace popo;
using namespace popo::envs;

namespace {

std::vector<double> episode_returns(const Environment& env, BehaviorKind kind, int episodes, std::uint64_t seed) {
    std::vector<double> out;
    for (int e = 0; e < episodes; ++e) {
        out.push_back(rollout_episode(env, BehaviorPolicy::make(kind), seed, static_cast<std::uint64_t>(e)).total_return);
    }
    return out;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("specs and factory") {
    const auto pm = make_env("pointmass-v0");
    CHECK(pm->spec().obs_dim == 4);
    CHECK(pm->spec().act_dim == 2);
    CHECK(pm->spec().episode_len == 200);
    CHECK(pm->spec().dt == 0.05);
    const auto pd = make_env("pendulum-v0");
    CHECK(pd->spec().obs_dim == 3);
    CHECK(pd->spec().act_dim == 1);
    CHECK(pd->spec().max_action == 2.0);
    CHECK_THROWS_AS(make_env("halfcheetah"), ConfigError);
    CHECK_THROWS_AS(parse_behavior("good"), ConfigError);
    for (auto k : {BehaviorKind::random, BehaviorKind::medium, BehaviorKind::expert}) CHECK(parse_behavior(to_string(k)) == k);
    const auto expert = BehaviorPolicy::make(BehaviorKind::expert);
    CHECK(expert.noise == 0.0);
    CHECK(expert.random_prob == 0.0);
}

TEST_CASE("point-mass reset") {
    PointMass env;
    Rng a(3), b(3);
    const auto sa = env.reset(a), sb = env.reset(b);
    CHECK(sa.physical == sb.physical);
    Rng rng(4);
    double mx = 0.0, my = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto s = env.reset(rng);
        CHECK(s.t == 0);
        CHECK(s.physical[2] == 0.0);
        CHECK(s.physical[3] == 0.0);
        CHECK(std::abs(s.physical[0]) <= 1.0);
        mx += s.physical[0];
        my += s.physical[1];
    }
    CHECK(std::abs(mx / n) < 0.05);
    CHECK(std::abs(my / n) < 0.05);
}

TEST_CASE("pendulum reset ranges") {
    Pendulum env;
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const auto s = env.reset(rng);
        CHECK(std::abs(s.physical[0]) <= std::numbers::pi);
        CHECK(std::abs(s.physical[1]) <= 1.0);
        const auto o = env.observe(s);
        CHECK(o[0] * o[0] + o[1] * o[1] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("point-mass step by hand") {
    PointMass env;
    const std::vector<double> a{1.0, 0.0};
    const auto r = env.step({{0.0, 0.0, 0.0, 0.0}, 0}, a);
    CHECK(r.next.physical[2] == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(r.next.physical[3] == 0.0);
    CHECK(r.next.physical[0] == doctest::Approx(0.0025).epsilon(1e-15));
    CHECK(r.next.physical[1] == 0.0);
    const double dist = std::sqrt((0.7 - 0.0025) * (0.7 - 0.0025) + 0.49);
    CHECK(dist == doctest::Approx(0.988183).epsilon(1e-6));
    CHECK(r.reward == doctest::Approx(-dist - 0.1).epsilon(1e-14));
    CHECK(r.next.t == 1);
    CHECK_FALSE(r.done);
    CHECK_FALSE(r.clipped);

    const std::vector<double> zero{0.0, 0.0};
    CHECK(env.step({{0.7, 0.7, 0.0, 0.0}, 5}, zero).reward == 0.0);
    CHECK(env.expert_action(std::vector<double>{0.7, 0.7, 0.0, 0.0}) == zero);
}

TEST_CASE("out-of-box actions are clipped and counted") {
    PointMass env;
    const std::vector<double> big{3.0, -0.5};
    const auto r = env.step({{0.0, 0.0, 0.0, 0.0}, 0}, big);
    CHECK(r.clipped);
    CHECK(r.next.physical[2] == doctest::Approx(0.05).epsilon(1e-15));
    Pendulum pd;
    const auto p = pd.step({{0.3, 0.0}, 0}, std::vector<double>{-5.0});
    CHECK(p.clipped);
    CHECK(p.reward == doctest::Approx(-(0.09 + 0.001 * 4.0)).epsilon(1e-14));
}

TEST_CASE("time limit and errors") {
    PointMass env;
    const std::vector<double> zero{0.0, 0.0};
    CHECK_FALSE(env.step({{0, 0, 0, 0}, 198}, zero).done);
    CHECK(env.step({{0, 0, 0, 0}, 199}, zero).done);
    CHECK_THROWS_AS(env.step({{0, 0, 0}, 0}, zero), DimensionError);
    CHECK_THROWS_AS(env.step({{0, 0, 0, 0}, 0}, std::vector<double>{std::nan(""), 0.0}), NumericalError);
    CHECK_THROWS_AS(env.step({{std::nan(""), 0, 0, 0}, 0}, zero), NumericalError);
}

TEST_CASE("pendulum step by hand") {
    Pendulum env;
    const double th = 0.4, om = -0.6, u = 1.5, dt = 0.05;
    const auto r = env.step({{th, om}, 0}, std::vector<double>{u});
    const double om2 = om + (15.0 * std::sin(th) + 3.0 * u) * dt;
    CHECK(r.next.physical[1] == doctest::Approx(om2).epsilon(1e-14));
    CHECK(r.next.physical[0] == doctest::Approx(th + om2 * dt).epsilon(1e-14));
    CHECK(r.reward == doctest::Approx(-(th * th + 0.1 * om * om + 0.001 * u * u)).epsilon(1e-14));
    CHECK(wrap_angle(3.0 * std::numbers::pi / 2) == doctest::Approx(-std::numbers::pi / 2).epsilon(1e-14));
    CHECK(wrap_angle(-7.0) == doctest::Approx(-7.0 + 2 * std::numbers::pi).epsilon(1e-14));
}

TEST_CASE("pendulum speed clamp holds under random torque") {
    Pendulum env;
    Rng rng(6);
    EnvState s = env.reset(rng);
    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const auto r = env.step(s, std::vector<double>{rng.uniform(-2.0, 2.0)});
        worst = std::max(worst, std::abs(r.next.physical[1]));
        s = r.done ? env.reset(rng) : r.next;
    }
    CHECK(worst <= 8.0);
}

TEST_CASE("rewards are never positive") {
    for (const auto& id : env_ids()) {
        const auto env = make_env(id);
        for (auto kind : {BehaviorKind::random, BehaviorKind::medium, BehaviorKind::expert}) {
            const auto log = rollout_episode(*env, BehaviorPolicy::make(kind), 9, 0);
            CHECK(log.transitions.size() == 200);
            for (const auto& t : log.transitions) CHECK(t.reward <= 0.0f);
            CHECK(log.total_return <= 0.0);
        }
    }
}

TEST_CASE("behavior tiers are ordered") {
    for (const auto& id : env_ids()) {
        CAPTURE(id);
        const auto env = make_env(id);
        const auto random = episode_returns(*env, BehaviorKind::random, 100, 11);
        const auto medium = episode_returns(*env, BehaviorKind::medium, 100, 11);
        const auto expert = episode_returns(*env, BehaviorKind::expert, 100, 11);
        MESSAGE(id << " mean returns: random " << mean(random) << ", medium " << mean(medium) << ", expert "
                   << mean(expert));
        // returns are negative, so "five times better" means a fifth of the cost
        CHECK(mean(expert) >= mean(random) / 5.0);
        CHECK(median(medium) > median(random));
        CHECK(median(medium) < median(expert));
    }
}

TEST_CASE("collect_dataset size, determinism and manifest replay") {
    PointMass env;
    const auto policy = BehaviorPolicy::make(BehaviorKind::medium);

    const auto one = collect_dataset(env, policy, 1, 3);
    CHECK(one.count() == 1);

    const auto d = collect_dataset(env, policy, 450, 21);
    CHECK(d.count() == 450);
    CHECK(d.serialize() == collect_dataset(env, policy, 450, 21).serialize());
    CHECK(d.serialize() == collect_dataset(env, policy, 450, 21, 3).serialize());
    CHECK(d.content_hash() != collect_dataset(env, policy, 450, 22).content_hash());
    CHECK(d.serialized_size() == d.serialize().size());
    CHECK(d.serialized_size() == 12 + data::get_u32(d.serialize().data() + 8) + 450 * (2 * 4 + 2 + 2) * 4);

    const auto& m = d.manifest();
    CHECK(m["env_id"] == "pointmass-v0");
    CHECK(m["policy"] == "medium");
    CHECK(m["seed"] == 21);
    REQUIRE(m["episode_returns"].size() == 3);

    // replay: independent loop over reset/step with the documented per-episode stream
    double total = 0.0;
    for (std::uint64_t e = 0; e < 3; ++e) {
        Rng rng = Rng::derive(21, e);
        EnvState s = env.reset(rng);
        double ret = 0.0;
        for (int t = 0; t < 200; ++t) {
            const auto obs = env.observe(s);
            const auto a = scripted_action(env, policy, obs, rng);
            const auto r = env.step(s, a);
            ret += r.reward;
            s = r.next;
        }
        CHECK(m["episode_returns"][e].get<double>() == doctest::Approx(ret).epsilon(1e-12));
        total += ret;
    }
    CHECK(std::abs(m["mean_return"].get<double>() - total / 3.0) < 1e-9);

    // transitions chain within an episode and carry the non-terminal flag
    for (std::size_t i = 0; i + 1 < 200; ++i) {
        const auto next = d.next_obs(i), obs = d.obs(i + 1);
        CHECK(std::equal(next.begin(), next.end(), obs.begin()));
        CHECK(d.done(i) == 0.0f);
    }
    CHECK_THROWS_AS(collect_dataset(env, policy, 0, 1), ConfigError);
}
