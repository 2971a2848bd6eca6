#include "popo/envs.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>

namespace popo::envs {

namespace {

void check_finite(const EnvState& s) {
    for (double x : s.physical) {
        if (!std::isfinite(x)) throw NumericalError("environment state became non-finite");
    }
}

double clip_action(double a, double bound, bool& clipped) {
    if (!std::isfinite(a)) throw NumericalError("non-finite action");
    if (a > bound || a < -bound) clipped = true;
    return std::clamp(a, -bound, bound);
}

}  // namespace

double wrap_angle(double theta) {
    double w = std::fmod(theta + std::numbers::pi, 2.0 * std::numbers::pi);
    if (w < 0.0) w += 2.0 * std::numbers::pi;
    return w - std::numbers::pi;
}

PointMass::PointMass() : spec_{"pointmass-v0", 4, 2, 1.0, 200, 0.05} {}

EnvState PointMass::reset(Rng& rng) const {
    const double x = rng.uniform(-1.0, 1.0);
    const double y = rng.uniform(-1.0, 1.0);
    return {{x, y, 0.0, 0.0}, 0};
}

StepResult PointMass::step(const EnvState& state, std::span<const double> action) const {
    if (state.physical.size() != 4 || action.size() != 2) throw DimensionError("point-mass expects 4-D state, 2-D action");
    StepResult out;
    const double ax = clip_action(action[0], spec_.max_action, out.clipped);
    const double ay = clip_action(action[1], spec_.max_action, out.clipped);
    const double dt = spec_.dt;
    // Semi-implicit Euler: velocity first, then position with the new velocity.
    const double vx = state.physical[2] + ax * dt;
    const double vy = state.physical[3] + ay * dt;
    const double x = state.physical[0] + vx * dt;
    const double y = state.physical[1] + vy * dt;
    out.next = {{x, y, vx, vy}, state.t + 1};
    check_finite(out.next);
    out.reward = -std::hypot(x - kGoal[0], y - kGoal[1]) - 0.1 * (ax * ax + ay * ay);
    out.done = out.next.t >= spec_.episode_len;
    return out;
}

std::vector<double> PointMass::expert_action(std::span<const double> obs) const {
    std::vector<double> a(2);
    for (int i = 0; i < 2; ++i) {
        a[i] = std::clamp(-2.0 * (obs[i] - kGoal[i]) - 1.0 * obs[2 + i], -spec_.max_action, spec_.max_action);
    }
    return a;
}

Pendulum::Pendulum() : spec_{"pendulum-v0", 3, 1, 2.0, 200, 0.05} {}

EnvState Pendulum::reset(Rng& rng) const {
    const double theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double omega = rng.uniform(-1.0, 1.0);
    return {{theta, omega}, 0};
}

StepResult Pendulum::step(const EnvState& state, std::span<const double> action) const {
    if (state.physical.size() != 2 || action.size() != 1) throw DimensionError("pendulum expects 2-D state, 1-D action");
    StepResult out;
    const double u = clip_action(action[0], spec_.max_action, out.clipped);
    const double theta = state.physical[0];
    const double omega = state.physical[1];
    const double dt = spec_.dt;
    const double w = wrap_angle(theta);
    out.reward = -(w * w + 0.1 * omega * omega + 0.001 * u * u);
    const double accel = 3.0 * kGravity / (2.0 * kLength) * std::sin(theta) + 3.0 / (kMass * kLength * kLength) * u;
    const double omega_next = std::clamp(omega + accel * dt, -kMaxSpeed, kMaxSpeed);
    const double theta_next = theta + omega_next * dt;
    out.next = {{theta_next, omega_next}, state.t + 1};
    check_finite(out.next);
    out.done = out.next.t >= spec_.episode_len;
    return out;
}

std::vector<double> Pendulum::observe(const EnvState& state) const {
    return {std::cos(state.physical[0]), std::sin(state.physical[0]), state.physical[1]};
}

std::vector<double> Pendulum::expert_action(std::span<const double> obs) const {
    const double theta = std::atan2(obs[1], obs[0]);
    const double omega = obs[2];
    const double umax = spec_.max_action;
    double u;
    if (std::cos(theta) > std::cos(0.5)) {
        // Linearized stabilization around the upright position.
        u = -(10.0 * theta + 2.0 * omega);
    } else {
        // Energy shaping: E = omega^2 / 2 + c cos(theta) equals c upright at rest, dE/dt = b omega u.
        const double c = 3.0 * kGravity / (2.0 * kLength);
        const double energy = 0.5 * omega * omega + c * std::cos(theta);
        const double deficit = c - energy;
        u = std::abs(omega) < 1e-3 ? umax : 2.0 * deficit * omega;
    }
    return {std::clamp(u, -umax, umax)};
}

std::unique_ptr<Environment> make_env(const std::string& env_id) {
    if (env_id == "pointmass-v0") return std::make_unique<PointMass>();
    if (env_id == "pendulum-v0") return std::make_unique<Pendulum>();
    throw ConfigError("unknown env_id '" + env_id + "' (expected pointmass-v0 or pendulum-v0)");
}

std::vector<std::string> env_ids() { return {"pointmass-v0", "pendulum-v0"}; }

BehaviorKind parse_behavior(const std::string& name) {
    if (name == "random") return BehaviorKind::random;
    if (name == "medium") return BehaviorKind::medium;
    if (name == "expert") return BehaviorKind::expert;
    throw ConfigError("unknown behavior kind '" + name + "' (expected random, medium or expert)");
}

std::string to_string(BehaviorKind kind) {
    switch (kind) {
        case BehaviorKind::random: return "random";
        case BehaviorKind::medium: return "medium";
        case BehaviorKind::expert: return "expert";
    }
    return "expert";
}

BehaviorPolicy BehaviorPolicy::make(BehaviorKind kind) {
    switch (kind) {
        case BehaviorKind::random: return {kind, 0.0, 1.0};
        case BehaviorKind::medium: return {kind, 0.3, 0.3};
        case BehaviorKind::expert: return {kind, 0.0, 0.0};
    }
    return {};
}

std::vector<double> scripted_action(const Environment& env, const BehaviorPolicy& policy,
                                    std::span<const double> obs, Rng& rng) {
    const auto& spec = env.spec();
    auto uniform_action = [&] {
        std::vector<double> a(static_cast<std::size_t>(spec.act_dim));
        for (auto& x : a) x = rng.uniform(-spec.max_action, spec.max_action);
        return a;
    };
    if (policy.kind == BehaviorKind::random) return uniform_action();
    if (policy.random_prob > 0.0 && rng.uniform() < policy.random_prob) return uniform_action();
    auto a = env.expert_action(obs);
    if (policy.noise > 0.0) {
        for (auto& x : a) x = std::clamp(x + policy.noise * rng.normal(), -spec.max_action, spec.max_action);
    }
    return a;
}

EpisodeLog rollout_episode(const Environment& env, const BehaviorPolicy& policy, std::uint64_t seed,
                           std::uint64_t episode) {
    Rng rng = Rng::derive(seed, episode);
    EpisodeLog log;
    EnvState state = env.reset(rng);
    std::vector<double> obs = env.observe(state);
    for (;;) {
        const auto action = scripted_action(env, policy, obs, rng);
        StepResult r = env.step(state, action);
        std::vector<double> next_obs = env.observe(r.next);
        data::Transition t;
        t.obs.assign(obs.begin(), obs.end());
        for (double a : action) t.act.push_back(static_cast<float>(std::clamp(a, -env.spec().max_action, env.spec().max_action)));
        t.reward = static_cast<float>(r.reward);
        t.next_obs.assign(next_obs.begin(), next_obs.end());
        t.done = 0.0f;  // time limits are not terminal states
        log.transitions.push_back(std::move(t));
        log.total_return += r.reward;
        log.clipped += r.clipped ? 1 : 0;
        state = std::move(r.next);
        obs = std::move(next_obs);
        if (r.done) break;
    }
    return log;
}

data::Dataset collect_dataset(const Environment& env, const BehaviorPolicy& policy, std::size_t n, std::uint64_t seed,
                              int jobs) {
    if (n < 1) throw ConfigError("dataset size must be at least 1");
    const auto& spec = env.spec();
    const std::size_t len = static_cast<std::size_t>(spec.episode_len);
    const std::size_t episodes = (n + len - 1) / len;
    std::vector<EpisodeLog> logs(episodes);
    if (jobs <= 1) {
        for (std::size_t e = 0; e < episodes; ++e) logs[e] = rollout_episode(env, policy, seed, e);
    } else {
        for (std::size_t start = 0; start < episodes; start += static_cast<std::size_t>(jobs)) {
            std::vector<std::future<EpisodeLog>> futures;
            for (std::size_t e = start; e < std::min(episodes, start + static_cast<std::size_t>(jobs)); ++e) {
                futures.push_back(std::async(std::launch::async, [&, e] { return rollout_episode(env, policy, seed, e); }));
            }
            for (std::size_t k = 0; k < futures.size(); ++k) logs[start + k] = futures[k].get();
        }
    }
    std::vector<data::Transition> transitions;
    transitions.reserve(n);
    nlohmann::json returns = nlohmann::json::array();
    double sum = 0.0;
    long clipped = 0;
    for (auto& log : logs) {
        for (auto& t : log.transitions) {
            if (transitions.size() == n) break;
            transitions.push_back(std::move(t));
        }
        returns.push_back(log.total_return);
        sum += log.total_return;
        clipped += log.clipped;
    }
    nlohmann::json manifest{{"generator", "scripted"},
                            {"env_id", spec.env_id},
                            {"policy", to_string(policy.kind)},
                            {"noise", policy.noise},
                            {"random_prob", policy.random_prob},
                            {"seed", seed},
                            {"n", n},
                            {"episodes", episodes},
                            {"episode_returns", returns},
                            {"mean_return", sum / static_cast<double>(episodes)},
                            {"clipped_actions", clipped}};
    return data::Dataset({spec.env_id, spec.obs_dim, spec.act_dim, spec.max_action}, transitions, std::move(manifest));
}

}  // namespace popo::envs
