#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "popo/common.hpp"
#include "popo/data.hpp"

namespace popo::envs {

struct EnvSpec {
    std::string env_id;
    int obs_dim = 0;
    int act_dim = 0;
    double max_action = 1.0;
    int episode_len = 200;
    double dt = 0.05;
};

/// Physical state plus the step counter. Environments are stateless: every transition is a
/// pure function of (state, action).
struct EnvState {
    std::vector<double> physical;
    int t = 0;
};

struct StepResult {
    EnvState next;
    double reward = 0.0;
    bool done = false;     // episode over (time limit); not a terminal state
    bool clipped = false;  // the action was outside the box and got clipped
};

class Environment {
public:
    virtual ~Environment() = default;
    virtual const EnvSpec& spec() const = 0;
    virtual EnvState reset(Rng& rng) const = 0;
    virtual StepResult step(const EnvState& state, std::span<const double> action) const = 0;
    virtual std::vector<double> observe(const EnvState& state) const = 0;
    /// Scripted near-optimal controller acting on an observation.
    virtual std::vector<double> expert_action(std::span<const double> obs) const = 0;
};

/// 2-D double integrator driven to a fixed goal. obs = (x, y, vx, vy), action = acceleration.
class PointMass final : public Environment {
public:
    static constexpr double kGoal[2] = {0.7, 0.7};

    PointMass();
    const EnvSpec& spec() const override { return spec_; }
    EnvState reset(Rng& rng) const override;
    StepResult step(const EnvState& state, std::span<const double> action) const override;
    std::vector<double> observe(const EnvState& state) const override { return state.physical; }
    std::vector<double> expert_action(std::span<const double> obs) const override;

private:
    EnvSpec spec_;
};

/// Torque-limited rod pendulum, angle 0 upright. obs = (cos th, sin th, th_dot).
class Pendulum final : public Environment {
public:
    static constexpr double kGravity = 10.0;
    static constexpr double kMass = 1.0;
    static constexpr double kLength = 1.0;
    static constexpr double kMaxSpeed = 8.0;

    Pendulum();
    const EnvSpec& spec() const override { return spec_; }
    EnvState reset(Rng& rng) const override;
    StepResult step(const EnvState& state, std::span<const double> action) const override;
    std::vector<double> observe(const EnvState& state) const override;
    std::vector<double> expert_action(std::span<const double> obs) const override;

private:
    EnvSpec spec_;
};

/// "pointmass-v0" or "pendulum-v0"; throws ConfigError otherwise.
std::unique_ptr<Environment> make_env(const std::string& env_id);
std::vector<std::string> env_ids();

double wrap_angle(double theta);

enum class BehaviorKind { random, medium, expert };
BehaviorKind parse_behavior(const std::string& name);
std::string to_string(BehaviorKind kind);

struct BehaviorPolicy {
    BehaviorKind kind = BehaviorKind::expert;
    double noise = 0.0;        // Gaussian std added to the expert action
    double random_prob = 0.0;  // probability of a uniform action instead

    static BehaviorPolicy make(BehaviorKind kind);
};

std::vector<double> scripted_action(const Environment& env, const BehaviorPolicy& policy,
                                    std::span<const double> obs, Rng& rng);

struct EpisodeLog {
    std::vector<data::Transition> transitions;
    double total_return = 0.0;
    long clipped = 0;
};

/// One full episode of the behavior policy on the stream derived from (seed, episode).
EpisodeLog rollout_episode(const Environment& env, const BehaviorPolicy& policy, std::uint64_t seed,
                           std::uint64_t episode);

/// Rolls whole episodes until `n` transitions exist and keeps the first `n`. Each episode uses
/// its own stream, so the result does not depend on `jobs`.
data::Dataset collect_dataset(const Environment& env, const BehaviorPolicy& policy, std::size_t n,
                              std::uint64_t seed, int jobs = 1);

}  // namespace popo::envs
