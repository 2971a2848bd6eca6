#pragma once

#include <json.hpp>

#include <array>
#include <utility>
#include <vector>

#include "popo/common.hpp"

// Estimation gap between the value of a policy under the true tabular model and under the
// count-based model of a dataset, computed directly and through its Bellman-like recursion.
namespace popo::gap {

/// Joint next-state/reward distribution for every (s, a), stored densely as [s][a][s'][r].
struct Kernel {
    int states = 0;
    int actions = 0;
    int rewards = 0;
    std::vector<double> prob;

    double& at(int s, int a, int s_next, int r) { return prob[index(s, a, s_next, r)]; }
    double at(int s, int a, int s_next, int r) const { return prob[index(s, a, s_next, r)]; }
    std::size_t index(int s, int a, int s_next, int r) const {
        return ((static_cast<std::size_t>(s) * actions + a) * states + s_next) * rewards + r;
    }
};

struct TabularMdp {
    Kernel kernel;
    std::vector<double> reward_support;
    std::vector<double> rho0;
    double gamma = 0.9;

    int states() const { return kernel.states; }
    int actions() const { return kernel.actions; }

    /// Throws ConfigError when a row or rho0 is not a distribution or gamma is outside [0, 1).
    void validate() const;
};

/// pi(a|s), row-major S x A.
struct TabularPolicy {
    int states = 0;
    int actions = 0;
    std::vector<double> prob;

    double at(int s, int a) const { return prob[static_cast<std::size_t>(s) * actions + a]; }
    void validate() const;
    static TabularPolicy uniform(int states, int actions);
};

struct Observation {
    int state = 0;
    int action = 0;
    int reward_index = 0;
    int next_state = 0;
};

class CoverageError : public Error {
public:
    explicit CoverageError(std::vector<std::pair<int, int>> missing);
    const std::vector<std::pair<int, int>>& missing() const { return missing_; }

private:
    std::vector<std::pair<int, int>> missing_;
};

/// Counts N(s,a,s',r) and the normalized p_D they induce.
class EmpiricalModel {
public:
    EmpiricalModel(int states, int actions, int rewards);

    static EmpiricalModel from_observations(const TabularMdp& mdp, const std::vector<Observation>& data);

    void add(const Observation& obs);

    bool covered(int s, int a) const { return totals_[static_cast<std::size_t>(s) * actions_ + a] > 0; }
    long count(int s, int a, int s_next, int r) const { return counts_[kernel_index(s, a, s_next, r)]; }
    long total(int s, int a) const { return totals_[static_cast<std::size_t>(s) * actions_ + a]; }

    /// p_D. Uncovered pairs are all-zero rows unless `absorb_uncovered`, which turns each of
    /// them into a zero-reward self-loop (needs 0 in the reward support; its index is passed).
    Kernel kernel(bool absorb_uncovered = false, int zero_reward_index = -1) const;

    /// Pairs the policy acts on (pi(a|s) > 0) that never occur in the data.
    std::vector<std::pair<int, int>> missing_for(const TabularPolicy& policy) const;

    int states() const { return states_; }
    int actions() const { return actions_; }
    int rewards() const { return rewards_; }

private:
    std::size_t kernel_index(int s, int a, int s_next, int r) const {
        return ((static_cast<std::size_t>(s) * actions_ + a) * states_ + s_next) * rewards_ + r;
    }

    int states_, actions_, rewards_;
    std::vector<long> counts_;
    std::vector<long> totals_;
};

/// V^pi for the given kernel, from the linear system (I - gamma P^pi) V = r^pi.
std::vector<double> exact_value(const Kernel& kernel, const std::vector<double>& reward_support,
                                const TabularPolicy& policy, double gamma);
std::vector<double> exact_value(const TabularMdp& mdp, const TabularPolicy& policy);

struct GapOptions {
    bool absorb_uncovered = false;
};

/// delta(s) = V^pi(s) - V^pi_D(s).
std::vector<double> gap_direct(const TabularMdp& mdp, const EmpiricalModel& model, const TabularPolicy& policy,
                               GapOptions options = {});

/// Solves delta = b + gamma P^pi delta, with
/// b(s) = sum_a pi(a|s) sum_{s',r} [p - p_D](s',r|s,a) (r + gamma V^pi_D(s')).
std::vector<double> gap_recursive(const TabularMdp& mdp, const EmpiricalModel& model, const TabularPolicy& policy,
                                  GapOptions options = {});

struct GapReport {
    std::vector<double> v_true;
    std::vector<double> v_dataset;
    std::vector<double> delta_direct;
    std::vector<double> delta_recursive;
    double max_abs_discrepancy = 0.0;
    double initial_gap = 0.0;  // rho0 . delta_direct
    std::vector<std::pair<int, int>> absorbed_pairs;
};

GapReport analyze(const TabularMdp& mdp, const EmpiricalModel& model, const TabularPolicy& policy,
                  GapOptions options = {});

nlohmann::json to_json(const GapReport& report);

/// MDP file: {S, A, reward_support, p[s][a][s'][r], rho0, gamma, policy?}. A missing policy is uniform.
TabularMdp mdp_from_json(const nlohmann::json& j);
nlohmann::json mdp_to_json(const TabularMdp& mdp);
TabularPolicy policy_from_json(const nlohmann::json& j, int states, int actions);

/// Transitions file: a list of [s, a, r_index, s_next], bare or under "transitions".
std::vector<Observation> observations_from_json(const nlohmann::json& j);

/// Seeded random instance with dense transitions over the given reward support.
TabularMdp random_mdp(Rng& rng, int states, int actions, std::vector<double> reward_support, double gamma);
TabularPolicy random_policy(Rng& rng, int states, int actions);
std::vector<Observation> sample_observations(const TabularMdp& mdp, Rng& rng, int per_pair);

}  // namespace popo::gap
