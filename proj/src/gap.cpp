#include "popo/gap.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace popo::gap {

namespace {

constexpr double kSumTolerance = 1e-12;

void check_distribution(const double* p, std::size_t n, const std::string& what) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(p[i] >= 0.0) || !std::isfinite(p[i])) throw ConfigError(what + " has a negative or non-finite entry");
        sum += p[i];
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
        std::ostringstream os;
        os.precision(17);
        os << what << " sums to " << sum;
        throw ConfigError(os.str());
    }
}

// P^pi and r^pi for a kernel; rows of uncovered pairs simply contribute nothing.
void policy_matrices(const Kernel& k, const std::vector<double>& support, const TabularPolicy& pi,
                     Eigen::MatrixXd& transition, Eigen::VectorXd& reward) {
    transition = Eigen::MatrixXd::Zero(k.states, k.states);
    reward = Eigen::VectorXd::Zero(k.states);
    for (int s = 0; s < k.states; ++s) {
        for (int a = 0; a < k.actions; ++a) {
            const double w = pi.at(s, a);
            if (w == 0.0) continue;
            for (int s2 = 0; s2 < k.states; ++s2) {
                for (int r = 0; r < k.rewards; ++r) {
                    const double p = k.at(s, a, s2, r);
                    transition(s, s2) += w * p;
                    reward(s) += w * p * support[static_cast<std::size_t>(r)];
                }
            }
        }
    }
}

std::vector<double> solve_discounted(const Eigen::MatrixXd& transition, const Eigen::VectorXd& rhs, double gamma) {
    const Eigen::Index n = transition.rows();
    const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - gamma * transition;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    const Eigen::VectorXd pivots = lu.matrixLU().diagonal();
    const double smallest = pivots.cwiseAbs().minCoeff();
    if (!(smallest > 1e-300) || !pivots.allFinite()) throw NumericalError("singular Bellman system");
    const Eigen::VectorXd x = lu.solve(rhs);
    if (!x.allFinite()) throw NumericalError("non-finite Bellman solution");
    return {x.data(), x.data() + x.size()};
}

void check_shapes(const TabularMdp& mdp, const EmpiricalModel& model, const TabularPolicy& policy) {
    if (model.states() != mdp.states() || model.actions() != mdp.actions() ||
        model.rewards() != static_cast<int>(mdp.reward_support.size())) {
        throw DimensionError("empirical model shape differs from the MDP");
    }
    if (policy.states != mdp.states() || policy.actions != mdp.actions()) {
        throw DimensionError("policy shape differs from the MDP");
    }
}

int zero_reward_index(const TabularMdp& mdp) {
    for (std::size_t i = 0; i < mdp.reward_support.size(); ++i) {
        if (mdp.reward_support[i] == 0.0) return static_cast<int>(i);
    }
    return -1;
}

Kernel dataset_kernel(const TabularMdp& mdp, const EmpiricalModel& model, const TabularPolicy& policy,
                      GapOptions options) {
    check_shapes(mdp, model, policy);
    auto missing = model.missing_for(policy);
    if (!missing.empty() && !options.absorb_uncovered) throw CoverageError(std::move(missing));
    return model.kernel(options.absorb_uncovered, zero_reward_index(mdp));
}

}  // namespace

void TabularMdp::validate() const {
    if (kernel.states < 1 || kernel.actions < 1 || kernel.rewards < 1) throw ConfigError("MDP needs S, A, |R| >= 1");
    if (static_cast<int>(reward_support.size()) != kernel.rewards) throw ConfigError("reward support size mismatch");
    if (kernel.prob.size() != static_cast<std::size_t>(kernel.states) * kernel.actions * kernel.states * kernel.rewards) {
        throw ConfigError("transition tensor has the wrong size");
    }
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    const std::size_t row = static_cast<std::size_t>(kernel.states) * kernel.rewards;
    for (int s = 0; s < kernel.states; ++s) {
        for (int a = 0; a < kernel.actions; ++a) {
            check_distribution(&kernel.prob[kernel.index(s, a, 0, 0)], row,
                               "p(.|s=" + std::to_string(s) + ",a=" + std::to_string(a) + ")");
        }
    }
    if (static_cast<int>(rho0.size()) != kernel.states) throw ConfigError("rho0 length differs from S");
    check_distribution(rho0.data(), rho0.size(), "rho0");
}

void TabularPolicy::validate() const {
    if (prob.size() != static_cast<std::size_t>(states) * actions) throw ConfigError("policy has the wrong size");
    for (int s = 0; s < states; ++s) {
        check_distribution(&prob[static_cast<std::size_t>(s) * actions], static_cast<std::size_t>(actions),
                           "pi(.|s=" + std::to_string(s) + ")");
    }
}

TabularPolicy TabularPolicy::uniform(int states, int actions) {
    return {states, actions, std::vector<double>(static_cast<std::size_t>(states) * actions, 1.0 / actions)};
}

CoverageError::CoverageError(std::vector<std::pair<int, int>> missing)
    : Error([&] {
          std::ostringstream os;
          os << "dataset does not cover " << missing.size() << " state-action pair(s) the policy uses:";
          for (const auto& [s, a] : missing) os << " (" << s << "," << a << ")";
          return os.str();
      }()),
      missing_(std::move(missing)) {}

EmpiricalModel::EmpiricalModel(int states, int actions, int rewards)
    : states_(states),
      actions_(actions),
      rewards_(rewards),
      counts_(static_cast<std::size_t>(states) * actions * states * rewards, 0),
      totals_(static_cast<std::size_t>(states) * actions, 0) {}

EmpiricalModel EmpiricalModel::from_observations(const TabularMdp& mdp, const std::vector<Observation>& data) {
    EmpiricalModel model(mdp.states(), mdp.actions(), static_cast<int>(mdp.reward_support.size()));
    for (const auto& o : data) model.add(o);
    return model;
}

void EmpiricalModel::add(const Observation& o) {
    if (o.state < 0 || o.state >= states_ || o.next_state < 0 || o.next_state >= states_) {
        throw DimensionError("observation state index out of range");
    }
    if (o.action < 0 || o.action >= actions_) throw DimensionError("observation action index out of range");
    if (o.reward_index < 0 || o.reward_index >= rewards_) {
        throw ConfigError("observed reward index " + std::to_string(o.reward_index) + " is not in the declared support");
    }
    ++counts_[kernel_index(o.state, o.action, o.next_state, o.reward_index)];
    ++totals_[static_cast<std::size_t>(o.state) * actions_ + o.action];
}

Kernel EmpiricalModel::kernel(bool absorb_uncovered, int zero_reward) const {
    Kernel k{states_, actions_, rewards_, std::vector<double>(counts_.size(), 0.0)};
    for (int s = 0; s < states_; ++s) {
        for (int a = 0; a < actions_; ++a) {
            const long n = total(s, a);
            if (n == 0) {
                if (absorb_uncovered) {
                    if (zero_reward < 0) throw ConfigError("absorbing uncovered pairs needs 0 in the reward support");
                    k.at(s, a, s, zero_reward) = 1.0;
                }
                continue;
            }
            for (int s2 = 0; s2 < states_; ++s2) {
                for (int r = 0; r < rewards_; ++r) {
                    k.at(s, a, s2, r) = static_cast<double>(count(s, a, s2, r)) / static_cast<double>(n);
                }
            }
        }
    }
    return k;
}

std::vector<std::pair<int, int>> EmpiricalModel::missing_for(const TabularPolicy& policy) const {
    std::vector<std::pair<int, int>> out;
    for (int s = 0; s < states_; ++s) {
        for (int a = 0; a < actions_; ++a) {
            if (policy.at(s, a) > 0.0 && !covered(s, a)) out.emplace_back(s, a);
        }
    }
    return out;
}

std::vector<double> exact_value(const Kernel& kernel, const std::vector<double>& reward_support,
                                const TabularPolicy& policy, double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    Eigen::MatrixXd transition;
    Eigen::VectorXd reward;
    policy_matrices(kernel, reward_support, policy, transition, reward);
    return solve_discounted(transition, reward, gamma);
}

std::vector<double> exact_value(const TabularMdp& mdp, const TabularPolicy& policy) {
    return exact_value(mdp.kernel, mdp.reward_support, policy, mdp.gamma);
}

std::vector<double> gap_direct(const TabularMdp& mdp, const EmpiricalModel& model, const TabularPolicy& policy,
                               GapOptions options) {
    const Kernel pd = dataset_kernel(mdp, model, policy, options);
    const auto v = exact_value(mdp, policy);
    const auto vd = exact_value(pd, mdp.reward_support, policy, mdp.gamma);
    std::vector<double> delta(v.size());
    for (std::size_t s = 0; s < v.size(); ++s) delta[s] = v[s] - vd[s];
    return delta;
}

std::vector<double> gap_recursive(const TabularMdp& mdp, const EmpiricalModel& model, const TabularPolicy& policy,
                                  GapOptions options) {
    const Kernel pd = dataset_kernel(mdp, model, policy, options);
    const auto vd = exact_value(pd, mdp.reward_support, policy, mdp.gamma);
    const Kernel& p = mdp.kernel;
    const int S = p.states, A = p.actions, R = p.rewards;

    Eigen::VectorXd b = Eigen::VectorXd::Zero(S);
    Eigen::MatrixXd transition = Eigen::MatrixXd::Zero(S, S);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            const double w = policy.at(s, a);
            if (w == 0.0) continue;
            for (int s2 = 0; s2 < S; ++s2) {
                for (int r = 0; r < R; ++r) {
                    const double diff = p.at(s, a, s2, r) - pd.at(s, a, s2, r);
                    b(s) += w * diff * (mdp.reward_support[static_cast<std::size_t>(r)] + mdp.gamma * vd[s2]);
                    transition(s, s2) += w * p.at(s, a, s2, r);
                }
            }
        }
    }
    return solve_discounted(transition, b, mdp.gamma);
}

GapReport analyze(const TabularMdp& mdp, const EmpiricalModel& model, const TabularPolicy& policy,
                  GapOptions options) {
    mdp.validate();
    policy.validate();
    GapReport report;
    const Kernel pd = dataset_kernel(mdp, model, policy, options);
    if (options.absorb_uncovered) report.absorbed_pairs = model.missing_for(policy);
    report.v_true = exact_value(mdp, policy);
    report.v_dataset = exact_value(pd, mdp.reward_support, policy, mdp.gamma);
    report.delta_direct = gap_direct(mdp, model, policy, options);
    report.delta_recursive = gap_recursive(mdp, model, policy, options);
    for (std::size_t s = 0; s < report.delta_direct.size(); ++s) {
        report.max_abs_discrepancy =
            std::max(report.max_abs_discrepancy, std::abs(report.delta_direct[s] - report.delta_recursive[s]));
        report.initial_gap += mdp.rho0[s] * report.delta_direct[s];
    }
    return report;
}

nlohmann::json to_json(const GapReport& report) {
    nlohmann::json j{{"V_true", report.v_true},
                     {"V_dataset", report.v_dataset},
                     {"delta_direct", report.delta_direct},
                     {"delta_recursive", report.delta_recursive},
                     {"max_abs_discrepancy", report.max_abs_discrepancy},
                     {"initial_gap", report.initial_gap}};
    if (!report.absorbed_pairs.empty()) {
        nlohmann::json pairs = nlohmann::json::array();
        for (const auto& [s, a] : report.absorbed_pairs) pairs.push_back({s, a});
        j["extension_absorbed_uncovered"] = pairs;
    }
    return j;
}

TabularMdp mdp_from_json(const nlohmann::json& j) {
    try {
        TabularMdp mdp;
        const int S = j.at("S").get<int>();
        const int A = j.at("A").get<int>();
        mdp.reward_support = j.at("reward_support").get<std::vector<double>>();
        const int R = static_cast<int>(mdp.reward_support.size());
        if (S < 1 || A < 1 || R < 1) throw ConfigError("MDP needs S, A, |reward_support| >= 1");
        mdp.kernel = {S, A, R, std::vector<double>(static_cast<std::size_t>(S) * A * S * R)};
        const auto& p = j.at("p");
        if (p.size() != static_cast<std::size_t>(S)) throw ConfigError("p must have S entries");
        for (int s = 0; s < S; ++s) {
            if (p[s].size() != static_cast<std::size_t>(A)) throw ConfigError("p[s] must have A entries");
            for (int a = 0; a < A; ++a) {
                if (p[s][a].size() != static_cast<std::size_t>(S)) throw ConfigError("p[s][a] must have S entries");
                for (int s2 = 0; s2 < S; ++s2) {
                    if (p[s][a][s2].size() != static_cast<std::size_t>(R)) {
                        throw ConfigError("p[s][a][s'] must have |reward_support| entries");
                    }
                    for (int r = 0; r < R; ++r) mdp.kernel.at(s, a, s2, r) = p[s][a][s2][r].get<double>();
                }
            }
        }
        mdp.rho0 = j.at("rho0").get<std::vector<double>>();
        mdp.gamma = j.at("gamma").get<double>();
        mdp.validate();
        return mdp;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed MDP file: ") + e.what());
    }
}

nlohmann::json mdp_to_json(const TabularMdp& mdp) {
    const auto& k = mdp.kernel;
    nlohmann::json p = nlohmann::json::array();
    for (int s = 0; s < k.states; ++s) {
        nlohmann::json ps = nlohmann::json::array();
        for (int a = 0; a < k.actions; ++a) {
            nlohmann::json psa = nlohmann::json::array();
            for (int s2 = 0; s2 < k.states; ++s2) {
                nlohmann::json row = nlohmann::json::array();
                for (int r = 0; r < k.rewards; ++r) row.push_back(k.at(s, a, s2, r));
                psa.push_back(row);
            }
            ps.push_back(psa);
        }
        p.push_back(ps);
    }
    return {{"S", k.states}, {"A", k.actions}, {"reward_support", mdp.reward_support},
            {"p", p},        {"rho0", mdp.rho0}, {"gamma", mdp.gamma}};
}

TabularPolicy policy_from_json(const nlohmann::json& j, int states, int actions) {
    if (j.is_null()) return TabularPolicy::uniform(states, actions);
    try {
        TabularPolicy pi{states, actions, {}};
        if (j.size() != static_cast<std::size_t>(states)) throw ConfigError("policy must have S rows");
        for (const auto& row : j) {
            if (row.size() != static_cast<std::size_t>(actions)) throw ConfigError("policy rows must have A entries");
            for (const auto& x : row) pi.prob.push_back(x.get<double>());
        }
        pi.validate();
        return pi;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed policy: ") + e.what());
    }
}

std::vector<Observation> observations_from_json(const nlohmann::json& j) {
    try {
        const auto& list = j.is_object() ? j.at("transitions") : j;
        std::vector<Observation> out;
        out.reserve(list.size());
        for (const auto& t : list) {
            if (t.size() != 4) throw ConfigError("each transition must be [s, a, r_index, s_next]");
            out.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>(), t[3].get<int>()});
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed transitions file: ") + e.what());
    }
}

namespace {
void random_simplex(Rng& rng, double* out, std::size_t n) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = -std::log(1.0 - rng.uniform());
        sum += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
    // Renormalize so the row sum is as close to 1 as float arithmetic allows.
    double fixed = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) fixed += out[i];
    out[n - 1] = std::max(0.0, 1.0 - fixed);
}
}  // namespace

TabularMdp random_mdp(Rng& rng, int states, int actions, std::vector<double> reward_support, double gamma) {
    TabularMdp mdp;
    const int R = static_cast<int>(reward_support.size());
    mdp.reward_support = std::move(reward_support);
    mdp.kernel = {states, actions, R, std::vector<double>(static_cast<std::size_t>(states) * actions * states * R)};
    for (int s = 0; s < states; ++s) {
        for (int a = 0; a < actions; ++a) {
            random_simplex(rng, &mdp.kernel.at(s, a, 0, 0), static_cast<std::size_t>(states) * R);
        }
    }
    mdp.rho0.resize(static_cast<std::size_t>(states));
    random_simplex(rng, mdp.rho0.data(), mdp.rho0.size());
    mdp.gamma = gamma;
    return mdp;
}

TabularPolicy random_policy(Rng& rng, int states, int actions) {
    TabularPolicy pi{states, actions, std::vector<double>(static_cast<std::size_t>(states) * actions)};
    for (int s = 0; s < states; ++s) random_simplex(rng, &pi.prob[static_cast<std::size_t>(s) * actions], actions);
    return pi;
}

std::vector<Observation> sample_observations(const TabularMdp& mdp, Rng& rng, int per_pair) {
    const auto& k = mdp.kernel;
    std::vector<Observation> out;
    out.reserve(static_cast<std::size_t>(k.states) * k.actions * per_pair);
    const std::size_t row = static_cast<std::size_t>(k.states) * k.rewards;
    for (int s = 0; s < k.states; ++s) {
        for (int a = 0; a < k.actions; ++a) {
            const double* p = &k.prob[k.index(s, a, 0, 0)];
            for (int n = 0; n < per_pair; ++n) {
                double u = rng.uniform();
                std::size_t idx = 0;
                while (idx + 1 < row && u >= p[idx]) {
                    u -= p[idx];
                    ++idx;
                }
                // Never land on a zero-probability outcome because of rounding.
                while (p[idx] == 0.0 && idx > 0) --idx;
                out.push_back({s, a, static_cast<int>(idx % k.rewards), static_cast<int>(idx / k.rewards)});
            }
        }
    }
    return out;
}

}  // namespace popo::gap
