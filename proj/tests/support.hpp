#pragma once

// Oracles and fixtures shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "popo/common.hpp"
#include "popo/gap.hpp"

namespace popo::testing {

/// V^pi by plain value iteration until the sup-norm change drops below `tol`.
inline std::vector<double> value_iteration(const gap::Kernel& k, const std::vector<double>& support,
                                           const gap::TabularPolicy& pi, double gamma, double tol = 1e-13) {
    std::vector<double> v(static_cast<std::size_t>(k.states), 0.0), next(v.size());
    for (int iter = 0; iter < 100000; ++iter) {
        double change = 0.0;
        for (int s = 0; s < k.states; ++s) {
            double acc = 0.0;
            for (int a = 0; a < k.actions; ++a) {
                double q = 0.0;
                for (int s2 = 0; s2 < k.states; ++s2) {
                    for (int r = 0; r < k.rewards; ++r) {
                        q += k.at(s, a, s2, r) * (support[static_cast<std::size_t>(r)] + gamma * v[static_cast<std::size_t>(s2)]);
                    }
                }
                acc += pi.at(s, a) * q;
            }
            next[static_cast<std::size_t>(s)] = acc;
            change = std::max(change, std::abs(acc - v[static_cast<std::size_t>(s)]));
        }
        v.swap(next);
        if (change < tol) break;
    }
    return v;
}

/// An MDP whose rows are multiples of 1/total (total a power of two) together with the
/// observations that realize exactly those counts, so the count model equals p bitwise.
struct ExactInstance {
    gap::TabularMdp mdp;
    gap::TabularPolicy policy;
    std::vector<gap::Observation> data;
};

inline ExactInstance exact_instance(Rng& rng, int states, int actions, std::vector<double> support, double gamma,
                                    int total = 64) {
    ExactInstance inst;
    inst.mdp = gap::random_mdp(rng, states, actions, std::move(support), gamma);
    auto& k = inst.mdp.kernel;
    const int row = k.states * k.rewards;
    for (int s = 0; s < k.states; ++s) {
        for (int a = 0; a < k.actions; ++a) {
            std::vector<int> counts(static_cast<std::size_t>(row), 0);
            for (int n = 0; n < total; ++n) ++counts[rng.index(static_cast<std::size_t>(row))];
            for (int idx = 0; idx < row; ++idx) {
                k.prob[k.index(s, a, 0, 0) + static_cast<std::size_t>(idx)] =
                    static_cast<double>(counts[static_cast<std::size_t>(idx)]) / total;
                for (int c = 0; c < counts[static_cast<std::size_t>(idx)]; ++c) {
                    inst.data.push_back({s, a, idx % k.rewards, idx / k.rewards});
                }
            }
        }
    }
    inst.policy = gap::random_policy(rng, states, actions);
    return inst;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("popo_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace popo::testing
