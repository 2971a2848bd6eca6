#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "popo/critic.hpp"
#include "popo/data.hpp"
#include "popo/envs.hpp"
#include "popo/vae.hpp"

namespace popo::agent {

using nn::Matrix;
using nn::Vector;

/// popo: VAE + quantile critic. opo: VAE + twin-Q critic. td4: quantile critic, actor on s only.
/// td3: twin-Q critic, actor on s only.
enum class Variant { popo, opo, td4, td3 };

Variant parse_variant(std::string_view name);
std::string to_string(Variant v);

struct TrainConfig {
    double gamma = 0.99;
    double xi = 0.05;
    double eta = 5e-3;
    critic::Distortion distortion = critic::Distortion::wang(-0.75);
    int candidates = 10;  // n
    int batch_size = 256;
    double lr_vae = 3e-4;
    double lr_critic = 3e-4;
    double lr_actor = 3e-4;
    int quantiles = 32;         // N
    int target_quantiles = 32;  // N'
    int policy_quantiles = 32;  // K, samples in Q_beta
    double kappa = 1.0;
    Variant variant = Variant::popo;
    bool distort_td = true;
    int eval_interval = 5000;
    long max_steps = 100000;
    double latent_clip = 0.5;
    int critic_hidden = 256;
    int actor_hidden = 256;
    int vae_hidden = 750;
    int cosine_features = 64;

    bool uses_vae() const { return variant == Variant::popo || variant == Variant::opo; }
    bool uses_quantiles() const { return variant == Variant::popo || variant == Variant::td4; }

    /// Throws ConfigError on out-of-range values.
    void validate() const;
};

/// Unknown keys are rejected; missing keys keep the defaults of `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const TrainConfig& c);
/// Keys accepted by train_config_from_json.
const std::vector<std::string>& train_config_keys();

struct AgentShape {
    int obs_dim = 0;
    int act_dim = 0;
    double max_action = 1.0;
};

/// Candidate actions for B states, n per state; column b * n + i is candidate i of state b.
template <typename T>
struct Candidates {
    Matrix<T> obs;      // obs_dim x (B n), each state repeated n times
    Matrix<T> latent;   // L x (B n); empty without a VAE
    Matrix<T> central;  // act_dim x (B n); VAE decodes, empty without a VAE
    Matrix<T> raw;      // act_dim x (B n); actor output in (-1, 1)
    Matrix<T> actions;  // act_dim x (B n); clipped final actions
    int per_state = 1;
};

template <typename T>
struct Selection {
    Matrix<T> actions;         // act_dim x B
    std::vector<int> index;    // chosen candidate per state
    Vector<T> scores;          // value of every candidate, B n
};

/// Noise that fixes one actor objective evaluation.
template <typename T>
struct ActorNoise {
    Matrix<T> latent;  // L x (B n)
    Matrix<T> taus;    // K x B, already distorted
};

struct StepMetrics {
    long step = 0;
    double critic_loss = 0.0;
    double actor_objective = 0.0;
    std::optional<vae::VaeLosses> vae;
};

struct EvalReport {
    std::vector<double> returns;             // undiscounted episode returns
    std::vector<double> discounted_returns;  // Monte-Carlo discounted return from the initial state
    std::vector<double> initial_estimates;   // critic value of the first (state, action)
    double mean_return = 0.0;
    double std_return = 0.0;
    double q_beta_mean = 0.0;
    double mc_return = 0.0;
};

nlohmann::json to_json(const EvalReport& r);

/// Offline actor-critic agent: conditional VAE proposes central actions, a bounded residual
/// actor perturbs them, and the candidate with the highest distorted value is taken.
template <typename T>
class Agent {
public:
    Agent(AgentShape shape, TrainConfig config, std::uint64_t seed);

    const AgentShape& shape() const { return shape_; }
    const TrainConfig& config() const { return config_; }
    long steps() const { return steps_; }

    Candidates<T> generate_actions(const Matrix<T>& obs, int n, bool use_targets, Rng& rng) const;
    Candidates<T> generate_actions(const Matrix<T>& obs, const Matrix<T>& latent, int n, bool use_targets) const;

    /// Critic value of each column: Q_beta over (K x groups) taus, or Q1 for twin critics.
    Vector<T> score(const Matrix<T>& obs, const Matrix<T>& actions, const Matrix<T>& taus, bool use_targets) const;
    Matrix<T> policy_taus(int groups, Rng& rng) const;

    /// Argmax over candidates; ties go to the lowest index.
    Selection<T> select(const Candidates<T>& candidates, const Matrix<T>& taus, bool use_targets) const;
    Selection<T> select_actions(const Matrix<T>& obs, bool use_targets, Rng& rng) const;
    Vector<T> select_action(const Vector<T>& obs, Rng& rng) const;

    /// Value estimate of (s, a) with the online critic; q_beta for quantile critics.
    double value_estimate(const Vector<T>& obs, const Vector<T>& action, Rng& rng) const;

    vae::VaeLosses vae_step(const data::Batch<T>& batch);
    double critic_step(const data::Batch<T>& batch);
    double actor_step(const data::Batch<T>& batch);
    void soft_update(double eta);
    StepMetrics train_step(const data::Dataset& dataset);

    ActorNoise<T> sample_actor_noise(Eigen::Index batch, Rng& rng) const;

    /// Mean Q_beta(s, a_new) for fixed noise. With `fixed_selection` the candidate per state is
    /// given rather than chosen, which keeps finite-difference checks on one branch.
    double actor_objective(const Matrix<T>& obs, const ActorNoise<T>& noise, const std::vector<int>* fixed_selection,
                           nn::Gradients<T>* actor_grads, std::vector<int>* chosen = nullptr) const;

    /// Called with "vae", "critic", "actor", "targets" as each phase of train_step runs.
    void set_step_recorder(std::function<void(std::string_view)> recorder) { recorder_ = std::move(recorder); }

    bool has_vae() const { return vae_.has_value(); }
    vae::ConditionalVae<T>& vae() { return vae_.value(); }
    const vae::ConditionalVae<T>& vae() const { return vae_.value(); }
    nn::DenseNet<T>& actor() { return actor_; }
    const nn::DenseNet<T>& actor() const { return actor_; }
    nn::DenseNet<T>& actor_target() { return actor_target_; }
    const nn::DenseNet<T>& actor_target() const { return actor_target_; }
    bool has_quantile_critic() const { return quantile_.has_value(); }
    critic::QuantileCritic<T>& quantile_critic() { return quantile_.value(); }
    const critic::QuantileCritic<T>& quantile_critic() const { return quantile_.value(); }
    critic::TwinQCritic<T>& twin_critic() { return twin_.value(); }
    const critic::TwinQCritic<T>& twin_critic() const { return twin_.value(); }
    Rng& rng() { return rng_; }

    /// Every network, online and target, with a stable name.
    std::vector<std::pair<std::string, nn::DenseNet<T>*>> networks();

    void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
    static Agent load(const std::filesystem::path& path, nlohmann::json* header = nullptr);

private:
    Matrix<T> actor_input(const Matrix<T>& obs, const Matrix<T>& central) const;
    void record(std::string_view phase) const {
        if (recorder_) recorder_(phase);
    }

    AgentShape shape_;
    TrainConfig config_;
    Rng rng_;
    std::optional<vae::ConditionalVae<T>> vae_;
    nn::DenseNet<T> actor_;
    nn::DenseNet<T> actor_target_;
    nn::Adam<T> actor_optimizer_;
    std::optional<critic::QuantileCritic<T>> quantile_;
    std::optional<critic::TwinQCritic<T>> twin_;
    long steps_ = 0;
    std::function<void(std::string_view)> recorder_;
};

using PolicyFn = std::function<std::vector<double>(const std::vector<double>& obs, Rng& rng)>;
using ValueFn = std::function<double(const std::vector<double>& obs, const std::vector<double>& action, Rng& rng)>;

/// Episode e resets and acts on the stream (seed, e). `value`, when given, scores the first
/// (state, action) of each episode.
EvalReport evaluate_policy(const envs::Environment& env, const PolicyFn& policy, int episodes, std::uint64_t seed,
                           double gamma, const ValueFn& value = {});

/// Rolls out the greedy agent with frozen parameters.
template <typename T>
EvalReport evaluate(const Agent<T>& agent, const envs::Environment& env, int episodes, std::uint64_t seed);

// Checkpoint container: same framing as datasets, header {networks: [{name, dims, activations}], ...}
// followed by each network's layers as row-major weights then bias, f32 little-endian.
void write_networks(const std::filesystem::path& path, nlohmann::json header,
                    const std::vector<std::pair<std::string, const nn::DenseNet<float>*>>& nets);
struct NetworkFile {
    nlohmann::json header;
    std::vector<std::pair<std::string, nn::DenseNet<float>>> nets;
};
NetworkFile read_networks(const std::filesystem::path& path);

extern template class Agent<float>;
extern template class Agent<double>;

}  // namespace popo::agent
