#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "popo/agent.hpp"

namespace popo::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kNumerical = 3, kIo = 4 };

/// Training run: every TrainConfig key plus the run-level keys below.
struct RunConfig {
    agent::TrainConfig train;
    std::string env_id;  // empty: taken from the dataset header
    std::filesystem::path dataset;
    std::filesystem::path out_dir = "run";
    std::uint64_t seed = 0;
    int eval_episodes = 10;

    void validate() const;
};

/// Unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
nlohmann::json to_json(const RunConfig& c);

/// Fixed column order of metrics.csv.
inline constexpr const char* kMetricsHeader =
    "step,critic_loss,actor_objective,vae_total,vae_recon,vae_kl,eval_return_mean,eval_return_std,q_beta_mean,mc_return";

struct EvalPoint {
    long step = 0;
    agent::EvalReport report;
};

struct TrainSummary {
    long steps = 0;
    std::vector<EvalPoint> evals;
    std::string dataset_hash;
    double behavior_mean_return = 0.0;
};

/// Seed of the evaluation stream of a training run; the same episodes at every checkpoint.
std::uint64_t eval_seed_for(std::uint64_t run_seed);

/// Trains for max_steps, evaluating every eval_interval steps and at the last step. Writes
/// metrics.csv, manifest.json and checkpoint.popo into out_dir. Throws NumericalError after
/// flushing a diagnostic row when a loss turns non-finite.
TrainSummary train_run(const RunConfig& config, const data::Dataset& dataset, std::ostream* log = nullptr);

/// Full command-line entry point; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace popo::cli
