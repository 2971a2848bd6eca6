#include "popo/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "popo/gap.hpp"

namespace popo::cli {

namespace fs = std::filesystem;

void RunConfig::validate() const {
    train.validate();
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be at least 1");
    if (dataset.empty()) throw ConfigError("a dataset path is required");
    if (!env_id.empty()) envs::make_env(env_id);
}

namespace {

const std::vector<std::string>& run_keys() {
    static const std::vector<std::string> keys{"env_id", "dataset", "out_dir", "seed", "eval_episodes"};
    return keys;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("POPO_SEED");
    if (!s || !*s) return std::nullopt;
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(s, &used);
        if (used != std::string(s).size()) throw ConfigError("");
        return v;
    } catch (...) {
        throw ConfigError(std::string("POPO_SEED is not an unsigned integer: ") + s);
    }
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    nlohmann::json train = nlohmann::json::object();
    const auto& tk = agent::train_config_keys();
    const auto& rk = run_keys();
    for (const auto& [key, value] : j.items()) {
        if (std::find(rk.begin(), rk.end(), key) != rk.end()) continue;
        if (std::find(tk.begin(), tk.end(), key) == tk.end()) throw ConfigError("unknown config key '" + key + "'");
        train[key] = value;
    }
    c.train = agent::train_config_from_json(train, c.train);
    try {
        c.env_id = j.value("env_id", c.env_id);
        if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
        if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
        c.seed = j.value("seed", c.seed);
        c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return c;
}

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j = agent::to_json(c.train);
    j["env_id"] = c.env_id;
    j["dataset"] = c.dataset.string();
    j["out_dir"] = c.out_dir.string();
    j["seed"] = c.seed;
    j["eval_episodes"] = c.eval_episodes;
    return j;
}

std::uint64_t eval_seed_for(std::uint64_t run_seed) { return Rng::derive(run_seed, 0x6576616cULL).next_seed(); }

TrainSummary train_run(const RunConfig& config, const data::Dataset& dataset, std::ostream* log) {
    config.validate();
    const auto& info = dataset.info();
    const std::string env_id = config.env_id.empty() ? info.env_id : config.env_id;
    const auto env = envs::make_env(env_id);
    const auto& spec = env->spec();
    if (spec.obs_dim != info.obs_dim || spec.act_dim != info.act_dim || spec.max_action != info.max_action) {
        throw DimensionError("dataset '" + info.env_id + "' does not match environment '" + env_id + "'");
    }
    fs::create_directories(config.out_dir);

    TrainSummary summary;
    summary.dataset_hash = dataset.content_hash();
    summary.behavior_mean_return = dataset.manifest().value("mean_return", 0.0);

    nlohmann::json manifest{{"config", to_json(config)},
                            {"env_id", env_id},
                            {"dataset", {{"path", config.dataset.string()},
                                         {"content_hash", dataset.content_hash()},
                                         {"count", dataset.count()},
                                         {"behavior_mean_return", summary.behavior_mean_return}}},
                            {"eval_seed", eval_seed_for(config.seed)},
                            {"metrics_columns", kMetricsHeader}};

    std::ofstream csv(config.out_dir / "metrics.csv");
    if (!csv) throw IoError("cannot write " + (config.out_dir / "metrics.csv").string());
    csv << kMetricsHeader << '\n';

    agent::Agent<float> learner({info.obs_dim, info.act_dim, info.max_action}, config.train, config.seed);
    const std::uint64_t eval_seed = eval_seed_for(config.seed);
    const long max_steps = config.train.max_steps;
    for (long step = 1; step <= max_steps; ++step) {
        agent::StepMetrics m;
        try {
            m = learner.train_step(dataset);
        } catch (const NumericalError& e) {
            csv << step << ",nan,nan,,,,,,,\n";
            csv.flush();
            manifest["status"] = "numerical_failure";
            manifest["error"] = e.what();
            manifest["failed_step"] = step;
            write_json_file(config.out_dir / "manifest.json", manifest);
            throw;
        }
        std::string row = std::to_string(m.step) + "," + fmt(m.critic_loss) + "," + fmt(m.actor_objective) + ",";
        if (m.vae) {
            row += fmt(m.vae->total) + "," + fmt(m.vae->reconstruction) + "," + fmt(m.vae->kl) + ",";
        } else {
            row += ",,,";
        }
        if (step % config.train.eval_interval == 0 || step == max_steps) {
            const auto report = agent::evaluate(learner, *env, config.eval_episodes, eval_seed);
            row += fmt(report.mean_return) + "," + fmt(report.std_return) + "," + fmt(report.q_beta_mean) + "," +
                   fmt(report.mc_return);
            summary.evals.push_back({step, report});
            if (log) {
                *log << "step " << step << "  return " << fmt(report.mean_return) << " +- " << fmt(report.std_return)
                     << "  estimate " << fmt(report.q_beta_mean) << "  mc " << fmt(report.mc_return) << '\n';
            }
        } else {
            row += ",,,";
        }
        csv << row << '\n';
    }
    csv.flush();
    if (!csv) throw IoError("write failed: metrics.csv");
    summary.steps = learner.steps();

    learner.save(config.out_dir / "checkpoint.popo", {{"env_id", env_id}, {"dataset_hash", dataset.content_hash()}});
    manifest["status"] = "ok";
    manifest["steps"] = summary.steps;
    manifest["checkpoint"] = "checkpoint.popo";
    if (!summary.evals.empty()) manifest["final_eval"] = agent::to_json(summary.evals.back().report);
    write_json_file(config.out_dir / "manifest.json", manifest);
    return summary;
}

namespace {

struct Options {
    // gen-data
    std::string env_id;
    std::string kind;
    std::size_t n = 0;
    std::optional<std::uint64_t> seed;
    std::string out;
    int jobs = 1;
    // train
    std::string config_path;
    std::string dataset;
    std::optional<std::string> variant;
    std::optional<long> steps;
    std::optional<int> eval_interval;
    std::optional<int> eval_episodes;
    std::optional<std::string> distortion;
    std::optional<double> zeta;
    std::vector<std::string> sets;
    // eval
    std::string checkpoint;
    int episodes = 10;
    // gap
    std::string mdp_path;
    std::string transitions_path;
    std::string policy_path;
    bool absorb = false;
    // inspect
    std::string inspect_path;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::optional<std::uint64_t> from_config = {}) {
    if (flag) return *flag;
    if (from_config) return *from_config;
    if (auto s = env_seed()) return *s;
    return 0;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
    const auto env = envs::make_env(o.env_id);
    const auto policy = envs::BehaviorPolicy::make(envs::parse_behavior(o.kind));
    if (o.n < 1) throw ConfigError("--n must be at least 1");
    if (o.jobs < 1) throw ConfigError("--jobs must be at least 1");
    const std::uint64_t seed = resolve_seed(o.seed);
    const auto dataset = envs::collect_dataset(*env, policy, o.n, seed, o.jobs);
    data::write(dataset, o.out);
    out << nlohmann::json{{"path", o.out},
                          {"env_id", o.env_id},
                          {"kind", o.kind},
                          {"count", dataset.count()},
                          {"seed", seed},
                          {"mean_return", dataset.manifest().at("mean_return")},
                          {"content_hash", dataset.content_hash()}}
               .dump(2)
        << '\n';
    return kOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
    nlohmann::json j = nlohmann::json::object();
    if (!o.config_path.empty()) j = read_json_file(o.config_path);
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    std::optional<std::uint64_t> config_seed;
    if (j.contains("seed")) {
        try {
            config_seed = j.at("seed").get<std::uint64_t>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("seed must be an unsigned integer");
        }
    }
    // Flags win over the file.
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        try {
            j[key] = nlohmann::json::parse(value);
        } catch (const nlohmann::json::exception&) {
            j[key] = value;
        }
    }
    if (!o.dataset.empty()) j["dataset"] = o.dataset;
    if (!o.out.empty()) j["out_dir"] = o.out;
    if (!o.env_id.empty()) j["env_id"] = o.env_id;
    if (o.variant) j["variant"] = *o.variant;
    if (o.steps) j["max_steps"] = *o.steps;
    if (o.eval_interval) j["eval_interval"] = *o.eval_interval;
    if (o.eval_episodes) j["eval_episodes"] = *o.eval_episodes;
    if (o.distortion || o.zeta) {
        nlohmann::json d = j.contains("distortion") ? j["distortion"] : nlohmann::json::object();
        if (o.distortion) d["kind"] = *o.distortion;
        if (o.zeta) d["zeta"] = *o.zeta;
        if (d.value("kind", std::string("wang")) == "identity") d.erase("zeta");
        j["distortion"] = d;
    }
    j.erase("seed");
    RunConfig config = run_config_from_json(j);
    config.seed = resolve_seed(o.seed, config_seed);
    config.validate();
    const data::Dataset dataset = data::read(config.dataset);
    try {
        const TrainSummary s = train_run(config, dataset, &err);
        nlohmann::json result{{"out_dir", config.out_dir.string()}, {"steps", s.steps}, {"dataset_hash", s.dataset_hash}};
        if (!s.evals.empty()) result["final_eval"] = agent::to_json(s.evals.back().report);
        out << result.dump(2) << '\n';
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << " (diagnostic row flushed to "
            << (config.out_dir / "metrics.csv").string() << ")\n";
        return kNumerical;
    }
    return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
    nlohmann::json header;
    const auto learner = agent::Agent<float>::load(o.checkpoint, &header);
    std::string env_id = o.env_id;
    if (env_id.empty()) env_id = header.value("env_id", std::string());
    if (env_id.empty()) throw ConfigError("--env is required: the checkpoint names no environment");
    const auto env = envs::make_env(env_id);
    if (o.episodes < 1) throw ConfigError("--episodes must be at least 1");
    const std::uint64_t seed = resolve_seed(o.seed);
    const auto report = agent::evaluate(learner, *env, o.episodes, seed);
    nlohmann::json j = agent::to_json(report);
    j["env_id"] = env_id;
    j["episodes"] = o.episodes;
    j["seed"] = seed;
    j["variant"] = agent::to_string(learner.config().variant);
    j["step"] = learner.steps();
    out << j.dump(2) << '\n';
    return kOk;
}

int cmd_gap(const Options& o, std::ostream& out) {
    const nlohmann::json mdp_json = read_json_file(o.mdp_path);
    const gap::TabularMdp mdp = gap::mdp_from_json(mdp_json);
    const int S = mdp.kernel.states, A = mdp.kernel.actions;
    gap::TabularPolicy policy = gap::TabularPolicy::uniform(S, A);
    if (!o.policy_path.empty()) {
        policy = gap::policy_from_json(read_json_file(o.policy_path), S, A);
    } else if (mdp_json.contains("policy")) {
        policy = gap::policy_from_json(mdp_json.at("policy"), S, A);
    }
    const auto observations = gap::observations_from_json(read_json_file(o.transitions_path));
    const auto model = gap::EmpiricalModel::from_observations(mdp, observations);
    const auto report = gap::analyze(mdp, model, policy, {o.absorb});
    out << gap::to_json(report).dump(2) << '\n';
    return kOk;
}

int cmd_inspect(const Options& o, std::ostream& out) {
    out << data::inspect(data::read(o.inspect_path)).dump(2) << '\n';
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pessimistic offline policy optimization toolkit", "popo"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen-data", "Roll out a scripted behavior policy into a dataset file");
    gen->add_option("--env", o.env_id, "pointmass-v0 or pendulum-v0")->required();
    gen->add_option("--kind", o.kind, "random, medium or expert")->required();
    gen->add_option("--n", o.n, "Number of transitions")->required();
    gen->add_option("--seed", o.seed, "Seed (default: POPO_SEED, then 0)");
    gen->add_option("--out", o.out, "Output path")->required();
    gen->add_option("--jobs", o.jobs, "Parallel episode workers");

    auto* train = app.add_subcommand("train", "Train an agent on a dataset");
    train->add_option("--config", o.config_path, "JSON run config; flags override its keys");
    train->add_option("--dataset", o.dataset, "Dataset file");
    train->add_option("--out", o.out, "Output directory (default: run)");
    train->add_option("--env", o.env_id, "Evaluation environment (default: the dataset's)");
    train->add_option("--variant", o.variant, "popo, opo, td4 or td3");
    train->add_option("--steps", o.steps, "Training steps (max_steps)");
    train->add_option("--eval-interval", o.eval_interval, "Steps between evaluations");
    train->add_option("--eval-episodes", o.eval_episodes, "Episodes per evaluation");
    train->add_option("--distortion", o.distortion, "wang, cpw, cvar or identity");
    train->add_option("--zeta", o.zeta, "Distortion parameter");
    train->add_option("--set", o.sets, "Override any config key: key=value (value parsed as JSON)");
    train->add_option("--seed", o.seed, "Seed (default: config, then POPO_SEED, then 0)");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with frozen parameters");
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    eval->add_option("--env", o.env_id, "Environment (default: the one recorded at training)");
    eval->add_option("--episodes", o.episodes, "Episodes");
    eval->add_option("--seed", o.seed, "Evaluation seed (default: POPO_SEED, then 0)");

    auto* gapc = app.add_subcommand("gap", "Tabular estimation gap: direct and recursive");
    gapc->add_option("--mdp", o.mdp_path, "MDP JSON file")->required();
    gapc->add_option("--transitions", o.transitions_path, "Transitions JSON file")->required();
    gapc->add_option("--policy", o.policy_path, "Policy JSON file (default: the MDP file's, else uniform)");
    gapc->add_flag("--absorb-uncovered", o.absorb, "Extension: treat uncovered pairs as zero-reward self-loops");

    auto* inspect = app.add_subcommand("dataset-inspect", "Summarize a dataset file");
    inspect->add_option("path", o.inspect_path, "Dataset file")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(o, out);
        if (train->parsed()) return cmd_train(o, out, err);
        if (eval->parsed()) return cmd_eval(o, out);
        if (gapc->parsed()) return cmd_gap(o, out);
        if (inspect->parsed()) return cmd_inspect(o, out);
    } catch (const gap::CoverageError& e) {
        err << "coverage error: " << e.what() << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const DimensionError& e) {
        err << "dimension error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kNumerical;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        err << "i/o error: " << e.what() << "\n";
        return kIo;
    }
    return kUsage;
}

}  // namespace popo::cli
