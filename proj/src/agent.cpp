#include "popo/agent.hpp"

#include <algorithm>
#include <utility>
#include <cmath>
#include <numeric>

namespace popo::agent {

Variant parse_variant(std::string_view name) {
    if (name == "popo") return Variant::popo;
    if (name == "opo") return Variant::opo;
    if (name == "td4") return Variant::td4;
    if (name == "td3") return Variant::td3;
    throw ConfigError("unknown variant '" + std::string(name) + "' (expected popo, opo, td4 or td3)");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::popo: return "popo";
        case Variant::opo: return "opo";
        case Variant::td4: return "td4";
        case Variant::td3: return "td3";
    }
    return "popo";
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw ConfigError(what);
    };
    require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
    require(xi >= 0.0, "xi must be nonnegative");
    require(eta > 0.0 && eta <= 1.0, "eta must lie in (0, 1]");
    require(candidates >= 1, "candidates (n) must be at least 1");
    require(batch_size >= 1, "batch_size must be at least 1");
    require(lr_vae > 0.0 && lr_critic > 0.0 && lr_actor > 0.0, "learning rates must be positive");
    require(quantiles >= 1 && target_quantiles >= 1 && policy_quantiles >= 1, "quantile counts must be at least 1");
    require(kappa > 0.0, "kappa must be positive");
    require(eval_interval >= 1, "eval_interval must be at least 1");
    require(max_steps >= 0, "max_steps must be nonnegative");
    require(latent_clip > 0.0, "latent_clip must be positive");
    require(critic_hidden >= 1 && actor_hidden >= 1 && vae_hidden >= 1 && cosine_features >= 1,
            "layer widths must be positive");
}

const std::vector<std::string>& train_config_keys() {
    static const std::vector<std::string> keys{
        "gamma",         "xi",           "eta",         "distortion",     "candidates",   "batch_size",
        "lr_vae",        "lr_critic",    "lr_actor",    "quantiles",      "target_quantiles", "policy_quantiles",
        "kappa",         "variant",      "distort_td",  "eval_interval",  "max_steps",    "latent_clip",
        "critic_hidden", "actor_hidden", "vae_hidden",  "cosine_features"};
    return keys;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    const auto& keys = train_config_keys();
    for (const auto& [key, _] : j.items()) {
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    try {
        c.gamma = j.value("gamma", c.gamma);
        c.xi = j.value("xi", c.xi);
        c.eta = j.value("eta", c.eta);
        if (j.contains("distortion")) c.distortion = critic::distortion_from_json(j.at("distortion"));
        c.candidates = j.value("candidates", c.candidates);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr_vae = j.value("lr_vae", c.lr_vae);
        c.lr_critic = j.value("lr_critic", c.lr_critic);
        c.lr_actor = j.value("lr_actor", c.lr_actor);
        c.quantiles = j.value("quantiles", c.quantiles);
        c.target_quantiles = j.value("target_quantiles", c.target_quantiles);
        c.policy_quantiles = j.value("policy_quantiles", c.policy_quantiles);
        c.kappa = j.value("kappa", c.kappa);
        if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
        c.distort_td = j.value("distort_td", c.distort_td);
        c.eval_interval = j.value("eval_interval", c.eval_interval);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.latent_clip = j.value("latent_clip", c.latent_clip);
        c.critic_hidden = j.value("critic_hidden", c.critic_hidden);
        c.actor_hidden = j.value("actor_hidden", c.actor_hidden);
        c.vae_hidden = j.value("vae_hidden", c.vae_hidden);
        c.cosine_features = j.value("cosine_features", c.cosine_features);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"gamma", c.gamma},
            {"xi", c.xi},
            {"eta", c.eta},
            {"distortion", critic::to_json(c.distortion)},
            {"candidates", c.candidates},
            {"batch_size", c.batch_size},
            {"lr_vae", c.lr_vae},
            {"lr_critic", c.lr_critic},
            {"lr_actor", c.lr_actor},
            {"quantiles", c.quantiles},
            {"target_quantiles", c.target_quantiles},
            {"policy_quantiles", c.policy_quantiles},
            {"kappa", c.kappa},
            {"variant", to_string(c.variant)},
            {"distort_td", c.distort_td},
            {"eval_interval", c.eval_interval},
            {"max_steps", c.max_steps},
            {"latent_clip", c.latent_clip},
            {"critic_hidden", c.critic_hidden},
            {"actor_hidden", c.actor_hidden},
            {"vae_hidden", c.vae_hidden},
            {"cosine_features", c.cosine_features}};
}

nlohmann::json to_json(const EvalReport& r) {
    return {{"mean_return", r.mean_return},
            {"std_return", r.std_return},
            {"episode_returns", r.returns},
            {"q_beta_mean", r.q_beta_mean},
            {"mc_return", r.mc_return},
            {"initial_estimates", r.initial_estimates},
            {"discounted_returns", r.discounted_returns}};
}

namespace {

template <typename T>
Matrix<T> vstack(const Matrix<T>& top, const Matrix<T>& bottom) {
    Matrix<T> out(top.rows() + bottom.rows(), top.cols());
    out.topRows(top.rows()) = top;
    out.bottomRows(bottom.rows()) = bottom;
    return out;
}

template <typename T>
Matrix<T> repeat_columns(const Matrix<T>& m, int n) {
    Matrix<T> out(m.rows(), m.cols() * n);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (int i = 0; i < n; ++i) out.col(c * n + i) = m.col(c);
    }
    return out;
}

}  // namespace

template <typename T>
Agent<T>::Agent(AgentShape shape, TrainConfig config, std::uint64_t seed)
    : shape_(shape), config_(std::move(config)), rng_(seed) {
    config_.validate();
    if (shape_.obs_dim < 1 || shape_.act_dim < 1) throw DimensionError("agent dimensions must be positive");
    if (!(shape_.max_action > 0.0)) throw ConfigError("max_action must be positive");
    using nn::Activation;
    const int h = config_.actor_hidden;
    if (config_.uses_vae()) {
        vae_.emplace(shape_.obs_dim, shape_.act_dim, config_.vae_hidden, shape_.max_action, config_.lr_vae, rng_);
    }
    const int actor_in = shape_.obs_dim + (config_.uses_vae() ? shape_.act_dim : 0);
    actor_ = nn::DenseNet<T>::uniform_init({actor_in, h, h, shape_.act_dim},
                                           {Activation::relu, Activation::relu, Activation::tanh}, rng_);
    actor_target_ = actor_;
    actor_optimizer_ = nn::Adam<T>({.learning_rate = config_.lr_actor}, nn::as_const(actor_.parameters()));
    const int sa = shape_.obs_dim + shape_.act_dim;
    if (config_.uses_quantiles()) {
        quantile_.emplace(sa, config_.critic_hidden, config_.cosine_features, config_.lr_critic, rng_);
    } else {
        twin_.emplace(sa, config_.critic_hidden, config_.lr_critic, rng_);
    }
}

template <typename T>
Matrix<T> Agent<T>::actor_input(const Matrix<T>& obs, const Matrix<T>& central) const {
    return vae_ ? vstack(obs, central) : obs;
}

template <typename T>
Candidates<T> Agent<T>::generate_actions(const Matrix<T>& obs, int n, bool use_targets, Rng& rng) const {
    if (n < 1) throw ConfigError("need at least one candidate");
    Matrix<T> latent;
    if (vae_) latent = vae_->sample_latent(obs.cols() * n, rng, config_.latent_clip);
    return generate_actions(obs, latent, n, use_targets);
}

template <typename T>
Candidates<T> Agent<T>::generate_actions(const Matrix<T>& obs, const Matrix<T>& latent, int n, bool use_targets) const {
    if (obs.rows() != shape_.obs_dim) throw DimensionError("observation dimension mismatch");
    if (n < 1) throw ConfigError("need at least one candidate");
    Candidates<T> c;
    c.per_state = n;
    c.obs = n == 1 ? obs : repeat_columns(obs, n);
    const T m = static_cast<T>(shape_.max_action);
    const auto& actor = use_targets ? actor_target_ : actor_;
    if (vae_) {
        if (latent.cols() != c.obs.cols()) throw DimensionError("one latent per candidate required");
        c.latent = latent;
        c.central = vae_->decode(c.obs, latent);
        c.raw = actor.forward(actor_input(c.obs, c.central));
        c.actions = (c.central + c.raw * static_cast<T>(config_.xi * shape_.max_action)).cwiseMax(-m).cwiseMin(m);
    } else {
        c.raw = actor.forward(c.obs);
        c.actions = (c.raw * m).cwiseMax(-m).cwiseMin(m);
    }
    return c;
}

template <typename T>
Matrix<T> Agent<T>::policy_taus(int groups, Rng& rng) const {
    if (!quantile_) return Matrix<T>(0, groups);
    return critic::sample_taus<T>(config_.policy_quantiles, groups, config_.distortion, rng);
}

template <typename T>
Vector<T> Agent<T>::score(const Matrix<T>& obs, const Matrix<T>& actions, const Matrix<T>& taus,
                          bool use_targets) const {
    const Matrix<T> sa = vstack(obs, actions);
    if (quantile_) {
        return critic::distorted_mean(use_targets ? quantile_->target : quantile_->online, sa, taus);
    }
    const auto& q = use_targets ? twin_->q1_target : twin_->q1;
    return q.forward(sa).row(0).transpose();
}

template <typename T>
Selection<T> Agent<T>::select(const Candidates<T>& c, const Matrix<T>& taus, bool use_targets) const {
    const int n = c.per_state;
    const Eigen::Index b = c.actions.cols() / n;
    Selection<T> s;
    s.index.assign(static_cast<std::size_t>(b), 0);
    if (n == 1) {
        s.actions = c.actions;
        return s;
    }
    s.scores = score(c.obs, c.actions, taus, use_targets);
    s.actions.resize(c.actions.rows(), b);
    for (Eigen::Index k = 0; k < b; ++k) {
        int best = 0;
        for (int i = 1; i < n; ++i) {
            if (s.scores(k * n + i) > s.scores(k * n + best)) best = i;
        }
        s.index[static_cast<std::size_t>(k)] = best;
        s.actions.col(k) = c.actions.col(k * n + best);
    }
    return s;
}

template <typename T>
Selection<T> Agent<T>::select_actions(const Matrix<T>& obs, bool use_targets, Rng& rng) const {
    const int n = vae_ ? config_.candidates : 1;
    const Candidates<T> c = generate_actions(obs, n, use_targets, rng);
    const Matrix<T> taus = n == 1 ? Matrix<T>() : policy_taus(static_cast<int>(obs.cols()), rng);
    return select(c, taus, use_targets);
}

template <typename T>
Vector<T> Agent<T>::select_action(const Vector<T>& obs, Rng& rng) const {
    return select_actions(Matrix<T>(obs), false, rng).actions.col(0);
}

template <typename T>
double Agent<T>::value_estimate(const Vector<T>& obs, const Vector<T>& action, Rng& rng) const {
    const Matrix<T> taus = policy_taus(1, rng);
    return static_cast<double>(score(Matrix<T>(obs), Matrix<T>(action), taus, false)(0));
}

template <typename T>
vae::VaeLosses Agent<T>::vae_step(const data::Batch<T>& batch) {
    return vae::vae_update(*vae_, batch.obs, batch.act, rng_);
}

template <typename T>
double Agent<T>::critic_step(const data::Batch<T>& batch) {
    const Eigen::Index b = batch.obs.cols();
    const Matrix<T> next_actions = select_actions(batch.next_obs, true, rng_).actions;
    const Matrix<T> next_sa = vstack(batch.next_obs, next_actions);
    const Vector<T> not_done = (Vector<T>::Ones(b) - batch.done);
    if (quantile_) {
        const critic::Distortion td_beta = config_.distort_td ? config_.distortion : critic::Distortion::identity();
        critic::QuantileTdBatch<T> td;
        const Matrix<T> next_taus = critic::sample_taus<T>(config_.target_quantiles, static_cast<int>(b), td_beta, rng_);
        td.next_quantiles = quantile_->target.forward(next_sa, next_taus);
        td.taus = critic::sample_taus<T>(config_.quantiles, static_cast<int>(b), td_beta, rng_);
        td.sa = vstack(batch.obs, batch.act);
        td.reward = batch.reward;
        td.not_done = not_done;
        return critic::critic_update(*quantile_, td, config_.gamma, config_.kappa);
    }
    critic::TwinTdBatch<T> td;
    td.sa = vstack(batch.obs, batch.act);
    td.reward = batch.reward;
    td.not_done = not_done;
    td.next_q1 = twin_->q1_target.forward(next_sa).row(0).transpose();
    td.next_q2 = twin_->q2_target.forward(next_sa).row(0).transpose();
    return critic::twin_q_update(*twin_, td, config_.gamma);
}

template <typename T>
ActorNoise<T> Agent<T>::sample_actor_noise(Eigen::Index batch, Rng& rng) const {
    ActorNoise<T> noise;
    if (vae_) noise.latent = vae_->sample_latent(batch * config_.candidates, rng, config_.latent_clip);
    noise.taus = policy_taus(static_cast<int>(batch), rng);
    return noise;
}

template <typename T>
double Agent<T>::actor_objective(const Matrix<T>& obs, const ActorNoise<T>& noise,
                                 const std::vector<int>* fixed_selection, nn::Gradients<T>* actor_grads,
                                 std::vector<int>* chosen) const {
    const Eigen::Index b = obs.cols();
    const int n = vae_ ? config_.candidates : 1;
    const T m = static_cast<T>(shape_.max_action);

    std::vector<int> index(static_cast<std::size_t>(b), 0);
    Matrix<T> central;
    if (vae_) {
        const Candidates<T> cands = generate_actions(obs, noise.latent, n, false);
        if (fixed_selection) {
            if (fixed_selection->size() != static_cast<std::size_t>(b)) throw DimensionError("selection size mismatch");
            index = *fixed_selection;
        } else if (n > 1) {
            index = select(cands, noise.taus, false).index;
        }
        central.resize(shape_.act_dim, b);
        for (Eigen::Index k = 0; k < b; ++k) central.col(k) = cands.central.col(k * n + index[static_cast<std::size_t>(k)]);
    }
    if (chosen) *chosen = index;

    nn::Trace<T> actor_trace;
    const Matrix<T> raw = actor_.forward(actor_input(obs, central), actor_trace);
    Matrix<T> unclipped = vae_ ? Matrix<T>(central + raw * static_cast<T>(config_.xi * shape_.max_action))
                               : Matrix<T>(raw * m);
    const Matrix<T> actions = unclipped.cwiseMax(-m).cwiseMin(m);
    const Matrix<T> sa = vstack(obs, actions);

    double objective = 0.0;
    Matrix<T> d_sa;
    if (quantile_) {
        critic::QuantileTrace<T> trace;
        const Matrix<T> z = quantile_->online.forward(sa, noise.taus, trace);
        for (Eigen::Index i = 0; i < z.size(); ++i) objective += static_cast<double>(z.data()[i]);
        objective /= static_cast<double>(z.size());
        if (actor_grads) {
            auto scratch = quantile_->online.make_gradients();
            const Matrix<T> up = Matrix<T>::Constant(z.rows(), z.cols(), static_cast<T>(1.0 / static_cast<double>(z.size())));
            d_sa = quantile_->online.backward(trace, up, scratch);
        }
    } else {
        nn::Trace<T> trace;
        const Matrix<T> q = twin_->q1.forward(sa, trace);
        for (Eigen::Index i = 0; i < q.size(); ++i) objective += static_cast<double>(q.data()[i]);
        objective /= static_cast<double>(q.size());
        if (actor_grads) {
            auto scratch = twin_->q1.make_gradients();
            const Matrix<T> up = Matrix<T>::Constant(1, b, static_cast<T>(1.0 / static_cast<double>(b)));
            d_sa = twin_->q1.backward(trace, up, scratch);
        }
    }
    if (!std::isfinite(objective)) throw NumericalError("actor objective is not finite");
    if (actor_grads) {
        Matrix<T> d_act = d_sa.bottomRows(shape_.act_dim);
        for (Eigen::Index i = 0; i < d_act.size(); ++i) {
            const T u = unclipped.data()[i];
            if (u > m || u < -m) d_act.data()[i] = T(0);
        }
        const T gain = vae_ ? static_cast<T>(config_.xi * shape_.max_action) : m;
        if (actor_grads->weight.empty()) *actor_grads = actor_.make_gradients();
        actor_.backward(actor_trace, d_act * gain, *actor_grads);
    }
    return objective;
}

template <typename T>
double Agent<T>::actor_step(const data::Batch<T>& batch) {
    const ActorNoise<T> noise = sample_actor_noise(batch.obs.cols(), rng_);
    auto grads = actor_.make_gradients();
    const double objective = actor_objective(batch.obs, noise, nullptr, &grads);
    actor_optimizer_.ascend(actor_.parameters(), std::as_const(grads).spans());
    return objective;
}

template <typename T>
void Agent<T>::soft_update(double eta) {
    nn::soft_update(actor_target_.parameters(), nn::as_const(actor_.parameters()), eta);
    if (quantile_) {
        nn::soft_update(quantile_->target.parameters(), nn::as_const(quantile_->online.parameters()), eta);
    } else {
        nn::soft_update(twin_->target_parameters(), nn::as_const(twin_->parameters()), eta);
    }
}

template <typename T>
StepMetrics Agent<T>::train_step(const data::Dataset& dataset) {
    if (dataset.count() < static_cast<std::size_t>(config_.batch_size)) {
        throw ConfigError("dataset has " + std::to_string(dataset.count()) + " transitions, fewer than batch size " +
                          std::to_string(config_.batch_size));
    }
    if (dataset.info().obs_dim != shape_.obs_dim || dataset.info().act_dim != shape_.act_dim) {
        throw DimensionError("dataset dimensions differ from the agent");
    }
    const data::Batch<T> batch = data::sample<T>(dataset, config_.batch_size, rng_);
    StepMetrics metrics;
    if (vae_) {
        record("vae");
        metrics.vae = vae_step(batch);
    }
    record("critic");
    metrics.critic_loss = critic_step(batch);
    record("actor");
    metrics.actor_objective = actor_step(batch);
    record("targets");
    soft_update(config_.eta);
    metrics.step = ++steps_;
    return metrics;
}

template <typename T>
std::vector<std::pair<std::string, nn::DenseNet<T>*>> Agent<T>::networks() {
    std::vector<std::pair<std::string, nn::DenseNet<T>*>> out;
    out.emplace_back("actor", &actor_);
    out.emplace_back("actor_target", &actor_target_);
    if (vae_) {
        out.emplace_back("vae_encoder", &vae_->encoder());
        out.emplace_back("vae_decoder", &vae_->decoder());
    }
    if (quantile_) {
        out.emplace_back("critic_trunk", &quantile_->online.trunk());
        out.emplace_back("critic_embedding", &quantile_->online.embedding());
        out.emplace_back("critic_head", &quantile_->online.head());
        out.emplace_back("critic_target_trunk", &quantile_->target.trunk());
        out.emplace_back("critic_target_embedding", &quantile_->target.embedding());
        out.emplace_back("critic_target_head", &quantile_->target.head());
    } else {
        out.emplace_back("q1", &twin_->q1);
        out.emplace_back("q2", &twin_->q2);
        out.emplace_back("q1_target", &twin_->q1_target);
        out.emplace_back("q2_target", &twin_->q2_target);
    }
    return out;
}

template <typename T>
void Agent<T>::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
    auto& self = const_cast<Agent<T>&>(*this);
    std::vector<nn::DenseNet<float>> storage;
    const auto nets = self.networks();
    storage.reserve(nets.size());
    std::vector<std::pair<std::string, const nn::DenseNet<float>*>> views;
    for (const auto& [name, net] : nets) {
        storage.push_back(net->template cast<float>());
        views.emplace_back(name, &storage.back());
    }
    nlohmann::json header{{"format", "popo-checkpoint"},
                          {"shape", {{"obs_dim", shape_.obs_dim}, {"act_dim", shape_.act_dim}, {"max_action", shape_.max_action}}},
                          {"config", to_json(config_)},
                          {"step", steps_}};
    if (extra.is_object()) {
        for (const auto& [k, v] : extra.items()) header[k] = v;
    }
    write_networks(path, header, views);
}

template <typename T>
Agent<T> Agent<T>::load(const std::filesystem::path& path, nlohmann::json* header_out) {
    NetworkFile file = read_networks(path);
    const auto& h = file.header;
    if (h.value("format", std::string()) != "popo-checkpoint") {
        throw data::FormatError(data::FormatError::Kind::bad_header, "bad header: not a checkpoint");
    }
    AgentShape shape;
    TrainConfig config;
    try {
        shape.obs_dim = h.at("shape").at("obs_dim").get<int>();
        shape.act_dim = h.at("shape").at("act_dim").get<int>();
        shape.max_action = h.at("shape").at("max_action").get<double>();
        config = train_config_from_json(h.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw data::FormatError(data::FormatError::Kind::bad_header, std::string("bad header: ") + e.what());
    }
    Agent<T> agent(shape, config, 0);
    agent.steps_ = h.value("step", 0L);
    auto nets = agent.networks();
    if (nets.size() != file.nets.size()) {
        throw data::FormatError(data::FormatError::Kind::dim_mismatch, "dim mismatch: checkpoint network list differs");
    }
    for (std::size_t i = 0; i < nets.size(); ++i) {
        if (nets[i].first != file.nets[i].first || nets[i].second->dims() != file.nets[i].second.dims()) {
            throw data::FormatError(data::FormatError::Kind::dim_mismatch,
                                    "dim mismatch: network '" + file.nets[i].first + "' does not fit this agent");
        }
        *nets[i].second = file.nets[i].second.template cast<T>();
    }
    if (header_out) *header_out = h;
    return agent;
}

EvalReport evaluate_policy(const envs::Environment& env, const PolicyFn& policy, int episodes, std::uint64_t seed,
                           double gamma, const ValueFn& value) {
    if (episodes < 1) throw ConfigError("evaluation needs at least one episode");
    EvalReport report;
    for (int e = 0; e < episodes; ++e) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(e));
        envs::EnvState state = env.reset(rng);
        double total = 0.0, discounted = 0.0, discount = 1.0;
        for (;;) {
            const auto obs = env.observe(state);
            const auto action = policy(obs, rng);
            if (state.t == 0 && value) report.initial_estimates.push_back(value(obs, action, rng));
            const envs::StepResult r = env.step(state, action);
            total += r.reward;
            discounted += discount * r.reward;
            discount *= gamma;
            state = r.next;
            if (r.done) break;
        }
        report.returns.push_back(total);
        report.discounted_returns.push_back(discounted);
    }
    const double n = static_cast<double>(episodes);
    report.mean_return = std::accumulate(report.returns.begin(), report.returns.end(), 0.0) / n;
    double var = 0.0;
    for (double r : report.returns) var += (r - report.mean_return) * (r - report.mean_return);
    report.std_return = std::sqrt(var / n);
    if (!report.initial_estimates.empty()) {
        report.q_beta_mean = std::accumulate(report.initial_estimates.begin(), report.initial_estimates.end(), 0.0) / n;
    }
    report.mc_return = std::accumulate(report.discounted_returns.begin(), report.discounted_returns.end(), 0.0) / n;
    return report;
}

template <typename T>
EvalReport evaluate(const Agent<T>& agent, const envs::Environment& env, int episodes, std::uint64_t seed) {
    const auto& spec = env.spec();
    if (spec.obs_dim != agent.shape().obs_dim || spec.act_dim != agent.shape().act_dim) {
        throw DimensionError("environment dimensions differ from the agent");
    }
    auto to_vector = [](const std::vector<double>& v) {
        Vector<T> out(static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = static_cast<T>(v[i]);
        return out;
    };
    const PolicyFn policy = [&](const std::vector<double>& obs, Rng& rng) {
        const Vector<T> a = agent.select_action(to_vector(obs), rng);
        std::vector<double> out(static_cast<std::size_t>(a.size()));
        for (Eigen::Index i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(a(i));
        return out;
    };
    const ValueFn value = [&](const std::vector<double>& obs, const std::vector<double>& action, Rng& rng) {
        return agent.value_estimate(to_vector(obs), to_vector(action), rng);
    };
    return evaluate_policy(env, policy, episodes, seed, agent.config().gamma, value);
}

void write_networks(const std::filesystem::path& path, nlohmann::json header,
                    const std::vector<std::pair<std::string, const nn::DenseNet<float>*>>& nets) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& [name, net] : nets) {
        nlohmann::json acts = nlohmann::json::array();
        for (auto a : net->activations()) acts.push_back(nn::to_string(a));
        list.push_back({{"name", name}, {"dims", net->dims()}, {"activations", acts}});
    }
    header["networks"] = list;
    std::vector<std::uint8_t> bytes = data::frame_header(header);
    for (const auto& [name, net] : nets) {
        for (std::size_t k = 0; k < net->layer_count(); ++k) {
            const auto& l = net->layer(k);
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) data::put_f32(bytes, l.weight(r, c));
            }
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) data::put_f32(bytes, l.bias(r));
        }
    }
    data::write_file(path, bytes);
}

NetworkFile read_networks(const std::filesystem::path& path) {
    const auto bytes = data::read_file(path);
    const data::Framed f = data::parse_frame(bytes);
    NetworkFile out;
    out.header = f.header;
    std::size_t offset = f.payload_offset;
    try {
        for (const auto& entry : f.header.at("networks")) {
            const auto dims = entry.at("dims").get<std::vector<int>>();
            std::vector<nn::Activation> acts;
            for (const auto& a : entry.at("activations")) acts.push_back(nn::parse_activation(a.get<std::string>()));
            nn::DenseNet<float> net(dims, acts);
            const std::size_t need = net.parameter_count() * 4;
            if (bytes.size() < offset + need) {
                throw data::FormatError(data::FormatError::Kind::truncated,
                                        "truncated: expected at least " + std::to_string(offset + need) + " bytes, got " +
                                            std::to_string(bytes.size()));
            }
            for (std::size_t k = 0; k < net.layer_count(); ++k) {
                auto& l = net.layer(k);
                for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
                    for (Eigen::Index c = 0; c < l.weight.cols(); ++c, offset += 4) l.weight(r, c) = data::get_f32(&bytes[offset]);
                }
                for (Eigen::Index r = 0; r < l.bias.size(); ++r, offset += 4) l.bias(r) = data::get_f32(&bytes[offset]);
            }
            out.nets.emplace_back(entry.at("name").get<std::string>(), std::move(net));
        }
    } catch (const nlohmann::json::exception& e) {
        throw data::FormatError(data::FormatError::Kind::bad_header, std::string("bad header: ") + e.what());
    } catch (const DimensionError& e) {
        throw data::FormatError(data::FormatError::Kind::dim_mismatch, std::string("dim mismatch: ") + e.what());
    }
    if (offset != bytes.size()) {
        throw data::FormatError(data::FormatError::Kind::trailing_bytes, "trailing bytes: expected " + std::to_string(offset) +
                                                                             " bytes, got " + std::to_string(bytes.size()));
    }
    return out;
}

template class Agent<float>;
template class Agent<double>;
template EvalReport evaluate<float>(const Agent<float>&, const envs::Environment&, int, std::uint64_t);
template EvalReport evaluate<double>(const Agent<double>&, const envs::Environment&, int, std::uint64_t);

}  // namespace popo::agent
