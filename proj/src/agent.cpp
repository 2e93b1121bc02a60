#include "dpets/agent.hpp"

#include <chrono>
#include <fstream>

#include "dpets/checkpoint.hpp"
#include "dpets/config.hpp"
#include "dpets/errors.hpp"

namespace dpets {

namespace fs = std::filesystem;

std::string to_string(Ablation a)
{
    switch (a) {
    case Ablation::full: return "full";
    case Ablation::mc: return "mc";
    case Ablation::be: return "be";
    case Ablation::no_fec: return "no_fec";
    case Ablation::no_du: return "no_du";
    }
    return "full";
}

Ablation parse_ablation(const std::string& name)
{
    for (auto a : {Ablation::full, Ablation::mc, Ablation::be, Ablation::no_fec, Ablation::no_du})
        if (to_string(a) == name)
            return a;
    throw ConfigError("unknown ablation mode '" + name + "' (expected full, mc, be, no_fec or no_du)");
}

void RunConfig::validate() const
{
    auto positive = [](int v, const char* field) {
        if (v < 1)
            throw ConfigError(std::string(field) + ": must be >= 1, got " + std::to_string(v));
    };
    make_environment(env);
    if (episodes < 0)
        throw ConfigError("episodes: must be >= 0, got " + std::to_string(episodes));
    positive(steps, "steps");
    positive(warmup_episodes, "warmup_episodes");
    positive(horizon, "horizon");
    positive(particles, "particles");
    if (!(noise_factor >= 0.0) || !std::isfinite(noise_factor))
        throw ConfigError("noise_factor: must be finite and >= 0");
    try {
        ensemble_config(*this).validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    CemConfig c = cem;
    const auto e = make_environment(env);
    c.action_low = e->action_low();
    c.action_high = e->action_high();
    try {
        c.validate();
    } catch (const ConfigError& err) {
        throw ConfigError(std::string("cem: ") + err.what());
    }
}

EnsembleConfig ensemble_config(const RunConfig& cfg)
{
    EnsembleConfig m = cfg.model;
    switch (cfg.ablation) {
    case Ablation::full:
    case Ablation::no_du:
        m.dropout = DropoutMode::restrictive;
        break;
    case Ablation::no_fec:
        m.dropout = DropoutMode::restrictive;
        m.loss.fec = false;
        break;
    case Ablation::mc:
        m.dropout = DropoutMode::mc;
        break;
    case Ablation::be:
        m.dropout = DropoutMode::none;
        m.keep_rate = 1.0;
        m.bootstrap = true;
        break;
    }
    return m;
}

MpcOptions mpc_options(const RunConfig& cfg, const Environment& env)
{
    MpcOptions o;
    o.horizon = cfg.horizon;
    o.particles = cfg.particles;
    o.mode = cfg.ablation == Ablation::no_du ? PropagationMode::sampled : PropagationMode::mean_only;
    o.cem = cfg.cem;
    o.cem.action_low = env.action_low();
    o.cem.action_high = env.action_high();
    return o;
}

RewardFn reward_function(const Environment& env)
{
    return [&env](const Eigen::MatrixXd& mean, const Eigen::MatrixXd& var, const Eigen::MatrixXd& a) {
        return env.reward(mean, var, a);
    };
}

namespace {

// Two-step transitions t = 1..T-1 from observations o_0..o_T and actions a_0..a_{T-1}.
void append_transitions(Dataset& data, const std::vector<Eigen::VectorXd>& obs,
                        const std::vector<Eigen::VectorXd>& actions, long episode)
{
    for (std::size_t t = 1; t < actions.size(); ++t) {
        TwoStepTransition tr;
        tr.s_prev = obs[t - 1];
        tr.a_prev = actions[t - 1];
        tr.s_mid = obs[t];
        tr.a_mid = actions[t];
        tr.s_next = obs[t + 1];
        tr.first_episode = episode;
        tr.second_episode = episode;
        data.append(std::move(tr));
    }
}

} // namespace

void warmup(Environment& env, Dataset& data, int episodes, int steps, double noise_factor, std::uint64_t seed)
{
    if (episodes < 1)
        throw ConfigError("warmup needs at least one episode");
    const NoiseConfig noise{noise_factor};
    const auto low = env.action_low();
    const auto high = env.action_high();
    for (int e = 0; e < episodes; ++e) {
        auto reset_rng = make_rng(seed, static_cast<std::uint64_t>(e), Stream::warmup, 0);
        auto action_rng = make_rng(seed, static_cast<std::uint64_t>(e), Stream::warmup, 1);
        auto noise_rng = make_rng(seed, static_cast<std::uint64_t>(e), Stream::warmup, 2);
        env.reset(reset_rng);
        std::vector<Eigen::VectorXd> obs{observe(env.state(), env.observation_scale(), noise, noise_rng)};
        std::vector<Eigen::VectorXd> actions;
        for (int t = 0; t < steps; ++t) {
            Eigen::VectorXd a(low.size());
            for (Eigen::Index j = 0; j < a.size(); ++j)
                a[j] = std::uniform_real_distribution<double>(low[j], high[j])(action_rng);
            env.step(a);
            actions.push_back(a);
            obs.push_back(observe(env.state(), env.observation_scale(), noise, noise_rng));
        }
        append_transitions(data, obs, actions, e - episodes);
    }
}

EpisodeLog run_episode(Environment& env, const DynamicsModel& model, const MpcOptions& opts, int steps,
                       double noise_factor, std::uint64_t seed, long episode, Dataset* data, PathProbe* probe)
{
    const auto started = std::chrono::steady_clock::now();
    const auto key = static_cast<std::uint64_t>(episode);
    auto reset_rng = make_rng(seed, key, Stream::env);
    auto noise_rng = make_rng(seed, key, Stream::noise);
    auto planner_rng = make_rng(seed, key, Stream::planner);
    const NoiseConfig noise{noise_factor};
    const auto reward = reward_function(env);

    EpisodeLog log;
    log.episode = episode;
    env.reset(reset_rng);
    std::vector<Eigen::VectorXd> obs{observe(env.state(), env.observation_scale(), noise, noise_rng)};
    std::vector<Eigen::VectorXd> actions;
    PlanState plan;
    try {
        for (int t = 0; t < steps; ++t) {
            auto decision = mpc_act(model, obs.back(), reward, opts, plan, planner_rng, probe);
            if (decision.fallback)
                ++log.planner_fallbacks;
            plan = std::move(decision.next);
            StepRecord rec;
            rec.state = env.state();
            rec.observation = obs.back();
            const auto result = env.step(decision.action);
            rec.action = env.clip_actions(decision.action.transpose()).row(0).transpose();
            rec.reward = result.reward;
            rec.next_state = result.next_state;
            log.total_return += rec.reward;
            log.steps.push_back(std::move(rec));
            actions.push_back(log.steps.back().action);
            obs.push_back(observe(env.state(), env.observation_scale(), noise, noise_rng));
        }
    } catch (const std::exception& e) {
        log.valid = false;
        log.error = e.what();
    }
    if (data)
        append_transitions(*data, obs, actions, episode);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return log;
}

namespace {

fs::path model_path(const fs::path& dir, long k)
{
    return dir / ("model_ep" + std::to_string(k) + ".json");
}

fs::path log_path(const fs::path& dir, long k)
{
    return dir / "logs" / ("episode_" + std::to_string(k) + ".json");
}

void write_atomic(const fs::path& path, const std::string& text)
{
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out)
            throw InputError("cannot write " + tmp.string());
        out << text;
    }
    fs::rename(tmp, path);
}

} // namespace

LearnResult learn(const RunConfig& cfg, const fs::path& dir, const LearnHooks& hooks)
{
    cfg.validate();
    auto env = make_environment(cfg.env);
    const int sd = env->state_dim();
    const int ad = env->action_dim();
    auto init_rng = make_rng(cfg.seed, 0, Stream::init);
    Ensemble model(ensemble_config(cfg), sd, ad, StateCodec(sd, env->angle_dims()), init_rng);
    model.set_probe(hooks.probe);
    const auto opts = mpc_options(cfg, *env);

    LearnResult result;
    Dataset data(sd, ad);
    long start = 1;
    const bool persist = !dir.empty();
    const auto config_text = canonical_json(to_json(cfg));

    if (persist && fs::exists(dir / "config.json")) {
        const auto stored = read_json_file(dir / "config.json");
        if (canonical_json(stored) != config_text)
            throw ConfigError("checkpoint in " + dir.string() + " was written by a different config (hash "
                              + hash_hex(fnv1a64(canonical_json(stored))) + ", expected "
                              + hash_hex(fnv1a64(config_text)) + ")");
        long last = 0;
        while (fs::exists(log_path(dir, last + 1)) && fs::exists(model_path(dir, last + 1)))
            ++last;
        for (long k = 1; k <= last; ++k)
            result.episodes.push_back(episode_from_json(read_json_file(log_path(dir, k))));
        if (last > 0) {
            const auto log_json = read_json_file(log_path(dir, last));
            data = Dataset::read_csv(dir / "dataset.csv", sd, ad);
            data.truncate(log_json.at("dataset_size").get<std::size_t>());
            data.write_csv(dir / "dataset.csv");
            load_ensemble_state(model, read_json_file(model_path(dir, last)));
            start = last + 1;
        }
    }
    if (start == 1) {
        warmup(*env, data, cfg.warmup_episodes, cfg.steps, cfg.noise_factor, cfg.seed);
        if (persist) {
            fs::create_directories(dir / "logs");
            write_atomic(dir / "config.json", config_text + "\n");
            data.write_csv(dir / "dataset.csv");
        }
    }

    for (long k = start; k <= cfg.episodes; ++k) {
        auto family_rng = make_rng(cfg.seed, static_cast<std::uint64_t>(k), Stream::family);
        model.resample_family(family_rng, k);
        const auto before = data.size();
        auto log = run_episode(*env, model, opts, cfg.steps, cfg.noise_factor, cfg.seed, k, &data, hooks.probe);
        auto train_rng = make_rng(cfg.seed, static_cast<std::uint64_t>(k), Stream::train);
        const auto t0 = std::chrono::steady_clock::now();
        log.loss = model.train(data, train_rng);
        log.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (persist) {
            data.append_csv(dir / "dataset.csv", before);
            write_atomic(model_path(dir, k), ensemble_to_json(model).dump() + "\n");
            auto j = episode_to_json(log);
            j["dataset_size"] = data.size();
            write_atomic(log_path(dir, k), j.dump() + "\n");
        }
        result.episodes.push_back(std::move(log));
        if (k < cfg.episodes && hooks.stop && hooks.stop(result.episodes)) {
            result.stopped_early = true;
            break;
        }
    }
    result.dataset_size = data.size();
    return result;
}

double oracle_return(const RunConfig& cfg, int episodes)
{
    auto env = make_environment(cfg.env);
    TrueDynamicsModel model(*env);
    auto opts = mpc_options(cfg, *env);
    opts.particles = 1;
    opts.mode = PropagationMode::mean_only;
    double sum = 0.0;
    for (int e = 1; e <= episodes; ++e) {
        const auto log = run_episode(*env, model, opts, cfg.steps, 0.0, cfg.seed, e);
        if (!log.valid)
            throw PlanningError("oracle episode failed: " + log.error);
        sum += log.total_return;
    }
    return sum / episodes;
}

} // namespace dpets
