#include "dpets/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "dpets/errors.hpp"

namespace dpets {

using nlohmann::json;

namespace {

// Reads the fields of one JSON object and rejects whatever was not read.
class FieldReader {
public:
    FieldReader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix))
    {
        if (!j_.is_object())
            fail(prefix_.empty() ? "config" : prefix_.substr(0, prefix_.size() - 1), "expected an object");
    }

    bool has(const char* key) const { return j_.contains(key); }

    void integer(const char* key, int& out)
    {
        if (const json* v = take(key)) {
            if (!v->is_number_integer())
                fail(key, "expected an integer");
            const auto x = v->get<long long>();
            if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
                fail(key, "integer out of range");
            out = static_cast<int>(x);
        }
    }

    void unsigned64(const char* key, std::uint64_t& out)
    {
        if (const json* v = take(key)) {
            if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0))
                fail(key, "expected a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }

    void real(const char* key, double& out)
    {
        if (const json* v = take(key)) {
            if (!v->is_number())
                fail(key, "expected a number");
            out = v->get<double>();
        }
    }

    void boolean(const char* key, bool& out)
    {
        if (const json* v = take(key)) {
            if (!v->is_boolean())
                fail(key, "expected true or false");
            out = v->get<bool>();
        }
    }

    void string(const char* key, std::string& out)
    {
        if (const json* v = take(key)) {
            if (!v->is_string())
                fail(key, "expected a string");
            out = v->get<std::string>();
        }
    }

    void integers(const char* key, std::vector<int>& out)
    {
        if (const json* v = take(key)) {
            if (!v->is_array())
                fail(key, "expected an array of integers");
            std::vector<int> xs;
            for (const auto& e : *v) {
                if (!e.is_number_integer())
                    fail(key, "expected an array of integers");
                xs.push_back(e.get<int>());
            }
            out = std::move(xs);
        }
    }

    void interval(const char* key, double& low, double& high)
    {
        if (const json* v = take(key)) {
            if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number())
                fail(key, "expected [low, high]");
            low = (*v)[0].get<double>();
            high = (*v)[1].get<double>();
        }
    }

    const json* object(const char* key) { return take(key); }

    std::string field(const char* key) const { return prefix_ + key; }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key()))
                throw ConfigError("field '" + prefix_ + it.key() + "': unknown key");
    }

    [[noreturn]] void fail(const std::string& key, const std::string& why) const
    {
        throw ConfigError("field '" + (key.rfind(prefix_, 0) == 0 ? key : prefix_ + key) + "': " + why);
    }

private:
    const json* take(const char* key)
    {
        used_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    const json& j_;
    std::string prefix_;
    std::set<std::string> used_;
};

std::string dropout_name(DropoutMode m)
{
    switch (m) {
    case DropoutMode::restrictive: return "restrictive";
    case DropoutMode::mc: return "mc";
    case DropoutMode::none: return "none";
    }
    return "restrictive";
}

json model_to_json(const EnsembleConfig& m, bool with_dropout)
{
    json j = {
        {"hidden", m.hidden},
        {"ensemble_size", m.ensemble_size},
        {"mask_sets", m.mask_sets},
        {"q_subset", m.q_subset},
        {"keep_rate", m.keep_rate},
        {"epochs", m.epochs},
        {"batch_size", m.batch_size},
        {"learning_rate", m.optimizer.learning_rate},
        {"weight_decay", m.loss.weight_decay},
        {"logvar_bound_weight", m.loss.logvar_bound},
    };
    if (with_dropout) {
        j["dropout"] = dropout_name(m.dropout);
        j["bootstrap"] = m.bootstrap;
        j["fec"] = m.loss.fec;
    }
    return j;
}

void model_from_json(const json& j, const std::string& prefix, EnsembleConfig& m, bool with_dropout)
{
    FieldReader r(j, prefix);
    r.integers("hidden", m.hidden);
    r.integer("ensemble_size", m.ensemble_size);
    r.integer("mask_sets", m.mask_sets);
    r.integer("q_subset", m.q_subset);
    r.real("keep_rate", m.keep_rate);
    r.integer("epochs", m.epochs);
    r.integer("batch_size", m.batch_size);
    r.real("learning_rate", m.optimizer.learning_rate);
    r.real("weight_decay", m.loss.weight_decay);
    r.real("logvar_bound_weight", m.loss.logvar_bound);
    if (with_dropout) {
        std::string name = dropout_name(m.dropout);
        r.string("dropout", name);
        if (name == "restrictive")
            m.dropout = DropoutMode::restrictive;
        else if (name == "mc")
            m.dropout = DropoutMode::mc;
        else if (name == "none")
            m.dropout = DropoutMode::none;
        else
            r.fail("dropout", "expected restrictive, mc or none");
        r.boolean("bootstrap", m.bootstrap);
        r.boolean("fec", m.loss.fec);
    }
    r.finish();
}

void require_version(const json& j)
{
    if (!j.is_object())
        throw ConfigError("config: expected a JSON object");
    if (!j.contains("version"))
        throw ConfigError("field 'version': required");
    if (!j["version"].is_number_integer() || j["version"].get<long long>() != config_version)
        throw ConfigError("field 'version': expected " + std::to_string(config_version));
}

void run_fields(FieldReader& r, RunConfig& cfg)
{
    r.string("env", cfg.env);
    r.integer("episodes", cfg.episodes);
    r.integer("steps", cfg.steps);
    r.integer("warmup_episodes", cfg.warmup_episodes);
    r.integer("horizon", cfg.horizon);
    r.integer("particles", cfg.particles);
    r.real("noise_factor", cfg.noise_factor);
    r.unsigned64("seed", cfg.seed);
    std::string ablation = to_string(cfg.ablation);
    r.string("ablation", ablation);
    try {
        cfg.ablation = parse_ablation(ablation);
    } catch (const ConfigError& e) {
        r.fail("ablation", e.what());
    }
    if (const json* m = r.object("model"))
        model_from_json(*m, r.field("model") + ".", cfg.model, false);
    if (const json* c = r.object("cem")) {
        FieldReader cr(*c, r.field("cem") + ".");
        cr.integer("population", cfg.cem.population);
        cr.integer("elites", cfg.cem.elites);
        cr.integer("iterations", cfg.cem.iterations);
        cr.real("init_std_fraction", cfg.cem.init_std_fraction);
        cr.real("alpha", cfg.cem.alpha);
        cr.finish();
    }
}

RegressionConfig regression_from_json(const json& j, const std::string& prefix)
{
    RegressionConfig cfg;
    FieldReader r(j, prefix);
    r.string("function", cfg.function);
    r.integer("samples", cfg.samples);
    r.interval("support", cfg.support_low, cfg.support_high);
    r.interval("gap", cfg.gap_low, cfg.gap_high);
    r.integer("grid", cfg.grid);
    r.real("noise_std", cfg.noise_std);
    r.unsigned64("seed", cfg.seed);
    if (const json* m = r.object("model"))
        model_from_json(*m, prefix + "model.", cfg.model, true);
    r.finish();
    return cfg;
}

} // namespace

void RegressionConfig::validate() const
{
    if (function != "sin")
        throw ConfigError("regression.function: only 'sin' is available");
    if (samples < 2)
        throw ConfigError("regression.samples: must be >= 2");
    if (!(support_low < support_high))
        throw ConfigError("regression.support: low must be below high");
    if (!(support_low <= gap_low && gap_low < gap_high && gap_high <= support_high))
        throw ConfigError("regression.gap: must be an interval inside the support");
    if (grid < 2)
        throw ConfigError("regression.grid: must be >= 2");
    if (!(noise_std >= 0.0))
        throw ConfigError("regression.noise_std: must be >= 0");
    try {
        model.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("regression.model: ") + e.what());
    }
}

void ExperimentSpec::validate() const
{
    if (trials < 1)
        throw ConfigError("trials: must be >= 1, got " + std::to_string(trials));
    if (out.empty())
        throw ConfigError("out: must not be empty");
    run.validate();
    if (regression)
        regression->validate();
}

json to_json(const RunConfig& cfg)
{
    return {
        {"version", config_version},
        {"env", cfg.env},
        {"episodes", cfg.episodes},
        {"steps", cfg.steps},
        {"warmup_episodes", cfg.warmup_episodes},
        {"horizon", cfg.horizon},
        {"particles", cfg.particles},
        {"noise_factor", cfg.noise_factor},
        {"seed", cfg.seed},
        {"ablation", to_string(cfg.ablation)},
        {"model", model_to_json(cfg.model, false)},
        {"cem",
         {{"population", cfg.cem.population},
          {"elites", cfg.cem.elites},
          {"iterations", cfg.cem.iterations},
          {"init_std_fraction", cfg.cem.init_std_fraction},
          {"alpha", cfg.cem.alpha}}},
    };
}

json to_json(const RegressionConfig& cfg)
{
    return {
        {"function", cfg.function},
        {"samples", cfg.samples},
        {"support", {cfg.support_low, cfg.support_high}},
        {"gap", {cfg.gap_low, cfg.gap_high}},
        {"grid", cfg.grid},
        {"noise_std", cfg.noise_std},
        {"seed", cfg.seed},
        {"model", model_to_json(cfg.model, true)},
    };
}

json to_json(const ExperimentSpec& spec)
{
    json j = to_json(spec.run);
    j["trials"] = spec.trials;
    j["out"] = spec.out;
    if (spec.regression)
        j["regression"] = to_json(*spec.regression);
    return j;
}

RunConfig run_config_from_json(const json& j)
{
    require_version(j);
    RunConfig cfg;
    FieldReader r(j, "");
    int version = 0;
    r.integer("version", version);
    run_fields(r, cfg);
    r.finish();
    return cfg;
}

ExperimentSpec experiment_from_json(const json& j)
{
    require_version(j);
    ExperimentSpec spec;
    FieldReader r(j, "");
    int version = 0;
    r.integer("version", version);
    run_fields(r, spec.run);
    r.integer("trials", spec.trials);
    r.string("out", spec.out);
    if (const json* reg = r.object("regression"))
        spec.regression = regression_from_json(*reg, "regression.");
    r.finish();
    return spec;
}

json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + " is not valid JSON: " + e.what());
    }
}

ExperimentSpec load_experiment(const std::filesystem::path& path)
{
    auto spec = experiment_from_json(read_json_file(path));
    spec.validate();
    return spec;
}

std::string canonical_json(const json& j)
{
    return j.dump();
}

std::uint64_t fnv1a64(std::string_view text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const RunConfig& cfg)
{
    return hash_hex(fnv1a64(canonical_json(to_json(cfg))));
}

} // namespace dpets
