#include "dpets/checkpoint.hpp"

#include <fstream>

#include "dpets/config.hpp"
#include "dpets/errors.hpp"

namespace dpets {

using nlohmann::json;

namespace {

json vec(const Eigen::VectorXd& v)
{
    return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vec(const json& j, const char* what)
{
    if (!j.is_array())
        throw ConfigError(std::string("checkpoint field ") + what + " is not an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number())
            throw ConfigError(std::string("checkpoint field ") + what + " holds a non-number");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

void check_version(const json& j)
{
    if (!j.contains("format_version") || j["format_version"] != checkpoint_format_version)
        throw ConfigError("unsupported checkpoint format (expected format_version "
                          + std::to_string(checkpoint_format_version) + ")");
}

} // namespace

json network_to_json(const NetworkParams& params)
{
    json layers = json::array();
    for (const auto& l : params.layers) {
        layers.push_back({
            {"rows", l.weight.rows()},
            {"cols", l.weight.cols()},
            {"activation", l.activation == Activation::tanh ? "tanh" : "identity"},
            {"weight", std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size())},
            {"bias", vec(l.bias)},
        });
    }
    return {
        {"format_version", checkpoint_format_version},
        {"layers", layers},
        {"max_logvar", vec(params.max_logvar)},
        {"min_logvar", vec(params.min_logvar)},
    };
}

NetworkParams network_from_json(const json& j)
{
    check_version(j);
    NetworkParams p;
    try {
        for (const auto& lj : j.at("layers")) {
            Layer l;
            const auto rows = lj.at("rows").get<Eigen::Index>();
            const auto cols = lj.at("cols").get<Eigen::Index>();
            const auto flat = vec(lj.at("weight"), "weight");
            if (flat.size() != rows * cols)
                throw ConfigError("checkpoint layer weight does not match its declared shape");
            l.weight = Eigen::Map<const Eigen::MatrixXd>(flat.data(), rows, cols);
            l.bias = vec(lj.at("bias"), "bias");
            const auto act = lj.at("activation").get<std::string>();
            if (act != "tanh" && act != "identity")
                throw ConfigError("checkpoint layer has unknown activation " + act);
            l.activation = act == "tanh" ? Activation::tanh : Activation::identity;
            p.layers.push_back(std::move(l));
        }
        p.max_logvar = vec(j.at("max_logvar"), "max_logvar");
        p.min_logvar = vec(j.at("min_logvar"), "min_logvar");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed network checkpoint: ") + e.what());
    }
    p.validate();
    return p;
}

void save_network(const NetworkParams& params, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw InputError("cannot write " + path.string());
    out << network_to_json(params).dump() << '\n';
}

NetworkParams load_network(const std::filesystem::path& path)
{
    return network_from_json(read_json_file(path));
}

json ensemble_to_json(const Ensemble& model)
{
    json members = json::array();
    for (const auto& m : model.members()) {
        members.push_back({
            {"network", network_to_json(m.params)},
            {"optimizer",
             {{"steps", m.optimizer.steps},
              {"first_moment", vec(m.optimizer.first_moment)},
              {"second_moment", vec(m.optimizer.second_moment)}}},
        });
    }
    return {
        {"format_version", checkpoint_format_version},
        {"state_dim", model.state_dim()},
        {"action_dim", model.action_dim()},
        {"members", members},
        {"normalizer", {{"mean", vec(model.pipeline().normalizer.mean)}, {"std", vec(model.pipeline().normalizer.std)}}},
    };
}

void load_ensemble_state(Ensemble& model, const json& j)
{
    check_version(j);
    try {
        if (j.at("state_dim") != model.state_dim() || j.at("action_dim") != model.action_dim())
            throw ConfigError("checkpoint dimensions do not match the model");
        const auto& members = j.at("members");
        if (members.size() != model.members().size())
            throw ConfigError("checkpoint holds " + std::to_string(members.size()) + " members, model has "
                              + std::to_string(model.members().size()));
        std::vector<Member> loaded;
        for (std::size_t b = 0; b < members.size(); ++b) {
            Member m;
            m.params = network_from_json(members[b].at("network"));
            const auto& ref = model.members()[b].params;
            if (mask_widths(m.params) != mask_widths(ref) || m.params.output_dim() != ref.output_dim())
                throw ConfigError("checkpoint member " + std::to_string(b) + " has a different architecture");
            const auto& opt = members[b].at("optimizer");
            m.optimizer.steps = opt.at("steps").get<long>();
            m.optimizer.first_moment = vec(opt.at("first_moment"), "first_moment");
            m.optimizer.second_moment = vec(opt.at("second_moment"), "second_moment");
            loaded.push_back(std::move(m));
        }
        Normalizer n{vec(j.at("normalizer").at("mean"), "normalizer.mean"),
                     vec(j.at("normalizer").at("std"), "normalizer.std")};
        if (n.mean.size() != model.pipeline().input_dim() || n.std.size() != n.mean.size())
            throw ConfigError("checkpoint normalizer has the wrong width");
        model.members() = std::move(loaded);
        model.pipeline().normalizer = std::move(n);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed ensemble checkpoint: ") + e.what());
    }
}

json episode_to_json(const EpisodeLog& log)
{
    json steps = json::array();
    for (const auto& s : log.steps) {
        steps.push_back({
            {"state", vec(s.state)},
            {"observation", vec(s.observation)},
            {"action", vec(s.action)},
            {"reward", s.reward},
            {"next_state", vec(s.next_state)},
        });
    }
    return {
        {"episode", log.episode},
        {"return", log.total_return},
        {"steps", steps},
        {"loss", log.loss},
        {"planner_fallbacks", log.planner_fallbacks},
        {"valid", log.valid},
        {"error", log.error},
        {"seconds", log.seconds},
    };
}

EpisodeLog episode_from_json(const json& j)
{
    EpisodeLog log;
    try {
        log.episode = j.at("episode").get<long>();
        log.total_return = j.at("return").get<double>();
        for (const auto& s : j.at("steps")) {
            StepRecord r;
            r.state = vec(s.at("state"), "state");
            r.observation = vec(s.at("observation"), "observation");
            r.action = vec(s.at("action"), "action");
            r.reward = s.at("reward").get<double>();
            r.next_state = vec(s.at("next_state"), "next_state");
            log.steps.push_back(std::move(r));
        }
        log.loss = j.at("loss").get<LossTrace>();
        log.planner_fallbacks = j.at("planner_fallbacks").get<long>();
        log.valid = j.at("valid").get<bool>();
        log.error = j.at("error").get<std::string>();
        log.seconds = j.at("seconds").get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed episode log: ") + e.what());
    }
    return log;
}

} // namespace dpets
