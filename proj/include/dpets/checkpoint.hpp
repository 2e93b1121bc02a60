#ifndef DPETS_CHECKPOINT_HPP
#define DPETS_CHECKPOINT_HPP

#include <filesystem>

#include "json.hpp"

#include "dpets/agent.hpp"
#include "dpets/model.hpp"
#include "dpets/network.hpp"

namespace dpets {

// Bumped whenever the layout below changes.
inline constexpr int checkpoint_format_version = 1;

// {"format_version", "layers": [{"rows", "cols", "activation", "weight"
// (column-major), "bias"}], "max_logvar", "min_logvar"}. Doubles are written
// in shortest round-trip form, so loading reproduces every bit.
nlohmann::json network_to_json(const NetworkParams& params);
// Throws ConfigError on a version or shape mismatch.
NetworkParams network_from_json(const nlohmann::json& j);

void save_network(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_network(const std::filesystem::path& path);

// Member parameters, optimizer moments and the input normalizer.
nlohmann::json ensemble_to_json(const Ensemble& model);
// Restores a checkpoint into a model of the same architecture.
void load_ensemble_state(Ensemble& model, const nlohmann::json& j);

nlohmann::json episode_to_json(const EpisodeLog& log);
EpisodeLog episode_from_json(const nlohmann::json& j);

} // namespace dpets

#endif
