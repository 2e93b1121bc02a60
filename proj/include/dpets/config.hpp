#ifndef DPETS_CONFIG_HPP
#define DPETS_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

#include "dpets/agent.hpp"
#include "dpets/model.hpp"

namespace dpets {

inline constexpr int config_version = 1;

// 1-D regression on a function with a hole in its training support.
struct RegressionConfig {
    std::string function = "sin";
    int samples = 200;
    double support_low = -3.0;
    double support_high = 3.0;
    double gap_low = 0.5;
    double gap_high = 1.5;
    int grid = 601;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
    // A 1-D curve needs far more passes over 200 points than a dynamics
    // model gets per episode; narrower layers keep it quick.
    EnsembleConfig model = [] {
        EnsembleConfig m;
        m.hidden = {64, 64, 64};
        m.epochs = 300;
        return m;
    }();

    void validate() const;
    // Strictly inside the gap.
    bool in_gap(double x) const { return x > gap_low && x < gap_high; }
};

struct ExperimentSpec {
    RunConfig run;
    int trials = 1;
    std::string out = "runs";
    std::optional<RegressionConfig> regression;

    void validate() const;
};

// Field-by-field conversion. Parsing is strict: "version" is required, unknown
// keys and wrongly typed values raise ConfigError naming the field.
nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const RegressionConfig& cfg);
nlohmann::json to_json(const ExperimentSpec& spec);
RunConfig run_config_from_json(const nlohmann::json& j);
ExperimentSpec experiment_from_json(const nlohmann::json& j);
ExperimentSpec load_experiment(const std::filesystem::path& path);

// Throws InputError when the file is missing, ConfigError when it is not JSON.
nlohmann::json read_json_file(const std::filesystem::path& path);

// Compact dump with sorted keys.
std::string canonical_json(const nlohmann::json& j);
std::uint64_t fnv1a64(std::string_view text);
std::string hash_hex(std::uint64_t h);
std::string config_hash(const RunConfig& cfg);

} // namespace dpets

#endif
