#pragma once

// Everything a command-line run needs, with desk and full profile defaults.

#include <cstdint>
#include <string>

#include "json.hpp"
#include "naturalfinger/fingerprint.hpp"
#include "naturalfinger/gan.hpp"
#include "naturalfinger/stealth.hpp"
#include "naturalfinger/zoo.hpp"

namespace nf {

nlohmann::json gan_config_to_json(const GanTrainConfig& c);
GanTrainConfig gan_config_from_json(const nlohmann::json& j, GanTrainConfig base = {});

struct RunPaths {
    std::string zoo = "zoo";
    std::string gan = "gan/reference";
    std::string queries = "queries";
    std::string out = "out";
};

struct RunConfig {
    std::string profile = "desk";
    std::uint64_t seed = 1;
    RunPaths paths;
    ZooConfig zoo;
    GanTrainConfig gan;
    FingerprintConfig fingerprint;
    StealthConfig stealth;
    double grid_step = 1e-3;
    double threshold = 0.5;

    static RunConfig for_profile(const std::string& profile);
    /// Profile defaults (from j["profile"], else `profile`) overridden by j.
    static RunConfig from_json(const nlohmann::json& j, const std::string& profile = "desk");
    nlohmann::json to_json() const;
    /// Canonical hash; key order in the source JSON does not matter.
    std::string hash() const;
    /// Propagates the global seed into the module configs.
    void apply_seed(std::uint64_t s);
    void validate() const;
};

}  // namespace nf
