#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "bsdelab/martingale.hpp"

namespace bsdelab {

/// Parsed and validated harness configuration. `params` carries the
/// experiment-specific block; the manifest echoes the resolved fields.
struct HarnessConfig {
    std::string experiment;
    std::uint64_t seed = 0;
    std::string outputDir = "out";
    Model model = StandardBm{1};
    double horizon = 1.0;
    int steps = 64;
    int paths = 10000;
    nlohmann::json params = nlohmann::json::object();
};

struct ExperimentInfo {
    std::string name;
    std::string description;
    std::string anchor;  // property family the experiment exercises
};

/// Fixed registry in stable order.
const std::vector<ExperimentInfo>& experiment_registry();

/// Parses a config file; validation failures throw ConfigError naming the
/// offending field path (e.g. "grid.steps").
HarnessConfig parse_config(const std::string& path);

/// Runs the named experiment: CSV artifacts and summary.json first, then the
/// manifest with per-file checksums. An error thrown mid-experiment becomes a
/// failure record in the summary. Returns overall pass.
bool run_experiment(const HarnessConfig& cfg);

}  // namespace bsdelab
