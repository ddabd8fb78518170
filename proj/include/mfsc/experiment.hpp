#pragma once

#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

namespace mfsc {

struct ExperimentResult {
    int exit_code = 0;            // 0 ok, 2 when a configured check failed
    std::string report_json;      // serialized report (also written to out dir)
    std::vector<std::string> outputs;
};

// Dispatch one experiment described by a JSON config into out_dir, writing
// manifest.json, CSV artifacts and report.json. Throws ConfigParse /
// UnknownExperiment on malformed input.
ExperimentResult run_experiment(const nlohmann::json& config, const std::string& out_dir);

// CLI entry: parse a config file, run it, return the process exit code
// (0 success, 2 check failure, 1 error).
int run_config_file(const std::string& config_path, const std::string& out_dir,
                    long long seed_override = -1, int threads_override = -1,
                    bool unsafe_barrier = false);

}  // namespace mfsc
