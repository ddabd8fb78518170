#include <CLI11.hpp>
#include <cstdio>
#include <string>

#include "mfsc/experiment.hpp"
#include "mfsc/registry.hpp"

int main(int argc, char** argv) {
    CLI::App app{"mfsc - memory mean-field singular control toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    long long seed = -1;
    int threads = -1;
    bool unsafe_barrier = false;

    auto* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config_path, "JSON experiment config")->required();
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--seed", seed, "override the config seed");
    run->add_option("--threads", threads, "override the thread count");
    run->add_flag("--unsafe-barrier", unsafe_barrier,
                  "allow non-monotone barriers (leaves the solver's assumptions)");

    std::string filter;
    auto* list = app.add_subcommand("list", "list registered coefficient sets and problems");
    list->add_option("filter", filter, "substring filter");

    CLI11_PARSE(app, argc, argv);

    if (app.got_subcommand("run"))
        return mfsc::run_config_file(config_path, out_dir, seed, threads, unsafe_barrier);

    for (const auto& e : mfsc::registry::catalog()) {
        const std::string line = e.kind + "/" + e.name;
        if (!filter.empty() && line.find(filter) == std::string::npos &&
            e.summary.find(filter) == std::string::npos)
            continue;
        std::printf("%-14s %-26s %s\n", e.kind.c_str(), e.name.c_str(), e.summary.c_str());
    }
    return 0;
}
