// Command-line front end: runs a named experiment from a JSON config and
// writes its artifacts, or lists the registered experiments.
#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"

#include "bsdelab/bounds.hpp"
#include "bsdelab/errors.hpp"
#include "bsdelab/experiments.hpp"
#include "bsdelab/parallel.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;

void print_registry(std::FILE* to) {
    for (const auto& e : bsdelab::experiment_registry())
        std::fprintf(to, "  %-22s %s (%s)\n", e.name.c_str(), e.description.c_str(),
                     e.anchor.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bsdelab: discrete BSDE experiments on simulated martingales"};
    app.require_subcommand(1);

    std::string configPath;
    std::string outputDir;
    std::uint64_t seed = 0;
    int threads = 0;
    bool seedSet = false;

    CLI::App* run = app.add_subcommand("run", "run an experiment from a JSON config");
    run->add_option("config", configPath, "path to the config file")->required();
    run->add_option("--output-dir", outputDir, "override the config's output directory");
    run->add_option("--seed", seed, "override the config's seed")->each([&](const std::string&) {
        seedSet = true;
    });
    run->add_option("--threads", threads, "worker thread count (0 = library default)");

    CLI::App* list = app.add_subcommand("list", "list the registered experiments");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitPass : kExitUsage;
    }

    if (list->parsed()) {
        std::printf("%zu experiments:\n", bsdelab::experiment_registry().size());
        print_registry(stdout);
        return kExitPass;
    }

    try {
        bsdelab::HarnessConfig cfg = bsdelab::parse_config(configPath);
        if (!outputDir.empty()) cfg.outputDir = outputDir;
        if (seedSet) cfg.seed = seed;
        bsdelab::par::set_threads(threads);
        const bool pass = bsdelab::run_experiment(cfg);
        std::printf("%s: %s\n", cfg.experiment.c_str(), pass ? "PASS" : "FAIL");
        return pass ? kExitPass : kExitCheckFailed;
    } catch (const bsdelab::UnsupportedError& e) {
        std::fprintf(stderr, "error: %s\nknown experiments:\n", e.what());
        print_registry(stderr);
        return kExitUsage;
    } catch (const bsdelab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitCheckFailed;
    }
}
