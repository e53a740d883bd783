// Command-line front end: one subcommand per experiment, configured by a JSON file.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "synthaug/experiments.hpp"

int main(int argc, char** argv) {
    using namespace synthaug;
    CLI::App app{"Synthetic augmentation experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("build ") + SYNTHAUG_BUILD_ID);

    std::string config_path, out_dir = ".";
    std::uint64_t seed = 0;
    int jobs = 1;
    for (const auto& name : subcommands()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed, "master seed; overrides the config");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--jobs", jobs, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    json cfg = json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) {
            std::cerr << "config error: cannot open " << config_path << '\n';
            return kExitConfig;
        }
        try {
            cfg = json::parse(in);
        } catch (const json::exception& e) {
            std::cerr << "config error: " << e.what() << '\n';
            return kExitConfig;
        }
    }
    RunOptions o;
    o.seed = seed;
    o.seed_given = app.get_subcommands().front()->count("--seed") > 0;
    o.jobs = jobs;
    o.out_dir = out_dir;
    return run_command(app.get_subcommands().front()->get_name(), cfg, o, std::cerr);
}
