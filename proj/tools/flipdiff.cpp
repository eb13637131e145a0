// SPDX-License-Identifier: Apache-2.0
//
// flipdiff <simulate|spectral|compare|oracle|validate> [-c config.ini] [--set section.key=value ...]

#include <CLI11.hpp>

#include <iostream>

#include <flipdiff/cli.hpp>

int main(int argc, char** argv)
{
    CLI::App app{"Wave-packet diffusion in a flip-process potential: Monte Carlo and augmented-space spectral solver"};
    app.require_subcommand(1);
    app.set_version_flag("--version", flipdiff::kVersion);

    std::string config_path, output;
    std::vector<std::string> overrides;
    flipdiff::CommandOptions opt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "config file (key = value within [sections])")->check(CLI::ExistingFile);
        sub->add_option("--set", overrides, "override a config key, e.g. --set ensemble.n_traj=1000");
        sub->add_option("-o,--output", output, "output directory (overrides run.output)");
    };
    add_common(app.add_subcommand("simulate", "Monte Carlo ensemble: mean field, CF and M2 tables, D fits"));
    add_common(app.add_subcommand("spectral", "E(k), D, D0, gap sweep on the truncated augmented space"));
    auto* cmp = app.add_subcommand("compare", "D from both Monte Carlo fitters against the spectral D");
    add_common(cmp);
    cmp->add_option("--simulate-json", opt.simulate_json, "diffusion estimate from a previous simulate run");
    cmp->add_option("--spectral-json", opt.spectral_json, "spectral report from a previous spectral run");
    add_common(app.add_subcommand("oracle", "Monte Carlo vs dense Pillet formula; two-sided vs fibered identity"));
    add_common(app.add_subcommand("validate", "resolve and check a config without running anything"));

    try {
        app.parse(argc, argv);
    } catch (CLI::ParseError const& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : flipdiff::kExitValidation;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (!output.empty()) overrides.push_back("run.output=" + output);

    flipdiff::RunConfig cfg;
    try {
        cfg = flipdiff::load_config(config_path, overrides);
    } catch (flipdiff::ConfigError const& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return flipdiff::kExitValidation;
    }
    return flipdiff::run_command(cmd, cfg, opt, std::cout, std::cerr);
}
