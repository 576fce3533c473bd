// khopctl: tune, simulate, verify and sweep k-hop observer scenarios.
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "khop/commands.hpp"
#include "khop/errors.hpp"

namespace {

void add_common(CLI::App* cmd, khop::CommandOptions& opts, std::optional<std::string>* bl) {
    cmd->add_option("--out", opts.out_dir, "Output directory")->capture_default_str();
    cmd->add_option("--seed", opts.seed, "Override the scenario seed");
    cmd->add_option("--decimate", opts.decimate, "Write every n-th step to the CSV")->check(CLI::PositiveNumber);
    cmd->add_option("--slack", opts.slack, "Slack added to the theta and pi lower bounds")->check(CLI::PositiveNumber);
    cmd->add_option("--boundary-layer", *bl, "Saturation width replacing sign(), or 'off'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"k-hop distributed state and input observers"};
    app.require_subcommand(1);

    khop::CommandOptions opts;
    std::optional<std::string> boundary_layer;
    std::string scenario_path;
    std::string csv_path;
    khop::SweepGrid grid;

    auto* tune = app.add_subcommand("tune", "Tune gains and write a gain report");
    auto* simulate = app.add_subcommand("simulate", "Run a scenario, write CSV telemetry and a report");
    auto* verify = app.add_subcommand("verify", "Re-check a telemetry CSV against its scenario");
    auto* sweep = app.add_subcommand("sweep", "Run a parameter grid in parallel");
    auto* reproduce = app.add_subcommand("reproduce-paper", "Run the built-in four-agent reproduction scenario");

    for (auto* cmd : {tune, simulate, verify, sweep}) {
        cmd->add_option("--scenario", scenario_path, "Scenario JSON")->required()->check(CLI::ExistingFile);
        add_common(cmd, opts, &boundary_layer);
    }
    add_common(reproduce, opts, &boundary_layer);
    verify->add_option("--csv", csv_path, "Telemetry CSV from simulate")->required()->check(CLI::ExistingFile);
    sweep->add_option("--dt", grid.dt, "Step sizes")->delimiter(',');
    sweep->add_option("--theta-scale", grid.theta_scale, "Theta multipliers")->delimiter(',');
    sweep->add_option("--pi-scale", grid.pi_scale, "Pi multipliers")->delimiter(',');
    sweep->add_option("--k", grid.k, "Hop horizons")->delimiter(',');
    sweep->add_option("--threads", grid.threads, "Worker threads (0 = all cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? khop::exit_code::ok : khop::exit_code::usage;
    }
    opts.boundary_layer = boundary_layer;

    if (*reproduce) return khop::cmd_reproduce_paper(opts, std::cout, std::cerr);

    nlohmann::json doc;
    try {
        doc = khop::read_scenario_document(scenario_path);
    } catch (const khop::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return khop::exit_code::usage;
    }
    if (*tune) return khop::cmd_tune(doc, opts, std::cout, std::cerr);
    if (*simulate) return khop::cmd_simulate(doc, opts, std::cout, std::cerr);
    if (*verify) return khop::cmd_verify(doc, csv_path, opts, std::cout, std::cerr);
    return khop::cmd_sweep(doc, grid, opts, std::cout, std::cerr);
}
