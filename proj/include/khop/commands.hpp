#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "khop/scenario.hpp"

namespace khop {

/// Process exit codes of the command-line tool.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;          // bad arguments, parse or IO errors
inline constexpr int infeasible = 2;     // certificate infeasible or a criterion not certified
inline constexpr int divergence = 3;     // non-finite state or state-box exit
inline constexpr int verify_failed = 4;  // a checked criterion failed
}  // namespace exit_code

struct CommandOptions {
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> decimate;
    std::optional<double> slack;
    std::optional<std::string> boundary_layer;  // a width, or "off"
};

/// Applies command-line overrides to a scenario document (before parsing, so
/// the scenario hash reflects them).
void apply_overrides(nlohmann::json& doc, const CommandOptions& opts);

/// Gain report: per-agent spectra, gains, margins and certificates, plus
/// global fields. `certified` is false when some phi or psi is not positive.
struct GainReport {
    nlohmann::json doc;
    bool certified = true;
    std::vector<std::string> violations;
};

GainReport gain_report(const Scenario& sc, const PreparedRun& run);

int cmd_tune(const nlohmann::json& scenario_doc, const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_simulate(const nlohmann::json& scenario_doc, const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_verify(const nlohmann::json& scenario_doc, const std::string& csv_path, const CommandOptions& opts,
               std::ostream& out, std::ostream& err);

struct SweepGrid {
    std::vector<double> dt;
    std::vector<double> theta_scale;
    std::vector<double> pi_scale;
    std::vector<std::size_t> k;
    unsigned threads = 0;  // 0 means hardware concurrency
};

struct SweepCell {
    double dt = 0.0;
    double theta_scale = 1.0;
    double pi_scale = 1.0;
    std::size_t k = 0;
    bool ran = false;
    std::string error;  // set when the cell could not run to completion
    std::optional<double> Tx_obs_max;
    std::optional<double> Tu_obs_max;
    double X_obs = 0.0;
    double final_consdist = 0.0;
    double final_errx_max = 0.0;
    std::string verdict;
};

/// Runs every grid cell (in parallel); failures are recorded per cell.
std::vector<SweepCell> run_sweep(const nlohmann::json& scenario_doc, const SweepGrid& grid);
int cmd_sweep(const nlohmann::json& scenario_doc, const SweepGrid& grid, const CommandOptions& opts,
              std::ostream& out, std::ostream& err);

/// Writes the reproduction scenario, then tunes, simulates and verifies it.
int cmd_reproduce_paper(const CommandOptions& opts, std::ostream& out, std::ostream& err);

/// Reads a scenario file into a JSON document; throws ConfigError.
nlohmann::json read_scenario_document(const std::string& path);

}  // namespace khop
