#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "khop/gains.hpp"
#include "khop/graph.hpp"
#include "khop/sim.hpp"
#include "khop/verify.hpp"

namespace khop {

inline constexpr int kScenarioSchemaVersion = 1;

/// Per-agent nonlinearity chosen from a fixed registry.
struct NonlinearitySpec {
    std::string kind = "zero";  // zero | saturation | table
    double scale = 1.0;         // saturation: f(x)_c = scale * clamp(x_c, -limit, limit)
    double limit = 1.0;
    Vector table_x;             // table: piecewise-linear f(x)_c through (table_x, table_y),
    Vector table_y;             //        held constant outside the table
};

/// Builds f and its Lipschitz constant. Throws ConfigError for bad parameters.
PlantModel::NonlinearMap make_nonlinearity(const NonlinearitySpec& spec);
double nonlinearity_lipschitz(const NonlinearitySpec& spec);

struct GainOverrides {
    std::optional<double> g;
    std::optional<Matrix> G;
    std::optional<Vector> omega;
    std::optional<Vector> theta;
    std::optional<Vector> pi;
    double theta_scale = 1.0;
    double pi_scale = 1.0;
    double slack = kDefaultSlack;
};

struct InitialEstimate {
    std::string mode = "truth";  // truth | zero | truth_plus_uniform | explicit
    double spread = 0.0;
    std::vector<Vector> values;  // explicit: per agent, N * eta_i
};

struct SimParams {
    double dt = 1e-3;
    double T_end = 1.0;
    Vector x0;  // n * N
    InitialEstimate xhat0;
    std::optional<double> uhat0_value;   // constant fill; empty means zero
    std::vector<Vector> uhat0_explicit;  // per agent
    std::optional<double> conv_eps;
    std::optional<std::pair<double, double>> state_box;
    double band_factor = 5.0;
    std::optional<double> boundary_layer;
    std::optional<Vector> input_estimate_disturbance;
    double udot_window = 0.05;
    std::uint64_t seed = 1;
    double consensus_tol = 1e-2;
};

struct OutputParams {
    std::string csv = "telemetry.csv";
    std::string report = "report.json";
    std::size_t decimate = 1;
};

struct Scenario {
    std::string name;
    Graph graph;
    std::optional<Graph> target_graph;
    std::size_t k = 2;
    std::string controller = "zero";  // zero | khop_consensus
    PlantModel plant;
    NonlinearitySpec f;
    BoundSet bounds;
    bool d_u_from_box = false;
    std::string bounds_note;
    GainOverrides gains;
    SimParams sim;
    OutputParams outputs;
    nlohmann::json source;  // as parsed, for hashing and echoing

    explicit Scenario(Graph g) : graph(std::move(g)) {}

    /// FNV-1a of the canonical JSON dump, as 16 hex digits.
    std::string hash() const;
};

Scenario parse_scenario(const nlohmann::json& doc);
Scenario load_scenario(const std::string& path);

/// The four-agent path-graph reproduction scenario (single integrators in R^2,
/// k = 3, G = 20 I, consensus over the path plus edge {1, 4}).
nlohmann::json paper_scenario_json();
Scenario paper_scenario();

/// Everything derived from a scenario that a run needs.
struct PreparedRun {
    Topology topology;
    BoundSet bounds;  // after defaults (d_u from the box, d_tilde_u from d_u)
    GainSet gains;    // tuned, then overridden and scaled
    SimConfig config;
};

/// Tunes gains, applies overrides and builds the initial conditions.
PreparedRun prepare_run(const Scenario& sc);

/// Initial estimates according to the scenario's mode (seeded, portable).
std::vector<Vector> initial_state_estimates(const Scenario& sc, const Topology& topo);

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
double unit_uniform(std::uint64_t bits);

VerifyContext verify_context(const Scenario& sc, const PreparedRun& run);

}  // namespace khop
