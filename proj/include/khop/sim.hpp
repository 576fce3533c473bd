#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "khop/dense.hpp"
#include "khop/gains.hpp"
#include "khop/graph.hpp"
#include "khop/observer.hpp"

namespace khop {

/// What an agent's controller may look at: its own state, the messages of its
/// 1-hop neighbors and its own estimates.
struct ControlInput {
    AgentId agent;
    std::size_t N;
    std::span<const double> own_state;
    std::span<const NeighborMessage> msgs;
    const ObserverState& estimates;
    const KHopNeighborhood& neighborhood;
};

struct Controller {
    enum class Kind { zero, khop_consensus, generic_feedback };
    using Law = std::function<Vector(const ControlInput&)>;

    Kind kind = Kind::zero;
    std::optional<Graph> target_graph;  // khop_consensus only
    Law law;                            // generic_feedback only

    static Controller zero() { return {}; }
    static Controller consensus(Graph target);
    static Controller generic(Law law);
};

/// u_i = sum over target neighbors j of (x_j - x_i), with x_j taken from the
/// message of j when j is a communication neighbor and from x_hat^i_j otherwise.
Vector consensus_control(const ControlInput& in, const Graph& target);

/// Throws ConfigError when some target edge (i, j) is neither a communication
/// edge nor covered by i's k-hop members.
void check_controller_invariant(const Graph& comm, std::span<const KHopNeighborhood> nbs, const Graph& target);

/// Distance from the stacked state (n agents of dimension N) to the consensus set.
double consensus_distance(std::span<const double> x, std::size_t N);

/// Smallest Laplacian eigenvalue above 1e-8.
double algebraic_connectivity(const Graph& g);

struct SimConfig {
    double dt = 1e-3;
    double T_end = 1.0;
    Graph graph;
    std::size_t k = 2;
    PlantModel plant;
    GainSet gains;
    Controller controller;
    Vector x0;                          // n * N
    std::vector<Vector> xhat0;          // per agent, N * eta_i; empty means zeros
    std::vector<Vector> uhat0;          // per agent, N * eta_i; empty means zeros
    std::optional<std::pair<double, double>> state_box;  // per component
    std::optional<double> conv_eps;     // default max(1e-3 * e(0), 1e-6) per series
    double band_factor = 5.0;
    ObserverOptions observer;
    std::size_t decimate = 1;
    double udot_window = 0.05;

    SimConfig(Graph g, std::size_t hops) : graph(std::move(g)), k(hops) {}
    void validate() const;
    std::size_t steps() const;
};

/// Sliding bands band_factor * dt * sqrt(sum of squared gains) over each error stack.
struct SlidingBands {
    Vector x;          // estimator-indexed
    Vector u;
    Vector x_target;   // target-indexed
    Vector u_target;
};

inline constexpr double kBandFloor = 1e-6;

SlidingBands sliding_bands(const Topology& topo, const GainSet& gains, double dt, double band_factor);

struct TelemetryRow {
    double t = 0.0;
    Vector x;            // n * N
    Vector u;            // n * N
    Vector errx;         // ||x^i - x_hat^i||, estimator-indexed
    Vector erru;
    Vector errx_target;  // errors of all estimates of agent l
    Vector erru_target;
    double consdist = 0.0;
    double vnorm = 0.0;  // ||v||, v_i = sum over target-only neighbors of (x_j - x_hat^i_j)
    double vsup = 0.0;   // running sup of vnorm over every step, sampled or not
};

/// First time the series drops below `threshold` after which it never exceeds
/// `band`; nullopt when that never happens.
std::optional<double> detect_convergence(std::span<const double> t, std::span<const double> e, double threshold,
                                         double band);

struct Telemetry {
    std::size_t n = 0;
    std::size_t N = 0;
    std::vector<TelemetryRow> rows;
    bool completed = false;

    // Full-resolution observations.
    std::vector<std::optional<double>> Tx_obs;  // estimator-indexed
    std::vector<std::optional<double>> Tu_obs;
    std::vector<std::optional<double>> Tx_obs_target;
    std::vector<std::optional<double>> Tu_obs_target;
    SlidingBands bands;
    double X_obs = 0.0;  // max over estimators and time of ||x~^i||

    // Bound audit.
    Vector max_u;             // max_t ||u_i||
    Vector max_u_err_target;  // max_t ||u~_i||
    Vector max_udot;          // windowed finite difference
};

struct World {
    double t = 0.0;
    std::size_t step_index = 0;
    Vector x;
    Vector u;  // input applied in the last completed step
    std::vector<ObserverState> observers;
};

using RowSink = std::function<void(const TelemetryRow&)>;

class Simulator {
public:
    explicit Simulator(SimConfig cfg);

    const SimConfig& config() const noexcept { return cfg_; }
    const Topology& topology() const noexcept { return topo_; }
    const World& world() const noexcept { return world_; }
    const std::vector<ObserverPlan>& plans() const noexcept { return plans_; }

    /// Messages agents would broadcast for the current world (states, relays,
    /// estimates; inputs filled from `u` when given).
    std::vector<NeighborMessage> broadcast(std::span<const double> u = {}) const;
    /// Inbox of agent i: the messages of its 1-hop neighbors only.
    std::vector<NeighborMessage> inbox(AgentId i, std::span<const NeighborMessage> all) const;
    /// Control inputs for the current world.
    Vector control(std::span<const NeighborMessage> msgs) const;

    /// Telemetry row for the current world (computes the current inputs).
    TelemetryRow snapshot() const;

    /// One synchronous round: messages, control, derivatives, Euler update.
    void step();

    /// Integrates to T_end. Rows go to `sink` as they are produced; with
    /// keep_rows they are also stored in the returned telemetry.
    Telemetry run(const RowSink& sink = {}, bool keep_rows = true);

private:
    struct RoundResult {
        Vector u;
        std::vector<NeighborMessage> msgs;
    };
    RoundResult round() const;
    TelemetryRow observe(const Vector& u) const;
    void advance(const RoundResult& r);
    void check_world() const;

    SimConfig cfg_;
    Topology topo_;
    std::vector<ObserverPlan> plans_;
    World world_;
};

// CSV telemetry: t, x_i_c, u_i_c, errx_i, erru_i, consdist, errxt_i, errut_i, vnorm, vsup.
std::string csv_header(std::size_t n, std::size_t N);
void write_csv_row(std::ostream& out, const TelemetryRow& row);

struct TelemetryTable {
    std::size_t n = 0;
    std::size_t N = 0;
    std::vector<TelemetryRow> rows;
};

/// Parses a telemetry CSV; throws ConfigError on a header or row mismatch.
TelemetryTable read_csv(std::istream& in, std::size_t n, std::size_t N);

}  // namespace khop
