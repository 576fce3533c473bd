#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "khop/dense.hpp"
#include "khop/gains.hpp"
#include "khop/graph.hpp"

namespace khop {

/// Agent i's stacked estimates of its k-hop members, blocks ordered as
/// KHopNeighborhood::members.
struct ObserverState {
    AgentId agent = 0;
    std::size_t N = 1;
    Vector x_hat;
    Vector u_hat;

    ObserverState() = default;
    ObserverState(AgentId agent, std::size_t N, std::size_t eta);

    std::size_t eta() const noexcept { return N == 0 ? 0 : x_hat.size() / N; }
    std::span<const double> x_block(std::size_t slot) const { return {x_hat.data() + slot * N, N}; }
    std::span<const double> u_block(std::size_t slot) const { return {u_hat.data() + slot * N, N}; }
};

/// Everything agent j broadcasts to its 1-hop neighbors in one round.
struct NeighborMessage {
    AgentId sender = 0;
    Vector state;
    Vector input;
    std::vector<std::pair<AgentId, Vector>> relayed_states;  // (l, x_l) for l in N(j), ascending l
    std::vector<std::pair<AgentId, Vector>> relayed_inputs;  // (l, u_l) for l in N(j), ascending l
    std::vector<AgentId> est_members;                        // sender's k-hop members, ascending
    Vector est_states;                                       // sender's x_hat, blocks per est_members
    Vector est_inputs;                                       // sender's u_hat

    /// Sender's estimate block of agent l, or nullopt when l is not a member.
    std::optional<std::span<const double>> estimate_of(AgentId l, std::size_t N, bool input) const;
    std::optional<std::span<const double>> relayed_of(AgentId l, bool input) const;
};

/// For every member l of agent i: the neighbors j that contribute an estimate
/// of l (l in Nk(j)) and the neighbors that relay the true value of l (l in N(j)).
struct ObserverPlan {
    AgentId agent = 0;
    std::vector<AgentId> members;
    std::vector<AgentId> one_hop;
    std::vector<std::vector<AgentId>> estimate_sources;
    std::vector<std::vector<AgentId>> relay_sources;
};

ObserverPlan make_observer_plan(const Graph& g, const KHopNeighborhood& nb, std::span<const KHopNeighborhood> all);

/// Componentwise sign with sign(0) = +1, or a saturation of width
/// `boundary_layer` when one is given.
double sign_value(double v, std::optional<double> boundary_layer = std::nullopt);

struct ObserverOptions {
    std::optional<double> boundary_layer;
    /// Test hook: constant offset added to u_hat where the state observer
    /// consumes it (models a persistent input-estimation error).
    std::optional<Vector> input_estimate_disturbance;
};

struct ObserverDerivative {
    Vector dx_hat;
    Vector du_hat;
    Vector xi;
    Vector rho;
};

/// Consensus innovation on states:
///   xi_l = sum_{j: l in Nk(j)} (x^j_l - x^i_l) + sum_{j: l in N(j)} (x_l - x^i_l).
Vector compute_xi(const ObserverState& state, std::span<const NeighborMessage> msgs, const ObserverPlan& plan);

/// Same construction on inputs.
Vector compute_rho(const ObserverState& state, std::span<const NeighborMessage> msgs, const ObserverPlan& plan);

Vector state_observer_derivative(const ObserverState& state, std::span<const double> xi, const ObserverPlan& plan,
                                 const PlantModel& plant, const GainSet& gains, const ObserverOptions& opts = {});

Vector input_observer_derivative(std::span<const double> rho, const ObserverPlan& plan, const GainSet& gains,
                                 std::size_t N, const ObserverOptions& opts = {});

/// Full right-hand side for one agent from its state and received messages.
ObserverDerivative observer_derivative(const ObserverState& state, std::span<const NeighborMessage> msgs,
                                       const ObserverPlan& plan, const PlantModel& plant, const GainSet& gains,
                                       const ObserverOptions& opts = {});

struct ErrorNorms {
    double state = 0.0;
    double input = 0.0;
};

/// ||x^i - x_hat^i||, ||u^i - u_hat^i|| against the stacked global truth.
ErrorNorms error_norms(const ObserverState& state, std::span<const double> x, std::span<const double> u,
                       const KHopNeighborhood& nb);

}  // namespace khop
