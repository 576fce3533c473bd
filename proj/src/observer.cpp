#include "khop/observer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "khop/errors.hpp"

namespace khop {

namespace {

const NeighborMessage& find_message(std::span<const NeighborMessage> msgs, AgentId sender, AgentId receiver) {
    for (const auto& m : msgs)
        if (m.sender == sender) return m;
    throw MissingNeighborData("agent " + std::to_string(receiver + 1) + " has no message from neighbor " +
                              std::to_string(sender + 1));
}

// Shared construction of xi (input = false) and rho (input = true).
Vector consensus_innovation(const ObserverState& state, std::span<const NeighborMessage> msgs,
                            const ObserverPlan& plan, bool input) {
    const std::size_t N = state.N;
    const std::size_t eta = plan.members.size();
    const Vector& own = input ? state.u_hat : state.x_hat;
    if (own.size() != eta * N) throw DimensionError("observer state does not match its plan");

    // Every 1-hop neighbor must have reported, even if it contributes nothing.
    for (AgentId j : plan.one_hop) (void)find_message(msgs, j, plan.agent);

    Vector out(eta * N, 0.0);
    for (std::size_t s = 0; s < eta; ++s) {
        const AgentId l = plan.members[s];
        const double* mine = own.data() + s * N;
        double* acc = out.data() + s * N;
        for (AgentId j : plan.estimate_sources[s]) {
            const auto est = find_message(msgs, j, plan.agent).estimate_of(l, N, input);
            if (!est)
                throw ProtocolError("neighbor " + std::to_string(j + 1) + " did not send its estimate of agent " +
                                    std::to_string(l + 1));
            for (std::size_t c = 0; c < N; ++c) acc[c] += (*est)[c] - mine[c];
        }
        for (AgentId j : plan.relay_sources[s]) {
            const auto truth = find_message(msgs, j, plan.agent).relayed_of(l, input);
            if (!truth || truth->size() != N)
                throw ProtocolError("neighbor " + std::to_string(j + 1) + " did not relay agent " +
                                    std::to_string(l + 1));
            for (std::size_t c = 0; c < N; ++c) acc[c] += (*truth)[c] - mine[c];
        }
    }
    return out;
}

}  // namespace

ObserverState::ObserverState(AgentId agent_, std::size_t N_, std::size_t eta)
    : agent(agent_), N(N_), x_hat(N_ * eta, 0.0), u_hat(N_ * eta, 0.0) {}

std::optional<std::span<const double>> NeighborMessage::estimate_of(AgentId l, std::size_t N, bool input) const {
    const auto it = std::lower_bound(est_members.begin(), est_members.end(), l);
    if (it == est_members.end() || *it != l) return std::nullopt;
    const std::size_t slot = static_cast<std::size_t>(it - est_members.begin());
    const Vector& src = input ? est_inputs : est_states;
    if ((slot + 1) * N > src.size()) return std::nullopt;
    return std::span<const double>(src.data() + slot * N, N);
}

std::optional<std::span<const double>> NeighborMessage::relayed_of(AgentId l, bool input) const {
    const auto& src = input ? relayed_inputs : relayed_states;
    const auto it = std::lower_bound(src.begin(), src.end(), l, [](const auto& e, AgentId v) { return e.first < v; });
    if (it == src.end() || it->first != l) return std::nullopt;
    return std::span<const double>(it->second);
}

ObserverPlan make_observer_plan(const Graph& g, const KHopNeighborhood& nb, std::span<const KHopNeighborhood> all) {
    ObserverPlan plan;
    plan.agent = nb.agent;
    plan.members = nb.members;
    plan.one_hop = g.neighbors(nb.agent);
    plan.estimate_sources.resize(nb.eta());
    plan.relay_sources.resize(nb.eta());
    for (std::size_t s = 0; s < nb.eta(); ++s) {
        const AgentId l = nb.members[s];
        for (AgentId j : plan.one_hop) {
            if (j >= all.size()) throw DimensionError("neighborhood list does not cover every agent");
            if (all[j].contains(l)) plan.estimate_sources[s].push_back(j);
            if (g.has_edge(j, l)) plan.relay_sources[s].push_back(j);
        }
    }
    return plan;
}

double sign_value(double v, std::optional<double> boundary_layer) {
    if (boundary_layer && *boundary_layer > 0.0) return std::clamp(v / *boundary_layer, -1.0, 1.0);
    return v >= 0.0 ? 1.0 : -1.0;
}

Vector compute_xi(const ObserverState& state, std::span<const NeighborMessage> msgs, const ObserverPlan& plan) {
    return consensus_innovation(state, msgs, plan, false);
}

Vector compute_rho(const ObserverState& state, std::span<const NeighborMessage> msgs, const ObserverPlan& plan) {
    return consensus_innovation(state, msgs, plan, true);
}

Vector state_observer_derivative(const ObserverState& state, std::span<const double> xi, const ObserverPlan& plan,
                                 const PlantModel& plant, const GainSet& gains, const ObserverOptions& opts) {
    const std::size_t N = state.N;
    const std::size_t eta = plan.members.size();
    if (xi.size() != eta * N || state.x_hat.size() != eta * N) throw DimensionError("state observer dimension mismatch");
    if (opts.input_estimate_disturbance && opts.input_estimate_disturbance->size() != N)
        throw DimensionError("input estimate disturbance must have N entries");

    Vector dx(eta * N, 0.0);
    for (std::size_t s = 0; s < eta; ++s) {
        const AgentId l = plan.members[s];
        const auto xh = state.x_block(s);
        const auto uh = state.u_block(s);
        for (double v : xh)
            if (!std::isfinite(v))
                throw NumericalError("agent " + std::to_string(plan.agent + 1) + ": non-finite estimate of agent " +
                                     std::to_string(l + 1));
        const Vector fx = plant.eval_f(xh);
        const Vector ax = plant.A * xh;
        const Vector gxi = gains.G * xi.subspan(s * N, N);
        for (std::size_t c = 0; c < N; ++c) {
            double d = fx[c] + ax[c] + gains.omega[l] * gxi[c] + gains.theta[l] * sign_value(gxi[c], opts.boundary_layer) +
                       uh[c];
            if (opts.input_estimate_disturbance) d += (*opts.input_estimate_disturbance)[c];
            dx[s * N + c] = d;
        }
    }
    return dx;
}

Vector input_observer_derivative(std::span<const double> rho, const ObserverPlan& plan, const GainSet& gains,
                                 std::size_t N, const ObserverOptions& opts) {
    const std::size_t eta = plan.members.size();
    if (rho.size() != eta * N) throw DimensionError("input observer dimension mismatch");
    Vector du(eta * N, 0.0);
    for (std::size_t s = 0; s < eta; ++s) {
        const double p = gains.pi[plan.members[s]];
        for (std::size_t c = 0; c < N; ++c) du[s * N + c] = p * sign_value(rho[s * N + c], opts.boundary_layer);
    }
    return du;
}

ObserverDerivative observer_derivative(const ObserverState& state, std::span<const NeighborMessage> msgs,
                                       const ObserverPlan& plan, const PlantModel& plant, const GainSet& gains,
                                       const ObserverOptions& opts) {
    ObserverDerivative d;
    d.xi = compute_xi(state, msgs, plan);
    d.rho = compute_rho(state, msgs, plan);
    d.dx_hat = state_observer_derivative(state, d.xi, plan, plant, gains, opts);
    d.du_hat = input_observer_derivative(d.rho, plan, gains, state.N, opts);
    return d;
}

ErrorNorms error_norms(const ObserverState& state, std::span<const double> x, std::span<const double> u,
                       const KHopNeighborhood& nb) {
    const std::size_t N = state.N;
    if (state.x_hat.size() != nb.eta() * N) throw DimensionError("observer state does not match neighborhood");
    double sx = 0.0;
    double su = 0.0;
    for (std::size_t s = 0; s < nb.eta(); ++s) {
        const AgentId l = nb.members[s];
        if ((l + 1) * N > x.size() || (l + 1) * N > u.size()) throw DimensionError("truth vector too short");
        for (std::size_t c = 0; c < N; ++c) {
            const double ex = x[l * N + c] - state.x_hat[s * N + c];
            const double eu = u[l * N + c] - state.u_hat[s * N + c];
            sx += ex * ex;
            su += eu * eu;
        }
    }
    return {std::sqrt(sx), std::sqrt(su)};
}

}  // namespace khop
