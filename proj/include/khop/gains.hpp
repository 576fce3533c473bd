#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "khop/dense.hpp"
#include "khop/graph.hpp"

namespace khop {

/// Per-agent drift  x' = f(x) + A x + u.
struct PlantModel {
    using NonlinearMap = std::function<Vector(std::span<const double>)>;

    std::size_t N = 1;
    Matrix A;            // N x N
    NonlinearMap f;      // empty means f = 0
    double l_f = 0.0;    // Lipschitz constant of f

    static PlantModel linear(Matrix a);
    Vector eval_f(std::span<const double> x) const;
    void validate() const;
};

/// Known bounds on the agents' inputs; entries indexed by agent.
struct BoundSet {
    std::optional<Vector> d_u;        // ||u_i|| <= d_u[i]
    std::optional<Vector> d_udot;     // ||u_i'|| <= d_udot[i]
    std::optional<Vector> d_tilde_u;  // ||u~_i|| <= d_tilde_u[i] (stacked over estimators)

    void validate(std::size_t n) const;
};

/// Conservative input-estimation error bound when only d_u is known:
/// sqrt(eta) * (d_u + largest initial input-estimate magnitude).
double default_d_tilde_u(std::size_t eta, double d_u, double max_initial_uhat);

/// Observer parameters. omega/theta/pi are indexed by the *estimated* agent:
/// every estimator of agent l uses omega[l], theta[l], pi[l].
struct GainSet {
    Matrix G;
    Vector omega;
    Vector theta;
    Vector pi;
    // Slack of each tuning inequality at the chosen values (NaN when not evaluated).
    Vector omega_margin;
    Vector theta_margin;
    Vector pi_margin;

    std::optional<double> scalar_g() const;
};

inline constexpr double kDefaultSlack = 1e-3;
inline constexpr double kMinimumAutoGain = 1.0;

/// G = g I with g = max(1, lambda_max((A+A^T)/2) + 1) unless g_scale is given;
/// the result always satisfies G^T A + A^T G - 2 G^T G < 0.
Matrix design_G(const PlantModel& plant, std::optional<double> g_scale = std::nullopt);

/// Verifies a user-supplied G (symmetric positive definite + the G condition).
void check_G(const PlantModel& plant, const Matrix& G);

/// lambda_max of the symmetric part of G^T A + A^T G - 2 G^T G.
double g_condition_value(const Matrix& A, const Matrix& G);

double omega_lower_bound(const ObserverCoupling& c, const PlantModel& plant, const Matrix& G);
double tune_omega(const ObserverCoupling& c, const PlantModel& plant, const Matrix& G, double slack = 0.0);
double theta_lower_bound(const ObserverCoupling& c, const Matrix& G, double d_tilde_u);
double tune_theta(const ObserverCoupling& c, const Matrix& G, double d_tilde_u, double slack = kDefaultSlack);
double pi_lower_bound(const ObserverCoupling& c, std::size_t eta, double d_udot);
double tune_pi(const ObserverCoupling& c, std::size_t eta, double d_udot, double slack = kDefaultSlack);

struct Lemma3Check {
    bool holds = false;
    double lambda_max = 0.0;
};

/// Assembles (M⊗G)(I⊗A - omega (M⊗G)) + l_f ||M⊗G|| I and tests negative definiteness.
Lemma3Check verify_lemma3_inequality(const ObserverCoupling& c, const PlantModel& plant, const Matrix& G,
                                     double omega);

struct AgentCertificate {
    AgentId agent = 0;
    std::size_t eta = 0;
    std::optional<double> phi;
    std::optional<double> psi;
    std::optional<double> T_x;  // present only when phi > 0
    std::optional<double> T_u;  // present only when psi > 0

    bool state_certified() const { return T_x.has_value(); }
    bool input_certified() const { return T_u.has_value(); }
};

struct ConvergenceCertificate {
    std::vector<AgentCertificate> agents;  // one per agent; eta == 0 entries carry no bounds
    std::optional<double> T_x;             // max over agents when every observed agent is certified
    std::optional<double> T_u;
    std::optional<double> T_xu;
    bool state_feasible = true;
    bool input_feasible = true;
};

/// phi_i, psi_i, and the finite-time bounds for one estimated agent.
/// Missing bound data leaves the matching fields empty.
AgentCertificate certify_agent(AgentId agent, const ObserverCoupling& c, const Matrix& G, double theta, double pi,
                               std::optional<double> d_tilde_u, std::optional<double> d_udot, double x_err0,
                               double u_err0);

struct Topology;

/// Evaluates every agent; never throws for infeasible gains.
ConvergenceCertificate evaluate_certificate(const Topology& topo, const GainSet& gains, const BoundSet& bounds,
                                            std::span<const double> x_err0, std::span<const double> u_err0);

/// As evaluate_certificate, but throws CertificateInfeasible naming the first
/// agent whose phi or psi is not positive.
ConvergenceCertificate certificate(const Topology& topo, const GainSet& gains, const BoundSet& bounds,
                                   std::span<const double> x_err0, std::span<const double> u_err0);

/// Everything derived from (graph, k) that the observers and verifiers share.
struct Topology {
    Graph graph;
    std::size_t k;
    std::vector<KHopNeighborhood> neighborhoods;
    std::vector<std::optional<ObserverCoupling>> couplings;  // empty for eta == 0

    Topology(Graph g, std::size_t k);
    std::size_t size() const noexcept { return graph.size(); }
    std::size_t eta(AgentId i) const { return neighborhoods[i].eta(); }
};

struct TuningOptions {
    std::optional<double> g_scale;
    std::optional<Matrix> G;  // full matrix override
    double omega_slack = 0.0;
    double theta_slack = kDefaultSlack;
    double pi_slack = kDefaultSlack;
};

/// Tunes omega/theta/pi for every agent that has estimators. Agents without
/// the bound needed for theta (or pi) get NaN, to be filled by overrides.
GainSet tune_gains(const Topology& topo, const PlantModel& plant, const BoundSet& bounds,
                   const TuningOptions& opts = {});

/// Recomputes the margin vectors for (possibly overridden) gains.
void refresh_margins(GainSet& gains, const Topology& topo, const PlantModel& plant, const BoundSet& bounds);

}  // namespace khop
