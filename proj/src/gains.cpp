#include "khop/gains.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "khop/errors.hpp"

namespace khop {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct GSpectrum {
    double min;
    double max;
    double norm;
};

GSpectrum g_spectrum(const Matrix& G) {
    const auto eig = sym_eig(SymMatrix(G.symmetric_part()));
    return {eig.values.front(), eig.values.back(), spectral_norm(G)};
}

void require_pd(const ObserverCoupling& c) {
    if (!(c.lambda_min > tol::kPositiveDefinite))
        throw CouplingNotPD("coupling matrix is not positive definite (lambda_min = " + std::to_string(c.lambda_min) +
                            ")");
}

}  // namespace

PlantModel PlantModel::linear(Matrix a) {
    PlantModel p;
    p.N = a.rows();
    p.A = std::move(a);
    return p;
}

Vector PlantModel::eval_f(std::span<const double> x) const {
    if (!f) return Vector(x.size(), 0.0);
    Vector y = f(x);
    if (y.size() != x.size()) throw DimensionError("plant nonlinearity returned wrong dimension");
    return y;
}

void PlantModel::validate() const {
    if (N == 0) throw DimensionError("plant state dimension must be positive");
    if (A.rows() != N || A.cols() != N) throw DimensionError("plant matrix A must be N x N");
    if (!(l_f >= 0.0) || !std::isfinite(l_f)) throw ConfigError("Lipschitz constant l_f must be finite and >= 0");
}

void BoundSet::validate(std::size_t n) const {
    if (!d_u && !d_udot) throw ConfigError("bounds: at least one of d_u or d_udot is required");
    auto check = [n](const std::optional<Vector>& v, const char* name) {
        if (!v) return;
        if (v->size() != n) throw ConfigError(std::string("bounds: ") + name + " needs one entry per agent");
        for (double x : *v)
            if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError(std::string("bounds: ") + name + " must be >= 0");
    };
    check(d_u, "d_u");
    check(d_udot, "d_udot");
    check(d_tilde_u, "d_tilde_u");
}

double default_d_tilde_u(std::size_t eta, double d_u, double max_initial_uhat) {
    return std::sqrt(static_cast<double>(eta)) * (d_u + max_initial_uhat);
}

std::optional<double> GainSet::scalar_g() const {
    if (G.empty() || !G.square()) return std::nullopt;
    const double g = G(0, 0);
    for (std::size_t r = 0; r < G.rows(); ++r)
        for (std::size_t c = 0; c < G.cols(); ++c)
            if (G(r, c) != (r == c ? g : 0.0)) return std::nullopt;
    return g;
}

double g_condition_value(const Matrix& A, const Matrix& G) {
    const Matrix Gt = G.transposed();
    const Matrix cond = Gt * A + A.transposed() * G - 2.0 * (Gt * G);
    return lambda_max(SymMatrix(cond.symmetric_part()));
}

Matrix design_G(const PlantModel& plant, std::optional<double> g_scale) {
    plant.validate();
    const double drift = lambda_max(SymMatrix(plant.A.symmetric_part()));
    double g = 0.0;
    if (g_scale) {
        g = *g_scale;
        if (!(g > 0.0)) throw GainConditionViolated("g must be positive");
    } else {
        g = std::max(kMinimumAutoGain, drift + 1.0);
    }
    Matrix G = Matrix::identity(plant.N) * g;
    const double value = g_condition_value(plant.A, G);
    if (!(value < -tol::kNegativeDefinite))
        throw GainConditionViolated("G = " + std::to_string(g) +
                                    " I violates G^T A + A^T G - 2 G^T G < 0 (lambda_max = " + std::to_string(value) +
                                    ")");
    return G;
}

void check_G(const PlantModel& plant, const Matrix& G) {
    plant.validate();
    if (G.rows() != plant.N || G.cols() != plant.N) throw DimensionError("G must be N x N");
    const SymMatrix sym(G);  // throws if not symmetric
    if (!(lambda_min(sym) > 0.0)) throw GainConditionViolated("G must be positive definite");
    const double value = g_condition_value(plant.A, G);
    if (!(value < -tol::kNegativeDefinite))
        throw GainConditionViolated("G violates G^T A + A^T G - 2 G^T G < 0 (lambda_max = " + std::to_string(value) +
                                    ")");
}

double omega_lower_bound(const ObserverCoupling& c, const PlantModel& plant, const Matrix& G) {
    require_pd(c);
    const double lmin = c.lambda_min;
    const double mg_norm = c.lambda_max * spectral_norm(G);  // ||M⊗G|| = ||M|| ||G||
    const double gtg_min = lambda_min(SymMatrix((G.transposed() * G).symmetric_part()));
    return (1.0 / lmin) * (1.0 + plant.l_f * mg_norm / (lmin * gtg_min));
}

double tune_omega(const ObserverCoupling& c, const PlantModel& plant, const Matrix& G, double slack) {
    return omega_lower_bound(c, plant, G) + slack;
}

double theta_lower_bound(const ObserverCoupling& c, const Matrix& G, double d_tilde_u) {
    if (!(d_tilde_u >= 0.0)) throw ConfigError("d_tilde_u must be >= 0");
    require_pd(c);
    const auto gs = g_spectrum(G);
    return (c.lambda_max * gs.max) / (c.lambda_min * gs.min) * d_tilde_u;
}

double tune_theta(const ObserverCoupling& c, const Matrix& G, double d_tilde_u, double slack) {
    if (!(slack > 0.0)) throw ConfigError("theta slack must be > 0 (strict inequality)");
    return theta_lower_bound(c, G, d_tilde_u) + slack;
}

double pi_lower_bound(const ObserverCoupling& c, std::size_t eta, double d_udot) {
    if (!(d_udot >= 0.0)) throw ConfigError("d_udot must be >= 0");
    require_pd(c);
    return c.lambda_max / c.lambda_min * std::sqrt(static_cast<double>(eta)) * d_udot;
}

double tune_pi(const ObserverCoupling& c, std::size_t eta, double d_udot, double slack) {
    if (!(slack > 0.0)) throw ConfigError("pi slack must be > 0 (strict inequality)");
    return pi_lower_bound(c, eta, d_udot) + slack;
}

Lemma3Check verify_lemma3_inequality(const ObserverCoupling& c, const PlantModel& plant, const Matrix& G,
                                     double omega) {
    const std::size_t eta = c.M.rows();
    const Matrix MG = kron(c.M, G);
    const Matrix Ai = kron(Matrix::identity(eta), plant.A);
    Matrix q = MG * (Ai - omega * MG);
    q += Matrix::identity(eta * plant.N) * (plant.l_f * spectral_norm(MG));
    const double lmax = lambda_max(SymMatrix(q.symmetric_part()));
    return {lmax < 0.0, lmax};
}

AgentCertificate certify_agent(AgentId agent, const ObserverCoupling& c, const Matrix& G, double theta, double pi,
                               std::optional<double> d_tilde_u, std::optional<double> d_udot, double x_err0,
                               double u_err0) {
    AgentCertificate cert;
    cert.agent = agent;
    cert.eta = c.M.rows();
    const auto gs = g_spectrum(G);
    const double mg_norm = c.lambda_max * gs.norm;
    if (d_tilde_u && std::isfinite(theta)) {
        cert.phi = theta * c.lambda_min * gs.min - mg_norm * *d_tilde_u;
        if (*cert.phi > 0.0) cert.T_x = c.lambda_max * gs.max / *cert.phi * x_err0;
    }
    if (d_udot && std::isfinite(pi)) {
        // ||M⊗I_N|| = lambda_max(M) for symmetric PSD M.
        cert.psi = pi * c.lambda_min - c.lambda_max * std::sqrt(static_cast<double>(cert.eta)) * *d_udot;
        if (*cert.psi > 0.0) cert.T_u = c.lambda_max / *cert.psi * u_err0;
    }
    return cert;
}

ConvergenceCertificate evaluate_certificate(const Topology& topo, const GainSet& gains, const BoundSet& bounds,
                                            std::span<const double> x_err0, std::span<const double> u_err0) {
    const std::size_t n = topo.size();
    if (x_err0.size() != n || u_err0.size() != n) throw DimensionError("certificate: one initial error norm per agent");
    ConvergenceCertificate out;
    double tx = 0.0;
    double tu = 0.0;
    for (AgentId i = 0; i < n; ++i) {
        if (!topo.couplings[i]) {
            out.agents.push_back(AgentCertificate{i, 0, {}, {}, 0.0, 0.0});
            continue;
        }
        const auto dtu = bounds.d_tilde_u ? std::optional<double>((*bounds.d_tilde_u)[i]) : std::nullopt;
        const auto dud = bounds.d_udot ? std::optional<double>((*bounds.d_udot)[i]) : std::nullopt;
        auto cert = certify_agent(i, *topo.couplings[i], gains.G, gains.theta[i], gains.pi[i], dtu, dud, x_err0[i],
                                  u_err0[i]);
        out.state_feasible &= cert.state_certified();
        out.input_feasible &= cert.input_certified();
        if (cert.T_x) tx = std::max(tx, *cert.T_x);
        if (cert.T_u) tu = std::max(tu, *cert.T_u);
        out.agents.push_back(cert);
    }
    if (out.state_feasible) out.T_x = tx;
    if (out.input_feasible) out.T_u = tu;
    if (out.T_x && out.T_u) out.T_xu = *out.T_x + *out.T_u;
    return out;
}

ConvergenceCertificate certificate(const Topology& topo, const GainSet& gains, const BoundSet& bounds,
                                   std::span<const double> x_err0, std::span<const double> u_err0) {
    auto cert = evaluate_certificate(topo, gains, bounds, x_err0, u_err0);
    for (const auto& a : cert.agents) {
        if (a.eta == 0) continue;
        if (!a.phi || !a.state_certified())
            throw CertificateInfeasible("agent " + std::to_string(a.agent + 1) +
                                        ": phi <= 0, theta does not dominate the input-estimation error bound");
        if (!a.psi || !a.input_certified())
            throw CertificateInfeasible("agent " + std::to_string(a.agent + 1) +
                                        ": psi <= 0, pi does not dominate the input-derivative bound");
    }
    return cert;
}

Topology::Topology(Graph g, std::size_t k_) : graph(std::move(g)), k(k_) {
    neighborhoods = khop_sets(graph, k);
    couplings.reserve(graph.size());
    for (const auto& nb : neighborhoods) {
        if (nb.eta() == 0)
            couplings.emplace_back();
        else
            couplings.emplace_back(coupling_matrices(graph, nb));
    }
}

GainSet tune_gains(const Topology& topo, const PlantModel& plant, const BoundSet& bounds, const TuningOptions& opts) {
    const std::size_t n = topo.size();
    GainSet gs;
    if (opts.G) {
        check_G(plant, *opts.G);
        gs.G = *opts.G;
    } else {
        gs.G = design_G(plant, opts.g_scale);
    }
    gs.omega.assign(n, 0.0);
    gs.theta.assign(n, 0.0);
    gs.pi.assign(n, 0.0);
    for (AgentId i = 0; i < n; ++i) {
        if (!topo.couplings[i]) continue;
        const auto& c = *topo.couplings[i];
        gs.omega[i] = tune_omega(c, plant, gs.G, opts.omega_slack);
        gs.theta[i] = bounds.d_tilde_u ? tune_theta(c, gs.G, (*bounds.d_tilde_u)[i], opts.theta_slack) : kNaN;
        gs.pi[i] = bounds.d_udot ? tune_pi(c, topo.eta(i), (*bounds.d_udot)[i], opts.pi_slack) : kNaN;
    }
    refresh_margins(gs, topo, plant, bounds);
    return gs;
}

void refresh_margins(GainSet& gains, const Topology& topo, const PlantModel& plant, const BoundSet& bounds) {
    const std::size_t n = topo.size();
    gains.omega_margin.assign(n, kNaN);
    gains.theta_margin.assign(n, kNaN);
    gains.pi_margin.assign(n, kNaN);
    for (AgentId i = 0; i < n; ++i) {
        if (!topo.couplings[i]) continue;
        const auto& c = *topo.couplings[i];
        gains.omega_margin[i] = gains.omega[i] - omega_lower_bound(c, plant, gains.G);
        if (bounds.d_tilde_u)
            gains.theta_margin[i] = gains.theta[i] - theta_lower_bound(c, gains.G, (*bounds.d_tilde_u)[i]);
        if (bounds.d_udot) gains.pi_margin[i] = gains.pi[i] - pi_lower_bound(c, topo.eta(i), (*bounds.d_udot)[i]);
    }
}

}  // namespace khop
