#include "khop/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "khop/errors.hpp"

namespace khop {

namespace {

using nlohmann::json;

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string id(AgentId i) { return std::to_string(i + 1); }

// Worse statuses win: fail > not_certified > pass.
void merge(Status& into, Status s) {
    if (s == Status::fail || into == Status::fail)
        into = Status::fail;
    else if (s == Status::not_certified || into == Status::not_certified)
        into = Status::not_certified;
}

Vector column(const std::vector<TelemetryRow>& rows, Vector TelemetryRow::*field, AgentId i) {
    Vector out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back((r.*field)[i]);
    return out;
}

}  // namespace

std::string to_string(Status s) {
    switch (s) {
        case Status::pass: return "PASS";
        case Status::fail: return "FAIL";
        case Status::not_certified: return "NOT_CERTIFIED";
        case Status::info: return "INFO";
    }
    return "?";
}

const CriterionResult* VerificationReport::find(const std::string& name) const {
    for (const auto& c : criteria)
        if (c.name == name) return &c;
    return nullptr;
}

json VerificationReport::to_json() const {
    json j;
    j["scenario"] = scenario_name;
    j["scenario_hash"] = scenario_hash;
    j["dt"] = dt;
    j["lambda2_target"] = lambda2;
    j["X_obs"] = X_obs;
    j["iss_max_violation"] = iss_max_violation;
    json agents_j = json::array();
    for (const auto& a : agents) {
        json aj;
        aj["agent"] = a.agent + 1;
        aj["eta"] = a.eta;
        aj["eigenvalues"] = a.eigenvalues;
        aj["omega"] = a.omega;
        aj["theta"] = a.theta;
        aj["pi"] = a.pi;
        aj["phi"] = opt(a.certificate.phi);
        aj["psi"] = opt(a.certificate.psi);
        aj["T_x_certified"] = opt(a.certificate.T_x);
        aj["T_u_certified"] = opt(a.certificate.T_u);
        aj["T_x_observed"] = opt(a.Tx_obs);
        aj["T_u_observed"] = opt(a.Tu_obs);
        aj["T_x_observed_estimator"] = opt(a.Tx_obs_estimator);
        aj["T_u_observed_estimator"] = opt(a.Tu_obs_estimator);
        aj["band_x"] = a.band_x;
        aj["band_u"] = a.band_u;
        aj["lemma3_lambda_max"] = a.lemma3_lambda_max;
        aj["max_u_norm"] = a.max_u;
        aj["max_u_error_norm"] = a.max_u_err;
        aj["max_udot_estimate"] = a.max_udot;
        agents_j.push_back(aj);
    }
    j["agents"] = agents_j;
    json crit = json::array();
    for (const auto& c : criteria)
        crit.push_back({{"name", c.name},
                        {"status", to_string(c.status)},
                        {"value", c.value},
                        {"limit", c.limit},
                        {"tolerance", c.tolerance},
                        {"detail", c.detail}});
    j["criteria"] = crit;
    j["verdict"] = to_string(verdict);
    return j;
}

VerificationReport verify_telemetry(const VerifyContext& ctx, const std::vector<TelemetryRow>& rows) {
    const Topology& topo = ctx.topology;
    const std::size_t n = topo.size();
    if (rows.empty()) throw ConfigError("no telemetry rows to verify");
    for (const auto& r : rows)
        if (r.errx.size() != n || r.errx_target.size() != n) throw ConfigError("telemetry does not match the topology");

    VerificationReport rep;
    rep.scenario_name = ctx.scenario_name;
    rep.scenario_hash = ctx.scenario_hash;
    rep.dt = ctx.dt;

    const SlidingBands bands = sliding_bands(topo, ctx.gains, ctx.dt, ctx.band_factor);
    Vector times;
    for (const auto& r : rows) times.push_back(r.t);
    const auto detect = [&](const Vector& e, double band) {
        const double eps = ctx.conv_eps.value_or(std::max(1e-3 * e.front(), kBandFloor));
        return detect_convergence(times, e, std::max(eps, band), band);
    };

    // Certificates from the logged initial errors.
    const auto cert = evaluate_certificate(topo, ctx.gains, ctx.bounds, rows.front().errx_target, rows.front().erru_target);

    // Windowed finite difference of u on the sampled grid.
    const double spacing = rows.size() > 1 ? rows[1].t - rows[0].t : ctx.dt;
    const std::size_t win = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ctx.udot_window / spacing)));
    const std::size_t N = ctx.plant.N;

    for (AgentId i = 0; i < n; ++i) {
        AgentVerification a;
        a.agent = i;
        a.eta = topo.eta(i);
        a.omega = ctx.gains.omega[i];
        a.theta = ctx.gains.theta[i];
        a.pi = ctx.gains.pi[i];
        a.certificate = cert.agents[i];
        if (topo.couplings[i]) {
            a.eigenvalues = topo.couplings[i]->eigenvalues;
            a.lemma3_lambda_max =
                verify_lemma3_inequality(*topo.couplings[i], ctx.plant, ctx.gains.G, ctx.gains.omega[i]).lambda_max;
        }
        a.band_x = bands.x[i];
        a.band_u = bands.u[i];
        a.Tx_obs = detect(column(rows, &TelemetryRow::errx_target, i), bands.x_target[i]);
        a.Tu_obs = detect(column(rows, &TelemetryRow::erru_target, i), bands.u_target[i]);
        a.Tx_obs_estimator = detect(column(rows, &TelemetryRow::errx, i), bands.x[i]);
        a.Tu_obs_estimator = detect(column(rows, &TelemetryRow::erru, i), bands.u[i]);
        for (std::size_t s = 0; s < rows.size(); ++s) {
            const auto ui = std::span<const double>(rows[s].u).subspan(i * N, N);
            a.max_u = std::max(a.max_u, norm2(ui));
            a.max_u_err = std::max(a.max_u_err, rows[s].erru_target[i]);
            if (s >= win) {
                double d2 = 0.0;
                for (std::size_t c = 0; c < N; ++c) {
                    const double d = rows[s].u[i * N + c] - rows[s - win].u[i * N + c];
                    d2 += d * d;
                }
                a.max_udot = std::max(a.max_udot, std::sqrt(d2) / (rows[s].t - rows[s - win].t));
            }
        }
        rep.agents.push_back(std::move(a));
    }

    // Run reached the horizon.
    {
        CriterionResult c{"run_complete", Status::pass, rows.back().t, ctx.T_end, 0.5 * ctx.dt, ""};
        if (rows.back().t < ctx.T_end - 0.5 * ctx.dt) {
            c.status = Status::fail;
            c.detail = "telemetry stops before T_end";
        }
        rep.criteria.push_back(c);
    }

    // Lemma 1 / Lemma 2 on the communication graph.
    {
        CriterionResult c{"coupling_structure", Status::pass, std::numeric_limits<double>::infinity(),
                          tol::kPositiveDefinite, 0.0, ""};
        try {
            (void)check_lemma1(topo.graph, topo.k);
        } catch (const InternalConsistencyError& e) {
            c.status = Status::fail;
            c.detail = e.what();
        }
        for (const auto& cp : topo.couplings)
            if (cp) c.value = std::min(c.value, cp->lambda_min);
        if (!std::isfinite(c.value)) {
            c.value = 0.0;
            c.detail = "no agent has k-hop members";
        } else if (!(c.value > tol::kPositiveDefinite)) {
            c.status = Status::fail;
            c.detail = "a coupling matrix is not positive definite";
        }
        rep.criteria.push_back(c);
    }

    // Tuning inequalities at the gains actually used.
    {
        CriterionResult c{"gain_conditions", Status::pass, std::numeric_limits<double>::infinity(), 0.0, 0.0, ""};
        std::ostringstream why;
        for (const auto& a : rep.agents) {
            if (a.eta == 0) continue;
            if (!(a.lemma3_lambda_max < 0.0)) {
                merge(c.status, Status::not_certified);
                why << "agent " << id(a.agent) << ": omega inequality lambda_max = " << a.lemma3_lambda_max << "; ";
            }
            for (const auto& [margin, label] :
                 {std::pair{ctx.gains.theta_margin.empty() ? NAN : ctx.gains.theta_margin[a.agent], "theta"},
                  std::pair{ctx.gains.pi_margin.empty() ? NAN : ctx.gains.pi_margin[a.agent], "pi"}}) {
                if (std::isnan(margin)) {
                    merge(c.status, Status::not_certified);
                    why << "agent " << id(a.agent) << ": no bound to check " << label << "; ";
                    continue;
                }
                c.value = std::min(c.value, margin);
                if (!(margin > 0.0)) {
                    merge(c.status, Status::not_certified);
                    why << "agent " << id(a.agent) << ": " << label << " below its lower bound by " << -margin << "; ";
                }
            }
        }
        if (!std::isfinite(c.value)) c.value = 0.0;
        c.detail = why.str();
        rep.criteria.push_back(c);
    }

    // Finite-time certificates against observed, target-indexed convergence times.
    const auto certificate_check = [&](bool input) {
        CriterionResult c{input ? "input_certificate" : "state_certificate", Status::pass, 0.0, 0.0, 0.0, ""};
        std::ostringstream why;
        double worst_ratio = 0.0;
        for (const auto& a : rep.agents) {
            if (a.eta == 0) continue;
            const auto& bound = input ? a.certificate.T_u : a.certificate.T_x;
            const auto& obs = input ? a.Tu_obs : a.Tx_obs;
            if (!bound) {
                merge(c.status, Status::not_certified);
                why << "agent " << id(a.agent) << ": " << (input ? "psi" : "phi") << " <= 0, no bound; ";
                continue;
            }
            if (!obs) {
                merge(c.status, Status::fail);
                why << "agent " << id(a.agent) << ": error never settles in its band; ";
                continue;
            }
            if (*obs > *bound) {
                merge(c.status, Status::fail);
                why << "agent " << id(a.agent) << ": observed " << *obs << " > certified " << *bound << "; ";
            }
            const double ratio = *bound > 0.0 ? *obs / *bound : (*obs > 0.0 ? INFINITY : 0.0);
            if (ratio >= worst_ratio) {
                worst_ratio = ratio;
                c.value = *obs;
                c.limit = *bound;
            }
        }
        c.detail = why.str();
        return c;
    };
    const CriterionResult input_cert = certificate_check(true);
    const CriterionResult state_cert = certificate_check(false);
    rep.criteria.push_back(input_cert);
    rep.criteria.push_back(state_cert);
    const bool state_guaranteed = state_cert.status != Status::not_certified;
    const bool input_guaranteed = input_cert.status != Status::not_certified;

    // Every estimator settles into its sliding band.
    {
        CriterionResult c{"sliding_band", Status::pass, 0.0, 0.0, 0.0, ""};
        std::ostringstream why;
        double worst_ratio = -1.0;
        for (const auto& a : rep.agents) {
            if (a.eta == 0) continue;
            const double final_err = rows.back().errx[a.agent];
            if (final_err / a.band_x > worst_ratio) {
                worst_ratio = final_err / a.band_x;
                c.value = final_err;
                c.limit = a.band_x;
            }
            if (!a.Tx_obs_estimator) {
                merge(c.status, state_guaranteed ? Status::fail : Status::not_certified);
                why << "agent " << id(a.agent) << ": ||x~|| does not stay in band " << a.band_x << "; ";
            }
        }
        c.detail = why.str();
        rep.criteria.push_back(c);
    }

    // Consensus at the horizon and the ISS envelope.
    if (ctx.target_graph) {
        rep.lambda2 = algebraic_connectivity(*ctx.target_graph);
        CriterionResult c{"consensus", Status::pass, rows.back().consdist, ctx.consensus_tol, 0.0, ""};
        if (!(rows.back().consdist < ctx.consensus_tol)) {
            c.status = state_guaranteed ? Status::fail : Status::not_certified;
            c.detail = "consensus distance at T_end above tolerance";
        }
        rep.criteria.push_back(c);

        double theta_max = 0.0;
        for (AgentId i = 0; i < n; ++i)
            if (topo.eta(i) > 0) theta_max = std::max(theta_max, ctx.gains.theta[i]);
        const double band = ctx.band_factor * ctx.dt * theta_max;
        const double tolerance = tol::kIssAbsolute + band;
        const double cd0 = rows.front().consdist;
        const double t0 = rows.front().t;
        rep.iss_max_violation = -std::numeric_limits<double>::infinity();
        double worst_t = t0;
        for (const auto& r : rows) {
            const double env = std::exp(-rep.lambda2 * (r.t - t0)) * cd0 + r.vsup / rep.lambda2;
            const double viol = r.consdist - env;
            if (viol > rep.iss_max_violation) {
                rep.iss_max_violation = viol;
                worst_t = r.t;
            }
        }
        CriterionResult iss{"iss_envelope", Status::pass, rep.iss_max_violation, 0.0, tolerance, ""};
        if (!(rep.iss_max_violation <= tolerance)) {
            iss.status = Status::fail;
            iss.detail = "envelope exceeded at t = " + std::to_string(worst_t);
        }
        rep.criteria.push_back(iss);
    }

    // Lemma 4: once inputs are estimated, state errors never grow past their value then.
    {
        CriterionResult c{"lemma4", Status::pass, 0.0, 0.0, 0.0, ""};
        std::ostringstream why;
        double worst = -std::numeric_limits<double>::infinity();
        for (AgentId i = 0; i < n; ++i) {
            for (const auto& r : rows) rep.X_obs = std::max(rep.X_obs, r.errx[i]);
            const auto& a = rep.agents[i];
            if (a.eta == 0) continue;
            if (!a.Tu_obs_estimator) {
                merge(c.status, input_guaranteed ? Status::fail : Status::not_certified);
                why << "agent " << id(i) << ": input estimate never settles; ";
                continue;
            }
            const auto at = std::lower_bound(times.begin(), times.end(), *a.Tu_obs_estimator);
            const std::size_t s0 = static_cast<std::size_t>(at - times.begin());
            const double ref = rows[s0].errx[i];
            double peak = ref;
            for (std::size_t s = s0 + 1; s < rows.size(); ++s) peak = std::max(peak, rows[s].errx[i]);
            const double excess = peak - ref - a.band_x;
            if (excess > worst) {
                worst = excess;
                c.value = peak;
                c.limit = ref;
                c.tolerance = a.band_x;
            }
            if (excess > 0.0) {
                // Without the theta inequality a residual input error keeps driving the state error.
                merge(c.status, state_guaranteed ? Status::fail : Status::not_certified);
                why << "agent " << id(i) << ": ||x~|| reaches " << peak << " after T_u (value then " << ref << "); ";
            }
        }
        if (!std::isfinite(rep.X_obs)) {
            merge(c.status, Status::fail);
            why << "X_obs is not finite; ";
        }
        why << "X_obs = " << rep.X_obs;
        c.detail = why.str();
        rep.criteria.push_back(c);
    }

    // Declared bounds against what the trajectory actually did. Informational.
    {
        CriterionResult c{"bound_audit", Status::info, 0.0, 0.0, 0.0, ""};
        std::ostringstream why;
        const auto audit = [&](const std::optional<Vector>& bound, double AgentVerification::*obs, const char* label) {
            if (!bound) return;
            for (const auto& a : rep.agents) {
                const double o = a.*obs;
                if (o > (*bound)[a.agent])
                    why << label << " of agent " << id(a.agent) << " observed " << o << " > declared "
                        << (*bound)[a.agent] << "; ";
            }
        };
        audit(ctx.bounds.d_u, &AgentVerification::max_u, "||u||");
        audit(ctx.bounds.d_tilde_u, &AgentVerification::max_u_err, "||u~||");
        audit(ctx.bounds.d_udot, &AgentVerification::max_udot, "||u'||");
        c.detail = why.str().empty() ? "all declared bounds hold along the trajectory" : why.str();
        c.tolerance = ctx.udot_window;
        rep.criteria.push_back(c);
    }

    rep.verdict = Status::pass;
    for (const auto& c : rep.criteria)
        if (c.status != Status::info) merge(rep.verdict, c.status);
    return rep;
}

}  // namespace khop
