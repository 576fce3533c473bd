#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "khop/gains.hpp"
#include "khop/sim.hpp"

namespace khop {

enum class Status { pass, fail, not_certified, info };

std::string to_string(Status s);

/// One checked claim with the numbers and tolerance behind it.
struct CriterionResult {
    std::string name;
    Status status = Status::pass;
    double value = 0.0;      // worst observed quantity
    double limit = 0.0;      // what it was compared against
    double tolerance = 0.0;  // slack allowed on top of `limit`
    std::string detail;
};

struct AgentVerification {
    AgentId agent = 0;
    std::size_t eta = 0;
    Vector eigenvalues;
    double omega = 0.0, theta = 0.0, pi = 0.0;
    AgentCertificate certificate;
    std::optional<double> Tx_obs;  // target-indexed
    std::optional<double> Tu_obs;
    std::optional<double> Tx_obs_estimator;
    std::optional<double> Tu_obs_estimator;
    double band_x = 0.0;  // estimator-indexed bands
    double band_u = 0.0;
    double lemma3_lambda_max = 0.0;
    double max_u = 0.0;
    double max_u_err = 0.0;
    double max_udot = 0.0;
};

struct VerificationReport {
    std::string scenario_name;
    std::string scenario_hash;
    double dt = 0.0;
    double lambda2 = 0.0;
    double X_obs = 0.0;
    double iss_max_violation = 0.0;  // max over samples of ||x||_A - envelope (<= 0 when it holds)
    std::vector<AgentVerification> agents;
    std::vector<CriterionResult> criteria;
    Status verdict = Status::pass;

    const CriterionResult* find(const std::string& name) const;
    nlohmann::json to_json() const;
};

/// Everything needed to re-check a run offline besides the telemetry itself.
struct VerifyContext {
    const Topology& topology;
    const PlantModel& plant;
    const GainSet& gains;
    const BoundSet& bounds;
    std::optional<Graph> target_graph = std::nullopt;  // set for consensus runs
    double dt = 1e-3;
    double T_end = 0.0;
    double band_factor = 5.0;
    std::optional<double> conv_eps = std::nullopt;
    double consensus_tol = 1e-2;
    double udot_window = 0.05;
    std::string scenario_name = {};
    std::string scenario_hash = {};
};

/// Recomputes convergence times, certificates, the ISS envelope, the Lemma 4
/// audit and the bound audit from the sampled rows.
VerificationReport verify_telemetry(const VerifyContext& ctx, const std::vector<TelemetryRow>& rows);

}  // namespace khop
