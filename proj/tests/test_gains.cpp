#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "khop/errors.hpp"
#include "khop/gains.hpp"
#include "test_support.hpp"

using namespace khop;
using namespace khop::testing;

namespace {

const double kLambdaSmall = (3.0 - std::sqrt(5.0)) / 2.0;
const double kLambdaLarge = (3.0 + std::sqrt(5.0)) / 2.0;

Topology path4_k3() { return Topology(path_graph(4), 3); }

BoundSet paper_bounds() {
    BoundSet b;
    b.d_u = Vector(4, 1.0);
    b.d_udot = Vector(4, 1.0);
    b.d_tilde_u = Vector(4, 0.5);
    return b;
}

TuningOptions g20() {
    TuningOptions o;
    o.g_scale = 20.0;
    return o;
}

// A with eigenvalues of its symmetric part in [-2, 1].
Matrix random_drift(std::mt19937_64& rng, std::size_t n) { return random_matrix(rng, n, n) * 1.5; }

}  // namespace

TEST_CASE("design_G") {
    SUBCASE("single integrator with g = 20") {
        const auto plant = PlantModel::linear(Matrix(2, 2));
        const Matrix G = design_G(plant, 20.0);
        CHECK(G == Matrix::identity(2) * 20.0);
        CHECK(g_condition_value(plant.A, G) == doctest::Approx(-800.0));
    }
    SUBCASE("stable drift falls back to the unit floor") {
        CHECK(design_G(PlantModel::linear(Matrix::identity(2) * -1.0)) == Matrix::identity(2));
    }
    SUBCASE("nilpotent drift") {
        const auto plant = PlantModel::linear(Matrix{{0, 1}, {0, 0}});
        const Matrix G = design_G(plant);
        CHECK(G == Matrix::identity(2) * 1.5);
        // 1.5 (A + A^T) - 4.5 I has eigenvalues -4.5 -/+ 1.5
        CHECK(g_condition_value(plant.A, G) == doctest::Approx(-3.0));
    }
    SUBCASE("a scale below the drift is rejected") {
        const auto plant = PlantModel::linear(Matrix::identity(1) * 2.0);
        CHECK_THROWS_AS(design_G(plant, 1.0), GainConditionViolated);
        CHECK_THROWS_AS(design_G(plant, -1.0), GainConditionViolated);
        CHECK(g_condition_value(plant.A, design_G(plant)) < 0.0);
    }
    SUBCASE("random drifts always yield a valid G") {
        std::mt19937_64 rng(31);
        for (int trial = 0; trial < 50; ++trial) {
            const auto plant = PlantModel::linear(random_drift(rng, 1 + trial % 3));
            CHECK_NOTHROW(check_G(plant, design_G(plant)));
        }
    }
}

TEST_CASE("check_G on full matrices") {
    const auto plant = PlantModel::linear(Matrix(2, 2));
    CHECK_NOTHROW(check_G(plant, Matrix{{2, 0.5}, {0.5, 1}}));
    CHECK_THROWS_AS(check_G(plant, Matrix{{1, 0}, {0, -1}}), GainConditionViolated);
    CHECK_THROWS_AS(check_G(plant, Matrix{{1, 0.5}, {0, 1}}), DimensionError);
    CHECK_THROWS_AS(check_G(plant, Matrix::identity(3)), DimensionError);
}

TEST_CASE("omega bound") {
    const auto topo = path4_k3();
    const auto plant = PlantModel::linear(Matrix(2, 2));
    const Matrix G = Matrix::identity(2) * 20.0;
    CHECK(tune_omega(*topo.couplings[0], plant, G) == doctest::Approx(1.0 / kLambdaSmall).epsilon(1e-12));
    CHECK(tune_omega(*topo.couplings[1], plant, G) == 1.0);
    CHECK(tune_omega(*topo.couplings[1], plant, G, 0.25) == 1.25);

    auto lipschitz = PlantModel::linear(Matrix(1, 1));
    lipschitz.l_f = 1.0;
    CHECK(tune_omega(*topo.couplings[1], lipschitz, Matrix::identity(1)) == doctest::Approx(2.0));

    std::mt19937_64 rng(32);
    for (int trial = 0; trial < 30; ++trial) {
        const Topology t(random_connected_graph(rng, 3 + trial % 5, 0.2), 2 + trial % 3);
        const auto pl = PlantModel::linear(random_drift(rng, 2));
        const Matrix g = design_G(pl);
        for (const auto& c : t.couplings)
            if (c) CHECK(tune_omega(*c, pl, g) == doctest::Approx(1.0 / c->lambda_min).epsilon(1e-14));
    }
}

TEST_CASE("theta and pi bounds") {
    const auto topo = path4_k3();
    const Matrix G = Matrix::identity(2) * 20.0;
    const auto& c1 = *topo.couplings[0];
    const auto& c2 = *topo.couplings[1];
    CHECK(theta_lower_bound(c2, G, 0.5) == doctest::Approx(0.5));
    CHECK(theta_lower_bound(c1, G, 0.5) == doctest::Approx(kLambdaLarge / kLambdaSmall * 0.5));
    CHECK(tune_theta(c2, G, 0.0, 1e-3) == doctest::Approx(1e-3));
    CHECK(pi_lower_bound(c1, 2, 1.0) == doctest::Approx(kLambdaLarge / kLambdaSmall * std::sqrt(2.0)));
    CHECK(tune_pi(c2, 1, 0.0, 1e-3) == doctest::Approx(1e-3));
    CHECK_THROWS_AS(tune_theta(c2, G, 0.5, 0.0), ConfigError);
    CHECK_THROWS_AS(tune_pi(c2, 1, 1.0, -1.0), ConfigError);
    CHECK_THROWS_AS(tune_theta(c2, G, -0.5, 1e-3), ConfigError);

    // Anisotropic G: the ratio uses the extreme eigenvalues of G.
    CHECK(theta_lower_bound(c2, Matrix{{4, 0}, {0, 1}}, 1.0) == doctest::Approx(4.0));

    ObserverCoupling singular;
    singular.M = Matrix{{1, -1}, {-1, 1}};
    singular.lambda_min = 0.0;
    singular.lambda_max = 2.0;
    const auto plant = PlantModel::linear(Matrix(2, 2));
    CHECK_THROWS_AS(tune_omega(singular, plant, G), CouplingNotPD);
    CHECK_THROWS_AS(tune_theta(singular, G, 0.5), CouplingNotPD);
    CHECK_THROWS_AS(tune_pi(singular, 2, 1.0), CouplingNotPD);
}

TEST_CASE("reproduction gains on the four-agent path") {
    const auto topo = path4_k3();
    const auto gains = tune_gains(topo, PlantModel::linear(Matrix(2, 2)), paper_bounds(), g20());
    const double ratio = kLambdaLarge / kLambdaSmall;
    const Vector omega{2.618, 1.0, 1.0, 2.618};
    const Vector theta{ratio * 0.5 + 1e-3, 0.501, 0.501, ratio * 0.5 + 1e-3};
    const Vector pi{ratio * std::sqrt(2.0) + 1e-3, 1.001, 1.001, ratio * std::sqrt(2.0) + 1e-3};
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(gains.omega[i] - omega[i]) < 1e-3);
        CHECK(gains.theta[i] == doctest::Approx(theta[i]).epsilon(1e-12));
        CHECK(gains.pi[i] == doctest::Approx(pi[i]).epsilon(1e-12));
        CHECK(gains.theta_margin[i] == doctest::Approx(1e-3));
        CHECK(gains.pi_margin[i] == doctest::Approx(1e-3));
    }
    CHECK(gains.scalar_g() == 20.0);
    // Published values, two significant decimals.
    CHECK(std::abs(gains.omega[0] - 2.62) < 0.01);
    CHECK(std::abs(gains.omega[1] - 1.0) < 0.01);
    CHECK(std::abs(gains.theta[1] - 0.5) < 0.01);
    CHECK(std::abs(gains.pi[0] - 9.7) < 0.01);
    CHECK(std::abs(gains.pi[1] - 1.0) < 0.01);
    CHECK(std::abs(gains.theta[0] - 3.40) < 0.05);
}

TEST_CASE("tuned gains satisfy the state-observer matrix inequality") {
    std::mt19937_64 rng(33);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Topology topo(random_connected_graph(rng, 3 + trial % 6, uniform(rng, 0.0, 0.4)), 2 + trial % 3);
        auto plant = PlantModel::linear(random_drift(rng, 1 + trial % 3));
        plant.l_f = uniform(rng, 0.0, 2.0);
        BoundSet bounds;
        bounds.d_udot = Vector(topo.size(), 1.0);
        bounds.d_tilde_u = Vector(topo.size(), 0.5);
        const auto gains = tune_gains(topo, plant, bounds);
        for (AgentId i = 0; i < topo.size(); ++i) {
            if (!topo.couplings[i]) continue;
            const auto check = verify_lemma3_inequality(*topo.couplings[i], plant, gains.G, gains.omega[i]);
            CHECK(check.holds);
            CHECK(check.lambda_max < 0.0);
            ++checked;
        }
    }
    CHECK(checked > 100);

    SUBCASE("zero omega with a Lipschitz term fails") {
        const auto topo = path4_k3();
        auto plant = PlantModel::linear(Matrix(2, 2));
        plant.l_f = 0.5;
        CHECK_FALSE(verify_lemma3_inequality(*topo.couplings[0], plant, Matrix::identity(2), 0.0).holds);
    }
}

TEST_CASE("certificate formulas") {
    const auto topo = path4_k3();
    const auto& c2 = *topo.couplings[1];

    SUBCASE("scalar plug-in") {
        const auto cert = certify_agent(1, c2, Matrix::identity(1), 1.0, 1.0, 0.0, 0.0, 2.0, 3.0);
        REQUIRE(cert.phi);
        CHECK(*cert.phi == doctest::Approx(1.0));
        CHECK(*cert.T_x == doctest::Approx(2.0));
        CHECK(*cert.psi == doctest::Approx(1.0));
        CHECK(*cert.T_u == doctest::Approx(3.0));
    }
    SUBCASE("gains exactly on the bound do not certify") {
        const auto cert = certify_agent(1, c2, Matrix::identity(2) * 20.0, 0.5, 1.0, 0.5, 1.0, 1.0, 1.0);
        CHECK(*cert.phi == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(*cert.psi == doctest::Approx(0.0).epsilon(1e-12));
        CHECK_FALSE(cert.state_certified());
        CHECK_FALSE(cert.input_certified());
    }
    SUBCASE("agent 1 with tuned gains") {
        // phi and psi are small differences of large terms; allow for cancellation.
        const auto& c1 = *topo.couplings[0];
        const Matrix G = Matrix::identity(2) * 20.0;
        const double theta = tune_theta(c1, G, 0.5);
        const double pi = tune_pi(c1, 2, 1.0);
        const auto cert = certify_agent(0, c1, G, theta, pi, 0.5, 1.0, 1.0, 1.0);
        const double phi = theta * kLambdaSmall * 20.0 - kLambdaLarge * 20.0 * 0.5;
        const double psi = pi * kLambdaSmall - kLambdaLarge * std::sqrt(2.0);
        CHECK(*cert.phi == doctest::Approx(phi).epsilon(1e-12));
        CHECK(*cert.T_x == doctest::Approx(kLambdaLarge * 20.0 / phi).epsilon(1e-9));
        CHECK(*cert.psi == doctest::Approx(psi).epsilon(1e-12));
        CHECK(*cert.T_u == doctest::Approx(kLambdaLarge / psi).epsilon(1e-9));
    }
    SUBCASE("increasing theta shortens the state bound") {
        const auto& c1 = *topo.couplings[0];
        const Matrix G = Matrix::identity(2) * 20.0;
        double prev_phi = -1e300;
        double prev_T = 1e300;
        for (double theta = 3.5; theta < 10.0; theta += 0.5) {
            const auto cert = certify_agent(0, c1, G, theta, 10.0, 0.5, 1.0, 1.0, 1.0);
            CHECK(*cert.phi > prev_phi);
            CHECK(*cert.T_x < prev_T);
            prev_phi = *cert.phi;
            prev_T = *cert.T_x;
        }
    }
    SUBCASE("missing bounds leave fields empty") {
        const auto cert = certify_agent(1, c2, Matrix::identity(1), 1.0, 1.0, std::nullopt, std::nullopt, 1.0, 1.0);
        CHECK_FALSE(cert.phi);
        CHECK_FALSE(cert.psi);
    }
}

TEST_CASE("global certificate") {
    const auto topo = path4_k3();
    const auto bounds = paper_bounds();
    const auto plant = PlantModel::linear(Matrix(2, 2));
    auto gains = tune_gains(topo, plant, bounds, g20());
    const Vector ones(4, 1.0);

    const auto cert = certificate(topo, gains, bounds, ones, ones);
    REQUIRE(cert.T_x);
    REQUIRE(cert.T_u);
    double tx = 0.0, tu = 0.0;
    for (const auto& a : cert.agents) {
        tx = std::max(tx, *a.T_x);
        tu = std::max(tu, *a.T_u);
    }
    CHECK(*cert.T_x == tx);
    CHECK(*cert.T_u == tu);
    CHECK(*cert.T_xu == doctest::Approx(tx + tu));

    gains.pi = Vector{9.7, 1.0, 1.0, 9.7};
    CHECK_THROWS_AS(certificate(topo, gains, bounds, ones, ones), CertificateInfeasible);
    const auto relaxed = evaluate_certificate(topo, gains, bounds, ones, ones);
    CHECK_FALSE(relaxed.input_feasible);
    CHECK(relaxed.state_feasible);
    CHECK_FALSE(relaxed.T_u);
    CHECK_FALSE(relaxed.T_xu);

    CHECK_THROWS_AS(evaluate_certificate(topo, gains, bounds, Vector(3, 1.0), ones), DimensionError);
}

TEST_CASE("agents without k-hop neighbors get no gains") {
    const Topology k4(Graph(4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}), 2);
    const auto gains = tune_gains(k4, PlantModel::linear(Matrix(1, 1)), paper_bounds());
    CHECK(gains.omega == Vector(4, 0.0));
    const auto cert = certificate(k4, gains, paper_bounds(), Vector(4, 0.0), Vector(4, 0.0));
    CHECK(*cert.T_x == 0.0);
}

TEST_CASE("tuning without a bound leaves the gain unset") {
    BoundSet bounds;
    bounds.d_udot = Vector(4, 1.0);
    const auto gains = tune_gains(path4_k3(), PlantModel::linear(Matrix(1, 1)), bounds);
    CHECK(std::isnan(gains.theta[0]));
    CHECK(gains.pi[0] > 9.0);
}

TEST_CASE("plant and bound validation") {
    PlantModel p = PlantModel::linear(Matrix(2, 2));
    p.l_f = -1.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p.l_f = 0.0;
    p.A = Matrix(2, 3);
    CHECK_THROWS_AS(p.validate(), DimensionError);

    BoundSet b;
    CHECK_THROWS_AS(b.validate(4), ConfigError);
    b.d_u = Vector(3, 1.0);
    CHECK_THROWS_AS(b.validate(4), ConfigError);
    b.d_u = Vector{1, 1, 1, -1};
    CHECK_THROWS_AS(b.validate(4), ConfigError);
    b.d_u = Vector(4, 1.0);
    CHECK_NOTHROW(b.validate(4));
    CHECK(default_d_tilde_u(4, 1.0, 0.5) == doctest::Approx(3.0));
}
