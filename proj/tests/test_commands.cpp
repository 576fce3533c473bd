#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

#include "khop/commands.hpp"
#include "khop/errors.hpp"

using namespace khop;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("khop_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    CommandOptions options() const {
        CommandOptions o;
        o.out_dir = path.string();
        return o;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

json scenario_file(const std::string& name) {
    return read_scenario_document(std::string(KHOP_SOURCE_DIR) + "/scenarios/" + name);
}

json k4_doc() { return scenario_file("complete_k4.json"); }

std::string status_of(const json& report, const std::string& name) {
    for (const auto& c : report["verification"]["criteria"])
        if (c["name"] == name) return c["status"].get<std::string>();
    return "missing";
}

}  // namespace

TEST_CASE("scenario parsing rejects bad documents") {
    const json good = k4_doc();
    CHECK_NOTHROW(parse_scenario(good));

    json d = good;
    d["colour"] = "blue";
    CHECK_THROWS_AS(parse_scenario(d), ConfigError);
    d = good;
    d["sim"]["dtt"] = 0.1;
    CHECK_THROWS_AS(parse_scenario(d), ConfigError);
    d = good;
    d["schema_version"] = 2;
    CHECK_THROWS_AS(parse_scenario(d), ConfigError);
    d = good;
    d["k"] = "three";
    CHECK_THROWS_AS(parse_scenario(d), ConfigError);
    d = good;
    d.erase("graph");
    CHECK_THROWS_AS(parse_scenario(d), ConfigError);
    d = good;
    d["graph"]["edges"].push_back(json::array({1, 9}));
    CHECK_THROWS_AS(parse_scenario(d), Error);
    d = good;
    d["sim"]["x0"] = json::array({1, 2});
    CHECK_THROWS_AS(prepare_run(parse_scenario(d)), Error);
    d = good;
    d["controller"] = "pid";
    CHECK_THROWS_AS(parse_scenario(d), ConfigError);
}

TEST_CASE("nonlinearity registry") {
    NonlinearitySpec sat;
    sat.kind = "saturation";
    sat.scale = -0.5;
    sat.limit = 2.0;
    const auto f = make_nonlinearity(sat);
    CHECK(f(Vector{1.0, 5.0}) == Vector{-0.5, -1.0});
    CHECK(nonlinearity_lipschitz(sat) == 0.5);

    NonlinearitySpec table;
    table.kind = "table";
    table.table_x = {0.0, 1.0, 3.0};
    table.table_y = {0.0, 2.0, 3.0};
    const auto g = make_nonlinearity(table);
    CHECK(g(Vector{0.5})[0] == doctest::Approx(1.0));
    CHECK(g(Vector{2.0})[0] == doctest::Approx(2.5));
    CHECK(g(Vector{-4.0})[0] == 0.0);
    CHECK(g(Vector{9.0})[0] == 3.0);
    CHECK(nonlinearity_lipschitz(table) == doctest::Approx(2.0));

    table.table_x = {0.0, 0.0};
    table.table_y = {1.0, 2.0};
    CHECK_THROWS_AS(make_nonlinearity(table), ConfigError);
    NonlinearitySpec unknown;
    unknown.kind = "cubic";
    CHECK_THROWS_AS(make_nonlinearity(unknown), ConfigError);

    json d = scenario_file("ring6_saturation.json");
    d["plant"]["l_f"] = 0.1;  // below the saturation slope
    CHECK_THROWS_AS(parse_scenario(d), ConfigError);
}

TEST_CASE("scenario hash") {
    const Scenario a = parse_scenario(k4_doc());
    const Scenario b = parse_scenario(k4_doc());
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);
    json d = k4_doc();
    d["sim"]["T_end"] = 2.0;
    CHECK(parse_scenario(d).hash() != a.hash());
}

TEST_CASE("the shipped reproduction scenario matches the built-in one") {
    CHECK(scenario_file("reproduce_paper.json") == paper_scenario_json());
    const Scenario sc = paper_scenario();
    CHECK(sc.k == 3);
    CHECK(sc.graph.size() == 4);
    CHECK(sc.target_graph->has_edge(0, 3));
}

TEST_CASE("seeded initial estimates") {
    CHECK(unit_uniform(0) == 0.0);
    CHECK(unit_uniform(~0ULL) == 1.0 - std::ldexp(1.0, -53));
    std::mt19937_64 rng(1);
    const std::uint64_t first = rng();
    CHECK(unit_uniform(first) == std::ldexp(static_cast<double>(first >> 11), -53));

    const Scenario sc = paper_scenario();
    const Topology topo(sc.graph, sc.k);
    const auto a = initial_state_estimates(sc, topo);
    const auto b = initial_state_estimates(sc, topo);
    CHECK(a == b);
    for (AgentId i = 0; i < 4; ++i)
        for (std::size_t s = 0; s < topo.eta(i); ++s)
            for (std::size_t c = 0; c < 2; ++c) {
                const double truth = sc.sim.x0[topo.neighborhoods[i].members[s] * 2 + c];
                CHECK(std::abs(a[i][s * 2 + c] - truth) <= 0.2);
            }
    json d = paper_scenario_json();
    d["sim"]["seed"] = 2;
    CHECK(initial_state_estimates(parse_scenario(d), topo) != a);
}

TEST_CASE("command-line overrides") {
    json d = k4_doc();
    CommandOptions o;
    o.seed = 7;
    o.decimate = 3;
    o.slack = 0.01;
    o.boundary_layer = "0.05";
    apply_overrides(d, o);
    CHECK(d["sim"]["seed"] == 7);
    CHECK(d["outputs"]["decimate"] == 3);
    CHECK(d["gains"]["slack"] == 0.01);
    CHECK(d["sim"]["boundary_layer"] == 0.05);
    o.boundary_layer = "off";
    apply_overrides(d, o);
    CHECK_FALSE(d["sim"].contains("boundary_layer"));
    o.boundary_layer = "wide";
    CHECK_THROWS_AS(apply_overrides(d, o), ConfigError);
    o.boundary_layer.reset();
    o.decimate = 0;
    CHECK_THROWS_AS(apply_overrides(d, o), ConfigError);
}

TEST_CASE("tune") {
    TempDir dir("tune");
    std::ostringstream out, err;
    SUBCASE("complete graph needs no observers") {
        CHECK(cmd_tune(k4_doc(), dir.options(), out, err) == exit_code::ok);
        CHECK(out.str().find("no observers needed") != std::string::npos);
        const json g = json::parse(slurp(dir.path / "gains.json"));
        CHECK(g["certified"] == true);
    }
    SUBCASE("reproduction gains") {
        CHECK(cmd_tune(paper_scenario_json(), dir.options(), out, err) == exit_code::ok);
        const json g = json::parse(slurp(dir.path / "gains.json"));
        CHECK(g["agents"][0]["omega"].get<double>() == doctest::Approx(2.618).epsilon(1e-4));
        CHECK(g["agents"][1]["pi"].get<double>() == doctest::Approx(1.001));
    }
    SUBCASE("published pi sits on the bound and does not certify") {
        json d = paper_scenario_json();
        d["gains"]["pi"] = json::array({9.7, 1.0, 1.0, 9.7});
        CHECK(cmd_tune(d, dir.options(), out, err) == exit_code::infeasible);
        CHECK(err.str().find("violated") != std::string::npos);
    }
    SUBCASE("bad g") {
        json d = paper_scenario_json();
        d["gains"]["g"] = -1.0;
        CHECK(cmd_tune(d, dir.options(), out, err) == exit_code::infeasible);
    }
}

TEST_CASE("simulate is deterministic") {
    TempDir a("sim_a"), b("sim_b");
    json d = scenario_file("zero_controller.json");
    d["sim"]["T_end"] = 1.0;
    std::ostringstream out, err;
    const int ra = cmd_simulate(d, a.options(), out, err);
    const int rb = cmd_simulate(d, b.options(), out, err);
    CHECK(ra == rb);
    const std::string ca = slurp(a.path / "telemetry.csv");
    CHECK(ca.size() > 100);
    CHECK(ca == slurp(b.path / "telemetry.csv"));
    const json rep = json::parse(slurp(a.path / "report.json"));
    CHECK(rep["run"]["steps"] == 1000);
}

TEST_CASE("simulate reports aborts with the divergence code") {
    TempDir dir("abort");
    json d = k4_doc();
    d["plant"]["A"] = json::array({json::array({5.0})});
    d["sim"]["state_box"] = json::array({-1.0, 1.0});
    std::ostringstream out, err;
    CHECK(cmd_simulate(d, dir.options(), out, err) == exit_code::divergence);
    CHECK(fs::exists(dir.path / "telemetry.csv"));
    CHECK(err.str().find("aborted") != std::string::npos);
}

TEST_CASE("offline verification of a reproduction run") {
    TempDir dir("verify");
    const json doc = paper_scenario_json();
    std::ostringstream out, err;
    REQUIRE(cmd_simulate(doc, dir.options(), out, err) == exit_code::ok);
    const std::string csv = (dir.path / "telemetry.csv").string();

    CHECK(cmd_verify(doc, csv, dir.options(), out, err) == exit_code::ok);
    const json rep = json::parse(slurp(dir.path / "verify_report.json"));
    CHECK(rep["verification"]["verdict"] == "PASS");
    CHECK(status_of(rep, "lemma4") == "PASS");

    SUBCASE("scenario of another shape") {
        CHECK(cmd_verify(k4_doc(), csv, dir.options(), out, err) == exit_code::usage);
    }
    SUBCASE("missing file") {
        CHECK(cmd_verify(doc, (dir.path / "none.csv").string(), dir.options(), out, err) == exit_code::usage);
    }
    SUBCASE("tampered error norms fail the monotonicity audit") {
        std::ifstream in(csv);
        std::vector<std::string> lines;
        for (std::string l; std::getline(in, l);) lines.push_back(l);
        in.close();
        // errx_1 is the first error column after t, 8 states and 8 inputs.
        const std::size_t col = 1 + 16;
        for (std::size_t r = lines.size() - 2000; r < lines.size(); ++r) {
            std::vector<std::string> cells;
            std::stringstream ss(lines[r]);
            for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
            cells[col] = "0.25";
            std::string joined = cells[0];
            for (std::size_t c = 1; c < cells.size(); ++c) joined += "," + cells[c];
            lines[r] = joined;
        }
        const fs::path tampered = dir.path / "tampered.csv";
        std::ofstream f(tampered);
        for (const auto& l : lines) f << l << '\n';
        f.close();
        CHECK(cmd_verify(doc, tampered.string(), dir.options(), out, err) == exit_code::verify_failed);
        const json bad = json::parse(slurp(dir.path / "verify_report.json"));
        CHECK(status_of(bad, "lemma4") == "FAIL");
        CHECK(bad["verification"]["verdict"] == "FAIL");
    }
}

TEST_CASE("sweeps") {
    json d = paper_scenario_json();
    d["sim"]["T_end"] = 3.0;
    SUBCASE("k outside the controller's reach is reported per cell") {
        SweepGrid grid;
        grid.k = {2, 3};
        grid.threads = 2;
        const auto cells = run_sweep(d, grid);
        REQUIRE(cells.size() == 2);
        CHECK(cells[0].k == 2);
        CHECK_FALSE(cells[0].ran);
        CHECK(cells[0].verdict == "ERROR");
        CHECK(cells[0].error.find("k-hop") != std::string::npos);
        CHECK(cells[1].ran);
        CHECK(cells[1].verdict == "PASS");
    }
    SUBCASE("halving pi voids the input certificate only") {
        SweepGrid grid;
        grid.pi_scale = {0.5, 1.0};
        const auto cells = run_sweep(d, grid);
        REQUIRE(cells.size() == 2);
        CHECK(cells[0].verdict == "NOT_CERTIFIED");
        CHECK(cells[1].verdict == "PASS");
        for (const auto& c : cells) {
            REQUIRE(c.Tx_obs_max);
            CHECK(*c.Tx_obs_max < 1.0);
        }
    }
    SUBCASE("cmd_sweep writes a summary") {
        TempDir dir("sweep");
        SweepGrid grid;
        grid.dt = {1e-3, 2e-3};
        std::ostringstream out, err;
        CHECK(cmd_sweep(d, grid, dir.options(), out, err) == exit_code::ok);
        const std::string csv = slurp(dir.path / "sweep.csv");
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    }
}

TEST_CASE("reproduce-paper end to end") {
    TempDir dir("repro");
    std::ostringstream out, err;
    CHECK(cmd_reproduce_paper(dir.options(), out, err) == exit_code::ok);
    CHECK(out.str().find("tuned omega = {2.6180, 1.0000, 1.0000, 2.6180}") != std::string::npos);
    for (const char* name : {"scenario.json", "gains.json", "telemetry.csv", "report.json"})
        CHECK(fs::exists(dir.path / name));
    CHECK(json::parse(slurp(dir.path / "scenario.json")) == paper_scenario_json());
}
