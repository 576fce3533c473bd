#include "khop/scenario.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "khop/errors.hpp"

namespace khop {

using nlohmann::json;

namespace {

void allow_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

double number(const json& v, const std::string& where) {
    if (!v.is_number()) throw ConfigError(where + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(where + ": must be finite");
    return d;
}

Vector numbers(const json& v, const std::string& where) {
    if (!v.is_array()) throw ConfigError(where + ": expected an array of numbers");
    Vector out;
    for (std::size_t p = 0; p < v.size(); ++p) out.push_back(number(v[p], where + "[" + std::to_string(p) + "]"));
    return out;
}

// A scalar is broadcast to every agent.
Vector per_agent(const json& v, std::size_t n, const std::string& where) {
    if (v.is_number()) return Vector(n, number(v, where));
    Vector out = numbers(v, where);
    if (out.size() != n) throw ConfigError(where + ": expected " + std::to_string(n) + " entries");
    return out;
}

Matrix matrix(const json& v, std::size_t N, const std::string& where) {
    if (!v.is_array() || v.size() != N) throw ConfigError(where + ": expected " + std::to_string(N) + " rows");
    Matrix m(N, N);
    for (std::size_t r = 0; r < N; ++r) {
        const Vector row = numbers(v[r], where);
        if (row.size() != N) throw ConfigError(where + ": expected " + std::to_string(N) + " columns");
        for (std::size_t c = 0; c < N; ++c) m(r, c) = row[c];
    }
    return m;
}

// Nested per-agent blocks or one flat array.
Vector stacked(const json& v, std::size_t n, std::size_t N, const std::string& where) {
    if (!v.is_array()) throw ConfigError(where + ": expected an array");
    Vector out;
    if (!v.empty() && v[0].is_array()) {
        if (v.size() != n) throw ConfigError(where + ": expected one entry per agent");
        for (const auto& row : v) {
            const Vector b = numbers(row, where);
            if (b.size() != N) throw ConfigError(where + ": each agent needs " + std::to_string(N) + " components");
            out.insert(out.end(), b.begin(), b.end());
        }
    } else {
        out = numbers(v, where);
        if (out.size() != n * N) throw ConfigError(where + ": expected n * N entries");
    }
    return out;
}

Graph graph_from(const json& v, const std::string& where, const std::filesystem::path& base) {
    if (v.is_string()) {
        std::filesystem::path p(v.get<std::string>());
        if (p.is_relative()) p = base / p;
        try {
            return Graph::load_edge_list(p.string());
        } catch (const GraphError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    allow_keys(v, where, {"n", "edges"});
    if (!v.contains("n") || !v.contains("edges")) throw ConfigError(where + ": needs 'n' and 'edges'");
    const auto n = v["n"].get<std::size_t>();
    std::vector<Edge> edges;
    for (const auto& e : v["edges"]) {
        if (!e.is_array() || e.size() != 2) throw ConfigError(where + ": edges are [i, j] pairs");
        const auto a = e[0].get<std::size_t>();
        const auto b = e[1].get<std::size_t>();
        if (a == 0 || b == 0) throw ConfigError(where + ": agent ids are 1-based");
        edges.emplace_back(a - 1, b - 1);
    }
    try {
        return Graph(n, edges);
    } catch (const GraphError& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Scenario parse_with_base(const json& doc, const std::filesystem::path& base) {
    allow_keys(doc, "scenario",
               {"schema_version", "name", "graph", "target_graph", "k", "controller", "plant", "bounds", "gains", "sim",
                "outputs"});
    if (!doc.contains("schema_version") || doc["schema_version"] != kScenarioSchemaVersion)
        throw ConfigError("scenario: schema_version must be " + std::to_string(kScenarioSchemaVersion));
    if (!doc.contains("graph")) throw ConfigError("scenario: 'graph' is required");

    Scenario sc(graph_from(doc["graph"], "graph", base));
    sc.source = doc;
    const std::size_t n = sc.graph.size();
    sc.name = doc.value("name", "unnamed");
    if (doc.contains("k")) {
        sc.k = doc["k"].get<std::size_t>();
        if (sc.k < 2) throw ConfigError("k must be at least 2");
    }
    if (doc.contains("target_graph")) {
        sc.target_graph = graph_from(doc["target_graph"], "target_graph", base);
        if (sc.target_graph->size() != n) throw ConfigError("target_graph: size differs from graph");
    }
    sc.controller = doc.value("controller", sc.target_graph ? "khop_consensus" : "zero");
    if (sc.controller != "zero" && sc.controller != "khop_consensus")
        throw ConfigError("controller must be 'zero' or 'khop_consensus'");
    if (sc.controller == "khop_consensus" && !sc.target_graph)
        throw ConfigError("controller 'khop_consensus' needs target_graph");

    // Plant.
    const json plant = doc.value("plant", json::object());
    allow_keys(plant, "plant", {"N", "A", "f", "l_f"});
    sc.plant.N = plant.value("N", std::size_t{1});
    if (sc.plant.N == 0) throw ConfigError("plant.N must be positive");
    sc.plant.A = plant.contains("A") ? matrix(plant["A"], sc.plant.N, "plant.A") : Matrix(sc.plant.N, sc.plant.N);
    if (plant.contains("f")) {
        const json& f = plant["f"];
        if (f.is_string()) {
            sc.f.kind = f.get<std::string>();
        } else {
            allow_keys(f, "plant.f", {"kind", "scale", "limit", "x", "y"});
            sc.f.kind = f.value("kind", "zero");
            if (f.contains("scale")) sc.f.scale = number(f["scale"], "plant.f.scale");
            if (f.contains("limit")) sc.f.limit = number(f["limit"], "plant.f.limit");
            if (f.contains("x")) sc.f.table_x = numbers(f["x"], "plant.f.x");
            if (f.contains("y")) sc.f.table_y = numbers(f["y"], "plant.f.y");
        }
    }
    sc.plant.f = make_nonlinearity(sc.f);
    const double lf_min = nonlinearity_lipschitz(sc.f);
    sc.plant.l_f = plant.contains("l_f") ? number(plant["l_f"], "plant.l_f") : lf_min;
    if (sc.plant.l_f < lf_min - 1e-12)
        throw ConfigError("plant.l_f is smaller than the Lipschitz constant of the chosen f");

    // Bounds.
    const json bounds = doc.value("bounds", json::object());
    allow_keys(bounds, "bounds", {"d_u", "d_udot", "d_tilde_u", "d_u_from_box", "note"});
    if (bounds.contains("d_u")) sc.bounds.d_u = per_agent(bounds["d_u"], n, "bounds.d_u");
    if (bounds.contains("d_udot")) sc.bounds.d_udot = per_agent(bounds["d_udot"], n, "bounds.d_udot");
    if (bounds.contains("d_tilde_u")) sc.bounds.d_tilde_u = per_agent(bounds["d_tilde_u"], n, "bounds.d_tilde_u");
    sc.d_u_from_box = bounds.value("d_u_from_box", false);
    sc.bounds_note = bounds.value("note", "");

    // Gain overrides.
    const json gains = doc.value("gains", json::object());
    allow_keys(gains, "gains", {"g", "G", "omega", "theta", "pi", "theta_scale", "pi_scale", "slack"});
    if (gains.contains("g")) sc.gains.g = number(gains["g"], "gains.g");
    if (gains.contains("G")) sc.gains.G = matrix(gains["G"], sc.plant.N, "gains.G");
    if (gains.contains("omega")) sc.gains.omega = per_agent(gains["omega"], n, "gains.omega");
    if (gains.contains("theta")) sc.gains.theta = per_agent(gains["theta"], n, "gains.theta");
    if (gains.contains("pi")) sc.gains.pi = per_agent(gains["pi"], n, "gains.pi");
    if (gains.contains("theta_scale")) sc.gains.theta_scale = number(gains["theta_scale"], "gains.theta_scale");
    if (gains.contains("pi_scale")) sc.gains.pi_scale = number(gains["pi_scale"], "gains.pi_scale");
    if (gains.contains("slack")) sc.gains.slack = number(gains["slack"], "gains.slack");
    if (!(sc.gains.slack > 0.0)) throw ConfigError("gains.slack must be positive");
    if (sc.gains.theta_scale < 0.0 || sc.gains.pi_scale < 0.0) throw ConfigError("gain scales must be >= 0");

    // Simulation.
    const json sim = doc.value("sim", json::object());
    allow_keys(sim, "sim",
               {"dt", "T_end", "x0", "xhat0", "uhat0", "conv_eps", "state_box", "band_factor", "boundary_layer",
                "input_estimate_disturbance", "udot_window", "seed", "consensus_tol"});
    auto& sp = sc.sim;
    const std::size_t N = sc.plant.N;
    if (sim.contains("dt")) sp.dt = number(sim["dt"], "sim.dt");
    if (sim.contains("T_end")) sp.T_end = number(sim["T_end"], "sim.T_end");
    sp.x0 = sim.contains("x0") ? stacked(sim["x0"], n, N, "sim.x0") : Vector(n * N, 0.0);
    if (sim.contains("xhat0")) {
        const json& xh = sim["xhat0"];
        if (xh.is_string()) {
            sp.xhat0.mode = xh.get<std::string>();
        } else {
            allow_keys(xh, "sim.xhat0", {"mode", "spread", "values"});
            sp.xhat0.mode = xh.value("mode", "truth");
            if (xh.contains("spread")) sp.xhat0.spread = number(xh["spread"], "sim.xhat0.spread");
            if (xh.contains("values"))
                for (const auto& v : xh["values"]) sp.xhat0.values.push_back(numbers(v, "sim.xhat0.values"));
        }
        static const std::set<std::string> modes{"truth", "zero", "truth_plus_uniform", "explicit"};
        if (!modes.count(sp.xhat0.mode)) throw ConfigError("sim.xhat0.mode '" + sp.xhat0.mode + "' is unknown");
        if (sp.xhat0.mode == "explicit" && sp.xhat0.values.size() != n)
            throw ConfigError("sim.xhat0.values needs one entry per agent");
    }
    if (sim.contains("uhat0")) {
        const json& uh = sim["uhat0"];
        if (uh.is_string()) {
            if (uh != "zero") throw ConfigError("sim.uhat0 must be 'zero', a number, or per-agent arrays");
        } else if (uh.is_number()) {
            sp.uhat0_value = number(uh, "sim.uhat0");
        } else {
            for (const auto& v : uh) sp.uhat0_explicit.push_back(numbers(v, "sim.uhat0"));
            if (sp.uhat0_explicit.size() != n) throw ConfigError("sim.uhat0 needs one entry per agent");
        }
    }
    if (sim.contains("conv_eps")) sp.conv_eps = number(sim["conv_eps"], "sim.conv_eps");
    if (sim.contains("state_box")) {
        const Vector b = numbers(sim["state_box"], "sim.state_box");
        if (b.size() != 2) throw ConfigError("sim.state_box is [x_min, x_max]");
        sp.state_box = std::pair{b[0], b[1]};
    }
    if (sim.contains("band_factor")) sp.band_factor = number(sim["band_factor"], "sim.band_factor");
    if (sim.contains("boundary_layer") && !sim["boundary_layer"].is_null())
        sp.boundary_layer = number(sim["boundary_layer"], "sim.boundary_layer");
    if (sim.contains("input_estimate_disturbance")) {
        sp.input_estimate_disturbance = numbers(sim["input_estimate_disturbance"], "sim.input_estimate_disturbance");
        if (sp.input_estimate_disturbance->size() != N)
            throw ConfigError("sim.input_estimate_disturbance needs N entries");
    }
    if (sim.contains("udot_window")) sp.udot_window = number(sim["udot_window"], "sim.udot_window");
    if (sim.contains("seed")) sp.seed = sim["seed"].get<std::uint64_t>();
    if (sim.contains("consensus_tol")) sp.consensus_tol = number(sim["consensus_tol"], "sim.consensus_tol");

    const json out = doc.value("outputs", json::object());
    allow_keys(out, "outputs", {"csv", "report", "decimate"});
    sc.outputs.csv = out.value("csv", sc.outputs.csv);
    sc.outputs.report = out.value("report", sc.outputs.report);
    sc.outputs.decimate = out.value("decimate", std::size_t{1});
    if (sc.outputs.decimate == 0) throw ConfigError("outputs.decimate must be at least 1");
    return sc;
}

}  // namespace

PlantModel::NonlinearMap make_nonlinearity(const NonlinearitySpec& spec) {
    if (spec.kind == "zero") return {};
    if (spec.kind == "saturation") {
        if (!(spec.limit > 0.0)) throw ConfigError("saturation limit must be positive");
        const double s = spec.scale;
        const double a = spec.limit;
        return [s, a](std::span<const double> x) {
            Vector y(x.size());
            for (std::size_t c = 0; c < x.size(); ++c) y[c] = s * std::clamp(x[c], -a, a);
            return y;
        };
    }
    if (spec.kind == "table") {
        const Vector& xs = spec.table_x;
        const Vector& ys = spec.table_y;
        if (xs.size() < 2 || xs.size() != ys.size()) throw ConfigError("table f needs matching x and y with >= 2 points");
        for (std::size_t p = 1; p < xs.size(); ++p)
            if (!(xs[p] > xs[p - 1])) throw ConfigError("table f: x must be strictly increasing");
        return [xs, ys](std::span<const double> x) {
            Vector y(x.size());
            for (std::size_t c = 0; c < x.size(); ++c) {
                const double v = x[c];
                if (v <= xs.front()) {
                    y[c] = ys.front();
                } else if (v >= xs.back()) {
                    y[c] = ys.back();
                } else {
                    const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), v) - xs.begin());
                    const double w = (v - xs[hi - 1]) / (xs[hi] - xs[hi - 1]);
                    y[c] = ys[hi - 1] + w * (ys[hi] - ys[hi - 1]);
                }
            }
            return y;
        };
    }
    throw ConfigError("unknown f '" + spec.kind + "' (expected zero, saturation or table)");
}

double nonlinearity_lipschitz(const NonlinearitySpec& spec) {
    if (spec.kind == "saturation") return std::abs(spec.scale);
    if (spec.kind == "table") {
        double l = 0.0;
        for (std::size_t p = 1; p < spec.table_x.size(); ++p)
            l = std::max(l, std::abs((spec.table_y[p] - spec.table_y[p - 1]) / (spec.table_x[p] - spec.table_x[p - 1])));
        return l;
    }
    return 0.0;
}

std::string Scenario::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a(source.dump()));
    return buf;
}

Scenario parse_scenario(const json& doc) {
    try {
        return parse_with_base(doc, std::filesystem::current_path());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
    }
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("scenario '" + path + "': " + e.what());
    }
    try {
        return parse_with_base(doc, std::filesystem::path(path).parent_path());
    } catch (const json::exception& e) {
        throw ConfigError("scenario '" + path + "': " + e.what());
    }
}

json paper_scenario_json() {
    return {
        {"schema_version", kScenarioSchemaVersion},
        {"name", "path4_k3_consensus"},
        {"graph", {{"n", 4}, {"edges", {{1, 2}, {2, 3}, {3, 4}}}}},
        {"target_graph", {{"n", 4}, {"edges", {{1, 2}, {2, 3}, {3, 4}, {1, 4}}}}},
        {"k", 3},
        {"controller", "khop_consensus"},
        {"plant", {{"N", 2}, {"A", {{0.0, 0.0}, {0.0, 0.0}}}, {"f", "zero"}, {"l_f", 0.0}}},
        {"bounds",
         {{"d_tilde_u", 0.5},
          {"d_udot", 1.0},
          {"d_u_from_box", true},
          {"note", "d_tilde_u and d_udot chosen so the tuning rules return theta = {3.4, 0.5} and pi = {9.7, 1.0}"}}},
        {"gains", {{"g", 20.0}, {"slack", kDefaultSlack}}},
        {"sim",
         {{"dt", 1e-3},
          {"T_end", 20.0},
          {"x0", {{0.0, 0.1}, {0.05, -0.05}, {-0.05, 0.0}, {0.1, 0.05}}},
          {"xhat0", {{"mode", "truth_plus_uniform"}, {"spread", 0.2}}},
          {"uhat0", "zero"},
          {"seed", 1},
          {"state_box", {-2.0, 2.0}},
          {"band_factor", 5.0},
          {"udot_window", 0.05},
          {"consensus_tol", 1e-2}}},
        {"outputs", {{"csv", "telemetry.csv"}, {"report", "report.json"}, {"decimate", 1}}},
    };
}

Scenario paper_scenario() { return parse_scenario(paper_scenario_json()); }

double unit_uniform(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

std::vector<Vector> initial_state_estimates(const Scenario& sc, const Topology& topo) {
    const std::size_t n = topo.size();
    const std::size_t N = sc.plant.N;
    const auto& mode = sc.sim.xhat0.mode;
    std::vector<Vector> out(n);
    std::mt19937_64 rng(sc.sim.seed);
    for (AgentId i = 0; i < n; ++i) {
        const auto& members = topo.neighborhoods[i].members;
        if (mode == "explicit") {
            out[i] = sc.sim.xhat0.values[i];
            if (out[i].size() != members.size() * N)
                throw ConfigError("sim.xhat0.values of agent " + std::to_string(i + 1) + " must hold N * eta entries");
            continue;
        }
        out[i].assign(members.size() * N, 0.0);
        if (mode == "zero") continue;
        for (std::size_t s = 0; s < members.size(); ++s)
            for (std::size_t c = 0; c < N; ++c) {
                double v = sc.sim.x0[members[s] * N + c];
                if (mode == "truth_plus_uniform") v += sc.sim.xhat0.spread * (2.0 * unit_uniform(rng()) - 1.0);
                out[i][s * N + c] = v;
            }
    }
    return out;
}

PreparedRun prepare_run(const Scenario& sc) {
    Topology topo(sc.graph, sc.k);
    const std::size_t n = topo.size();
    const std::size_t N = sc.plant.N;

    // Initial input estimates.
    std::vector<Vector> uhat0(n);
    for (AgentId i = 0; i < n; ++i) {
        if (!sc.sim.uhat0_explicit.empty()) {
            uhat0[i] = sc.sim.uhat0_explicit[i];
            if (uhat0[i].size() != topo.eta(i) * N)
                throw ConfigError("sim.uhat0 of agent " + std::to_string(i + 1) + " must hold N * eta entries");
        } else {
            uhat0[i].assign(topo.eta(i) * N, sc.sim.uhat0_value.value_or(0.0));
        }
    }

    BoundSet bounds = sc.bounds;
    if (!bounds.d_u && sc.d_u_from_box && sc.sim.state_box && sc.target_graph) {
        const double d_max = sc.sim.state_box->second - sc.sim.state_box->first;
        Vector du(n);
        for (AgentId i = 0; i < n; ++i)
            du[i] = static_cast<double>(sc.target_graph->degree(i)) * d_max * std::sqrt(static_cast<double>(N));
        bounds.d_u = du;
    }
    if (!bounds.d_tilde_u && bounds.d_u) {
        // Largest initial estimate of each target, over all its estimators.
        Vector largest(n, 0.0);
        for (AgentId i = 0; i < n; ++i) {
            const auto& members = topo.neighborhoods[i].members;
            for (std::size_t s = 0; s < members.size(); ++s)
                largest[members[s]] = std::max(largest[members[s]], norm2(std::span<const double>(uhat0[i]).subspan(s * N, N)));
        }
        Vector dtu(n);
        for (AgentId l = 0; l < n; ++l) dtu[l] = default_d_tilde_u(topo.eta(l), (*bounds.d_u)[l], largest[l]);
        bounds.d_tilde_u = dtu;
    }
    bool observers_needed = false;
    for (AgentId i = 0; i < n; ++i) observers_needed |= topo.eta(i) > 0;
    if (observers_needed || bounds.d_u || bounds.d_udot) bounds.validate(n);

    TuningOptions opts;
    opts.g_scale = sc.gains.g;
    opts.G = sc.gains.G;
    opts.theta_slack = sc.gains.slack;
    opts.pi_slack = sc.gains.slack;
    GainSet gains = tune_gains(topo, sc.plant, bounds, opts);
    if (sc.gains.omega) gains.omega = *sc.gains.omega;
    if (sc.gains.theta) gains.theta = *sc.gains.theta;
    if (sc.gains.pi) gains.pi = *sc.gains.pi;
    for (AgentId i = 0; i < n; ++i) {
        if (topo.eta(i) == 0) {
            gains.omega[i] = gains.theta[i] = gains.pi[i] = 0.0;
            continue;
        }
        gains.theta[i] *= sc.gains.theta_scale;
        gains.pi[i] *= sc.gains.pi_scale;
    }
    refresh_margins(gains, topo, sc.plant, bounds);

    SimConfig cfg(sc.graph, sc.k);
    cfg.dt = sc.sim.dt;
    cfg.T_end = sc.sim.T_end;
    cfg.plant = sc.plant;
    cfg.gains = gains;
    cfg.controller = sc.controller == "khop_consensus" ? Controller::consensus(*sc.target_graph) : Controller::zero();
    cfg.x0 = sc.sim.x0;
    cfg.xhat0 = initial_state_estimates(sc, topo);
    cfg.uhat0 = uhat0;
    cfg.state_box = sc.sim.state_box;
    cfg.conv_eps = sc.sim.conv_eps;
    cfg.band_factor = sc.sim.band_factor;
    cfg.observer.boundary_layer = sc.sim.boundary_layer;
    cfg.observer.input_estimate_disturbance = sc.sim.input_estimate_disturbance;
    cfg.decimate = sc.outputs.decimate;
    cfg.udot_window = sc.sim.udot_window;
    return PreparedRun{std::move(topo), std::move(bounds), std::move(gains), std::move(cfg)};
}

VerifyContext verify_context(const Scenario& sc, const PreparedRun& run) {
    VerifyContext ctx{run.topology, sc.plant, run.gains, run.bounds};
    if (sc.controller == "khop_consensus") ctx.target_graph = sc.target_graph;
    ctx.dt = sc.sim.dt;
    ctx.T_end = sc.sim.T_end;
    ctx.band_factor = sc.sim.band_factor;
    ctx.conv_eps = sc.sim.conv_eps;
    ctx.consensus_tol = sc.sim.consensus_tol;
    ctx.udot_window = sc.sim.udot_window;
    ctx.scenario_name = sc.name;
    ctx.scenario_hash = sc.hash();
    return ctx;
}

}  // namespace khop
