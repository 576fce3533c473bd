#include "khop/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <thread>

#include "khop/errors.hpp"

namespace khop {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

json ids(const std::vector<AgentId>& v) {
    json a = json::array();
    for (AgentId i : v) a.push_back(i + 1);
    return a;
}

json optional_vector(const std::optional<Vector>& v) { return v ? json(*v) : json(nullptr); }

fs::path output_path(const CommandOptions& opts, const std::string& name) {
    fs::path p(name);
    return p.is_absolute() ? p : fs::path(opts.out_dir) / p;
}

void write_json(const fs::path& path, const json& doc) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write '" + path.string() + "'");
    f << doc.dump(2) << '\n';
}

int exit_for(Status verdict) {
    switch (verdict) {
        case Status::pass: return exit_code::ok;
        case Status::not_certified: return exit_code::infeasible;
        default: return exit_code::verify_failed;
    }
}

// Initial target-indexed errors of the configured run; unit errors when the
// run cannot be set up (for example gains still missing).
std::pair<Vector, Vector> initial_errors(const PreparedRun& run, bool& unit) {
    try {
        const Simulator sim(run.config);
        const auto row = sim.snapshot();
        unit = false;
        return {row.errx_target, row.erru_target};
    } catch (const Error&) {
        unit = true;
        const std::size_t n = run.topology.size();
        return {Vector(n, 1.0), Vector(n, 1.0)};
    }
}

void print_criteria(const VerificationReport& rep, std::ostream& out) {
    for (const auto& c : rep.criteria) {
        char line[256];
        std::snprintf(line, sizeof line, "  %-20s %-14s value=%.6g limit=%.6g tol=%.3g", c.name.c_str(),
                      to_string(c.status).c_str(), c.value, c.limit, c.tolerance);
        out << line;
        if (!c.detail.empty() && c.status != Status::pass) out << "  (" << c.detail << ")";
        out << '\n';
    }
    out << "verdict: " << to_string(rep.verdict) << '\n';
}

template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const SimulationAborted& e) {
        err << "simulation aborted: " << e.what() << '\n';
        return exit_code::divergence;
    } catch (const CertificateInfeasible& e) {
        err << "infeasible: " << e.what() << '\n';
        return exit_code::infeasible;
    } catch (const GainConditionViolated& e) {
        err << "infeasible: " << e.what() << '\n';
        return exit_code::infeasible;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code::usage;
    }
}

}  // namespace

void apply_overrides(json& doc, const CommandOptions& opts) {
    if (opts.seed) doc["sim"]["seed"] = *opts.seed;
    if (opts.decimate) {
        if (*opts.decimate == 0) throw ConfigError("--decimate must be at least 1");
        doc["outputs"]["decimate"] = *opts.decimate;
    }
    if (opts.slack) doc["gains"]["slack"] = *opts.slack;
    if (opts.boundary_layer) {
        if (*opts.boundary_layer == "off") {
            if (doc.contains("sim")) doc["sim"].erase("boundary_layer");
        } else {
            std::size_t used = 0;
            double w = 0.0;
            try {
                w = std::stod(*opts.boundary_layer, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != opts.boundary_layer->size() || !(w > 0.0))
                throw ConfigError("--boundary-layer expects a positive width or 'off'");
            doc["sim"]["boundary_layer"] = w;
        }
    }
}

json read_scenario_document(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("scenario '" + path + "': " + e.what());
    }
    // Graph files are resolved relative to the scenario file.
    const fs::path base = fs::absolute(fs::path(path)).parent_path();
    for (const char* key : {"graph", "target_graph"})
        if (doc.is_object() && doc.contains(key) && doc[key].is_string()) {
            const fs::path p(doc[key].get<std::string>());
            if (p.is_relative()) doc[key] = (base / p).lexically_normal().string();
        }
    return doc;
}

GainReport gain_report(const Scenario& sc, const PreparedRun& run) {
    const Topology& topo = run.topology;
    const GainSet& gains = run.gains;
    const std::size_t n = topo.size();

    bool unit = false;
    const auto [x_err0, u_err0] = initial_errors(run, unit);
    const auto cert = evaluate_certificate(topo, gains, run.bounds, x_err0, u_err0);

    GainReport rep;
    json& d = rep.doc;
    d["scenario"] = sc.name;
    d["scenario_hash"] = sc.hash();
    d["n"] = n;
    d["N"] = sc.plant.N;
    d["k"] = topo.k;
    d["G"] = matrix_json(gains.G);
    d["g"] = opt(gains.scalar_g());
    const SymMatrix gsym(gains.G.symmetric_part());
    d["lambda_min_G"] = lambda_min(gsym);
    d["lambda_max_G"] = lambda_max(gsym);
    d["norm_G"] = spectral_norm(gains.G);
    d["G_condition_lambda_max"] = g_condition_value(sc.plant.A, gains.G);
    d["l_f"] = sc.plant.l_f;
    d["slack"] = sc.gains.slack;
    d["bounds"] = {{"d_u", optional_vector(run.bounds.d_u)},
                   {"d_udot", optional_vector(run.bounds.d_udot)},
                   {"d_tilde_u", optional_vector(run.bounds.d_tilde_u)},
                   {"note", sc.bounds_note}};
    d["initial_errors"] = unit ? "unit" : "scenario";
    d["tolerances"] = {{"positive_definite", tol::kPositiveDefinite},
                       {"symmetry", tol::kSymmetry},
                       {"jacobi_off_diagonal", tol::kJacobiOffDiagonal}};

    json agents = json::array();
    bool any_observer = false;
    for (AgentId i = 0; i < n; ++i) {
        const auto& nb = topo.neighborhoods[i];
        const auto& ac = cert.agents[i];
        json a;
        a["agent"] = i + 1;
        a["eta"] = nb.eta();
        a["members"] = ids(nb.members);
        a["one_hop"] = ids(nb.one_hop);
        a["x_err0"] = x_err0[i];
        a["u_err0"] = u_err0[i];
        if (!topo.couplings[i]) {
            a["note"] = "no k-hop members; no observer needed";
            agents.push_back(a);
            continue;
        }
        any_observer = true;
        const auto& c = *topo.couplings[i];
        a["eigenvalues"] = c.eigenvalues;
        a["lambda_min"] = c.lambda_min;
        a["lambda_max"] = c.lambda_max;
        a["omega"] = finite_or_null(gains.omega[i]);
        a["theta"] = finite_or_null(gains.theta[i]);
        a["pi"] = finite_or_null(gains.pi[i]);
        a["omega_lower_bound"] = omega_lower_bound(c, sc.plant, gains.G);
        a["omega_margin"] = finite_or_null(gains.omega_margin[i]);
        a["theta_margin"] = finite_or_null(gains.theta_margin[i]);
        a["pi_margin"] = finite_or_null(gains.pi_margin[i]);
        a["lemma3_lambda_max"] = verify_lemma3_inequality(c, sc.plant, gains.G, gains.omega[i]).lambda_max;
        a["phi"] = opt(ac.phi);
        a["psi"] = opt(ac.psi);
        a["T_x"] = opt(ac.T_x);
        a["T_u"] = opt(ac.T_u);
        const std::string who = "agent " + std::to_string(i + 1);
        if (!ac.phi)
            rep.violations.push_back(who + ": theta inequality cannot be checked (theta or d_tilde_u missing)");
        else if (!ac.T_x)
            rep.violations.push_back(who + ": phi = " + std::to_string(*ac.phi) +
                                     " <= 0, theta * lambda_min(M) * lambda_min(G) does not exceed ||M (x) G|| * d_tilde_u");
        if (!ac.psi)
            rep.violations.push_back(who + ": pi inequality cannot be checked (pi or d_udot missing)");
        else if (!ac.T_u)
            rep.violations.push_back(who + ": psi = " + std::to_string(*ac.psi) +
                                     " <= 0, pi * lambda_min(M) does not exceed lambda_max(M) * sqrt(eta) * d_udot");
        agents.push_back(a);
    }
    d["agents"] = agents;
    d["T_x"] = opt(cert.T_x);
    d["T_u"] = opt(cert.T_u);
    d["T_xu"] = opt(cert.T_xu);
    rep.certified = rep.violations.empty();
    d["certified"] = rep.certified;
    d["violations"] = rep.violations;
    d["notes"] = json::array();
    if (!any_observer) d["notes"].push_back("no observers needed: every agent reaches all others within one hop");
    return rep;
}

int cmd_tune(const json& scenario_doc, const CommandOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        json doc = scenario_doc;
        apply_overrides(doc, opts);
        const Scenario sc = parse_scenario(doc);
        const PreparedRun run = prepare_run(sc);
        const GainReport rep = gain_report(sc, run);
        const fs::path path = output_path(opts, "gains.json");
        write_json(path, rep.doc);

        out << "scenario " << sc.name << " (" << sc.hash() << "), k = " << sc.k << '\n';
        for (const auto& a : rep.doc["agents"]) {
            out << "  agent " << a["agent"] << ": eta = " << a["eta"];
            if (a.contains("omega"))
                out << ", omega = " << a["omega"] << ", theta = " << a["theta"] << ", pi = " << a["pi"];
            out << '\n';
        }
        for (const auto& note : rep.doc["notes"]) out << "note: " << note.get<std::string>() << '\n';
        for (const auto& v : rep.violations) err << "violated: " << v << '\n';
        out << "gain report: " << path.string() << '\n';
        return rep.certified ? exit_code::ok : exit_code::infeasible;
    });
}

int cmd_simulate(const json& scenario_doc, const CommandOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        json doc = scenario_doc;
        apply_overrides(doc, opts);
        const Scenario sc = parse_scenario(doc);
        const PreparedRun run = prepare_run(sc);
        Simulator sim(run.config);

        const fs::path csv_path = output_path(opts, sc.outputs.csv);
        if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
        std::ofstream csv(csv_path);
        if (!csv) throw ConfigError("cannot write '" + csv_path.string() + "'");
        csv << csv_header(run.topology.size(), sc.plant.N) << '\n';

        Telemetry tel;
        try {
            tel = sim.run([&csv](const TelemetryRow& r) { write_csv_row(csv, r); });
        } catch (const SimulationAborted&) {
            csv.flush();  // keep the partial telemetry
            throw;
        }
        csv.close();

        const VerificationReport rep = verify_telemetry(verify_context(sc, run), tel.rows);
        json report;
        report["verification"] = rep.to_json();
        report["gains"] = gain_report(sc, run).doc;
        report["run"] = {{"dt", sc.sim.dt},
                         {"T_end", sc.sim.T_end},
                         {"steps", run.config.steps()},
                         {"decimate", sc.outputs.decimate},
                         {"rows", tel.rows.size()},
                         {"csv", csv_path.string()}};
        const fs::path report_path = output_path(opts, sc.outputs.report);
        write_json(report_path, report);

        out << "scenario " << sc.name << " (" << sc.hash() << "): " << tel.rows.size() << " rows -> "
            << csv_path.string() << '\n';
        print_criteria(rep, out);
        out << "report: " << report_path.string() << '\n';
        return exit_for(rep.verdict);
    });
}

int cmd_verify(const json& scenario_doc, const std::string& csv_path, const CommandOptions& opts, std::ostream& out,
               std::ostream& err) {
    return guarded(err, [&] {
        json doc = scenario_doc;
        apply_overrides(doc, opts);
        const Scenario sc = parse_scenario(doc);
        const PreparedRun run = prepare_run(sc);
        std::ifstream in(csv_path);
        if (!in) throw ConfigError("cannot open telemetry '" + csv_path + "'");
        const TelemetryTable table = read_csv(in, run.topology.size(), sc.plant.N);
        const VerificationReport rep = verify_telemetry(verify_context(sc, run), table.rows);
        const fs::path report_path = output_path(opts, "verify_report.json");
        json report;
        report["verification"] = rep.to_json();
        report["csv"] = csv_path;
        write_json(report_path, report);
        out << "verified " << table.rows.size() << " rows of " << csv_path << '\n';
        print_criteria(rep, out);
        out << "report: " << report_path.string() << '\n';
        return exit_for(rep.verdict);
    });
}

std::vector<SweepCell> run_sweep(const json& scenario_doc, const SweepGrid& grid) {
    const Scenario base = parse_scenario(scenario_doc);
    const auto or_default = [](auto v, auto def) { return v.empty() ? decltype(v){def} : v; };
    const auto dts = or_default(grid.dt, base.sim.dt);
    const auto thetas = or_default(grid.theta_scale, base.gains.theta_scale);
    const auto pis = or_default(grid.pi_scale, base.gains.pi_scale);
    const auto ks = or_default(grid.k, base.k);

    std::vector<SweepCell> cells;
    for (double dt : dts)
        for (double th : thetas)
            for (double p : pis)
                for (std::size_t k : ks) {
                    SweepCell c;
                    c.dt = dt;
                    c.theta_scale = th;
                    c.pi_scale = p;
                    c.k = k;
                    cells.push_back(c);
                }

    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t idx = next++; idx < cells.size(); idx = next++) {
            SweepCell& c = cells[idx];
            try {
                json doc = scenario_doc;
                doc["sim"]["dt"] = c.dt;
                doc["gains"]["theta_scale"] = c.theta_scale;
                doc["gains"]["pi_scale"] = c.pi_scale;
                doc["k"] = c.k;
                doc["outputs"]["decimate"] = 1;
                const Scenario sc = parse_scenario(doc);
                const PreparedRun run = prepare_run(sc);
                Simulator sim(run.config);
                const Telemetry tel = sim.run();
                const auto rep = verify_telemetry(verify_context(sc, run), tel.rows);
                c.ran = true;
                for (const auto& a : rep.agents) {
                    if (a.eta == 0) continue;
                    const auto bump = [](std::optional<double>& into, const std::optional<double>& v) {
                        if (!v) return false;
                        into = std::max(into.value_or(0.0), *v);
                        return true;
                    };
                    if (!bump(c.Tx_obs_max, a.Tx_obs)) c.Tx_obs_max = INFINITY;
                    if (!bump(c.Tu_obs_max, a.Tu_obs)) c.Tu_obs_max = INFINITY;
                }
                c.X_obs = rep.X_obs;
                c.final_consdist = tel.rows.back().consdist;
                for (double e : tel.rows.back().errx) c.final_errx_max = std::max(c.final_errx_max, e);
                c.verdict = to_string(rep.verdict);
            } catch (const std::exception& e) {
                c.error = e.what();
                c.verdict = "ERROR";
            }
        }
    };
    unsigned threads = grid.threads ? grid.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, cells.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return cells;
}

int cmd_sweep(const json& scenario_doc, const SweepGrid& grid, const CommandOptions& opts, std::ostream& out,
              std::ostream& err) {
    return guarded(err, [&] {
        json doc = scenario_doc;
        apply_overrides(doc, opts);
        const auto cells = run_sweep(doc, grid);
        const fs::path path = output_path(opts, "sweep.csv");
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream f(path);
        if (!f) throw ConfigError("cannot write '" + path.string() + "'");
        const char* header = "dt,theta_scale,pi_scale,k,Tx_obs_max,Tu_obs_max,X_obs,final_consdist,final_errx_max,verdict,error";
        f << header << '\n';
        out << header << '\n';
        for (const auto& c : cells) {
            char buf[512];
            const auto num = [](const std::optional<double>& v) {
                if (!v) return std::string("nan");
                char b[32];
                std::snprintf(b, sizeof b, "%.9g", *v);
                return std::string(b);
            };
            std::string error = c.error;
            std::replace(error.begin(), error.end(), ',', ';');
            std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%zu,%s,%s,%.9g,%.9g,%.9g,%s,%s", c.dt, c.theta_scale,
                          c.pi_scale, c.k, num(c.Tx_obs_max).c_str(), num(c.Tu_obs_max).c_str(), c.X_obs,
                          c.final_consdist, c.final_errx_max, c.verdict.c_str(), error.c_str());
            f << buf << '\n';
            out << buf << '\n';
        }
        out << "sweep summary: " << path.string() << '\n';
        return exit_code::ok;
    });
}

int cmd_reproduce_paper(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        json doc = paper_scenario_json();
        apply_overrides(doc, opts);
        write_json(output_path(opts, "scenario.json"), doc);

        const Scenario sc = parse_scenario(doc);
        const PreparedRun run = prepare_run(sc);
        out << "published gains: omega = {2.62, 1.0, 1.0, 2.62}, theta = {3.4, 0.5, 0.5, 3.4}, pi = {9.7, 1.0, 1.0, 9.7}\n";
        char line[160];
        for (const auto& [label, v] : {std::pair{"omega", &run.gains.omega}, std::pair{"theta", &run.gains.theta},
                                       std::pair{"pi", &run.gains.pi}}) {
            std::snprintf(line, sizeof line, "tuned %-5s = {%.4f, %.4f, %.4f, %.4f}\n", label, (*v)[0], (*v)[1], (*v)[2],
                          (*v)[3]);
            out << line;
        }
        // Overrides are already part of `doc`.
        CommandOptions plain;
        plain.out_dir = opts.out_dir;
        const int tune = cmd_tune(doc, plain, out, err);
        if (tune != exit_code::ok) return tune;
        return cmd_simulate(doc, plain, out, err);
    });
}

}  // namespace khop
