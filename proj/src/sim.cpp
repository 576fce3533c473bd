#include "khop/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "khop/errors.hpp"

namespace khop {

namespace {

std::string id(AgentId i) { return std::to_string(i + 1); }

const NeighborMessage* message_from(std::span<const NeighborMessage> msgs, AgentId j) {
    for (const auto& m : msgs)
        if (m.sender == j) return &m;
    return nullptr;
}

}  // namespace

Controller Controller::consensus(Graph target) {
    Controller c;
    c.kind = Kind::khop_consensus;
    c.target_graph = std::move(target);
    return c;
}

Controller Controller::generic(Law law) {
    Controller c;
    c.kind = Kind::generic_feedback;
    c.law = std::move(law);
    return c;
}

Vector consensus_control(const ControlInput& in, const Graph& target) {
    const std::size_t N = in.N;
    Vector u(N, 0.0);
    for (AgentId j : target.neighbors(in.agent)) {
        std::span<const double> xj;
        if (const auto* m = message_from(in.msgs, j)) {
            xj = m->state;
        } else {
            if (!in.neighborhood.contains(j))
                throw ProtocolError("agent " + id(in.agent) + " has no estimate of target neighbor " + id(j));
            xj = in.estimates.x_block(in.neighborhood.slot(j));
        }
        if (xj.size() != N) throw DimensionError("neighbor state has wrong dimension");
        for (std::size_t c = 0; c < N; ++c) u[c] += xj[c] - in.own_state[c];
    }
    return u;
}

void check_controller_invariant(const Graph& comm, std::span<const KHopNeighborhood> nbs, const Graph& target) {
    if (target.size() != comm.size()) throw ConfigError("target graph and communication graph differ in size");
    for (AgentId i = 0; i < comm.size(); ++i)
        for (AgentId j : target.neighbors(i))
            if (!comm.has_edge(i, j) && !nbs[i].contains(j))
                throw ConfigError("target edge (" + id(i) + ", " + id(j) + ") needs agent " + id(j) +
                                  " inside the k-hop set of agent " + id(i));
}

double consensus_distance(std::span<const double> x, std::size_t N) {
    if (N == 0 || x.size() % N != 0) throw DimensionError("stacked state is not a multiple of N");
    const std::size_t n = x.size() / N;
    if (n == 0) return 0.0;
    Vector mean(N, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < N; ++c) mean[c] += x[i * N + c];
    for (double& m : mean) m /= static_cast<double>(n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < N; ++c) {
            const double d = x[i * N + c] - mean[c];
            s += d * d;
        }
    return std::sqrt(s);
}

double algebraic_connectivity(const Graph& g) {
    const auto eig = sym_eig(SymMatrix(g.laplacian()));
    for (double v : eig.values)
        if (v > tol::kLaplacianZero) return v;
    throw NumericalError("Laplacian has no eigenvalue above the zero threshold");
}

void SimConfig::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
    if (!(T_end > dt) || !std::isfinite(T_end)) throw ConfigError("T_end must exceed dt");
    if (conv_eps && !(*conv_eps > 0.0)) throw ConfigError("conv_eps must be positive");
    if (decimate == 0) throw ConfigError("decimate must be at least 1");
    if (!(band_factor > 0.0)) throw ConfigError("band_factor must be positive");
    if (!(udot_window > 0.0)) throw ConfigError("udot_window must be positive");
    plant.validate();
    const std::size_t n = graph.size();
    if (x0.size() != n * plant.N) throw DimensionError("x0 must hold n * N entries");
    for (double v : x0)
        if (!std::isfinite(v)) throw ConfigError("x0 must be finite");
    if (state_box) {
        const auto [lo, hi] = *state_box;
        if (!(lo < hi)) throw ConfigError("state box must satisfy x_min < x_max");
        for (std::size_t p = 0; p < x0.size(); ++p)
            if (x0[p] < lo || x0[p] > hi) throw ConfigError("x0 of agent " + id(p / plant.N) + " outside state box");
    }
    if (gains.omega.size() != n || gains.theta.size() != n || gains.pi.size() != n)
        throw DimensionError("gains need one entry per agent");
    if (gains.G.rows() != plant.N || gains.G.cols() != plant.N) throw DimensionError("G must be N x N");
    if (!xhat0.empty() && xhat0.size() != n) throw DimensionError("xhat0 needs one block stack per agent");
    if (!uhat0.empty() && uhat0.size() != n) throw DimensionError("uhat0 needs one block stack per agent");
    if (controller.kind == Controller::Kind::khop_consensus && !controller.target_graph)
        throw ConfigError("consensus controller needs a target graph");
    if (controller.kind == Controller::Kind::generic_feedback && !controller.law)
        throw ConfigError("generic feedback controller needs a control law");
}

std::size_t SimConfig::steps() const { return static_cast<std::size_t>(std::llround(T_end / dt)); }

SlidingBands sliding_bands(const Topology& topo, const GainSet& gains, double dt, double band_factor) {
    const std::size_t n = topo.size();
    SlidingBands b;
    b.x.assign(n, 0.0);
    b.u.assign(n, 0.0);
    b.x_target.assign(n, 0.0);
    b.u_target.assign(n, 0.0);
    Vector sx(n, 0.0), su(n, 0.0), tx(n, 0.0), tu(n, 0.0);
    for (AgentId i = 0; i < n; ++i)
        for (AgentId l : topo.neighborhoods[i].members) {
            const double th2 = gains.theta[l] * gains.theta[l];
            const double pi2 = gains.pi[l] * gains.pi[l];
            sx[i] += th2;
            su[i] += pi2;
            tx[l] += th2;
            tu[l] += pi2;
        }
    const double c = band_factor * dt;
    for (AgentId i = 0; i < n; ++i) {
        b.x[i] = std::max(kBandFloor, c * std::sqrt(sx[i]));
        b.u[i] = std::max(kBandFloor, c * std::sqrt(su[i]));
        b.x_target[i] = std::max(kBandFloor, c * std::sqrt(tx[i]));
        b.u_target[i] = std::max(kBandFloor, c * std::sqrt(tu[i]));
    }
    return b;
}

std::optional<double> detect_convergence(std::span<const double> t, std::span<const double> e, double threshold,
                                         double band) {
    if (t.size() != e.size()) throw DimensionError("time and error series differ in length");
    std::optional<double> entry;
    for (std::size_t s = 0; s < e.size(); ++s) {
        if (!(e[s] <= band))
            entry.reset();
        else if (!entry && e[s] < threshold)
            entry = t[s];
    }
    return entry;
}

Simulator::Simulator(SimConfig cfg) : cfg_(std::move(cfg)), topo_((cfg_.validate(), cfg_.graph), cfg_.k) {
    const std::size_t n = topo_.size();
    const std::size_t N = cfg_.plant.N;
    for (AgentId i = 0; i < n; ++i)
        if (topo_.eta(i) > 0 && !(cfg_.gains.theta[i] >= 0.0 && cfg_.gains.pi[i] >= 0.0 && cfg_.gains.omega[i] >= 0.0))
            throw ConfigError("gains of agent " + id(i) + " are missing or negative");
    if (cfg_.controller.kind == Controller::Kind::khop_consensus)
        check_controller_invariant(cfg_.graph, topo_.neighborhoods, *cfg_.controller.target_graph);

    plans_.reserve(n);
    for (AgentId i = 0; i < n; ++i) plans_.push_back(make_observer_plan(cfg_.graph, topo_.neighborhoods[i], topo_.neighborhoods));

    world_.x = cfg_.x0;
    world_.u.assign(n * N, 0.0);
    world_.observers.reserve(n);
    for (AgentId i = 0; i < n; ++i) {
        ObserverState s(i, N, topo_.eta(i));
        if (!cfg_.xhat0.empty()) {
            if (cfg_.xhat0[i].size() != s.x_hat.size()) throw DimensionError("xhat0 of agent " + id(i) + " has wrong size");
            s.x_hat = cfg_.xhat0[i];
        }
        if (!cfg_.uhat0.empty()) {
            if (cfg_.uhat0[i].size() != s.u_hat.size()) throw DimensionError("uhat0 of agent " + id(i) + " has wrong size");
            s.u_hat = cfg_.uhat0[i];
        }
        world_.observers.push_back(std::move(s));
    }
    check_world();
}

std::vector<NeighborMessage> Simulator::broadcast(std::span<const double> u) const {
    const std::size_t n = topo_.size();
    const std::size_t N = cfg_.plant.N;
    const auto block = [N](std::span<const double> v, AgentId j) { return Vector(v.begin() + j * N, v.begin() + (j + 1) * N); };
    std::vector<NeighborMessage> msgs(n);
    for (AgentId j = 0; j < n; ++j) {
        auto& m = msgs[j];
        m.sender = j;
        m.state = block(world_.x, j);
        for (AgentId l : cfg_.graph.neighbors(j)) m.relayed_states.emplace_back(l, block(world_.x, l));
        m.est_members = topo_.neighborhoods[j].members;
        m.est_states = world_.observers[j].x_hat;
        m.est_inputs = world_.observers[j].u_hat;
        if (!u.empty()) {
            m.input = block(u, j);
            for (AgentId l : cfg_.graph.neighbors(j)) m.relayed_inputs.emplace_back(l, block(u, l));
        }
    }
    return msgs;
}

std::vector<NeighborMessage> Simulator::inbox(AgentId i, std::span<const NeighborMessage> all) const {
    std::vector<NeighborMessage> out;
    for (AgentId j : cfg_.graph.neighbors(i)) out.push_back(all[j]);
    return out;
}

Vector Simulator::control(std::span<const NeighborMessage> msgs) const {
    const std::size_t n = topo_.size();
    const std::size_t N = cfg_.plant.N;
    Vector u(n * N, 0.0);
    if (cfg_.controller.kind == Controller::Kind::zero) return u;
    for (AgentId i = 0; i < n; ++i) {
        const auto box = inbox(i, msgs);
        const ControlInput in{i, N, std::span<const double>(world_.x).subspan(i * N, N), box, world_.observers[i],
                              topo_.neighborhoods[i]};
        const Vector ui = cfg_.controller.kind == Controller::Kind::khop_consensus
                              ? consensus_control(in, *cfg_.controller.target_graph)
                              : cfg_.controller.law(in);
        if (ui.size() != N) throw DimensionError("controller of agent " + id(i) + " returned wrong dimension");
        std::copy(ui.begin(), ui.end(), u.begin() + i * N);
    }
    return u;
}

Simulator::RoundResult Simulator::round() const {
    RoundResult r;
    const auto first = broadcast();
    r.u = control(first);
    r.msgs = broadcast(r.u);
    return r;
}

TelemetryRow Simulator::observe(const Vector& u) const {
    const std::size_t n = topo_.size();
    const std::size_t N = cfg_.plant.N;
    TelemetryRow row;
    row.t = world_.t;
    row.x = world_.x;
    row.u = u;
    row.errx.assign(n, 0.0);
    row.erru.assign(n, 0.0);
    row.errx_target.assign(n, 0.0);
    row.erru_target.assign(n, 0.0);
    for (AgentId i = 0; i < n; ++i) {
        const auto& obs = world_.observers[i];
        const auto norms = error_norms(obs, world_.x, u, topo_.neighborhoods[i]);
        row.errx[i] = norms.state;
        row.erru[i] = norms.input;
        const auto& members = topo_.neighborhoods[i].members;
        for (std::size_t s = 0; s < members.size(); ++s) {
            const AgentId l = members[s];
            for (std::size_t c = 0; c < N; ++c) {
                const double ex = world_.x[l * N + c] - obs.x_hat[s * N + c];
                const double eu = u[l * N + c] - obs.u_hat[s * N + c];
                row.errx_target[l] += ex * ex;
                row.erru_target[l] += eu * eu;
            }
        }
    }
    for (double& v : row.errx_target) v = std::sqrt(v);
    for (double& v : row.erru_target) v = std::sqrt(v);
    row.consdist = consensus_distance(world_.x, N);

    if (cfg_.controller.kind == Controller::Kind::khop_consensus) {
        const Graph& target = *cfg_.controller.target_graph;
        double s = 0.0;
        for (AgentId i = 0; i < n; ++i) {
            Vector vi(N, 0.0);
            for (AgentId j : target.neighbors(i)) {
                if (cfg_.graph.has_edge(i, j)) continue;
                const auto est = world_.observers[i].x_block(topo_.neighborhoods[i].slot(j));
                for (std::size_t c = 0; c < N; ++c) vi[c] += world_.x[j * N + c] - est[c];
            }
            for (double v : vi) s += v * v;
        }
        row.vnorm = std::sqrt(s);
    }
    return row;
}

void Simulator::advance(const RoundResult& r) {
    const std::size_t n = topo_.size();
    const std::size_t N = cfg_.plant.N;
    const double dt = cfg_.dt;

    std::vector<ObserverDerivative> ders;
    ders.reserve(n);
    for (AgentId i = 0; i < n; ++i) {
        if (topo_.eta(i) == 0) {
            ders.emplace_back();
            continue;
        }
        const auto box = inbox(i, r.msgs);
        ders.push_back(observer_derivative(world_.observers[i], box, plans_[i], cfg_.plant, cfg_.gains, cfg_.observer));
    }

    Vector x_next = world_.x;
    for (AgentId i = 0; i < n; ++i) {
        const std::span<const double> xi(world_.x.data() + i * N, N);
        const Vector fx = cfg_.plant.eval_f(xi);
        const Vector ax = cfg_.plant.A * xi;
        for (std::size_t c = 0; c < N; ++c) x_next[i * N + c] += dt * (fx[c] + ax[c] + r.u[i * N + c]);
    }
    for (AgentId i = 0; i < n; ++i) {
        auto& obs = world_.observers[i];
        for (std::size_t p = 0; p < obs.x_hat.size(); ++p) {
            obs.x_hat[p] += dt * ders[i].dx_hat[p];
            obs.u_hat[p] += dt * ders[i].du_hat[p];
        }
    }
    world_.x = std::move(x_next);
    world_.u = r.u;
    ++world_.step_index;
    world_.t = static_cast<double>(world_.step_index) * dt;
    check_world();
}

void Simulator::check_world() const {
    const std::size_t N = cfg_.plant.N;
    for (std::size_t p = 0; p < world_.x.size(); ++p) {
        if (!std::isfinite(world_.x[p]))
            throw DivergenceDetected("state of agent " + id(p / N) + " is not finite at t = " + std::to_string(world_.t),
                                     world_.t, p / N);
        if (cfg_.state_box && (world_.x[p] < cfg_.state_box->first || world_.x[p] > cfg_.state_box->second))
            throw StateBoxViolation("state of agent " + id(p / N) + " left the box at t = " + std::to_string(world_.t),
                                    world_.t, p / N);
    }
    for (const auto& obs : world_.observers)
        for (std::size_t p = 0; p < obs.x_hat.size(); ++p)
            if (!std::isfinite(obs.x_hat[p]) || !std::isfinite(obs.u_hat[p]))
                throw DivergenceDetected("estimates of agent " + id(obs.agent) + " are not finite at t = " +
                                             std::to_string(world_.t),
                                         world_.t, obs.agent);
}

void Simulator::step() { advance(round()); }

TelemetryRow Simulator::snapshot() const { return observe(round().u); }

Telemetry Simulator::run(const RowSink& sink, bool keep_rows) {
    const std::size_t n = topo_.size();
    const std::size_t N = cfg_.plant.N;
    const std::size_t steps = cfg_.steps();

    Telemetry tel;
    tel.n = n;
    tel.N = N;
    tel.bands = sliding_bands(topo_, cfg_.gains, cfg_.dt, cfg_.band_factor);
    tel.max_u.assign(n, 0.0);
    tel.max_u_err_target.assign(n, 0.0);
    tel.max_udot.assign(n, 0.0);

    // Full-resolution series for convergence detection.
    Vector times;
    std::vector<Vector> ex(n), eu(n), ext(n), eut(n);
    times.reserve(steps + 1);

    const std::size_t window = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg_.udot_window / cfg_.dt)));
    std::deque<Vector> u_hist;
    double vsup = 0.0;

    for (std::size_t s = 0;; ++s) {
        const RoundResult r = round();
        TelemetryRow row = observe(r.u);
        vsup = std::max(vsup, row.vnorm);
        row.vsup = vsup;

        times.push_back(row.t);
        for (AgentId i = 0; i < n; ++i) {
            ex[i].push_back(row.errx[i]);
            eu[i].push_back(row.erru[i]);
            ext[i].push_back(row.errx_target[i]);
            eut[i].push_back(row.erru_target[i]);
            tel.X_obs = std::max(tel.X_obs, row.errx[i]);
            tel.max_u[i] = std::max(tel.max_u[i], norm2(std::span<const double>(r.u).subspan(i * N, N)));
            tel.max_u_err_target[i] = std::max(tel.max_u_err_target[i], row.erru_target[i]);
        }
        u_hist.push_back(r.u);
        if (u_hist.size() > window + 1) u_hist.pop_front();
        if (u_hist.size() == window + 1) {
            const double w = static_cast<double>(window) * cfg_.dt;
            for (AgentId i = 0; i < n; ++i) {
                double d2 = 0.0;
                for (std::size_t c = 0; c < N; ++c) {
                    const double d = u_hist.back()[i * N + c] - u_hist.front()[i * N + c];
                    d2 += d * d;
                }
                tel.max_udot[i] = std::max(tel.max_udot[i], std::sqrt(d2) / w);
            }
        }

        if (s % cfg_.decimate == 0 || s == steps) {
            if (sink) sink(row);
            if (keep_rows) tel.rows.push_back(std::move(row));
        }
        if (s == steps) break;
        advance(r);
    }

    const auto detect = [&](const Vector& e, double band) {
        const double eps = cfg_.conv_eps.value_or(std::max(1e-3 * e.front(), kBandFloor));
        return detect_convergence(times, e, std::max(eps, band), band);
    };
    tel.Tx_obs.resize(n);
    tel.Tu_obs.resize(n);
    tel.Tx_obs_target.resize(n);
    tel.Tu_obs_target.resize(n);
    for (AgentId i = 0; i < n; ++i) {
        tel.Tx_obs[i] = detect(ex[i], tel.bands.x[i]);
        tel.Tu_obs[i] = detect(eu[i], tel.bands.u[i]);
        tel.Tx_obs_target[i] = detect(ext[i], tel.bands.x_target[i]);
        tel.Tu_obs_target[i] = detect(eut[i], tel.bands.u_target[i]);
    }
    tel.completed = true;
    return tel;
}

std::string csv_header(std::size_t n, std::size_t N) {
    std::string h = "t";
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t c = 1; c <= N; ++c) h += ",x_" + std::to_string(i) + "_" + std::to_string(c);
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t c = 1; c <= N; ++c) h += ",u_" + std::to_string(i) + "_" + std::to_string(c);
    for (std::size_t i = 1; i <= n; ++i) h += ",errx_" + std::to_string(i);
    for (std::size_t i = 1; i <= n; ++i) h += ",erru_" + std::to_string(i);
    h += ",consdist";
    for (std::size_t i = 1; i <= n; ++i) h += ",errxt_" + std::to_string(i);
    for (std::size_t i = 1; i <= n; ++i) h += ",errut_" + std::to_string(i);
    h += ",vnorm,vsup";
    return h;
}

void write_csv_row(std::ostream& out, const TelemetryRow& row) {
    char buf[32];
    const auto put = [&](double v, bool first = false) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        if (!first) out << ',';
        out << buf;
    };
    put(row.t, true);
    for (double v : row.x) put(v);
    for (double v : row.u) put(v);
    for (double v : row.errx) put(v);
    for (double v : row.erru) put(v);
    put(row.consdist);
    for (double v : row.errx_target) put(v);
    for (double v : row.erru_target) put(v);
    put(row.vnorm);
    put(row.vsup);
    out << '\n';
}

TelemetryTable read_csv(std::istream& in, std::size_t n, std::size_t N) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("telemetry CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != csv_header(n, N)) throw ConfigError("telemetry CSV header does not match the scenario");

    TelemetryTable table;
    table.n = n;
    table.N = N;
    const std::size_t width = 1 + 2 * n * N + 2 * n + 1 + 2 * n + 2;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        Vector vals;
        vals.reserve(width);
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != cell.size())
                throw ConfigError("telemetry CSV line " + std::to_string(line_no) + ": bad number '" + cell + "'");
            vals.push_back(v);
        }
        if (vals.size() != width)
            throw ConfigError("telemetry CSV line " + std::to_string(line_no) + " has " + std::to_string(vals.size()) +
                              " columns, expected " + std::to_string(width));
        TelemetryRow r;
        auto it = vals.begin();
        const auto take = [&it](std::size_t count) {
            Vector v(it, it + static_cast<std::ptrdiff_t>(count));
            it += static_cast<std::ptrdiff_t>(count);
            return v;
        };
        r.t = *it++;
        r.x = take(n * N);
        r.u = take(n * N);
        r.errx = take(n);
        r.erru = take(n);
        r.consdist = *it++;
        r.errx_target = take(n);
        r.erru_target = take(n);
        r.vnorm = *it++;
        r.vsup = *it++;
        if (!table.rows.empty() && !(r.t > table.rows.back().t))
            throw ConfigError("telemetry CSV time axis is not increasing at line " + std::to_string(line_no));
        table.rows.push_back(std::move(r));
    }
    if (table.rows.empty()) throw ConfigError("telemetry CSV has no rows");
    return table;
}

}  // namespace khop
