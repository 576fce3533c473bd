#include "khop/graph.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "khop/errors.hpp"

namespace khop {

namespace {

constexpr std::size_t kUnreachable = std::numeric_limits<std::size_t>::max();

bool sorted_contains(const std::vector<AgentId>& v, AgentId x) { return std::binary_search(v.begin(), v.end(), x); }

std::size_t intersection_size(const std::vector<AgentId>& a, const std::vector<AgentId>& b) {
    std::size_t count = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia < *ib)
            ++ia;
        else if (*ib < *ia)
            ++ib;
        else {
            ++count;
            ++ia;
            ++ib;
        }
    }
    return count;
}

}  // namespace

Graph::Graph(std::size_t n, std::span<const Edge> edges) : n_(n), adjacency_(n) {
    if (n < 2) throw GraphError("graph needs at least 2 agents");
    for (auto [a, b] : edges) {
        if (a >= n || b >= n)
            throw IndexOutOfRange("edge {" + std::to_string(a + 1) + "," + std::to_string(b + 1) +
                                  "} references an agent outside 1.." + std::to_string(n));
        if (a == b) throw GraphError("self-loop on agent " + std::to_string(a + 1));
        if (a > b) std::swap(a, b);
        edges_.emplace_back(a, b);
    }
    std::sort(edges_.begin(), edges_.end());
    if (auto dup = std::adjacent_find(edges_.begin(), edges_.end()); dup != edges_.end())
        throw GraphError("duplicate edge {" + std::to_string(dup->first + 1) + "," +
                         std::to_string(dup->second + 1) + "}");
    for (auto [a, b] : edges_) {
        adjacency_[a].push_back(b);
        adjacency_[b].push_back(a);
    }
    for (auto& adj : adjacency_) std::sort(adj.begin(), adj.end());
}

Graph::Graph(std::size_t n, std::initializer_list<Edge> edges)
    : Graph(n, std::span<const Edge>(edges.begin(), edges.size())) {}

Graph Graph::parse_edge_list(std::istream& in) {
    std::string line;
    std::size_t n = 0;
    bool have_n = false;
    std::vector<Edge> edges;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        if (!have_n) {
            long long v = 0;
            if (!(ls >> v) || v < 2) throw GraphError("edge list line " + std::to_string(lineno) + ": bad agent count");
            n = static_cast<std::size_t>(v);
            have_n = true;
            continue;
        }
        long long a = 0;
        long long b = 0;
        if (!(ls >> a >> b)) throw GraphError("edge list line " + std::to_string(lineno) + ": expected 'i j'");
        if (a < 1 || b < 1)
            throw IndexOutOfRange("edge list line " + std::to_string(lineno) + ": agent ids are 1-based");
        edges.emplace_back(static_cast<AgentId>(a - 1), static_cast<AgentId>(b - 1));
    }
    if (!have_n) throw GraphError("edge list is empty");
    return Graph(n, edges);
}

Graph Graph::load_edge_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open edge list '" + path + "'");
    return parse_edge_list(in);
}

void Graph::check_index(AgentId i) const {
    if (i >= n_) throw IndexOutOfRange("agent " + std::to_string(i + 1) + " outside 1.." + std::to_string(n_));
}

const std::vector<AgentId>& Graph::neighbors(AgentId i) const {
    check_index(i);
    return adjacency_[i];
}

bool Graph::has_edge(AgentId i, AgentId j) const {
    check_index(i);
    check_index(j);
    return sorted_contains(adjacency_[i], j);
}

std::vector<std::size_t> Graph::distances(AgentId source) const {
    check_index(source);
    std::vector<std::size_t> dist(n_, kUnreachable);
    std::vector<AgentId> queue{source};
    dist[source] = 0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
        const AgentId u = queue[head];
        for (AgentId v : adjacency_[u])
            if (dist[v] == kUnreachable) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
    }
    return dist;
}

bool Graph::connected() const {
    const auto d = distances(0);
    return std::none_of(d.begin(), d.end(), [](std::size_t x) { return x == kUnreachable; });
}

void Graph::require_connected() const {
    if (!connected()) throw GraphNotConnected("communication graph is not connected");
}

Matrix Graph::laplacian() const {
    Matrix l(n_, n_);
    for (AgentId i = 0; i < n_; ++i) {
        l(i, i) = static_cast<double>(adjacency_[i].size());
        for (AgentId j : adjacency_[i]) l(i, j) = -1.0;
    }
    return l;
}

bool KHopNeighborhood::contains(AgentId j) const { return sorted_contains(members, j); }

std::size_t KHopNeighborhood::slot(AgentId j) const {
    const auto it = std::lower_bound(members.begin(), members.end(), j);
    if (it == members.end() || *it != j)
        throw IndexOutOfRange("agent " + std::to_string(j + 1) + " is not a k-hop neighbor of agent " +
                              std::to_string(agent + 1));
    return static_cast<std::size_t>(it - members.begin());
}

KHopNeighborhood khop_set(const Graph& g, AgentId i, std::size_t k) {
    if (k < 2) throw GraphError("hop horizon k must be >= 2");
    if (i >= g.size()) throw IndexOutOfRange("agent " + std::to_string(i + 1) + " outside 1.." + std::to_string(g.size()));
    g.require_connected();
    KHopNeighborhood nb;
    nb.agent = i;
    nb.k = k;
    nb.one_hop = g.neighbors(i);
    const auto dist = g.distances(i);
    for (AgentId j = 0; j < g.size(); ++j)
        if (dist[j] >= 2 && dist[j] <= k) nb.members.push_back(j);
    return nb;
}

std::vector<KHopNeighborhood> khop_sets(const Graph& g, std::size_t k) {
    std::vector<KHopNeighborhood> out;
    out.reserve(g.size());
    for (AgentId i = 0; i < g.size(); ++i) out.push_back(khop_set(g, i, k));
    return out;
}

ObserverCoupling coupling_matrices(const Graph& g, const KHopNeighborhood& nb) {
    const std::size_t eta = nb.eta();
    if (eta == 0)
        throw EmptyNeighborhood("agent " + std::to_string(nb.agent + 1) + " has no k-hop neighbors");
    ObserverCoupling c;
    c.L = Matrix(eta, eta);
    c.H = Matrix(eta, eta);
    for (std::size_t p = 0; p < eta; ++p) {
        const auto& adj = g.neighbors(nb.members[p]);
        for (std::size_t q = 0; q < eta; ++q) {
            if (p != q && sorted_contains(adj, nb.members[q])) {
                c.L(p, q) = -1.0;
                c.L(p, p) += 1.0;
            }
        }
        c.H(p, p) = static_cast<double>(intersection_size(adj, nb.one_hop));
    }
    c.M = c.L + c.H;
    auto eig = sym_eig(SymMatrix(c.M));
    c.eigenvalues = std::move(eig.values);
    c.lambda_min = c.eigenvalues.front();
    c.lambda_max = c.eigenvalues.back();
    return c;
}

Vector SelectionMap::gather_khop(std::span<const double> stacked) const {
    Vector out;
    out.reserve(khop_rows.size() * state_dim);
    for (AgentId j : khop_rows) {
        if ((j + 1) * state_dim > stacked.size()) throw DimensionError("selection row outside stacked vector");
        out.insert(out.end(), stacked.begin() + j * state_dim, stacked.begin() + (j + 1) * state_dim);
    }
    return out;
}

Vector SelectionMap::gather_onehop(std::span<const double> stacked) const {
    Vector out;
    out.reserve(onehop_rows.size() * state_dim);
    for (AgentId j : onehop_rows) {
        if ((j + 1) * state_dim > stacked.size()) throw DimensionError("selection row outside stacked vector");
        out.insert(out.end(), stacked.begin() + j * state_dim, stacked.begin() + (j + 1) * state_dim);
    }
    return out;
}

SelectionMap selection_map(const KHopNeighborhood& nb, std::size_t state_dim) {
    return SelectionMap{nb.agent, nb.members, nb.one_hop, state_dim};
}

std::vector<Lemma1AgentReport> check_lemma1(const Graph& g, std::size_t k) {
    g.require_connected();
    std::vector<Lemma1AgentReport> reports;
    for (AgentId j = 0; j < g.size(); ++j) {
        const auto nb = khop_set(g, j, k);
        Lemma1AgentReport rep;
        rep.agent = j;
        for (AgentId i : nb.members) {
            const auto& adj = g.neighbors(i);
            Lemma1MemberCheck m{i, intersection_size(adj, nb.members), intersection_size(adj, nb.one_hop)};
            if (m.common_khop == 0 && m.common_onehop == 0)
                throw InternalConsistencyError("agent " + std::to_string(i + 1) +
                                               " has no neighbor in the k-hop or 1-hop set of agent " +
                                               std::to_string(j + 1));
            rep.members.push_back(m);
        }
        // Components of the induced subgraph via BFS restricted to members.
        std::vector<bool> seen(nb.eta(), false);
        for (std::size_t s = 0; s < nb.eta(); ++s) {
            if (seen[s]) continue;
            std::vector<std::size_t> comp{s};
            seen[s] = true;
            for (std::size_t h = 0; h < comp.size(); ++h)
                for (AgentId w : g.neighbors(nb.members[comp[h]]))
                    if (nb.contains(w) && !seen[nb.slot(w)]) {
                        seen[nb.slot(w)] = true;
                        comp.push_back(nb.slot(w));
                    }
            bool anchored = false;
            std::vector<AgentId> ids;
            for (std::size_t slot : comp) {
                ids.push_back(nb.members[slot]);
                const auto& m = rep.members[slot];
                // A component of one member has no k-hop neighbor inside; the
                // strict statement then reduces to having a common 1-hop neighbor.
                anchored |= m.common_onehop > 0 && (m.common_khop > 0 || comp.size() == 1);
            }
            std::sort(ids.begin(), ids.end());
            if (!anchored)
                throw InternalConsistencyError("a component of the k-hop subgraph of agent " +
                                               std::to_string(j + 1) + " has no member adjacent to its 1-hop set");
            rep.components.push_back(std::move(ids));
            rep.component_anchored.push_back(anchored);
        }
        reports.push_back(std::move(rep));
    }
    return reports;
}

ErrorPermutation::ErrorPermutation(std::span<const KHopNeighborhood> nbs, std::size_t state_dim)
    : state_dim_(state_dim), target_offset_(nbs.size(), 0) {
    const std::size_t n = nbs.size();
    // Per-target block counts: target l is estimated by every agent whose members contain l.
    std::vector<std::size_t> per_target(n, 0);
    for (const auto& nb : nbs)
        for (AgentId l : nb.members) {
            if (l >= n) throw DimensionError("neighborhood member outside agent range");
            ++per_target[l];
        }
    std::size_t off = 0;
    for (AgentId l = 0; l < n; ++l) {
        target_offset_[l] = off;
        off += per_target[l] * state_dim;
    }
    // Estimators of each target appear in ascending id order (the order in
    // which the outer loop below visits them).
    std::vector<std::size_t> fill(n, 0);
    to_target_.reserve(off);
    for (const auto& nb : nbs)
        for (AgentId l : nb.members) {
            const std::size_t base = target_offset_[l] + fill[l]++ * state_dim;
            for (std::size_t c = 0; c < state_dim; ++c) to_target_.push_back(base + c);
        }
}

Vector ErrorPermutation::to_target(std::span<const double> by_estimator) const {
    if (by_estimator.size() != to_target_.size())
        throw DimensionError("reorder_errors: expected " + std::to_string(to_target_.size()) + " entries, got " +
                             std::to_string(by_estimator.size()));
    Vector out(by_estimator.size());
    for (std::size_t k = 0; k < to_target_.size(); ++k) out[to_target_[k]] = by_estimator[k];
    return out;
}

Vector ErrorPermutation::to_estimator(std::span<const double> by_target) const {
    if (by_target.size() != to_target_.size())
        throw DimensionError("reorder_errors: expected " + std::to_string(to_target_.size()) + " entries, got " +
                             std::to_string(by_target.size()));
    Vector out(by_target.size());
    for (std::size_t k = 0; k < to_target_.size(); ++k) out[k] = by_target[to_target_[k]];
    return out;
}

Vector reorder_errors(std::span<const KHopNeighborhood> nbs, std::span<const double> stacked_by_estimator,
                      std::size_t state_dim) {
    return ErrorPermutation(nbs, state_dim).to_target(stacked_by_estimator);
}

}  // namespace khop
