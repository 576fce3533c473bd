#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "khop/dense.hpp"

namespace khop {

/// Agents are indexed 0..n-1 in the API; the text formats use 1-based ids.
using AgentId = std::size_t;
using Edge = std::pair<AgentId, AgentId>;

/// Undirected simple graph over n agents.
class Graph {
public:
    /// Validates indices, self-loops and duplicates. Connectivity is not
    /// required here; observer constructions check it.
    Graph(std::size_t n, std::span<const Edge> edges);
    Graph(std::size_t n, std::initializer_list<Edge> edges);

    /// Edge-list text: first line "n", then "i j" per line (1-based).
    /// Blank lines and lines starting with '#' are skipped.
    static Graph parse_edge_list(std::istream& in);
    static Graph load_edge_list(const std::string& path);

    std::size_t size() const noexcept { return n_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    /// Sorted ascending.
    const std::vector<AgentId>& neighbors(AgentId i) const;
    bool has_edge(AgentId i, AgentId j) const;
    std::size_t degree(AgentId i) const { return neighbors(i).size(); }

    bool connected() const;
    void require_connected() const;

    /// BFS hop distances from `source`; unreachable agents get SIZE_MAX.
    std::vector<std::size_t> distances(AgentId source) const;

    /// Dense Laplacian D - A.
    Matrix laplacian() const;

private:
    void check_index(AgentId i) const;

    std::size_t n_;
    std::vector<Edge> edges_;  // normalized first < second, sorted
    std::vector<std::vector<AgentId>> adjacency_;
};

/// Agents at hop distance 2..k from `agent`, ascending.
struct KHopNeighborhood {
    AgentId agent = 0;
    std::size_t k = 2;
    std::vector<AgentId> members;
    std::vector<AgentId> one_hop;

    std::size_t eta() const noexcept { return members.size(); }
    bool contains(AgentId j) const;
    /// Position of j inside `members`; throws IndexOutOfRange when absent.
    std::size_t slot(AgentId j) const;
};

KHopNeighborhood khop_set(const Graph& g, AgentId i, std::size_t k);
std::vector<KHopNeighborhood> khop_sets(const Graph& g, std::size_t k);

/// M = L + H for one agent's k-hop neighborhood, with its spectrum.
struct ObserverCoupling {
    Matrix L;  // Laplacian of the subgraph induced by the members
    Matrix H;  // diag(|N(member) ∩ N(agent)|)
    Matrix M;
    Vector eigenvalues;  // ascending
    double lambda_min = 0.0;
    double lambda_max = 0.0;
};

ObserverCoupling coupling_matrices(const Graph& g, const KHopNeighborhood& nb);

/// Row selectors standing in for the binary selection matrices; rows are
/// agent ids, each expanding to `state_dim` consecutive components.
struct SelectionMap {
    AgentId agent = 0;
    std::vector<AgentId> khop_rows;
    std::vector<AgentId> onehop_rows;
    std::size_t state_dim = 1;

    Vector gather_khop(std::span<const double> stacked) const;
    Vector gather_onehop(std::span<const double> stacked) const;
};

SelectionMap selection_map(const KHopNeighborhood& nb, std::size_t state_dim);

struct Lemma1MemberCheck {
    AgentId member = 0;
    std::size_t common_khop = 0;    // |N(member) ∩ Nk(agent)|
    std::size_t common_onehop = 0;  // |N(member) ∩ N(agent)|
};

struct Lemma1AgentReport {
    AgentId agent = 0;
    std::vector<Lemma1MemberCheck> members;
    /// Connected components of the induced subgraph, as member lists.
    std::vector<std::vector<AgentId>> components;
    /// Per component: some member has both intersections non-empty.
    std::vector<bool> component_anchored;
};

/// Structural neighborhood check for every agent. Throws
/// InternalConsistencyError on violation (cannot happen on connected graphs).
std::vector<Lemma1AgentReport> check_lemma1(const Graph& g, std::size_t k);

/// Permutation between per-estimator stacking [e^1; ...; e^n] (agent i's
/// errors on its members) and per-target stacking [e_1; ...; e_n] (errors on
/// agent l made by each of its k-hop neighbors).
class ErrorPermutation {
public:
    ErrorPermutation(std::span<const KHopNeighborhood> nbs, std::size_t state_dim);

    std::size_t size() const noexcept { return to_target_.size(); }
    std::size_t state_dim() const noexcept { return state_dim_; }

    Vector to_target(std::span<const double> by_estimator) const;
    Vector to_estimator(std::span<const double> by_target) const;

    /// Offset of the block (target, estimator) in the per-target stacking.
    std::size_t target_block_offset(AgentId target) const { return target_offset_[target]; }

private:
    std::size_t state_dim_;
    std::vector<std::size_t> target_offset_;
    std::vector<std::size_t> to_target_;  // estimator-order index -> target-order index
};

Vector reorder_errors(std::span<const KHopNeighborhood> nbs, std::span<const double> stacked_by_estimator,
                      std::size_t state_dim);

}  // namespace khop
