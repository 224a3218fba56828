#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dagpu/arith.hpp"

namespace dagpu {

using NodeId = std::uint32_t;

struct Node {
    NodeId id = 0;
    Op op = Op::Input;
    double const_value = 0.0;  // CONST only
};

struct Edge {
    NodeId src = 0;
    NodeId dst = 0;
    std::uint32_t slot = 0;
};

class DagError : public std::runtime_error {
public:
    enum class Kind { CycleDetected, BadArity, BadSlot, BadNode, MissingInput, NonAssociativeWideNode, EmptyGraph };

    DagError(Kind kind, std::vector<NodeId> nodes, const std::string& what);

    Kind kind() const { return kind_; }
    /// The offending node, or for CycleDetected one full cycle in edge order.
    const std::vector<NodeId>& nodes() const { return nodes_; }

private:
    Kind kind_;
    std::vector<NodeId> nodes_;
};

class Dag;

/// Mutable, unvalidated graph.  Node ids are dense and assigned in insertion order.
class DagBuilder {
public:
    NodeId add_node(Op op, double const_value = 0.0);
    NodeId add_input() { return add_node(Op::Input); }
    NodeId add_const(double value) { return add_node(Op::Const, value); }
    /// Adds a compute node whose operand slots follow the order of `operands`.
    NodeId add_op(Op op, std::span<const NodeId> operands);
    NodeId add_op(Op op, std::initializer_list<NodeId> operands) {
        return add_op(op, std::span<const NodeId>(operands.begin(), operands.size()));
    }
    void add_edge(NodeId src, NodeId dst, std::uint32_t slot);

    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<Edge>& edges() const { return edges_; }
    std::size_t size() const { return nodes_.size(); }

    /// Validates and freezes; throws DagError on the first violation.
    Dag build() const;

private:
    std::vector<Node> nodes_;
    std::vector<Edge> edges_;
};

/// Returns the first violation found, or nullopt when the graph is a valid DAG.
std::optional<DagError> validate(const DagBuilder& raw);

/// Immutable computational DAG with operand lists in slot order.
class Dag {
public:
    Dag() = default;

    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_[id]; }
    Op op(NodeId id) const { return nodes_[id].op; }
    const std::vector<Node>& nodes() const { return nodes_; }

    std::span<const NodeId> operands(NodeId id) const {
        return {operand_list_.data() + operand_offsets_[id], operand_offsets_[id + 1] - operand_offsets_[id]};
    }
    /// Distinct consumers, ascending id.
    std::span<const NodeId> consumers(NodeId id) const {
        return {consumer_list_.data() + consumer_offsets_[id], consumer_offsets_[id + 1] - consumer_offsets_[id]};
    }
    /// Deterministic topological order (Kahn, smallest ready id first).
    const std::vector<NodeId>& topo_order() const { return topo_; }

    std::size_t edge_count() const { return operand_list_.size(); }
    std::size_t compute_count() const;
    /// True when every compute node has in-degree <= 2.
    bool is_binary() const;
    /// Nodes without consumers, ascending id.
    std::vector<NodeId> sinks() const;

    /// Rebuilds the mutable form (for transformations).
    DagBuilder to_builder() const;

private:
    friend class DagBuilder;

    std::vector<Node> nodes_;
    std::vector<std::size_t> operand_offsets_;
    std::vector<NodeId> operand_list_;
    std::vector<std::size_t> consumer_offsets_;
    std::vector<NodeId> consumer_list_;
    std::vector<NodeId> topo_;
};

struct DagMetrics {
    std::size_t node_count = 0;
    std::size_t critical_path_len = 0;  // nodes on the longest path
    std::size_t parallelism = 0;        // floor(n / l)
};

DagMetrics metrics(const Dag& dag);

/// floor(n / l).
constexpr std::size_t parallelism_of(std::size_t n, std::size_t l) { return l == 0 ? 0 : n / l; }

/// Replaces every compute node with more than two operands by a balanced
/// binary tree of the same op.  The original node id stays the tree root, new
/// interior nodes are appended after all existing ids.
Dag normalize_arity(const Dag& dag);

using InputBinding = std::unordered_map<NodeId, double>;

/// Sequential oracle: evaluates every node in topological order under `model`.
/// Nodes with a single operand pass it through unchanged.  Throws
/// DagError(MissingInput) if an INPUT node is unbound.
std::vector<ArithModel::Word> evaluate_reference(const Dag& dag, const InputBinding& inputs, const ArithModel& model);

}  // namespace dagpu
