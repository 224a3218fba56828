#include "dagpu/dag.hpp"

#include <algorithm>
#include <functional>
#include <queue>

namespace dagpu {

DagError::DagError(Kind kind, std::vector<NodeId> nodes, const std::string& what)
    : std::runtime_error(what), kind_(kind), nodes_(std::move(nodes)) {}

NodeId DagBuilder::add_node(Op op, double const_value) {
    const auto id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back({id, op, op == Op::Const ? const_value : 0.0});
    return id;
}

NodeId DagBuilder::add_op(Op op, std::span<const NodeId> operands) {
    const NodeId id = add_node(op);
    for (std::size_t s = 0; s < operands.size(); ++s) add_edge(operands[s], id, static_cast<std::uint32_t>(s));
    return id;
}

void DagBuilder::add_edge(NodeId src, NodeId dst, std::uint32_t slot) { edges_.push_back({src, dst, slot}); }

namespace {

std::string node_str(NodeId n) { return "node " + std::to_string(n); }

// Slot-ordered operand lists; assumes slots were validated.
std::vector<std::vector<NodeId>> operand_lists(const DagBuilder& raw) {
    std::vector<std::vector<std::pair<std::uint32_t, NodeId>>> by_slot(raw.size());
    for (const Edge& e : raw.edges()) by_slot[e.dst].push_back({e.slot, e.src});
    std::vector<std::vector<NodeId>> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        std::sort(by_slot[i].begin(), by_slot[i].end());
        for (auto& [slot, src] : by_slot[i]) out[i].push_back(src);
    }
    return out;
}

}  // namespace

std::optional<DagError> validate(const DagBuilder& raw) {
    using K = DagError::Kind;
    const std::size_t n = raw.size();
    for (const Edge& e : raw.edges()) {
        if (e.src >= n || e.dst >= n)
            return DagError(K::BadNode, {e.src >= n ? e.src : e.dst}, "edge references unknown node");
    }

    std::vector<std::vector<std::uint32_t>> slots(n);
    for (const Edge& e : raw.edges()) slots[e.dst].push_back(e.slot);
    for (NodeId v = 0; v < n; ++v) {
        auto& s = slots[v];
        std::sort(s.begin(), s.end());
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] != i)
                return DagError(K::BadSlot, {v}, node_str(v) + ": operand slots must be distinct and dense from 0");
        }
    }

    for (NodeId v = 0; v < n; ++v) {
        const Op op = raw.nodes()[v].op;
        const std::size_t indeg = slots[v].size();
        if (!is_compute(op) && indeg != 0)
            return DagError(K::BadArity, {v}, node_str(v) + ": " + std::string(op_name(op)) + " takes no operands");
        if (is_compute(op) && indeg == 0)
            return DagError(K::BadArity, {v}, node_str(v) + ": compute node without operands");
    }

    // Kahn; leftover nodes lie on or behind a cycle.
    std::vector<std::vector<NodeId>> succ(n);
    std::vector<std::size_t> indeg(n, 0);
    for (const Edge& e : raw.edges()) {
        succ[e.src].push_back(e.dst);
        ++indeg[e.dst];
    }
    std::vector<NodeId> stack;
    for (NodeId v = 0; v < n; ++v)
        if (indeg[v] == 0) stack.push_back(v);
    std::size_t seen = 0;
    while (!stack.empty()) {
        const NodeId v = stack.back();
        stack.pop_back();
        ++seen;
        for (NodeId w : succ[v])
            if (--indeg[w] == 0) stack.push_back(w);
    }
    if (seen == n) return std::nullopt;

    // Walk predecessors among remaining nodes until one repeats.
    std::vector<std::vector<NodeId>> pred(n);
    for (const Edge& e : raw.edges())
        if (indeg[e.src] > 0 && indeg[e.dst] > 0) pred[e.dst].push_back(e.src);
    NodeId start = 0;
    while (indeg[start] == 0) ++start;
    std::vector<int> pos(n, -1);
    std::vector<NodeId> walk;
    NodeId cur = start;
    while (pos[cur] < 0) {
        pos[cur] = static_cast<int>(walk.size());
        walk.push_back(cur);
        cur = *std::min_element(pred[cur].begin(), pred[cur].end());
    }
    std::vector<NodeId> cycle(walk.begin() + pos[cur], walk.end());
    std::reverse(cycle.begin(), cycle.end());
    std::string msg = "cycle detected:";
    for (NodeId c : cycle) msg += " " + std::to_string(c);
    return DagError(K::CycleDetected, cycle, msg);
}

Dag DagBuilder::build() const {
    if (auto err = validate(*this)) throw *err;
    Dag dag;
    const std::size_t n = nodes_.size();
    dag.nodes_ = nodes_;
    const auto ops = operand_lists(*this);

    dag.operand_offsets_.assign(n + 1, 0);
    for (std::size_t v = 0; v < n; ++v) dag.operand_offsets_[v + 1] = dag.operand_offsets_[v] + ops[v].size();
    dag.operand_list_.reserve(dag.operand_offsets_[n]);
    for (const auto& l : ops) dag.operand_list_.insert(dag.operand_list_.end(), l.begin(), l.end());

    std::vector<std::vector<NodeId>> cons(n);
    for (NodeId v = 0; v < n; ++v)
        for (NodeId u : ops[v])
            if (cons[u].empty() || cons[u].back() != v) cons[u].push_back(v);
    dag.consumer_offsets_.assign(n + 1, 0);
    for (std::size_t v = 0; v < n; ++v) dag.consumer_offsets_[v + 1] = dag.consumer_offsets_[v] + cons[v].size();
    dag.consumer_list_.reserve(dag.consumer_offsets_[n]);
    for (const auto& l : cons) dag.consumer_list_.insert(dag.consumer_list_.end(), l.begin(), l.end());

    std::vector<std::size_t> indeg(n);
    std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
    for (NodeId v = 0; v < n; ++v) {
        indeg[v] = ops[v].size();
        if (indeg[v] == 0) ready.push(v);
    }
    dag.topo_.reserve(n);
    while (!ready.empty()) {
        const NodeId v = ready.top();
        ready.pop();
        dag.topo_.push_back(v);
        for (NodeId w : cons[v]) {
            // one decrement per edge, so account for repeated operands
            const auto mult = static_cast<std::size_t>(std::count(ops[w].begin(), ops[w].end(), v));
            indeg[w] -= mult;
            if (indeg[w] == 0) ready.push(w);
        }
    }
    return dag;
}

std::size_t Dag::compute_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return is_compute(n.op); }));
}

bool Dag::is_binary() const {
    for (NodeId v = 0; v < size(); ++v)
        if (operands(v).size() > 2) return false;
    return true;
}

std::vector<NodeId> Dag::sinks() const {
    std::vector<NodeId> out;
    for (NodeId v = 0; v < size(); ++v)
        if (consumers(v).empty()) out.push_back(v);
    return out;
}

DagBuilder Dag::to_builder() const {
    DagBuilder b;
    for (const Node& n : nodes_) b.add_node(n.op, n.const_value);
    for (NodeId v = 0; v < size(); ++v) {
        const auto ops = operands(v);
        for (std::size_t s = 0; s < ops.size(); ++s) b.add_edge(ops[s], v, static_cast<std::uint32_t>(s));
    }
    return b;
}

DagMetrics metrics(const Dag& dag) {
    DagMetrics m;
    m.node_count = dag.size();
    std::vector<std::size_t> depth(dag.size(), 0);
    for (NodeId v : dag.topo_order()) {
        std::size_t d = 0;
        for (NodeId u : dag.operands(v)) d = std::max(d, depth[u]);
        depth[v] = d + 1;
        m.critical_path_len = std::max(m.critical_path_len, depth[v]);
    }
    m.parallelism = parallelism_of(m.node_count, m.critical_path_len);
    return m;
}

Dag normalize_arity(const Dag& dag) {
    if (dag.is_binary()) return dag;
    DagBuilder b;
    for (const Node& n : dag.nodes()) b.add_node(n.op, n.const_value);
    for (NodeId v = 0; v < dag.size(); ++v) {
        const auto ops = dag.operands(v);
        if (ops.size() <= 2) {
            for (std::size_t s = 0; s < ops.size(); ++s) b.add_edge(ops[s], v, static_cast<std::uint32_t>(s));
            continue;
        }
        const Op op = dag.op(v);
        if (!is_compute(op))
            throw DagError(DagError::Kind::NonAssociativeWideNode, {v}, "wide node with non-decomposable op");
        // Pairwise reduction, level by level; the final pair feeds the original node.
        std::vector<NodeId> level(ops.begin(), ops.end());
        while (level.size() > 2) {
            std::vector<NodeId> next;
            next.reserve((level.size() + 1) / 2);
            for (std::size_t i = 0; i + 1 < level.size(); i += 2) next.push_back(b.add_op(op, {level[i], level[i + 1]}));
            if (level.size() % 2) next.push_back(level.back());
            level = std::move(next);
        }
        b.add_edge(level[0], v, 0);
        b.add_edge(level[1], v, 1);
    }
    return b.build();
}

std::vector<ArithModel::Word> evaluate_reference(const Dag& dag, const InputBinding& inputs, const ArithModel& model) {
    std::vector<ArithModel::Word> value(dag.size(), 0);
    for (NodeId v : dag.topo_order()) {
        const Node& n = dag.node(v);
        switch (n.op) {
            case Op::Input: {
                auto it = inputs.find(v);
                if (it == inputs.end())
                    throw DagError(DagError::Kind::MissingInput, {v}, node_str(v) + ": input not bound");
                value[v] = model.encode(it->second);
                break;
            }
            case Op::Const: value[v] = model.encode(n.const_value); break;
            default: {
                const auto ops = dag.operands(v);
                ArithModel::Word acc = value[ops[0]];
                for (std::size_t s = 1; s < ops.size(); ++s) acc = model.apply(n.op, acc, value[ops[s]]);
                value[v] = acc;
            }
        }
    }
    return value;
}

}  // namespace dagpu
