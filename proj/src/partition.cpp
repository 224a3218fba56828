#include "dagpu/partition.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>

namespace dagpu {

namespace {

std::vector<std::vector<NodeId>> compute_preds(const Dag& dag) {
    std::vector<std::vector<NodeId>> preds(dag.size());
    for (NodeId v = 0; v < dag.size(); ++v) {
        if (!is_compute(dag.op(v))) continue;
        for (NodeId u : dag.operands(v))
            if (is_compute(dag.op(u)) && std::find(preds[v].begin(), preds[v].end(), u) == preds[v].end())
                preds[v].push_back(u);
    }
    return preds;
}

// Depth-first post-order rank over compute nodes, from sinks in ascending id,
// operands visited in ascending id.
std::vector<std::uint32_t> dfs_rank(const Dag& dag, const std::vector<std::vector<NodeId>>& preds) {
    const std::size_t n = dag.size();
    std::vector<std::uint32_t> rank(n, std::numeric_limits<std::uint32_t>::max());
    std::vector<std::vector<NodeId>> sorted(n);
    for (NodeId v = 0; v < n; ++v) {
        sorted[v] = preds[v];
        std::sort(sorted[v].begin(), sorted[v].end());
    }
    std::vector<char> visited(n, 0);
    std::uint32_t next = 0;
    std::vector<std::pair<NodeId, std::size_t>> stack;
    for (NodeId root = 0; root < n; ++root) {
        if (!is_compute(dag.op(root)) || visited[root]) continue;
        bool sink = true;
        for (NodeId w : dag.consumers(root))
            if (is_compute(dag.op(w))) sink = false;
        if (!sink) continue;
        visited[root] = 1;
        stack.push_back({root, 0});
        while (!stack.empty()) {
            auto& [v, i] = stack.back();
            if (i < sorted[v].size()) {
                const NodeId u = sorted[v][i++];
                if (!visited[u]) {
                    visited[u] = 1;
                    stack.push_back({u, 0});
                }
            } else {
                rank[v] = next++;
                stack.pop_back();
            }
        }
    }
    return rank;
}

// Longest compute-node path from v to a sink, counting v.
std::vector<std::uint32_t> heights(const Dag& dag) {
    std::vector<std::uint32_t> h(dag.size(), 0);
    const auto& topo = dag.topo_order();
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        const NodeId v = *it;
        if (!is_compute(dag.op(v))) continue;
        std::uint32_t best = 0;
        for (NodeId w : dag.consumers(v)) best = std::max(best, h[w]);
        h[v] = best + 1;
    }
    return h;
}

struct Trial {
    std::vector<std::vector<NodeId>> subgraphs;
    std::size_t placed = 0;
    std::size_t max_size = 0;
    double imbalance = 0;
};

// max/mean over the non-empty subgraphs, or over `min_count` of them when
// fewer are non-empty.
double imbalance_of(const std::vector<std::vector<NodeId>>& subgraphs, std::size_t min_count = 0) {
    std::size_t total = 0, nonempty = 0, mx = 0;
    for (const auto& s : subgraphs) {
        if (s.empty()) continue;
        total += s.size();
        ++nonempty;
        mx = std::max(mx, s.size());
    }
    if (nonempty == 0) return 1.0;
    nonempty = std::max(nonempty, min_count);
    return static_cast<double>(mx) * static_cast<double>(nonempty) / static_cast<double>(total);
}

class SuperlayerBuilder {
public:
    SuperlayerBuilder(const Dag& dag, std::size_t num_cus)
        : dag_(dag),
          num_cus_(num_cus),
          preds_(compute_preds(dag)),
          rank_(dfs_rank(dag, preds_)),
          height_(heights(dag)),
          remaining_(dag.size(), 0),
          placed_(dag.size(), 0),
          owner_(dag.size(), -1),
          blocked_(dag.size(), 0),
          pending_(dag.size(), 0),
          taken_(dag.size(), 0),
          touched_flag_(dag.size(), 0) {
        for (NodeId v = 0; v < dag.size(); ++v) {
            if (!is_compute(dag.op(v))) continue;
            ++unplaced_;
            remaining_[v] = static_cast<std::uint32_t>(preds_[v].size());
            if (remaining_[v] == 0) frontier_.push_back(v);
        }
        compute_consumers_.resize(dag.size());
        for (NodeId v = 0; v < dag.size(); ++v)
            for (NodeId u : preds_[v]) compute_consumers_[u].push_back(v);
    }

    std::size_t unplaced() const { return unplaced_; }

    /// Unplaced nodes over the longest unplaced path, capped at the CU count.
    std::size_t width() const {
        std::uint32_t depth = 1;
        for (NodeId v : frontier_) depth = std::max(depth, height_[v]);
        return std::clamp<std::size_t>(unplaced_ / depth, 1, num_cus_);
    }

    Trial trial(std::size_t cap, std::size_t min_count) {
        sort_frontier();
        Trial t;
        t.subgraphs.assign(num_cus_, {});
        std::size_t free_pos = 0;
        using Item = std::pair<std::uint32_t, NodeId>;
        for (std::size_t c = 0; c < num_cus_; ++c) {
            std::priority_queue<Item, std::vector<Item>, std::greater<>> local;
            auto& sub = t.subgraphs[c];
            while (sub.size() < cap) {
                NodeId v;
                if (!local.empty()) {
                    v = local.top().second;
                    local.pop();
                } else {
                    while (free_pos < frontier_.size() && taken_[frontier_[free_pos]]) ++free_pos;
                    if (free_pos == frontier_.size()) break;
                    v = frontier_[free_pos++];
                }
                take(v, sub);
                for (NodeId w : compute_consumers_[v]) {
                    touch(w);
                    if (owner_[w] < 0)
                        owner_[w] = static_cast<int>(c);
                    else if (owner_[w] != static_cast<int>(c))
                        blocked_[w] = 1;
                    if (--pending_[w] == 0 && !blocked_[w]) local.push({rank_[w], w});
                }
            }
        }
        // Everything ready at the start must land in this superlayer.
        using Load = std::pair<std::size_t, std::size_t>;
        std::priority_queue<Load, std::vector<Load>, std::greater<>> loads;
        for (std::size_t c = 0; c < num_cus_; ++c) loads.push({t.subgraphs[c].size(), c});
        for (NodeId v : frontier_) {
            if (taken_[v]) continue;
            auto [sz, c] = loads.top();
            loads.pop();
            take(v, t.subgraphs[c]);
            loads.push({sz + 1, c});
        }
        for (const auto& s : t.subgraphs) {
            t.placed += s.size();
            t.max_size = std::max(t.max_size, s.size());
        }
        t.imbalance = imbalance_of(t.subgraphs, min_count);
        reset();
        return t;
    }

    void commit(const Trial& t, SuperlayerPlan& plan) {
        const auto sl = static_cast<std::uint32_t>(plan.superlayers.size());
        std::vector<NodeId> newly_free;
        for (std::size_t c = 0; c < num_cus_; ++c)
            for (NodeId v : t.subgraphs[c]) {
                placed_[v] = 1;
                plan.home[v] = {sl, static_cast<std::uint32_t>(c)};
                --unplaced_;
            }
        for (std::size_t c = 0; c < num_cus_; ++c)
            for (NodeId v : t.subgraphs[c])
                for (NodeId w : compute_consumers_[v])
                    if (--remaining_[w] == 0) newly_free.push_back(w);
        std::vector<NodeId> next;
        for (NodeId v : frontier_)
            if (!placed_[v]) next.push_back(v);
        for (NodeId v : newly_free)
            if (!placed_[v]) next.push_back(v);
        frontier_ = std::move(next);
        sorted_ = false;
        plan.superlayers.push_back(t.subgraphs);
    }

private:
    void sort_frontier() {
        if (sorted_) return;
        std::sort(frontier_.begin(), frontier_.end(), [&](NodeId a, NodeId b) { return rank_[a] < rank_[b]; });
        sorted_ = true;
    }

    void take(NodeId v, std::vector<NodeId>& sub) {
        taken_[v] = 1;
        touched_.push_back(v);
        sub.push_back(v);
    }

    void touch(NodeId w) {
        if (!touched_flag_[w]) {
            touched_flag_[w] = 1;
            touched_.push_back(w);
            pending_[w] = remaining_[w];
        }
    }

    void reset() {
        for (NodeId v : touched_) {
            owner_[v] = -1;
            blocked_[v] = 0;
            taken_[v] = 0;
            pending_[v] = 0;
            touched_flag_[v] = 0;
        }
        touched_.clear();
    }

    const Dag& dag_;
    std::size_t num_cus_;
    std::vector<std::vector<NodeId>> preds_;
    std::vector<std::vector<NodeId>> compute_consumers_;
    std::vector<std::uint32_t> rank_;
    std::vector<std::uint32_t> height_;
    std::vector<std::uint32_t> remaining_;
    std::vector<char> placed_;
    std::vector<int> owner_;
    std::vector<char> blocked_;
    std::vector<std::uint32_t> pending_;
    std::vector<char> taken_;
    std::vector<char> touched_flag_;
    std::vector<NodeId> touched_;
    std::vector<NodeId> frontier_;
    bool sorted_ = false;
    std::size_t unplaced_ = 0;
};

std::vector<std::size_t> cap_candidates(std::size_t unplaced, std::size_t num_cus) {
    std::vector<std::size_t> caps;
    for (std::size_t p = 1; p <= unplaced; p *= 2) caps.push_back(p);
    for (std::size_t d = 1; d <= 4 * num_cus; d *= 2) caps.push_back((unplaced + d - 1) / d);
    caps.push_back((unplaced + num_cus - 1) / num_cus);
    caps.push_back(unplaced);
    std::sort(caps.begin(), caps.end());
    caps.erase(std::unique(caps.begin(), caps.end()), caps.end());
    caps.erase(std::remove(caps.begin(), caps.end(), std::size_t{0}), caps.end());
    return caps;
}

}  // namespace

std::optional<std::string> check_plan(const Dag& dag, const SuperlayerPlan& plan) {
    if (plan.home.size() != dag.size()) return "home table size mismatch";
    std::vector<std::size_t> seen(dag.size(), 0);
    std::vector<std::size_t> pos(dag.size(), 0);
    for (std::size_t s = 0; s < plan.superlayers.size(); ++s) {
        if (plan.superlayers[s].size() != plan.num_cus) return "superlayer " + std::to_string(s) + " has wrong CU count";
        for (std::size_t c = 0; c < plan.num_cus; ++c) {
            const auto& sub = plan.superlayers[s][c];
            for (std::size_t i = 0; i < sub.size(); ++i) {
                const NodeId v = sub[i];
                if (v >= dag.size()) return "unknown node " + std::to_string(v);
                if (!is_compute(dag.op(v))) return "node " + std::to_string(v) + " is not a compute node";
                if (++seen[v] > 1) return "node " + std::to_string(v) + " placed twice";
                if (plan.home[v].superlayer != s || plan.home[v].cu != c)
                    return "home table disagrees for node " + std::to_string(v);
                pos[v] = i;
            }
        }
    }
    for (NodeId v = 0; v < dag.size(); ++v) {
        if (is_compute(dag.op(v)) && seen[v] != 1) return "compute node " + std::to_string(v) + " not placed";
        if (!is_compute(dag.op(v)) && plan.home[v].placed()) return "non-compute node " + std::to_string(v) + " has a home";
    }
    for (NodeId v = 0; v < dag.size(); ++v) {
        if (!is_compute(dag.op(v))) continue;
        const NodeHome hv = plan.home[v];
        for (NodeId u : dag.operands(v)) {
            if (!is_compute(dag.op(u))) continue;
            const NodeHome hu = plan.home[u];
            if (hu.superlayer < hv.superlayer) continue;
            if (hu.superlayer == hv.superlayer && hu.cu == hv.cu && pos[u] < pos[v]) continue;
            return "edge " + std::to_string(u) + "->" + std::to_string(v) + " violates superlayer order";
        }
    }
    return std::nullopt;
}

SuperlayerPlan layerwise_partition(const Dag& dag, std::size_t num_cus) {
    if (num_cus == 0) throw std::invalid_argument("num_cus must be positive");
    SuperlayerPlan plan;
    plan.num_cus = num_cus;
    plan.home.assign(dag.size(), {});
    std::vector<std::size_t> level(dag.size(), 0);
    std::size_t levels = 0;
    for (NodeId v : dag.topo_order()) {
        if (!is_compute(dag.op(v))) continue;
        std::size_t l = 0;
        for (NodeId u : dag.operands(v)) l = std::max(l, level[u]);
        level[v] = l + 1;
        levels = std::max(levels, level[v]);
    }
    plan.superlayers.assign(levels, std::vector<std::vector<NodeId>>(num_cus));
    // The dealing pointer carries over between levels so that narrow levels
    // do not all pile onto the low CUs.
    std::vector<std::size_t> dealt(levels, 0);
    for (NodeId v = 0; v < dag.size(); ++v)
        if (is_compute(dag.op(v))) ++dealt[level[v] - 1];
    std::size_t start = 0;
    for (auto& d : dealt) {
        const std::size_t size = d;
        d = start;
        start += size;
    }
    for (NodeId v = 0; v < dag.size(); ++v) {
        if (!is_compute(dag.op(v))) continue;
        const std::size_t s = level[v] - 1;
        const std::size_t c = dealt[s]++ % num_cus;
        plan.superlayers[s][c].push_back(v);
        plan.home[v] = {static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(c)};
    }
    return plan;
}

SuperlayerPlan superlayer_partition(const Dag& dag, std::size_t num_cus, SuperlayerOptions options) {
    if (num_cus == 0) throw std::invalid_argument("num_cus must be positive");
    if (!(options.balance_tolerance >= 1.0)) throw std::invalid_argument("balance_tolerance must be >= 1");
    SuperlayerPlan plan;
    plan.num_cus = num_cus;
    plan.home.assign(dag.size(), {});
    SuperlayerBuilder builder(dag, num_cus);

    while (builder.unplaced() > 0) {
        std::optional<Trial> best;
        double best_rate = -1;
        std::optional<Trial> fallback;
        // Judge balance against the width the remainder can use, so a narrow
        // frontier cannot hand a wide graph to one CU.
        const std::size_t width = builder.width();
        for (std::size_t cap : cap_candidates(builder.unplaced(), num_cus)) {
            Trial t = builder.trial(cap, width);
            if (!fallback || t.imbalance < fallback->imbalance) fallback = t;
            if (t.imbalance > options.balance_tolerance) continue;
            const double rate = static_cast<double>(t.placed) / (static_cast<double>(t.max_size) + options.barrier_cost);
            if (rate > best_rate + 1e-12) {
                best_rate = rate;
                best = std::move(t);
            }
        }
        builder.commit(best ? *best : *fallback, plan);
    }
    return plan;
}

PartitionStats partition_stats(const Dag& dag, const SuperlayerPlan& plan) {
    if (auto err = check_plan(dag, plan)) throw PlanError("invalid plan: " + *err);
    PartitionStats st;
    st.barrier_count = plan.barrier_count();
    st.compute_nodes = dag.compute_count();
    st.ops_per_barrier = st.barrier_count ? static_cast<double>(st.compute_nodes) / static_cast<double>(st.barrier_count) : 0.0;
    for (std::size_t s = 0; s < plan.superlayers.size(); ++s) {
        const double imb = imbalance_of(plan.superlayers[s]);
        st.imbalance.push_back(imb);
        if (s + 1 < plan.superlayers.size()) st.max_imbalance = std::max(st.max_imbalance, imb);
    }
    for (NodeId v = 0; v < dag.size(); ++v) {
        if (!is_compute(dag.op(v))) continue;
        for (NodeId u : dag.operands(v)) {
            if (!is_compute(dag.op(u))) continue;
            if (plan.home[u].cu == plan.home[v].cu)
                ++st.intra_edges;
            else
                ++st.global_edges;
        }
    }
    const double total = static_cast<double>(st.intra_edges + st.global_edges);
    if (total > 0) {
        st.intra_fraction = static_cast<double>(st.intra_edges) / total;
        st.global_fraction = static_cast<double>(st.global_edges) / total;
    }
    return st;
}

nlohmann::json plan_to_json(const SuperlayerPlan& plan) {
    nlohmann::json j;
    j["num_cus"] = plan.num_cus;
    j["superlayers"] = plan.superlayers;
    return j;
}

SuperlayerPlan plan_from_json(const nlohmann::json& j, const Dag& dag) {
    SuperlayerPlan plan;
    plan.num_cus = j.at("num_cus").get<std::size_t>();
    plan.superlayers = j.at("superlayers").get<std::vector<std::vector<std::vector<NodeId>>>>();
    plan.home.assign(dag.size(), {});
    for (std::size_t s = 0; s < plan.superlayers.size(); ++s)
        for (std::size_t c = 0; c < plan.superlayers[s].size(); ++c)
            for (NodeId v : plan.superlayers[s][c])
                if (v < dag.size()) plan.home[v] = {static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(c)};
    if (auto err = check_plan(dag, plan)) throw PlanError("invalid plan: " + *err);
    return plan;
}

nlohmann::json stats_to_json(const PartitionStats& st) {
    return {{"barrier_count", st.barrier_count},     {"compute_nodes", st.compute_nodes},
            {"ops_per_barrier", st.ops_per_barrier}, {"max_imbalance", st.max_imbalance},
            {"imbalance", st.imbalance},             {"intra_edges", st.intra_edges},
            {"global_edges", st.global_edges},       {"intra_fraction", st.intra_fraction},
            {"global_fraction", st.global_fraction}};
}

}  // namespace dagpu
