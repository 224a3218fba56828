#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dagpu/dag.hpp"

namespace dagpu {

struct NodeHome {
    static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
    std::uint32_t superlayer = kNone;
    std::uint32_t cu = kNone;

    bool placed() const { return superlayer != kNone; }
};

/// Ordered superlayers, each holding one (possibly empty) subgraph per CU.
/// A global barrier closes every superlayer.
struct SuperlayerPlan {
    std::size_t num_cus = 0;
    std::vector<std::vector<std::vector<NodeId>>> superlayers;  // [superlayer][cu] -> nodes in order
    std::vector<NodeHome> home;                                 // per node; INPUT/CONST stay unplaced

    std::size_t barrier_count() const { return superlayers.size(); }
};

class PlanError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// O(V + E) structural check of the plan invariants; returns the first violation.
std::optional<std::string> check_plan(const Dag& dag, const SuperlayerPlan& plan);

/// Level scheduling: superlayer k holds the compute nodes of ASAP level k+1,
/// dealt round-robin over CUs by ascending id.
SuperlayerPlan layerwise_partition(const Dag& dag, std::size_t num_cus);

struct SuperlayerOptions {
    /// Upper bound on max/mean subgraph size per superlayer.  The mean is
    /// taken over the non-empty subgraphs, or over the width the remaining
    /// graph can use (nodes / longest path, at most num_cus) if that is larger.
    /// When no candidate meets the bound the least imbalanced one is used.
    double balance_tolerance = 2.0;
    /// Cost of one barrier in node-equivalents, used to trade superlayer size
    /// against barrier count.
    double barrier_cost = 16.0;
};

/// Greedy frontier-growing partitioner.  Per superlayer, CUs are filled one
/// after another in depth-first rank order, admitting a node only while all
/// of its unplaced predecessors sit in the same subgraph; every node that was
/// ready at the start of the superlayer is placed, so the barrier count never
/// exceeds the level count.  The per-CU size cap is chosen from a candidate
/// set to maximize nodes / (largest subgraph + barrier_cost).
SuperlayerPlan superlayer_partition(const Dag& dag, std::size_t num_cus, SuperlayerOptions options = {});

struct PartitionStats {
    std::size_t barrier_count = 0;
    std::size_t compute_nodes = 0;
    double ops_per_barrier = 0;
    std::vector<double> imbalance;  // per superlayer, max/mean over non-empty subgraphs
    double max_imbalance = 0;       // excluding the last superlayer
    std::size_t intra_edges = 0;    // compute-to-compute edges on one CU
    std::size_t global_edges = 0;   // compute-to-compute edges across CUs
    double intra_fraction = 0;
    double global_fraction = 0;
};

/// Throws PlanError if the plan is invalid for `dag`.
PartitionStats partition_stats(const Dag& dag, const SuperlayerPlan& plan);

nlohmann::json plan_to_json(const SuperlayerPlan& plan);
SuperlayerPlan plan_from_json(const nlohmann::json& j, const Dag& dag);
nlohmann::json stats_to_json(const PartitionStats& stats);

}  // namespace dagpu
