#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dagpu/arith.hpp"
#include "dagpu/codegen.hpp"
#include "dagpu/dag.hpp"

namespace dagpu {

class SimError : public std::runtime_error {
public:
    enum class Kind { Deadlock, AddressFault, BadProgram };
    SimError(Kind kind, std::uint64_t cycle, std::size_t cu, const std::string& what)
        : std::runtime_error(what), kind_(kind), cycle_(cycle), cu_(cu) {}
    Kind kind() const { return kind_; }
    std::uint64_t cycle() const { return cycle_; }
    std::size_t cu() const { return cu_; }

private:
    Kind kind_;
    std::uint64_t cycle_;
    std::size_t cu_;
};

struct MemoryImage {
    std::vector<std::vector<std::uint32_t>> global;  // [bank][offset]
    std::vector<std::vector<std::uint32_t>> local;   // [cu][offset]
    static MemoryImage zeros(const MachineConfig& cfg);
};

enum class StallCause : std::uint8_t { LoadFifoEmpty, StoreFifoFull, BarrierWait, BankConflict, StreamExhausted };
inline constexpr std::size_t kStallCauses = 5;
std::string_view stall_name(StallCause c);

struct CuCounters {
    std::uint64_t active = 0;  // cycles the PE retired an instruction
    std::uint64_t alu = 0;     // of which ADD/MUL/MAX/MIN
    std::uint64_t idle = 0;    // cycles after the PE finished its stream
    std::array<std::uint64_t, kStallCauses> stall{};
    std::uint64_t local_loads = 0, global_loads = 0;
    std::uint64_t local_stores = 0, global_stores = 0;

    std::uint64_t stalled() const;
    friend bool operator==(const CuCounters&, const CuCounters&) = default;
};

enum class EventKind : std::uint8_t { Exec, LoadIssue, LoadGrant, Store, BarrierArrive, BarrierRelease, LocalBarrier };
std::string_view event_name(EventKind k);

/// Details: Exec {pc, epoch, word}; LoadIssue {scope, bank, offset};
/// LoadGrant {bank, offset}; Store {scope, bank or cu, offset};
/// BarrierArrive/Release {epoch}; LocalBarrier {pc}.  Epoch counts global
/// barriers already passed by the CU.
struct Event {
    std::uint64_t cycle = 0;
    std::uint32_t cu = 0;
    EventKind kind = EventKind::Exec;
    std::array<std::uint32_t, 3> detail{};
};
nlohmann::json event_to_json(const Event& e);

struct SimOptions {
    NumberFamily family = NumberFamily::CustomPosit;
    bool coupled = false;
    bool trace = false;
    double frequency_hz = 278e6;
};

struct SimReport {
    std::size_t num_cus = 0;
    bool coupled = false;
    PrecisionMode mode = PrecisionMode::P32;
    std::uint64_t total_cycles = 0;
    std::uint64_t alu_instructions = 0;
    std::uint64_t compute_ops = 0;  // ALU instructions x lanes
    std::uint64_t global_barriers = 0;
    std::uint64_t local_barriers = 0;
    double ops_per_barrier = 0;
    double utilization = 0;
    double frequency_hz = 0;
    double gops = 0;  // compute_ops / (total_cycles / f)
    std::vector<CuCounters> cus;

    int lanes() const { return dagpu::lanes(mode); }
    friend bool operator==(const SimReport&, const SimReport&) = default;
};
nlohmann::json report_to_json(const SimReport& r);

struct SimResult {
    SimReport report;
    MemoryImage memory;
    std::vector<Event> events;
};

/// Cycle-stepped execution of one program per CU.
SimResult simulate(const std::vector<CuProgram>& programs, MemoryImage image, const MachineConfig& cfg,
                   const SimOptions& options = {});

/// Preloads INPUT/CONST replicas; lane i of every INPUT takes lane_inputs[i].
MemoryImage build_image(const CompiledProgram& prog, const Dag& dag, const std::vector<InputBinding>& lane_inputs,
                        NumberFamily family);

struct BatchRun {
    /// [output][lane] words, in CompiledProgram::outputs order.
    std::vector<std::vector<ArithModel::Word>> outputs;
    SimResult sim;
};

BatchRun run(const CompiledProgram& prog, const Dag& dag, const std::vector<InputBinding>& lane_inputs,
             SimOptions options = {});
BatchRun run_coupled(const CompiledProgram& prog, const Dag& dag, const std::vector<InputBinding>& lane_inputs,
                     SimOptions options = {});

/// Reference outputs per lane, same layout as BatchRun::outputs.
std::vector<std::vector<ArithModel::Word>> reference_outputs(const CompiledProgram& prog, const Dag& dag,
                                                             const std::vector<InputBinding>& lane_inputs,
                                                             NumberFamily family);

/// One binding per lane, values uniform in [lo, hi] from `seed`.
std::vector<InputBinding> random_lane_inputs(const Dag& dag, PrecisionMode mode, std::uint64_t seed, double lo = -2.0,
                                             double hi = 2.0);

double peak_throughput(const MachineConfig& cfg, double frequency_hz, PrecisionMode mode);

struct SweepPoint {
    std::size_t active_cus = 0;
    std::uint64_t cycles = 0;
    std::uint64_t compute_ops = 0;
    double ops_per_cycle = 0;
    double utilization = 0;  // over the active CUs
    std::size_t barriers = 0;
};

/// Partitions for each count of active CUs, pads the plan to the machine's
/// width (idle CUs only take part in barriers) and simulates.
std::vector<SweepPoint> sweep_active_cus(const Dag& dag, const MachineConfig& cfg, const std::vector<std::size_t>& counts,
                                         PrecisionMode mode = PrecisionMode::P32, SimOptions options = {},
                                         std::uint64_t seed = 1);

}  // namespace dagpu
