#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dagpu/arith.hpp"
#include "dagpu/dag.hpp"
#include "dagpu/partition.hpp"

namespace dagpu {

struct MachineConfig {
    std::size_t num_cus = 64;
    std::size_t regfile_words = 32;
    int word_bits = 32;
    std::size_t load_fifo_depth = 8;
    std::size_t store_fifo_depth = 8;
    std::size_t local_spad_words = 512;
    std::size_t global_bank_words = 1024;
    // latencies in cycles from issue to data available
    int local_load_latency = 1;
    int global_load_latency = 2;
    int store_latency = 1;

    std::size_t num_banks() const { return num_cus; }
    std::size_t global_words() const { return num_banks() * global_bank_words; }
    /// Throws CodegenError(BadConfig) when a field does not fit the encodings.
    void check() const;
};

class CodegenError : public std::runtime_error {
public:
    enum class Kind { LocalSpadOverflow, GlobalBankOverflow, ImmediateOverflow, BadConfig, BadImage };
    CodegenError(Kind kind, std::size_t unit, const std::string& what)
        : std::runtime_error(what), kind_(kind), unit_(unit) {}

    Kind kind() const { return kind_; }
    /// CU for LocalSpadOverflow, bank for GlobalBankOverflow.
    std::size_t unit() const { return unit_; }

private:
    Kind kind_;
    std::size_t unit_;
};

enum class Opcode : std::uint8_t { Add = 0, Mul = 1, Max = 2, Min = 3, Barrier = 4, SetLdStreamLen = 5, SetPrecision = 6, Nop = 7 };

std::string_view opcode_name(Opcode op);
Opcode opcode_for(Op op);
std::optional<Op> op_for(Opcode op);
constexpr bool is_alu(Opcode op) { return static_cast<std::uint8_t>(op) <= 3; }

struct Instruction {
    Opcode op = Opcode::Nop;
    std::uint8_t dst = 0;
    std::uint8_t src_a = 0;
    std::uint8_t src_b = 0;
    std::uint16_t imm = 0;  // SET_LD_STREAM_LEN only
    bool pop0 = false;
    bool pop1 = false;
    bool push = false;

    static Instruction alu(Opcode op, int dst, int a, int b) {
        return {op, static_cast<std::uint8_t>(dst), static_cast<std::uint8_t>(a), static_cast<std::uint8_t>(b)};
    }
    static Instruction nop() { return {}; }
    static Instruction barrier(bool local) { return {Opcode::Barrier, 0, 0, static_cast<std::uint8_t>(local ? 1 : 0)}; }
    static Instruction set_stream_len(std::uint32_t n);
    static Instruction set_precision(PrecisionMode m) {
        return {Opcode::SetPrecision, 0, 0, static_cast<std::uint8_t>(m)};
    }

    bool is_local_barrier() const { return op == Opcode::Barrier && (src_b & 1); }
    bool is_global_barrier() const { return op == Opcode::Barrier && !(src_b & 1); }
    int pops() const { return int(pop0) + int(pop1); }

    std::string to_string() const;
    friend bool operator==(const Instruction&, const Instruction&) = default;
};

enum class Scope : std::uint8_t { Local = 0, Global = 1 };

struct LoadEntry {
    Scope scope = Scope::Local;
    std::uint8_t bank = 0;  // global only
    std::uint16_t offset = 0;
    std::uint8_t dst = 0;
    friend bool operator==(const LoadEntry&, const LoadEntry&) = default;
};

struct StoreEntry {
    Scope scope = Scope::Local;  // global stores target the CU's own bank
    std::uint16_t offset = 0;
    friend bool operator==(const StoreEntry&, const StoreEntry&) = default;
};

struct BarrierMarker {
    std::uint32_t proc_pos = 0;   // index of the BARRIER instruction
    std::uint32_t load_pos = 0;   // load entries before it
    std::uint32_t store_pos = 0;  // store entries before it
    friend bool operator==(const BarrierMarker&, const BarrierMarker&) = default;
};

inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

struct CuProgram {
    std::vector<Instruction> processing;
    std::vector<LoadEntry> loads;
    std::vector<StoreEntry> stores;
    std::vector<BarrierMarker> markers;

    // Compiler annotations, not part of the binary image: the node an ALU
    // instruction computes and the value each load entry brings in.
    std::vector<NodeId> proc_node;
    std::vector<NodeId> load_value;

    friend bool operator==(const CuProgram& a, const CuProgram& b) {
        return a.processing == b.processing && a.loads == b.loads && a.stores == b.stores && a.markers == b.markers;
    }
};

/// One step of the combined (coupled) program before stream splitting.
struct Step {
    enum class Kind : std::uint8_t { Proc, Load, Store };
    Kind kind = Kind::Proc;
    Instruction instr;
    LoadEntry load;
    StoreEntry store;
    NodeId node = kNoNode;
    friend bool operator==(const Step&, const Step&) = default;
};
using Combined = std::vector<Step>;

struct Placement {
    Scope scope = Scope::Local;
    std::uint32_t unit = 0;  // CU for local, bank for global
    std::uint32_t offset = 0;
    friend bool operator==(const Placement&, const Placement&) = default;
};

struct Preload {
    NodeId node = 0;
    Placement where;
};

struct MemoryMap {
    std::size_t num_cus = 0;
    /// Memory home of compute-node outputs that outlive registers.
    std::vector<std::optional<Placement>> home;
    /// INPUT/CONST replicas written before execution.
    std::vector<Preload> preloads;
    /// Per INPUT/CONST node: (cu, placement) of the replica each consuming CU reads.
    std::vector<std::vector<std::pair<std::uint32_t, Placement>>> replica;
    /// First local word available for spills, per CU.
    std::vector<std::uint32_t> spill_base;
    std::vector<std::uint32_t> local_used;
    std::vector<std::uint32_t> global_used;

    const Placement& replica_for(NodeId node, std::size_t cu) const;
};

/// Topological order of one subgraph: depth-first post-order from its sinks,
/// ascending id at every choice.
std::vector<NodeId> schedule_subgraph(const std::vector<NodeId>& nodes, const Dag& dag);

/// Outputs default to the DAG's compute sinks.
MemoryMap assign_memory(const Dag& dag, const SuperlayerPlan& plan, const MachineConfig& cfg,
                        const std::vector<NodeId>& outputs);

struct AllocStats {
    std::size_t spills = 0;
    std::size_t loads = 0;
    std::size_t stores = 0;
    std::size_t deferred_pops = 0;
};

/// Register allocation for one CU's subgraph in one superlayer.  Registers
/// start empty; spill slots are taken from `next_spill` upward and bounded by
/// the local scratchpad.
Combined allocate_registers(const std::vector<NodeId>& order, const Dag& dag, std::size_t cu, const MemoryMap& mem,
                            const MachineConfig& cfg, std::uint32_t& next_spill, AllocStats& stats);

/// Assembles a CU's full combined sequence: precision setup, the superlayer
/// bodies with a global barrier after each, local barriers before load groups
/// that read data stored since the previous barrier, and a SET_LD_STREAM_LEN
/// after every barrier.
Combined insert_barriers(const std::vector<Combined>& superlayer_bodies, PrecisionMode mode, std::size_t cu);

CuProgram split_streams(const Combined& seq);
/// Inverse of split_streams for canonical sequences.
Combined merge_streams(const CuProgram& prog);

std::uint32_t encode_instruction(const Instruction& in);
Instruction decode_instruction(std::uint32_t word);
std::uint32_t encode_load(const LoadEntry& e);
LoadEntry decode_load(std::uint32_t word);
std::uint32_t encode_store(const StoreEntry& e);
StoreEntry decode_store(std::uint32_t word);

inline constexpr std::uint32_t kImageMagic = 0x44505531;

std::vector<std::uint8_t> encode_binary(const CuProgram& prog);
CuProgram decode_binary(const std::vector<std::uint8_t>& image);
nlohmann::json disassemble(const CuProgram& prog);

struct CompileOptions {
    PrecisionMode mode = PrecisionMode::P32;
    std::vector<NodeId> outputs;  // empty: compute sinks
};

struct CompiledProgram {
    MachineConfig cfg;
    PrecisionMode mode = PrecisionMode::P32;
    std::vector<CuProgram> cus;
    MemoryMap memory;
    std::vector<NodeId> outputs;
    std::size_t superlayers = 0;
    AllocStats alloc;
    std::size_t local_barriers = 0;
};

CompiledProgram compile(const Dag& dag, const SuperlayerPlan& plan, const MachineConfig& cfg,
                        const CompileOptions& options = {});

/// Symbolic register-file walk over one program: every ALU instruction must
/// read its operands' values and no pop may clobber a value before its last
/// read.  Returns the first violation.
std::optional<std::string> check_dataflow(const CuProgram& prog, const Dag& dag);

}  // namespace dagpu
