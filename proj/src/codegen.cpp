#include "dagpu/codegen.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <functional>
#include <map>
#include <queue>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace dagpu {

namespace {

using CK = CodegenError::Kind;

constexpr std::uint32_t kMaxImm = 0x7FFF;

std::vector<NodeId> compute_operands(const Dag& dag, NodeId v) {
    const auto ops = dag.operands(v);
    return {ops.begin(), ops.end()};
}

}  // namespace

void MachineConfig::check() const {
    auto bad = [](const std::string& msg) { throw CodegenError(CK::BadConfig, 0, msg); };
    if (num_cus < 1 || num_cus > 64) bad("num_cus must be in [1, 64]");
    if (regfile_words < 2 || regfile_words > 32) bad("regfile_words must be in [2, 32]");
    if (word_bits != 32) bad("word_bits must be 32");
    if (load_fifo_depth < 2 || store_fifo_depth < 1) bad("FIFO depths too small");
    if (local_spad_words < 1 || local_spad_words > 1024) bad("local_spad_words must be in [1, 1024]");
    if (global_bank_words < 1 || global_bank_words > 1024) bad("global_bank_words must be in [1, 1024]");
    if (local_load_latency < 1 || global_load_latency < 2 || store_latency < 1) bad("latencies too small");
}

std::string_view opcode_name(Opcode op) {
    switch (op) {
        case Opcode::Add: return "ADD";
        case Opcode::Mul: return "MUL";
        case Opcode::Max: return "MAX";
        case Opcode::Min: return "MIN";
        case Opcode::Barrier: return "BARRIER";
        case Opcode::SetLdStreamLen: return "SET_LD_STREAM_LEN";
        case Opcode::SetPrecision: return "SET_PRECISION";
        case Opcode::Nop: return "NOP";
    }
    return "?";
}

Opcode opcode_for(Op op) {
    switch (op) {
        case Op::Add: return Opcode::Add;
        case Op::Mul: return Opcode::Mul;
        case Op::Max: return Opcode::Max;
        case Op::Min: return Opcode::Min;
        default: throw std::invalid_argument("no opcode for " + std::string(op_name(op)));
    }
}

std::optional<Op> op_for(Opcode op) {
    switch (op) {
        case Opcode::Add: return Op::Add;
        case Opcode::Mul: return Op::Mul;
        case Opcode::Max: return Op::Max;
        case Opcode::Min: return Op::Min;
        default: return std::nullopt;
    }
}

Instruction Instruction::set_stream_len(std::uint32_t n) {
    if (n > kMaxImm) throw CodegenError(CK::ImmediateOverflow, 0, "SET_LD_STREAM_LEN immediate exceeds 15 bits");
    Instruction in;
    in.op = Opcode::SetLdStreamLen;
    in.imm = static_cast<std::uint16_t>(n);
    return in;
}

std::string Instruction::to_string() const {
    std::ostringstream out;
    out << opcode_name(op);
    switch (op) {
        case Opcode::Barrier: out << (is_local_barrier() ? " LOCAL" : " GLOBAL"); break;
        case Opcode::SetLdStreamLen: out << ' ' << imm; break;
        case Opcode::SetPrecision: out << ' ' << lane_bits(static_cast<PrecisionMode>(src_b & 3)) << 'b'; break;
        case Opcode::Nop: break;
        default: out << " r" << int(dst) << ", r" << int(src_a) << ", r" << int(src_b);
    }
    if (pop0 || pop1 || push) {
        out << " [";
        const char* sep = "";
        if (pop0) out << sep << "pop0", sep = " ";
        if (pop1) out << sep << "pop1", sep = " ";
        if (push) out << sep << "push";
        out << ']';
    }
    return out.str();
}

const Placement& MemoryMap::replica_for(NodeId node, std::size_t cu) const {
    for (const auto& [c, p] : replica.at(node))
        if (c == cu) return p;
    throw std::logic_error("no replica of node " + std::to_string(node) + " for CU " + std::to_string(cu));
}

// ---------------------------------------------------------------------------

std::vector<NodeId> schedule_subgraph(const std::vector<NodeId>& nodes, const Dag& dag) {
    std::unordered_set<NodeId> in(nodes.begin(), nodes.end());
    std::vector<NodeId> sinks;
    for (NodeId v : nodes) {
        bool sink = true;
        for (NodeId w : dag.consumers(v))
            if (in.count(w)) sink = false;
        if (sink) sinks.push_back(v);
    }
    std::sort(sinks.begin(), sinks.end());
    std::vector<NodeId> order;
    order.reserve(nodes.size());
    std::unordered_set<NodeId> visited;
    std::vector<std::pair<NodeId, std::vector<NodeId>>> stack;
    auto children = [&](NodeId v) {
        std::vector<NodeId> c;
        for (NodeId u : dag.operands(v))
            if (in.count(u)) c.push_back(u);
        std::sort(c.begin(), c.end());
        c.erase(std::unique(c.begin(), c.end()), c.end());
        std::reverse(c.begin(), c.end());  // pop from the back in ascending order
        return c;
    };
    for (NodeId root : sinks) {
        if (!visited.insert(root).second) continue;
        stack.push_back({root, children(root)});
        while (!stack.empty()) {
            auto& [v, todo] = stack.back();
            if (!todo.empty()) {
                const NodeId u = todo.back();
                todo.pop_back();
                if (visited.insert(u).second) stack.push_back({u, children(u)});
            } else {
                order.push_back(v);
                stack.pop_back();
            }
        }
    }
    return order;
}

MemoryMap assign_memory(const Dag& dag, const SuperlayerPlan& plan, const MachineConfig& cfg,
                        const std::vector<NodeId>& outputs) {
    const std::size_t n = dag.size();
    MemoryMap m;
    m.num_cus = cfg.num_cus;
    m.home.assign(n, std::nullopt);
    m.replica.assign(n, {});
    m.local_used.assign(cfg.num_cus, 0);
    m.global_used.assign(cfg.num_banks(), 0);
    m.spill_base.assign(cfg.num_cus, 0);

    std::vector<char> is_output(n, 0);
    for (NodeId v : outputs) is_output.at(v) = 1;

    constexpr std::uint32_t kForever = std::numeric_limits<std::uint32_t>::max();
    struct LocalValue {
        NodeId node;
        std::uint32_t last;
    };
    // [cu][superlayer] -> values needing a slot defined there
    using Defs = std::vector<std::vector<std::vector<LocalValue>>>;
    Defs local_defs(cfg.num_cus, std::vector<std::vector<LocalValue>>(plan.barrier_count()));
    Defs global_defs = local_defs;

    for (std::size_t s = 0; s < plan.superlayers.size(); ++s)
        for (std::size_t c = 0; c < cfg.num_cus; ++c)
            for (NodeId v : plan.superlayers[s][c]) {
                bool same_cu = true, same_sl = true;
                std::uint32_t last = static_cast<std::uint32_t>(s);
                for (NodeId w : dag.consumers(v)) {
                    const NodeHome h = plan.home[w];
                    same_cu &= h.cu == c;
                    same_sl &= h.superlayer == s;
                    last = std::max(last, h.superlayer);
                }
                const LocalValue lv{v, is_output[v] ? kForever : last};
                if (!same_cu)
                    global_defs[c][s].push_back(lv);
                else if (is_output[v] || !same_sl)
                    local_defs[c][s].push_back(lv);
            }

    // Lowest free slot first; a slot frees once the superlayer of its last
    // reader has closed.  Returns the high-water mark.
    auto assign_slots = [&](const std::vector<std::vector<LocalValue>>& defs, std::size_t capacity, Scope scope,
                            std::uint32_t c) {
        std::priority_queue<std::uint32_t, std::vector<std::uint32_t>, std::greater<>> free_slots;
        // (release superlayer, slot)
        std::priority_queue<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::pair<std::uint32_t, std::uint32_t>>,
                            std::greater<>>
            busy;
        std::uint32_t high = 0;
        for (std::uint32_t s = 0; s < plan.barrier_count(); ++s) {
            while (!busy.empty() && busy.top().first < s) {
                free_slots.push(busy.top().second);
                busy.pop();
            }
            for (const auto& lv : defs[s]) {
                std::uint32_t slot;
                if (!free_slots.empty()) {
                    slot = free_slots.top();
                    free_slots.pop();
                } else {
                    slot = high++;
                }
                if (slot >= capacity) {
                    if (scope == Scope::Local)
                        throw CodegenError(CK::LocalSpadOverflow, c,
                                           "local scratchpad of CU " + std::to_string(c) + " overflows");
                    throw CodegenError(CK::GlobalBankOverflow, c, "global bank " + std::to_string(c) + " overflows");
                }
                m.home[lv.node] = Placement{scope, c, slot};
                busy.push({lv.last, slot});
            }
        }
        return high;
    };
    for (std::uint32_t c = 0; c < cfg.num_cus; ++c) {
        m.spill_base[c] = m.local_used[c] = assign_slots(local_defs[c], cfg.local_spad_words, Scope::Local, c);
        m.global_used[c] = assign_slots(global_defs[c], cfg.global_bank_words, Scope::Global, c);
    }

    auto bank_alloc = [&](std::size_t bank) {
        if (m.global_used[bank] >= cfg.global_bank_words)
            throw CodegenError(CK::GlobalBankOverflow, bank, "global bank " + std::to_string(bank) + " overflows");
        return m.global_used[bank]++;
    };

    // INPUT/CONST replicas: one per consuming CU in that CU's bank (equal
    // constants shared), falling back to the emptiest bank when full.
    std::vector<std::unordered_map<std::uint64_t, std::uint32_t>> const_at(cfg.num_banks());
    for (NodeId x = 0; x < n; ++x) {
        if (is_compute(dag.op(x))) continue;
        std::vector<std::uint32_t> cus;
        for (NodeId w : dag.consumers(x)) cus.push_back(plan.home[w].cu);
        std::sort(cus.begin(), cus.end());
        cus.erase(std::unique(cus.begin(), cus.end()), cus.end());
        const bool is_const = dag.op(x) == Op::Const;
        const std::uint64_t key = std::bit_cast<std::uint64_t>(dag.node(x).const_value);
        for (std::uint32_t c : cus) {
            std::uint32_t bank = c;
            if (is_const) {
                if (auto it = const_at[bank].find(key); it != const_at[bank].end()) {
                    m.replica[x].push_back({c, Placement{Scope::Global, bank, it->second}});
                    continue;
                }
            }
            if (m.global_used[bank] >= cfg.global_bank_words) {
                if (!m.replica[x].empty()) {
                    m.replica[x].push_back({c, m.replica[x].front().second});
                    continue;
                }
                bank = static_cast<std::uint32_t>(std::min_element(m.global_used.begin(), m.global_used.end()) -
                                                  m.global_used.begin());
            }
            const Placement p{Scope::Global, bank, bank_alloc(bank)};
            if (is_const) const_at[bank][key] = p.offset;
            m.replica[x].push_back({c, p});
            m.preloads.push_back({x, p});
        }
    }
    return m;
}

// ---------------------------------------------------------------------------

Combined allocate_registers(const std::vector<NodeId>& order, const Dag& dag, std::size_t cu, const MemoryMap& mem,
                            const MachineConfig& cfg, std::uint32_t& next_spill, AllocStats& stats) {
    constexpr std::size_t kNever = std::numeric_limits<std::size_t>::max();
    const int R = static_cast<int>(cfg.regfile_words);

    struct ValState {
        int reg = -1;
        std::optional<Placement> mem;
        std::vector<std::size_t> uses;
        std::size_t next = 0;
        std::size_t producer = kNever;
    };
    std::unordered_map<NodeId, ValState> st;
    std::vector<std::vector<NodeId>> distinct_ops(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const NodeId v = order[i];
        st[v].producer = i;
        auto ops = compute_operands(dag, v);
        std::vector<NodeId> d;
        for (NodeId x : ops)
            if (std::find(d.begin(), d.end(), x) == d.end()) d.push_back(x);
        for (NodeId x : d) st[x].uses.push_back(i);
        distinct_ops[i] = std::move(d);
    }
    for (auto& [x, s] : st) {
        if (s.producer != kNever) {
            s.mem = mem.home[x];
        } else if (!is_compute(dag.op(x))) {
            s.mem = mem.replica_for(x, cu);
        } else {
            s.mem = mem.home[x];
            if (!s.mem) throw std::logic_error("operand " + std::to_string(x) + " has no memory home");
        }
    }

    struct Group {
        std::vector<LoadEntry> loads;
        std::vector<NodeId> load_values;
        Instruction instr;
        NodeId node = kNoNode;
        std::optional<StoreEntry> store;
        bool defer = false;
    };
    std::vector<Group> groups(order.size());
    std::vector<NodeId> reg_val(R, kNoNode);
    std::vector<char> spilled;  // indexed by position in order
    spilled.assign(order.size(), 0);
    // (index of the last read, slot): reusable by values defined after that read
    std::vector<std::pair<std::size_t, std::uint32_t>> free_spill;

    auto next_use = [&](NodeId x) {
        const auto& s = st[x];
        return s.next < s.uses.size() ? s.uses[s.next] : kNever;
    };
    auto ensure_memory = [&](NodeId y) {
        auto& s = st[y];
        if (s.mem) return;
        std::uint32_t slot;
        auto reuse = free_spill.end();
        for (auto it = free_spill.begin(); it != free_spill.end(); ++it)
            if (it->first < s.producer && (reuse == free_spill.end() || it->second < reuse->second)) reuse = it;
        if (reuse != free_spill.end()) {
            slot = reuse->second;
            free_spill.erase(reuse);
        } else {
            if (next_spill >= cfg.local_spad_words)
                throw CodegenError(CK::LocalSpadOverflow, cu, "spill space of CU " + std::to_string(cu) + " exhausted");
            slot = next_spill++;
        }
        s.mem = Placement{Scope::Local, static_cast<std::uint32_t>(cu), slot};
        spilled[s.producer] = 1;
        Group& g = groups.at(s.producer);
        g.instr.push = true;
        g.store = StoreEntry{Scope::Local, static_cast<std::uint16_t>(s.mem->offset)};
        ++stats.spills;
        ++stats.stores;
    };
    auto pick = [&](const std::vector<int>& excluded) {
        auto ok = [&](int r) { return std::find(excluded.begin(), excluded.end(), r) == excluded.end(); };
        for (int r = 0; r < R; ++r)
            if (reg_val[r] == kNoNode && ok(r)) return r;
        int best = -1;
        std::size_t far = 0;
        for (int r = 0; r < R; ++r) {
            if (!ok(r)) continue;
            const std::size_t nu = next_use(reg_val[r]);
            if (best < 0 || nu > far) {
                best = r;
                far = nu;
            }
        }
        return best;
    };
    auto vacate = [&](int r) {
        const NodeId y = reg_val[r];
        if (y == kNoNode) return;
        ensure_memory(y);
        st[y].reg = -1;
        reg_val[r] = kNoNode;
    };

    for (std::size_t i = 0; i < order.size(); ++i) {
        const NodeId v = order[i];
        Group& g = groups[i];
        g.node = v;
        const auto& d = distinct_ops[i];
        std::vector<int> pinned, popped;
        for (NodeId x : d)
            if (st[x].reg >= 0) pinned.push_back(st[x].reg);
        for (NodeId x : d) {
            if (st[x].reg >= 0) continue;
            const int r = pick(pinned);
            if (r < 0) throw CodegenError(CK::BadConfig, cu, "register file too small for operands");
            vacate(r);
            reg_val[r] = x;
            st[x].reg = r;
            pinned.push_back(r);
            popped.push_back(r);
            const Placement& p = *st[x].mem;
            g.loads.push_back({p.scope, static_cast<std::uint8_t>(p.scope == Scope::Global ? p.unit : 0),
                               static_cast<std::uint16_t>(p.offset), static_cast<std::uint8_t>(r)});
            g.load_values.push_back(x);
        }
        const auto ops = dag.operands(v);
        const int ra = st[ops[0]].reg;
        const int rb = st[ops.size() > 1 ? ops[1] : ops[0]].reg;
        for (NodeId x : d) ++st[x].next;

        auto is_popped = [&](int r) { return std::find(popped.begin(), popped.end(), r) != popped.end(); };
        int dst = -1;
        for (NodeId x : d)
            if (next_use(x) == kNever && !is_popped(st[x].reg)) {
                dst = st[x].reg;
                break;
            }
        if (dst < 0) dst = pick(popped);
        if (dst < 0) {
            // every register takes a pop this cycle: pop in a preceding NOP
            g.defer = true;
            ++stats.deferred_pops;
            popped.clear();
            for (NodeId x : d)
                if (next_use(x) == kNever) {
                    dst = st[x].reg;
                    break;
                }
            if (dst < 0) dst = pick({});
        }
        for (NodeId x : d) {
            if (next_use(x) != kNever) continue;
            if (st[x].reg >= 0) {
                reg_val[st[x].reg] = kNoNode;
                st[x].reg = -1;
            }
            if (const auto p = st[x].producer; p != kNever && spilled[p]) free_spill.push_back({i, st[x].mem->offset});
        }
        vacate(dst);
        reg_val[dst] = v;
        st[v].reg = dst;

        g.instr = Instruction::alu(opcode_for(dag.op(v)), dst, ra, rb);
        g.instr.pop0 = !g.loads.empty();
        g.instr.pop1 = g.loads.size() > 1;
        stats.loads += g.loads.size();
        if (st[v].mem) {
            g.instr.push = true;
            g.store = StoreEntry{st[v].mem->scope, static_cast<std::uint16_t>(st[v].mem->offset)};
            ++stats.stores;
        }
        if (next_use(v) == kNever) {
            reg_val[dst] = kNoNode;
            st[v].reg = -1;
        }
    }

    Combined out;
    for (const Group& g : groups) {
        for (std::size_t k = 0; k < g.loads.size(); ++k) {
            Step s;
            s.kind = Step::Kind::Load;
            s.load = g.loads[k];
            s.node = g.load_values[k];
            out.push_back(s);
        }
        Instruction in = g.instr;
        if (g.defer) {
            Instruction nop = Instruction::nop();
            nop.pop0 = in.pop0;
            nop.pop1 = in.pop1;
            in.pop0 = in.pop1 = false;
            out.push_back(Step{Step::Kind::Proc, nop, {}, {}, kNoNode});
        }
        out.push_back(Step{Step::Kind::Proc, in, {}, {}, g.node});
        if (g.store) {
            Step s;
            s.kind = Step::Kind::Store;
            s.store = *g.store;
            s.node = g.node;
            out.push_back(s);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

Combined insert_barriers(const std::vector<Combined>& bodies, PrecisionMode mode, std::size_t cu) {
    Combined out;
    if (bodies.empty()) return out;
    auto proc = [](Instruction in) { return Step{Step::Kind::Proc, in, {}, {}, kNoNode}; };
    out.push_back(proc(Instruction::set_precision(mode)));
    out.push_back(proc(Instruction::set_stream_len(0)));

    auto key_of_store = [&](const StoreEntry& s) {
        return (static_cast<std::uint64_t>(s.scope) << 32) | s.offset;
    };
    std::unordered_set<std::uint64_t> stored;
    for (const Combined& body : bodies) {
        std::size_t group_start = out.size();
        bool in_run = false;
        for (const Step& s : body) {
            if (s.kind == Step::Kind::Load) {
                if (!in_run) group_start = out.size();
                in_run = true;
                const bool own = s.load.scope == Scope::Local || s.load.bank == cu;
                const std::uint64_t key = (static_cast<std::uint64_t>(s.load.scope) << 32) | s.load.offset;
                if (own && stored.count(key)) {
                    const Step bar[] = {proc(Instruction::barrier(true)), proc(Instruction::set_stream_len(0))};
                    out.insert(out.begin() + static_cast<long>(group_start), std::begin(bar), std::end(bar));
                    stored.clear();
                }
                out.push_back(s);
                continue;
            }
            in_run = false;
            if (s.kind == Step::Kind::Store) stored.insert(key_of_store(s.store));
            out.push_back(s);
        }
        out.push_back(proc(Instruction::barrier(false)));
        out.push_back(proc(Instruction::set_stream_len(0)));
        stored.clear();
    }

    // Split segments whose load count would overflow the immediate.
    Combined split;
    split.reserve(out.size());
    std::uint32_t seg = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Step& s = out[i];
        if (s.kind == Step::Kind::Proc && s.instr.op == Opcode::Barrier) seg = 0;
        if (s.kind == Step::Kind::Load && (i == 0 || out[i - 1].kind != Step::Kind::Load)) {
            std::uint32_t k = 0;
            while (i + k < out.size() && out[i + k].kind == Step::Kind::Load) ++k;
            if (seg + k > kMaxImm) {
                split.push_back(proc(Instruction::barrier(true)));
                split.push_back(proc(Instruction::set_stream_len(0)));
                seg = 0;
            }
            seg += k;
        }
        split.push_back(s);
    }

    // Fill every SET_LD_STREAM_LEN with the load count up to the next barrier.
    std::uint32_t count = 0;
    for (std::size_t i = split.size(); i-- > 0;) {
        Step& s = split[i];
        if (s.kind == Step::Kind::Load) {
            ++count;
        } else if (s.kind == Step::Kind::Proc && s.instr.op == Opcode::SetLdStreamLen) {
            s.instr = Instruction::set_stream_len(count);
        } else if (s.kind == Step::Kind::Proc && s.instr.op == Opcode::Barrier) {
            count = 0;
        }
    }
    return split;
}

CuProgram split_streams(const Combined& seq) {
    CuProgram p;
    for (const Step& s : seq) {
        switch (s.kind) {
            case Step::Kind::Proc:
                if (s.instr.op == Opcode::Barrier)
                    p.markers.push_back({static_cast<std::uint32_t>(p.processing.size()),
                                         static_cast<std::uint32_t>(p.loads.size()),
                                         static_cast<std::uint32_t>(p.stores.size())});
                p.processing.push_back(s.instr);
                p.proc_node.push_back(s.node);
                break;
            case Step::Kind::Load:
                p.loads.push_back(s.load);
                p.load_value.push_back(s.node);
                break;
            case Step::Kind::Store: p.stores.push_back(s.store); break;
        }
    }
    return p;
}

Combined merge_streams(const CuProgram& prog) {
    Combined out;
    std::size_t ld = 0, stp = 0;
    for (std::size_t i = 0; i < prog.processing.size(); ++i) {
        const Instruction& in = prog.processing[i];
        for (int k = 0; k < in.pops(); ++k, ++ld) {
            if (ld >= prog.loads.size()) throw CodegenError(CK::BadImage, ld, "pop without a load entry");
            Step s;
            s.kind = Step::Kind::Load;
            s.load = prog.loads[ld];
            s.node = ld < prog.load_value.size() ? prog.load_value[ld] : kNoNode;
            out.push_back(s);
        }
        out.push_back(Step{Step::Kind::Proc, in, {}, {}, i < prog.proc_node.size() ? prog.proc_node[i] : kNoNode});
        if (in.push) {
            if (stp >= prog.stores.size()) throw CodegenError(CK::BadImage, stp, "push without a store entry");
            Step s;
            s.kind = Step::Kind::Store;
            s.store = prog.stores[stp++];
            s.node = out.back().node;
            out.push_back(s);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::uint32_t encode_instruction(const Instruction& in) {
    std::uint32_t w = static_cast<std::uint32_t>(in.op) << 15;
    if (in.op == Opcode::SetLdStreamLen) {
        if (in.imm > kMaxImm)
            throw CodegenError(CK::ImmediateOverflow, 0, "SET_LD_STREAM_LEN immediate exceeds 15 bits");
        w |= in.imm;
    } else {
        if (in.dst > 31 || in.src_a > 31 || in.src_b > 31)
            throw CodegenError(CK::BadImage, 0, "register field exceeds 5 bits");
        w |= std::uint32_t{in.dst} << 10 | std::uint32_t{in.src_a} << 5 | in.src_b;
    }
    w |= std::uint32_t{in.pop0} << 18 | std::uint32_t{in.pop1} << 19 | std::uint32_t{in.push} << 20;
    return w;
}

Instruction decode_instruction(std::uint32_t w) {
    if (w >> 21) throw CodegenError(CK::BadImage, 0, "reserved instruction bits set");
    Instruction in;
    in.op = static_cast<Opcode>((w >> 15) & 7);
    if (in.op == Opcode::SetLdStreamLen) {
        in.imm = static_cast<std::uint16_t>(w & kMaxImm);
    } else {
        in.dst = (w >> 10) & 31;
        in.src_a = (w >> 5) & 31;
        in.src_b = w & 31;
    }
    in.pop0 = (w >> 18) & 1;
    in.pop1 = (w >> 19) & 1;
    in.push = (w >> 20) & 1;
    return in;
}

std::uint32_t encode_load(const LoadEntry& e) {
    if (e.bank > 63 || e.offset > 1023 || e.dst > 31) throw CodegenError(CK::BadImage, 0, "load entry field overflow");
    return std::uint32_t{e.scope == Scope::Global} << 21 | std::uint32_t{e.bank} << 15 | std::uint32_t{e.offset} << 5 |
           e.dst;
}

LoadEntry decode_load(std::uint32_t w) {
    if (w >> 22) throw CodegenError(CK::BadImage, 0, "reserved load entry bits set");
    return {(w >> 21) & 1 ? Scope::Global : Scope::Local, static_cast<std::uint8_t>((w >> 15) & 63),
            static_cast<std::uint16_t>((w >> 5) & 1023), static_cast<std::uint8_t>(w & 31)};
}

std::uint32_t encode_store(const StoreEntry& e) {
    if (e.offset > 1023) throw CodegenError(CK::BadImage, 0, "store offset overflow");
    return std::uint32_t{e.scope == Scope::Global} << 10 | e.offset;
}

StoreEntry decode_store(std::uint32_t w) {
    if (w >> 11) throw CodegenError(CK::BadImage, 0, "reserved store entry bits set");
    return {(w >> 10) & 1 ? Scope::Global : Scope::Local, static_cast<std::uint16_t>(w & 1023)};
}

std::vector<std::uint8_t> encode_binary(const CuProgram& prog) {
    std::vector<std::uint32_t> words{kImageMagic, static_cast<std::uint32_t>(prog.processing.size()),
                                     static_cast<std::uint32_t>(prog.loads.size()),
                                     static_cast<std::uint32_t>(prog.stores.size()),
                                     static_cast<std::uint32_t>(prog.markers.size())};
    for (const auto& in : prog.processing) words.push_back(encode_instruction(in));
    for (const auto& e : prog.loads) words.push_back(encode_load(e));
    for (const auto& e : prog.stores) words.push_back(encode_store(e));
    for (const auto& m : prog.markers) {
        words.push_back(m.proc_pos);
        words.push_back(m.load_pos);
        words.push_back(m.store_pos);
    }
    std::vector<std::uint8_t> bytes;
    bytes.reserve(words.size() * 4);
    for (std::uint32_t w : words)
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(w >> (8 * b)));
    return bytes;
}

CuProgram decode_binary(const std::vector<std::uint8_t>& image) {
    if (image.size() % 4) throw CodegenError(CK::BadImage, 0, "image size not a multiple of 4");
    std::vector<std::uint32_t> w(image.size() / 4);
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = std::uint32_t{image[4 * i]} | std::uint32_t{image[4 * i + 1]} << 8 |
               std::uint32_t{image[4 * i + 2]} << 16 | std::uint32_t{image[4 * i + 3]} << 24;
    if (w.size() < 5 || w[0] != kImageMagic) throw CodegenError(CK::BadImage, 0, "bad image header");
    const std::size_t np = w[1], nl = w[2], ns = w[3], nm = w[4];
    if (w.size() != 5 + np + nl + ns + 3 * nm) throw CodegenError(CK::BadImage, 0, "image section sizes disagree");
    CuProgram p;
    std::size_t i = 5;
    for (std::size_t k = 0; k < np; ++k) p.processing.push_back(decode_instruction(w[i++]));
    for (std::size_t k = 0; k < nl; ++k) p.loads.push_back(decode_load(w[i++]));
    for (std::size_t k = 0; k < ns; ++k) p.stores.push_back(decode_store(w[i++]));
    for (std::size_t k = 0; k < nm; ++k, i += 3) p.markers.push_back({w[i], w[i + 1], w[i + 2]});
    return p;
}

nlohmann::json disassemble(const CuProgram& prog) {
    auto hex = [](std::uint32_t w) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "0x%08X", w);
        return std::string(buf);
    };
    nlohmann::json j;
    j["processing"] = nlohmann::json::array();
    for (std::size_t i = 0; i < prog.processing.size(); ++i) {
        nlohmann::json e{{"pos", i},
                         {"word", hex(encode_instruction(prog.processing[i]))},
                         {"text", prog.processing[i].to_string()}};
        if (i < prog.proc_node.size() && prog.proc_node[i] != kNoNode) e["node"] = prog.proc_node[i];
        j["processing"].push_back(e);
    }
    j["loads"] = nlohmann::json::array();
    for (std::size_t i = 0; i < prog.loads.size(); ++i) {
        const auto& l = prog.loads[i];
        nlohmann::json e{{"pos", i},
                         {"word", hex(encode_load(l))},
                         {"scope", l.scope == Scope::Global ? "global" : "local"},
                         {"offset", l.offset},
                         {"dst", l.dst}};
        if (l.scope == Scope::Global) e["bank"] = l.bank;
        j["loads"].push_back(e);
    }
    j["stores"] = nlohmann::json::array();
    for (std::size_t i = 0; i < prog.stores.size(); ++i) {
        const auto& s = prog.stores[i];
        j["stores"].push_back({{"pos", i},
                               {"word", hex(encode_store(s))},
                               {"scope", s.scope == Scope::Global ? "global" : "local"},
                               {"offset", s.offset}});
    }
    j["markers"] = nlohmann::json::array();
    for (const auto& m : prog.markers)
        j["markers"].push_back({{"kind", prog.processing.at(m.proc_pos).is_local_barrier() ? "local" : "global"},
                                {"proc_pos", m.proc_pos},
                                {"load_pos", m.load_pos},
                                {"store_pos", m.store_pos}});
    return j;
}

// ---------------------------------------------------------------------------

CompiledProgram compile(const Dag& dag, const SuperlayerPlan& plan, const MachineConfig& cfg,
                        const CompileOptions& options) {
    cfg.check();
    if (plan.num_cus != cfg.num_cus)
        throw CodegenError(CK::BadConfig, 0, "plan width " + std::to_string(plan.num_cus) +
                                                 " differs from machine width " + std::to_string(cfg.num_cus));
    if (auto err = check_plan(dag, plan)) throw PlanError("invalid plan: " + *err);
    if (!dag.is_binary()) throw CodegenError(CK::BadConfig, 0, "DAG must be normalized to binary arity");

    CompiledProgram out;
    out.cfg = cfg;
    out.mode = options.mode;
    out.superlayers = plan.barrier_count();
    out.outputs = options.outputs;
    if (out.outputs.empty())
        for (NodeId v : dag.sinks())
            if (is_compute(dag.op(v))) out.outputs.push_back(v);
    for (NodeId v : out.outputs)
        if (v >= dag.size() || !is_compute(dag.op(v)))
            throw std::invalid_argument("output " + std::to_string(v) + " is not a compute node");

    out.memory = assign_memory(dag, plan, cfg, out.outputs);
    out.cus.resize(cfg.num_cus);
    for (std::size_t c = 0; c < cfg.num_cus; ++c) {
        std::vector<Combined> bodies;
        std::uint32_t peak = out.memory.spill_base[c];
        for (std::size_t s = 0; s < plan.barrier_count(); ++s) {
            std::uint32_t next_spill = out.memory.spill_base[c];
            bodies.push_back(allocate_registers(schedule_subgraph(plan.superlayers[s][c], dag), dag, c, out.memory, cfg,
                                                next_spill, out.alloc));
            peak = std::max(peak, next_spill);
        }
        out.memory.local_used[c] = peak;
        out.cus[c] = split_streams(insert_barriers(bodies, options.mode, c));
        for (const auto& in : out.cus[c].processing) out.local_barriers += in.is_local_barrier();
    }
    return out;
}

std::optional<std::string> check_dataflow(const CuProgram& prog, const Dag& dag) {
    std::vector<NodeId> reg(32, kNoNode);
    std::size_t ld = 0, st = 0;
    auto at = [](std::size_t i) { return "instruction " + std::to_string(i) + ": "; };
    for (std::size_t i = 0; i < prog.processing.size(); ++i) {
        const Instruction& in = prog.processing[i];
        if (in.op == Opcode::Barrier) {
            if (in.is_global_barrier()) std::fill(reg.begin(), reg.end(), kNoNode);
            continue;
        }
        if (in.op == Opcode::SetLdStreamLen) {
            std::size_t next = prog.loads.size();
            for (const auto& m : prog.markers)
                if (m.proc_pos > i) {
                    next = m.load_pos;
                    break;
                }
            if (in.imm != next - ld) return at(i) + "stream length " + std::to_string(in.imm) + " != " + std::to_string(next - ld);
            continue;
        }
        if (in.op == Opcode::SetPrecision) continue;
        std::vector<int> written;
        for (int k = 0; k < in.pops(); ++k, ++ld) {
            if (ld >= prog.loads.size()) return at(i) + "pop past the load table";
            const auto& e = prog.loads[ld];
            if (std::find(written.begin(), written.end(), e.dst) != written.end()) return at(i) + "pops collide";
            written.push_back(e.dst);
            reg[e.dst] = prog.load_value.at(ld);
        }
        if (in.op == Opcode::Nop) {
            if (in.push) return at(i) + "NOP pushes";
            continue;
        }
        if (std::find(written.begin(), written.end(), in.dst) != written.end())
            return at(i) + "ALU write collides with a pop";
        const NodeId v = prog.proc_node.at(i);
        if (v == kNoNode || v >= dag.size()) return at(i) + "no node annotation";
        if (op_for(in.op) != dag.op(v)) return at(i) + "opcode does not match node " + std::to_string(v);
        const auto ops = dag.operands(v);
        const NodeId a = ops[0], b = ops.size() > 1 ? ops[1] : ops[0];
        if (reg[in.src_a] != a || reg[in.src_b] != b)
            return at(i) + "operands of node " + std::to_string(v) + " not in r" + std::to_string(in.src_a) + "/r" +
                   std::to_string(in.src_b);
        reg[in.dst] = v;
        if (in.push) ++st;
    }
    if (ld != prog.loads.size()) return "unconsumed load entries";
    if (st != prog.stores.size()) return "store table does not match pushes";
    return std::nullopt;
}

}  // namespace dagpu
