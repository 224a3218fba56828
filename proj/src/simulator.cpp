#include "dagpu/simulator.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <sstream>

#include "dagpu/partition.hpp"
#include "dagpu/rng.hpp"

namespace dagpu {

std::string_view stall_name(StallCause c) {
    switch (c) {
        case StallCause::LoadFifoEmpty: return "load_fifo_empty";
        case StallCause::StoreFifoFull: return "store_fifo_full";
        case StallCause::BarrierWait: return "barrier_wait";
        case StallCause::BankConflict: return "bank_conflict";
        case StallCause::StreamExhausted: return "stream_exhausted";
    }
    return "?";
}

std::string_view event_name(EventKind k) {
    switch (k) {
        case EventKind::Exec: return "exec";
        case EventKind::LoadIssue: return "load_issue";
        case EventKind::LoadGrant: return "load_grant";
        case EventKind::Store: return "store";
        case EventKind::BarrierArrive: return "barrier_arrive";
        case EventKind::BarrierRelease: return "barrier_release";
        case EventKind::LocalBarrier: return "local_barrier";
    }
    return "?";
}

std::uint64_t CuCounters::stalled() const { return std::accumulate(stall.begin(), stall.end(), std::uint64_t{0}); }

MemoryImage MemoryImage::zeros(const MachineConfig& cfg) {
    MemoryImage m;
    m.global.assign(cfg.num_banks(), std::vector<std::uint32_t>(cfg.global_bank_words, 0));
    m.local.assign(cfg.num_cus, std::vector<std::uint32_t>(cfg.local_spad_words, 0));
    return m;
}

nlohmann::json event_to_json(const Event& e) {
    nlohmann::json d;
    const auto& x = e.detail;
    switch (e.kind) {
        case EventKind::Exec: d = {{"pc", x[0]}, {"epoch", x[1]}, {"word", x[2]}}; break;
        case EventKind::LoadIssue: d = {{"scope", x[0] ? "global" : "local"}, {"bank", x[1]}, {"offset", x[2]}}; break;
        case EventKind::LoadGrant: d = {{"bank", x[0]}, {"offset", x[1]}}; break;
        case EventKind::Store: d = {{"scope", x[0] ? "global" : "local"}, {"bank", x[1]}, {"offset", x[2]}}; break;
        case EventKind::BarrierArrive:
        case EventKind::BarrierRelease: d = {{"epoch", x[0]}}; break;
        case EventKind::LocalBarrier: d = {{"pc", x[0]}}; break;
    }
    return {{"cycle", e.cycle}, {"cu", e.cu}, {"event", event_name(e.kind)}, {"detail", d}};
}

nlohmann::json report_to_json(const SimReport& r) {
    nlohmann::json cus = nlohmann::json::array();
    for (std::size_t c = 0; c < r.cus.size(); ++c) {
        const auto& k = r.cus[c];
        nlohmann::json stalls;
        for (std::size_t s = 0; s < kStallCauses; ++s) stalls[std::string(stall_name(static_cast<StallCause>(s)))] = k.stall[s];
        cus.push_back({{"cu", c},
                       {"active", k.active},
                       {"alu", k.alu},
                       {"stalled", k.stalled()},
                       {"idle", k.idle},
                       {"stalls", stalls},
                       {"local_loads", k.local_loads},
                       {"global_loads", k.global_loads},
                       {"local_stores", k.local_stores},
                       {"global_stores", k.global_stores}});
    }
    return {{"num_cus", r.num_cus},
            {"coupled", r.coupled},
            {"precision_bits", lane_bits(r.mode)},
            {"lanes", r.lanes()},
            {"total_cycles", r.total_cycles},
            {"alu_instructions", r.alu_instructions},
            {"compute_ops", r.compute_ops},
            {"global_barriers", r.global_barriers},
            {"local_barriers", r.local_barriers},
            {"ops_per_barrier", r.ops_per_barrier},
            {"utilization", r.utilization},
            {"frequency_hz", r.frequency_hz},
            {"gops", r.gops},
            {"cus", cus}};
}

namespace {

using SK = SimError::Kind;

struct FifoEntry {
    std::uint8_t dst = 0;
    std::uint32_t data = 0;
    std::uint64_t ready = 0;
    std::uint64_t issued = 0;
    bool valid = false;  // false while a global request waits for its grant
};

struct StoreItem {
    StoreEntry entry;
    std::uint32_t data = 0;
    std::uint64_t pushed = 0;
};

struct Cu {
    const CuProgram* prog = nullptr;
    // processing element
    std::size_t pc = 0;
    std::array<std::uint32_t, 32> regs{};
    PrecisionMode mode = PrecisionMode::P32;
    bool arrived = false;
    std::uint32_t epoch = 0;
    bool store_cycle = false;  // coupled mode: inline store occupies the PE
    // load unit
    std::size_t lpos = 0;
    std::uint32_t credit = 0;
    std::deque<FifoEntry> fifo;
    std::uint64_t fifo_head_seq = 0;
    bool pending = false;
    std::uint32_t pending_bank = 0, pending_offset = 0;
    std::uint64_t pending_seq = 0;
    std::size_t next_local_marker = 0;  // index into local_markers
    std::vector<BarrierMarker> local_markers;
    // store unit
    std::deque<StoreItem> sfifo;
    std::size_t spos = 0;
    std::uint64_t stores_done = 0;

    bool finished() const { return pc >= prog->processing.size(); }
};

class Machine {
public:
    Machine(const std::vector<CuProgram>& programs, MemoryImage image, const MachineConfig& cfg, const SimOptions& opt)
        : cfg_(cfg), opt_(opt), mem_(std::move(image)), cus_(cfg.num_cus) {
        cfg.check();
        if (programs.size() != cfg.num_cus)
            throw SimError(SK::BadProgram, 0, 0, "expected one program per CU");
        if (mem_.global.size() != cfg.num_banks() || mem_.local.size() != cfg.num_cus)
            throw SimError(SK::BadProgram, 0, 0, "memory image does not match the machine");
        for (std::size_t c = 0; c < cfg.num_cus; ++c) {
            cus_[c].prog = &programs[c];
            for (const auto& m : programs[c].markers)
                if (programs[c].processing.at(m.proc_pos).is_local_barrier()) cus_[c].local_markers.push_back(m);
        }
        report_.num_cus = cfg.num_cus;
        report_.coupled = opt.coupled;
        report_.cus.assign(cfg.num_cus, {});
        for (const auto& p : programs)
            for (const auto& in : p.processing)
                if (in.op == Opcode::SetPrecision) {
                    report_.mode = static_cast<PrecisionMode>(in.src_b & 3);
                    goto found;
                }
    found:;
    }

    SimResult run() {
        const std::uint64_t patience = 10 * cfg_.num_cus + 16;
        std::uint64_t quiet = 0;
        while (!done()) {
            progress_ = false;
            stores();
            arbitrate();
            issue_loads();
            processing();
            sync();
            ++t_;
            quiet = progress_ ? 0 : quiet + 1;
            if (quiet > patience) throw SimError(SK::Deadlock, t_, 0, "deadlock at cycle " + std::to_string(t_) + "\n" + dump());
        }
        report_.total_cycles = t_;
        for (const auto& k : report_.cus) report_.alu_instructions += k.alu;
        report_.compute_ops = report_.alu_instructions * static_cast<std::uint64_t>(report_.lanes());
        report_.ops_per_barrier = report_.global_barriers
                                      ? static_cast<double>(report_.alu_instructions) / report_.global_barriers
                                      : static_cast<double>(report_.alu_instructions);
        report_.utilization = t_ ? static_cast<double>(report_.alu_instructions) / (static_cast<double>(t_) * cfg_.num_cus) : 0;
        report_.frequency_hz = opt_.frequency_hz;
        report_.gops = t_ ? static_cast<double>(report_.compute_ops) * opt_.frequency_hz / static_cast<double>(t_) / 1e9 : 0;
        return {std::move(report_), std::move(mem_), std::move(events_)};
    }

private:
    void event(std::size_t cu, EventKind k, std::uint32_t a = 0, std::uint32_t b = 0, std::uint32_t c = 0) {
        progress_ = true;
        if (opt_.trace) events_.push_back({t_, static_cast<std::uint32_t>(cu), k, {a, b, c}});
    }

    bool done() const {
        for (const Cu& cu : cus_)
            if (!cu.finished() || !cu.sfifo.empty()) return false;
        return true;
    }

    [[noreturn]] void fault(std::size_t cu, const std::string& what) const {
        throw SimError(SK::AddressFault, t_, cu, "CU " + std::to_string(cu) + ": " + what);
    }

    void stores() {
        bank_busy_.assign(cfg_.num_banks(), 0);
        for (std::size_t c = 0; c < cus_.size(); ++c) {
            Cu& cu = cus_[c];
            if (cu.sfifo.empty() || cu.sfifo.front().pushed + cfg_.store_latency > t_) continue;
            const StoreItem it = cu.sfifo.front();
            cu.sfifo.pop_front();
            auto& counters = report_.cus[c];
            if (it.entry.scope == Scope::Local) {
                if (it.entry.offset >= cfg_.local_spad_words) fault(c, "local store out of range");
                mem_.local[c][it.entry.offset] = it.data;
                ++counters.local_stores;
                event(c, EventKind::Store, 0, static_cast<std::uint32_t>(c), it.entry.offset);
            } else {
                // a CU stores only into its own bank
                if (it.entry.offset >= cfg_.global_bank_words) fault(c, "global store out of range");
                mem_.global[c][it.entry.offset] = it.data;
                bank_busy_[c] = 1;
                ++counters.global_stores;
                event(c, EventKind::Store, 1, static_cast<std::uint32_t>(c), it.entry.offset);
            }
            ++cu.stores_done;
        }
    }

    void arbitrate() {
        requests_.assign(cfg_.num_banks(), {});
        for (std::size_t c = 0; c < cus_.size(); ++c)
            if (cus_[c].pending) requests_[cus_[c].pending_bank].push_back(c);
        rr_.resize(cfg_.num_banks(), 0);
        for (std::size_t b = 0; b < requests_.size(); ++b) {
            const auto& req = requests_[b];
            if (req.empty() || bank_busy_[b]) continue;
            // first requester at or after the round-robin pointer
            std::size_t win = req.front();
            for (std::size_t c : req)
                if (c >= rr_[b]) {
                    win = c;
                    break;
                }
            rr_[b] = (win + 1) % cfg_.num_cus;
            Cu& cu = cus_[win];
            FifoEntry& e = cu.fifo.at(cu.pending_seq - cu.fifo_head_seq);
            e.data = mem_.global[b][cu.pending_offset];
            e.ready = t_ + static_cast<std::uint64_t>(cfg_.global_load_latency - 1);
            e.valid = true;
            cu.pending = false;
            event(win, EventKind::LoadGrant, static_cast<std::uint32_t>(b), cu.pending_offset);
        }
    }

    bool local_gate_closed(const Cu& cu) const {
        if (cu.next_local_marker >= cu.local_markers.size()) return false;
        const auto& m = cu.local_markers[cu.next_local_marker];
        return m.load_pos == cu.lpos && cu.stores_done < m.store_pos;
    }

    void issue_loads() {
        for (std::size_t c = 0; c < cus_.size(); ++c) {
            Cu& cu = cus_[c];
            const auto& loads = cu.prog->loads;
            while (cu.next_local_marker < cu.local_markers.size() &&
                   cu.local_markers[cu.next_local_marker].load_pos < cu.lpos)
                ++cu.next_local_marker;
            if (cu.credit == 0 || cu.lpos >= loads.size()) continue;
            if (cu.fifo.size() >= cfg_.load_fifo_depth || local_gate_closed(cu)) continue;
            if (opt_.coupled && !coupled_wants_load(cu)) continue;
            const LoadEntry& e = loads[cu.lpos];
            FifoEntry f;
            f.dst = e.dst;
            f.issued = t_;
            auto& counters = report_.cus[c];
            if (e.scope == Scope::Global) {
                if (cu.pending) continue;
                if (e.bank >= cfg_.num_banks() || e.offset >= cfg_.global_bank_words) fault(c, "global load out of range");
                cu.pending = true;
                cu.pending_bank = e.bank;
                cu.pending_offset = e.offset;
                cu.pending_seq = cu.fifo_head_seq + cu.fifo.size();
                ++counters.global_loads;
            } else {
                if (e.offset >= cfg_.local_spad_words) fault(c, "local load out of range");
                f.data = mem_.local[c][e.offset];
                f.ready = t_ + static_cast<std::uint64_t>(cfg_.local_load_latency);
                f.valid = true;
                ++counters.local_loads;
            }
            cu.fifo.push_back(f);
            ++cu.lpos;
            --cu.credit;
            event(c, EventKind::LoadIssue, e.scope == Scope::Global, e.bank, e.offset);
        }
    }

    // In-order coupled execution: one outstanding load, issued only when the
    // PE is waiting on it.
    bool coupled_wants_load(const Cu& cu) const {
        if (cu.finished()) return false;
        const Instruction& in = cu.prog->processing[cu.pc];
        return static_cast<int>(cu.fifo.size()) < in.pops() &&
               std::all_of(cu.fifo.begin(), cu.fifo.end(), [&](const FifoEntry& f) { return f.valid && f.ready <= t_; });
    }

    void stall(std::size_t c, StallCause s) { ++report_.cus[c].stall[static_cast<std::size_t>(s)]; }

    void processing() {
        for (std::size_t c = 0; c < cus_.size(); ++c) {
            Cu& cu = cus_[c];
            auto& counters = report_.cus[c];
            if (cu.finished()) {
                ++counters.idle;
                continue;
            }
            if (cu.store_cycle) {
                cu.store_cycle = false;
                ++counters.active;
                progress_ = true;
                continue;
            }
            const Instruction& in = cu.prog->processing[cu.pc];
            switch (in.op) {
                case Opcode::Barrier:
                    if (in.is_local_barrier()) {
                        ++counters.active;
                        ++report_.local_barriers;
                        event(c, EventKind::LocalBarrier, static_cast<std::uint32_t>(cu.pc));
                        ++cu.pc;
                    } else if (!cu.arrived) {
                        cu.arrived = true;
                        ++counters.active;
                        event(c, EventKind::BarrierArrive, cu.epoch);
                    } else {
                        stall(c, StallCause::BarrierWait);
                    }
                    continue;
                case Opcode::SetLdStreamLen:
                    cu.credit = in.imm;
                    retire(c, in);
                    continue;
                case Opcode::SetPrecision:
                    cu.mode = static_cast<PrecisionMode>(in.src_b & 3);
                    retire(c, in);
                    continue;
                default: break;
            }

            const auto k = static_cast<std::size_t>(in.pops());
            if (cu.fifo.size() < k) {
                if (local_gate_closed(cu))
                    stall(c, StallCause::BarrierWait);
                else if (cu.credit == 0)
                    stall(c, StallCause::StreamExhausted);
                else
                    stall(c, StallCause::LoadFifoEmpty);
                continue;
            }
            bool ready = true, conflict = false;
            for (std::size_t i = 0; i < k; ++i) {
                const FifoEntry& f = cu.fifo[i];
                if (!f.valid) {
                    ready = false;
                    conflict |= f.issued < t_;
                } else if (f.ready > t_) {
                    ready = false;
                }
            }
            if (!ready) {
                stall(c, conflict ? StallCause::BankConflict : StallCause::LoadFifoEmpty);
                continue;
            }
            if (in.push && cu.sfifo.size() >= cfg_.store_fifo_depth) {
                stall(c, StallCause::StoreFifoFull);
                continue;
            }
            for (std::size_t i = 0; i < k; ++i) {
                cu.regs[cu.fifo.front().dst] = cu.fifo.front().data;
                cu.fifo.pop_front();
                ++cu.fifo_head_seq;
            }
            if (is_alu(in.op)) {
                const Datapath dp{cu.mode, opt_.family};
                const std::uint32_t r = dp.apply(*op_for(in.op), cu.regs[in.src_a], cu.regs[in.src_b]);
                cu.regs[in.dst] = r;
                ++counters.alu;
                if (in.push) {
                    if (cu.spos >= cu.prog->stores.size())
                        throw SimError(SK::BadProgram, t_, c, "push without a store entry");
                    cu.sfifo.push_back({cu.prog->stores[cu.spos++], r, t_});
                    if (opt_.coupled) cu.store_cycle = true;
                }
            }
            retire(c, in);
        }
    }

    void retire(std::size_t c, const Instruction& in) {
        Cu& cu = cus_[c];
        ++report_.cus[c].active;
        if (opt_.trace) event(c, EventKind::Exec, static_cast<std::uint32_t>(cu.pc), cu.epoch, encode_instruction(in));
        progress_ = true;
        ++cu.pc;
    }

    void sync() {
        bool any = false;
        for (const Cu& cu : cus_) {
            if (cu.arrived) {
                any = true;
                if (!cu.sfifo.empty()) return;
            } else if (!cu.finished()) {
                return;
            }
        }
        if (!any) return;
        // single-cycle release: every CU proceeds from the next cycle on
        ++report_.global_barriers;
        for (std::size_t c = 0; c < cus_.size(); ++c) {
            Cu& cu = cus_[c];
            if (!cu.arrived) continue;
            cu.arrived = false;
            ++cu.pc;
            ++cu.epoch;
            progress_ = true;
            if (opt_.trace) events_.push_back({t_ + 1, static_cast<std::uint32_t>(c), EventKind::BarrierRelease, {cu.epoch - 1, 0, 0}});
        }
    }

    std::string dump() const {
        std::ostringstream out;
        for (std::size_t c = 0; c < cus_.size(); ++c) {
            const Cu& cu = cus_[c];
            if (cu.finished() && cu.sfifo.empty()) continue;
            out << "CU " << c << ": pc=" << cu.pc << '/' << cu.prog->processing.size();
            if (!cu.finished()) out << " (" << cu.prog->processing[cu.pc].to_string() << ')';
            out << " lpos=" << cu.lpos << '/' << cu.prog->loads.size() << " credit=" << cu.credit
                << " fifo=" << cu.fifo.size() << " pending=" << cu.pending << " stores_queued=" << cu.sfifo.size()
                << " stores_done=" << cu.stores_done << " arrived=" << cu.arrived << '\n';
        }
        return out.str();
    }

    const MachineConfig& cfg_;
    SimOptions opt_;
    MemoryImage mem_;
    std::vector<Cu> cus_;
    std::uint64_t t_ = 0;
    bool progress_ = false;
    std::vector<char> bank_busy_;
    std::vector<std::vector<std::size_t>> requests_;
    std::vector<std::size_t> rr_;
    SimReport report_;
    std::vector<Event> events_;
};

}  // namespace

SimResult simulate(const std::vector<CuProgram>& programs, MemoryImage image, const MachineConfig& cfg,
                   const SimOptions& options) {
    return Machine(programs, std::move(image), cfg, options).run();
}

MemoryImage build_image(const CompiledProgram& prog, const Dag& dag, const std::vector<InputBinding>& lane_inputs,
                        NumberFamily family) {
    const Datapath dp{prog.mode, family};
    const ArithModel model = dp.lane_model();
    const auto n = static_cast<std::size_t>(lanes(prog.mode));
    if (lane_inputs.size() != n)
        throw std::invalid_argument("need " + std::to_string(n) + " input bindings, got " + std::to_string(lane_inputs.size()));
    MemoryImage img = MemoryImage::zeros(prog.cfg);
    for (const Preload& p : prog.memory.preloads) {
        std::vector<ArithModel::Word> words(n);
        for (std::size_t l = 0; l < n; ++l) {
            if (dag.op(p.node) == Op::Const) {
                words[l] = model.encode(dag.node(p.node).const_value);
            } else {
                auto it = lane_inputs[l].find(p.node);
                if (it == lane_inputs[l].end())
                    throw DagError(DagError::Kind::MissingInput, {p.node}, "input " + std::to_string(p.node) + " not bound");
                words[l] = model.encode(it->second);
            }
        }
        img.global.at(p.where.unit).at(p.where.offset) = dp.pack(words);
    }
    return img;
}

namespace {

BatchRun run_impl(const CompiledProgram& prog, const Dag& dag, const std::vector<InputBinding>& lane_inputs,
                  const SimOptions& options) {
    BatchRun out;
    out.sim = simulate(prog.cus, build_image(prog, dag, lane_inputs, options.family), prog.cfg, options);
    const Datapath dp{prog.mode, options.family};
    for (NodeId v : prog.outputs) {
        const Placement& h = prog.memory.home.at(v).value();
        const std::uint32_t w =
            h.scope == Scope::Local ? out.sim.memory.local.at(h.unit).at(h.offset) : out.sim.memory.global.at(h.unit).at(h.offset);
        out.outputs.push_back(dp.unpack(w));
    }
    return out;
}

}  // namespace

BatchRun run(const CompiledProgram& prog, const Dag& dag, const std::vector<InputBinding>& lane_inputs, SimOptions options) {
    options.coupled = false;
    return run_impl(prog, dag, lane_inputs, options);
}

BatchRun run_coupled(const CompiledProgram& prog, const Dag& dag, const std::vector<InputBinding>& lane_inputs,
                     SimOptions options) {
    options.coupled = true;
    return run_impl(prog, dag, lane_inputs, options);
}

std::vector<std::vector<ArithModel::Word>> reference_outputs(const CompiledProgram& prog, const Dag& dag,
                                                             const std::vector<InputBinding>& lane_inputs,
                                                             NumberFamily family) {
    const ArithModel model = Datapath{prog.mode, family}.lane_model();
    std::vector<std::vector<ArithModel::Word>> out(prog.outputs.size());
    for (const auto& binding : lane_inputs) {
        const auto values = evaluate_reference(dag, binding, model);
        for (std::size_t i = 0; i < prog.outputs.size(); ++i) out[i].push_back(values[prog.outputs[i]]);
    }
    return out;
}

std::vector<InputBinding> random_lane_inputs(const Dag& dag, PrecisionMode mode, std::uint64_t seed, double lo, double hi) {
    Rng rng(seed);
    std::vector<InputBinding> out(static_cast<std::size_t>(lanes(mode)));
    for (auto& b : out)
        for (NodeId v = 0; v < dag.size(); ++v)
            if (dag.op(v) == Op::Input) b[v] = rng.uniform(lo, hi);
    return out;
}

double peak_throughput(const MachineConfig& cfg, double frequency_hz, PrecisionMode mode) {
    return static_cast<double>(cfg.num_cus) * lanes(mode) * frequency_hz / 1e9;
}

std::vector<SweepPoint> sweep_active_cus(const Dag& dag, const MachineConfig& cfg, const std::vector<std::size_t>& counts,
                                         PrecisionMode mode, SimOptions options, std::uint64_t seed) {
    const auto inputs = random_lane_inputs(dag, mode, seed);
    std::vector<SweepPoint> out;
    for (std::size_t k : counts) {
        if (k < 1 || k > cfg.num_cus) throw std::invalid_argument("active CU count out of range");
        SuperlayerPlan plan = superlayer_partition(dag, k);
        plan.num_cus = cfg.num_cus;
        for (auto& sl : plan.superlayers) sl.resize(cfg.num_cus);
        const auto prog = compile(dag, plan, cfg, {mode, {}});
        const auto r = run(prog, dag, inputs, options).sim.report;
        SweepPoint p;
        p.active_cus = k;
        p.cycles = r.total_cycles;
        p.compute_ops = r.compute_ops;
        p.ops_per_cycle = r.total_cycles ? static_cast<double>(r.compute_ops) / static_cast<double>(r.total_cycles) : 0;
        p.utilization = r.total_cycles ? static_cast<double>(r.alu_instructions) / (static_cast<double>(r.total_cycles) * k) : 0;
        p.barriers = plan.barrier_count();
        out.push_back(p);
    }
    return out;
}

}  // namespace dagpu
