// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dagpu/partition.hpp"
#include "dagpu/simulator.hpp"
#include "dagpu/workloads.hpp"
#include "posit_oracle.hpp"

using namespace dagpu;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(int id, bool ok, const std::string& title, const std::string& detail) {
    std::printf("[%s] C%-2d %s: %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += !ok;
}

void info(const std::string& line) {
    std::printf("       %s\n", line.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

MachineConfig machine(std::size_t cus) {
    MachineConfig m;
    m.num_cus = cus;
    return m;
}

struct Workload {
    std::string name;
    Dag dag;
    bool irregular = true;
};

std::vector<Workload> benchmark_suite() {
    std::vector<Workload> s;
    s.push_back({"sptrsv-500", sptrsv_dag(random_lower_triangular(500, 3.0, 20, 11)).dag});
    s.push_back({"sptrsv-1000", sptrsv_dag(random_lower_triangular(1000, 4.0, 30, 12)).dag});
    s.push_back({"sptrsv-2000", sptrsv_dag(random_lower_triangular(2000, 4.0, 30, 13)).dag});
    s.push_back({"sptrsv-3000", sptrsv_dag(random_lower_triangular(3000, 3.0, 60, 14)).dag});
    s.push_back({"pc-1000", pc_random(1000, 5, {}, 21)});
    s.push_back({"pc-4000", pc_random(4000, 6, {}, 22)});
    s.push_back({"pc-10000", pc_random(10000, 8, {}, 23)});
    s.push_back({"pc-20000", pc_random(20000, 8, {2, 6, 0.3}, 24)});
    s.push_back({"gemv-32", gemv_dag(32).dag, false});
    s.push_back({"gemv-64", gemv_dag(64).dag, false});
    s.push_back({"gemv-128", gemv_dag(128).dag, false});
    return s;
}

// ---------------------------------------------------------------------------

void oracle_equivalence() {
    const auto t0 = Clock::now();
    std::vector<Workload> corpus;
    for (int i = 0; i < 40; ++i) {
        // rows from 40 up to 3300 on a geometric ramp
        const auto rows = static_cast<std::size_t>(40 * std::pow(3300.0 / 40, i / 39.0));
        const double avg = 2.0 + (i % 3);
        const std::size_t band = 8 + 8 * (i % 5);
        corpus.push_back({"sptrsv-" + std::to_string(rows),
                          sptrsv_dag(random_lower_triangular(rows, avg, band, 100 + i)).dag});
    }
    for (int i = 0; i < 40; ++i) {
        const auto inputs = static_cast<std::size_t>(32 * std::pow(20000.0 / 32, i / 39.0));
        const std::size_t depth = 3 + i % 7;
        const FaninDistribution fan{2, 3 + i % 4, 0.1 * (i % 4)};
        corpus.push_back({"pc-" + std::to_string(inputs), pc_random(inputs, depth, fan, 200 + i)});
    }
    for (int i = 0; i < 20; ++i) {
        const std::size_t n = 2 + i * 126 / 19;
        corpus.push_back({"gemv-" + std::to_string(n), gemv_dag(n).dag, false});
    }
    const std::size_t widths[] = {64, 16, 64, 8};

    std::size_t runs = 0, mismatches = 0, compile_errors = 0, largest = 0;
    std::string first_bad;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Dag& d = corpus[i].dag;
        largest = std::max(largest, d.size());
        // global memory shrinks with the CU count, so narrow machines only get small DAGs
        const std::size_t cus = d.size() < 3000 ? widths[i % 4] : 64;
        for (const auto& plan : {layerwise_partition(d, cus), superlayer_partition(d, cus)}) {
            for (PrecisionMode mode : {PrecisionMode::P32, PrecisionMode::P16, PrecisionMode::P8}) {
                CompiledProgram prog;
                try {
                    prog = compile(d, plan, machine(cus), {mode, {}});
                } catch (const std::exception& e) {
                    ++compile_errors;
                    if (first_bad.empty()) first_bad = corpus[i].name + ": " + e.what();
                    continue;
                }
                const auto inputs = random_lane_inputs(d, mode, 1000 + i);
                for (NumberFamily fam : {NumberFamily::CustomPosit, NumberFamily::StandardPosit}) {
                    SimOptions opt;
                    opt.family = fam;
                    ++runs;
                    if (run(prog, d, inputs, opt).outputs != reference_outputs(prog, d, inputs, fam)) {
                        ++mismatches;
                        if (first_bad.empty()) first_bad = corpus[i].name;
                    }
                }
            }
        }
    }
    const double secs = seconds_since(t0);
    std::string detail = std::to_string(corpus.size()) + " DAGs (largest " + std::to_string(largest) + " nodes), " +
                         std::to_string(runs) + " runs, " + std::to_string(mismatches) + " mismatches, " +
                         std::to_string(compile_errors) + " compile errors, " + fmt("%.1f s", secs);
    if (!first_bad.empty()) detail += "; first failure " + first_bad;
    const bool ok = mismatches == 0 && compile_errors == 0 && corpus.size() >= 100 && largest <= 50000 && secs < 600;
    verdict(1, ok, "oracle equivalence", detail);
}

// ---------------------------------------------------------------------------

void posit_exhaustive() {
    const auto t0 = Clock::now();
    std::size_t checks = 0, bad = 0;
    auto expect = [&](bool ok) {
        ++checks;
        bad += !ok;
    };
    for (int es = 0; es <= 2; ++es) {
        const auto cfg = posit::PositConfig::make(8, es);
        std::vector<long double> val(256);
        for (std::uint32_t p = 0; p < 256; ++p) val[p] = posit_oracle::decode(p, 8, es).value;
        for (std::uint32_t p = 0; p < 256; ++p) {
            if (p == cfg.nar()) continue;
            expect(posit::encode(posit::to_double(p, cfg), cfg) == p);
            expect(static_cast<long double>(posit::to_double(p, cfg)) == val[p]);
        }
        // monotone in two's-complement order over the reals
        for (std::int32_t s = -127; s < 127; ++s) {
            const auto a = static_cast<std::uint32_t>(s) & 0xFF, b = static_cast<std::uint32_t>(s + 1) & 0xFF;
            expect(posit::to_double(a, cfg) < posit::to_double(b, cfg));
        }
        for (std::uint32_t a = 0; a < 256; ++a)
            for (std::uint32_t b = 0; b < 256; ++b) {
                const std::uint32_t sum = posit::add(a, b, cfg), prod = posit::mul(a, b, cfg);
                expect(sum == posit::add(b, a, cfg));
                expect(prod == posit::mul(b, a, cfg));
                if (a == cfg.nar() || b == cfg.nar()) {
                    expect(sum == cfg.nar() && prod == cfg.nar());
                    continue;
                }
                // exact in long double for 8-bit operands
                expect(sum == posit_oracle::encode(val[a] + val[b], 8, es));
                expect(prod == posit_oracle::encode(val[a] * val[b], 8, es));
            }
    }
    for (int es : {0, 1, 2, 3}) {
        const auto cfg = posit::PositConfig::make(16, es);
        for (std::uint32_t p = 0; p < 65536; ++p) {
            if (p == cfg.nar()) continue;
            expect(posit::encode(posit::to_double(p, cfg), cfg) == p);
        }
    }
    const double secs = seconds_since(t0);
    verdict(2, bad == 0 && secs < 120, "posit codec exhaustive",
            std::to_string(checks) + " checks, " + std::to_string(bad) + " failures, " + fmt("%.1f s", secs));
}

// ---------------------------------------------------------------------------

void peak_gops() {
    const double p8 = peak_throughput(machine(64), 288e6, PrecisionMode::P8);
    const double p32 = peak_throughput(machine(64), 278e6, PrecisionMode::P32);
    const double e8 = std::fabs(p8 - 73.8) / 73.8, e32 = std::fabs(p32 - 17.8) / 17.8;
    verdict(3, e8 <= 0.005 && e32 <= 0.005, "peak throughput",
            fmt("64x4 lanes @ 288 MHz = %.2f GOPS", p8) + fmt(" (%.2f%% from 73.8), ", 100 * e8) +
                fmt("64x1 @ 278 MHz = %.2f GOPS", p32) + fmt(" (%.2f%% from 17.8)", 100 * e32));
}

// ---------------------------------------------------------------------------

void parallelism_rows() {
    struct Row {
        std::size_t n, l, par;
    };
    const Row rows[] = {{10414, 26, 400},   {13627, 27, 504},    {47334, 28, 1690},   {55007, 53, 1037},
                        {66819, 93, 718},   {77457, 92, 841},    {80962, 81, 999},    {98211, 54, 1818},
                        {121263, 70, 1732}, {149662, 82, 1825},  {5978, 52, 114},     {8406, 139, 60},
                        {10159, 136, 74},   {11298, 237, 47},    {22768, 242, 94},    {74199, 778, 95},
                        {79240, 929, 85},   {114275, 634, 180},  {140303, 1357, 103}, {150876, 1264, 119}};
    int good = 0;
    for (const Row& r : rows) {
        // a chain of l nodes plus n - l loose inputs has exactly (n, l)
        DagBuilder b;
        NodeId v = b.add_input();
        for (std::size_t i = 1; i < r.l; ++i) v = b.add_op(Op::Max, {v, v});
        for (std::size_t i = r.l; i < r.n; ++i) b.add_input();
        const DagMetrics m = metrics(b.build());
        good += m.node_count == r.n && m.critical_path_len == r.l && m.parallelism == r.par &&
                parallelism_of(r.n, r.l) == r.par;
    }
    verdict(4, good == 20, "parallelism metric", std::to_string(good) + "/20 reference rows reproduced");
}

// ---------------------------------------------------------------------------

void gemv_utilization() {
    const auto t0 = Clock::now();
    const auto g = gemv_dag(64);
    const auto prog = compile(g.dag, superlayer_partition(g.dag, 64), machine(64));
    const auto r = run(prog, g.dag, random_lane_inputs(g.dag, PrecisionMode::P32, 5)).sim.report;
    const double secs = seconds_since(t0);
    verdict(5, r.utilization >= 0.90 && secs < 60, "GEMV regularity",
            fmt("utilization %.3f", r.utilization) + " over " + std::to_string(r.total_cycles) + " cycles, " +
                std::to_string(r.global_barriers) + " barriers, " + fmt("%.1f s", secs));
}

// ---------------------------------------------------------------------------

void decoupling(const std::vector<Workload>& suite) {
    double log_sum = 0;
    std::string parts;
    for (const auto& w : suite) {
        const auto prog = compile(w.dag, superlayer_partition(w.dag, 64), machine(64));
        const auto in = random_lane_inputs(w.dag, PrecisionMode::P32, 6);
        const auto dec = run(prog, w.dag, in).sim.report.total_cycles;
        const auto cpl = run_coupled(prog, w.dag, in).sim.report.total_cycles;
        const double s = static_cast<double>(cpl) / static_cast<double>(dec);
        log_sum += std::log(s);
        parts += (parts.empty() ? "" : " ") + w.name + fmt("=%.2f", s);
    }
    const double geo = std::exp(log_sum / static_cast<double>(suite.size()));
    verdict(6, geo >= 1.3, "decoupled streams", fmt("geomean speedup %.3fx over coupled", geo));
    info(parts);
}

// ---------------------------------------------------------------------------

void superlayer_economy(const std::vector<Workload>& suite) {
    bool ok = true;
    double log_sum = 0;
    int count = 0;
    for (const auto& w : suite) {
        if (!w.irregular) continue;
        const auto sl = partition_stats(w.dag, superlayer_partition(w.dag, 64));
        const auto lw = partition_stats(w.dag, layerwise_partition(w.dag, 64));
        ok &= sl.barrier_count <= lw.barrier_count && sl.ops_per_barrier >= lw.ops_per_barrier;
        const double ratio = sl.ops_per_barrier / lw.ops_per_barrier;
        log_sum += std::log(ratio);
        ++count;
        info(w.name + ": barriers " + std::to_string(lw.barrier_count) + " -> " + std::to_string(sl.barrier_count) +
             fmt(", ops/barrier %.0f", lw.ops_per_barrier) + fmt(" -> %.0f", sl.ops_per_barrier) +
             fmt(" (%.2fx)", ratio));
    }
    verdict(7, ok, "superlayer economy",
            std::to_string(count) + fmt(" irregular workloads, geomean ops/barrier gain %.2fx", std::exp(log_sum / count)));
}

// ---------------------------------------------------------------------------

Instruction with_flow(Instruction in, int pops, bool push = false) {
    in.pop0 = pops > 0;
    in.pop1 = pops > 1;
    in.push = push;
    return in;
}

void barrier_semantics(const std::vector<Workload>& suite) {
    CuProgram early, late;
    early.processing = {Instruction::barrier(false), Instruction::nop()};
    for (int i = 0; i < 7; ++i) late.processing.push_back(Instruction::nop());
    late.processing.push_back(Instruction::barrier(false));
    late.processing.push_back(Instruction::nop());
    for (auto* p : {&early, &late})
        for (std::uint32_t i = 0; i < p->processing.size(); ++i)
            if (p->processing[i].op == Opcode::Barrier) p->markers.push_back({i, 0, 0});
    SimOptions opt;
    opt.trace = true;
    const auto cfg = machine(2);
    const auto r = simulate({early, late}, MemoryImage::zeros(cfg), cfg, opt);
    std::uint64_t last_arrival = 0, release = 0;
    for (const auto& e : r.events) {
        if (e.kind == EventKind::BarrierArrive) last_arrival = std::max(last_arrival, e.cycle);
        if (e.kind == EventKind::BarrierRelease) release = e.cycle;
    }
    bool ok = release == last_arrival + 1;
    std::string detail = "skewed pair arrives " + std::to_string(last_arrival) + ", releases " + std::to_string(release);

    // no instruction of epoch k+1 may execute before the last arrival at barrier k
    std::size_t violations = 0, barriers = 0;
    for (const auto& w : suite) {
        const auto prog = compile(w.dag, superlayer_partition(w.dag, 64), machine(64));
        const auto sim = run(prog, w.dag, random_lane_inputs(w.dag, PrecisionMode::P32, 8), opt).sim;
        std::map<std::uint32_t, std::uint64_t> arrival, first_exec;
        for (const auto& e : sim.events) {
            if (e.kind == EventKind::BarrierArrive) arrival[e.detail[0]] = std::max(arrival[e.detail[0]], e.cycle);
            if (e.kind == EventKind::Exec && e.detail[1] > 0) {
                auto [it, fresh] = first_exec.try_emplace(e.detail[1], e.cycle);
                if (!fresh) it->second = std::min(it->second, e.cycle);
            }
        }
        barriers += arrival.size();
        for (const auto& [epoch, cycle] : first_exec) violations += cycle <= arrival.at(epoch - 1);
    }
    ok &= violations == 0;
    verdict(8, ok, "barrier semantics",
            detail + "; audit of " + std::to_string(barriers) + " barriers, " + std::to_string(violations) +
                " early instructions");
}

// ---------------------------------------------------------------------------

void crossbar(const std::vector<Workload>& suite) {
    std::size_t stores = 0, foreign = 0;
    SimOptions opt;
    opt.trace = true;
    for (const auto& w : suite) {
        const auto prog = compile(w.dag, superlayer_partition(w.dag, 64), machine(64));
        const auto sim = run(prog, w.dag, random_lane_inputs(w.dag, PrecisionMode::P32, 9), opt).sim;
        for (const auto& e : sim.events) {
            if (e.kind != EventKind::Store || e.detail[0] != static_cast<std::uint32_t>(Scope::Global)) continue;
            ++stores;
            foreign += e.detail[1] != e.cu;
        }
    }

    std::string fair;
    bool fair_ok = true;
    for (std::size_t k : {2u, 4u, 8u, 64u}) {
        const std::uint32_t n = 100;
        std::vector<CuProgram> progs(k);
        for (std::size_t c = 0; c < k; ++c) {
            progs[c].processing.push_back(Instruction::set_stream_len(n));
            for (std::uint32_t i = 0; i < n; ++i) {
                progs[c].processing.push_back(with_flow(Instruction::nop(), 1));
                // every CU hammers bank 0
                progs[c].loads.push_back({Scope::Global, 0, static_cast<std::uint16_t>(c), 0});
            }
        }
        const auto cfg = machine(k);
        const auto sim = simulate(progs, MemoryImage::zeros(cfg), cfg, opt);
        std::vector<std::pair<std::uint64_t, std::uint32_t>> grants;
        for (const auto& e : sim.events)
            if (e.kind == EventKind::LoadGrant) grants.push_back({e.cycle, e.cu});
        bool ok = grants.size() == k * n;
        // steady state: one grant per cycle, every window of k grants covers all CUs
        for (std::size_t i = k; ok && i + 2 * k <= grants.size(); ++i) {
            ok &= grants[i].first + 1 == grants[i + 1].first;
            std::set<std::uint32_t> window;
            for (std::size_t j = i; j < i + k; ++j) window.insert(grants[j].second);
            ok &= window.size() == k;
        }
        fair_ok &= ok;
        fair += (fair.empty() ? "" : " ") + std::string("k=") + std::to_string(k) + (ok ? ":ok" : ":unfair");
    }
    verdict(9, foreign == 0 && stores > 0 && fair_ok, "crossbar",
            std::to_string(stores) + " global stores, " + std::to_string(foreign) + " foreign; round robin " + fair);
}

// ---------------------------------------------------------------------------

void accuracy() {
    const auto grid = log_uniform_grid(-40, 40, 16001);
    bool ok = true;
    std::string detail;
    for (int bits : {8, 16}) {
        const double c = mean_log10_error(relative_error_profile(ArithModel::posit(custom_posit(bits)), grid));
        const double s = mean_log10_error(relative_error_profile(ArithModel::posit(standard_posit(bits)), grid));
        ok &= c <= s;
        detail += "L=" + std::to_string(bits) + fmt(" custom %.3f", c) + fmt(" vs standard %.3f; ", s);

        // binades whose worst-case error is minimal must sit symmetric about 2^0
        const auto model = ArithModel::posit(standard_posit(bits));
        std::vector<double> worst;
        for (int b = -40; b < 40; ++b) {
            double w = 0;
            for (const auto& e : relative_error_profile(model, log_uniform_grid(b, b + 1 - 1e-9, 257)))
                w = std::max(w, e.rel_error);
            worst.push_back(w);
        }
        const double best = *std::min_element(worst.begin(), worst.end());
        double lo = 1e9, hi = -1e9;
        for (int i = 0; i < static_cast<int>(worst.size()); ++i)
            if (worst[i] <= best * (1 + 1e-12)) {
                lo = std::min(lo, i - 40.0);
                hi = std::max(hi, i - 40.0 + 1);
            }
        const double center = (lo + hi) / 2;
        ok &= center == 0.0;
        detail += fmt("min-error band [2^%.0f, ", lo) + fmt("2^%.0f); ", hi);
    }
    detail.resize(detail.size() - 2);
    verdict(10, ok, "accuracy curves", detail);
}

// ---------------------------------------------------------------------------

void cu_scaling() {
    const std::vector<std::size_t> counts = {1, 2, 4, 8, 16, 32, 64};
    const Dag pc = pc_random(4000, 6, {}, 1);
    const auto m = metrics(pc);
    const auto pts = sweep_active_cus(pc, machine(64), counts);
    bool monotone = m.parallelism >= 500;
    std::string curve;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i > 0) monotone &= pts[i].ops_per_cycle >= pts[i - 1].ops_per_cycle;
        curve += (curve.empty() ? "" : " ") + fmt("%.2f", pts[i].ops_per_cycle);
    }

    DagBuilder b;
    NodeId v = b.add_input();
    for (int i = 0; i < 400; ++i) v = b.add_op(i % 2 ? Op::Add : Op::Mul, {v, b.add_input()});
    const auto chain = sweep_active_cus(b.build(), machine(64), counts);
    double lo = 1e300, hi = 0;
    for (const auto& p : chain) {
        lo = std::min(lo, p.ops_per_cycle);
        hi = std::max(hi, p.ops_per_cycle);
    }
    const bool flat = hi <= lo * 1.05;
    verdict(11, monotone && flat, "CU scaling",
            "pc n=" + std::to_string(m.node_count) + " parallelism " + std::to_string(m.parallelism) +
                " ops/cycle [" + curve + "]" + (monotone ? "" : " not monotone") + fmt("; chain spread %.2f%%", 100 * (hi / lo - 1)));
}

// Not a criterion: how cycle count reacts to the load FIFO depth.
void fifo_depth_sensitivity(const std::vector<Workload>& suite) {
    std::string line = "fifo depth sensitivity (" + suite[5].name + ", cycles):";
    for (std::size_t depth : {2u, 3u, 4u, 8u, 16u}) {
        MachineConfig cfg = machine(64);
        cfg.load_fifo_depth = depth;
        const auto& w = suite[5];
        const auto prog = compile(w.dag, superlayer_partition(w.dag, 64), cfg);
        const auto r = run(prog, w.dag, random_lane_inputs(w.dag, PrecisionMode::P32, 3)).sim.report;
        line += " d" + std::to_string(depth) + "=" + std::to_string(r.total_cycles);
    }
    info(line);
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    const auto suite = benchmark_suite();
    const std::vector<std::function<void()>> steps = {
        oracle_equivalence,
        posit_exhaustive,
        peak_gops,
        parallelism_rows,
        gemv_utilization,
        [&] { decoupling(suite); },
        [&] { superlayer_economy(suite); },
        [&] { barrier_semantics(suite); },
        [&] { crossbar(suite); },
        accuracy,
        cu_scaling,
        [&] { fifo_depth_sensitivity(suite); },
    };
    for (std::size_t i = 0; i < steps.size(); ++i) {
        try {
            steps[i]();
        } catch (const std::exception& e) {
            verdict(static_cast<int>(i + 1), false, "exception", e.what());
        }
    }
    std::printf("%d criteria failed, %.1f s total\n", failures, seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
