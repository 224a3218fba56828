#include "dagpu/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include "dagpu/partition.hpp"
#include "dagpu/simulator.hpp"
#include "dagpu/workloads.hpp"

namespace dagpu::cli {

namespace fs = std::filesystem;
using nlohmann::json;

MachineConfig RunSpec::machine() const {
    MachineConfig m;
    m.num_cus = cus;
    m.load_fifo_depth = fifo_depth;
    m.store_fifo_depth = fifo_depth;
    m.regfile_words = regfile;
    m.local_spad_words = local_words;
    m.global_bank_words = bank_words;
    m.global_load_latency = global_latency;
    return m;
}

PrecisionMode RunSpec::mode() const {
    const auto m = precision_from_bits(precision);
    if (!m) throw UsageError("precision must be 8, 16 or 32");
    return *m;
}

NumberFamily RunSpec::family() const {
    const auto f = parse_family(arith);
    if (!f) throw UsageError("unknown arithmetic '" + arith + "' (custom-posit, standard-posit, binary32)");
    return *f;
}

void RunSpec::check() const {
    mode();
    family();
    if (partitioner != "superlayer" && partitioner != "layerwise")
        throw UsageError("partitioner must be layerwise or superlayer");
    if (axis != "cus" && axis != "fifo_depth" && axis != "precision")
        throw UsageError("axis must be cus, fifo_depth or precision");
    if (!(tolerance >= 1.0)) throw UsageError("tolerance must be >= 1");
    if (!(freq_mhz > 0)) throw UsageError("freq-mhz must be positive");
    try {
        machine().check();
        Datapath{mode(), family()}.check();
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

json spec_to_json(const RunSpec& s) {
    return {{"workload", s.workload},
            {"cus", s.cus},
            {"fifo-depth", s.fifo_depth},
            {"regfile", s.regfile},
            {"local-words", s.local_words},
            {"bank-words", s.bank_words},
            {"global-latency", s.global_latency},
            {"partitioner", s.partitioner},
            {"tolerance", s.tolerance},
            {"precision", s.precision},
            {"arith", s.arith},
            {"freq-mhz", s.freq_mhz},
            {"seed", s.seed},
            {"coupled", s.coupled},
            {"axis", s.axis},
            {"values", s.values},
            {"lo-exp", s.lo_exp},
            {"hi-exp", s.hi_exp},
            {"points", s.points},
            {"models", s.models}};
}

RunSpec spec_from_json(const json& in, RunSpec s) {
    const json& j = in.contains("spec") ? in.at("spec") : in;
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "workload") s.workload = v.get<std::string>();
            else if (key == "cus") s.cus = v.get<std::size_t>();
            else if (key == "fifo-depth") s.fifo_depth = v.get<std::size_t>();
            else if (key == "regfile") s.regfile = v.get<std::size_t>();
            else if (key == "local-words") s.local_words = v.get<std::size_t>();
            else if (key == "bank-words") s.bank_words = v.get<std::size_t>();
            else if (key == "global-latency") s.global_latency = v.get<int>();
            else if (key == "partitioner") s.partitioner = v.get<std::string>();
            else if (key == "tolerance") s.tolerance = v.get<double>();
            else if (key == "precision") s.precision = v.get<int>();
            else if (key == "arith") s.arith = v.get<std::string>();
            else if (key == "freq-mhz") s.freq_mhz = v.get<double>();
            else if (key == "seed") s.seed = v.get<std::uint64_t>();
            else if (key == "coupled") s.coupled = v.get<bool>();
            else if (key == "axis") s.axis = v.get<std::string>();
            else if (key == "values") s.values = v.get<std::vector<double>>();
            else if (key == "lo-exp") s.lo_exp = v.get<double>();
            else if (key == "hi-exp") s.hi_exp = v.get<double>();
            else if (key == "points") s.points = v.get<int>();
            else if (key == "models") s.models = v.get<std::vector<std::string>>();
            else throw UsageError("unknown config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad config value: ") + e.what());
    }
    return s;
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct Params {
    std::string kind;
    std::string path;
    std::map<std::string, std::string> kv;

    double num(const std::string& key, double fallback) const {
        auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw UsageError("workload parameter " + key + "=" + it->second + " is not a number");
        }
    }
    std::size_t count(const std::string& key, std::size_t fallback) const {
        const double v = num(key, static_cast<double>(fallback));
        if (v < 0 || v != std::floor(v)) throw UsageError("workload parameter " + key + " must be a non-negative integer");
        return static_cast<std::size_t>(v);
    }
};

Params parse_workload(const std::string& w) {
    Params p;
    const auto colon = w.find(':');
    p.kind = w.substr(0, colon);
    const std::string rest = colon == std::string::npos ? "" : w.substr(colon + 1);
    if (p.kind == "mtx" || p.kind == "edges") {
        if (rest.empty()) throw UsageError(p.kind + " workload needs a path");
        p.path = rest;
        return p;
    }
    std::stringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw UsageError("workload parameter '" + item + "' is not key=value");
        p.kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return p;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

SuperlayerPlan make_plan(const Dag& dag, const RunSpec& s, std::size_t width) {
    return s.partitioner == "layerwise" ? layerwise_partition(dag, width)
                                        : superlayer_partition(dag, width, {s.tolerance, 16.0});
}

std::string csv_header_comment(const RunSpec& s) {
    json meta{{"tool", "dagpu"}, {"version", kVersion}, {"seed", s.seed}, {"spec", spec_to_json(s)}};
    return "# " + meta.dump() + "\n";
}

ArithModel model_by_name(const std::string& name) {
    if (name == "float64") return ArithModel::float64();
    if (name == "binary32") return ArithModel::binary32();
    if (name == "binary16") return ArithModel::binary16();
    if (name == "float8") return ArithModel::float8();
    for (const char* fam : {"custom-posit-", "standard-posit-"}) {
        const std::string prefix = fam;
        if (name.rfind(prefix, 0) == 0) {
            int bits = 0;
            try {
                bits = std::stoi(name.substr(prefix.size()));
            } catch (const std::exception&) {
                throw UsageError("bad model '" + name + "'");
            }
            if (bits != 8 && bits != 16 && bits != 32) throw UsageError("bad model '" + name + "'");
            return ArithModel::posit(prefix[0] == 'c' ? custom_posit(bits) : standard_posit(bits));
        }
    }
    if (name.rfind("posit-", 0) == 0) {
        // posit-L-es
        int bits = 0, es = 0;
        if (std::sscanf(name.c_str(), "posit-%d-%d", &bits, &es) != 2) throw UsageError("bad model '" + name + "'");
        try {
            return ArithModel::posit(posit::PositConfig::make(bits, es));
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    throw UsageError("unknown model '" + name + "'");
}

}  // namespace

Dag build_workload(const std::string& workload, std::uint64_t seed) {
    const Params p = parse_workload(workload);
    Dag d;
    if (p.kind == "gemv") {
        d = gemv_dag(p.count("n", 32)).dag;
    } else if (p.kind == "sptrsv") {
        d = sptrsv_dag(random_lower_triangular(p.count("n", 1000), p.num("avg", 4.0), p.count("band", 30), seed)).dag;
    } else if (p.kind == "mtx") {
        d = sptrsv_dag(load_matrix_market(read_file(p.path))).dag;
    } else if (p.kind == "pc") {
        FaninDistribution f;
        f.min = static_cast<int>(p.count("min", 2));
        f.max = static_cast<int>(p.count("max", 4));
        f.skip_probability = p.num("skip", 0.2);
        d = pc_random(p.count("inputs", 1000), p.count("depth", 6), f, seed);
    } else if (p.kind == "chains") {
        const std::size_t count = p.count("count", 16), len = p.count("len", 20);
        DagBuilder b;
        for (std::size_t k = 0; k < count; ++k) {
            NodeId v = b.add_input();
            for (std::size_t i = 0; i < len; ++i) v = b.add_op(Op::Add, {v, v});
        }
        d = b.build();
    } else if (p.kind == "edges") {
        d = load_edge_list(read_file(p.path));
    } else {
        throw UsageError("unknown workload kind '" + p.kind + "' (gemv, sptrsv, mtx, pc, chains, edges)");
    }
    return normalize_arity(d);
}

void write_atomic(const std::string& path, const std::string& contents) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

json cmd_compile(const RunSpec& s, const std::string& out_dir) {
    s.check();
    const Dag dag = build_workload(s.workload, s.seed);
    const auto plan = make_plan(dag, s, s.cus);
    const auto prog = compile(dag, plan, s.machine(), {s.mode(), {}});
    const auto m = metrics(dag);

    json summary{{"tool", "dagpu"},
                 {"version", kVersion},
                 {"seed", s.seed},
                 {"spec", spec_to_json(s)},
                 {"workload", {{"nodes", m.node_count}, {"compute_nodes", dag.compute_count()},
                               {"critical_path", m.critical_path_len}, {"parallelism", m.parallelism}}},
                 {"partition", stats_to_json(partition_stats(dag, plan))},
                 {"compile", {{"spills", prog.alloc.spills}, {"loads", prog.alloc.loads}, {"stores", prog.alloc.stores},
                              {"deferred_pops", prog.alloc.deferred_pops}, {"local_barriers", prog.local_barriers}}}};
    if (out_dir.empty()) return summary;

    json manifest = summary;
    manifest["outputs"] = json::array();
    for (NodeId v : prog.outputs) {
        const Placement& h = *prog.memory.home[v];
        manifest["outputs"].push_back({{"node", v},
                                       {"scope", h.scope == Scope::Global ? "global" : "local"},
                                       {"unit", h.unit},
                                       {"offset", h.offset}});
    }
    manifest["preloads"] = json::array();
    for (const auto& p : prog.memory.preloads)
        manifest["preloads"].push_back({{"node", p.node}, {"bank", p.where.unit}, {"offset", p.where.offset}});
    manifest["images"] = json::array();
    json disasm = json::array();
    for (std::size_t c = 0; c < prog.cus.size(); ++c) {
        char name[32];
        std::snprintf(name, sizeof name, "cu%02zu.bin", c);
        const auto bytes = encode_binary(prog.cus[c]);
        write_atomic((fs::path(out_dir) / name).string(), std::string(bytes.begin(), bytes.end()));
        manifest["images"].push_back(name);
        json d = disassemble(prog.cus[c]);
        d["cu"] = c;
        disasm.push_back(d);
    }
    write_atomic((fs::path(out_dir) / "program.json").string(), disasm.dump(1) + "\n");
    write_atomic((fs::path(out_dir) / "plan.json").string(), plan_to_json(plan).dump() + "\n");
    write_atomic((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
    return summary;
}

json cmd_run(const RunSpec& s, const std::string& trace_path) {
    s.check();
    const Dag dag = build_workload(s.workload, s.seed);
    const auto plan = make_plan(dag, s, s.cus);
    const auto prog = compile(dag, plan, s.machine(), {s.mode(), {}});
    const auto inputs = random_lane_inputs(dag, s.mode(), s.seed);
    SimOptions opt;
    opt.family = s.family();
    opt.frequency_hz = s.freq_mhz * 1e6;
    opt.trace = !trace_path.empty();
    const BatchRun r = s.coupled ? run_coupled(prog, dag, inputs, opt) : run(prog, dag, inputs, opt);
    const bool match = r.outputs == reference_outputs(prog, dag, inputs, opt.family);
    if (opt.trace) {
        std::string lines;
        for (const auto& e : r.sim.events) lines += event_to_json(e).dump() + "\n";
        write_atomic(trace_path, lines);
    }
    const auto m = metrics(dag);
    return {{"tool", "dagpu"},
            {"version", kVersion},
            {"seed", s.seed},
            {"spec", spec_to_json(s)},
            {"workload", {{"nodes", m.node_count}, {"compute_nodes", dag.compute_count()},
                          {"critical_path", m.critical_path_len}, {"parallelism", m.parallelism}}},
            {"partition", stats_to_json(partition_stats(dag, plan))},
            {"compile", {{"spills", prog.alloc.spills}, {"loads", prog.alloc.loads}, {"stores", prog.alloc.stores},
                         {"deferred_pops", prog.alloc.deferred_pops}, {"local_barriers", prog.local_barriers}}},
            {"peak_gops", peak_throughput(s.machine(), opt.frequency_hz, s.mode())},
            {"oracle_match", match},
            {"report", report_to_json(r.sim.report)}};
}

std::string cmd_sweep(const RunSpec& s, unsigned jobs) {
    s.check();
    const Dag dag = build_workload(s.workload, s.seed);
    std::vector<double> values = s.values;
    if (values.empty()) {
        if (s.axis == "cus")
            for (std::size_t k = 1; k <= s.cus; k *= 2) values.push_back(static_cast<double>(k));
        else if (s.axis == "fifo_depth")
            values = {2, 4, 8, 16};
        else
            values = {32, 16, 8};
    }
    SimOptions opt;
    opt.family = s.family();
    opt.frequency_hz = s.freq_mhz * 1e6;

    struct Row {
        std::size_t active = 0;
        std::uint64_t cycles = 0, ops = 0;
        double util = 0;
        std::size_t barriers = 0;
    };
    auto point = [&](double v) {
        RunSpec p = s;
        std::size_t active = s.cus;
        if (s.axis == "cus") {
            if (v < 1 || v > static_cast<double>(s.cus) || v != std::floor(v))
                throw UsageError("cus value " + fmt(v) + " outside [1, " + std::to_string(s.cus) + "]");
            active = static_cast<std::size_t>(v);
        } else if (s.axis == "fifo_depth") {
            p.fifo_depth = static_cast<std::size_t>(v);
        } else {
            p.precision = static_cast<int>(v);
        }
        p.check();
        SuperlayerPlan plan = make_plan(dag, p, active);
        plan.num_cus = p.cus;
        for (auto& sl : plan.superlayers) sl.resize(p.cus);
        const auto prog = compile(dag, plan, p.machine(), {p.mode(), {}});
        const auto r = run(prog, dag, random_lane_inputs(dag, p.mode(), s.seed), opt).sim.report;
        return Row{active, r.total_cycles, r.compute_ops,
                   r.total_cycles ? static_cast<double>(r.alu_instructions) / (static_cast<double>(r.total_cycles) * active) : 0,
                   plan.barrier_count()};
    };

    std::vector<Row> rows(values.size());
    std::size_t next = 0;
    while (next < values.size()) {
        std::vector<std::future<Row>> batch;
        for (unsigned j = 0; j < std::max(1u, jobs) && next < values.size(); ++j, ++next)
            batch.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, point, values[next]));
        for (std::size_t k = 0; k < batch.size(); ++k) rows[next - batch.size() + k] = batch[k].get();
    }

    std::string csv = csv_header_comment(s);
    csv += "axis,value,active_cus,cycles,compute_ops,ops_per_cycle,utilization,gops,barriers\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Row& r = rows[i];
        const double opc = r.cycles ? static_cast<double>(r.ops) / static_cast<double>(r.cycles) : 0;
        csv += s.axis + "," + fmt(values[i]) + "," + std::to_string(r.active) + "," + std::to_string(r.cycles) + "," +
               std::to_string(r.ops) + "," + fmt(opc) + "," + fmt(r.util) + "," + fmt(opc * s.freq_mhz / 1e3) + "," +
               std::to_string(r.barriers) + "\n";
    }
    return csv;
}

std::string cmd_accuracy(const RunSpec& s) {
    std::vector<std::string> names = s.models;
    if (names.empty())
        names = {"custom-posit-8", "standard-posit-8", "custom-posit-16", "standard-posit-16",
                 "custom-posit-32", "standard-posit-32", "binary32", "binary16", "float8"};
    std::vector<ArithModel> models;
    for (const auto& n : names) models.push_back(model_by_name(n));
    if (s.points < 2 || !(s.hi_exp > s.lo_exp)) throw UsageError("accuracy grid needs points >= 2 and hi-exp > lo-exp");
    const auto grid = log_uniform_grid(s.lo_exp, s.hi_exp, s.points);
    std::vector<std::vector<ErrorSample>> prof;
    for (const auto& m : models) prof.push_back(relative_error_profile(m, grid));

    std::string csv = csv_header_comment(s);
    csv += "x";
    for (const auto& n : names) csv += "," + n;
    csv += "\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        csv += fmt(grid[i]);
        for (const auto& p : prof) csv += "," + fmt(p[i].rel_error);
        csv += "\n";
    }
    csv += "mean_log10";
    for (const auto& p : prof) csv += "," + fmt(mean_log10_error(p));
    csv += "\n";
    return csv;
}

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    RunSpec spec;
    std::string config, out_path, trace_path;
    unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
    bool trace = false;

    CLI::App app{"DAG processor toolchain: compile, simulate, sweep and accuracy curves", "dagpu"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "JSON file with any of the flags below (flags win)");
        sub->add_option("--workload", spec.workload, "gemv:n=N | sptrsv:n=N,avg=A,band=B | mtx:PATH | pc:inputs=N,depth=D | chains:count=C,len=L | edges:PATH");
        sub->add_option("--cus", spec.cus, "machine width");
        sub->add_option("--fifo-depth", spec.fifo_depth, "load and store FIFO depth");
        sub->add_option("--regfile", spec.regfile, "registers per CU");
        sub->add_option("--local-words", spec.local_words, "local scratchpad words per CU");
        sub->add_option("--bank-words", spec.bank_words, "words per global bank");
        sub->add_option("--global-latency", spec.global_latency, "global load latency in cycles");
        sub->add_option("--partitioner", spec.partitioner, "layerwise | superlayer");
        sub->add_option("--tolerance", spec.tolerance, "superlayer balance tolerance");
        sub->add_option("--precision", spec.precision, "lane width: 8 | 16 | 32");
        sub->add_option("--arith", spec.arith, "custom-posit | standard-posit | binary32");
        sub->add_option("--freq-mhz", spec.freq_mhz, "clock for GOPS figures");
        sub->add_option("--seed", spec.seed, "seed for generators and inputs");
        sub->add_option("--out", out_path, "output path (stdout when omitted; a directory for compile)");
    };

    auto* c_compile = app.add_subcommand("compile", "partition and compile; writes binary images and a manifest");
    common(c_compile);
    auto* c_run = app.add_subcommand("run", "compile and simulate; prints a JSON report");
    common(c_run);
    c_run->add_flag("--coupled", spec.coupled, "in-order coupled execution");
    c_run->add_flag("--trace", trace, "write an event trace (OUT.trace.jsonl or dagpu.trace.jsonl)");
    c_run->add_option("--trace-out", trace_path, "event trace path");
    auto* c_sweep = app.add_subcommand("sweep", "simulate along one axis; prints CSV");
    common(c_sweep);
    c_sweep->add_option("--axis", spec.axis, "cus | fifo_depth | precision");
    c_sweep->add_option("--values", spec.values, "axis values (defaults per axis)")->delimiter(',');
    c_sweep->add_option("--jobs", jobs, "parallel simulations");
    auto* c_acc = app.add_subcommand("accuracy", "relative error of number formats on a log grid; prints CSV");
    common(c_acc);
    c_acc->add_option("--lo-exp", spec.lo_exp, "grid start, log2");
    c_acc->add_option("--hi-exp", spec.hi_exp, "grid end, log2");
    c_acc->add_option("--points", spec.points, "grid points");
    c_acc->add_option("--models", spec.models, "model names, e.g. custom-posit-16,binary16,posit-16-2")->delimiter(',');

    // The config file sets defaults; explicit flags parsed afterwards override it.
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") config = argv[i + 1];
    for (int i = 1; i < argc; ++i)
        if (std::string a = argv[i]; a.rfind("--config=", 0) == 0) config = a.substr(9);
    try {
        if (!config.empty()) spec = spec_from_json(json::parse(read_file(config)), spec);
    } catch (const json::parse_error& e) {
        err << "error: config '" << config << "' is not valid JSON: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << "run 'dagpu --help' for usage\n";
        return 2;
    }

    auto emit = [&](const std::string& text) {
        if (out_path.empty())
            out << text;
        else
            write_atomic(out_path, text);
    };

    try {
        if (c_compile->parsed()) {
            const auto summary = cmd_compile(spec, out_path.empty() ? "dagpu_bundle" : out_path);
            out << summary.dump(2) << "\n";
        } else if (c_run->parsed()) {
            if (trace && trace_path.empty()) trace_path = out_path.empty() ? "dagpu.trace.jsonl" : out_path + ".trace.jsonl";
            emit(cmd_run(spec, trace_path).dump(2) + "\n");
        } else if (c_sweep->parsed()) {
            emit(cmd_sweep(spec, jobs));
        } else {
            emit(cmd_accuracy(spec));
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace dagpu::cli
