#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dagpu/cli.hpp"

using namespace dagpu;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "dagpu");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path golden(const std::string& name) { return fs::path(DAGPU_TEST_DIR) / "golden" / name; }

void expect_golden(const std::string& name, const std::string& actual) {
    if (std::getenv("DAGPU_UPDATE_GOLDEN")) {
        std::ofstream(golden(name), std::ios::binary) << actual;
        return;
    }
    ASSERT_TRUE(fs::exists(golden(name))) << name;
    EXPECT_EQ(actual, slurp(golden(name))) << name;
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "dagpu_cli_test";
    fs::create_directories(dir);
    return dir / name;
}

void expect_required(const json& schema, const json& doc, const std::string& where) {
    for (const auto& key : schema.value("required", json::array())) {
        ASSERT_TRUE(doc.contains(key.get<std::string>())) << where << " lacks " << key;
        if (schema.contains("properties") && schema["properties"].contains(key.get<std::string>())) {
            const json& sub = schema["properties"][key.get<std::string>()];
            const json& val = doc[key.get<std::string>()];
            if (val.is_object()) expect_required(sub, val, where + "." + key.get<std::string>());
            if (val.is_array() && sub.contains("items"))
                for (const auto& item : val) expect_required(sub["items"], item, where + "." + key.get<std::string>() + "[]");
        }
    }
}

}  // namespace

TEST(Cli, RunReportGolden) {
    const auto r = invoke({"run", "--workload", "gemv:n=8", "--cus", "4", "--precision", "16"});
    ASSERT_EQ(r.code, 0) << r.err;
    expect_golden("run_gemv8.json", r.out);
    const json j = json::parse(r.out);
    EXPECT_TRUE(j["oracle_match"].get<bool>());
    EXPECT_EQ(j["report"]["lanes"], 2);
    EXPECT_EQ(j["version"], cli::kVersion);
    expect_required(json::parse(slurp(fs::path(DAGPU_TEST_DIR) / ".." / "schemas" / "run_report.schema.json")), j,
                    "report");
}

TEST(Cli, SweepGolden) {
    const auto r = invoke({"sweep", "--workload", "chains:count=8,len=10", "--cus", "8", "--jobs", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    expect_golden("sweep_chains.csv", r.out);
    std::istringstream lines(r.out);
    std::string first, header;
    std::getline(lines, first);
    std::getline(lines, header);
    EXPECT_EQ(first.rfind("# {", 0), 0u);
    EXPECT_EQ(header, "axis,value,active_cus,cycles,compute_ops,ops_per_cycle,utilization,gops,barriers");
}

TEST(Cli, SweepParallelMatchesSerial) {
    const std::vector<std::string> base{"sweep", "--workload", "pc:inputs=300,depth=5", "--cus", "16"};
    auto a = base, b = base;
    a.insert(a.end(), {"--jobs", "1"});
    b.insert(b.end(), {"--jobs", "4"});
    EXPECT_EQ(invoke(a).out, invoke(b).out);
}

TEST(Cli, SweepOtherAxes) {
    const auto f = invoke({"sweep", "--workload", "gemv:n=8", "--cus", "4", "--axis", "fifo_depth", "--values", "2,8"});
    ASSERT_EQ(f.code, 0) << f.err;
    EXPECT_NE(f.out.find("fifo_depth,2,"), std::string::npos);
    const auto p = invoke({"sweep", "--workload", "gemv:n=8", "--cus", "4", "--axis", "precision"});
    ASSERT_EQ(p.code, 0) << p.err;
    EXPECT_NE(p.out.find("precision,8,"), std::string::npos);
}

TEST(Cli, AccuracyGolden) {
    const auto r = invoke({"accuracy", "--lo-exp", "-10.3", "--hi-exp", "9.7", "--points", "5", "--models",
                        "custom-posit-8,standard-posit-8,binary16,posit-16-2"});
    ASSERT_EQ(r.code, 0) << r.err;
    expect_golden("accuracy_small.csv", r.out);
}

TEST(Cli, CompileBundle) {
    const fs::path dir = scratch("bundle");
    fs::remove_all(dir);
    const auto r = invoke({"compile", "--workload", "sptrsv:n=40", "--cus", "3", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const json m = json::parse(slurp(dir / "manifest.json"));
    ASSERT_EQ(m["images"].size(), 3u);
    for (const auto& name : m["images"]) {
        const std::string bytes = slurp(dir / name.get<std::string>());
        const auto prog = decode_binary(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
        EXPECT_FALSE(prog.processing.empty());
    }
    for (const auto& e : fs::directory_iterator(dir)) EXPECT_NE(e.path().extension(), ".tmp");
    expect_required(json::parse(slurp(fs::path(DAGPU_TEST_DIR) / ".." / "schemas" / "compile_manifest.schema.json")),
                    m, "manifest");
}

TEST(Cli, ConfigFileWithFlagOverride) {
    const fs::path cfg = scratch("cfg.json");
    std::ofstream(cfg) << R"({"workload": "gemv:n=6", "cus": 2, "precision": 8, "seed": 5})";
    const auto r = invoke({"run", "--config", cfg.string(), "--cus", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    const json j = json::parse(r.out);
    EXPECT_EQ(j["spec"]["cus"], 3);
    EXPECT_EQ(j["spec"]["precision"], 8);
    EXPECT_EQ(j["seed"], 5);
}

TEST(Cli, ReportReproducesFromEmbeddedSpec) {
    const fs::path out = scratch("report.json");
    const auto a = invoke({"run", "--workload", "pc:inputs=200,depth=5", "--cus", "8", "--seed", "11", "--out", out.string()});
    ASSERT_EQ(a.code, 0) << a.err;
    const auto b = invoke({"run", "--config", out.string()});
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(b.out, slurp(out));
}

TEST(Cli, TraceFile) {
    const fs::path trace = scratch("t.jsonl");
    const auto r = invoke({"run", "--workload", "gemv:n=4", "--cus", "2", "--trace-out", trace.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream lines(slurp(trace));
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        const json e = json::parse(line);
        ASSERT_TRUE(e.contains("cycle") && e.contains("cu") && e.contains("event") && e.contains("detail"));
        ++n;
    }
    EXPECT_GT(n, 10u);
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(invoke({}).code, 2);
    EXPECT_EQ(invoke({"frobnicate"}).code, 2);
    EXPECT_EQ(invoke({"run", "--precision", "12"}).code, 2);
    EXPECT_EQ(invoke({"run", "--workload", "nope:n=3"}).code, 2);
    EXPECT_EQ(invoke({"run", "--cus", "many"}).code, 2);
    EXPECT_EQ(invoke({"run", "--config", "/nonexistent/cfg.json"}).code, 2);
    EXPECT_EQ(invoke({"run", "--workload", "mtx:/nonexistent.mtx"}).code, 2);
    const auto overflow = invoke({"run", "--workload", "sptrsv:n=100", "--bank-words", "8"});
    EXPECT_EQ(overflow.code, 1);
    EXPECT_NE(overflow.err.find("overflows"), std::string::npos);
    const fs::path bad = scratch("bad.mtx");
    std::ofstream(bad) << "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 x\n";
    EXPECT_EQ(invoke({"run", "--workload", "mtx:" + bad.string()}).code, 1);
    EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST(Cli, WorkloadStrings) {
    EXPECT_EQ(cli::build_workload("gemv:n=4", 1).compute_count(), 16u + 12u);
    EXPECT_EQ(cli::build_workload("chains:count=3,len=5", 1).compute_count(), 15u);
    EXPECT_THROW(cli::build_workload("gemv:n=abc", 1), cli::UsageError);
    EXPECT_THROW(cli::build_workload("gemv:n", 1), cli::UsageError);
    const auto a = cli::build_workload("pc:inputs=100,depth=4", 3), b = cli::build_workload("pc:inputs=100,depth=4", 3);
    EXPECT_EQ(a.size(), b.size());
}
