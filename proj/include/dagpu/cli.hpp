#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dagpu/codegen.hpp"
#include "dagpu/dag.hpp"

namespace dagpu::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Bad flags, bad config file contents or bad workload strings; exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything a command needs to reproduce its output.  Keys of the JSON form
/// match the long flag names.
struct RunSpec {
    std::string workload = "gemv:n=32";
    std::size_t cus = 64;
    std::size_t fifo_depth = 8;
    std::size_t regfile = 32;
    std::size_t local_words = 512;
    std::size_t bank_words = 1024;
    int global_latency = 2;
    std::string partitioner = "superlayer";
    double tolerance = 2.0;
    int precision = 32;
    std::string arith = "custom-posit";
    double freq_mhz = 278.0;
    std::uint64_t seed = 1;
    bool coupled = false;
    // sweep
    std::string axis = "cus";
    std::vector<double> values;
    // accuracy
    double lo_exp = -40;
    double hi_exp = 40;
    int points = 161;
    std::vector<std::string> models;

    MachineConfig machine() const;
    PrecisionMode mode() const;
    NumberFamily family() const;
    /// Throws UsageError.
    void check() const;
};

nlohmann::json spec_to_json(const RunSpec& s);
/// Accepts a bare spec object or a report that embeds one under "spec".
RunSpec spec_from_json(const nlohmann::json& j, RunSpec base = {});

/// `kind:key=value,...` or `kind:path`.  Kinds: gemv(n), sptrsv(n, avg,
/// band), mtx(path), pc(inputs, depth, min, max, skip), chains(count, len),
/// edges(path).  Generators draw from `seed`.
Dag build_workload(const std::string& workload, std::uint64_t seed);

nlohmann::json cmd_compile(const RunSpec& s, const std::string& out_dir);
nlohmann::json cmd_run(const RunSpec& s, const std::string& trace_path = "");
std::string cmd_sweep(const RunSpec& s, unsigned jobs = 1);
std::string cmd_accuracy(const RunSpec& s);

/// Writes via a temporary file in the same directory and renames.
void write_atomic(const std::string& path, const std::string& contents);

/// Entry point of the `dagpu` executable.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dagpu::cli
