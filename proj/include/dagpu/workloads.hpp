#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dagpu/dag.hpp"

namespace dagpu {

class WorkloadError : public std::runtime_error {
public:
    enum class Kind { ParseError, ZeroDiagonal, EmptyGraph };
    WorkloadError(Kind kind, std::size_t where, const std::string& what)
        : std::runtime_error(what), kind_(kind), where_(where) {}

    Kind kind() const { return kind_; }
    /// 1-based line for ParseError, 0-based row for ZeroDiagonal.
    std::size_t where() const { return where_; }

private:
    Kind kind_;
    std::size_t where_;
};

struct MatrixEntry {
    std::uint32_t row = 0;  // 0-based
    std::uint32_t col = 0;
    double value = 0.0;
};

/// Lower-triangular matrix with a complete nonzero diagonal; entries sorted
/// by (row, col) without duplicates.
struct SparseLowerTriangular {
    std::size_t n = 0;
    std::vector<MatrixEntry> entries;

    /// Throws WorkloadError(ZeroDiagonal) / (ParseError) on violations.
    void check() const;
};

/// Parses `%%MatrixMarket matrix coordinate real|integer general|symmetric`.
/// Upper-triangle entries are dropped; symmetric storage is mirrored first.
SparseLowerTriangular load_matrix_market(std::string_view text);

/// Random lower-triangular matrix: diagonal in [0.5, 2], about
/// `avg_offdiag` off-diagonals per row drawn from a band of width `band`
/// (with occasional long-range columns), each in [-0.5/k, 0).
SparseLowerTriangular random_lower_triangular(std::size_t n, double avg_offdiag, std::size_t band,
                                              std::uint64_t seed);

struct SptrsvDag {
    Dag dag;
    std::vector<NodeId> x;  // node computing x_i
    std::vector<NodeId> b;  // INPUT node for b_i
};

/// Forward substitution x_i = (b_i + sum_j (-L_ij) x_j) * (1 / L_ii) as a
/// binary DAG of ADD/MUL nodes with CONST coefficients.
SptrsvDag sptrsv_dag(const SparseLowerTriangular& m);

struct FaninDistribution {
    int min = 2;
    int max = 4;
    /// Probability that an extra operand is drawn from any earlier layer
    /// instead of the layer directly below.
    double skip_probability = 0.2;
};

/// Layered sum/product circuit: `num_inputs` leaves, `depth` alternating
/// MUL/ADD layers with geometrically shrinking widths and one ADD root.
/// Normalized to binary arity.
Dag pc_random(std::size_t num_inputs, std::size_t depth, FaninDistribution fanin, std::uint64_t seed);

struct GemvDag {
    Dag dag;
    std::vector<NodeId> x;  // INPUT x_j
    std::vector<NodeId> y;  // row results
};

/// y = A x with A_ij as CONST, one MUL per entry and a balanced ADD tree per
/// row.  `a` is row-major n*n; when empty, A_ij = ((i + 2j) mod 5) - 2.
GemvDag gemv_dag(std::size_t n, const std::vector<double>& a = {});

/// Line format: `node <id> INPUT` | `node <id> CONST <decimal>` |
/// `node <id> <ADD|MUL|MAX|MIN> <src0> <src1> ...`; `#` starts a comment.
/// Ids are arbitrary distinct integers, declared before use, renumbered
/// densely in declaration order.  Wide nodes are kept as-is.
Dag load_edge_list(std::string_view text);
std::string write_edge_list(const Dag& dag);

}  // namespace dagpu
