#include "dagpu/workloads.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dagpu/rng.hpp"

namespace dagpu {

namespace {

using WK = WorkloadError::Kind;

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

template <typename T>
bool parse_num(std::string_view s, T& out) {
    if (s.empty()) return false;
    if constexpr (std::is_floating_point_v<T>) {
        // from_chars rejects a leading '+'
        if (s.front() == '+') s.remove_prefix(1);
    }
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

class LineReader {
public:
    explicit LineReader(std::string_view text) : text_(text) {}
    bool next(std::string_view& line) {
        if (pos_ >= text_.size()) return false;
        const std::size_t end = text_.find('\n', pos_);
        line = text_.substr(pos_, end == std::string_view::npos ? std::string_view::npos : end - pos_);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos_ = end == std::string_view::npos ? text_.size() : end + 1;
        ++number_;
        return true;
    }
    std::size_t number() const { return number_; }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t number_ = 0;
};

[[noreturn]] void parse_error(std::size_t line, const std::string& msg) {
    throw WorkloadError(WK::ParseError, line, "line " + std::to_string(line) + ": " + msg);
}

}  // namespace

void SparseLowerTriangular::check() const {
    std::vector<bool> diag(n, false);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (e.row >= n || e.col > e.row) throw WorkloadError(WK::ParseError, 0, "entry outside lower triangle");
        if (i > 0) {
            const auto& p = entries[i - 1];
            if (std::tie(p.row, p.col) >= std::tie(e.row, e.col))
                throw WorkloadError(WK::ParseError, 0, "entries not sorted or duplicated");
        }
        if (e.row == e.col && e.value != 0.0) diag[e.row] = true;
    }
    for (std::size_t r = 0; r < n; ++r)
        if (!diag[r]) throw WorkloadError(WK::ZeroDiagonal, r, "row " + std::to_string(r + 1) + ": missing or zero diagonal");
}

SparseLowerTriangular load_matrix_market(std::string_view text) {
    LineReader reader(text);
    std::string_view line;
    if (!reader.next(line)) parse_error(1, "empty file");
    const auto header = split_ws(line);
    if (header.size() < 5 || lower(header[0]) != "%%matrixmarket" || lower(header[1]) != "matrix")
        parse_error(reader.number(), "missing %%MatrixMarket matrix header");
    if (lower(header[2]) != "coordinate") parse_error(reader.number(), "only coordinate format is supported");
    const std::string field = lower(header[3]);
    if (field != "real" && field != "integer") parse_error(reader.number(), "unsupported field '" + field + "'");
    const std::string symmetry = lower(header[4]);
    if (symmetry != "general" && symmetry != "symmetric")
        parse_error(reader.number(), "unsupported symmetry '" + symmetry + "'");
    const bool symmetric = symmetry == "symmetric";

    std::size_t rows = 0, cols = 0, nnz = 0;
    bool have_size = false;
    std::unordered_map<std::uint64_t, std::size_t> seen;  // (row, col) -> line
    SparseLowerTriangular m;
    std::size_t read = 0;
    while (reader.next(line)) {
        const auto tok = split_ws(line);
        if (tok.empty() || tok[0].front() == '%') continue;
        if (!have_size) {
            if (tok.size() != 3 || !parse_num(tok[0], rows) || !parse_num(tok[1], cols) || !parse_num(tok[2], nnz))
                parse_error(reader.number(), "expected 'rows cols nnz'");
            if (rows != cols) parse_error(reader.number(), "matrix must be square");
            m.n = rows;
            have_size = true;
            continue;
        }
        std::size_t r = 0, c = 0;
        double v = 0;
        if (tok.size() != 3 || !parse_num(tok[0], r) || !parse_num(tok[1], c) || !parse_num(tok[2], v))
            parse_error(reader.number(), "expected 'row col value'");
        if (r < 1 || c < 1 || r > rows || c > cols) parse_error(reader.number(), "index out of range");
        if (++read > nnz) parse_error(reader.number(), "more entries than declared");
        --r;
        --c;
        if (symmetric && c > r) std::swap(r, c);
        if (c > r) continue;
        const std::uint64_t key = (static_cast<std::uint64_t>(r) << 32) | c;
        if (!seen.emplace(key, reader.number()).second) parse_error(reader.number(), "duplicate entry");
        m.entries.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c), v});
    }
    if (!have_size) parse_error(reader.number(), "missing size line");
    if (read != nnz) parse_error(reader.number(), "fewer entries than declared");
    std::sort(m.entries.begin(), m.entries.end(),
              [](const MatrixEntry& a, const MatrixEntry& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });
    m.check();
    return m;
}

SparseLowerTriangular random_lower_triangular(std::size_t n, double avg_offdiag, std::size_t band, std::uint64_t seed) {
    Rng rng(seed);
    SparseLowerTriangular m;
    m.n = n;
    band = std::max<std::size_t>(band, 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::uint32_t> cols;
        if (i > 0) {
            const auto hi = static_cast<std::int64_t>(std::llround(2 * avg_offdiag));
            const auto k = static_cast<std::size_t>(std::min<std::int64_t>(rng.range(0, hi), static_cast<std::int64_t>(i)));
            std::unordered_set<std::uint32_t> pick;
            while (pick.size() < k) {
                std::size_t j;
                if (rng.chance(0.8)) {
                    const std::size_t w = std::min(band, i);
                    j = i - 1 - rng.index(w);
                } else {
                    j = rng.index(i);
                }
                pick.insert(static_cast<std::uint32_t>(j));
            }
            cols.assign(pick.begin(), pick.end());
            std::sort(cols.begin(), cols.end());
        }
        const double scale = 0.5 / static_cast<double>(std::max<std::size_t>(cols.size(), 1));
        for (std::uint32_t j : cols)
            m.entries.push_back({static_cast<std::uint32_t>(i), j, -scale * rng.uniform(0.05, 1.0)});
        m.entries.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i), rng.uniform(0.5, 2.0)});
    }
    return m;
}

SptrsvDag sptrsv_dag(const SparseLowerTriangular& m) {
    m.check();
    DagBuilder b;
    SptrsvDag out;
    out.x.resize(m.n);
    out.b.resize(m.n);
    std::size_t e = 0;
    for (std::size_t i = 0; i < m.n; ++i) {
        out.b[i] = b.add_input();
        std::vector<NodeId> terms{out.b[i]};
        double diag = 0;
        for (; e < m.entries.size() && m.entries[e].row == i; ++e) {
            const auto& ent = m.entries[e];
            if (ent.col == i) {
                diag = ent.value;
                continue;
            }
            const NodeId coef = b.add_const(-ent.value);
            terms.push_back(b.add_op(Op::Mul, {coef, out.x[ent.col]}));
        }
        const NodeId sum = terms.size() == 1 ? terms[0] : b.add_op(Op::Add, terms);
        const NodeId inv = b.add_const(1.0 / diag);
        out.x[i] = b.add_op(Op::Mul, {sum, inv});
    }
    // Interior tree nodes are appended, so x and b ids survive normalization.
    out.dag = normalize_arity(b.build());
    return out;
}

Dag pc_random(std::size_t num_inputs, std::size_t depth, FaninDistribution fanin, std::uint64_t seed) {
    if (depth < 1) throw std::invalid_argument("pc_random: depth must be >= 1");
    if (num_inputs < 2) throw std::invalid_argument("pc_random: need at least 2 inputs");
    if (fanin.min < 1 || fanin.max < fanin.min) throw std::invalid_argument("pc_random: bad fan-in range");
    Rng rng(seed);
    DagBuilder b;
    std::vector<std::vector<NodeId>> layers(1);
    for (std::size_t i = 0; i < num_inputs; ++i) layers[0].push_back(b.add_input());

    for (std::size_t l = 1; l <= depth; ++l) {
        const double frac = 1.0 - static_cast<double>(l) / static_cast<double>(depth);
        const auto width = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(num_inputs), frac))));
        const Op op = (depth - l) % 2 == 0 ? Op::Add : Op::Mul;
        const auto& below = layers[l - 1];

        std::vector<std::vector<NodeId>> children(width);
        // Cover the layer below so the circuit has a single root.
        std::vector<std::size_t> perm(below.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
        for (std::size_t i = 0; i < perm.size(); ++i) children[i % width].push_back(below[perm[i]]);

        for (auto& ch : children) {
            const auto want = static_cast<std::size_t>(rng.range(fanin.min, fanin.max));
            std::size_t attempts = 0;
            while (ch.size() < want && attempts++ < 8 * want) {
                NodeId c;
                if (l >= 2 && rng.chance(fanin.skip_probability)) {
                    const auto& src = layers[rng.index(l - 1)];
                    c = src[rng.index(src.size())];
                } else {
                    c = below[rng.index(below.size())];
                }
                if (std::find(ch.begin(), ch.end(), c) == ch.end()) ch.push_back(c);
            }
            std::sort(ch.begin(), ch.end());
        }
        std::vector<NodeId> layer;
        for (auto& ch : children) layer.push_back(b.add_op(op, ch));
        layers.push_back(std::move(layer));
    }
    return normalize_arity(b.build());
}

GemvDag gemv_dag(std::size_t n, const std::vector<double>& a) {
    if (n < 1) throw std::invalid_argument("gemv_dag: n must be >= 1");
    if (!a.empty() && a.size() != n * n) throw std::invalid_argument("gemv_dag: matrix must be n*n");
    DagBuilder b;
    GemvDag out;
    for (std::size_t j = 0; j < n; ++j) out.x.push_back(b.add_input());
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<NodeId> level;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = a.empty() ? static_cast<double>(static_cast<long>((i + 2 * j) % 5) - 2) : a[i * n + j];
            const NodeId c = b.add_const(v);
            level.push_back(b.add_op(Op::Mul, {c, out.x[j]}));
        }
        while (level.size() > 1) {
            std::vector<NodeId> next;
            for (std::size_t k = 0; k + 1 < level.size(); k += 2) next.push_back(b.add_op(Op::Add, {level[k], level[k + 1]}));
            if (level.size() % 2) next.push_back(level.back());
            level = std::move(next);
        }
        out.y.push_back(level[0]);
    }
    out.dag = b.build();
    return out;
}

Dag load_edge_list(std::string_view text) {
    LineReader reader(text);
    std::string_view line;
    std::unordered_map<std::int64_t, NodeId> ids;
    DagBuilder b;
    while (reader.next(line)) {
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        const auto tok = split_ws(line);
        if (tok.empty()) continue;
        const std::size_t ln = reader.number();
        if (tok[0] != "node" || tok.size() < 3) parse_error(ln, "expected 'node <id> <op> ...'");
        std::int64_t id = 0;
        if (!parse_num(tok[1], id)) parse_error(ln, "bad node id '" + std::string(tok[1]) + "'");
        if (ids.count(id)) parse_error(ln, "node " + std::to_string(id) + " declared twice");
        const auto op = parse_op(tok[2]);
        if (!op) parse_error(ln, "unknown op '" + std::string(tok[2]) + "'");

        NodeId dense = 0;
        if (*op == Op::Input) {
            if (tok.size() != 3) parse_error(ln, "INPUT takes no arguments");
            dense = b.add_input();
        } else if (*op == Op::Const) {
            double v = 0;
            if (tok.size() != 4 || !parse_num(tok[3], v)) parse_error(ln, "CONST needs one decimal value");
            dense = b.add_const(v);
        } else {
            std::vector<NodeId> srcs;
            for (std::size_t i = 3; i < tok.size(); ++i) {
                std::int64_t s = 0;
                if (!parse_num(tok[i], s)) parse_error(ln, "bad operand '" + std::string(tok[i]) + "'");
                auto it = ids.find(s);
                if (it == ids.end()) parse_error(ln, "operand " + std::to_string(s) + " used before declaration");
                srcs.push_back(it->second);
            }
            dense = b.add_op(*op, srcs);
        }
        ids.emplace(id, dense);
    }
    if (b.size() == 0) throw WorkloadError(WK::EmptyGraph, 0, "edge list declares no nodes");
    return b.build();
}

std::string write_edge_list(const Dag& dag) {
    std::ostringstream out;
    out.precision(17);
    for (const Node& n : dag.nodes()) {
        out << "node " << n.id << ' ' << op_name(n.op);
        if (n.op == Op::Const) out << ' ' << n.const_value;
        for (NodeId s : dag.operands(n.id)) out << ' ' << s;
        out << '\n';
    }
    return out.str();
}

}  // namespace dagpu
