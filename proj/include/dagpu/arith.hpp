#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dagpu/posit.hpp"

namespace dagpu {

/// Node operations; the compute subset mirrors the PE arithmetic instructions.
enum class Op : std::uint8_t { Add, Mul, Max, Min, Input, Const };

constexpr bool is_compute(Op op) { return op == Op::Add || op == Op::Mul || op == Op::Max || op == Op::Min; }
std::string_view op_name(Op op);
std::optional<Op> parse_op(std::string_view text);

/// Scalar arithmetic model.  Values travel as opaque 64-bit words: posit and
/// binary32 words hold the raw pattern in the low bits, the other models hold
/// the bits of a double.
class ArithModel {
public:
    enum class Kind { Float64, Posit, Binary32, Binary16, Float8 };
    using Word = std::uint64_t;

    static ArithModel float64() { return ArithModel(Kind::Float64, {}); }
    static ArithModel posit(posit::PositConfig cfg) { return ArithModel(Kind::Posit, cfg); }
    static ArithModel binary32() { return ArithModel(Kind::Binary32, {}); }
    static ArithModel binary16() { return ArithModel(Kind::Binary16, {}); }
    /// 1 sign, 4 exponent (bias 7), 3 fraction bits; IEEE-style subnormals.
    static ArithModel float8() { return ArithModel(Kind::Float8, {}); }

    Kind kind() const { return kind_; }
    const posit::PositConfig& posit_config() const { return cfg_; }

    Word encode(double x) const;
    double to_double(Word w) const;
    Word apply(Op op, Word a, Word b) const;

    std::string name() const;
    /// Human-readable bit layout, emitted alongside accuracy reports.
    std::string layout() const;

private:
    ArithModel(Kind k, posit::PositConfig c) : kind_(k), cfg_(c) {}
    Kind kind_;
    posit::PositConfig cfg_;
};

/// Rounds to an IEEE-style binary format with the given field widths
/// (round-to-nearest-even, gradual underflow, saturation at the largest finite).
double round_to_minifloat(double x, int exp_bits, int frac_bits);

// ---------------------------------------------------------------------------
// Precision-scalable lanes

enum class PrecisionMode : std::uint8_t { P32 = 0, P16 = 1, P8 = 2 };

constexpr int lanes(PrecisionMode m) { return m == PrecisionMode::P32 ? 1 : m == PrecisionMode::P16 ? 2 : 4; }
constexpr int lane_bits(PrecisionMode m) { return 32 / lanes(m); }
std::optional<PrecisionMode> precision_from_bits(int bits);

enum class NumberFamily { CustomPosit, StandardPosit, Binary32 };
std::string_view family_name(NumberFamily f);
std::optional<NumberFamily> parse_family(std::string_view text);

/// es = {8: 2, 16: 3, 32: 6}
posit::PositConfig custom_posit(int bits);
/// es = {8: 0, 16: 1, 32: 2}
posit::PositConfig standard_posit(int bits);

/// Applies a posit op independently to each lane of two packed words.
std::uint32_t lane_op(Op op, std::uint32_t a, std::uint32_t b, PrecisionMode mode, posit::PositConfig lane_cfg);

/// The PE datapath: a precision mode plus the number family used in each lane.
struct Datapath {
    PrecisionMode mode = PrecisionMode::P32;
    NumberFamily family = NumberFamily::CustomPosit;

    /// Throws std::invalid_argument for binary32 in a sub-word mode.
    void check() const;
    ArithModel lane_model() const;
    std::uint32_t apply(Op op, std::uint32_t a, std::uint32_t b) const;
    std::uint32_t pack(const std::vector<ArithModel::Word>& lane_words) const;
    std::vector<ArithModel::Word> unpack(std::uint32_t word) const;
    std::string name() const;
};

// ---------------------------------------------------------------------------
// Representation-error curves

struct ErrorSample {
    double x = 0;
    double rel_error = 0;
};

/// `points` values log-uniformly spaced over [2^lo_exp, 2^hi_exp].
std::vector<double> log_uniform_grid(double lo_exp, double hi_exp, int points);

std::vector<ErrorSample> relative_error_profile(const ArithModel& model, const std::vector<double>& grid);

/// Mean of log10(max(err, floor)) over a profile; exact points count as `floor`.
double mean_log10_error(const std::vector<ErrorSample>& profile, double floor = 1e-30);

}  // namespace dagpu
