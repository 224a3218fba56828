#include "dagpu/arith.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

namespace dagpu {

std::string_view op_name(Op op) {
    switch (op) {
        case Op::Add: return "ADD";
        case Op::Mul: return "MUL";
        case Op::Max: return "MAX";
        case Op::Min: return "MIN";
        case Op::Input: return "INPUT";
        case Op::Const: return "CONST";
    }
    return "?";
}

std::optional<Op> parse_op(std::string_view text) {
    for (Op op : {Op::Add, Op::Mul, Op::Max, Op::Min, Op::Input, Op::Const})
        if (op_name(op) == text) return op;
    return std::nullopt;
}

double round_to_minifloat(double x, int exp_bits, int frac_bits) {
    if (std::isnan(x) || x == 0.0) return x;
    const int bias = (1 << (exp_bits - 1)) - 1;
    const int emin = 1 - bias;
    const int emax = bias;  // top exponent code reserved
    const double max_finite = std::ldexp(2.0 - std::ldexp(1.0, -frac_bits), emax);
    const double a = std::fabs(x);
    if (a >= max_finite) return std::copysign(max_finite, x);
    int e2 = 0;
    std::frexp(a, &e2);
    const int ex = std::max(e2 - 1, emin);
    const double quantum = std::ldexp(1.0, ex - frac_bits);
    double r = std::nearbyint(a / quantum) * quantum;
    if (r > max_finite) r = max_finite;
    return std::copysign(r, x);
}

namespace {

double word_as_double(std::uint64_t w) { return std::bit_cast<double>(w); }
std::uint64_t double_as_word(double d) { return std::bit_cast<std::uint64_t>(d); }
float word_as_float(std::uint64_t w) { return std::bit_cast<float>(static_cast<std::uint32_t>(w)); }
std::uint64_t float_as_word(float f) { return std::bit_cast<std::uint32_t>(f); }

template <typename T>
T apply_native(Op op, T a, T b) {
    switch (op) {
        case Op::Add: return a + b;
        case Op::Mul: return a * b;
        case Op::Max: return std::isnan(a) || std::isnan(b) ? a + b : (a >= b ? a : b);
        case Op::Min: return std::isnan(a) || std::isnan(b) ? a + b : (a <= b ? a : b);
        default: throw std::invalid_argument("not a compute op");
    }
}

std::uint32_t posit_apply(Op op, std::uint32_t a, std::uint32_t b, posit::PositConfig cfg) {
    switch (op) {
        case Op::Add: return posit::add(a, b, cfg);
        case Op::Mul: return posit::mul(a, b, cfg);
        case Op::Max: return posit::max(a, b, cfg);
        case Op::Min: return posit::min(a, b, cfg);
        default: throw std::invalid_argument("not a compute op");
    }
}

}  // namespace

ArithModel::Word ArithModel::encode(double x) const {
    switch (kind_) {
        case Kind::Float64: return double_as_word(x);
        case Kind::Posit: return posit::encode(x, cfg_);
        case Kind::Binary32: {
            const double r = std::isnan(x) ? x : round_to_minifloat(x, 8, 23);
            return float_as_word(static_cast<float>(r));
        }
        case Kind::Binary16: return double_as_word(round_to_minifloat(x, 5, 10));
        case Kind::Float8: return double_as_word(round_to_minifloat(x, 4, 3));
    }
    return 0;
}

double ArithModel::to_double(Word w) const {
    switch (kind_) {
        case Kind::Posit: return posit::to_double(static_cast<std::uint32_t>(w), cfg_);
        case Kind::Binary32: return word_as_float(w);
        default: return word_as_double(w);
    }
}

ArithModel::Word ArithModel::apply(Op op, Word a, Word b) const {
    switch (kind_) {
        case Kind::Float64: return double_as_word(apply_native(op, word_as_double(a), word_as_double(b)));
        case Kind::Posit:
            return posit_apply(op, static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), cfg_);
        case Kind::Binary32: return float_as_word(apply_native(op, word_as_float(a), word_as_float(b)));
        case Kind::Binary16:
        case Kind::Float8: {
            // Exact in double for these widths, so one rounding is correct.
            const double r = apply_native(op, word_as_double(a), word_as_double(b));
            return encode(r);
        }
    }
    return 0;
}

std::string ArithModel::name() const {
    switch (kind_) {
        case Kind::Float64: return "float64";
        case Kind::Posit: return cfg_.name();
        case Kind::Binary32: return "binary32";
        case Kind::Binary16: return "binary16";
        case Kind::Float8: return "float8";
    }
    return "?";
}

std::string ArithModel::layout() const {
    switch (kind_) {
        case Kind::Float64: return "IEEE binary64 (1-11-52)";
        case Kind::Posit:
            return "posit L=" + std::to_string(cfg_.bits) + " es=" + std::to_string(cfg_.es) + " (RNE, saturating)";
        case Kind::Binary32: return "IEEE binary32 (1-8-23), saturating";
        case Kind::Binary16: return "IEEE binary16 (1-5-10), saturating";
        case Kind::Float8: return "float8 (1-4-3, bias 7), saturating";
    }
    return "?";
}

std::optional<PrecisionMode> precision_from_bits(int bits) {
    switch (bits) {
        case 32: return PrecisionMode::P32;
        case 16: return PrecisionMode::P16;
        case 8: return PrecisionMode::P8;
        default: return std::nullopt;
    }
}

std::string_view family_name(NumberFamily f) {
    switch (f) {
        case NumberFamily::CustomPosit: return "custom-posit";
        case NumberFamily::StandardPosit: return "standard-posit";
        case NumberFamily::Binary32: return "binary32";
    }
    return "?";
}

std::optional<NumberFamily> parse_family(std::string_view text) {
    for (auto f : {NumberFamily::CustomPosit, NumberFamily::StandardPosit, NumberFamily::Binary32})
        if (family_name(f) == text) return f;
    return std::nullopt;
}

posit::PositConfig custom_posit(int bits) {
    switch (bits) {
        case 8: return posit::PositConfig::make(8, 2);
        case 16: return posit::PositConfig::make(16, 3);
        case 32: return posit::PositConfig::make(32, 6);
        default: throw std::invalid_argument("no custom posit of length " + std::to_string(bits));
    }
}

posit::PositConfig standard_posit(int bits) {
    switch (bits) {
        case 8: return posit::PositConfig::make(8, 0);
        case 16: return posit::PositConfig::make(16, 1);
        case 32: return posit::PositConfig::make(32, 2);
        default: throw std::invalid_argument("no standard posit of length " + std::to_string(bits));
    }
}

std::uint32_t lane_op(Op op, std::uint32_t a, std::uint32_t b, PrecisionMode mode, posit::PositConfig lane_cfg) {
    const int width = lane_bits(mode);
    if (lane_cfg.bits != width) throw std::invalid_argument("lane config width does not match precision mode");
    std::uint32_t out = 0;
    const std::uint32_t mask = lane_cfg.mask();
    for (int lane = 0; lane < lanes(mode); ++lane) {
        const int shift = lane * width;
        const std::uint32_t r = posit_apply(op, (a >> shift) & mask, (b >> shift) & mask, lane_cfg);
        out |= (r & mask) << shift;
    }
    return out;
}

void Datapath::check() const {
    if (family == NumberFamily::Binary32 && mode != PrecisionMode::P32)
        throw std::invalid_argument("binary32 datapath only supports 32-bit mode");
}

ArithModel Datapath::lane_model() const {
    check();
    const int bits = lane_bits(mode);
    switch (family) {
        case NumberFamily::CustomPosit: return ArithModel::posit(custom_posit(bits));
        case NumberFamily::StandardPosit: return ArithModel::posit(standard_posit(bits));
        case NumberFamily::Binary32: return ArithModel::binary32();
    }
    return ArithModel::float64();
}

std::uint32_t Datapath::apply(Op op, std::uint32_t a, std::uint32_t b) const {
    if (family == NumberFamily::Binary32) return static_cast<std::uint32_t>(lane_model().apply(op, a, b));
    return lane_op(op, a, b, mode, lane_model().posit_config());
}

std::uint32_t Datapath::pack(const std::vector<ArithModel::Word>& lane_words) const {
    const int n = lanes(mode);
    if (static_cast<int>(lane_words.size()) != n) throw std::invalid_argument("lane count mismatch");
    const int width = lane_bits(mode);
    const std::uint64_t mask = width == 32 ? 0xFFFFFFFFull : ((1ull << width) - 1);
    std::uint32_t out = 0;
    for (int lane = 0; lane < n; ++lane) out |= static_cast<std::uint32_t>(lane_words[lane] & mask) << (lane * width);
    return out;
}

std::vector<ArithModel::Word> Datapath::unpack(std::uint32_t word) const {
    const int n = lanes(mode);
    const int width = lane_bits(mode);
    const std::uint64_t mask = width == 32 ? 0xFFFFFFFFull : ((1ull << width) - 1);
    std::vector<ArithModel::Word> out(n);
    for (int lane = 0; lane < n; ++lane) out[lane] = (word >> (lane * width)) & mask;
    return out;
}

std::string Datapath::name() const {
    return std::string(family_name(family)) + "/" + std::to_string(lane_bits(mode)) + "b x" +
           std::to_string(lanes(mode));
}

std::vector<double> log_uniform_grid(double lo_exp, double hi_exp, int points) {
    if (points < 2 || !(hi_exp > lo_exp)) throw std::invalid_argument("grid needs >= 2 points and hi > lo");
    std::vector<double> grid(points);
    for (int i = 0; i < points; ++i)
        grid[i] = std::exp2(lo_exp + (hi_exp - lo_exp) * static_cast<double>(i) / (points - 1));
    return grid;
}

std::vector<ErrorSample> relative_error_profile(const ArithModel& model, const std::vector<double>& grid) {
    std::vector<ErrorSample> out;
    out.reserve(grid.size());
    for (double x : grid) {
        if (!(x > 0)) throw std::invalid_argument("error profile grid must be positive");
        const double y = model.to_double(model.encode(x));
        out.push_back({x, std::fabs(y - x) / x});
    }
    return out;
}

double mean_log10_error(const std::vector<ErrorSample>& profile, double floor) {
    if (profile.empty()) return 0.0;
    double sum = 0;
    for (const auto& s : profile) sum += std::log10(std::max(s.rel_error, floor));
    return sum / static_cast<double>(profile.size());
}

}  // namespace dagpu
