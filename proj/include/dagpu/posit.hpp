#pragma once

#include <cstdint>
#include <string>

namespace dagpu::posit {

/// Format descriptor for a posit <bits, es>: total length and the maximum
/// number of exponent bits following the regime.
struct PositConfig {
    int bits = 32;
    int es = 2;

    /// Throws std::invalid_argument unless 2 <= bits <= 32 and 0 <= es < bits - 2
    /// (es is additionally capped at 28 so scales fit the internal encoder).
    static PositConfig make(int bits, int es);

    std::uint32_t mask() const { return bits == 32 ? 0xFFFFFFFFu : ((1u << bits) - 1u); }
    std::uint32_t nar() const { return 1u << (bits - 1); }
    std::uint32_t maxpos_bits() const { return nar() - 1u; }
    std::uint32_t minpos_bits() const { return 1u; }
    /// log2(maxpos) = 2^es * (bits - 2).
    long long max_scale() const { return (1LL << es) * (bits - 2); }

    std::string name() const;
    friend bool operator==(const PositConfig&, const PositConfig&) = default;
};

/// Result of decoding a posit bit pattern.  For real values the magnitude is
/// 2^scale() * (1 + fraction / 2^fraction_bits).
struct Decoded {
    enum class Kind { Zero, NaR, Real };
    Kind kind = Kind::Zero;
    bool negative = false;
    int regime = 0;               // k
    std::uint32_t exponent = 0;   // e, zero-padded when truncated
    std::uint64_t fraction = 0;   // without the hidden bit
    int fraction_bits = 0;
    int es = 0;

    long long scale() const { return regime * (1LL << es) + static_cast<long long>(exponent); }
};

Decoded decode(std::uint32_t bits, PositConfig cfg);

/// Round-to-nearest-even on the encoded bit string, saturating at
/// maxpos/minpos.  NaN and infinities map to NaR; only an exact zero
/// encodes to the zero pattern.
std::uint32_t encode(double x, PositConfig cfg);

/// Exact for every pattern whose scale fits a double; otherwise +-inf / 0.
double to_double(std::uint32_t bits, PositConfig cfg);

std::uint32_t add(std::uint32_t a, std::uint32_t b, PositConfig cfg);
std::uint32_t mul(std::uint32_t a, std::uint32_t b, PositConfig cfg);
std::uint32_t max(std::uint32_t a, std::uint32_t b, PositConfig cfg);
std::uint32_t min(std::uint32_t a, std::uint32_t b, PositConfig cfg);

/// Sign-extends an L-bit pattern; the resulting integers order the
/// represented reals monotonically (NaR sorts first).
std::int32_t as_signed(std::uint32_t bits, PositConfig cfg);

}  // namespace dagpu::posit
