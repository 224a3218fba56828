#include "dagpu/posit.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

namespace dagpu::posit {

namespace {

using u128 = unsigned __int128;

// Magnitude in normalized form: value = 2^scale * sig / 2^63, sig bit 63 set.
struct Unpacked {
    bool negative = false;
    long long scale = 0;
    std::uint64_t sig = 0;
};

long long floor_div(long long a, long long b) {
    long long q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

std::uint32_t negate(std::uint32_t bits, PositConfig cfg) { return (0u - bits) & cfg.mask(); }

std::uint32_t pack(const Unpacked& u, bool sticky, PositConfig cfg) {
    const int n = cfg.bits - 1;
    const long long useed_log = 1LL << cfg.es;
    const long long k = floor_div(u.scale, useed_log);
    const long long e = u.scale - k * useed_log;

    std::uint32_t keep;
    if (k >= n - 1) {
        keep = cfg.maxpos_bits();
    } else if (k < -(n - 1)) {
        keep = cfg.minpos_bits();
    } else {
        u128 regime;
        int regime_len;
        if (k >= 0) {
            regime_len = static_cast<int>(k) + 2;
            regime = ((u128{1} << (k + 1)) - 1) << 1;
        } else {
            regime_len = static_cast<int>(-k) + 1;
            regime = 1;
        }
        const std::uint64_t frac = u.sig & ~(std::uint64_t{1} << 63);
        const int total = regime_len + cfg.es + 63;
        const u128 body = (regime << (cfg.es + 63)) | (u128(static_cast<std::uint64_t>(e)) << 63) | u128(frac);
        const int shift = total - n;  // > 0 for every supported config
        u128 kept = body >> shift;
        const u128 rem = body & ((u128{1} << shift) - 1);
        const bool guard = ((rem >> (shift - 1)) & 1) != 0;
        const bool rest = (rem & ((u128{1} << (shift - 1)) - 1)) != 0 || sticky;
        if (guard && (rest || (kept & 1))) ++kept;
        if (kept > cfg.maxpos_bits()) kept = cfg.maxpos_bits();
        if (kept == 0) kept = cfg.minpos_bits();
        keep = static_cast<std::uint32_t>(kept);
    }
    return u.negative ? negate(keep, cfg) : keep;
}

Unpacked unpack(const Decoded& d) {
    Unpacked u;
    u.negative = d.negative;
    u.scale = d.scale();
    u.sig = (std::uint64_t{1} << 63) | (d.fraction_bits ? (d.fraction << (63 - d.fraction_bits)) : 0);
    return u;
}

bool magnitude_less(const Unpacked& a, const Unpacked& b) {
    return a.scale != b.scale ? a.scale < b.scale : a.sig < b.sig;
}

}  // namespace

PositConfig PositConfig::make(int bits, int es) {
    if (bits < 2 || bits > 32) throw std::invalid_argument("posit length must be in [2, 32]");
    if (es < 0 || (bits > 2 && es >= bits - 2) || es > 28)
        throw std::invalid_argument("posit es out of range for length " + std::to_string(bits));
    return PositConfig{bits, es};
}

std::string PositConfig::name() const {
    return "posit<" + std::to_string(bits) + "," + std::to_string(es) + ">";
}

std::int32_t as_signed(std::uint32_t bits, PositConfig cfg) {
    bits &= cfg.mask();
    if (cfg.bits < 32 && (bits & cfg.nar())) bits |= ~cfg.mask();
    return static_cast<std::int32_t>(bits);
}

Decoded decode(std::uint32_t bits, PositConfig cfg) {
    Decoded d;
    d.es = cfg.es;
    bits &= cfg.mask();
    if (bits == 0) return d;
    if (bits == cfg.nar()) {
        d.kind = Decoded::Kind::NaR;
        return d;
    }
    d.kind = Decoded::Kind::Real;
    d.negative = (bits & cfg.nar()) != 0;
    if (d.negative) bits = negate(bits, cfg);

    const int n = cfg.bits - 1;
    const bool lead = ((bits >> (n - 1)) & 1) != 0;
    int run = 0;
    while (run < n && (((bits >> (n - 1 - run)) & 1) != 0) == lead) ++run;
    d.regime = lead ? run - 1 : -run;

    const int rest_len = run >= n ? 0 : n - run - 1;
    const std::uint32_t rest = rest_len ? (bits & ((1u << rest_len) - 1u)) : 0u;
    const int exp_len = rest_len < cfg.es ? rest_len : cfg.es;
    d.fraction_bits = rest_len - exp_len;
    const std::uint32_t exp_field = exp_len ? (rest >> d.fraction_bits) : 0u;
    d.exponent = exp_field << (cfg.es - exp_len);
    d.fraction = d.fraction_bits ? (rest & ((1u << d.fraction_bits) - 1u)) : 0u;
    return d;
}

std::uint32_t encode(double x, PositConfig cfg) {
    if (std::isnan(x) || std::isinf(x)) return cfg.nar();
    if (x == 0.0) return 0;
    int e2 = 0;
    const double m = std::frexp(std::fabs(x), &e2);
    Unpacked u;
    u.negative = x < 0;
    u.scale = e2 - 1;
    u.sig = static_cast<std::uint64_t>(std::ldexp(m, 64));
    return pack(u, false, cfg);
}

double to_double(std::uint32_t bits, PositConfig cfg) {
    const Decoded d = decode(bits, cfg);
    if (d.kind == Decoded::Kind::Zero) return 0.0;
    if (d.kind == Decoded::Kind::NaR) return std::nan("");
    const double sig = 1.0 + std::ldexp(static_cast<double>(d.fraction), -d.fraction_bits);
    const long long sc = d.scale();
    const double v = sc > 2000 ? HUGE_VAL : sc < -2000 ? 0.0 : std::ldexp(sig, static_cast<int>(sc));
    return d.negative ? -v : v;
}

std::uint32_t add(std::uint32_t a, std::uint32_t b, PositConfig cfg) {
    a &= cfg.mask();
    b &= cfg.mask();
    if (a == cfg.nar() || b == cfg.nar()) return cfg.nar();
    if (a == 0) return b;
    if (b == 0) return a;

    Unpacked x = unpack(decode(a, cfg));
    Unpacked y = unpack(decode(b, cfg));
    if (magnitude_less(x, y)) std::swap(x, y);

    // Two bits of headroom for the carry; the low bits act as guard/sticky.
    std::uint64_t big = x.sig >> 2;
    std::uint64_t small = y.sig >> 2;
    const long long d = x.scale - y.scale;
    if (d >= 62) {
        small = 1;
    } else if (d > 0) {
        const bool lost = (small & ((std::uint64_t{1} << d) - 1)) != 0;
        small = (small >> d) | (lost ? 1u : 0u);
    }

    std::uint64_t sum;
    if (x.negative == y.negative) {
        sum = big + small;
    } else {
        sum = big - small;
        if (sum == 0) return 0;
    }
    const int msb = 63 - std::countl_zero(sum);
    Unpacked r;
    r.negative = x.negative;
    r.scale = x.scale + (msb - 61);
    r.sig = sum << (63 - msb);
    return pack(r, false, cfg);
}

std::uint32_t mul(std::uint32_t a, std::uint32_t b, PositConfig cfg) {
    a &= cfg.mask();
    b &= cfg.mask();
    if (a == cfg.nar() || b == cfg.nar()) return cfg.nar();
    if (a == 0 || b == 0) return 0;

    const Decoded da = decode(a, cfg);
    const Decoded db = decode(b, cfg);
    const std::uint64_t sa = (std::uint64_t{1} << da.fraction_bits) | da.fraction;
    const std::uint64_t sb = (std::uint64_t{1} << db.fraction_bits) | db.fraction;
    const std::uint64_t prod = sa * sb;  // <= 62 bits for 32-bit posits
    const int msb = 63 - std::countl_zero(prod);

    Unpacked r;
    r.negative = da.negative != db.negative;
    r.scale = da.scale() + db.scale() + (msb - da.fraction_bits - db.fraction_bits);
    r.sig = prod << (63 - msb);
    return pack(r, false, cfg);
}

std::uint32_t max(std::uint32_t a, std::uint32_t b, PositConfig cfg) {
    a &= cfg.mask();
    b &= cfg.mask();
    if (a == cfg.nar() || b == cfg.nar()) return cfg.nar();
    return as_signed(a, cfg) >= as_signed(b, cfg) ? a : b;
}

std::uint32_t min(std::uint32_t a, std::uint32_t b, PositConfig cfg) {
    a &= cfg.mask();
    b &= cfg.mask();
    if (a == cfg.nar() || b == cfg.nar()) return cfg.nar();
    return as_signed(a, cfg) <= as_signed(b, cfg) ? a : b;
}

}  // namespace dagpu::posit
