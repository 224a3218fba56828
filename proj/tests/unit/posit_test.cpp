#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dagpu/posit.hpp"
#include "posit_oracle.hpp"

using namespace dagpu::posit;
namespace ref = posit_oracle;

namespace {

PositConfig cfg(int bits, int es) { return PositConfig::make(bits, es); }

std::uint32_t oracle_op(char op, std::uint32_t a, std::uint32_t b, int n, int es) {
    const auto va = ref::decode(a, n, es);
    const auto vb = ref::decode(b, n, es);
    if (va.nar || vb.nar) return 1u << (n - 1);
    const long double x = va.zero ? 0.0L : va.value;
    const long double y = vb.zero ? 0.0L : vb.value;
    return ref::encode(op == '+' ? x + y : x * y, n, es);
}

}  // namespace

TEST(PositDecode, ReservedAndSmallPatterns) {
    const auto c = cfg(8, 0);
    EXPECT_EQ(to_double(0x40, c), 1.0);
    EXPECT_EQ(to_double(0x60, c), 2.0);
    EXPECT_EQ(decode(0x00, c).kind, Decoded::Kind::Zero);
    EXPECT_EQ(decode(0x80, c).kind, Decoded::Kind::NaR);
    const auto d = decode(0x60, c);
    EXPECT_EQ(d.regime, 1);
    EXPECT_FALSE(d.negative);
}

TEST(PositEncode, Examples) {
    const auto c = cfg(8, 0);
    EXPECT_EQ(encode(1.0, c), 0x40u);
    EXPECT_EQ(encode(std::ldexp(1.0, 40), c), 0x7Fu);
    EXPECT_EQ(to_double(0x7F, c), 64.0);
    EXPECT_EQ(encode(std::ldexp(1.0, -40), c), 0x01u);
    EXPECT_EQ(encode(-std::ldexp(1.0, 40), c), 0x81u);
    EXPECT_EQ(encode(std::nan(""), c), 0x80u);
    EXPECT_EQ(encode(INFINITY, c), 0x80u);
    EXPECT_EQ(encode(0.0, c), 0x00u);
}

TEST(PositArith, Examples) {
    const auto c = cfg(8, 0);
    EXPECT_EQ(mul(0x60, 0x60, c), 0x70u);
    EXPECT_EQ(to_double(0x70, c), 4.0);
    for (auto k : {cfg(8, 0), cfg(8, 2), cfg(16, 1), cfg(16, 3), cfg(32, 2), cfg(32, 6)}) {
        const auto one = encode(1.0, k);
        EXPECT_EQ(add(one, 0, k), one) << k.name();
        EXPECT_EQ(mul(one, 0, k), 0u) << k.name();
        EXPECT_EQ(add(k.nar(), one, k), k.nar());
        EXPECT_EQ(mul(0, k.nar(), k), k.nar());
        EXPECT_EQ(max(encode(1.0, k), encode(2.0, k), k), encode(2.0, k));
        EXPECT_EQ(min(encode(1.0, k), encode(2.0, k), k), encode(1.0, k));
    }
}

TEST(PositConfig, Limits) {
    EXPECT_EQ(cfg(8, 0).max_scale(), 6);
    EXPECT_EQ(cfg(16, 3).max_scale(), 112);
    EXPECT_EQ(cfg(32, 6).max_scale(), 1920);
    EXPECT_THROW(PositConfig::make(8, 6), std::invalid_argument);
    EXPECT_THROW(PositConfig::make(33, 2), std::invalid_argument);
    EXPECT_EQ(cfg(16, 1).name(), "posit<16,1>");
}

TEST(PositExhaustive8, DecodeMatchesBitWalkAndRoundTrips) {
    for (int es = 0; es <= 5; ++es) {
        const auto c = cfg(8, es);
        for (std::uint32_t p = 0; p < 256; ++p) {
            const auto r = ref::decode(p, 8, es);
            const double v = to_double(p, c);
            if (r.nar) {
                EXPECT_TRUE(std::isnan(v));
                continue;
            }
            ASSERT_EQ(v, static_cast<double>(r.zero ? 0.0L : r.value)) << "es=" << es << " p=" << p;
            ASSERT_EQ(encode(v, c), p) << "es=" << es << " p=" << p;
            ASSERT_EQ(ref::encode(r.zero ? 0.0L : r.value, 8, es), p);
        }
    }
}

TEST(PositExhaustive8, AddMulMatchOracle) {
    for (int es = 0; es <= 2; ++es) {
        const auto c = cfg(8, es);
        for (std::uint32_t a = 0; a < 256; ++a)
            for (std::uint32_t b = 0; b < 256; ++b) {
                ASSERT_EQ(add(a, b, c), oracle_op('+', a, b, 8, es)) << "es=" << es << " a=" << a << " b=" << b;
                ASSERT_EQ(mul(a, b, c), oracle_op('*', a, b, 8, es)) << "es=" << es << " a=" << a << " b=" << b;
            }
    }
}

TEST(PositExhaustive8, CommutativeAndCompareMatchesDecode) {
    for (int es = 0; es <= 2; ++es) {
        const auto c = cfg(8, es);
        for (std::uint32_t a = 0; a < 256; ++a) {
            ASSERT_EQ(max(a, a, c), a);
            ASSERT_EQ(min(a, a, c), a);
            for (std::uint32_t b = 0; b < 256; ++b) {
                ASSERT_EQ(add(a, b, c), add(b, a, c));
                ASSERT_EQ(mul(a, b, c), mul(b, a, c));
                ASSERT_EQ(max(a, b, c), max(b, a, c));
                ASSERT_EQ(min(a, b, c), min(b, a, c));
                if (a == c.nar() || b == c.nar()) {
                    ASSERT_EQ(max(a, b, c), c.nar());
                    continue;
                }
                const double x = to_double(a, c), y = to_double(b, c);
                ASSERT_EQ(to_double(max(a, b, c), c), std::max(x, y));
                ASSERT_EQ(to_double(min(a, b, c), c), std::min(x, y));
            }
        }
    }
}

TEST(PositExhaustive, Monotone) {
    for (auto [bits, es] : {std::pair{8, 0}, {8, 2}, {16, 1}, {16, 3}}) {
        const auto c = cfg(bits, es);
        const std::int32_t lo = -(1 << (bits - 1)) + 1, hi = (1 << (bits - 1)) - 1;
        double prev = -INFINITY;
        for (std::int32_t s = lo; s <= hi; ++s) {
            const std::uint32_t p = static_cast<std::uint32_t>(s) & c.mask();
            ASSERT_EQ(as_signed(p, c), s);
            const double v = to_double(p, c);
            ASSERT_LT(prev, v) << c.name() << " s=" << s;
            prev = v;
        }
    }
}

TEST(PositExhaustive16, RoundTrip) {
    for (int es = 0; es <= 4; ++es) {
        const auto c = cfg(16, es);
        for (std::uint32_t p = 0; p < 65536; ++p) {
            if (p == c.nar()) continue;
            const double v = to_double(p, c);
            ASSERT_EQ(encode(v, c), p) << "es=" << es << " p=" << p;
            const auto r = ref::decode(p, 16, es);
            ASSERT_EQ(v, static_cast<double>(r.zero ? 0.0L : r.value));
        }
    }
}

TEST(PositRandom16, AddMulMatchOracle) {
    std::mt19937 gen(11);
    for (int es : {1, 3}) {
        const auto c = cfg(16, es);
        for (int i = 0; i < 200000; ++i) {
            const std::uint32_t a = gen() & 0xFFFF, b = gen() & 0xFFFF;
            const auto ra = ref::decode(a, 16, es), rb = ref::decode(b, 16, es);
            ASSERT_EQ(mul(a, b, c), oracle_op('*', a, b, 16, es));
            // long double sums are exact only for nearby scales
            if (!ra.zero && !rb.zero && !ra.nar && !rb.nar && std::abs(ra.scale - rb.scale) > 40) continue;
            ASSERT_EQ(add(a, b, c), oracle_op('+', a, b, 16, es)) << a << " " << b;
        }
    }
}

TEST(PositRandom32, RoundTripAndFields) {
    std::mt19937 gen(5);
    for (int es : {2, 6}) {
        const auto c = cfg(32, es);
        for (int i = 0; i < 500000; ++i) {
            const std::uint32_t p = gen();
            if (p == c.nar()) continue;
            const auto r = ref::decode(p, 32, es);
            ASSERT_EQ(ref::encode(r.zero ? 0.0L : r.value, 32, es), p);
            if (r.zero) continue;
            const auto d = decode(p, c);
            ASSERT_EQ(d.scale(), r.scale) << p;
            if (std::abs(r.scale) < 1000) {
                ASSERT_EQ(encode(to_double(p, c), c), p) << p;
            }
        }
    }
}

TEST(PositRandom32, EncodeMatchesOracleAndSaturates) {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> mant(1.0, 2.0);
    std::uniform_int_distribution<int> ex(-1022, 1023);
    for (int es : {2, 6}) {
        const auto c32 = cfg(32, es);
        const auto c8 = cfg(8, 2);
        for (int i = 0; i < 200000; ++i) {
            const double x = std::ldexp(mant(gen), ex(gen)) * ((gen() & 1) ? -1 : 1);
            ASSERT_EQ(encode(x, c32), ref::encode(x, 32, es)) << x;
            const auto p = encode(x, c8);
            ASSERT_NE(p, 0u);
            ASSERT_NE(p, c8.nar());
        }
    }
}

TEST(PositRandom32, AddMulNearbyScalesMatchOracle) {
    std::mt19937 gen(9);
    for (int es : {2, 6}) {
        const auto c = cfg(32, es);
        int checked = 0;
        while (checked < 100000) {
            const std::uint32_t a = gen(), b = gen();
            const auto ra = ref::decode(a, 32, es), rb = ref::decode(b, 32, es);
            if (ra.nar || rb.nar || ra.zero || rb.zero) continue;
            if (std::abs(ra.scale) > 4000 || std::abs(rb.scale) > 4000) continue;
            ASSERT_EQ(mul(a, b, c), oracle_op('*', a, b, 32, es));
            if (std::abs(ra.scale - rb.scale) <= 30) ASSERT_EQ(add(a, b, c), oracle_op('+', a, b, 32, es));
            ++checked;
        }
    }
}
