#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

// Scalar arithmetic contract shared by the simulator's instruction evaluator
// and the sequential reference inference path. Both sides must call these
// helpers (never raw expressions) wherever bit-exact agreement is required.
// All register values are raw 32-bit patterns; FP helpers reinterpret them as
// IEEE-754 binary32 and round to nearest-even.

namespace faultsim::fp {

inline uint32_t bits(float f) { return std::bit_cast<uint32_t>(f); }
inline float from_bits(uint32_t b) { return std::bit_cast<float>(b); }

inline float fadd(float a, float b) { return a + b; }
inline float fmul(float a, float b) { return a * b; }

// Fused multiply-add, single rounding.
inline float ffma(float a, float b, float c) { return std::fmaf(a, b, c); }

// max/min with a fixed total ordering so results never depend on the host
// libm: NaN loses against any number, and -0.0 < +0.0.
inline float fmax_(float a, float b) {
    if (std::isnan(a)) return b;
    if (std::isnan(b)) return a;
    if (a == b) return std::signbit(a) ? b : a;
    return a > b ? a : b;
}

inline float fmin_(float a, float b) {
    if (std::isnan(a)) return b;
    if (std::isnan(b)) return a;
    if (a == b) return std::signbit(a) ? a : b;
    return a < b ? a : b;
}

// Special-function unit ops: evaluated in binary64, rounded once to binary32.
inline float frcp(float a) { return static_cast<float>(1.0 / static_cast<double>(a)); }
inline float frsq(float a) { return static_cast<float>(1.0 / std::sqrt(static_cast<double>(a))); }
inline float fexp2(float a) { return static_cast<float>(std::exp2(static_cast<double>(a))); }
inline float flog2(float a) { return static_cast<float>(std::log2(static_cast<double>(a))); }

// int32 -> binary32, round to nearest even.
inline float i2f(uint32_t v) { return static_cast<float>(static_cast<int32_t>(v)); }

// binary32 -> int32, truncate toward zero, saturating; NaN maps to 0.
inline uint32_t f2i(float f) {
    if (std::isnan(f)) return 0;
    double d = std::trunc(static_cast<double>(f));
    if (d >= 2147483648.0) return 0x7FFFFFFFu;
    if (d < -2147483648.0) return 0x80000000u;
    return static_cast<uint32_t>(static_cast<int32_t>(d));
}

// log2(e) as the binary32 constant kernels multiply by before EXP2.
inline constexpr uint32_t kLog2eBits = 0x3FB8AA3Bu;
inline float log2e() { return from_bits(kLog2eBits); }

}  // namespace faultsim::fp
