#pragma once

// Scalar transcendental kernels. The float overloads trade the last few bits
// of accuracy (~1e-7 relative) for speed and auto-vectorization; the double
// overloads call libm and are used by the gradient-check paths.

#include <bit>
#include <cmath>
#include <cstdint>

namespace atomtok::fm {

// exp(x) for float: 2^t split with a degree-6 Taylor of 2^f on [-0.5, 0.5].
// Input clamped to [-87, 88] so the exponent bit trick stays in range.
inline float exp_(float x) {
    x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
    float t = x * 1.4426950408889634f;  // log2(e)
    float n = std::floor(t + 0.5f);
    float f = t - n;
    float p = 1.0f +
              f * (0.69314718055994531f +
                   f * (0.24022650695910072f +
                        f * (0.055504108664821580f +
                             f * (0.0096181291076284772f +
                                  f * (0.0013333558146428443f + f * 0.00015403530393381609f)))));
    const uint32_t bits = static_cast<uint32_t>(static_cast<int32_t>(n) + 127) << 23;
    return p * std::bit_cast<float>(bits);
}

inline double exp_(double x) { return std::exp(x); }

inline float sigmoid_(float x) { return 1.0f / (1.0f + exp_(-x)); }
inline double sigmoid_(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline float tanh_(float x) { return 2.0f * sigmoid_(2.0f * x) - 1.0f; }
inline double tanh_(double x) { return std::tanh(x); }

template <typename T>
inline T softplus_(T x) {
    if (x > T(20)) return x;
    if (x < T(-20)) return exp_(x);
    return std::log1p(exp_(x));
}

template <typename T>
inline T silu_(T x) {
    return x * sigmoid_(x);
}

}  // namespace atomtok::fm
