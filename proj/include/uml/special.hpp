#pragma once

#include <cmath>

#include "uml/errors.hpp"

namespace uml {

// softplus(x) = ln(1 + exp(x)), evaluated as max(x,0) + log1p(exp(-|x|)) so it
// neither overflows for large x nor loses the tail for very negative x.
template <typename T>
T softplus(T x) {
    if (!std::isfinite(static_cast<double>(x)))
        throw invalid_input("softplus: non-finite input");
    const T ax = x < T(0) ? -x : x;
    const T base = x > T(0) ? x : T(0);
    return base + std::log1p(std::exp(-ax));
}

// d/dx softplus(x) = sigmoid(x)
template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// Digamma via upward recurrence into the asymptotic region, then the standard
// Bernoulli-number series. Accurate to ~1e-14 for x >= 1e-3.
inline double digamma(double x) {
    if (!(x > 0.0)) throw invalid_input("digamma: requires x > 0");
    double result = 0.0;
    while (x < 6.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv -
              inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 -
                      inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    return result;
}

// Trigamma (psi'), same scheme: psi1(x) = psi1(x+1) + 1/x^2.
inline double trigamma(double x) {
    if (!(x > 0.0)) throw invalid_input("trigamma: requires x > 0");
    double result = 0.0;
    while (x < 6.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += inv * (1.0 + 0.5 * inv +
                     inv * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 -
                            inv2 * (1.0 / 30.0)))));
    return result;
}

}  // namespace uml
