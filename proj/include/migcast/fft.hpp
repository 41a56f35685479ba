#pragma once

// Complex FFT for any length (radix-2 with Bluestein's chirp-z for the rest)
// and FFT-based circular correlation.

#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "migcast/errors.hpp"

namespace migcast::fft {

using cplx = std::complex<double>;

namespace detail {

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

inline void radix2(std::vector<cplx>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        const cplx wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const cplx u = a[i + j];
                const cplx v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

inline void bluestein(std::vector<cplx>& a, bool inverse) {
    const std::size_t n = a.size();
    std::size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;
    const double sign = inverse ? 1.0 : -1.0;
    std::vector<cplx> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle argument small and exact.
        const auto k2 = static_cast<double>((k * k) % (2 * n));
        const double ang = sign * std::numbers::pi * k2 / static_cast<double>(n);
        chirp[k] = cplx(std::cos(ang), std::sin(ang));
    }
    std::vector<cplx> x(m), y(m);
    for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * chirp[k];
    y[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) y[k] = y[m - k] = std::conj(chirp[k]);
    radix2(x, false);
    radix2(y, false);
    for (std::size_t i = 0; i < m; ++i) x[i] *= y[i];
    radix2(x, true);
    for (std::size_t k = 0; k < n; ++k) a[k] = x[k] / static_cast<double>(m) * chirp[k];
}

}  // namespace detail

/// In-place DFT. The inverse is unnormalised (callers divide by n).
inline void transform(std::vector<cplx>& a, bool inverse = false) {
    if (a.size() <= 1) return;
    if (detail::is_pow2(a.size()))
        detail::radix2(a, inverse);
    else
        detail::bluestein(a, inverse);
}

/// r[tau] = sum_t x[(t + tau) mod n] * y[t], summed over `channels` interleaved
/// columns of two row-major [n x channels] buffers.
inline std::vector<double> circular_cross_correlation(std::span<const double> x, std::span<const double> y,
                                                      std::size_t n, std::size_t channels) {
    if (x.size() != n * channels || y.size() != n * channels)
        throw ShapeError("circular_cross_correlation: buffer sizes do not match n*channels");
    std::vector<cplx> acc(n, cplx(0.0, 0.0));
    std::vector<cplx> fx(n), fy(n);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t t = 0; t < n; ++t) {
            fx[t] = cplx(x[t * channels + c], 0.0);
            fy[t] = cplx(y[t * channels + c], 0.0);
        }
        transform(fx);
        transform(fy);
        for (std::size_t f = 0; f < n; ++f) acc[f] += fx[f] * std::conj(fy[f]);
    }
    transform(acc, true);
    std::vector<double> out(n);
    for (std::size_t t = 0; t < n; ++t) out[t] = acc[t].real() / static_cast<double>(n);
    return out;
}

/// Circular autocorrelation via inverse FFT of the power spectrum, scaled so
/// that lag 0 equals 1. An all-zero input yields all zeros.
inline std::vector<double> autocorrelation(std::span<const double> x) {
    if (x.size() < 2) throw ShapeError("autocorrelation: need at least 2 samples");
    auto r = circular_cross_correlation(x, x, x.size(), 1);
    const double r0 = r[0];
    for (auto& v : r) v = r0 > 0.0 ? v / r0 : 0.0;
    return r;
}

}  // namespace migcast::fft
