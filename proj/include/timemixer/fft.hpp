#pragma once

#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace timemixer {
namespace fft {

using cd = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Iterative radix-2 Cooley-Tukey; n must be a power of two.
inline void fft_pow2(std::vector<cd>& a, bool inverse) {
    const std::size_t n = a.size();
    if (!is_pow2(n)) throw std::invalid_argument("fft_pow2: size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1 : -1);
        const cd wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cd w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const cd u = a[i + j];
                const cd v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (auto& x : a) x *= inv_n;
    }
}

/// Forward DFT of arbitrary length via Bluestein's chirp-z reduction to a
/// power-of-two convolution. Convention: X_k = sum_n x_n exp(-2*pi*i*k*n/N),
/// no normalization on the forward transform.
inline std::vector<cd> dft(const std::vector<cd>& x) {
    const std::size_t n = x.size();
    if (n == 0) return {};
    if (n == 1) return x;
    if (is_pow2(n)) {
        std::vector<cd> a = x;
        fft_pow2(a, false);
        return a;
    }
    // chirp phases use (j*j mod 2n) so the argument stays small and exact
    std::vector<cd> chirp(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::uint64_t q = (static_cast<std::uint64_t>(j) * j) % (2 * n);
        const double ang = std::numbers::pi * static_cast<double>(q) / static_cast<double>(n);
        chirp[j] = cd(std::cos(ang), -std::sin(ang));
    }
    std::size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;
    std::vector<cd> a(m, cd(0, 0)), b(m, cd(0, 0));
    for (std::size_t j = 0; j < n; ++j) a[j] = x[j] * chirp[j];
    for (std::size_t j = 0; j < n; ++j) {
        b[j] = std::conj(chirp[j]);
        if (j != 0) b[m - j] = std::conj(chirp[j]);
    }
    fft_pow2(a, false);
    fft_pow2(b, false);
    for (std::size_t j = 0; j < m; ++j) a[j] *= b[j];
    fft_pow2(a, true);
    std::vector<cd> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * chirp[k];
    return out;
}

/// Half-spectrum (bins 0..floor(T/2)) of a real series under the convention
/// above. Parseval then reads: sum_n x_n^2 = (1/T) * sum_{k=0}^{T-1} |X_k|^2,
/// where bins 1..ceil(T/2)-1 of the half-spectrum each stand for a conjugate
/// pair and the bin T/2 (T even) is unpaired.
inline std::vector<cd> real_half_spectrum(const std::vector<double>& x) {
    std::vector<cd> cx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) cx[i] = cd(x[i], 0.0);
    auto full = dft(cx);
    std::vector<cd> half(x.size() / 2 + 1);
    for (std::size_t k = 0; k < half.size(); ++k) half[k] = full[k];
    return half;
}

}  // namespace fft
}  // namespace timemixer
