//
//  fft.hpp — iterative radix-2 complex FFT.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "banc/common.hpp"

namespace banc {

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place decimation-in-time FFT. Size must be a power of two.
// inverse=true computes the unnormalized inverse transform; divide by n
// at the call site when a true inverse is needed.
template <typename T>
void fft_inplace(std::vector<std::complex<T>>& a, bool inverse) {
  const size_t n = a.size();
  require(is_pow2(n), "fft: size ", n, " is not a power of two");
  if (n <= 1) return;

  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const std::complex<T> wl(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
    for (size_t i = 0; i < n; i += len) {
      std::complex<T> w(1, 0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<T> u = a[i + k];
        std::complex<T> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// One-sided spectrum of a real signal zero-padded to fft_size.
// Returns fft_size/2 + 1 bins.
template <typename T>
std::vector<std::complex<T>> rfft(const T* x, size_t len, size_t fft_size) {
  std::vector<std::complex<T>> buf(fft_size, std::complex<T>(0, 0));
  for (size_t i = 0; i < len && i < fft_size; ++i) buf[i] = std::complex<T>(x[i], 0);
  fft_inplace(buf, false);
  buf.resize(fft_size / 2 + 1);
  return buf;
}

}  // namespace banc
