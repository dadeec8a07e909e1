#pragma once

#include <cstddef>

// Inner loops shared by ops.cpp and autodiff.cpp. Results depend only on the
// inputs, never on alignment or thread count.
namespace tristream::kernels {

/// Sum of a[i] * b[i] over eight interleaved partial sums.
inline double dot(const double* a, const double* b, std::size_t n) noexcept {
  double s[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) s[l] += a[i + l] * b[i + l];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((s[0] + s[4]) + (s[1] + s[5])) + ((s[2] + s[6]) + (s[3] + s[7]))) + tail;
}

inline double sum(const double* a, std::size_t n) noexcept {
  double s[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) s[l] += a[i + l];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i];
  return (((s[0] + s[4]) + (s[1] + s[5])) + ((s[2] + s[6]) + (s[3] + s[7]))) + tail;
}

/// y[i] += alpha * x[i]
inline void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace tristream::kernels
