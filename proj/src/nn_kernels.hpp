// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

namespace roam::nn {

constexpr double kRmsEps = 1e-5;

inline double dot(const double* __restrict a, const double* __restrict b, int n) {
    double s0 = 0.0, s1 = 0.0;
    int i = 0;
    for (; i + 1 < n; i += 2) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
    }
    if (i < n) s0 += a[i] * b[i];
    return s0 + s1;
}

// y = W x, W row-major [n_out x n_in]
inline void linear_fwd(const double* __restrict w, const double* __restrict x,
                       double* __restrict y, int n_out, int n_in) {
    for (int o = 0; o < n_out; ++o) y[o] = dot(w + static_cast<size_t>(o) * n_in, x, n_in);
}

// dW += dy (x) outer, dx += W^T dy
inline void linear_bwd(const double* __restrict w, const double* __restrict x,
                       const double* __restrict dy, double* __restrict dw,
                       double* __restrict dx, int n_out, int n_in) {
    for (int o = 0; o < n_out; ++o) {
        const double g = dy[o];
        if (g == 0.0) continue;
        const double* __restrict row = w + static_cast<size_t>(o) * n_in;
        double* __restrict drow = dw + static_cast<size_t>(o) * n_in;
        for (int i = 0; i < n_in; ++i) {
            drow[i] += g * x[i];
            dx[i] += row[i] * g;
        }
    }
}

inline double rmsnorm_fwd(const double* __restrict x, double* __restrict y, int n) {
    double ms = dot(x, x, n) / n + kRmsEps;
    double inv = 1.0 / std::sqrt(ms);
    for (int i = 0; i < n; ++i) y[i] = x[i] * inv;
    return inv;
}

inline void rmsnorm_bwd(const double* __restrict dy, const double* __restrict x, double inv,
                        double* __restrict dx, int n) {
    double dyx = dot(dy, x, n);
    double coeff = dyx * inv * inv * inv / n;
    for (int i = 0; i < n; ++i) dx[i] += dy[i] * inv - coeff * x[i];
}

}  // namespace roam::nn
