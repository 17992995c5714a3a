// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <span>

#include "streetgs/geometry.hpp"

// Real spherical harmonics up to degree 3, in the sign convention used by the
// reference 3DGS implementation (Condon-Shortley phase included).

namespace streetgs::sh {

inline constexpr int kMaxDegree = 3;
inline constexpr int kMaxCoeffs = 16;

inline constexpr double C0 = 0.28209479177387814;
inline constexpr double C1 = 0.4886025119029199;
inline constexpr std::array<double, 5> C2 = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                             -1.0925484305920792, 0.5462742152960396};
inline constexpr std::array<double, 7> C3 = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                                             0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                             -0.5900435899266435};

constexpr int coeff_count(int degree) noexcept { return (degree + 1) * (degree + 1); }

/// Basis values at direction d (not required to be normalized for the polynomial itself).
inline void basis(int degree, const Vec3& d, std::span<double, kMaxCoeffs> out) {
    const double x = d.x(), y = d.y(), z = d.z();
    out[0] = C0;
    if (degree < 1) return;
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, yz = y * z, xz = x * z;
    out[4] = C2[0] * xy;
    out[5] = C2[1] * yz;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * xz;
    out[8] = C2[4] * (xx - yy);
    if (degree < 3) return;
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * xy * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

/// Partial derivatives of every basis polynomial with respect to x, y and z.
inline void basis_gradient(int degree, const Vec3& d, std::span<double, kMaxCoeffs> dx,
                           std::span<double, kMaxCoeffs> dy, std::span<double, kMaxCoeffs> dz) {
    std::fill(dx.begin(), dx.end(), 0.0);
    std::fill(dy.begin(), dy.end(), 0.0);
    std::fill(dz.begin(), dz.end(), 0.0);
    if (degree < 1) return;
    const double x = d.x(), y = d.y(), z = d.z();
    dy[1] = -C1;
    dz[2] = C1;
    dx[3] = -C1;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    dx[4] = C2[0] * y;
    dy[4] = C2[0] * x;
    dy[5] = C2[1] * z;
    dz[5] = C2[1] * y;
    dx[6] = -2.0 * C2[2] * x;
    dy[6] = -2.0 * C2[2] * y;
    dz[6] = 4.0 * C2[2] * z;
    dx[7] = C2[3] * z;
    dz[7] = C2[3] * x;
    dx[8] = 2.0 * C2[4] * x;
    dy[8] = -2.0 * C2[4] * y;
    if (degree < 3) return;
    dx[9] = C3[0] * 6.0 * x * y;
    dy[9] = C3[0] * (3.0 * xx - 3.0 * yy);
    dx[10] = C3[1] * y * z;
    dy[10] = C3[1] * x * z;
    dz[10] = C3[1] * x * y;
    dx[11] = C3[2] * (-2.0 * x * y);
    dy[11] = C3[2] * (4.0 * zz - xx - 3.0 * yy);
    dz[11] = C3[2] * 8.0 * y * z;
    dx[12] = C3[3] * (-6.0 * x * z);
    dy[12] = C3[3] * (-6.0 * y * z);
    dz[12] = C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy);
    dx[13] = C3[4] * (4.0 * zz - 3.0 * xx - yy);
    dy[13] = C3[4] * (-2.0 * x * y);
    dz[13] = C3[4] * 8.0 * x * z;
    dx[14] = C3[5] * 2.0 * x * z;
    dy[14] = -C3[5] * 2.0 * y * z;
    dz[14] = C3[5] * (xx - yy);
    dx[15] = C3[6] * (3.0 * xx - 3.0 * yy);
    dy[15] = C3[6] * (-6.0 * x * y);
}

/// Unclamped RGB: sum_k basis_k(d) * coeffs[k] + 0.5. `coeffs` is laid out [k][rgb].
template <typename T>
Vec3 eval_raw(std::span<const T> coeffs, int degree, const Vec3& dir) {
    std::array<double, kMaxCoeffs> b{};
    basis(degree, dir, b);
    Vec3 rgb(0.5, 0.5, 0.5);
    for (int k = 0; k < coeff_count(degree); ++k)
        for (int c = 0; c < 3; ++c) rgb[c] += b[k] * static_cast<double>(coeffs[3 * k + c]);
    return rgb;
}

/// View-dependent RGB clamped to [0, 1].
template <typename T>
Vec3 eval(std::span<const T> coeffs, int degree, const Vec3& dir) {
    Vec3 rgb = eval_raw(coeffs, degree, dir);
    for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(rgb[c], 0.0, 1.0);
    return rgb;
}

/// DC coefficient that makes the degree-0 color equal `color`.
constexpr double dc_from_color(double color) noexcept { return (color - 0.5) / C0; }

}  // namespace streetgs::sh
