# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Mirror of flagfit._fallback — same signatures, same math, scalar loops.
See that module for the shared conventions (array shapes, hinge layout,
degeneracy reporting).
"""

import numpy as np

cimport cython
from libc.math cimport sqrt, fabs, floor, ceil

cdef double DEGEN = 1e-12


cdef inline double _interp_stiffness(double alpha, const double[:, ::1] table,
                                     int row) nogil:
    # piecewise-linear over 5 samples at alpha = 0, .25, .5, .75, 1
    cdef double t
    cdef int i
    if alpha <= 0.0:
        return table[row, 0]
    if alpha >= 1.0:
        return table[row, 4]
    t = alpha * 4.0
    i = <int> t
    t -= i
    return table[row, i] * (1.0 - t) + table[row, i + 1] * t


def add_stretch_forces(double[:, ::1] forces, const double[:, ::1] positions,
                       const int[:, ::1] edges, const double[::1] rest_lengths,
                       double k_s):
    cdef Py_ssize_t e, a, b
    cdef double dx, dy, dz, length, f
    for e in range(edges.shape[0]):
        a = edges[e, 0]
        b = edges[e, 1]
        dx = positions[b, 0] - positions[a, 0]
        dy = positions[b, 1] - positions[a, 1]
        dz = positions[b, 2] - positions[a, 2]
        length = sqrt(dx * dx + dy * dy + dz * dz)
        if length < DEGEN:
            length = DEGEN
        f = k_s * (length - rest_lengths[e]) / length
        forces[a, 0] += f * dx
        forces[a, 1] += f * dy
        forces[a, 2] += f * dz
        forces[b, 0] -= f * dx
        forces[b, 1] -= f * dy
        forces[b, 2] -= f * dz


def add_bending_forces(double[:, ::1] forces, const double[:, ::1] positions,
                       const int[:, ::1] hinges, const int[::1] hinge_dir,
                       const double[::1] hinge_rest_sum_n,
                       const double[:, ::1] bend_table):
    return _bend_loop(forces, positions, hinges, hinge_dir,
                      hinge_rest_sum_n, bend_table)


cdef int _bend_loop(double[:, ::1] forces, const double[:, ::1] positions,
                    const int[:, ::1] hinges, const int[::1] hinge_dir,
                    const double[::1] hinge_rest_sum_n,
                    const double[:, ::1] bend_table) nogil:
    cdef Py_ssize_t h
    cdef Py_ssize_t i1, i2, i3, i4
    cdef double a0, a1, a2, b0, b1, b2
    cdef double n10, n11, n12, n20, n21, n22
    cdef double e0, e1, e2
    cdef double l1, l2, le, inv_l1, inv_l2
    cdef double nh10, nh11, nh12, nh20, nh21, nh22
    cdef double eh0, eh1, eh2
    cdef double cos_phi, cx, cy, cz, folded, s, sum_n, alpha, k, scale
    cdef double inv_l1sq, inv_l2sq, d13, d14, d23, d24
    cdef double c1, c2, w1, w2

    for h in range(hinges.shape[0]):
        i1 = hinges[h, 0]
        i2 = hinges[h, 1]
        i3 = hinges[h, 2]
        i4 = hinges[h, 3]

        # N1 = (x1-x3) x (x1-x4),  N2 = (x2-x4) x (x2-x3)
        a0 = positions[i1, 0] - positions[i3, 0]
        a1 = positions[i1, 1] - positions[i3, 1]
        a2 = positions[i1, 2] - positions[i3, 2]
        b0 = positions[i1, 0] - positions[i4, 0]
        b1 = positions[i1, 1] - positions[i4, 1]
        b2 = positions[i1, 2] - positions[i4, 2]
        n10 = a1 * b2 - a2 * b1
        n11 = a2 * b0 - a0 * b2
        n12 = a0 * b1 - a1 * b0

        a0 = positions[i2, 0] - positions[i4, 0]
        a1 = positions[i2, 1] - positions[i4, 1]
        a2 = positions[i2, 2] - positions[i4, 2]
        b0 = positions[i2, 0] - positions[i3, 0]
        b1 = positions[i2, 1] - positions[i3, 1]
        b2 = positions[i2, 2] - positions[i3, 2]
        n20 = a1 * b2 - a2 * b1
        n21 = a2 * b0 - a0 * b2
        n22 = a0 * b1 - a1 * b0

        e0 = positions[i4, 0] - positions[i3, 0]
        e1 = positions[i4, 1] - positions[i3, 1]
        e2 = positions[i4, 2] - positions[i3, 2]

        l1 = sqrt(n10 * n10 + n11 * n11 + n12 * n12)
        l2 = sqrt(n20 * n20 + n21 * n21 + n22 * n22)
        le = sqrt(e0 * e0 + e1 * e1 + e2 * e2)
        if l1 < DEGEN or l2 < DEGEN or le < DEGEN:
            return <int> h

        inv_l1 = 1.0 / l1
        inv_l2 = 1.0 / l2
        nh10 = n10 * inv_l1
        nh11 = n11 * inv_l1
        nh12 = n12 * inv_l1
        nh20 = n20 * inv_l2
        nh21 = n21 * inv_l2
        nh22 = n22 * inv_l2
        eh0 = e0 / le
        eh1 = e1 / le
        eh2 = e2 / le

        cos_phi = nh10 * nh20 + nh11 * nh21 + nh12 * nh22
        if cos_phi > 1.0:
            cos_phi = 1.0
        elif cos_phi < -1.0:
            cos_phi = -1.0
        cx = nh11 * nh22 - nh12 * nh21
        cy = nh12 * nh20 - nh10 * nh22
        cz = nh10 * nh21 - nh11 * nh20
        folded = cx * eh0 + cy * eh1 + cz * eh2
        # sin(phi/2) via the half-angle quotient (exact on planar sheets,
        # where the normal cross product cancels exactly); sqrt form near
        # phi = pi where the quotient loses precision
        if cos_phi > -0.5:
            s = folded / (2.0 * sqrt(0.5 * (1.0 + cos_phi)))
        else:
            s = 0.5 * (1.0 - cos_phi)
            if s < 0.0:
                s = 0.0
            s = sqrt(s)
            if folded < 0.0:
                s = -s

        sum_n = l1 + l2
        alpha = fabs(s) * hinge_rest_sum_n[h] / sum_n
        k = _interp_stiffness(alpha, bend_table, hinge_dir[h])
        scale = k * s * le * le / sum_n

        inv_l1sq = inv_l1 * inv_l1
        inv_l2sq = inv_l2 * inv_l2
        d13 = (positions[i1, 0] - positions[i3, 0]) * eh0 + \
              (positions[i1, 1] - positions[i3, 1]) * eh1 + \
              (positions[i1, 2] - positions[i3, 2]) * eh2
        d14 = (positions[i1, 0] - positions[i4, 0]) * eh0 + \
              (positions[i1, 1] - positions[i4, 1]) * eh1 + \
              (positions[i1, 2] - positions[i4, 2]) * eh2
        d23 = (positions[i2, 0] - positions[i3, 0]) * eh0 + \
              (positions[i2, 1] - positions[i3, 1]) * eh1 + \
              (positions[i2, 2] - positions[i3, 2]) * eh2
        d24 = (positions[i2, 0] - positions[i4, 0]) * eh0 + \
              (positions[i2, 1] - positions[i4, 1]) * eh1 + \
              (positions[i2, 2] - positions[i4, 2]) * eh2

        # u1 = le * N1 / l1^2 ; u2 = le * N2 / l2^2
        c1 = scale * le * inv_l1sq
        forces[i1, 0] += c1 * n10
        forces[i1, 1] += c1 * n11
        forces[i1, 2] += c1 * n12
        c2 = scale * le * inv_l2sq
        forces[i2, 0] += c2 * n20
        forces[i2, 1] += c2 * n21
        forces[i2, 2] += c2 * n22
        # u3 = d14 * N1 / l1^2 + d24 * N2 / l2^2 ; u4 symmetric with d13, d23
        w1 = scale * d14 * inv_l1sq
        w2 = scale * d24 * inv_l2sq
        forces[i3, 0] += w1 * n10 + w2 * n20
        forces[i3, 1] += w1 * n11 + w2 * n21
        forces[i3, 2] += w1 * n12 + w2 * n22
        w1 = scale * d13 * inv_l1sq
        w2 = scale * d23 * inv_l2sq
        forces[i4, 0] -= w1 * n10 + w2 * n20
        forces[i4, 1] -= w1 * n11 + w2 * n21
        forces[i4, 2] -= w1 * n12 + w2 * n22
    return -1


def add_external_forces(double[:, ::1] forces, const double[:, ::1] velocities,
                        const double[::1] masses, const double[::1] gravity,
                        const double[::1] wind, double gamma):
    cdef Py_ssize_t v, c
    for v in range(forces.shape[0]):
        for c in range(3):
            forces[v, c] += masses[v] * gravity[c] + \
                gamma * (wind[c] - velocities[v, c])


def integrate(double[:, ::1] positions, double[:, ::1] velocities,
              const double[::1] masses, const unsigned char[::1] pinned_mask,
              const int[:, ::1] edges, const double[::1] rest_lengths,
              double k_s,
              const int[:, ::1] hinges, const int[::1] hinge_dir,
              const double[::1] hinge_rest_sum_n,
              const double[:, ::1] bend_table,
              const double[::1] gravity, const double[::1] wind,
              double gamma, double damping, double dt, int n_substeps):
    cdef Py_ssize_t n = positions.shape[0]
    cdef double[:, ::1] forces = np.empty((n, 3), dtype=np.float64)
    cdef Py_ssize_t v, c
    cdef int sub, rc
    cdef double acc
    for sub in range(n_substeps):
        for v in range(n):
            forces[v, 0] = 0.0
            forces[v, 1] = 0.0
            forces[v, 2] = 0.0
        add_stretch_forces(forces, positions, edges, rest_lengths, k_s)
        rc = _bend_loop(forces, positions, hinges, hinge_dir,
                        hinge_rest_sum_n, bend_table)
        if rc >= 0:
            return rc
        for v in range(n):
            if pinned_mask[v]:
                velocities[v, 0] = 0.0
                velocities[v, 1] = 0.0
                velocities[v, 2] = 0.0
                continue
            for c in range(3):
                acc = (forces[v, c] + masses[v] * gravity[c] +
                       gamma * (wind[c] - velocities[v, c])) / masses[v] - \
                    damping * velocities[v, c]
                velocities[v, c] += dt * acc
                positions[v, c] += dt * velocities[v, c]
    return -1


def rasterize(double[:, ::1] image, double[:, ::1] zinv_buffer,
              const double[:, ::1] xy, const double[::1] zinv,
              const int[:, ::1] triangles, const double[::1] shades,
              const unsigned char[::1] valid):
    cdef Py_ssize_t h = image.shape[0]
    cdef Py_ssize_t w = image.shape[1]
    cdef Py_ssize_t t, r, cpx
    cdef Py_ssize_t i0, i1, i2
    cdef double x0, y0, x1, y1, x2, y2, area2, inv_area2
    cdef double lo, hi, px, py, w0, w1, w2, zpix
    cdef Py_ssize_t cmin, cmax, rmin, rmax
    cdef bint inside
    for t in range(triangles.shape[0]):
        if not valid[t]:
            continue
        i0 = triangles[t, 0]
        i1 = triangles[t, 1]
        i2 = triangles[t, 2]
        x0 = xy[i0, 0]
        y0 = xy[i0, 1]
        x1 = xy[i1, 0]
        y1 = xy[i1, 1]
        x2 = xy[i2, 0]
        y2 = xy[i2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if fabs(area2) < DEGEN:
            continue
        inv_area2 = 1.0 / area2

        lo = x0
        if x1 < lo:
            lo = x1
        if x2 < lo:
            lo = x2
        hi = x0
        if x1 > hi:
            hi = x1
        if x2 > hi:
            hi = x2
        cmin = <Py_ssize_t> floor(lo - 0.5)
        cmax = <Py_ssize_t> ceil(hi - 0.5)
        if cmin < 0:
            cmin = 0
        if cmax > w - 1:
            cmax = w - 1

        lo = y0
        if y1 < lo:
            lo = y1
        if y2 < lo:
            lo = y2
        hi = y0
        if y1 > hi:
            hi = y1
        if y2 > hi:
            hi = y2
        rmin = <Py_ssize_t> floor(lo - 0.5)
        rmax = <Py_ssize_t> ceil(hi - 0.5)
        if rmin < 0:
            rmin = 0
        if rmax > h - 1:
            rmax = h - 1

        for r in range(rmin, rmax + 1):
            py = r + 0.5
            for cpx in range(cmin, cmax + 1):
                px = cpx + 0.5
                w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                if area2 > 0.0:
                    inside = w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0
                else:
                    inside = w0 <= 0.0 and w1 <= 0.0 and w2 <= 0.0
                if not inside:
                    continue
                zpix = (w0 * zinv[i0] + w1 * zinv[i1] + w2 * zinv[i2]) * \
                    inv_area2
                if zpix > zinv_buffer[r, cpx]:
                    zinv_buffer[r, cpx] = zpix
                    image[r, cpx] = shades[t]
