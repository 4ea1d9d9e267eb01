"""Pure-NumPy implementations of the hot kernels.

Mirrors the compiled `flagfit._native` extension.  Every function mutates
its output arrays in place so callers can reuse buffers across substeps.

Shared conventions:

* positions/velocities/forces are float64 arrays of shape (N, 3)
* triangle and edge indices are int32
* a hinge row is (x1, x2, x3, x4): x1/x2 opposite vertices of the two
  triangles sharing the edge, x3 -> x4 the shared edge
* the bending routine returns -1 on success or the index of the first
  hinge whose triangles degenerated (zero-area), so the caller can name
  the offender when raising
"""

import numpy as np

DEGENERACY_EPS = 1e-12

# Bending stiffness is sampled at 5 evenly spaced points of the
# dimensionless fold coordinate; kept in sync with params.ALPHA_SAMPLES.
_ALPHA_GRID = np.linspace(0.0, 1.0, 5)


def _scatter_add(forces, idx, vec):
    n = forces.shape[0]
    for c in range(3):
        forces[:, c] += np.bincount(idx, weights=vec[:, c], minlength=n)


def add_stretch_forces(forces, positions, edges, rest_lengths, k_s):
    """Linear springs along the mesh edges."""
    a = edges[:, 0]
    b = edges[:, 1]
    d = positions[b] - positions[a]
    length = np.sqrt(np.sum(d * d, axis=1))
    length = np.maximum(length, DEGENERACY_EPS)
    # force on a pulls toward b when the edge is stretched
    f = (k_s * (length - rest_lengths) / length)[:, None] * d
    _scatter_add(forces, a, f)
    _scatter_add(forces, b, -f)


def add_bending_forces(forces, positions, hinges, hinge_dir,
                       hinge_rest_sum_n, bend_table):
    """Hinge bending forces over every interior edge.

    The per-hinge force on vertex i is  k * sin(phi/2) * |E|^2 * u_i /
    (|N1| + |N2|)  where phi is the dihedral angle, E the shared edge,
    N1/N2 the (non-unit) triangle normals and u_i the bending-mode
    vectors; the sign of sin(phi/2) follows the fold direction so the
    force always restores the flat rest state.  The stiffness k is a
    piecewise-linear function of the normalized fold amplitude
    alpha = |sin(phi/2)| * (|N1^0| + |N2^0|) / (|N1| + |N2|), looked up
    in the row of `bend_table` selected by the hinge's rest direction
    (0=warp, 1=weft, 2=bias).
    """
    x1 = positions[hinges[:, 0]]
    x2 = positions[hinges[:, 1]]
    x3 = positions[hinges[:, 2]]
    x4 = positions[hinges[:, 3]]

    n1 = np.cross(x1 - x3, x1 - x4)
    n2 = np.cross(x2 - x4, x2 - x3)
    e = x4 - x3

    l1 = np.sqrt(np.sum(n1 * n1, axis=1))
    l2 = np.sqrt(np.sum(n2 * n2, axis=1))
    le = np.sqrt(np.sum(e * e, axis=1))

    bad = (l1 < DEGENERACY_EPS) | (l2 < DEGENERACY_EPS) | (le < DEGENERACY_EPS)
    if np.any(bad):
        return int(np.argmax(bad))

    inv_l1 = 1.0 / l1
    inv_l2 = 1.0 / l2
    nh1 = n1 * inv_l1[:, None]
    nh2 = n2 * inv_l2[:, None]
    eh = e / le[:, None]

    cos_phi = np.clip(np.sum(nh1 * nh2, axis=1), -1.0, 1.0)
    folded = np.sum(np.cross(nh1, nh2) * eh, axis=1)
    # sin(phi/2) via the half-angle quotient sin(phi) / (2 cos(phi/2)):
    # on an exactly planar sheet the normal cross product cancels exactly,
    # so the bending force is identically zero there, which the direct
    # sqrt(0.5 (1 - cos)) form cannot guarantee (it amplifies rounding in
    # cos_phi to ~1e-8).  Near phi = pi the quotient loses precision, so
    # the sqrt form takes over; the clamp keeps unselected lanes finite.
    cos_half = np.sqrt(0.5 * (1.0 + cos_phi))
    quotient = folded / (2.0 * np.maximum(cos_half, 0.25))
    sign = np.where(folded >= 0.0, 1.0, -1.0)
    s = np.where(
        cos_phi > -0.5,
        quotient,
        sign * np.sqrt(np.maximum(0.0, 0.5 * (1.0 - cos_phi))),
    )

    sum_n = l1 + l2
    alpha = np.abs(s) * hinge_rest_sum_n / sum_n
    k = np.empty_like(alpha)
    for d in range(bend_table.shape[0]):
        mask = hinge_dir == d
        if np.any(mask):
            k[mask] = np.interp(alpha[mask], _ALPHA_GRID, bend_table[d])

    scale = k * s * le * le / sum_n

    inv_l1sq = inv_l1 * inv_l1
    inv_l2sq = inv_l2 * inv_l2
    d13 = np.sum((x1 - x3) * eh, axis=1)
    d14 = np.sum((x1 - x4) * eh, axis=1)
    d23 = np.sum((x2 - x3) * eh, axis=1)
    d24 = np.sum((x2 - x4) * eh, axis=1)

    u1 = (le * inv_l1sq)[:, None] * n1
    u2 = (le * inv_l2sq)[:, None] * n2
    u3 = (d14 * inv_l1sq)[:, None] * n1 + (d24 * inv_l2sq)[:, None] * n2
    u4 = -(d13 * inv_l1sq)[:, None] * n1 - (d23 * inv_l2sq)[:, None] * n2

    sc = scale[:, None]
    _scatter_add(forces, hinges[:, 0], sc * u1)
    _scatter_add(forces, hinges[:, 1], sc * u2)
    _scatter_add(forces, hinges[:, 2], sc * u3)
    _scatter_add(forces, hinges[:, 3], sc * u4)
    return -1


def add_external_forces(forces, velocities, masses, gravity, wind, gamma):
    """Gravity plus Stokes drag toward the wind velocity."""
    forces += masses[:, None] * gravity[None, :]
    forces += gamma * (wind[None, :] - velocities)


def integrate(positions, velocities, masses, pinned_mask,
              edges, rest_lengths, k_s,
              hinges, hinge_dir, hinge_rest_sum_n, bend_table,
              gravity, wind, gamma, damping, dt, n_substeps):
    """Advance the state by n_substeps symplectic Euler steps of size dt.

    Velocities are updated from forces first, then positions from the new
    velocities.  Pinned vertices keep zero velocity so their positions
    stay exactly constant.  Returns -1, or the offending hinge index if a
    triangle degenerated mid-integration.
    """
    forces = np.empty_like(positions)
    pinned = pinned_mask.astype(bool)
    free = ~pinned
    inv_m = 1.0 / masses
    for _ in range(n_substeps):
        forces[:] = 0.0
        add_stretch_forces(forces, positions, edges, rest_lengths, k_s)
        rc = add_bending_forces(forces, positions, hinges, hinge_dir,
                                hinge_rest_sum_n, bend_table)
        if rc >= 0:
            return rc
        add_external_forces(forces, velocities, masses, gravity, wind, gamma)
        acc = forces * inv_m[:, None] - damping * velocities
        velocities += dt * acc
        velocities[pinned] = 0.0
        positions[free] += dt * velocities[free]
    return -1


def rasterize(image, zinv_buffer, xy, zinv, triangles, shades, valid):
    """Z-buffered scan conversion of shaded triangles.

    `xy` holds pixel-space vertex coordinates, `zinv` the per-vertex
    inverse view depth (affine-interpolated across each triangle; exact
    for the planar faces drawn here).  A pixel is covered when its center
    lies inside the triangle; depth ties keep the earlier triangle.
    """
    h, w = image.shape
    for t in range(triangles.shape[0]):
        if not valid[t]:
            continue
        i0, i1, i2 = triangles[t]
        x0, y0 = xy[i0]
        x1, y1 = xy[i1]
        x2, y2 = xy[i2]
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if abs(area2) < DEGENERACY_EPS:
            continue
        cmin = max(0, int(np.floor(min(x0, x1, x2) - 0.5)))
        cmax = min(w - 1, int(np.ceil(max(x0, x1, x2) - 0.5)))
        rmin = max(0, int(np.floor(min(y0, y1, y2) - 0.5)))
        rmax = min(h - 1, int(np.ceil(max(y0, y1, y2) - 0.5)))
        if cmin > cmax or rmin > rmax:
            continue
        px = np.arange(cmin, cmax + 1) + 0.5
        py = (np.arange(rmin, rmax + 1) + 0.5)[:, None]
        w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        if area2 > 0.0:
            inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        else:
            inside = (w0 <= 0.0) & (w1 <= 0.0) & (w2 <= 0.0)
        zpix = (w0 * zinv[i0] + w1 * zinv[i1] + w2 * zinv[i2]) / area2
        zslice = zinv_buffer[rmin:rmax + 1, cmin:cmax + 1]
        update = inside & (zpix > zslice)
        zslice[update] = zpix[update]
        image[rmin:rmax + 1, cmin:cmax + 1][update] = shades[t]
