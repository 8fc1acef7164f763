"""Compiled inner loops (hash-grid gather/scatter, nearest-neighbour grid, mesh parity)."""

import numba
import numpy as np

HASH_PRIMES = (1, 2654435761, 805459861)


@numba.njit(cache=True, inline="always")
def _level_corners(u0, u1, u2, r, mask, size, idx, wts, dw, with_dw):
    """Fill the 8 corner slots, trilinear weights and optionally d(weight)/d(u * r)."""
    x = u0 * r
    y = u1 * r
    z = u2 * r
    ix = min(int(x), r - 1)
    iy = min(int(y), r - 1)
    iz = min(int(z), r - 1)
    fx = x - ix
    fy = y - iy
    fz = z - iz
    # coordinates stay below 2**12, so int64 products never overflow before masking
    hx0 = ix & 0xFFFFFFFF
    hx1 = (ix + 1) & 0xFFFFFFFF
    hy0 = (iy * 2654435761) & 0xFFFFFFFF
    hy1 = ((iy + 1) * 2654435761) & 0xFFFFFFFF
    hz0 = (iz * 805459861) & 0xFFFFFFFF
    hz1 = ((iz + 1) * 805459861) & 0xFFFFFFFF
    for c in range(8):
        if c & 1:
            wx = fx
            sx = 1.0
            hx = hx1
        else:
            wx = 1.0 - fx
            sx = -1.0
            hx = hx0
        if c & 2:
            wy = fy
            sy = 1.0
            hy = hy1
        else:
            wy = 1.0 - fy
            sy = -1.0
            hy = hy0
        if c & 4:
            wz = fz
            sz = 1.0
            hz = hz1
        else:
            wz = 1.0 - fz
            sz = -1.0
            hz = hz0
        h = hx ^ hy ^ hz
        # power-of-two tables use a mask; the modulo is the general definition
        idx[c] = h & mask if mask >= 0 else h % size
        wts[c] = wx * wy * wz
        if with_dw:
            dw[c, 0] = sx * wy * wz
            dw[c, 1] = wx * sy * wz
            dw[c, 2] = wx * wy * sz


@numba.njit(cache=True, inline="always")
def _unit(v):
    return min(max((v + 1.0) * 0.5, 0.0), 1.0)


@numba.njit(cache=True)
def hash_forward(p, table, res, out):
    n = p.shape[0]
    n_levels, size, nf = table.shape
    mask = size - 1 if size & (size - 1) == 0 else -1
    idx = np.empty(8, dtype=np.int64)
    wts = np.empty(8)
    dw = np.empty((8, 3))
    acc = np.empty(nf)
    for k in range(n):
        u0 = _unit(p[k, 0])
        u1 = _unit(p[k, 1])
        u2 = _unit(p[k, 2])
        for lev in range(n_levels):
            _level_corners(u0, u1, u2, res[lev], mask, size, idx, wts, dw, False)
            if nf == 2:
                a0 = 0.0
                a1 = 0.0
                for c in range(8):
                    a0 += wts[c] * table[lev, idx[c], 0]
                    a1 += wts[c] * table[lev, idx[c], 1]
                out[k, 2 * lev] = a0
                out[k, 2 * lev + 1] = a1
                continue
            for f in range(nf):
                acc[f] = 0.0
            for c in range(8):
                h = idx[c]
                w = wts[c]
                for f in range(nf):
                    acc[f] += w * table[lev, h, f]
            for f in range(nf):
                out[k, lev * nf + f] = acc[f]


@numba.njit(cache=True)
def hash_backward_table(p, g, res, grad):
    n = p.shape[0]
    n_levels, size, nf = grad.shape
    mask = size - 1 if size & (size - 1) == 0 else -1
    idx = np.empty(8, dtype=np.int64)
    wts = np.empty(8)
    dw = np.empty((8, 3))
    for k in range(n):
        u0 = _unit(p[k, 0])
        u1 = _unit(p[k, 1])
        u2 = _unit(p[k, 2])
        for lev in range(n_levels):
            _level_corners(u0, u1, u2, res[lev], mask, size, idx, wts, dw, False)
            if nf == 2:
                g0 = g[k, 2 * lev]
                g1 = g[k, 2 * lev + 1]
                for c in range(8):
                    grad[lev, idx[c], 0] += wts[c] * g0
                    grad[lev, idx[c], 1] += wts[c] * g1
                continue
            for c in range(8):
                h = idx[c]
                w = wts[c]
                for f in range(nf):
                    grad[lev, h, f] += w * g[k, lev * nf + f]


@numba.njit(cache=True)
def hash_backward_points(p, table, res, g, grad_p):
    n = p.shape[0]
    n_levels, size, nf = table.shape
    mask = size - 1 if size & (size - 1) == 0 else -1
    idx = np.empty(8, dtype=np.int64)
    wts = np.empty(8)
    dw = np.empty((8, 3))
    for k in range(n):
        v0 = (p[k, 0] + 1.0) * 0.5
        v1 = (p[k, 1] + 1.0) * 0.5
        v2 = (p[k, 2] + 1.0) * 0.5
        u0 = min(max(v0, 0.0), 1.0)
        u1 = min(max(v1, 0.0), 1.0)
        u2 = min(max(v2, 0.0), 1.0)
        gx = 0.0
        gy = 0.0
        gz = 0.0
        for lev in range(n_levels):
            r = res[lev]
            _level_corners(u0, u1, u2, r, mask, size, idx, wts, dw, True)
            for c in range(8):
                h = idx[c]
                acc = 0.0
                for f in range(nf):
                    acc += g[k, lev * nf + f] * table[lev, h, f]
                # d(frac)/dp = res / 2 on each axis
                s = acc * r * 0.5
                gx += s * dw[c, 0]
                gy += s * dw[c, 1]
                gz += s * dw[c, 2]
        grad_p[k, 0] = gx if 0.0 < v0 < 1.0 else 0.0
        grad_p[k, 1] = gy if 0.0 < v1 < 1.0 else 0.0
        grad_p[k, 2] = gz if 0.0 < v2 < 1.0 else 0.0


# ---------------------------------------------------------------- NN search
@numba.njit(cache=True)
def grid_nearest(points, lo, cell, dims, order, starts, queries, out_dist):
    """Exact nearest neighbour of each query among ``points`` bucketed in a uniform grid.

    ``order``/``starts`` give the points of cell ``c`` as
    ``order[starts[c]:starts[c + 1]]`` with cells in x-major order.
    """
    nx, ny, nz = dims[0], dims[1], dims[2]
    for q in range(queries.shape[0]):
        qx, qy, qz = queries[q, 0], queries[q, 1], queries[q, 2]
        cx = min(max(int((qx - lo[0]) / cell), 0), nx - 1)
        cy = min(max(int((qy - lo[1]) / cell), 0), ny - 1)
        cz = min(max(int((qz - lo[2]) / cell), 0), nz - 1)
        best = np.inf
        ring = 0
        max_ring = max(nx, max(ny, nz))
        while ring <= max_ring:
            for i in range(cx - ring, cx + ring + 1):
                if i < 0 or i >= nx:
                    continue
                for j in range(cy - ring, cy + ring + 1):
                    if j < 0 or j >= ny:
                        continue
                    for k in range(cz - ring, cz + ring + 1):
                        if k < 0 or k >= nz:
                            continue
                        if max(abs(i - cx), max(abs(j - cy), abs(k - cz))) != ring:
                            continue
                        c = (i * ny + j) * nz + k
                        for s in range(starts[c], starts[c + 1]):
                            idx = order[s]
                            ddx = points[idx, 0] - qx
                            ddy = points[idx, 1] - qy
                            ddz = points[idx, 2] - qz
                            d2 = ddx * ddx + ddy * ddy + ddz * ddz
                            if d2 < best:
                                best = d2
            # every point outside the searched block lies at least ring*cell away
            reach = ring * cell
            if best < np.inf and best <= reach * reach:
                break
            ring += 1
        out_dist[q] = np.sqrt(best)


# ------------------------------------------------------------ mesh parity
@numba.njit(cache=True)
def mesh_crossings(verts, faces, ys, zs, counts, xs, fill):
    """Record x-coordinates where lines parallel to +x at (ys[j], zs[k]) cross triangles.

    With ``fill`` False the per-line crossing counts are accumulated into
    ``counts``. With ``fill`` True, ``counts`` must hold each line's start
    offset into ``xs`` and the crossings are written there.
    """
    ny = ys.shape[0]
    nz = zs.shape[0]
    y0 = ys[0]
    z0 = zs[0]
    dy = ys[1] - ys[0]
    dz = zs[1] - zs[0]
    cursor = np.zeros(ny * nz, dtype=np.int64)
    for t in range(faces.shape[0]):
        a = verts[faces[t, 0]]
        b = verts[faces[t, 1]]
        c = verts[faces[t, 2]]
        ymin = min(a[1], min(b[1], c[1]))
        ymax = max(a[1], max(b[1], c[1]))
        zmin = min(a[2], min(b[2], c[2]))
        zmax = max(a[2], max(b[2], c[2]))
        j0 = max(int(np.ceil((ymin - y0) / dy)), 0)
        j1 = min(int(np.floor((ymax - y0) / dy)), ny - 1)
        k0 = max(int(np.ceil((zmin - z0) / dz)), 0)
        k1 = min(int(np.floor((zmax - z0) / dz)), nz - 1)
        det = (b[1] - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (b[2] - a[2])
        if det == 0.0:
            continue
        for j in range(j0, j1 + 1):
            py = ys[j]
            for k in range(k0, k1 + 1):
                pz = zs[k]
                l1 = ((py - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (pz - a[2])) / det
                l2 = ((b[1] - a[1]) * (pz - a[2]) - (py - a[1]) * (b[2] - a[2])) / det
                l0 = 1.0 - l1 - l2
                if l0 < 0.0 or l1 < 0.0 or l2 < 0.0:
                    continue
                line = j * nz + k
                if fill:
                    xs[counts[line] + cursor[line]] = l0 * a[0] + l1 * b[0] + l2 * c[0]
                    cursor[line] += 1
                else:
                    counts[line] += 1
