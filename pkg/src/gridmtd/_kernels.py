"""Hot loops for T-SNE and DBSCAN, in a numba flavour and a numpy flavour.

The public names at the bottom point at whichever flavour ``_accel`` selected.
Both flavours implement the same maths; results agree to rounding.
"""

from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, njit

PERPLEXITY_TOL = 1e-4
PERPLEXITY_MAX_STEPS = 200


def sq_distances(x: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance matrix with an exact zero diagonal."""
    x = np.ascontiguousarray(x, dtype=float)
    norms = np.einsum("ij,ij->i", x, x)
    d = norms[:, None] + norms[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


# ----------------------------------------------------------- numba versions


def _calibrate_rows_loop(d2, perplexity, tol, max_steps):
    n = d2.shape[0]
    p = np.zeros((n, n))
    achieved = np.zeros(n)
    log_u = np.log(perplexity)
    row = np.empty(n)
    for i in range(n):
        dmin = np.inf
        for j in range(n):
            if j != i and d2[i, j] < dmin:
                dmin = d2[i, j]
        beta = 1.0
        lo = -np.inf
        hi = np.inf
        h = 0.0
        for _ in range(max_steps):
            s = 0.0
            sd = 0.0
            for j in range(n):
                if j == i:
                    row[j] = 0.0
                else:
                    dj = d2[i, j] - dmin
                    e = np.exp(-beta * dj)
                    row[j] = e
                    s += e
                    sd += e * dj
            h = np.log(s) + beta * sd / s
            if abs(np.exp(h) - perplexity) < tol:
                break
            if h > log_u:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = beta * 0.5 if lo == -np.inf else 0.5 * (beta + lo)
        for j in range(n):
            p[i, j] = row[j] / s
        achieved[i] = np.exp(h)
    return p, achieved


def _tsne_gradient_loop(y, p, exaggeration, grad):
    n = y.shape[0]
    num = np.empty(n * (n - 1) // 2)
    z = 0.0
    k = 0
    for i in range(n):
        yi0 = y[i, 0]
        yi1 = y[i, 1]
        for j in range(i + 1, n):
            dx = yi0 - y[j, 0]
            dy = yi1 - y[j, 1]
            q = 1.0 / (1.0 + dx * dx + dy * dy)
            num[k] = q
            z += 2.0 * q
            k += 1
    for i in range(n):
        grad[i, 0] = 0.0
        grad[i, 1] = 0.0
    plogq = 0.0
    psum = 0.0
    k = 0
    for i in range(n):
        gx = 0.0
        gy = 0.0
        yi0 = y[i, 0]
        yi1 = y[i, 1]
        for j in range(i + 1, n):
            q = num[k]
            k += 1
            pij = p[i, j]
            plogq += pij * np.log(q)
            psum += pij
            f = (exaggeration * pij - q / z) * q
            dx = yi0 - y[j, 0]
            dy = yi1 - y[j, 1]
            gx += f * dx
            gy += f * dy
            grad[j, 0] -= f * dx
            grad[j, 1] -= f * dy
        grad[i, 0] += gx
        grad[i, 1] += gy
    for i in range(n):
        grad[i, 0] *= 4.0
        grad[i, 1] *= 4.0
    # KL(P||Q) minus the constant sum p log p; P symmetric so double the half sums.
    return -2.0 * plogq + 2.0 * psum * np.log(z)


def _eps_graph_loop(points, eps):
    n = points.shape[0]
    eps2 = eps * eps
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for j in range(n):
            s = 0.0
            for d in range(points.shape[1]):
                t = points[i, d] - points[j, d]
                s += t * t
            if s <= eps2:
                counts[i] += 1
    indptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        indptr[i + 1] = indptr[i] + counts[i]
    indices = np.empty(indptr[n], dtype=np.int64)
    for i in range(n):
        k = indptr[i]
        for j in range(n):
            s = 0.0
            for d in range(points.shape[1]):
                t = points[i, d] - points[j, d]
                s += t * t
            if s <= eps2:
                indices[k] = j
                k += 1
    return indptr, indices


# Barnes-Hut quadtree.  Nodes live in flat arrays so the same code runs under
# numba and as plain Python: ``leaf`` holds the point index of a leaf, -1 for an
# empty node and -2 for an internal node.
_MAX_DEPTH = 48


def _quadtree_loop(y, capacity):
    n = y.shape[0]
    child = -np.ones((capacity, 4), dtype=np.int64)
    leaf = -np.ones(capacity, dtype=np.int64)
    mass = np.zeros(capacity)
    com = np.zeros((capacity, 2))
    cell = np.zeros((capacity, 3))  # centre x, centre y, half width
    depth = np.zeros(capacity, dtype=np.int64)
    lo0 = y[:, 0].min()
    hi0 = y[:, 0].max()
    lo1 = y[:, 1].min()
    hi1 = y[:, 1].max()
    cell[0, 0] = 0.5 * (lo0 + hi0)
    cell[0, 1] = 0.5 * (lo1 + hi1)
    cell[0, 2] = 0.5 * max(hi0 - lo0, hi1 - lo1) * (1.0 + 1e-9) + 1e-12
    used = 1
    for i in range(n):
        node = 0
        while True:
            m = mass[node]
            com[node, 0] = (com[node, 0] * m + y[i, 0]) / (m + 1.0)
            com[node, 1] = (com[node, 1] * m + y[i, 1]) / (m + 1.0)
            mass[node] = m + 1.0
            if leaf[node] == -1 and m == 0.0:
                leaf[node] = i
                break
            if leaf[node] >= 0:
                if depth[node] >= _MAX_DEPTH:
                    break  # coincident points share one leaf
                j = leaf[node]
                leaf[node] = -2
                q = (y[j, 0] > cell[node, 0]) + 2 * (y[j, 1] > cell[node, 1])
                if used == capacity:
                    return child, leaf, mass, com, cell, -1
                c = used
                used += 1
                h = 0.5 * cell[node, 2]
                cell[c, 0] = cell[node, 0] + (h if q & 1 else -h)
                cell[c, 1] = cell[node, 1] + (h if q & 2 else -h)
                cell[c, 2] = h
                depth[c] = depth[node] + 1
                leaf[c] = j
                mass[c] = m
                com[c, 0] = y[j, 0]
                com[c, 1] = y[j, 1]
                child[node, q] = c
            q = (y[i, 0] > cell[node, 0]) + 2 * (y[i, 1] > cell[node, 1])
            c = child[node, q]
            if c == -1:
                if used == capacity:
                    return child, leaf, mass, com, cell, -1
                c = used
                used += 1
                h = 0.5 * cell[node, 2]
                cell[c, 0] = cell[node, 0] + (h if q & 1 else -h)
                cell[c, 1] = cell[node, 1] + (h if q & 2 else -h)
                cell[c, 2] = h
                depth[c] = depth[node] + 1
                child[node, q] = c
            node = c
    return child, leaf, mass, com, cell, used


def _bh_gradient_loop(y, indptr, indices, pvals, exaggeration, theta, child, leaf, mass, com, cell, grad):
    n = y.shape[0]
    stack = np.empty(4 * _MAX_DEPTH + 8, dtype=np.int64)
    z = 0.0
    theta2 = theta * theta
    for i in range(n):
        rx = 0.0
        ry = 0.0
        top = 0
        stack[0] = 0
        top = 1
        while top:
            top -= 1
            node = stack[top]
            m = mass[node]
            if m == 0.0:
                continue
            dx = y[i, 0] - com[node, 0]
            dy = y[i, 1] - com[node, 1]
            d2 = dx * dx + dy * dy
            width = 2.0 * cell[node, 2]
            if leaf[node] >= 0 or width * width < theta2 * d2:
                if leaf[node] == i or (leaf[node] >= 0 and d2 == 0.0):
                    m -= 1.0  # drop the point itself (and nothing else when coincident)
                    if m <= 0.0:
                        continue
                q = 1.0 / (1.0 + d2)
                z += m * q
                rx += m * q * q * dx
                ry += m * q * q * dy
            else:
                for k in range(4):
                    if child[node, k] >= 0:
                        stack[top] = child[node, k]
                        top += 1
        grad[i, 0] = rx
        grad[i, 1] = ry
    cost = 0.0
    psum = 0.0
    for i in range(n):
        ax = 0.0
        ay = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            dx = y[i, 0] - y[j, 0]
            dy = y[i, 1] - y[j, 1]
            d2 = dx * dx + dy * dy
            f = pvals[k] / (1.0 + d2)
            ax += f * dx
            ay += f * dy
            cost += pvals[k] * np.log1p(d2)
            psum += pvals[k]
        grad[i, 0] = 4.0 * (exaggeration * ax - grad[i, 0] / z)
        grad[i, 1] = 4.0 * (exaggeration * ay - grad[i, 1] / z)
    return cost + psum * np.log(z)


# ----------------------------------------------------------- numpy versions


def _calibrate_rows_numpy(d2, perplexity, tol, max_steps):
    n = d2.shape[0]
    off = ~np.eye(n, dtype=bool)
    dmin = np.where(off, d2, np.inf).min(axis=1)
    shifted = np.where(off, d2 - dmin[:, None], 0.0)
    beta = np.ones(n)
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    log_u = np.log(perplexity)
    active = np.ones(n, dtype=bool)
    e = np.zeros((n, n))
    s = np.ones(n)
    h = np.zeros(n)
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ea = np.exp(-beta[idx, None] * shifted[idx]) * off[idx]
        sa = ea.sum(axis=1)
        ha = np.log(sa) + beta[idx] * (ea * shifted[idx]).sum(axis=1) / sa
        e[idx], s[idx], h[idx] = ea, sa, ha
        done = np.abs(np.exp(ha) - perplexity) < tol
        up = (ha > log_u) & ~done
        down = ~up & ~done
        b = beta[idx]
        lo_i, hi_i = lo[idx], hi[idx]
        lo_i = np.where(up, b, lo_i)
        hi_i = np.where(down, b, hi_i)
        new_up = np.where(np.isinf(hi_i), b * 2.0, 0.5 * (b + hi_i))
        new_down = np.where(np.isinf(lo_i), b * 0.5, 0.5 * (b + lo_i))
        beta[idx] = np.where(up, new_up, np.where(down, new_down, b))
        lo[idx], hi[idx] = lo_i, hi_i
        active[idx[done]] = False
    return e / s[:, None], np.exp(h)


def _tsne_gradient_numpy(y, p, exaggeration, grad):
    d = sq_distances(y)
    num = 1.0 / (1.0 + d)
    np.fill_diagonal(num, 0.0)
    z = num.sum()
    pq = (exaggeration * p - num / z) * num
    grad[:] = 4.0 * (pq.sum(axis=1)[:, None] * y - pq @ y)
    iu = np.triu_indices(y.shape[0], 1)
    return float(-2.0 * np.sum(p[iu] * np.log(num[iu])) + p[iu].sum() * 2.0 * np.log(z))


def _eps_graph_numpy(points, eps):
    adj = sq_distances(points) <= eps * eps
    counts = adj.sum(axis=1)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    indices = np.nonzero(adj)[1].astype(np.int64)
    return indptr, indices


if HAVE_NUMBA:
    calibrate_rows = njit(_calibrate_rows_loop)
    tsne_gradient = njit(_tsne_gradient_loop)
    eps_graph = njit(_eps_graph_loop)
    quadtree = njit(_quadtree_loop)
    bh_gradient = njit(_bh_gradient_loop)
else:
    calibrate_rows = _calibrate_rows_numpy
    tsne_gradient = _tsne_gradient_numpy
    eps_graph = _eps_graph_numpy
    # Tree walks do not vectorise; without numba the loop versions run as plain Python.
    quadtree = _quadtree_loop
    bh_gradient = _bh_gradient_loop

NUMPY_KERNELS = {
    "calibrate_rows": _calibrate_rows_numpy,
    "tsne_gradient": _tsne_gradient_numpy,
    "eps_graph": _eps_graph_numpy,
}
