"""t-distributed stochastic neighbour embedding into two dimensions.

The exact method computes all pairwise affinities and forces.  The Barnes-Hut
method keeps only the ``3 * perplexity`` nearest neighbours of each point and
approximates the repulsive forces with a quadtree, so each iteration costs
O(N log N) rather than O(N^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .. import _kernels

MIN_GAIN = 0.01


@dataclass(frozen=True)
class TsneParams:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    init_scale: float = 1e-4
    method: str = "exact"  # or "barnes_hut"
    theta: float = 0.5


@dataclass(frozen=True)
class Embedding:
    points: np.ndarray
    kl_trace: np.ndarray
    row_perplexity: np.ndarray


def joint_probabilities(data: np.ndarray, perplexity: float) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrised affinities ``(p_j|i + p_i|j) / 2N`` and each row's achieved perplexity."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError("data must be an N x m matrix with m >= 1")
    n = x.shape[0]
    if perplexity <= 0 or n < 3 * perplexity:
        raise ValueError(f"perplexity {perplexity} infeasible for {n} points (need N >= 3*perplexity)")
    d2 = _kernels.sq_distances(x)
    off_max = d2.max(axis=1)
    bad = np.flatnonzero(off_max == 0.0)
    if bad.size:
        raise ValueError(f"row {bad[0]} coincides with every other row; cannot calibrate its bandwidth")
    cond, achieved = _kernels.calibrate_rows(
        d2, float(perplexity), _kernels.PERPLEXITY_TOL, _kernels.PERPLEXITY_MAX_STEPS
    )
    p = (cond + cond.T) / (2.0 * n)
    np.maximum(p, 1e-12, out=p)
    np.fill_diagonal(p, 0.0)
    return p, achieved


def _calibrate_neighbours(d2: np.ndarray, perplexity: float) -> tuple[np.ndarray, np.ndarray]:
    """Bisect per-row precisions over a fixed set of neighbour distances (rows of ``d2``)."""
    shifted = d2 - d2.min(axis=1, keepdims=True)
    n = d2.shape[0]
    beta = np.ones(n)
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    log_u = np.log(perplexity)
    for _ in range(_kernels.PERPLEXITY_MAX_STEPS):
        e = np.exp(-beta[:, None] * shifted)
        s = e.sum(axis=1)
        h = np.log(s) + beta * (e * shifted).sum(axis=1) / s
        if np.all(np.abs(np.exp(h) - perplexity) < _kernels.PERPLEXITY_TOL):
            break
        up = h > log_u
        lo = np.where(up, beta, lo)
        hi = np.where(up, hi, beta)
        beta = np.where(
            up,
            np.where(np.isinf(hi), beta * 2.0, 0.5 * (beta + hi)),
            np.where(np.isinf(lo), beta * 0.5, 0.5 * (beta + lo)),
        )
    return e / s[:, None], np.exp(h)


def sparse_joint_probabilities(data: np.ndarray, perplexity: float) -> tuple[sparse.csr_matrix, np.ndarray]:
    """Affinities restricted to each point's ``3 * perplexity`` nearest neighbours, symmetrised."""
    x = np.asarray(data, dtype=float)
    n = x.shape[0]
    if perplexity <= 0 or n < 3 * perplexity:
        raise ValueError(f"perplexity {perplexity} infeasible for {n} points (need N >= 3*perplexity)")
    k = min(n - 1, int(3 * perplexity))
    dist, idx = cKDTree(x).query(x, k=k + 1)
    # Drop each point's own entry; with duplicates it need not come first.
    self_hit = idx == np.arange(n)[:, None]
    self_hit[~self_hit.any(axis=1), -1] = True
    keep = ~self_hit
    dist = dist[keep].reshape(n, k)
    idx = idx[keep].reshape(n, k)
    cond, achieved = _calibrate_neighbours(dist**2, perplexity)
    rows = np.repeat(np.arange(n), k)
    c = sparse.csr_matrix((cond.ravel(), (rows, idx.ravel())), shape=(n, n))
    p = ((c + c.T) / (2.0 * n)).tocsr()
    p.sort_indices()
    return p, achieved


def _embed_barnes_hut(data, perplexity, iterations, learning_rate, rng, base):
    p, achieved = sparse_joint_probabilities(data, perplexity)
    n = p.shape[0]
    indptr = p.indptr.astype(np.int64)
    indices = p.indices.astype(np.int64)
    pvals = p.data.astype(float)
    entropy_const = float(np.sum(pvals * np.log(pvals)))

    def gradient(y, exag, grad):
        capacity = 8 * n + 64
        while True:
            child, leaf, mass, com, cell, used = _kernels.quadtree(y, capacity)
            if used >= 0:
                break
            capacity *= 2
        return _kernels.bh_gradient(
            y, indptr, indices, pvals, exag, base.theta, child, leaf, mass, com, cell, grad
        )

    return _descend(n, gradient, entropy_const, iterations, learning_rate, rng, base), achieved


def _descend(n, gradient, entropy_const, iterations, learning_rate, rng, base):
    y = rng.normal(0.0, base.init_scale, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    grad = np.zeros_like(y)
    trace = np.empty(iterations + 1)
    for it in range(iterations):
        exag = base.exaggeration if it < base.exaggeration_iters else 1.0
        mom = base.momentum if it < base.momentum_switch else base.final_momentum
        trace[it] = entropy_const + gradient(y, exag, grad)
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, MIN_GAIN, out=gains)
        update = mom * update - learning_rate * gains * grad
        y = y + update
        y -= y.mean(axis=0)
    trace[iterations] = entropy_const + gradient(y, 1.0, grad)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(trace))):
        raise FloatingPointError("t-SNE diverged; lower the learning rate")
    return y, trace


def tsne_embed(
    data: np.ndarray,
    perplexity: float = 30.0,
    iterations: int = 1000,
    learning_rate: float = 200.0,
    rng: np.random.Generator | None = None,
    params: TsneParams | None = None,
) -> Embedding:
    """Embed rows of ``data`` in 2-D by gradient descent on KL(P || Q).

    ``params`` supplies the remaining schedule knobs (exaggeration, momentum);
    the explicit arguments override its perplexity, iteration count and step.
    """
    base = params or TsneParams()
    rng = rng if rng is not None else np.random.default_rng()
    if base.method == "barnes_hut":
        (y, trace), achieved = _embed_barnes_hut(data, perplexity, iterations, learning_rate, rng, base)
        return Embedding(y, trace, achieved)
    if base.method != "exact":
        raise ValueError(f"unknown t-SNE method {base.method!r}")
    p, achieved = joint_probabilities(data, perplexity)
    n = p.shape[0]
    iu = np.triu_indices(n, 1)
    entropy_const = 2.0 * float(np.sum(p[iu] * np.log(p[iu])))

    def gradient(y, exag, grad):
        return _kernels.tsne_gradient(y, p, exag, grad)

    y, trace = _descend(n, gradient, entropy_const, iterations, learning_rate, rng, base)
    return Embedding(y, trace, achieved)
