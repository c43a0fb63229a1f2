"""FastICA with log-cosh contrast and deflationary orthogonalisation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

MAX_ITER = 500
TOL = 1e-6


class IcaConvergenceWarning(RuntimeWarning):
    pass


class WhiteningError(ValueError):
    pass


@dataclass(frozen=True)
class MixingMatrix:
    """Estimated ``observations ≈ mean + entries @ sources``."""

    entries: np.ndarray  # m x k
    mean: np.ndarray  # m
    whitening: np.ndarray  # k x m, maps centred observations to white scores
    unmixing: np.ndarray  # k x k orthogonal rotation of the white scores
    converged: bool
    iterations: tuple[int, ...]

    @property
    def component_count(self) -> int:
        return self.entries.shape[1]

    def sources(self, observations: np.ndarray) -> np.ndarray:
        xc = np.asarray(observations, dtype=float) - self.mean
        return xc @ self.whitening.T @ self.unmixing.T


def whiten(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centre ``x`` and project onto its top-k principal axes with unit variance.

    Returns (white scores T x k, whitening matrix k x m, dewhitening m x k).
    """
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    vals, vecs = vals[order], vecs[:, order]
    if vals[-1] <= max(vals[0], 1e-300) * 1e-12 or vals[-1] <= 0:
        raise WhiteningError(f"observations have rank below {k}; cannot whiten")
    scale = np.sqrt(vals)
    whitening = (vecs / scale).T
    dewhitening = vecs * scale
    return xc @ whitening.T, whitening, dewhitening


def fastica(
    observations: np.ndarray,
    components: int,
    rng: np.random.Generator | None = None,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
) -> MixingMatrix:
    x = np.asarray(observations, dtype=float)
    if x.ndim != 2:
        raise ValueError("observations must be a T x m matrix")
    t, m = x.shape
    k = int(components)
    if not 1 <= k <= m:
        raise ValueError(f"component count must lie in 1..{m}")
    if t < 10 * k:
        raise ValueError(f"need at least {10 * k} observations for {k} components, got {t}")
    rng = rng if rng is not None else np.random.default_rng()
    mean = x.mean(axis=0)
    xw, whitening, dewhitening = whiten(x, k)

    w_rows = np.zeros((k, k))
    iterations = []
    converged = True
    for p in range(k):
        w = rng.normal(size=k)
        w -= w_rows[:p].T @ (w_rows[:p] @ w)
        w /= np.linalg.norm(w)
        for it in range(1, max_iter + 1):
            u = xw @ w
            g = np.tanh(u)
            w_new = xw.T @ g / t - np.mean(1.0 - g * g) * w
            w_new -= w_rows[:p].T @ (w_rows[:p] @ w_new)
            w_new /= np.linalg.norm(w_new)
            change = abs(1.0 - abs(float(w_new @ w)))
            w = w_new
            if change < tol:
                break
        else:
            converged = False
            warnings.warn(
                f"FastICA component {p} hit the {max_iter}-iteration cap without converging",
                IcaConvergenceWarning,
                stacklevel=2,
            )
        iterations.append(it)
        w_rows[p] = w
    entries = dewhitening @ w_rows.T
    return MixingMatrix(entries, mean, whitening, w_rows, converged, tuple(iterations))
