"""Weighted least-squares estimation, residual bad-data tests and CUSUM monitoring."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .casefile import NetworkCase
from .powerflow import (
    MeasurementVector,
    StateVector,
    TopologyMatrix,
    ac_jacobian,
    ac_measurement_function,
)

GN_MAX_ITER = 20
GN_STEP_TOL = 1e-8


class EstimationError(RuntimeError):
    pass


class RankDeficiency(EstimationError):
    pass


@dataclass(frozen=True)
class WeightMatrix:
    diagonal: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diagonal, dtype=float)
        if d.ndim != 1 or not np.all(d > 0) or not np.all(np.isfinite(d)):
            raise ValueError("weights must be a finite positive vector")
        object.__setattr__(self, "diagonal", d)

    @classmethod
    def from_sigmas(cls, sigmas: np.ndarray) -> WeightMatrix:
        return cls(1.0 / np.square(np.asarray(sigmas, dtype=float)))

    @classmethod
    def identity(cls, m: int) -> WeightMatrix:
        return cls(np.ones(m))

    @property
    def sqrt(self) -> np.ndarray:
        return np.sqrt(self.diagonal)


@dataclass(frozen=True)
class DetectionOutcome:
    residual: float
    threshold: float
    instant_alarm: bool
    cusum_alarm: bool | None = None

    @classmethod
    def from_residual(cls, residual: float, threshold: float, cusum_alarm: bool | None = None):
        return cls(float(residual), float(threshold), bool(residual > threshold), cusum_alarm)


def _values(z) -> np.ndarray:
    return z.values if isinstance(z, MeasurementVector) else np.asarray(z, dtype=float)


def _matrix(h) -> np.ndarray:
    return h.entries if isinstance(h, TopologyMatrix) else np.asarray(h, dtype=float)


def _weights(w, m: int) -> np.ndarray:
    if w is None:
        return np.ones(m)
    return w.diagonal if isinstance(w, WeightMatrix) else np.asarray(w, dtype=float)


class WlsSolver:
    """Reusable QR factorisation of ``W^½ H`` for repeated estimates on one topology."""

    def __init__(self, h, w=None):
        self.h = _matrix(h)
        m, n = self.h.shape
        self.sw = np.sqrt(_weights(w, m))
        self.q, self.r = np.linalg.qr(self.sw[:, None] * self.h)
        diag = np.abs(np.diag(self.r))
        if n == 0 or diag.min() <= 1e-12 * max(diag.max(), 1e-300):
            raise RankDeficiency("measurement matrix is not full column rank")

    def estimate(self, z) -> np.ndarray:
        zs = self.sw * _values(z)
        return linalg.solve_triangular(self.r, self.q.T @ zs)

    def residual(self, z) -> float:
        """Plain 2-norm of ``z - H x̂``."""
        zv = _values(z)
        return float(np.linalg.norm(zv - self.h @ self.estimate(zv)))

    def weighted_residual(self, z) -> float:
        """Norm of the noise-normalised mismatch ``W^½ (z - H x̂)``."""
        zs = self.sw * _values(z)
        return float(np.linalg.norm(zs - self.q @ (self.q.T @ zs)))


def wls_estimate(z, h, w=None) -> StateVector:
    return StateVector(WlsSolver(h, w).estimate(z), None, "dc")


def residual_norm(z, h, x_hat) -> float:
    x = x_hat.as_array() if isinstance(x_hat, StateVector) else np.asarray(x_hat, dtype=float)
    return float(np.linalg.norm(_values(z) - _matrix(h) @ x))


def chi2_threshold(m: int, n: int, alpha: float, sigma: float = 1.0) -> float:
    dof = m - n
    if dof < 1:
        raise ValueError(f"need more meters than states (m-n={dof})")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return float(sigma * np.sqrt(stats.chi2.ppf(alpha, dof)))


def ac_estimate(
    z,
    case: NetworkCase,
    w=None,
    max_iter: int = GN_MAX_ITER,
    step_tol: float = GN_STEP_TOL,
) -> tuple[StateVector, float, bool]:
    """Gauss-Newton WLS on the AC meter set from a flat start.

    The returned residual is ``‖W^½ (z - h(x̂))‖`` (plain 2-norm when ``w`` is None).
    """
    zv = _values(z)
    nl = case.n_bus
    sw = np.sqrt(_weights(w, zv.size))
    slack = case.slack_position
    ang = np.array([i for i in range(nl) if i != slack])
    cols = np.concatenate([ang, nl + np.arange(nl)])
    vm = np.ones(nl)
    va = np.zeros(nl)
    converged = False
    for _ in range(max_iter):
        mismatch = zv - ac_measurement_function(case, vm, va)
        jac = ac_jacobian(case, vm, va)[:, cols]
        a = sw[:, None] * jac
        step, _, rank, _ = np.linalg.lstsq(a, sw * mismatch, rcond=None)
        if rank < a.shape[1]:
            raise RankDeficiency("AC measurement Jacobian is rank deficient")
        va[ang] += step[: ang.size]
        vm += step[ang.size :]
        if not np.all(np.isfinite(vm)) or np.any(vm <= 0):
            break
        if np.max(np.abs(step)) < step_tol:
            converged = True
            break
    if np.all(np.isfinite(vm)) and np.all(np.isfinite(va)):
        residual = float(np.linalg.norm(sw * (zv - ac_measurement_function(case, vm, va))))
    else:
        residual = float("inf")
    state = StateVector(va[ang].copy(), vm.copy(), "ac")
    return state, residual, converged


def mtd_residual_predicted(z, c, h_new, delta_h, w=None) -> float:
    """Residual after a stale-model attack ``H_o c`` is estimated against ``H_n``.

    ``delta_h`` is ``H_o - H_n``.  Evaluates ``‖(I - H_n F_n)(z + ΔH c)‖`` with
    ``F_n = (H_nᵀ W H_n)⁻¹ H_nᵀ W``.
    """
    hn = _matrix(h_new)
    m, n = hn.shape
    wd = _weights(w, m)
    gram = hn.T @ (wd[:, None] * hn)
    if np.linalg.matrix_rank(gram) < n:
        raise RankDeficiency("new topology matrix is not full column rank")
    f = np.linalg.solve(gram, hn.T * wd)
    proj = np.eye(m) - hn @ f
    cv = c.as_array() if isinstance(c, StateVector) else np.asarray(c, dtype=float)
    return float(np.linalg.norm(proj @ _values(z) + proj @ (_matrix(delta_h) @ cv)))


# ------------------------------------------------------------------- CUSUM


@dataclass
class CusumMonitor:
    window: int
    bound_sigmas: float
    target: float | None = None
    baseline_mean: float | None = None
    baseline_std: float | None = None
    history: deque = field(default_factory=deque)
    statistic: float = 0.0

    @property
    def calibrated(self) -> bool:
        return self.baseline_mean is not None and self.baseline_std is not None

    @property
    def upper_limit(self) -> float:
        return self.baseline_mean + self.bound_sigmas * self.baseline_std


class UncalibratedMonitor(RuntimeError):
    pass


def calibrate_cusum(residual_stream, window: int, bound_sigmas: float) -> CusumMonitor:
    """Fit the monitor's baseline to an attack-free residual stream.

    The window is pre-filled with the stream's tail so monitoring can continue
    seamlessly from the calibration run.
    """
    stream = np.asarray(residual_stream, dtype=float)
    if window < 1:
        raise ValueError("window must be at least 1")
    if stream.size < 10 * window:
        raise ValueError(f"calibration needs at least {10 * window} residuals, got {stream.size}")
    mean = float(stream.mean())
    std = float(stream.std(ddof=1))
    history = deque(stream[-window:].tolist(), maxlen=window)
    mon = CusumMonitor(window, bound_sigmas, mean, mean, std, history)
    mon.statistic = max(0.0, float(np.mean(history)) - mean)
    return mon


def cusum_update(monitor: CusumMonitor, r: float) -> tuple[float, bool]:
    if not monitor.calibrated:
        raise UncalibratedMonitor("calibrate the monitor before updating it")
    if monitor.history.maxlen != monitor.window:
        monitor.history = deque(monitor.history, maxlen=monitor.window)
    monitor.history.append(float(r))
    windowed = float(np.mean(monitor.history))
    monitor.statistic = max(0.0, windowed - monitor.target)
    return monitor.statistic, windowed > monitor.upper_limit
