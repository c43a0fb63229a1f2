"""Ground-truth operating points and noisy meter readings (DC and AC models).

DC meters: the from-side real flow of every branch followed by the real
injection at every bus.  An open branch keeps its meter slot and reads zero, so
measurement vectors stay index-stable under switching.

AC meters: branch P (from side), branch Q (from side), bus P injection,
bus Q injection and bus voltage magnitude, in that order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .casefile import LoadProfile, NetworkCase, branch_admittance

log = logging.getLogger(__name__)

NOISE_FLOOR = 0.01  # pu; smallest magnitude used to scale meter noise
NR_TOL = 1e-6
NR_MAX_ITER = 20

METER_KINDS = ("p_flow", "q_flow", "p_inj", "q_inj", "v_mag")


class PowerFlowError(RuntimeError):
    pass


class NonConvergence(PowerFlowError):
    def __init__(self, mismatch: float, iterations: int):
        self.mismatch = mismatch
        self.iterations = iterations
        super().__init__(f"Newton-Raphson did not converge in {iterations} iterations (mismatch {mismatch:.3e} pu)")


class UnobservableError(PowerFlowError):
    pass


@dataclass(frozen=True)
class Meter:
    kind: str
    index: int  # branch position for flows, bus position otherwise


@dataclass(frozen=True)
class StateVector:
    angles: np.ndarray  # radians, non-slack buses in case order
    magnitudes: np.ndarray | None  # per-unit, every bus (AC only)
    mode: str

    def as_array(self) -> np.ndarray:
        if self.magnitudes is None:
            return self.angles
        return np.concatenate([self.angles, self.magnitudes])


@dataclass(frozen=True)
class MeasurementVector:
    values: np.ndarray
    meter_index: tuple[Meter, ...]
    mode: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.meter_index),):
            raise ValueError("values length must equal meter count")
        if not np.all(np.isfinite(values)):
            raise ValueError("measurement values must be finite")
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> MeasurementVector:
        return MeasurementVector(values, self.meter_index, self.mode)


@dataclass(frozen=True)
class TopologyMatrix:
    entries: np.ndarray
    meter_index: tuple[Meter, ...]
    state_index: tuple[int, ...]  # non-slack bus ids

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


def non_slack_ids(case: NetworkCase) -> tuple[int, ...]:
    return tuple(b.id for b in case.buses if b.id != case.slack_bus)


def dc_meters(case: NetworkCase) -> tuple[Meter, ...]:
    return tuple(Meter("p_flow", k) for k in range(case.n_branch)) + tuple(
        Meter("p_inj", i) for i in range(case.n_bus)
    )


def ac_meters(case: NetworkCase) -> tuple[Meter, ...]:
    nb, nl = case.n_branch, case.n_bus
    return (
        tuple(Meter("p_flow", k) for k in range(nb))
        + tuple(Meter("q_flow", k) for k in range(nb))
        + tuple(Meter("p_inj", i) for i in range(nl))
        + tuple(Meter("q_inj", i) for i in range(nl))
        + tuple(Meter("v_mag", i) for i in range(nl))
    )


def _endpoints(case: NetworkCase) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pos = case.bus_position()
    f = np.array([pos[br.from_bus] for br in case.branches], dtype=np.intp)
    t = np.array([pos[br.to_bus] for br in case.branches], dtype=np.intp)
    on = np.array([br.in_service for br in case.branches], dtype=bool)
    return f, t, on


def incidence(case: NetworkCase) -> np.ndarray:
    """Branch-bus incidence (+1 at from bus, -1 at to bus); open branches are zero rows."""
    f, t, on = _endpoints(case)
    a = np.zeros((case.n_branch, case.n_bus))
    rows = np.flatnonzero(on)
    a[rows, f[rows]] = 1.0
    a[rows, t[rows]] = -1.0
    return a


def dc_susceptances(case: NetworkCase) -> np.ndarray:
    return np.array([1.0 / br.reactance_x if br.in_service else 0.0 for br in case.branches])


@lru_cache(maxsize=256)
def build_h_dc(case: NetworkCase) -> TopologyMatrix:
    """DC measurement matrix (cached per topology; the entries are read-only)."""
    a = incidence(case)
    flows = dc_susceptances(case)[:, None] * a
    full = np.vstack([flows, a.T @ flows])
    keep = [i for i in range(case.n_bus) if i != case.slack_position]
    h = full[:, keep]
    h.setflags(write=False)
    if np.linalg.matrix_rank(h) < h.shape[1]:
        raise UnobservableError("DC measurement matrix is rank deficient")
    return TopologyMatrix(h, dc_meters(case), non_slack_ids(case))


def sample_loads(base: LoadProfile, variation: float, rng: np.random.Generator) -> LoadProfile:
    """Scale each bus demand by an independent Normal(1, variation²) factor."""
    if variation < 0:
        raise ValueError("variation must be non-negative")
    if variation == 0:
        return LoadProfile(base.p.copy(), base.q.copy())
    factors = rng.normal(1.0, variation, size=base.p.shape)
    negative = factors < 0
    if negative.any():
        log.warning("clamped %d negative load factors at zero", int(negative.sum()))
        factors[negative] = 0.0
    return LoadProfile(base.p * factors, base.q * factors)


def dc_flow(case: NetworkCase, loads: LoadProfile) -> tuple[StateVector, MeasurementVector]:
    h = build_h_dc(case)
    a = incidence(case)
    b = dc_susceptances(case)
    bbus = a.T @ (b[:, None] * a)
    keep = np.array([i for i in range(case.n_bus) if i != case.slack_position])
    injection = case.generation() - loads.p
    try:
        theta = np.linalg.solve(bbus[np.ix_(keep, keep)], injection[keep])
    except np.linalg.LinAlgError as exc:
        raise PowerFlowError(f"singular DC system: {exc}") from None
    z = h.entries @ theta
    return StateVector(theta, None, "dc"), MeasurementVector(z, h.meter_index, "dc")


# ---------------------------------------------------------------- AC model


@dataclass(frozen=True)
class _BranchParams:
    f: np.ndarray
    t: np.ndarray
    g: np.ndarray
    b: np.ndarray
    half_sh: np.ndarray


@lru_cache(maxsize=256)
def _branch_params(case: NetworkCase) -> _BranchParams:
    f, t, on = _endpoints(case)
    g = np.zeros(case.n_branch)
    b = np.zeros(case.n_branch)
    sh = np.zeros(case.n_branch)
    for k, br in enumerate(case.branches):
        if on[k]:
            g[k], b[k] = branch_admittance(br)
            sh[k] = 0.5 * br.shunt_b
    return _BranchParams(f, t, g, b, sh)


def _side_flows(vi, vj, dth, g, b, half_sh):
    """Real and reactive flow leaving bus i on a pi-model line towards j."""
    c, s = np.cos(dth), np.sin(dth)
    p = vi * vi * g - vi * vj * (g * c + b * s)
    q = -vi * vi * (b + half_sh) - vi * vj * (g * s - b * c)
    return p, q


def branch_flows(case: NetworkCase, vm: np.ndarray, va: np.ndarray):
    """From-side and to-side (P, Q) on every branch for bus voltages ``vm∠va``."""
    bp = _branch_params(case)
    vf, vt = vm[bp.f], vm[bp.t]
    dth = va[bp.f] - va[bp.t]
    pf, qf = _side_flows(vf, vt, dth, bp.g, bp.b, bp.half_sh)
    pt, qt = _side_flows(vt, vf, -dth, bp.g, bp.b, bp.half_sh)
    return pf, qf, pt, qt


def _injections(case, bp, pf, qf, pt, qt):
    pinj = np.zeros(case.n_bus)
    qinj = np.zeros(case.n_bus)
    np.add.at(pinj, bp.f, pf)
    np.add.at(pinj, bp.t, pt)
    np.add.at(qinj, bp.f, qf)
    np.add.at(qinj, bp.t, qt)
    return pinj, qinj


def ac_measurement_function(case: NetworkCase, vm: np.ndarray, va: np.ndarray) -> np.ndarray:
    """Noise-free AC meter values (see module docstring for ordering)."""
    bp = _branch_params(case)
    pf, qf, pt, qt = branch_flows(case, vm, va)
    pinj, qinj = _injections(case, bp, pf, qf, pt, qt)
    return np.concatenate([pf, qf, pinj, qinj, vm])


def ac_jacobian(case: NetworkCase, vm: np.ndarray, va: np.ndarray) -> np.ndarray:
    """Derivative of every AC meter with respect to [all angles, all magnitudes].

    Columns cover every bus (slack included); callers drop what they hold fixed.
    """
    bp = _branch_params(case)
    nb, nl = case.n_branch, case.n_bus
    jac = np.zeros((2 * nb + 3 * nl, 2 * nl))
    rows = np.arange(nb)

    def side(i_idx, j_idx, sign):
        vi, vj = vm[i_idx], vm[j_idx]
        dth = sign * (va[bp.f] - va[bp.t])
        c, s = np.cos(dth), np.sin(dth)
        gc_bs = bp.g * c + bp.b * s
        gs_bc = bp.g * s - bp.b * c
        dp = {
            "ti": vi * vj * gs_bc,
            "tj": -vi * vj * gs_bc,
            "vi": 2 * vi * bp.g - vj * gc_bs,
            "vj": -vi * gc_bs,
        }
        dq = {
            "ti": -vi * vj * gc_bs,
            "tj": vi * vj * gc_bs,
            "vi": -2 * vi * (bp.b + bp.half_sh) - vj * gs_bc,
            "vj": -vi * gs_bc,
        }
        return dp, dq

    blocks = []
    for i_idx, j_idx, sign in ((bp.f, bp.t, 1.0), (bp.t, bp.f, -1.0)):
        dp, dq = side(i_idx, j_idx, sign)
        dpm = np.zeros((nb, 2 * nl))
        dqm = np.zeros((nb, 2 * nl))
        for mat, d in ((dpm, dp), (dqm, dq)):
            np.add.at(mat, (rows, i_idx), d["ti"])
            np.add.at(mat, (rows, j_idx), d["tj"])
            np.add.at(mat, (rows, nl + i_idx), d["vi"])
            np.add.at(mat, (rows, nl + j_idx), d["vj"])
        blocks.append((dpm, dqm))
    (dpf, dqf), (dpt, dqt) = blocks
    jac[:nb] = dpf
    jac[nb : 2 * nb] = dqf
    pinj = jac[2 * nb : 2 * nb + nl]
    qinj = jac[2 * nb + nl : 2 * nb + 2 * nl]
    np.add.at(pinj, bp.f, dpf)
    np.add.at(pinj, bp.t, dpt)
    np.add.at(qinj, bp.f, dqf)
    np.add.at(qinj, bp.t, dqt)
    jac[2 * nb + 2 * nl :, nl:] = np.eye(nl)
    return jac


def ac_flow(
    case: NetworkCase, loads: LoadProfile, max_iter: int = NR_MAX_ITER, tol: float = NR_TOL
) -> tuple[StateVector, MeasurementVector]:
    """Newton-Raphson power flow from a flat start (setpoints on PV/slack buses)."""
    nl, nb = case.n_bus, case.n_branch
    kinds = [b.kind for b in case.buses]
    slack = case.slack_position
    pv_or_slack = np.array([k != "load" for k in kinds])
    vm = np.where(pv_or_slack, [b.v_setpoint for b in case.buses], 1.0).astype(float)
    va = np.zeros(nl)
    p_spec = case.generation() - loads.p
    q_spec = -loads.q
    ang = np.array([i for i in range(nl) if i != slack])
    mag = np.flatnonzero(~pv_or_slack)
    unknown_cols = np.concatenate([ang, nl + mag])
    p_rows = 2 * nb + ang
    q_rows = 2 * nb + nl + mag

    def mismatch():
        h = ac_measurement_function(case, vm, va)
        return np.concatenate([h[p_rows] - p_spec[ang], h[q_rows] - q_spec[mag]])

    err = mismatch()
    it = 0
    while np.max(np.abs(err)) >= tol:
        if it == max_iter:
            raise NonConvergence(float(np.max(np.abs(err))), it)
        jac = ac_jacobian(case, vm, va)[np.concatenate([p_rows, q_rows])][:, unknown_cols]
        try:
            step = np.linalg.solve(jac, -err)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian: {exc}") from None
        va[ang] += step[: len(ang)]
        vm[mag] += step[len(ang) :]
        err = mismatch()
        it += 1
        if not np.all(np.isfinite(err)):
            raise NonConvergence(float("inf"), it)
    z = ac_measurement_function(case, vm, va)
    state = StateVector(va[ang].copy(), vm.copy(), "ac")
    return state, MeasurementVector(z, ac_meters(case), "ac")


def noise_scales(truth: MeasurementVector | np.ndarray, noise_ratio: float) -> np.ndarray:
    """Per-meter noise standard deviation: ratio times max(|truth|, floor)."""
    values = truth.values if isinstance(truth, MeasurementVector) else np.asarray(truth)
    return noise_ratio * np.maximum(np.abs(values), NOISE_FLOOR)


def measure(truth: MeasurementVector, noise_ratio: float, rng: np.random.Generator) -> MeasurementVector:
    if noise_ratio < 0:
        raise ValueError("noise_ratio must be non-negative")
    if noise_ratio == 0:
        return truth.with_values(truth.values.copy())
    sigma = noise_scales(truth, noise_ratio)
    return truth.with_values(truth.values + rng.normal(0.0, 1.0, size=sigma.shape) * sigma)
