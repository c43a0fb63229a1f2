"""Defender moves: line switching, admittance perturbation and Gaussian watermarks."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

from .casefile import NetworkCase, in_service_edges, is_connected

log = logging.getLogger(__name__)

# Perturbation order for the 14-bus system, as (from, to) bus pairs.
CASE14_LINE_ORDER = (
    (1, 2), (1, 5), (2, 3), (2, 4), (2, 5), (3, 4), (4, 5), (4, 7),
    (4, 9), (5, 6), (6, 11), (6, 12), (6, 13), (9, 10), (9, 14), (10, 11),
)  # fmt: skip
DEFAULT_LINE_COUNT = 16
MTD_KINDS = ("switch", "perturb", "watermark")


class MtdError(ValueError):
    pass


@dataclass(frozen=True)
class MtdAction:
    kind: str
    lines: tuple[int, ...]
    magnitude: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in MTD_KINDS:
            raise MtdError(f"unknown MTD kind {self.kind!r}")
        if not self.lines:
            raise MtdError("an MTD action needs at least one line")
        if self.magnitude < 0:
            raise MtdError("magnitude must be non-negative")
        if self.kind == "perturb" and self.magnitude >= 1:
            raise MtdError("perturbation magnitude must be below 1")


@dataclass(frozen=True)
class MtdSchedule:
    nlp: int
    topology_ids: np.ndarray
    line_order: tuple[int, ...]  # branch positions; id k > 0 acts on line_order[k-1]

    def line_for(self, topology_id: int) -> int | None:
        return None if topology_id == 0 else self.line_order[topology_id - 1]


def _check_line(case: NetworkCase, line: int) -> None:
    if not 0 <= line < case.n_branch:
        raise MtdError(f"unknown line {line}; case has {case.n_branch} branches")


def _scale_admittance(case: NetworkCase, line: int, factor: float) -> NetworkCase:
    """Multiply the series admittance of one branch by ``factor``."""
    br = case.branches[line]
    return case.with_branch(
        line, replace(br, resistance_r=br.resistance_r / factor, reactance_x=br.reactance_x / factor)
    )


def switch_line(case: NetworkCase, line: int, closed: bool) -> NetworkCase:
    _check_line(case, line)
    new = case.with_branch(line, replace(case.branches[line], in_service=bool(closed)))
    if not is_connected(new.n_bus, in_service_edges(new)):
        raise MtdError(f"opening line {case.branches[line].label} would island the network")
    return new


def perturb_admittance(case: NetworkCase, line: int, fraction: float) -> NetworkCase:
    """Scale one branch's series admittance (and so its susceptance) by ``1 + fraction``."""
    _check_line(case, line)
    if not case.branches[line].in_service:
        raise MtdError(f"line {case.branches[line].label} is out of service")
    if not abs(fraction) < 1:
        raise MtdError("perturbation fraction must satisfy |fraction| < 1")
    if fraction == 0:
        return case
    return _scale_admittance(case, line, 1.0 + fraction)


def draw_watermark(n: int, p: float, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Normal(0, p²) factors, redrawing any with |g| >= 1; returns (factors, redraws)."""
    g = rng.normal(0.0, p, size=n) if p > 0 else np.zeros(n)
    redraws = 0
    bad = np.abs(g) >= 1.0
    while bad.any():
        redraws += int(bad.sum())
        g[bad] = rng.normal(0.0, p, size=int(bad.sum()))
        bad = np.abs(g) >= 1.0
    return g, redraws


def gaussian_watermark(
    case: NetworkCase, lines: Sequence[int], p: float, seed
) -> tuple[NetworkCase, np.ndarray]:
    """Modulate each listed line's susceptance by a seeded factor ``1 + g``.

    Returns the watermarked case and the per-line DC susceptance deltas.
    """
    if p < 0:
        raise MtdError("watermark scale must be non-negative")
    lines = list(lines)
    for line in lines:
        _check_line(case, line)
    g, redraws = draw_watermark(len(lines), p, np.random.default_rng(seed))
    if redraws:
        log.info("watermark redrew %d extreme factors", redraws)
    new = case
    deltas = np.zeros(len(lines))
    for i, line in enumerate(lines):
        br = case.branches[line]
        if g[i] != 0.0 and br.in_service:
            new = _scale_admittance(new, line, 1.0 + g[i])
            deltas[i] = 1.0 / new.branches[line].reactance_x - 1.0 / br.reactance_x
    return new, deltas


def apply_action(case: NetworkCase, action: MtdAction) -> NetworkCase:
    if action.kind == "switch":
        for line in action.lines:
            case = switch_line(case, line, not case.branches[line].in_service)
        return case
    if action.kind == "perturb":
        for line in action.lines:
            case = perturb_admittance(case, line, action.magnitude)
        return case
    return gaussian_watermark(case, action.lines, action.magnitude, action.seed)[0]


def perturbable_lines(case: NetworkCase) -> tuple[int, ...]:
    """Branch positions in perturbation order for ``case``.

    The 14-bus system uses its fixed 16-line order; any other case uses its
    first 16 branches whose opening would not island the network.
    """
    pairs = {frozenset((br.from_bus, br.to_bus)) for br in case.branches}
    if case.n_bus == 14 and all(frozenset(p) in pairs for p in CASE14_LINE_ORDER):
        return tuple(case.branch_index(*p) for p in CASE14_LINE_ORDER)
    order = []
    for k, br in enumerate(case.branches):
        if len(order) == DEFAULT_LINE_COUNT:
            break
        if not br.in_service:
            continue
        try:
            switch_line(case, k, False)
        except MtdError:
            continue
        order.append(k)
    return tuple(order)


def mtd_schedule(
    nlp: int, periods: int, rng: np.random.Generator, line_order: Sequence[int] | None = None
) -> MtdSchedule:
    """Draw one topology id per period uniformly from {0..nlp}; 0 is the base topology."""
    order = tuple(line_order) if line_order is not None else tuple(range(len(CASE14_LINE_ORDER)))
    if nlp < 0:
        raise MtdError("nlp must be non-negative")
    if nlp > len(order):
        raise MtdError(f"nlp={nlp} exceeds the {len(order)} lines available")
    ids = rng.integers(0, nlp + 1, size=periods) if nlp > 0 else np.zeros(periods, dtype=np.int64)
    return MtdSchedule(nlp, ids, order[:nlp])


def topology_case(
    case: NetworkCase,
    schedule: MtdSchedule,
    topology_id: int,
    kind: str,
    magnitude: float = 0.0,
    watermark_seed=None,
) -> NetworkCase:
    """The network in force for a scheduled topology id."""
    line = schedule.line_for(int(topology_id))
    if line is None:
        return case
    if kind == "switch":
        return switch_line(case, line, False)
    if kind == "perturb":
        return perturb_admittance(case, line, magnitude)
    if kind == "watermark":
        return gaussian_watermark(case, [line], magnitude, watermark_seed)[0]
    raise MtdError(f"unknown MTD kind {kind!r}")


__all__ = [
    "CASE14_LINE_ORDER",
    "MtdAction",
    "MtdError",
    "MtdSchedule",
    "apply_action",
    "draw_watermark",
    "gaussian_watermark",
    "mtd_schedule",
    "perturb_admittance",
    "perturbable_lines",
    "switch_line",
    "topology_case",
]
