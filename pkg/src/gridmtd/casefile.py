"""Power-system case descriptions: data model, text format and bundled cases.

Case file layout (whitespace separated, ``#`` starts a comment)::

    BASE <MVA>

    BUS
    # id kind load_p load_q v_setpoint
    1 slack 0 0 1.06
    ...

    BRANCH
    # from to r x b_sh status
    1 2 0.01938 0.05917 0.0528 1
    ...

    GEN            (optional)
    # bus p_gen
    1 232.4

``kind`` is one of ``slack``, ``generator`` or ``load``.  ``load_p``,
``load_q`` and ``p_gen`` are in MW/MVAr and are divided by BASE when parsed;
``v_setpoint`` is per-unit.  Branch ``r``, ``x`` and ``b_sh`` (total line
charging) are per-unit on BASE; ``status`` is 1 for in service and 0 for open.
Buses without a GEN entry have zero scheduled generation.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

BUS_KINDS = ("slack", "generator", "load")
BUNDLED_CASES = ("case14", "case118")


class CaseError(ValueError):
    """Raised for malformed or physically inconsistent case data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    load_p: float
    load_q: float
    v_setpoint: float
    gen_p: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    resistance_r: float
    reactance_x: float
    shunt_b: float = 0.0
    in_service: bool = True

    @property
    def label(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class LoadProfile:
    """Per-bus demand in per-unit, ordered like ``NetworkCase.buses``."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("load vectors must be 1-D and of equal length")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class NetworkCase:
    base_power: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    slack_bus: int
    name: str = field(default="", compare=False)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def bus_position(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def slack_position(self) -> int:
        return self.bus_position()[self.slack_bus]

    def load_profile(self) -> LoadProfile:
        return LoadProfile(
            np.array([b.load_p for b in self.buses]), np.array([b.load_q for b in self.buses])
        )

    def generation(self) -> np.ndarray:
        return np.array([b.gen_p for b in self.buses])

    def branch_index(self, from_bus: int, to_bus: int) -> int:
        """Position of the first branch joining two buses (either direction)."""
        for k, br in enumerate(self.branches):
            if {br.from_bus, br.to_bus} == {from_bus, to_bus}:
                return k
        raise KeyError(f"no branch between buses {from_bus} and {to_bus}")

    def with_branch(self, index: int, branch: Branch) -> NetworkCase:
        branches = list(self.branches)
        branches[index] = branch
        return replace(self, branches=tuple(branches))


def branch_admittance(branch: Branch) -> tuple[float, float]:
    """Series conductance and susceptance ``g = R/(R²+X²)``, ``b = -X/(R²+X²)``."""
    r, x = branch.resistance_r, branch.reactance_x
    den = r * r + x * x
    if den == 0.0:
        raise CaseError(f"branch {branch.label} has zero impedance")
    if r == 0.0:
        return 0.0, -1.0 / x
    return r / den, -x / den


def is_connected(n_bus: int, edges: Iterable[tuple[int, int]]) -> bool:
    parent = list(range(n_bus))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    groups = n_bus
    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            groups -= 1
    return groups <= 1


def in_service_edges(case: NetworkCase) -> list[tuple[int, int]]:
    pos = case.bus_position()
    return [(pos[br.from_bus], pos[br.to_bus]) for br in case.branches if br.in_service]


def validate_case(case: NetworkCase) -> NetworkCase:
    if not case.base_power > 0:
        raise CaseError("base power must be positive")
    ids = case.bus_ids
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus id")
    slack = [b.id for b in case.buses if b.kind == "slack"]
    if len(slack) != 1:
        raise CaseError(f"expected exactly one slack bus, found {len(slack)}")
    if case.slack_bus != slack[0]:
        raise CaseError("slack_bus does not match the bus marked slack")
    for b in case.buses:
        if b.kind not in BUS_KINDS:
            raise CaseError(f"bus {b.id}: unknown kind {b.kind!r}")
        if not all(math.isfinite(v) for v in (b.load_p, b.load_q, b.gen_p)):
            raise CaseError(f"bus {b.id}: non-finite power value")
        if not (math.isfinite(b.v_setpoint) and b.v_setpoint > 0):
            raise CaseError(f"bus {b.id}: voltage setpoint must be positive")
    known = set(ids)
    for k, br in enumerate(case.branches):
        name = f"branch {k} ({br.label})"
        if br.from_bus not in known or br.to_bus not in known:
            missing = br.from_bus if br.from_bus not in known else br.to_bus
            raise CaseError(f"{name} references unknown bus {missing}")
        if br.from_bus == br.to_bus:
            raise CaseError(f"{name} is a self loop")
        if not (math.isfinite(br.resistance_r) and br.resistance_r >= 0):
            raise CaseError(f"{name} has invalid resistance")
        if not math.isfinite(br.reactance_x) or not math.isfinite(br.shunt_b):
            raise CaseError(f"{name} has non-finite parameters")
        if br.in_service and br.reactance_x == 0:
            raise CaseError(f"{name} has zero reactance")
    if not is_connected(case.n_bus, in_service_edges(case)):
        raise CaseError("in-service branch graph is disconnected")
    return case


def build_case(
    base_power: float, buses: Sequence[Bus], branches: Sequence[Branch], name: str = ""
) -> NetworkCase:
    """Programmatic constructor; applies the same validation as the parser."""
    slack = [b.id for b in buses if b.kind == "slack"]
    if len(slack) != 1:
        raise CaseError(f"expected exactly one slack bus, found {len(slack)}")
    case = NetworkCase(float(base_power), tuple(buses), tuple(branches), slack[0], name)
    return validate_case(case)


def _numbers(tokens: list[str], count: int, lineno: int, what: str) -> list[float]:
    if len(tokens) != count:
        raise CaseError(f"{what} row needs {count} columns, got {len(tokens)}", lineno)
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise CaseError(f"bad number in {what} row: {exc}", lineno) from None


def parse_case(text: str, name: str = "") -> NetworkCase:
    base = None
    buses: list[Bus] = []
    branches: list[Branch] = []
    gens: dict[int, float] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0].upper()
        if head == "BASE":
            if len(tokens) != 2:
                raise CaseError("BASE needs one value", lineno)
            try:
                base = float(tokens[1])
            except ValueError:
                raise CaseError(f"bad base power {tokens[1]!r}", lineno) from None
            section = None
            continue
        if head in ("BUS", "BRANCH", "GEN") and len(tokens) == 1:
            section = head
            continue
        if section is None:
            raise CaseError(f"data outside a section: {line!r}", lineno)
        if base is None:
            raise CaseError("BASE must precede data sections", lineno)
        if section == "BUS":
            if len(tokens) != 5:
                raise CaseError(f"BUS row needs 5 columns, got {len(tokens)}", lineno)
            kind = tokens[1].lower()
            if kind not in BUS_KINDS:
                raise CaseError(f"unknown bus kind {tokens[1]!r}", lineno)
            try:
                bus_id = int(tokens[0])
            except ValueError:
                raise CaseError(f"bad bus id {tokens[0]!r}", lineno) from None
            p, q, v = _numbers(tokens[2:], 3, lineno, "BUS")
            buses.append(Bus(bus_id, kind, p / base, q / base, v))
        elif section == "BRANCH":
            f, t, r, x, b, status = _numbers(tokens, 6, lineno, "BRANCH")
            if f != int(f) or t != int(t) or status not in (0.0, 1.0):
                raise CaseError("branch endpoints must be integers and status 0 or 1", lineno)
            branches.append(Branch(int(f), int(t), r, x, b, status == 1.0))
        else:
            bus_id, pg = _numbers(tokens, 2, lineno, "GEN")
            gens[int(bus_id)] = gens.get(int(bus_id), 0.0) + pg / base
    if base is None:
        raise CaseError("missing BASE")
    if not buses:
        raise CaseError("missing BUS section")
    known = {b.id for b in buses}
    for bus_id in gens:
        if bus_id not in known:
            raise CaseError(f"generator at unknown bus {bus_id}")
    buses = [replace(b, gen_p=gens.get(b.id, 0.0)) for b in buses]
    return build_case(base, buses, branches, name)


def _per_unit_repr(value: float, base: float) -> str:
    """Text for ``value*base`` that parses back to exactly ``value``."""
    scaled = value * base
    candidates = [scaled]
    lo = hi = scaled
    for _ in range(4):
        lo, hi = np.nextafter(lo, -np.inf), np.nextafter(hi, np.inf)
        candidates += [float(lo), float(hi)]
    for c in candidates:
        text = repr(float(c))
        if float(text) / base == value:
            return text
    return repr(float(scaled))


def serialize_case(case: NetworkCase) -> str:
    base = case.base_power
    out = [f"BASE {base!r}", "", "BUS", "# id kind load_p load_q v_setpoint"]
    for b in case.buses:
        out.append(
            f"{b.id} {b.kind} {_per_unit_repr(b.load_p, base)} "
            f"{_per_unit_repr(b.load_q, base)} {b.v_setpoint!r}"
        )
    out += ["", "BRANCH", "# from to r x b_sh status"]
    for br in case.branches:
        out.append(
            f"{br.from_bus} {br.to_bus} {br.resistance_r!r} {br.reactance_x!r} "
            f"{br.shunt_b!r} {int(br.in_service)}"
        )
    gens = [b for b in case.buses if b.gen_p != 0.0]
    if gens:
        out += ["", "GEN", "# bus p_gen"]
        out += [f"{b.id} {_per_unit_repr(b.gen_p, base)}" for b in gens]
    return "\n".join(out) + "\n"


def load_case(name_or_path: str | Path) -> NetworkCase:
    """Load a bundled case by name (``case14``, ``case118``) or a case file path."""
    key = str(name_or_path)
    if key in BUNDLED_CASES:
        text = resources.files("gridmtd.data").joinpath(f"{key}.txt").read_text()
        return parse_case(text, name=key)
    path = Path(name_or_path)
    if not path.is_file():
        raise CaseError(f"unknown case {key!r}: not bundled and no such file")
    return parse_case(path.read_text(), name=path.stem)
