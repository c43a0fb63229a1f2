"""Attack constructors: full-knowledge, blind ICA, clustered blind ICA, replay, load bucketing."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .learning import (
    NOISE,
    ClusterLabeling,
    MixingMatrix,
    TsneParams,
    dbscan,
    estimate_eps,
    fastica,
    tsne_embed,
)
from .powerflow import TopologyMatrix

MIN_OBSERVATIONS = 250
PROVENANCES = ("full_knowledge", "blind", "clustered_blind", "replay")

LatentShift = Union[np.ndarray, Callable[[MixingMatrix], np.ndarray]]


class AttackAbstained(RuntimeError):
    """The attacker declines to act (guard failed); no vector is produced."""


@dataclass(frozen=True)
class ObservationSet:
    rows: np.ndarray  # T x m, oldest first; the last row is the current period
    sequence: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        seq = np.asarray(self.sequence)
        if rows.ndim != 2:
            raise ValueError("observation rows must form a T x m matrix")
        if seq.shape != (rows.shape[0],) or np.any(np.diff(seq) <= 0):
            raise ValueError("sequence numbers must be strictly increasing, one per row")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "sequence", seq)

    @classmethod
    def from_rows(cls, rows) -> ObservationSet:
        rows = np.asarray(rows, dtype=float)
        return cls(rows, np.arange(rows.shape[0]))

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def current(self) -> np.ndarray:
        return self.rows[-1]

    def subset(self, index: np.ndarray) -> ObservationSet:
        return ObservationSet(self.rows[index], self.sequence[index])


@dataclass(frozen=True)
class AttackVector:
    bias: np.ndarray
    intent: np.ndarray
    provenance: str
    support: np.ndarray | None = field(default=None, compare=False)  # rows the attacker learned from
    basis: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not np.all(np.isfinite(self.bias)):
            raise ValueError("attack bias must be finite")


@dataclass(frozen=True)
class DbscanParams:
    min_pts: int = 5
    eps: float | None = None  # None: elbow of the min_pts-th neighbour distance curve


@dataclass(frozen=True)
class LoadBuckets:
    assignment: np.ndarray
    centers: np.ndarray
    bucket_count: int
    embedding: np.ndarray


def full_knowledge_attack(h, c) -> AttackVector:
    hm = h.entries if isinstance(h, TopologyMatrix) else np.asarray(h, dtype=float)
    cv = np.asarray(getattr(c, "angles", c), dtype=float)
    return AttackVector(hm @ cv, cv, "full_knowledge")


def least_squares_shift(target_bias: np.ndarray) -> Callable[[MixingMatrix], np.ndarray]:
    """Latent shift whose image under the estimated mixing matrix best matches ``target_bias``."""
    target = np.asarray(target_bias, dtype=float)

    def solve(mixing: MixingMatrix) -> np.ndarray:
        return np.linalg.lstsq(mixing.entries, target, rcond=None)[0]

    return solve


def _resolve_shift(delta_y: LatentShift, mixing: MixingMatrix) -> np.ndarray:
    dy = delta_y(mixing) if callable(delta_y) else np.asarray(delta_y, dtype=float)
    if dy.shape != (mixing.component_count,):
        raise ValueError(f"latent shift needs {mixing.component_count} entries, got {dy.shape}")
    return dy


def blind_ica_attack(
    obs: ObservationSet,
    delta_y: LatentShift,
    rng: np.random.Generator,
    components: int | None = None,
    state_dim: int | None = None,
    min_observations: int = MIN_OBSERVATIONS,
    provenance: str = "blind",
) -> AttackVector:
    """Bias ``G δy`` with ``G`` estimated by FastICA from the observation history.

    ``delta_y`` is either the latent shift itself or a function of the fitted
    mixing matrix (see :func:`least_squares_shift`).  The component count
    defaults to the length of an explicit shift.
    """
    if len(obs) < min_observations:
        raise ValueError(f"blind attack needs at least {min_observations} observations, got {len(obs)}")
    if components is None:
        if callable(delta_y):
            raise ValueError("component count required when the latent shift is computed")
        components = int(np.asarray(delta_y).size)
    if state_dim is not None and components > state_dim:
        raise ValueError("latent dimension may not exceed the state dimension")
    mixing = fastica(obs.rows, components, rng)
    dy = _resolve_shift(delta_y, mixing)
    return AttackVector(mixing.entries @ dy, dy, provenance, obs.sequence.copy(), mixing.entries)


def default_min_cluster(components: int) -> int:
    return max(50, 3 * components)


def scale_for_clustering(rows: np.ndarray) -> np.ndarray:
    """Express each meter relative to its mean magnitude so large flows do not dominate distances."""
    scale = np.maximum(np.abs(rows).mean(axis=0), 1e-3)
    return rows / scale


def cluster_observations(
    obs: ObservationSet,
    tsne_params: TsneParams,
    dbscan_params: DbscanParams,
    rng: np.random.Generator,
) -> tuple[ClusterLabeling, np.ndarray]:
    """Embed the history with t-SNE and cluster the embedding with DBSCAN."""
    emb = tsne_embed(
        scale_for_clustering(obs.rows),
        tsne_params.perplexity,
        tsne_params.iterations,
        tsne_params.learning_rate,
        rng,
        params=tsne_params,
    )
    eps = dbscan_params.eps
    if eps is None:
        eps = estimate_eps(emb.points, dbscan_params.min_pts)
    return dbscan(emb.points, eps, dbscan_params.min_pts), emb.points


def current_cluster(labels: ClusterLabeling, min_size: int) -> np.ndarray:
    """Rows sharing the final row's label, or abstain."""
    label = int(labels.labels[-1])
    if label == NOISE:
        raise AttackAbstained("current observation was labelled noise")
    members = labels.members(label)
    if members.size < min_size:
        raise AttackAbstained(f"current cluster has {members.size} rows, need {min_size}")
    return members


def clustered_blind_attack(
    obs: ObservationSet,
    tsne_params: TsneParams,
    dbscan_params: DbscanParams,
    delta_y: LatentShift,
    min_cluster: int | None,
    rng: np.random.Generator,
    components: int | None = None,
    labels: ClusterLabeling | None = None,
) -> AttackVector:
    """Cluster the history, keep the current row's cluster, and run the blind attack on it.

    Pass precomputed ``labels`` to reuse a clustering of the same history.
    """
    if components is None:
        if callable(delta_y):
            raise ValueError("component count required when the latent shift is computed")
        components = int(np.asarray(delta_y).size)
    if min_cluster is None:
        min_cluster = default_min_cluster(components)
    if labels is None:
        labels, _ = cluster_observations(obs, tsne_params, dbscan_params, rng)
    members = current_cluster(labels, min_cluster)
    return blind_ica_attack(
        obs.subset(members),
        delta_y,
        rng,
        components=components,
        min_observations=0,
        provenance="clustered_blind",
    )


def replay_attack(obs: ObservationSet, labels: ClusterLabeling, rng: np.random.Generator) -> AttackVector:
    """Substitute a uniformly chosen earlier row from the current row's cluster."""
    members = current_cluster(labels, 2)
    current = len(obs) - 1
    candidates = members[members != current]
    pick = int(candidates[0]) if candidates.size == 1 else int(rng.choice(candidates))
    bias = obs.rows[pick] - obs.current
    return AttackVector(bias, np.array([float(obs.sequence[current] - obs.sequence[pick])]), "replay", members)


def _grid_shape(count: int) -> tuple[int, int]:
    nx = int(np.floor(np.sqrt(count)))
    while count % nx:
        nx -= 1
    return nx, count // nx


def equal_frequency_grid(points: np.ndarray, bucket_count: int) -> np.ndarray:
    """Split points into quantile columns along x, then quantile cells along y within each."""
    nx, ny = _grid_shape(bucket_count)
    n = points.shape[0]
    assignment = np.empty(n, dtype=int)
    order_x = np.argsort(points[:, 0], kind="stable")
    for cx, col in enumerate(np.array_split(order_x, nx)):
        order_y = col[np.argsort(points[col, 1], kind="stable")]
        for cy, cell in enumerate(np.array_split(order_y, ny)):
            assignment[cell] = cx * ny + cy
    return assignment


def bucket_loads(
    load_obs: np.ndarray, bucket_count: int, tsne_params: TsneParams, rng: np.random.Generator
) -> LoadBuckets:
    loads = np.asarray(load_obs, dtype=float)
    if bucket_count < 1:
        raise ValueError("bucket_count must be at least 1")
    if loads.shape[0] < 10 * bucket_count:
        raise ValueError(f"need at least {10 * bucket_count} load observations, got {loads.shape[0]}")
    active = loads.std(axis=0) > 0
    emb = tsne_embed(
        scale_for_clustering(loads[:, active]),
        tsne_params.perplexity,
        tsne_params.iterations,
        tsne_params.learning_rate,
        rng,
        params=tsne_params,
    )
    assignment = equal_frequency_grid(emb.points, bucket_count)
    centers = np.array([emb.points[assignment == b].mean(axis=0) for b in range(bucket_count)])
    return LoadBuckets(assignment, centers, bucket_count, emb.points)


def load_variation(loads: np.ndarray, nominal: np.ndarray, assignment: np.ndarray | None = None) -> float:
    """Pooled relative standard deviation of per-bus load factors.

    With ``assignment`` the spread is measured within each bucket about the
    bucket mean; otherwise about the global mean.
    """
    loads = np.asarray(loads, dtype=float)
    active = np.asarray(nominal) != 0
    factors = loads[:, active] / np.asarray(nominal)[active]
    if assignment is None:
        assignment = np.zeros(loads.shape[0], dtype=int)
    sq = 0.0
    dof = 0
    for b in np.unique(assignment):
        f = factors[assignment == b]
        sq += float(np.sum((f - f.mean(axis=0)) ** 2))
        dof += (f.shape[0] - 1) * f.shape[1]
    return float(np.sqrt(sq / max(dof, 1)))
