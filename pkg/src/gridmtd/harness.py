"""Monte Carlo scenarios: history generation, attack, defender estimation, aggregation."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import attacks
from .attacks import AttackAbstained, DbscanParams, ObservationSet
from .casefile import LoadProfile, NetworkCase, load_case
from .estimator import (
    WlsSolver,
    ac_estimate,
    calibrate_cusum,
    chi2_threshold,
    cusum_update,
)
from .learning import ClusterLabeling, TsneParams
from .mtd import (
    draw_watermark,
    mtd_schedule,
    perturb_admittance,
    perturbable_lines,
    switch_line,
)
from .powerflow import (
    PowerFlowError,
    ac_flow,
    build_h_dc,
    dc_flow,
    noise_scales,
    sample_loads,
)

ATTACKS = ("none", "full", "blind", "clustered", "replay")
MTDS = ("none", "switch", "perturb", "watermark")
DETECTORS = ("auto", "instant", "cusum")
REPORT_COLUMNS = (
    "scenario_id", "case", "mode", "attack", "mtd", "nlp", "trial", "residual",
    "threshold", "instant_alarm", "cusum_stat", "cusum_alarm", "abstained",
)  # fmt: skip
CURVE_COLUMNS = ("nlp", "detection_probability", "trials", "abstentions")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str = "scenario"
    case: str = "case14"
    mode: str = "dc"
    attack: str = "none"
    mtd: str = "none"
    nlp: int = 0
    perturb_fraction: float = 0.10
    watermark_p: float = 0.01
    noise_ratio: float = 0.01
    load_variance: float = 0.001
    bucket_count: int = 0
    observations: int = 250
    trials: int = 500
    alpha: float = 0.99
    detector: str = "auto"
    cusum_window: int = 10
    cusum_bound: float = 2.0
    cusum_calibration: int = 100
    cusum_horizon: int = 60
    attack_start: int = 30
    attack_angle_deg: float = 20.0
    latent_dim: int = 0  # 0: number of buses with demand, capped by the state dimension
    min_cluster: int = 0  # 0: max(50, 3 * latent dimension)
    tsne_perplexity: float = 30.0
    tsne_iterations: int = 500
    tsne_exaggeration_iters: int = 125
    dbscan_min_pts: int = 5
    dbscan_eps: float = 0.0  # 0: elbow estimate
    master_seed: int = 0
    workers: int = 1

    def validate(self) -> ScenarioConfig:
        if self.mode not in ("dc", "ac"):
            raise ConfigError(f"mode must be dc or ac, not {self.mode!r}")
        if self.attack not in ATTACKS:
            raise ConfigError(f"attack must be one of {ATTACKS}")
        if self.mtd not in MTDS:
            raise ConfigError(f"mtd must be one of {MTDS}")
        if self.detector not in DETECTORS:
            raise ConfigError(f"detector must be one of {DETECTORS}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.nlp < 0 or (self.mtd == "none" and self.nlp != 0):
            raise ConfigError("nlp must be 0 without MTD and non-negative otherwise")
        if self.mtd != "none" and self.nlp == 0:
            raise ConfigError("an MTD scenario needs nlp >= 1")
        if not 0 <= self.perturb_fraction < 1 or self.watermark_p < 0:
            raise ConfigError("perturb_fraction must lie in [0, 1) and watermark_p >= 0")
        if self.noise_ratio < 0 or self.load_variance < 0:
            raise ConfigError("noise_ratio and load_variance must be non-negative")
        if self.attack in ("blind", "clustered") and self.observations < attacks.MIN_OBSERVATIONS:
            raise ConfigError(f"blind attacks need observations >= {attacks.MIN_OBSERVATIONS}")
        if self.observations < 2:
            raise ConfigError("observations must be at least 2")
        if self.bucket_count < 0 or self.cusum_window < 1 or self.workers < 1:
            raise ConfigError("bucket_count, cusum_window and workers out of range")
        if self.uses_cusum:
            if self.cusum_calibration < 10 * self.cusum_window:
                raise ConfigError("cusum_calibration must be at least 10 windows")
            if not 0 <= self.attack_start < self.cusum_horizon:
                raise ConfigError("attack_start must fall inside the monitoring horizon")
        return self

    @property
    def uses_cusum(self) -> bool:
        if self.detector == "auto":
            return self.mtd == "watermark"
        return self.detector == "cusum"

    def tsne_params(self) -> TsneParams:
        return TsneParams(
            perplexity=self.tsne_perplexity,
            iterations=self.tsne_iterations,
            exaggeration_iters=self.tsne_exaggeration_iters,
            momentum_switch=self.tsne_exaggeration_iters,
        )

    def dbscan_params(self) -> DbscanParams:
        return DbscanParams(self.dbscan_min_pts, self.dbscan_eps or None)


def _coerce(kind, text: str):
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return str(text)


def apply_overrides(config: ScenarioConfig, pairs: dict[str, str]) -> ScenarioConfig:
    types = {f.name: f.type for f in fields(ScenarioConfig)}
    values = {}
    for key, text in pairs.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _coerce(types[key], text)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {text!r}") from None
    return replace(config, **values).validate()


def parse_config(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> ScenarioConfig:
    pairs = parse_config(Path(path).read_text())
    pairs.update(overrides or {})
    return apply_overrides(ScenarioConfig(), pairs)


def dump_config(config: ScenarioConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(config).items())


# ------------------------------------------------------------ seeds


def trial_seed(master_seed: int, trial: int) -> int:
    digest = hashlib.sha256(f"{master_seed}:{trial}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def seed_fingerprint(master_seed: int) -> str:
    return hashlib.sha256(f"seed:{master_seed}".encode()).hexdigest()[:12]


# ------------------------------------------------------------ plant model


@lru_cache(maxsize=8)
def _base_case(name: str) -> NetworkCase:
    return load_case(name)


@dataclass
class Period:
    topology: int
    case: NetworkCase
    truth: np.ndarray
    measured: np.ndarray
    sigma: np.ndarray
    loads: LoadProfile


class Plant:
    """Generates per-period network states and meter readings for one trial."""

    def __init__(self, config: ScenarioConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.case = _base_case(config.case)
        self.base_loads = self.case.load_profile()
        self.lines = perturbable_lines(self.case)
        self._cache: dict[int, NetworkCase] = {0: self.case}

    def schedule(self, periods: int) -> np.ndarray:
        if self.config.mtd == "none":
            return np.zeros(periods, dtype=np.int64)
        return mtd_schedule(self.config.nlp, periods, self.rng, self.lines).topology_ids

    def topology(self, topology_id: int) -> NetworkCase:
        cfg = self.config
        if cfg.mtd == "watermark" and topology_id:
            g, _ = draw_watermark(1, cfg.watermark_p, self.rng)
            return perturb_admittance(self.case, self.lines[topology_id - 1], float(g[0]))
        if topology_id not in self._cache:
            line = self.lines[topology_id - 1]
            if cfg.mtd == "switch":
                self._cache[topology_id] = switch_line(self.case, line, False)
            else:
                self._cache[topology_id] = perturb_admittance(self.case, line, cfg.perturb_fraction)
        return self._cache[topology_id]

    def period(self, topology_id: int) -> Period:
        cfg = self.config
        case = self.topology(int(topology_id))
        loads = sample_loads(self.base_loads, cfg.load_variance, self.rng)
        flow = dc_flow if cfg.mode == "dc" else ac_flow
        _, truth = flow(case, loads)
        sigma = noise_scales(truth, cfg.noise_ratio)
        measured = truth.values + self.rng.normal(0.0, 1.0, size=sigma.size) * sigma
        return Period(int(topology_id), case, truth.values, measured, sigma, loads)

    def history(self, periods: int) -> list[Period]:
        return [self.period(t) for t in self.schedule(periods)]


class Defender:
    """Estimates each period against the topology actually in force."""

    def __init__(self, config: ScenarioConfig, case: NetworkCase):
        self.config = config
        n_state = case.n_bus - 1 if config.mode == "dc" else 2 * case.n_bus - 1
        m = case.n_branch + case.n_bus if config.mode == "dc" else 2 * case.n_branch + 3 * case.n_bus
        self.threshold = chi2_threshold(m, n_state, config.alpha, 1.0)
        self._h: dict[int, np.ndarray] = {}

    def residual(self, period: Period, measured: np.ndarray) -> tuple[float, bool]:
        """Noise-normalised residual and whether the estimator converged."""
        w = 1.0 / np.square(period.sigma)
        if self.config.mode == "dc":
            return WlsSolver(build_h_dc(period.case), w).weighted_residual(measured), True
        _, r, ok = ac_estimate(measured, period.case, w)
        return r, ok

    def alarm(self, residual: float, converged: bool) -> bool:
        return (not converged) or residual > self.threshold


# ------------------------------------------------------------ attacker


def latent_dimension(config: ScenarioConfig, case: NetworkCase, rows: int) -> int:
    k = config.latent_dim or int(np.count_nonzero(case.load_profile().p))
    return max(1, min(k, case.n_bus - 1, rows // 10))


def intent_bias(config: ScenarioConfig, case: NetworkCase) -> np.ndarray:
    """Measurement shift for a uniform bus-angle change of ``attack_angle_deg`` on the base topology."""
    h = build_h_dc(case).entries
    return h @ np.full(h.shape[1], math.radians(config.attack_angle_deg))


def _bucket_rows(config, history: Sequence[Period], rng) -> np.ndarray:
    if config.bucket_count <= 1:
        return np.arange(len(history))
    loads = np.array([p.loads.p for p in history])
    buckets = attacks.bucket_loads(loads, config.bucket_count, config.tsne_params(), rng)
    return np.flatnonzero(buckets.assignment == buckets.assignment[-1])


def mount_attack(config: ScenarioConfig, history: Sequence[Period], rng: np.random.Generator):
    """Bias vector for the final period of ``history``; raises AttackAbstained."""
    case = _base_case(config.case)
    m = history[-1].measured.size
    if config.attack == "none":
        return np.zeros(m), None
    if config.attack == "full":
        if config.mode != "dc":
            raise ConfigError("the full-knowledge attack is defined for the DC model")
        return intent_bias(config, case), None
    keep = _bucket_rows(config, history, rng)
    obs = ObservationSet(np.array([history[i].measured for i in keep]), keep)
    if config.attack == "replay":
        flat = ClusterLabeling(np.zeros(len(obs), dtype=int), 1, np.ones(len(obs), dtype=bool))
        return attacks.replay_attack(obs, flat, rng).bias, None
    labels = None
    if config.attack == "clustered":
        labels, _ = attacks.cluster_observations(obs, config.tsne_params(), config.dbscan_params(), rng)
        if config.mode == "ac":
            return attacks.replay_attack(obs, labels, rng).bias, labels
    target = intent_bias(config, case)
    if config.attack == "blind":
        k = latent_dimension(config, case, len(obs))
        vec = attacks.blind_ica_attack(obs, attacks.least_squares_shift(target), rng, components=k)
        return vec.bias, labels
    members = attacks.current_cluster(labels, 2)
    k = latent_dimension(config, case, members.size)
    min_cluster = config.min_cluster or attacks.default_min_cluster(k)
    vec = attacks.clustered_blind_attack(
        obs,
        config.tsne_params(),
        config.dbscan_params(),
        attacks.least_squares_shift(target),
        min_cluster,
        rng,
        components=k,
        labels=labels,
    )
    return vec.bias, labels


# ------------------------------------------------------------ trials


@dataclass(frozen=True)
class TrialResult:
    trial: int
    residual: float
    threshold: float
    instant_alarm: bool
    cusum_stat: float | None
    cusum_alarm: bool | None
    abstained: bool
    current_topology: int
    latency: int | None = None
    wrong_cluster: bool | None = None

    @property
    def detected(self) -> bool:
        return bool(self.cusum_alarm) if self.cusum_alarm is not None else self.instant_alarm


def _trial_rng(config: ScenarioConfig, trial: int) -> np.random.Generator:
    return np.random.default_rng(trial_seed(config.master_seed, trial))


def _matched_topology(labels: ClusterLabeling | None, history: Sequence[Period]) -> bool | None:
    if labels is None:
        return None
    label = labels.labels[-1]
    if label < 0:
        return None
    topo = np.array([p.topology for p in history])[labels.labels == label]
    return bool(np.bincount(topo).argmax() != history[-1].topology)


def run_trial(config: ScenarioConfig, trial: int) -> TrialResult:
    rng = _trial_rng(config, trial)
    plant = Plant(config, rng)
    defender = Defender(config, plant.case)
    history = plant.history(config.observations + 1)
    current = history[-1]
    abstained = False
    labels = None
    try:
        bias, labels = mount_attack(config, history, rng)
    except AttackAbstained:
        abstained = True
        bias = np.zeros_like(current.measured)
    wrong = _matched_topology(labels, history)
    if not config.uses_cusum:
        try:
            r, ok = defender.residual(current, current.measured + bias)
        except PowerFlowError:
            r, ok = float("inf"), False
        alarm = defender.alarm(r, ok) and not abstained
        return TrialResult(trial, r, defender.threshold, alarm, None, None, abstained, current.topology, None, wrong)

    # CUSUM regime: calibrate on attack-free periods, then monitor with the attack switched on.
    calib = []
    for t in plant.schedule(config.cusum_calibration):
        p = plant.period(t)
        calib.append(defender.residual(p, p.measured)[0])
    monitor = calibrate_cusum(calib, config.cusum_window, config.cusum_bound)
    first_residual = float("nan")
    instant = False
    peak = 0.0
    latency = None
    for step, t in enumerate(plant.schedule(config.cusum_horizon)):
        p = plant.period(t)
        attacked = step >= config.attack_start and not abstained
        z = p.measured + bias if attacked else p.measured
        r, ok = defender.residual(p, z)
        stat, alarm = cusum_update(monitor, r)
        if step >= config.attack_start:
            if step == config.attack_start:
                first_residual = r
                instant = defender.alarm(r, ok) and not abstained
            peak = max(peak, stat)
            if alarm and latency is None and not abstained:
                latency = step - config.attack_start + 1
    return TrialResult(
        trial,
        first_residual,
        defender.threshold,
        instant,
        peak,
        latency is not None,
        abstained,
        current.topology,
        latency,
        wrong,
    )


def _run_chunk(args) -> list[TrialResult]:
    config, trials = args
    return [run_trial(config, t) for t in trials]


def run_trials(config: ScenarioConfig, trials: Iterable[int] | None = None) -> list[TrialResult]:
    config.validate()
    ids = list(range(config.trials)) if trials is None else list(trials)
    if config.workers <= 1 or len(ids) < 2:
        return [run_trial(config, t) for t in ids]
    chunks = [ids[i :: config.workers] for i in range(config.workers)]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        parts = list(pool.map(_run_chunk, [(config, c) for c in chunks]))
    results = [r for part in parts for r in part]
    return sorted(results, key=lambda r: r.trial)


# ------------------------------------------------------------ reports


@dataclass(frozen=True)
class ExperimentReport:
    config: ScenarioConfig
    results: tuple[TrialResult, ...]
    seed_fingerprint: str = field(default="")

    @property
    def abstentions(self) -> int:
        return sum(r.abstained for r in self.results)

    @property
    def counted(self) -> int:
        return len(self.results) - self.abstentions

    @property
    def detections(self) -> int:
        return sum(r.detected for r in self.results if not r.abstained)

    @property
    def detection_probability(self) -> float:
        return self.detections / self.counted if self.counted else float("nan")

    def to_csv(self) -> str:
        return report_csv([self])


def run_scenario(config: ScenarioConfig) -> ExperimentReport:
    results = run_trials(config)
    return ExperimentReport(config, tuple(results), seed_fingerprint(config.master_seed))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, float):
        return "inf" if math.isinf(value) else ("nan" if math.isnan(value) else f"{value:.10g}")
    return str(value)


def report_csv(reports: Sequence[ExperimentReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for rep in reports:
        c = rep.config
        for r in rep.results:
            writer.writerow(
                [
                    c.scenario_id, c.case, c.mode, c.attack, c.mtd, c.nlp, r.trial,
                    _fmt(r.residual), _fmt(r.threshold), _fmt(r.instant_alarm),
                    _fmt(r.cusum_stat), _fmt(r.cusum_alarm), _fmt(r.abstained),
                ]
            )  # fmt: skip
    return buf.getvalue()


def detection_curve(reports: Sequence[ExperimentReport]) -> list[tuple[int, float, int, int]]:
    """One (nlp, detection probability, trials, abstentions) row per report, by nlp."""
    if not reports:
        return []
    ref = replace(reports[0].config, nlp=0, scenario_id="")
    for rep in reports[1:]:
        if replace(rep.config, nlp=0, scenario_id="") != ref:
            raise ConfigError("detection_curve needs reports that differ only in nlp")
    rows = [(r.config.nlp, r.detection_probability, len(r.results), r.abstentions) for r in reports]
    return sorted(rows, key=lambda row: row[0])


def curve_csv(rows: Sequence[tuple[int, float, int, int]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    for nlp, prob, trials, abst in rows:
        writer.writerow([nlp, _fmt(float(prob)), trials, abst])
    return buf.getvalue()


def sweep(config: ScenarioConfig, nlps: Sequence[int]) -> list[ExperimentReport]:
    return [run_scenario(replace(config, nlp=n, scenario_id=f"{config.scenario_id}-nlp{n}")) for n in nlps]


def cusum_latency(config: ScenarioConfig) -> tuple[list[int | None], int]:
    """Periods from attack start to first CUSUM alarm per trial (None if censored)."""
    cfg = replace(config, detector="cusum").validate()
    if cfg.attack_start >= cfg.cusum_horizon:
        raise ConfigError("attack start beyond horizon")
    results = run_trials(cfg)
    latencies = [r.latency for r in results if not r.abstained]
    return latencies, sum(r.abstained for r in results)


def wrong_cluster_rate(config: ScenarioConfig, observation_counts: Sequence[int]) -> list[tuple[int, float, int]]:
    """(observations, wrong-cluster probability, clustered trials) for each history length."""
    rows = []
    for count in observation_counts:
        cfg = replace(config, observations=int(count), attack="clustered").validate()
        results = run_trials(cfg)
        judged = [r.wrong_cluster for r in results if r.wrong_cluster is not None]
        rate = float(np.mean(judged)) if judged else float("nan")
        rows.append((int(count), rate, len(judged)))
    return rows
