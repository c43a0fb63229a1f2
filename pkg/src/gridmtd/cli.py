"""Command-line entry point: run, sweep, inspect, cluster-demo, cusum-demo."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .attacks import ObservationSet, cluster_observations
from .casefile import CaseError, load_case
from .estimator import calibrate_cusum, cusum_update
from .harness import ConfigError, Defender, Plant, ScenarioConfig
from .powerflow import ac_meters, dc_meters

VERBS = ("run", "sweep", "inspect", "cluster-demo", "cusum-demo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gridmtd", description="Moving target defence and blind FDI attack simulator.")
    p.add_argument("verb", help=" | ".join(VERBS))
    p.add_argument("target", nargs="?", help="case name or path (inspect only)")
    p.add_argument("--config", type=Path, help="flat key = value scenario file")
    p.add_argument("--out", type=Path, help="output file (default: standard output)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--nlp", default="1..16", help="sweep range, e.g. 1..16 or 1,2,4")
    return p


def _overrides(args) -> dict[str, str]:
    pairs = {}
    for item in args.overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    if args.trials is not None:
        pairs["trials"] = str(args.trials)
    if args.seed is not None:
        pairs["master_seed"] = str(args.seed)
    return pairs


def _config(args, required: bool, extra: dict[str, str] | None = None) -> ScenarioConfig:
    pairs = {**(extra or {}), **_overrides(args)}
    if args.config is None:
        if required:
            raise UsageError(f"{args.verb} needs --config")
        return harness.apply_overrides(ScenarioConfig(), pairs)
    if not args.config.is_file():
        raise UsageError(f"config file not found: {args.config}")
    return harness.load_config(args.config, pairs)


def _nlp_range(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"bad nlp range {text!r}") from None


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_run(args) -> None:
    report = harness.run_scenario(_config(args, True))
    _emit(report.to_csv(), args.out)
    print(
        f"{report.config.scenario_id}: detection {report.detection_probability:.4f} "
        f"over {report.counted} trials, {report.abstentions} abstentions, seed {report.seed_fingerprint}",
        file=sys.stderr,
    )


def cmd_sweep(args) -> None:
    nlps = _nlp_range(args.nlp)
    # The swept value replaces any nlp in the file; seed it so validation sees a legal count.
    cfg = _config(args, True, {"nlp": str(nlps[0])})
    reports = harness.sweep(cfg, nlps)
    _emit(harness.curve_csv(harness.detection_curve(reports)), args.out)


def cmd_inspect(args) -> None:
    if not args.target:
        raise UsageError("inspect needs a case name or path")
    case = load_case(args.target)
    print(f"{case.n_bus} buses, {case.n_branch} branches, {len(dc_meters(case))} meters (DC)")
    print(f"AC meters: {len(ac_meters(case))}; slack bus {case.slack_bus}; base {case.base_power:g} MVA")


def cmd_cluster_demo(args) -> None:
    """Embed one trial's observation history and write x, y, topology, cluster label."""
    cfg = _config(args, False)
    rng = np.random.default_rng(harness.trial_seed(cfg.master_seed, 0))
    plant = Plant(cfg, rng)
    history = plant.history(cfg.observations)
    obs = ObservationSet.from_rows([p.measured for p in history])
    labels, points = cluster_observations(obs, cfg.tsne_params(), cfg.dbscan_params(), rng)
    rows = [
        (f"{x:.6g}", f"{y:.6g}", p.topology, int(lab))
        for (x, y), p, lab in zip(points, history, labels.labels)
    ]
    _emit(_rows_csv(("x", "y", "topology", "cluster"), rows), args.out)


def cmd_cusum_demo(args) -> None:
    """Residual and CUSUM trace of one attacked monitoring run."""
    cfg = replace(_config(args, False), detector="cusum").validate()
    rng = np.random.default_rng(harness.trial_seed(cfg.master_seed, 0))
    plant = Plant(cfg, rng)
    defender = Defender(cfg, plant.case)
    history = plant.history(cfg.observations + 1)
    bias, _ = harness.mount_attack(cfg, history, rng)
    calib = []
    for t in plant.schedule(cfg.cusum_calibration):
        p = plant.period(t)
        calib.append(defender.residual(p, p.measured)[0])
    monitor = calibrate_cusum(calib, cfg.cusum_window, cfg.cusum_bound)
    rows = []
    for step, t in enumerate(plant.schedule(cfg.cusum_horizon)):
        p = plant.period(t)
        attacked = step >= cfg.attack_start
        r, _ = defender.residual(p, p.measured + bias if attacked else p.measured)
        stat, alarm = cusum_update(monitor, r)
        rows.append((step, int(attacked), f"{r:.6g}", f"{stat:.6g}", f"{monitor.upper_limit:.6g}", int(alarm)))
    _emit(_rows_csv(("period", "attacked", "residual", "cusum_stat", "limit", "alarm"), rows), args.out)


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "inspect": cmd_inspect,
    "cluster-demo": cmd_cluster_demo,
    "cusum-demo": cmd_cusum_demo,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
        if args.verb not in COMMANDS:
            raise UsageError(f"unknown verb {args.verb!r}; expected one of {', '.join(VERBS)}")
        COMMANDS[args.verb](args)
    except (UsageError, ConfigError, CaseError) as exc:
        print(f"gridmtd: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"gridmtd: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
