from dataclasses import replace

import numpy as np
import pytest

from gridmtd.harness import (
    CURVE_COLUMNS,
    REPORT_COLUMNS,
    ConfigError,
    ExperimentReport,
    ScenarioConfig,
    TrialResult,
    apply_overrides,
    curve_csv,
    cusum_latency,
    detection_curve,
    dump_config,
    load_config,
    parse_config,
    run_scenario,
    run_trial,
    run_trials,
    trial_seed,
    wrong_cluster_rate,
)

QUIET = ScenarioConfig(case="case14", mode="dc", observations=2)


# ------------------------------------------------------------ configuration


def test_parse_config_skips_comments_and_blanks():
    text = "# scenario\nattack = blind\n\nmtd=switch   # trailing\nnlp = 3\n"
    assert parse_config(text) == {"attack": "blind", "mtd": "switch", "nlp": "3"}


def test_parse_config_rejects_bare_words():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("attack = none\nbogus\n")


@pytest.mark.parametrize(
    "pairs, message",
    [
        ({"colour": "red"}, "unknown"),
        ({"nlp": "three"}, "bad value"),
        ({"mode": "hvdc"}, "mode"),
        ({"attack": "dos"}, "attack"),
        ({"mtd": "switch", "nlp": "0"}, "nlp"),
        ({"alpha": "1.0"}, "alpha"),
        ({"attack": "blind", "observations": "100"}, "observations"),
        ({"mtd": "watermark", "nlp": "2", "attack_start": "80"}, "attack_start"),
    ],
)
def test_invalid_configs(pairs, message):
    with pytest.raises(ConfigError, match=message):
        apply_overrides(ScenarioConfig(), pairs)


def test_overrides_take_precedence(tmp_path):
    path = tmp_path / "s.cfg"
    path.write_text("attack = blind\nmtd = switch\nnlp = 4\n")
    cfg = load_config(path, {"nlp": "7"})
    assert (cfg.attack, cfg.mtd, cfg.nlp) == ("blind", "switch", 7)


def test_dump_round_trip(tmp_path):
    cfg = ScenarioConfig(attack="clustered", mtd="perturb", nlp=5, perturb_fraction=0.05)
    path = tmp_path / "d.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_cusum_selection():
    assert ScenarioConfig(mtd="watermark", nlp=1).uses_cusum
    assert not ScenarioConfig(mtd="perturb", nlp=1).uses_cusum
    assert ScenarioConfig(mtd="none", detector="cusum").uses_cusum


# ------------------------------------------------------------ seeds and determinism


def test_trial_seeds_are_stable_and_distinct():
    assert trial_seed(0, 1) == trial_seed(0, 1)
    seeds = {trial_seed(m, t) for m in range(3) for t in range(200)}
    assert len(seeds) == 600


def test_trial_independent_of_batch():
    cfg = replace(QUIET, trials=6, master_seed=5)
    batch = run_trials(cfg)
    assert run_trial(cfg, 4) == batch[4]
    assert run_trials(cfg, [4, 2]) == [batch[4], batch[2]]
    assert len({r.residual for r in batch}) == 6


def test_parallel_report_is_byte_identical():
    cfg = replace(QUIET, trials=8, master_seed=9)
    serial = run_scenario(cfg).to_csv()
    assert run_scenario(replace(cfg, workers=2)).to_csv() == serial


# ------------------------------------------------------------ scenarios


def test_no_attack_false_alarm_rate():
    report = run_scenario(replace(QUIET, trials=1000, master_seed=1))
    assert report.abstentions == 0
    assert report.detection_probability <= 0.02


@pytest.mark.slow
def test_blind_attack_against_single_switched_line():
    report = run_scenario(ScenarioConfig(attack="blind", mtd="switch", nlp=1, trials=50, master_seed=2))
    assert report.detection_probability >= 0.98


def test_report_invariants():
    results = (
        TrialResult(0, 1.0, 6.0, False, None, None, False, 0),
        TrialResult(1, 9.0, 6.0, True, None, None, False, 1),
        TrialResult(2, 0.0, 6.0, False, None, None, True, 0),
        TrialResult(3, 2.0, 6.0, False, 5.0, True, False, 0),
    )
    rep = ExperimentReport(QUIET, results)
    assert rep.abstentions == 1 and rep.counted == 3
    assert rep.detections == 2 and rep.detection_probability == pytest.approx(2 / 3)
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS) and len(lines) == 5
    assert lines[3].endswith(",,,1") and lines[4].endswith(",5,1,0")


def test_all_abstained_gives_nan():
    rep = ExperimentReport(QUIET, (TrialResult(0, 0.0, 6.0, False, None, None, True, 0),))
    assert np.isnan(rep.detection_probability)


# ------------------------------------------------------------ curves


def _report(nlp, detected, **changes):
    cfg = replace(QUIET, mtd="switch", nlp=nlp, **changes)
    return ExperimentReport(cfg, (TrialResult(0, 1.0, 6.0, detected, None, None, False, 0),))


def test_detection_curve_rows_sorted_by_nlp():
    assert detection_curve([_report(3, True)]) == [(3, 1.0, 1, 0)]
    rows = detection_curve([_report(5, False), _report(2, True)])
    assert [r[0] for r in rows] == [2, 5]
    text = curve_csv(rows).splitlines()
    assert text[0] == ",".join(CURVE_COLUMNS) and text[1] == "2,1,1,0"


def test_detection_curve_rejects_mixed_configs():
    with pytest.raises(ConfigError):
        detection_curve([_report(1, True), _report(2, True, noise_ratio=0.02)])


# ------------------------------------------------------------ CUSUM latency and wrong cluster


def test_zero_magnitude_attack_is_censored():
    cfg = ScenarioConfig(attack="full", mtd="watermark", nlp=14, attack_angle_deg=0.0, observations=2, trials=40)
    latencies, abstained = cusum_latency(cfg)
    assert abstained == 0
    assert sum(lat is None for lat in latencies) / len(latencies) >= 0.95


def test_latency_counts_from_attack_start():
    cfg = ScenarioConfig(attack="full", mtd="watermark", nlp=14, observations=2, trials=5)
    latencies, _ = cusum_latency(cfg)
    assert len(latencies) == 5
    assert all(1 <= lat <= cfg.cusum_horizon - cfg.attack_start for lat in latencies if lat is not None)


@pytest.mark.slow
def test_single_topology_never_picks_wrong_cluster():
    cfg = ScenarioConfig(mode="ac", mtd="none", trials=5, master_seed=3)
    [(count, rate, judged)] = wrong_cluster_rate(cfg, [250])
    assert count == 250 and judged > 0 and rate == 0.0


@pytest.mark.slow
def test_wrong_cluster_rate_non_decreasing_in_lines():
    cfg = ScenarioConfig(mode="ac", mtd="perturb", trials=20, master_seed=4)
    low = wrong_cluster_rate(replace(cfg, nlp=2), [250])[0][1]
    high = wrong_cluster_rate(replace(cfg, nlp=16), [250])[0][1]
    assert high >= low
