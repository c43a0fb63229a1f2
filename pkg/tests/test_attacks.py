from dataclasses import replace

import numpy as np
import pytest

from gridmtd.attacks import (
    AttackAbstained,
    ObservationSet,
    blind_ica_attack,
    bucket_loads,
    cluster_observations,
    clustered_blind_attack,
    full_knowledge_attack,
    load_variation,
    replay_attack,
)
from gridmtd.casefile import load_case
from gridmtd.estimator import WlsSolver, chi2_threshold
from gridmtd.harness import (
    Defender,
    Period,
    Plant,
    ScenarioConfig,
    intent_bias,
    mount_attack,
    run_scenario,
)
from gridmtd.learning import NOISE, ClusterLabeling, TsneParams
from gridmtd.mtd import perturb_admittance, switch_line
from gridmtd.powerflow import ac_flow, build_h_dc, dc_flow, noise_scales, sample_loads

DC = ScenarioConfig(case="case14", mode="dc")


@pytest.fixture(scope="module")
def case14():
    return load_case("case14")


def flat_labels(n):
    return ClusterLabeling(np.zeros(n, dtype=int), 1, np.ones(n, dtype=bool))


def laplace_history(rng, rows=300, meters=12):
    return ObservationSet.from_rows(rng.laplace(size=(rows, 4)) @ rng.normal(size=(4, meters)))


# ------------------------------------------------------------ full knowledge


def test_full_knowledge_examples(case14):
    h = build_h_dc(case14)
    assert np.all(full_knowledge_attack(h, np.zeros(13)).bias == 0)
    unit = full_knowledge_attack(np.eye(3), np.array([0.0, 1.0, 0.0]))
    assert unit.bias.tolist() == [0.0, 1.0, 0.0] and unit.provenance == "full_knowledge"


def test_full_knowledge_leaves_residual_unchanged(case14):
    rng = np.random.default_rng(0)
    h = build_h_dc(case14)
    for _ in range(100):
        _, truth = dc_flow(case14, sample_loads(case14.load_profile(), 0.01, rng))
        sigma = noise_scales(truth, 0.01)
        z = truth.values + rng.normal(size=sigma.size) * sigma
        solver = WlsSolver(h.entries, 1 / sigma**2)
        attacked = z + full_knowledge_attack(h, rng.normal(0, 0.3, 13)).bias
        before = solver.residual(z)
        assert abs(solver.residual(attacked) - before) <= 1e-9 * before


# ------------------------------------------------------------ blind ICA


def test_zero_shift_gives_zero_bias():
    rng = np.random.default_rng(1)
    vec = blind_ica_attack(laplace_history(rng), np.zeros(4), rng)
    assert np.all(vec.bias == 0) and vec.provenance == "blind"


def test_bias_lies_in_mixing_column_space():
    rng = np.random.default_rng(2)
    vec = blind_ica_attack(laplace_history(rng), rng.normal(size=4), rng)
    coef = np.linalg.lstsq(vec.basis, vec.bias, rcond=None)[0]
    assert np.allclose(vec.basis @ coef, vec.bias, atol=1e-10)


def test_blind_preconditions():
    rng = np.random.default_rng(3)
    obs = laplace_history(rng)
    with pytest.raises(ValueError, match="observations"):
        blind_ica_attack(obs.subset(np.arange(100)), np.ones(4), rng)
    with pytest.raises(ValueError, match="state dimension"):
        blind_ica_attack(obs, np.ones(4), rng, state_dim=3)


def test_blind_determinism():
    obs = laplace_history(np.random.default_rng(4))
    a = blind_ica_attack(obs, np.ones(4), np.random.default_rng(9)).bias
    b = blind_ica_attack(obs, np.ones(4), np.random.default_rng(9)).bias
    assert np.array_equal(a, b)


@pytest.mark.slow
def test_blind_attack_evades_static_detector():
    report = run_scenario(replace(DC, attack="blind", mtd="none", trials=100, master_seed=11))
    assert report.detection_probability <= 0.10


@pytest.mark.slow
def test_blind_attack_caught_by_admittance_perturbation(case14):
    cfg = replace(DC, attack="blind", mtd="none").validate()
    perturbed = perturb_admittance(case14, case14.branch_index(1, 2), 0.10)
    h_new = build_h_dc(perturbed).entries
    eta = chi2_threshold(34, 13, 0.99)
    caught = 0
    for trial in range(30):
        rng = np.random.default_rng(100 + trial)
        history = Plant(cfg, rng).history(250)
        bias, _ = mount_attack(cfg, history, rng)
        _, truth = dc_flow(perturbed, sample_loads(case14.load_profile(), cfg.load_variance, rng))
        sigma = noise_scales(truth, cfg.noise_ratio)
        z = truth.values + rng.normal(size=sigma.size) * sigma
        caught += WlsSolver(h_new, 1 / sigma**2).weighted_residual(z + bias) > eta
    assert caught / 30 >= 0.90


# ------------------------------------------------------------ clustered blind ICA


def test_single_cluster_matches_blind_attack():
    obs = laplace_history(np.random.default_rng(5))
    params = TsneParams(perplexity=30.0, iterations=0)
    got = clustered_blind_attack(
        obs, params, None, np.ones(4), 10, np.random.default_rng(6), labels=flat_labels(len(obs))
    )
    want = blind_ica_attack(obs, np.ones(4), np.random.default_rng(6))
    assert np.array_equal(got.bias, want.bias) and got.provenance == "clustered_blind"


def test_single_topology_history_forms_one_cluster():
    cfg = replace(DC, observations=250).validate()
    rng = np.random.default_rng(7)
    history = Plant(cfg, rng).history(250)
    labels, _ = cluster_observations(
        ObservationSet.from_rows([p.measured for p in history]), cfg.tsne_params(), cfg.dbscan_params(), rng
    )
    assert labels.cluster_count == 1


def test_trains_only_on_current_cluster():
    obs = laplace_history(np.random.default_rng(8))
    lab = np.where(np.arange(len(obs)) % 3 == 0, 1, 0)
    lab[-1] = 0
    labels = ClusterLabeling(lab, 2, np.ones(len(obs), dtype=bool))
    vec = clustered_blind_attack(obs, None, None, np.ones(4), 10, np.random.default_rng(0), labels=labels)
    assert np.array_equal(vec.support, obs.sequence[lab == 0])


def test_noise_and_small_cluster_abstain():
    obs = laplace_history(np.random.default_rng(9))
    lab = np.zeros(len(obs), dtype=int)
    lab[-1] = NOISE
    with pytest.raises(AttackAbstained, match="noise"):
        clustered_blind_attack(
            obs, None, None, np.ones(4), 10, np.random.default_rng(0), labels=ClusterLabeling(lab, 1, lab == 0)
        )
    lab[-5:] = 1
    with pytest.raises(AttackAbstained, match="need 50"):
        clustered_blind_attack(
            obs, None, None, np.ones(4), None, np.random.default_rng(0), labels=ClusterLabeling(lab, 2, lab >= 0)
        )


# ------------------------------------------------------------ replay


def test_two_row_cluster_replays_the_other_row():
    rows = np.arange(12, dtype=float).reshape(4, 3)
    obs = ObservationSet.from_rows(rows)
    labels = ClusterLabeling(np.array([1, 0, 1, 0]), 2, np.ones(4, dtype=bool))
    for seed in range(5):
        vec = replay_attack(obs, labels, np.random.default_rng(seed))
        assert np.array_equal(obs.current + vec.bias, rows[1])
    lonely = ClusterLabeling(np.array([0, 0, 0, 1]), 2, np.ones(4, dtype=bool))
    with pytest.raises(AttackAbstained):
        replay_attack(obs, lonely, np.random.default_rng(0))


def _ac_replay_flags(case14, stale_case, trials, seed):
    cfg = replace(DC, mode="ac").validate()
    defender = Defender(cfg, case14)
    rng = np.random.default_rng(seed)
    flagged = 0
    for _ in range(trials):
        rows = []
        for source in (stale_case, stale_case, case14):
            _, truth = ac_flow(source, sample_loads(case14.load_profile(), cfg.load_variance, rng))
            sigma = noise_scales(truth, cfg.noise_ratio)
            rows.append(truth.values + rng.normal(size=sigma.size) * sigma)
        obs = ObservationSet.from_rows(rows)
        replayed = obs.current + replay_attack(obs, flat_labels(3), rng).bias
        period = Period(0, case14, truth.values, rows[-1], sigma, None)
        r, ok = defender.residual(period, replayed)
        flagged += defender.alarm(r, ok)
    return flagged / trials


@pytest.mark.slow
def test_same_topology_ac_replay_passes(case14):
    assert _ac_replay_flags(case14, case14, 40, 12) < 0.5


@pytest.mark.slow
def test_cross_topology_ac_replay_is_flagged(case14):
    stale = switch_line(case14, case14.branch_index(1, 2), False)
    assert _ac_replay_flags(case14, stale, 40, 13) > 0.5


# ------------------------------------------------------------ load bucketing


def _load_draws(case14, variation, count, seed):
    rng = np.random.default_rng(seed)
    return np.array([sample_loads(case14.load_profile(), variation, rng).p for _ in range(count)])


def test_single_bucket_is_trivial(case14):
    loads = _load_draws(case14, 0.10, 50, 0)
    buckets = bucket_loads(loads, 1, TsneParams(perplexity=10.0, iterations=50), np.random.default_rng(0))
    assert np.all(buckets.assignment == 0) and buckets.centers.shape == (1, 2)
    cfg = replace(DC, attack="replay", bucket_count=1).validate()
    history = Plant(cfg, np.random.default_rng(1)).history(20)
    a, _ = mount_attack(cfg, history, np.random.default_rng(2))
    b, _ = mount_attack(replace(cfg, bucket_count=0), history, np.random.default_rng(2))
    assert np.array_equal(a, b)


def test_too_few_load_observations(case14):
    with pytest.raises(ValueError, match="at least 250"):
        bucket_loads(_load_draws(case14, 0.1, 100, 0), 25, TsneParams(), np.random.default_rng(0))


@pytest.mark.slow
def test_partition_cannot_raise_small_spread(case14):
    loads = _load_draws(case14, 0.001, 500, 3)
    nominal = case14.load_profile().p
    buckets = bucket_loads(loads, 9, TsneParams(perplexity=30.0, iterations=300), np.random.default_rng(4))
    inside = load_variation(loads, nominal, buckets.assignment)
    assert inside <= 0.001 * 1.05 and inside <= load_variation(loads, nominal)


def test_intent_bias_matches_full_knowledge(case14):
    cfg = DC.validate()
    c = np.full(13, np.radians(20.0))
    assert np.allclose(intent_bias(cfg, case14), full_knowledge_attack(build_h_dc(case14), c).bias)
