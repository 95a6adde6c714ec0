"""Acceptance gate: eight end-to-end criteria, one pass/fail line each.

Run with ``pytest -v tests/test_acceptance.py`` (each criterion is one
test) or with ``-s`` to see the printed ACCEPTANCE lines as well.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from clusterdl import fairness as fm
from clusterdl import theory as th
from clusterdl import tinynet
from clusterdl.dataset import ClusterSpec, build_clustered_data
from clusterdl.params import ParamVector, assemble
from clusterdl.protocols import (
    TOPOLOGY_TAG,
    ProtocolConfig,
    el_round,
    facade_round,
    init_states,
    run,
)
from clusterdl.topology import gen_r_regular


def _report(num: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} — {detail}", flush=True)
    assert ok, f"criterion {num} failed: {detail}"


@pytest.fixture(scope="module")
def desk_data():
    """n=16 nodes in a 12:4 cluster split with rotated features."""
    spec = ClusterSpec((12, 4), (0, 1))
    arch = tinynet.Architecture(16, (32,), 4)
    datasets, test_sets = build_clustered_data(spec, 4, 16, 200, 120, seed=0)
    return spec, arch, datasets, test_sets


# --------------------------------------------------------------------- 1

def test_criterion_1_single_head_equals_gossip_baseline(desk_data):
    spec, arch, datasets, test_sets = desk_data
    t0 = time.monotonic()
    cfg_f = ProtocolConfig("facade", k=1, eta=0.05, local_steps=10,
                           batch_size=8, rounds=50, degree=4,
                           warmup_rounds=20, eval_every=10, seed=3)
    cfg_e = replace(cfg_f, algorithm="el")
    states_f = init_states(cfg_f, datasets, arch)
    states_e = init_states(cfg_e, datasets, arch)
    max_diff = 0.0
    losses_equal = True
    for t in range(cfg_f.rounds):
        topo = gen_r_regular(
            spec.num_nodes, cfg_f.degree,
            np.random.SeedSequence([cfg_f.seed, TOPOLOGY_TAG, t]), round_index=t,
        )
        states_f, rec_f = facade_round(states_f, topo, t, cfg_f)
        states_e, rec_e = el_round(states_e, topo, t, cfg_e)
        losses_equal &= rec_f.losses == rec_e.losses
        for sf, se in zip(states_f, states_e):
            diff = np.abs(
                assemble(sf.core, sf.head_bank[0]).values
                - assemble(se.core, se.head_bank[0]).values
            ).max()
            max_diff = max(max_diff, float(diff))
    acc_f = fm.per_cluster_accuracy(states_f, spec, test_sets, arch)
    acc_e = fm.per_cluster_accuracy(states_e, spec, test_sets, arch)
    elapsed = time.monotonic() - t0
    ok = max_diff <= 1e-12 and losses_equal and acc_f == acc_e and elapsed < 60
    _report(1, ok, f"max param diff {max_diff:.2e} over 50 rounds, "
                   f"loss streams {'identical' if losses_equal else 'DIFFER'}, "
                   f"{elapsed:.1f}s")


# --------------------------------------------------------------------- 2

def test_criterion_2_fair_accuracy_reproduces_reported_values():
    got_facade = fm.fair_accuracy([0.7332, 0.5996])
    got_el = fm.fair_accuracy([0.7199, 0.3877])
    ok = abs(got_facade - 0.7331) <= 1e-4 and abs(got_el - 0.5918) <= 1e-4
    _report(2, ok, f"fair accuracy {got_facade:.4f} (want 0.7331), "
                   f"{got_el:.4f} (want 0.5918)")


# --------------------------------------------------------------------- 3

def _central_difference(arch, params, batch, step=1e-4):
    grad = np.empty_like(params.values)
    for idx in range(params.values.size):
        up = params.values.copy()
        dn = params.values.copy()
        up[idx] += step
        dn[idx] -= step
        grad[idx] = (
            tinynet.batch_loss(arch, ParamVector(up, params.core_len), batch)
            - tinynet.batch_loss(arch, ParamVector(dn, params.core_len), batch)
        ) / (2 * step)
    return grad


def test_criterion_3_gradient_matches_finite_differences():
    arch = tinynet.Architecture(5, (6,), 3)
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        params = tinynet.init_params(arch, seed)
        batch = tinynet.Batch(
            rng.normal(size=(4, 5)), rng.integers(0, 3, size=4)
        )
        _, analytic = tinynet.loss_and_grad(arch, params, batch)
        numeric = _central_difference(arch, params, batch)
        denom = np.maximum(np.maximum(np.abs(analytic.values), np.abs(numeric)), 1e-4)
        worst = max(worst, float((np.abs(analytic.values - numeric) / denom).max()))
    ok = worst <= 1e-3
    _report(3, ok, f"worst relative gradient error {worst:.2e} over 20 pairs")


# --------------------------------------------------------------------- 4

def test_criterion_4_quadratic_contraction():
    t0 = time.monotonic()
    tparams = th.TheoryParams(Delta=4.0, p=0.25, eps=0.25)  # p = 1/4 from 3:1
    base = dict(k=2, sizes=(3, 1), Delta=4.0, dim=8, seed=7, offset_norm=0.0)
    cfg = ProtocolConfig("facade", k=2, eta=0.2, local_steps=2, batch_size=1,
                         rounds=60, degree=3, warmup_rounds=0,
                         eval_every=10**9, seed=0)

    exact = th.contraction_check(th.build_quadratic_network(noise=0.0, **base),
                                 cfg, tparams)
    truth = [0, 0, 0, 1]
    true_from_round_1 = all(sel == truth for sel in exact.selections)
    factor = (1 - cfg.eta) ** cfg.local_steps
    decay_err = max(
        abs(d - series[0] * factor**t)
        for series in exact.distances
        for t, d in enumerate(series)
    )

    horizon = tparams.settling_rounds()  # ceil(32 ln 32) = 111
    noisy_cfg = replace(cfg, rounds=horizon, seed=1)
    noisy = th.contraction_check(
        th.build_quadratic_network(noise=4.0 / 20, **base), noisy_cfg, tparams
    )
    terminal = all(
        noisy.distances[j][-1] <= tparams.eps + noisy.noise_floor[j]
        for j in range(2)
    )
    elapsed = time.monotonic() - t0
    ok = (true_from_round_1 and decay_err <= 1e-9 and exact.passed
          and terminal and noisy.passed and elapsed < 60)
    _report(4, ok, f"true clusters from round 1: {true_from_round_1}, "
                   f"decay error {decay_err:.1e}, noisy terminal within "
                   f"eps+floor at T={horizon}: {terminal}, {elapsed:.1f}s")


# --------------------------------------------------------------------- 5

def test_criterion_5_minority_cluster_benefit(desk_data):
    spec, arch, datasets, test_sets = desk_data
    t0 = time.monotonic()
    wins = 0
    margins = []
    for seed in range(1, 6):
        reports = {}
        for alg, k in (("facade", 2), ("el", 1)):
            cfg = ProtocolConfig(alg, k=k, eta=0.05, local_steps=10,
                                 batch_size=8, rounds=300, degree=4,
                                 warmup_rounds=20, eval_every=100, seed=seed)
            _, states = run(cfg, spec, datasets, test_sets, arch)
            reports[alg] = fm.fairness_report(states, spec, test_sets, arch)
        d_min = reports["facade"].acc_minority - reports["el"].acc_minority
        d_fair = reports["facade"].fair_acc - reports["el"].fair_acc
        margins.append((d_min, d_fair))
        wins += d_min >= 0.05 and d_fair > 0
    elapsed = time.monotonic() - t0
    ok = wins >= 4 and elapsed < 600
    pretty = ", ".join(f"{m:+.3f}/{f:+.3f}" for m, f in margins)
    _report(5, ok, f"{wins}/5 seeds with minority gain >= 5pp and fair-acc "
                   f"win (min/fair margins: {pretty}), {elapsed:.0f}s")


# --------------------------------------------------------------------- 6

def test_criterion_6_three_cluster_settlement():
    spec = ClusterSpec((8, 5, 2), (0, 1, 2))
    arch = tinynet.Architecture(16, (48,), 4)
    datasets, test_sets = build_clustered_data(spec, 4, 16, 200, 120, seed=0)
    settled = 0
    rounds_seen = []
    flags_consistent = True
    for seed in range(1, 11):
        cfg = ProtocolConfig("facade", k=3, eta=0.05, local_steps=10,
                             batch_size=24, rounds=120, degree=4,
                             warmup_rounds=20, eval_every=1000, seed=seed)
        _, states = run(cfg, spec, datasets, test_sets, arch)
        histories = [list(st.selection_history) for st in states]
        report = fm.settlement(histories, spec, num_heads=3, window=10)
        if report.settled and report.settle_round <= 100:
            settled += 1
            rounds_seen.append(report.settle_round)
        else:
            rounds_seen.append(None)
        ever = {s for h in histories for s in h}
        flags_consistent &= set(report.never_selected) == set(range(3)) - ever
    ok = settled >= 8 and flags_consistent
    _report(6, ok, f"settled within 100 rounds in {settled}/10 seeds "
                   f"(rounds: {rounds_seen}), never-selected flags consistent: "
                   f"{flags_consistent}")


# --------------------------------------------------------------------- 7

def test_criterion_7_communication_accounting(desk_data):
    spec, arch, datasets, test_sets = desk_data
    deltas = []
    for rounds, k, seed in ((30, 2, 2), (12, 1, 9)):
        totals = {}
        for alg, kk in (("facade", k), ("el", 1)):
            cfg = ProtocolConfig(alg, k=kk, eta=0.05, local_steps=3,
                                 batch_size=8, rounds=rounds, degree=4,
                                 warmup_rounds=5, eval_every=1000, seed=seed)
            records, _ = run(cfg, spec, datasets, test_sets, arch)
            totals[alg] = records[-1].bytes_cumulative
        expected = rounds * spec.num_nodes * cfg.degree * 4
        deltas.append((totals["facade"] - totals["el"], expected))
    ok = all(got == want for got, want in deltas)
    _report(7, ok, f"facade minus el cumulative bytes: "
                   + ", ".join(f"{got} (want {want})" for got, want in deltas))


# --------------------------------------------------------------------- 8

def test_criterion_8_fairness_metric_properties():
    # three hand-computed examples, exact
    mk = lambda ta, pa, tb, pb: fm.PredictionLog(
        np.array(ta + tb), np.array(pa + pb),
        np.array([0] * len(ta) + [1] * len(tb)),
    )
    dp_half = fm.demographic_parity(
        mk([0, 0, 1, 1], [0, 0, 1, 1], [0, 0, 1, 1], [0, 1, 1, 1])
    )
    eo_one = fm.equalized_odds(
        mk([0, 0, 1, 1], [0, 0, 1, 1], [0, 0, 1, 1], [0, 1, 1, 0])
    )
    dp_two = fm.demographic_parity(mk([0, 1], [0, 0], [0, 1], [1, 1]))
    examples_ok = dp_half == 0.5 and eo_one == 1.0 and dp_two == 2.0

    # randomized invariance sweep, deterministic seed
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(300):
        n_a, n_b = rng.integers(1, 15, size=2)
        log = fm.PredictionLog(
            rng.integers(0, 4, size=n_a + n_b),
            rng.integers(0, 4, size=n_a + n_b),
            np.array([0] * n_a + [1] * n_b),
        )
        swapped = fm.PredictionLog(log.y_true, log.y_pred, 1 - log.group)
        table = rng.permutation(4)
        relabeled = fm.PredictionLog(table[log.y_true], table[log.y_pred], log.group)
        worst = max(
            worst,
            abs(fm.demographic_parity(log) - fm.demographic_parity(swapped)),
            abs(fm.equalized_odds(log) - fm.equalized_odds(swapped)),
            abs(fm.demographic_parity(log) - fm.demographic_parity(relabeled)),
            abs(fm.equalized_odds(log) - fm.equalized_odds(relabeled)),
        )
    ok = examples_ok and worst <= 1e-12
    _report(8, ok, f"hand examples exact: {examples_ok}, worst invariance "
                   f"violation {worst:.1e} over 300 random logs")
