"""Acceptance run: one test per primary criterion, each reporting a pass/fail line."""

from __future__ import annotations

import time

import numpy as np

from matchq.departure import MARKS, DepartureAnalysis, all_mark_sequences, build_mmap, departure_rates
from matchq.model import ModelParams
from matchq.rg import compute_rg_negative, compute_rg_positive
from matchq.simulator import SimConfig, simulate
from matchq.sojourn import erlang_max_sojourn, erlang_tail_integral, mean_first_passage_upper, mean_sojourn_little
from matchq.stability import drift_rates_A, drift_rates_B, theoretical_threshold_A, theoretical_threshold_B
from matchq.stationary import mean_queue_length_A, mean_queue_length_B, solve_stationary

from .oracles import erlang_max_quad, erlang_tail_quad, lstsq_stationary, window_grid
from .shared import BASE, PARAM_SETS, SIM_SEED, base_simulation, record, stationary
from .test_sojourn import dense_first_passage


def test_oracle_equivalence():
    worst, slowest = 0.0, 0.0
    for p in PARAM_SETS:
        t0 = time.perf_counter()
        dist = solve_stationary(p)
        slowest = max(slowest, time.perf_counter() - t0)
        Q, states = window_grid(p, dist.k_neg, dist.k_pos)
        ref = lstsq_stationary(Q)
        mine = np.array([dist.prob(i, j) for i, j in states])
        worst = max(worst, float(np.abs(mine - ref).max()))
    ok = worst <= 1e-8 and slowest <= 10
    record("oracle equivalence", ok, f"max err {worst:.2e} (<= 1e-8), slowest set {slowest:.2f}s")
    assert ok


def test_rg_residuals():
    t0 = time.perf_counter()
    worst = 0.0
    for p in PARAM_SETS:
        for rg in (compute_rg_positive(p), compute_rg_negative(p)):
            worst = max(worst, max(rg.residual_R.values()), max(rg.residual_G.values()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed <= 5
    record("R/G residuals", ok, f"max residual {worst:.2e} (<= 1e-12) in {elapsed:.2f}s")
    assert ok


def test_flow_conservation():
    worst = 0.0
    for p in PARAM_SETS:
        dist = stationary(p)
        rates = departure_rates(dist, build_mmap(p, dist.k_neg, dist.k_pos))
        worst = max(worst, abs(rates["mu_A_total"] - p.lambda1), abs(rates["mu_B_total"] - p.lambda2))
    ok = worst <= 1e-8
    record("flow conservation", ok, f"max |lambda - mu_total| {worst:.2e} (<= 1e-8)")
    assert ok


def test_simulation_cross_validation():
    t0 = time.perf_counter()
    sim = simulate(SimConfig(BASE, events=1_250_000, replications=10, seed=SIM_SEED,
                             warmup_fraction=0.2))
    elapsed = time.perf_counter() - t0
    dist = stationary(BASE)
    mmap = build_mmap(BASE, dist.k_neg, dist.k_pos)
    probs = DepartureAnalysis(dist, mmap).mark_probabilities()
    pairs = [("E_Q1", mean_queue_length_A(dist), sim.mean_Q1),
             ("E_Q2", mean_queue_length_B(dist), sim.mean_Q2),
             ("E_W", mean_sojourn_little(dist), sim.mean_sojourn_A)]
    pairs += [(k, v, sim.rates[k]) for k, v in departure_rates(dist, mmap).items()]
    for family in ("backward", "forward", "at_departure"):
        for mk in MARKS:
            key = mk if family == "at_departure" else (mk,)
            pairs.append((f"{family} {mk}", probs[family][mk], sim.mark_log_stats[family][key]))
    misses = [name for name, value, est in pairs if not est.contains(value)]
    post_warmup = int(0.8 * sim.config.events)
    ok = not misses and elapsed <= 300 and post_warmup >= 1_000_000 and sim.config.replications >= 10
    record("simulation cross-validation", ok,
           f"{len(pairs) - len(misses)}/{len(pairs)} inside 99% CI, {elapsed:.1f}s"
           + (f", outside: {misses}" if misses else ""))
    assert ok


def test_trends():
    t0 = time.perf_counter()
    grid = [0.5, 1.0, 1.5, 2.0]
    ok = True
    for axis in ("theta1", "theta2"):
        q1, q2 = [], []
        for value in grid:
            d = solve_stationary(BASE.replace(**{"theta1": 1.0, "theta2": 1.0, axis: value}))
            q1.append(mean_queue_length_A(d))
            q2.append(mean_queue_length_B(d))
        own, other = (q1, q2) if axis == "theta1" else (q2, q1)
        ok &= bool((np.diff(own) < 0).all() and (np.diff(other) > 0).all())
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed <= 60
    record("impatience trends", ok, f"monotone in both directions, {elapsed:.2f}s")
    assert ok


def test_first_passage_bound():
    slack, worst = np.inf, 0.0
    for p in PARAM_SETS:
        d = stationary(p)
        xi = mean_first_passage_upper(d)
        slack = min(slack, xi + 1e-9 - mean_sojourn_little(d))
        worst = max(worst, abs(xi - dense_first_passage(p, d)))
    ok = slack >= 0 and worst <= 1e-8
    record("first-passage upper bound", ok,
           f"min E_xi - E_W {slack - 1e-9:.3g} (>= -1e-9), dense err {worst:.2e} (<= 1e-8)")
    assert ok


def test_erlang_closed_forms():
    rng = np.random.default_rng(20260)
    worst = 0.0
    for _ in range(100):
        l1, l2, theta = rng.uniform(0.05, 5.0, 3)
        r1, r2 = (int(x) for x in rng.integers(1, 11, 2))
        worst = max(worst,
                    abs(erlang_tail_integral(l1, theta, r1) - erlang_tail_quad(l1, theta, r1)),
                    abs(erlang_tail_integral(l2, theta, r2) - erlang_tail_quad(l2, theta, r2)),
                    abs(erlang_max_sojourn(l1, r1, l2, r2, theta)
                        - erlang_max_quad(l1, r1, l2, r2, theta)))
    ok = worst <= 1e-10
    record("Erlang closed forms", ok, f"max |closed - quadrature| {worst:.2e} over 100 tuples")
    assert ok


def test_mmap_decomposition():
    exact = True
    worst_sum = 0.0
    for p in PARAM_SETS:
        d = stationary(p)
        mm = build_mmap(p, d.k_neg, d.k_pos)
        exact &= bool(np.array_equal(mm.D0 + mm.DA + mm.DB + mm.DAB, mm.generator.Q))
        a = DepartureAnalysis(d, mm)
        for k in (1, 2, 3):
            for direction in ("forward", "backward"):
                worst_sum = max(worst_sum, abs(sum(a.all_sequences(k, direction).values()) - 1))
    d = stationary(BASE)
    a = DepartureAnalysis(d, build_mmap(BASE, d.k_neg, d.k_pos))
    stats = base_simulation().mark_log_stats
    family = [(dr, seq) for dr in ("forward", "backward") for k in (1, 2, 3)
              for seq in all_mark_sequences(k)]
    level = 1 - 0.01 / len(family)
    misses = [(dr, seq) for dr, seq in family
              if not stats[dr][seq].contains(a.sequence_probability(seq, dr), level)]
    ok = exact and worst_sum <= 1e-7 and not misses
    record("MMAP decomposition", ok,
           f"exact={exact}, max |sum - 1| {worst_sum:.2e} (<= 1e-7), "
           f"{len(family) - len(misses)}/{len(family)} sequences inside family-wise 99% CI")
    assert ok


def test_stability_witness():
    rng = np.random.default_rng(7)
    failures = []
    for _ in range(20):
        l1, l2 = rng.uniform(0.1, 5.0, 2)
        t1, t2 = rng.uniform(0.05, 3.0, 2)
        m, n = (int(x) for x in rng.integers(1, 5, 2))
        p = ModelParams(l1, l2, t1, t2, m, n)
        k0 = int(np.floor(theoretical_threshold_A(p))) + 1
        l0 = int(np.floor(theoretical_threshold_B(p))) + 1
        if not all(drift_rates_A(k, p).drifts_down for k in range(k0 + 1, k0 + 200)):
            failures.append(("A", p))
        if not all(drift_rates_B(-l, p).drifts_down for l in range(l0 + 1, l0 + 200)):
            failures.append(("B", p))
    ok = not failures
    record("stability witness", ok, f"{20 - len(failures)}/20 random sets drift down past the bound")
    assert ok


def test_swap_symmetry():
    worst = 0.0
    for p in PARAM_SETS:
        a, b = stationary(p), solve_stationary(p.swapped())
        worst = max(worst, abs(mean_queue_length_A(a) - mean_queue_length_B(b)),
                    abs(mean_queue_length_B(a) - mean_queue_length_A(b)))
    ok = worst <= 1e-9
    record("swap symmetry", ok, f"max |E_Q difference| {worst:.2e} (<= 1e-9) over {len(PARAM_SETS)} sets")
    assert ok
