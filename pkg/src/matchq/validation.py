"""Side-by-side checks of the analytic engine against oracles and simulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .departure import MARKS, DepartureAnalysis, build_mmap, departure_rates
from .model import ModelParams, build_truncated_generator
from .rg import compute_rg_negative, compute_rg_positive
from .simulator import SimConfig, simulate
from .sojourn import mean_first_passage_upper, mean_sojourn_little, ph_representation
from .stability import drift_rates_A, drift_rates_B, theoretical_threshold_A, theoretical_threshold_B
from .stationary import mean_queue_length_A, mean_queue_length_B, solve_stationary


@dataclass(frozen=True)
class Check:
    criterion: str
    quantity: str
    analytic: float
    reference: float
    tolerance: float
    passed: bool

    def row(self) -> list:
        return [self.criterion, self.quantity, repr(self.analytic), repr(self.reference),
                repr(self.tolerance), "pass" if self.passed else "FAIL"]


def dense_stationary(Q: np.ndarray) -> np.ndarray:
    """Stationary vector of a finite generator by a direct pinned solve."""
    M = Q.copy()
    M[:, 0] = 1.0
    rhs = np.zeros(len(Q))
    rhs[0] = 1.0
    return np.linalg.solve(M.T, rhs)


def analytic_checks(p: ModelParams, tol: float = 1e-8) -> list[Check]:
    out = []
    dist = solve_stationary(p)
    gen = build_truncated_generator(p, dist.k_neg, dist.k_pos)
    diff = float(np.abs(dense_stationary(gen.Q) - dist.vector()).max())
    out.append(Check("oracle_equivalence", "max|pi - pi_dense|", diff, 0.0, tol, diff <= tol))

    rg_pos = compute_rg_positive(p)
    rg_neg = compute_rg_negative(p)
    res = max(rg_pos.residual, rg_neg.residual)
    out.append(Check("rg_residuals", "max residual", res, 0.0, 1e-12, res <= 1e-12))

    mmap = build_mmap(p, dist.k_neg, dist.k_pos)
    rates = departure_rates(dist, mmap)
    for name, lam in (("mu_A_total", p.lambda1), ("mu_B_total", p.lambda2)):
        err = abs(rates[name] - lam)
        out.append(Check("flow_conservation", name, rates[name], lam, tol, err <= tol))

    exact = bool(np.array_equal(mmap.D0 + mmap.DA + mmap.DB + mmap.DAB, gen.Q))
    out.append(Check("mmap_decomposition", "D0+DA+DB+DAB == Q", float(exact), 1.0, 0.0, exact))
    analysis = DepartureAnalysis(dist, mmap)
    for k in (1, 2, 3):
        for direction in ("forward", "backward"):
            total = sum(analysis.all_sequences(k, direction).values())
            out.append(Check("mmap_decomposition", f"sum {direction} length {k}", total, 1.0,
                             1e-7, abs(total - 1) <= 1e-7))

    w_little = mean_sojourn_little(dist)
    ph = ph_representation(dist)
    xi = mean_first_passage_upper(dist, ph=ph)
    out.append(Check("sojourn_bound", "E_W_little <= E_xi", w_little, xi, 1e-9,
                     w_little <= xi + 1e-9))
    xi_dense = float(-ph.initial @ np.linalg.solve(ph.T, np.ones(len(ph.T))))
    out.append(Check("sojourn_bound", "E_xi vs dense", xi, xi_dense, tol, abs(xi - xi_dense) <= tol))

    k0 = int(np.floor(theoretical_threshold_A(p))) + 2
    l0 = -(int(np.floor(theoretical_threshold_B(p))) + 2)
    ok_a = all(drift_rates_A(k, p).drifts_down for k in range(k0, k0 + 20))
    ok_b = all(drift_rates_B(l, p).drifts_down for l in range(l0, l0 - 20, -1))
    out.append(Check("stability_witness", "drift down beyond threshold", float(ok_a and ok_b),
                     1.0, 0.0, ok_a and ok_b))

    swapped = solve_stationary(p.swapped())
    for mine, theirs, name in ((mean_queue_length_A(dist), mean_queue_length_B(swapped), "E_Q1"),
                               (mean_queue_length_B(dist), mean_queue_length_A(swapped), "E_Q2")):
        out.append(Check("symmetry", name, mine, theirs, 1e-9, abs(mine - theirs) <= 1e-9))
    return out


def trend_checks(p: ModelParams, grid=(0.5, 1.0, 1.5, 2.0)) -> list[Check]:
    out = []
    for axis in ("theta1", "theta2"):
        q1, q2 = [], []
        for value in grid:
            d = solve_stationary(p.replace(**{"theta1": 1.0, "theta2": 1.0, axis: value}))
            q1.append(mean_queue_length_A(d))
            q2.append(mean_queue_length_B(d))
        dq1, dq2 = np.diff(q1), np.diff(q2)
        down, up = (dq1, dq2) if axis == "theta1" else (dq2, dq1)
        ok = bool((down < 0).all() and (up > 0).all())
        out.append(Check("trends", f"monotone in {axis}", float(ok), 1.0, 0.0, ok))
    return out


def simulation_checks(p: ModelParams, cfg: SimConfig | None = None) -> list[Check]:
    cfg = cfg or SimConfig(p)
    sim = simulate(cfg)
    dist = solve_stationary(p)
    mmap = build_mmap(p, dist.k_neg, dist.k_pos)
    rates = departure_rates(dist, mmap)
    probs = DepartureAnalysis(dist, mmap).mark_probabilities()
    pairs = [("E_Q1", mean_queue_length_A(dist), sim.mean_Q1),
             ("E_Q2", mean_queue_length_B(dist), sim.mean_Q2),
             ("E_W_little", mean_sojourn_little(dist), sim.mean_sojourn_A)]
    pairs += [(name, value, sim.rates[name]) for name, value in rates.items()]
    for family in ("backward", "forward", "at_departure"):
        for mk in MARKS:
            est = sim.mark_log_stats[family][mk if family == "at_departure" else (mk,)]
            pairs.append((f"{family}_{mk}", probs[family][mk], est))
    return [Check("simulation", name, value, est.mean, est.half_width, est.contains(value))
            for name, value, est in pairs]
