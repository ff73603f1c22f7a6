"""Mean-drift stability check for the level-dependent QBD.

For a positive level k the block-row sum ``A0 + A1(k) + A2(k)`` is a
conservative generator on the phases.  Weighting the upward and downward
blocks by its stationary vector gives the mean rates of leaving level k
upward and downward.  The negative axis is handled the same way with
``B0 + B1(l) + B2(l)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .model import ModelParams, build_block

DRIFT_MARGIN = 1e-12
SCAN_CAP = 10**6


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class DriftReport:
    level: int
    up_rate: float
    down_rate: float
    alpha_or_beta: np.ndarray = field(repr=False)

    @property
    def drifts_down(self) -> bool:
        return self.up_rate + DRIFT_MARGIN < self.down_rate


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    k_star: int
    l_star: int
    positive: DriftReport
    negative: DriftReport


def stationary_of_finite_generator(G: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Stationary vector of a small conservative irreducible generator.

    Solves ``alpha G = 0`` with one balance equation swapped for
    ``alpha e = 1``, then applies one step of iterative refinement.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise GeneratorError("generator must be square")
    size = G.shape[0]
    scale = max(1.0, np.abs(G).max(initial=0.0))
    if np.abs(G.sum(axis=1)).max() > 1e-10 * scale:
        raise GeneratorError("generator rows do not sum to zero")
    off = G - np.diag(np.diag(G))
    if (off < 0).any():
        raise GeneratorError("generator has negative off-diagonal entries")
    if size == 1:
        return np.ones(1)
    ncomp, _ = connected_components(off > 0, directed=True, connection="strong")
    if ncomp != 1:
        raise GeneratorError("generator is reducible")

    M = G.copy()
    M[:, -1] = 1.0
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    alpha = np.linalg.solve(M.T, rhs)
    alpha += np.linalg.solve(M.T, rhs - M.T @ alpha)
    if np.abs(alpha @ G).max() > tol * scale:
        raise GeneratorError("stationary residual above tolerance")
    return alpha


def drift_generator_A(k: int, p: ModelParams) -> np.ndarray:
    if k < 1:
        raise ValueError("positive-axis drift generator needs k >= 1")
    return (build_block("A0", k, p).entries + build_block("A1", k, p).entries
            + build_block("A2", k, p).entries)


def drift_generator_B(l: int, p: ModelParams) -> np.ndarray:
    if l > -2:
        raise ValueError("negative-axis drift generator needs l <= -2")
    return (build_block("B0", l, p).entries + build_block("B1", l, p).entries
            + build_block("B2", l, p).entries)


def drift_rates_A(k: int, p: ModelParams) -> DriftReport:
    alpha = stationary_of_finite_generator(drift_generator_A(k, p))
    up = float(alpha @ build_block("A0", k, p).entries.sum(axis=1))
    down = float(alpha @ build_block("A2", k, p).entries.sum(axis=1))
    return DriftReport(k, up, down, alpha)


def drift_rates_B(l: int, p: ModelParams) -> DriftReport:
    beta = stationary_of_finite_generator(drift_generator_B(l, p))
    # B0 moves outward (more surplus B), B2 inward
    up = float(beta @ build_block("B0", l, p).entries.sum(axis=1))
    down = float(beta @ build_block("B2", l, p).entries.sum(axis=1))
    return DriftReport(l, up, down, beta)


def theoretical_threshold_A(p: ModelParams) -> float:
    return max(1.0, p.lambda1 / (p.m * p.theta1))


def theoretical_threshold_B(p: ModelParams) -> float:
    return max(1.0, p.lambda2 / (p.n * p.theta2))


def _first_witness(rates, levels) -> DriftReport:
    for level in levels:
        report = rates(level)
        if report.drifts_down:
            return report
    raise RuntimeError("no drift witness below the scan cap")


def is_stable(p: ModelParams) -> StabilityReport:
    """Positive recurrence check with witness levels on both axes.

    With positive impatience rates the downward rate grows linearly in the
    level while the upward rate stays bounded, so a witness always exists.
    """
    pos = _first_witness(lambda k: drift_rates_A(k, p), range(1, SCAN_CAP + 1))
    neg = _first_witness(lambda l: drift_rates_B(l, p), range(-2, -SCAN_CAP - 1, -1))
    return StabilityReport(True, pos.level, neg.level, pos, neg)


def drift_table(p: ModelParams, k_max: int = 10) -> list[DriftReport]:
    """Drift reports for levels ``-k_max..-2`` and ``1..k_max``."""
    rows = [drift_rates_B(l, p) for l in range(-k_max, -1)]
    rows += [drift_rates_A(k, p) for k in range(1, k_max + 1)]
    return rows
