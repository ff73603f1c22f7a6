"""Stationary distribution from the R-measures on both axes.

Levels 2, 3, ... follow from the level-1 vector through products of
positive-axis R-matrices, and levels -2, -3, ... from level -1 through the
negative-axis ones.  Only the three middle vectors need a linear solve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (
    ModelParams,
    build_block,
    build_truncated_generator,
    coords_to_levelphase,
    level_states,
    state_label,
)
from .rg import RgMeasures, compute_rg_negative, compute_rg_positive

BOUNDARY_RESIDUAL_TOL = 1e-10
DEFAULT_TAIL_TOL = 1e-14
MIN_WINDOW = 8


class StationaryError(ArithmeticError):
    pass


def _entries(role, level, p):
    return build_block(role, level, p).entries


def boundary_matrix(p: ModelParams, rg_pos: RgMeasures, rg_neg: RgMeasures) -> np.ndarray:
    """Homogeneous system ``x M = 0`` for ``x = (pi~_{-1}, pi~_0, pi~_1)``.

    Column groups are the balance equations of levels -1, 0 and 1.
    """
    mn = p.mn
    M = np.zeros((3 * mn, 3 * mn))
    neg, mid, pos = slice(0, mn), slice(mn, 2 * mn), slice(2 * mn, 3 * mn)
    M[neg, neg] = _entries("B1", -1, p) + rg_neg.R[-1] @ _entries("B2", -2, p)
    M[neg, mid] = _entries("B2_boundary", -1, p)
    M[mid, neg] = _entries("B0_boundary", 0, p)
    M[mid, mid] = _entries("C", 0, p)
    M[mid, pos] = _entries("A0", 0, p)
    M[pos, mid] = _entries("A2", 1, p)
    M[pos, pos] = _entries("A1", 1, p) + rg_pos.R[1] @ _entries("A2", 2, p)
    return M


def _nullspace_pinned(M: np.ndarray, pin: int) -> np.ndarray | None:
    size = M.shape[0]
    Mp = M.copy()
    Mp[:, pin] = 0.0
    Mp[pin, pin] = 1.0
    rhs = np.zeros(size)
    rhs[pin] = 1.0
    try:
        x = np.linalg.solve(Mp.T, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(x)) or x[pin] <= 0:
        return None
    return x


def _nullspace_svd(M: np.ndarray) -> np.ndarray:
    _, s, vt = np.linalg.svd(M.T)
    scale = max(1.0, s[0])
    if s[-2] < 1e-10 * scale:
        raise StationaryError("boundary system has a nullspace of dimension > 1")
    x = vt[-1]
    return x if x.sum() >= 0 else -x


def solve_boundary(p: ModelParams, rg_pos: RgMeasures, rg_neg: RgMeasures,
                   method: str = "pinned") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three middle vectors, scaled so the largest entry is 1.

    ``method="pinned"`` fixes the first entry of the level-0 vector and drops
    the matching balance column; it falls back to the SVD nullspace if that
    entry is numerically zero.  ``method="svd"`` goes straight to the SVD.
    """
    M = boundary_matrix(p, rg_pos, rg_neg)
    mn = p.mn
    x = _nullspace_pinned(M, mn) if method == "pinned" else None
    if x is None:
        x = _nullspace_svd(M)
    x = x / np.abs(x).max()
    if x.min() < -1e-10:
        raise StationaryError("boundary solution has negative entries")
    x = np.clip(x, 0.0, None)
    scale = max(1.0, np.abs(M).max())
    if np.abs(x @ M).max() > BOUNDARY_RESIDUAL_TOL * scale:
        raise StationaryError("boundary residual above tolerance")
    return x[:mn], x[mn:2 * mn], x[2 * mn:]


@dataclass(frozen=True)
class StationaryDist:
    """Stationary probabilities on levels ``-k_neg..k_pos``.

    ``tail_mass_bound`` is the (normalized) mass the R-products place beyond
    the window up to the R-measure cap; it is dropped before normalizing.
    """

    params: ModelParams
    k_neg: int
    k_pos: int
    pi_levels: dict[int, np.ndarray] = field(repr=False)
    c: float
    tail_mass_bound: float
    boundary: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)

    @property
    def window(self) -> tuple[int, int]:
        return (-self.k_neg, self.k_pos)

    @property
    def levels(self) -> range:
        return range(-self.k_neg, self.k_pos + 1)

    def vector(self) -> np.ndarray:
        """Flat vector in the order of the truncated generator."""
        return np.concatenate([self.pi_levels[k] for k in self.levels])

    def states(self):
        return [s for k in self.levels for s in level_states(k, self.params)]

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {tuple(s): float(v) for s, v in zip(self.states(), self.vector())}

    def prob(self, i: int, j: int) -> float:
        level, phase = coords_to_levelphase((i, j), self.params)
        if level not in self.pi_levels:
            return 0.0
        return float(self.pi_levels[level][phase])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "i", "j", "probability"])
            for s, v in zip(self.states(), self.vector()):
                w.writerow([state_label(s), s.i, s.j, repr(float(v))])


def _extend(start: np.ndarray, R: dict[int, np.ndarray], first: int, step: int,
            stop_rel: float, limit: int, fixed: int | None):
    """Level vectors ``start, start R_first, start R_first R_{first+step}, ...``.

    Returns the retained vectors and the mass of vectors computed beyond them.
    """
    vecs = [start]
    level = first
    extra = 0.0
    cur = start
    total = start.sum()
    while abs(level) < limit:
        cur = cur @ R[level]
        level += step
        mass = cur.sum()
        keep = len(vecs) < fixed if fixed is not None else mass >= stop_rel * total
        if keep:
            vecs.append(cur)
            total += mass
        else:
            extra += mass
            if fixed is None or mass < 1e-300:
                break
    return vecs, extra


def assemble_stationary(p: ModelParams, rg_pos: RgMeasures, rg_neg: RgMeasures,
                        boundary=None, k_neg: int | None = None, k_pos: int | None = None,
                        tail_tol: float = DEFAULT_TAIL_TOL) -> StationaryDist:
    """Extend the middle vectors outward by R-products and normalize.

    Without explicit window sizes each side grows until a level carries less
    than ``tail_tol`` of the mass so far, and the window is then rounded up
    to ``8 * 2**j`` levels.  Levels must stay inside the R-measure caps.
    """
    if boundary is None:
        boundary = solve_boundary(p, rg_pos, rg_neg)
    x_neg, x_mid, x_pos = boundary

    def side(start, rg, sign, fixed):
        limit = rg.cap
        if fixed is None:
            vecs, _ = _extend(start, rg.R, sign, sign, tail_tol, limit, None)
            need = len(vecs)
            size = MIN_WINDOW
            while size < need:
                size *= 2
            fixed = size
        if fixed > limit - 1:
            raise StationaryError(f"window {fixed} reaches the R-measure cap {limit}")
        return _extend(start, rg.R, sign, sign, 0.0, limit, fixed)

    pos_vecs, pos_extra = side(x_pos, rg_pos, 1, k_pos)
    neg_vecs, neg_extra = side(x_neg, rg_neg, -1, k_neg)
    total = x_mid.sum() + sum(v.sum() for v in pos_vecs) + sum(v.sum() for v in neg_vecs)
    c = 1.0 / total
    levels = {0: x_mid * c}
    for t, v in enumerate(pos_vecs, start=1):
        levels[t] = v * c
    for t, v in enumerate(neg_vecs, start=1):
        levels[-t] = v * c
    return StationaryDist(p, len(neg_vecs), len(pos_vecs), levels, c,
                          float((pos_extra + neg_extra) * c), boundary)


def solve_stationary(p: ModelParams, k_neg: int | None = None, k_pos: int | None = None,
                     tail_tol: float = DEFAULT_TAIL_TOL) -> StationaryDist:
    """R-measures, boundary solve and assembly in one call.

    The R-measure cap is raised until it is at least twice the window.
    """
    cap = 16
    while True:
        want = max(k_neg or 0, k_pos or 0)
        while cap < 2 * want:
            cap *= 2
        rg_pos = compute_rg_positive(p, cap=cap)
        rg_neg = compute_rg_negative(p, cap=cap)
        try:
            dist = assemble_stationary(p, rg_pos, rg_neg, k_neg=k_neg, k_pos=k_pos,
                                       tail_tol=tail_tol)
        except StationaryError as exc:
            if "R-measure cap" not in str(exc):
                raise
            cap *= 2
            continue
        if 2 * max(dist.k_neg, dist.k_pos) <= min(rg_pos.cap, rg_neg.cap):
            return dist
        cap = 2 * max(dist.k_neg, dist.k_pos)


def _count_arrays(dist: StationaryDist):
    states = dist.states()
    i = np.array([s.i for s in states], dtype=float)
    j = np.array([s.j for s in states], dtype=float)
    return i, j


def mean_queue_length_A(dist: StationaryDist) -> float:
    i, _ = _count_arrays(dist)
    return float(i @ dist.vector())


def mean_queue_length_B(dist: StationaryDist) -> float:
    _, j = _count_arrays(dist)
    return float(j @ dist.vector())


def global_balance_residual(dist: StationaryDist) -> float:
    """``max |pi Q|`` over the truncated generator on the same window."""
    gen = build_truncated_generator(dist.params, dist.k_neg, dist.k_pos)
    return float(np.abs(dist.vector() @ gen.Q).max())


def swapped_distribution(dist: StationaryDist) -> StationaryDist:
    """The same distribution seen from the model with A and B exchanged.

    State ``(i, j)`` of the original is state ``(j, i)`` of the swapped
    model, so level ``k`` becomes level ``-k``.
    """
    q = dist.params.swapped()
    levels = {}
    for k in dist.levels:
        vec = np.empty(q.mn)
        for phase, s in enumerate(level_states(-k, q)):
            vec[phase] = dist.prob(s.j, s.i)
        levels[-k] = vec
    a, b, c = dist.boundary
    perm = [coords_to_levelphase((s.j, s.i), dist.params).phase
            for s in level_states(0, q)]
    return StationaryDist(q, dist.k_pos, dist.k_neg, levels, dist.c, dist.tail_mass_bound,
                          (c[::-1].copy(), b[perm], a[::-1].copy()))
