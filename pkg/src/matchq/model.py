"""Matched queue with matching batch pair (m, n) as a bidirectional QBD.

States ``(i, j)`` count waiting A- and B-customers.  Levels group them:

* level 0 holds ``i < m, j < n`` ordered by ``phase = i*n + j``;
* level ``k >= 1`` holds ``i = km + i'`` (``i' < m``), ``j < n`` with
  ``phase = i'*n + j``;
* level ``l <= -1`` holds ``i < m``, ``j = (-l)n + j'`` in reversed
  lexicographic order ``phase = (n-1-j')*m + (m-1-i)``.

The row of level ``k`` in the generator has a block to ``k-1``, a diagonal
block and a block to ``k+1``.  On the positive side these are
``A2(k), A1(k), A0(k)``; level 0 has ``B0(0), C, A0(0)``; on the negative
side ``B0(l)`` goes outward (to ``l-1``) and ``B2(l)`` inward (to ``l+1``).
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np


class ModelError(ValueError):
    """Invalid model parameters, states or block requests."""


@dataclass(frozen=True)
class ModelParams:
    lambda1: float
    lambda2: float
    theta1: float
    theta2: float
    m: int
    n: int

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "theta1", "theta2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ModelError(f"{name} must be a positive finite rate, got {value!r}")
        for name in ("m", "n"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ModelError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in ("lambda1", "lambda2", "theta1", "theta2"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def mn(self) -> int:
        return self.m * self.n

    def swapped(self) -> "ModelParams":
        """The same queue with the roles of A and B exchanged."""
        return ModelParams(self.lambda2, self.lambda1, self.theta2, self.theta1, self.n, self.m)

    def replace(self, **changes) -> "ModelParams":
        return ModelParams(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        keys = ("lambda1", "lambda2", "theta1", "theta2", "m", "n")
        missing = [k for k in keys if k not in doc]
        if missing:
            raise ModelError(f"parameter document lacks {', '.join(missing)}")
        return cls(**{k: doc[k] for k in keys})

    @classmethod
    def from_json(cls, path: str | Path) -> "ModelParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class StateCoords(NamedTuple):
    i: int
    j: int


class LevelPhase(NamedTuple):
    level: int
    phase: int


def in_state_space(i: int, j: int, p: ModelParams) -> bool:
    return i >= 0 and j >= 0 and (i <= p.m - 1 or j <= p.n - 1)


def coords_to_levelphase(s: tuple[int, int], p: ModelParams) -> LevelPhase:
    i, j = s
    if not in_state_space(i, j, p):
        raise ModelError(f"state {(i, j)} is outside the state space for (m, n) = {(p.m, p.n)}")
    m, n = p.m, p.n
    if i < m and j < n:
        return LevelPhase(0, i * n + j)
    if i >= m:
        return LevelPhase(i // m, (i % m) * n + j)
    level = -(j // n)
    jp = j % n
    return LevelPhase(level, (n - 1 - jp) * m + (m - 1 - i))


def levelphase_to_coords(lp: tuple[int, int], p: ModelParams) -> StateCoords:
    level, phase = lp
    m, n = p.m, p.n
    if not 0 <= phase < m * n:
        raise ModelError(f"phase {phase} out of range [0, {m * n})")
    if level >= 0:
        ip, j = divmod(phase, n)
        return StateCoords(level * m + ip, j)
    blk, r = divmod(phase, m)
    return StateCoords(m - 1 - r, (-level) * n + (n - 1 - blk))


def level_states(level: int, p: ModelParams) -> list[StateCoords]:
    """States of a level in phase order."""
    return [levelphase_to_coords((level, ph), p) for ph in range(p.mn)]


# ---------------------------------------------------------------------------
# Generator blocks, written directly from the level orderings.


def _diag_rate(i: int, j: int, p: ModelParams) -> float:
    return -(p.lambda1 + p.lambda2 + i * p.theta1 + j * p.theta2)


def _a1(k: int, p: ModelParams) -> np.ndarray:
    # also C when k == 0
    m, n = p.m, p.n
    out = np.zeros((m * n, m * n))
    for ip in range(m):
        a = k * m + ip
        for j in range(n):
            r = ip * n + j
            out[r, r] = _diag_rate(a, j, p)
            if j < n - 1:
                out[r, r + 1] = p.lambda2
            if j >= 1:
                out[r, r - 1] = j * p.theta2
            if ip < m - 1:
                out[r, r + n] = p.lambda1
            if ip >= 1:
                out[r, r - n] = a * p.theta1
    return out


def _a0(p: ModelParams) -> np.ndarray:
    m, n = p.m, p.n
    out = np.zeros((m * n, m * n))
    for j in range(n):
        out[(m - 1) * n + j, j] = p.lambda1
    return out


def _a2(k: int, p: ModelParams) -> np.ndarray:
    m, n = p.m, p.n
    out = np.zeros((m * n, m * n))
    for ip in range(m):
        # B-arrival completes a match: (km+i', n-1) -> ((k-1)m+i', 0)
        out[ip * n + n - 1, ip * n] += p.lambda2
    for j in range(n):
        out[j, (m - 1) * n + j] += k * m * p.theta1
    return out


def _neg_phase(i: int, jp: int, p: ModelParams) -> int:
    return (p.n - 1 - jp) * p.m + (p.m - 1 - i)


def _b1(level: int, p: ModelParams) -> np.ndarray:
    m, n = p.m, p.n
    out = np.zeros((m * n, m * n))
    base = (-level) * n
    for jp in range(n):
        j = base + jp
        for i in range(m):
            r = _neg_phase(i, jp, p)
            out[r, r] = _diag_rate(i, j, p)
            if i < m - 1:
                out[r, _neg_phase(i + 1, jp, p)] = p.lambda1
            if i >= 1:
                out[r, _neg_phase(i - 1, jp, p)] = i * p.theta1
            if jp < n - 1:
                out[r, _neg_phase(i, jp + 1, p)] = p.lambda2
            if jp >= 1:
                out[r, _neg_phase(i, jp - 1, p)] = j * p.theta2
    return out


def _b0(p: ModelParams) -> np.ndarray:
    m, n = p.m, p.n
    out = np.zeros((m * n, m * n))
    for i in range(m):
        out[_neg_phase(i, n - 1, p), _neg_phase(i, 0, p)] = p.lambda2
    return out


def _b2(level: int, p: ModelParams) -> np.ndarray:
    m, n = p.m, p.n
    out = np.zeros((m * n, m * n))
    for jp in range(n):
        # A-arrival completes a match: (m-1, j) -> (0, j-n)
        out[_neg_phase(m - 1, jp, p), _neg_phase(0, jp, p)] += p.lambda1
    for i in range(m):
        out[_neg_phase(i, 0, p), _neg_phase(i, n - 1, p)] += (-level) * n * p.theta2
    return out


def _b0_boundary(p: ModelParams) -> np.ndarray:
    # level 0 -> level -1, (i, n-1) -> (i, n)
    m, n = p.m, p.n
    out = np.zeros((m * n, m * n))
    for i in range(m):
        out[i * n + n - 1, _neg_phase(i, 0, p)] = p.lambda2
    return out


def _b2_boundary(p: ModelParams) -> np.ndarray:
    # level -1 -> level 0
    m, n = p.m, p.n
    out = np.zeros((m * n, m * n))
    for jp in range(n):
        out[_neg_phase(m - 1, jp, p), jp] += p.lambda1
    for i in range(m):
        out[_neg_phase(i, 0, p), i * n + n - 1] += n * p.theta2
    return out


class Role(str, enum.Enum):
    A0 = "A0"
    A1 = "A1"
    A2 = "A2"
    C = "C"
    B0 = "B0"
    B1 = "B1"
    B2 = "B2"
    B0_BOUNDARY = "B0_boundary"
    B2_BOUNDARY = "B2_boundary"


# role -> (predicate on level, human description)
_ROLE_LEVELS = {
    Role.A0: (lambda k: k >= 0, "level >= 0"),
    Role.A1: (lambda k: k >= 1, "level >= 1"),
    Role.A2: (lambda k: k >= 1, "level >= 1"),
    Role.C: (lambda k: k == 0, "level 0"),
    Role.B0: (lambda k: k <= -1, "level <= -1"),
    Role.B1: (lambda k: k <= -1, "level <= -1"),
    Role.B2: (lambda k: k <= -2, "level <= -2"),
    Role.B0_BOUNDARY: (lambda k: k == 0, "level 0"),
    Role.B2_BOUNDARY: (lambda k: k == -1, "level -1"),
}


@dataclass(frozen=True)
class LevelBlock:
    role: Role
    level: int
    entries: np.ndarray = field(repr=False)


def build_block(role: Role | str, level: int, p: ModelParams) -> LevelBlock:
    """Return one ``mn x mn`` block of the generator.

    ``A0``/``A1``/``A2`` leave level ``k`` upward / within / downward,
    ``C`` is the level-0 diagonal block, ``B0``/``B1``/``B2`` leave a
    negative level outward / within / inward.  The two boundary roles are
    ``B0(0)`` (level 0 -> -1) and ``B2(-1)`` (level -1 -> 0), which also
    carry the change of phase order between the two sides.
    """
    role = Role(role)
    ok, want = _ROLE_LEVELS[role]
    if not ok(level):
        raise ModelError(f"block {role.value} is defined for {want}, not level {level}")
    if role is Role.A0:
        mat = _a0(p)
    elif role in (Role.A1, Role.C):
        mat = _a1(level, p)
    elif role is Role.A2:
        mat = _a2(level, p)
    elif role is Role.B0:
        mat = _b0(p)
    elif role is Role.B1:
        mat = _b1(level, p)
    elif role is Role.B2:
        mat = _b2(level, p)
    elif role is Role.B0_BOUNDARY:
        mat = _b0_boundary(p)
    else:
        mat = _b2_boundary(p)
    mat.setflags(write=False)
    return LevelBlock(role, level, mat)


def row_blocks(level: int, p: ModelParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(to level-1, within level, to level+1)`` blocks of a block-row of Q."""
    if level >= 1:
        return _a2(level, p), _a1(level, p), _a0(p)
    if level == 0:
        return _b0_boundary(p), _a1(0, p), _a0(p)
    down = _b0(p)  # outward, toward level-1
    up = _b2_boundary(p) if level == -1 else _b2(level, p)
    return down, _b1(level, p), up


# ---------------------------------------------------------------------------
# Event enumerator (physical semantics of one transition).


class Transition(NamedTuple):
    target: StateCoords
    rate: float
    event: str  # "A_arrival", "B_arrival", "A_renege", "B_renege"
    mark: str | None  # departure mark: "A", "B", "AB" or None


def transitions(s: tuple[int, int], p: ModelParams) -> list[Transition]:
    """All single-event transitions out of ``s`` with eager (m, n)-matching."""
    i, j = s
    if not in_state_space(i, j, p):
        raise ModelError(f"state {(i, j)} is outside the state space")
    out = []
    ti, tj = i + 1, j
    if ti >= p.m and tj >= p.n:
        out.append(Transition(StateCoords(ti - p.m, tj - p.n), p.lambda1, "A_arrival", "AB"))
    else:
        out.append(Transition(StateCoords(ti, tj), p.lambda1, "A_arrival", None))
    ti, tj = i, j + 1
    if ti >= p.m and tj >= p.n:
        out.append(Transition(StateCoords(ti - p.m, tj - p.n), p.lambda2, "B_arrival", "AB"))
    else:
        out.append(Transition(StateCoords(ti, tj), p.lambda2, "B_arrival", None))
    if i > 0:
        out.append(Transition(StateCoords(i - 1, j), i * p.theta1, "A_renege", "A"))
    if j > 0:
        out.append(Transition(StateCoords(i, j - 1), j * p.theta2, "B_renege", "B"))
    return out


# ---------------------------------------------------------------------------
# Truncated generator.


@dataclass(frozen=True)
class TruncatedGenerator:
    """Block-tridiagonal generator restricted to levels ``-k_neg..k_pos``.

    ``Q`` is dense; level ``L`` occupies rows ``(L + k_neg)*mn`` onward.
    ``defect[r]`` is the rate of row ``r`` that left the window and was
    folded back into the diagonal.
    """

    params: ModelParams
    k_neg: int
    k_pos: int
    Q: np.ndarray = field(repr=False)
    defect: np.ndarray = field(repr=False)
    closure: str = "reflecting"

    @property
    def levels(self) -> range:
        return range(-self.k_neg, self.k_pos + 1)

    @property
    def size(self) -> int:
        return self.Q.shape[0]

    def level_slice(self, level: int) -> slice:
        if not -self.k_neg <= level <= self.k_pos:
            raise ModelError(f"level {level} is outside the window")
        mn = self.params.mn
        start = (level + self.k_neg) * mn
        return slice(start, start + mn)

    def index(self, s: tuple[int, int]) -> int:
        lvl, ph = coords_to_levelphase(s, self.params)
        return self.level_slice(lvl).start + ph

    def states(self) -> list[StateCoords]:
        return [st for lvl in self.levels for st in level_states(lvl, self.params)]

    def block(self, row_level: int, col_level: int) -> np.ndarray:
        return self.Q[self.level_slice(row_level), self.level_slice(col_level)]


def build_truncated_generator(p: ModelParams, k_neg: int, k_pos: int) -> TruncatedGenerator:
    """Assemble Q over levels ``[-k_neg, k_pos]`` with reflecting closure."""
    if k_neg < 2 or k_pos < 2:
        raise ModelError(f"window must keep at least two levels per side, got ({k_neg}, {k_pos})")
    mn = p.mn
    nlev = k_neg + k_pos + 1
    Q = np.zeros((nlev * mn, nlev * mn))
    defect = np.zeros(nlev * mn)
    for t, level in enumerate(range(-k_neg, k_pos + 1)):
        down, diag, up = row_blocks(level, p)
        rows = slice(t * mn, (t + 1) * mn)
        Q[rows, rows] = diag
        if level > -k_neg:
            Q[rows, (t - 1) * mn:t * mn] = down
        else:
            defect[rows] += down.sum(axis=1)
        if level < k_pos:
            Q[rows, (t + 1) * mn:(t + 2) * mn] = up
        else:
            defect[rows] += up.sum(axis=1)
    Q[np.diag_indices_from(Q)] += defect
    Q.setflags(write=False)
    return TruncatedGenerator(p, k_neg, k_pos, Q, defect)


def state_label(s: tuple[int, int]) -> str:
    return f"({s[0]},{s[1]})"


def write_matrix_csv(path: str | Path, matrix: np.ndarray, states: list[StateCoords]) -> None:
    """Row-major CSV with a header row of state labels."""
    labels = [state_label(s) for s in states]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["state", *labels])
        for lab, row in zip(labels, matrix):
            w.writerow([lab, *(repr(float(x)) for x in row)])
