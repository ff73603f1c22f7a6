"""Marked departure process.

Every transition of the generator that removes customers carries a mark:
``A`` (an A-customer reneges), ``B`` (a B-customer reneges) or ``AB`` (an
arrival completes a match and ``m + n`` customers leave together).  The
unmarked transitions form ``D0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np

from .model import ModelParams, TruncatedGenerator, build_truncated_generator, transitions
from .rg import (
    BidirectionalFactorization,
    bidirectional_inverse_apply,
    bidirectional_inverse_apply_left,
    factorize_bidirectional,
    parts_from_levels,
)
from .stationary import StationaryDist

MARKS = ("A", "B", "AB")
MAX_SEQUENCE = 8


class MarkingError(ValueError):
    pass


@dataclass(frozen=True)
class MmapSet:
    generator: TruncatedGenerator = field(repr=False)
    D0: np.ndarray = field(repr=False)
    DA: np.ndarray = field(repr=False)
    DB: np.ndarray = field(repr=False)
    DAB: np.ndarray = field(repr=False)
    marks: tuple[str, ...] = MARKS

    @property
    def params(self) -> ModelParams:
        return self.generator.params

    @property
    def window(self) -> tuple[int, int]:
        return (-self.generator.k_neg, self.generator.k_pos)

    def marked(self, mark: str) -> np.ndarray:
        try:
            return {"A": self.DA, "B": self.DB, "AB": self.DAB}[mark]
        except KeyError:
            raise MarkingError(f"unknown mark {mark!r}; expected one of {MARKS}") from None


def build_mmap(p: ModelParams, k_neg: int, k_pos: int) -> MmapSet:
    """Split the truncated generator by departure mark.

    Each transition is classified by its event.  Marked entries are copied
    from the generator itself, so ``D0 + DA + DB + DAB`` reproduces it
    exactly; an entry shared by two marked events (possible only for
    ``m = n = 1``) is split by event rate.
    """
    gen = build_truncated_generator(p, k_neg, k_pos)
    Q = gen.Q
    size = gen.size
    owners: dict[tuple[int, int], list[tuple[str | None, float]]] = {}
    index = {s: t for t, s in enumerate(gen.states())}
    for s, row in index.items():
        for tr in transitions(s, p):
            col = index.get(tr.target)
            if col is None:
                if tr.mark is not None:
                    raise MarkingError(f"departure from {s} leaves the window")
                continue  # outward arrival folded into the diagonal
            owners.setdefault((row, col), []).append((tr.mark, tr.rate))

    D = {mark: np.zeros((size, size)) for mark in MARKS}
    D0 = Q.copy()
    for (row, col), events in owners.items():
        marks = {mk for mk, _ in events}
        if marks == {None}:
            continue
        if None in marks:
            raise MarkingError(f"entry {(row, col)} mixes marked and unmarked events")
        if len(events) == 1:
            D[events[0][0]][row, col] = Q[row, col]
        else:
            # the generator entry is the sum of the event rates in this order
            for mk, rate in events[:-1]:
                D[mk][row, col] += rate
            last_mark = events[-1][0]
            D[last_mark][row, col] += Q[row, col] - sum(rate for _, rate in events[:-1])
        D0[row, col] = 0.0
    return MmapSet(gen, D0, D["A"], D["B"], D["AB"])


def _check_window(dist: StationaryDist, mmap: MmapSet) -> np.ndarray:
    if dist.window != mmap.window:
        raise MarkingError(f"distribution window {dist.window} differs from {mmap.window}")
    return dist.vector()


def departure_rates(dist: StationaryDist, mmap: MmapSet) -> dict[str, float]:
    pi = _check_window(dist, mmap)
    p = mmap.params
    a = float(pi @ mmap.DA.sum(axis=1))
    b = float(pi @ mmap.DB.sum(axis=1))
    ab = float(pi @ mmap.DAB.sum(axis=1))
    return {
        "mu_A_impatient": a,
        "mu_B_impatient": b,
        "mu_AB": ab,
        "mu_A_total": a + p.m * ab,
        "mu_B_total": b + p.n * ab,
        "mu_all": a + b + (p.m + p.n) * ab,
    }


class DepartureAnalysis:
    """Mark probabilities sharing one factorization of ``D0``."""

    def __init__(self, dist: StationaryDist, mmap: MmapSet):
        self.pi = _check_window(dist, mmap)
        self.mmap = mmap
        gen = mmap.generator
        level_index = {k: np.arange(gen.level_slice(k).start, gen.level_slice(k).stop)
                       for k in gen.levels}
        parts, self.perm = parts_from_levels(mmap.D0, level_index)
        self.factor: BidirectionalFactorization = factorize_bidirectional(parts)

    def solve_neg_inv(self, v: np.ndarray) -> np.ndarray:
        """``(-D0)^{-1} v``."""
        out = np.empty_like(v, dtype=float)
        out[self.perm] = -bidirectional_inverse_apply(self.factor, v[self.perm])
        return out

    def solve_neg_inv_left(self, w: np.ndarray) -> np.ndarray:
        """``w (-D0)^{-1}``."""
        out = np.empty_like(w, dtype=float)
        out[self.perm] = -bidirectional_inverse_apply_left(self.factor, w[self.perm])
        return out

    @cached_property
    def _u(self) -> np.ndarray:
        return self.solve_neg_inv(np.ones(len(self.pi)))

    @cached_property
    def _y(self) -> np.ndarray:
        return self.solve_neg_inv_left(self.pi)

    def mark_probabilities(self) -> dict[str, dict[str, float]]:
        backward = {mk: float(self.pi @ (self.mmap.marked(mk) @ self._u)) for mk in MARKS}
        forward = {mk: float(self._y @ self.mmap.marked(mk).sum(axis=1)) for mk in MARKS}
        rates = {mk: float(self.pi @ self.mmap.marked(mk).sum(axis=1)) for mk in MARKS}
        total = sum(rates.values())
        at_departure = {mk: rates[mk] / total for mk in MARKS}
        return {"backward": backward, "forward": forward, "at_departure": at_departure}

    def sequence_probability(self, sequence, direction: str = "forward") -> float:
        """Probability of a run of consecutive marks around an arbitrary time.

        Sequences are read oldest first.  ``forward`` gives the next
        ``len(sequence)`` departures after the time point; ``backward`` the
        last ones before it, ending with the most recent.
        """
        seq = _parse_sequence(sequence)
        r = self.pi
        if direction == "forward":
            for mk in seq:
                r = self.solve_neg_inv_left(r) @ self.mmap.marked(mk)
        elif direction == "backward":
            for mk in seq:
                r = self.solve_neg_inv_left(r @ self.mmap.marked(mk))
        else:
            raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
        return float(r.sum())

    def all_sequences(self, k: int, direction: str = "forward") -> dict[tuple[str, ...], float]:
        """Probabilities of all ``3**k`` sequences, sharing prefixes."""
        _parse_sequence(["A"] * k)
        table = {(): self.pi}
        for _ in range(k):
            nxt = {}
            for seq, r in table.items():
                for mk in MARKS:
                    D = self.mmap.marked(mk)
                    if direction == "forward":
                        nxt[seq + (mk,)] = self.solve_neg_inv_left(r) @ D
                    elif direction == "backward":
                        nxt[seq + (mk,)] = self.solve_neg_inv_left(r @ D)
                    else:
                        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
            table = nxt
        return {seq: float(r.sum()) for seq, r in table.items()}


def _parse_sequence(sequence) -> tuple[str, ...]:
    if isinstance(sequence, str):
        sequence = [s.strip() for s in sequence.split(",") if s.strip()]
    seq = tuple(sequence)
    if not seq:
        raise MarkingError("mark sequence must be nonempty")
    if len(seq) > MAX_SEQUENCE:
        raise MarkingError(f"mark sequences are limited to {MAX_SEQUENCE} entries")
    bad = [mk for mk in seq if mk not in MARKS]
    if bad:
        raise MarkingError(f"unknown marks {bad}; expected entries of {MARKS}")
    return seq


def mark_probabilities(dist: StationaryDist, mmap: MmapSet) -> dict[str, dict[str, float]]:
    return DepartureAnalysis(dist, mmap).mark_probabilities()


def consecutive_mark_probability(dist: StationaryDist, mmap: MmapSet, sequence,
                                 direction: str = "forward") -> float:
    return DepartureAnalysis(dist, mmap).sequence_probability(sequence, direction)


def all_mark_sequences(k: int) -> list[tuple[str, ...]]:
    return list(product(MARKS, repeat=k))
