"""Discrete-event simulation of the matched queue.

Each replication draws its exponential variates up front from a Philox
stream keyed by ``seed + replication`` and runs a compiled event loop.
Patience deadlines sit in a binary heap; customers that already left are
skipped when they surface (tombstones).  Confidence intervals use the
Student-t quantile across independent replications.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats

from .model import ModelParams

MARK_CODES = {"A": 0, "B": 1, "AB": 2}
MARK_NAMES = ("A", "B", "AB")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    The run stops after ``events`` events, or earlier at simulated time
    ``horizon_time`` when that is given.  ``warmup_fraction`` of the events
    (or of the time horizon) is discarded.
    """

    params: ModelParams
    events: int = 1_250_000
    warmup_fraction: float = 0.2
    seed: int = 2026
    replications: int = 10
    horizon_time: float | None = None
    hist_cap: int = 40
    mark_k_max: int = 3
    keep_log: bool = False

    def __post_init__(self):
        if self.events < 1:
            raise ValueError("events must be positive")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.horizon_time is not None and not self.horizon_time > 0:
            raise ValueError("horizon_time must be positive")
        if not 0 <= self.seed < 2**63:
            raise ValueError("seed must be a nonnegative 64-bit integer")


@dataclass(frozen=True)
class Estimate:
    """Mean over replications with a Student-t confidence interval."""

    values: np.ndarray = field(repr=False)
    level: float = 0.99

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def half_width_at(self, level: float) -> float:
        r = len(self.values)
        if r < 2:
            return math.inf
        q = stats.t.ppf(0.5 + level / 2, r - 1)
        return float(q * np.std(self.values, ddof=1) / math.sqrt(r))

    @property
    def half_width(self) -> float:
        return self.half_width_at(self.level)

    def contains(self, x: float, level: float | None = None) -> bool:
        hw = self.half_width_at(self.level if level is None else level)
        return abs(x - self.mean) <= hw

    def to_dict(self) -> dict:
        return {"mean": self.mean, "half_width": self.half_width, "level": self.level}


# ---------------------------------------------------------------------------
# Compiled kernel.


@numba.njit(cache=True)
def _heap_push(keys, ids, size, key, ident):
    i = size
    keys[i] = key
    ids[i] = ident
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] <= keys[i]:
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        ids[parent], ids[i] = ids[i], ids[parent]
        i = parent
    return size + 1


@numba.njit(cache=True)
def _heap_pop(keys, ids, size):
    size -= 1
    keys[0] = keys[size]
    ids[0] = ids[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        child = left
        if left + 1 < size and keys[left + 1] < keys[left]:
            child = left + 1
        if keys[i] <= keys[child]:
            break
        keys[child], keys[i] = keys[i], keys[child]
        ids[child], ids[i] = ids[i], ids[child]
        i = child
    return size


@numba.njit(cache=True)
def _run_kernel(m, n, ia_a, ia_b, pat_a, pat_b, max_events, warm_events, t_max, t_warm, cap):
    size = ia_a.shape[0]
    inf = np.inf
    a_arr = np.empty(size)
    b_arr = np.empty(size)
    a_gone = np.zeros(size, dtype=np.bool_)
    b_gone = np.zeros(size, dtype=np.bool_)
    ha_key = np.empty(size)
    ha_id = np.empty(size, dtype=np.int64)
    hb_key = np.empty(size)
    hb_id = np.empty(size, dtype=np.int64)
    ha_size = 0
    hb_size = 0
    a_next = 0
    b_next = 0
    a_head = 0
    b_head = 0
    n1 = 0
    n2 = 0
    next_a = ia_a[0]
    next_b = ia_b[0]

    dep_t = np.empty(max_events)
    dep_m = np.empty(max_events, dtype=np.int8)
    ndep = 0
    hist = np.zeros((cap + 1, cap + 1), dtype=np.int64)
    area1 = 0.0
    area2 = 0.0
    soj = np.zeros(2)
    soj_cnt = np.zeros(2, dtype=np.int64)
    arrivals = np.zeros(2, dtype=np.int64)
    violations = 0

    t_prev = 0.0
    t_start = 0.0
    stats_on = False
    ev = 0
    while ev < max_events:
        while ha_size > 0 and a_gone[ha_id[0]]:
            ha_size = _heap_pop(ha_key, ha_id, ha_size)
        while hb_size > 0 and b_gone[hb_id[0]]:
            hb_size = _heap_pop(hb_key, hb_id, hb_size)
        ea = ha_key[0] if ha_size > 0 else inf
        eb = hb_key[0] if hb_size > 0 else inf
        # ties resolve as A-arrival, B-arrival, A-expiry, B-expiry
        t = next_a
        kind = 0
        if next_b < t:
            t = next_b
            kind = 1
        if ea < t:
            t = ea
            kind = 2
        if eb < t:
            t = eb
            kind = 3
        if t > t_max:
            if stats_on:
                lo = max(t_prev, t_start)
                area1 += n1 * (t_max - lo)
                area2 += n2 * (t_max - lo)
            t_prev = t_max
            break
        if not stats_on:
            if warm_events >= 0:
                if ev >= warm_events:
                    stats_on = True
                    t_start = t_prev
            elif t >= t_warm:
                stats_on = True
                t_start = t_warm
        if stats_on:
            lo = max(t_prev, t_start)
            area1 += n1 * (t - lo)
            area2 += n2 * (t - lo)

        if kind == 0:
            if stats_on:
                hist[min(n1, cap), min(n2, cap)] += 1
                arrivals[0] += 1
            k = a_next
            a_next += 1
            a_arr[k] = t
            ha_size = _heap_push(ha_key, ha_id, ha_size, t + pat_a[k], k)
            n1 += 1
            next_a = t + ia_a[a_next]
        elif kind == 1:
            if stats_on:
                arrivals[1] += 1
            k = b_next
            b_next += 1
            b_arr[k] = t
            hb_size = _heap_push(hb_key, hb_id, hb_size, t + pat_b[k], k)
            n2 += 1
            next_b = t + ia_b[b_next]
        elif kind == 2:
            k = ha_id[0]
            ha_size = _heap_pop(ha_key, ha_id, ha_size)
            a_gone[k] = True
            n1 -= 1
            if stats_on:
                if a_arr[k] > t_start:
                    soj[0] += t - a_arr[k]
                    soj_cnt[0] += 1
                dep_t[ndep] = t
                dep_m[ndep] = 0
                ndep += 1
        else:
            k = hb_id[0]
            hb_size = _heap_pop(hb_key, hb_id, hb_size)
            b_gone[k] = True
            n2 -= 1
            if stats_on:
                if b_arr[k] > t_start:
                    soj[1] += t - b_arr[k]
                    soj_cnt[1] += 1
                dep_t[ndep] = t
                dep_m[ndep] = 1
                ndep += 1

        if kind <= 1 and n1 >= m and n2 >= n:
            taken = 0
            while taken < m:
                if not a_gone[a_head]:
                    a_gone[a_head] = True
                    taken += 1
                    if stats_on and a_arr[a_head] > t_start:
                        soj[0] += t - a_arr[a_head]
                        soj_cnt[0] += 1
                a_head += 1
            taken = 0
            while taken < n:
                if not b_gone[b_head]:
                    b_gone[b_head] = True
                    taken += 1
                    if stats_on and b_arr[b_head] > t_start:
                        soj[1] += t - b_arr[b_head]
                        soj_cnt[1] += 1
                b_head += 1
            n1 -= m
            n2 -= n
            if stats_on:
                dep_t[ndep] = t
                dep_m[ndep] = 2
                ndep += 1
        if n1 >= m and n2 >= n:
            violations += 1
        t_prev = t
        ev += 1

    censored = np.zeros(2, dtype=np.int64)
    for k in range(a_head, a_next):
        if not a_gone[k] and a_arr[k] > t_start:
            censored[0] += 1
    for k in range(b_head, b_next):
        if not b_gone[k] and b_arr[k] > t_start:
            censored[1] += 1
    exhausted = ev >= max_events and t_max < inf
    return (t_start, t_prev, area1, area2, soj, soj_cnt, arrivals, censored,
            dep_t[:ndep].copy(), dep_m[:ndep].copy(), hist, violations, exhausted)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Replication:
    index: int
    t_start: float
    t_end: float
    area: tuple[float, float]
    sojourn_sum: tuple[float, float]
    sojourn_count: tuple[int, int]
    arrivals: tuple[int, int]
    censored: tuple[int, int]
    dep_times: np.ndarray = field(repr=False)
    dep_marks: np.ndarray = field(repr=False)
    seen_at_arrival: np.ndarray = field(repr=False)
    omega_violations: int

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


def run_replication(cfg: SimConfig, index: int) -> Replication:
    p = cfg.params
    rng = np.random.Generator(np.random.Philox(cfg.seed + index))
    size = cfg.events + 2
    ia_a = rng.exponential(1.0 / p.lambda1, size)
    ia_b = rng.exponential(1.0 / p.lambda2, size)
    pat_a = rng.exponential(1.0 / p.theta1, size)
    pat_b = rng.exponential(1.0 / p.theta2, size)
    if cfg.horizon_time is None:
        warm_events, t_max, t_warm = int(cfg.warmup_fraction * cfg.events), np.inf, np.inf
    else:
        warm_events, t_max, t_warm = -1, cfg.horizon_time, cfg.warmup_fraction * cfg.horizon_time
    out = _run_kernel(p.m, p.n, ia_a, ia_b, pat_a, pat_b, cfg.events, warm_events,
                      t_max, t_warm, cfg.hist_cap)
    (t_start, t_end, a1, a2, soj, soj_cnt, arrivals, censored,
     dep_t, dep_m, hist, violations, exhausted) = out
    if exhausted:
        raise SimulationError("event budget ran out before the time horizon")
    return Replication(index, t_start, t_end, (a1, a2), (soj[0], soj[1]),
                       (int(soj_cnt[0]), int(soj_cnt[1])), (int(arrivals[0]), int(arrivals[1])),
                       (int(censored[0]), int(censored[1])), dep_t, dep_m, hist, int(violations))


def _sequence_frequencies(times: np.ndarray, marks: np.ndarray, k: int, direction: str) -> np.ndarray:
    """Fraction of time during which the next/last ``k`` marks form each code.

    Exact time average over the log, i.e. the limit of uniform time sampling.
    Codes are base-3 with the oldest mark as the leading digit.
    """
    L = len(marks)
    if L <= k:
        raise SimulationError(f"need more than {k} departures, have {L}")
    widths = np.diff(times)  # gap q runs from departure q to q+1
    codes = np.zeros(L - k + 1, dtype=np.int64)
    for q in range(k):
        codes = codes * 3 + marks[q:L - k + 1 + q]
    # codes[s] encodes marks s..s+k-1
    if direction == "forward":
        # during gap q the next k marks are q+1..q+k
        w, c = widths[:L - k], codes[1:]
    else:
        # during gap q the last k marks are q-k+1..q
        w, c = widths[k - 1:], codes[:L - k]
    freq = np.bincount(c, weights=w, minlength=3**k)
    return freq / w.sum()


def decode_sequence(code: int, k: int) -> tuple[str, ...]:
    digits = []
    for _ in range(k):
        code, d = divmod(code, 3)
        digits.append(MARK_NAMES[d])
    return tuple(reversed(digits))


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    mean_Q1: Estimate
    mean_Q2: Estimate
    mean_sojourn_A: Estimate
    mean_sojourn_B: Estimate
    rates: dict[str, Estimate]
    seen_at_arrival: np.ndarray = field(repr=False)
    seen_at_arrival_reps: np.ndarray = field(repr=False)
    mark_log_stats: dict = field(repr=False)
    censored: tuple[int, int] = (0, 0)
    replications: tuple[Replication, ...] = field(repr=False, default=())

    def to_dict(self) -> dict:
        stats_out = {}
        for family, table in self.mark_log_stats.items():
            stats_out[family] = {",".join(seq) if isinstance(seq, tuple) else seq: est.to_dict()
                                 for seq, est in table.items()}
        return {
            "params": self.config.params.to_dict(),
            "events": self.config.events,
            "replications": self.config.replications,
            "seed": self.config.seed,
            "warmup_fraction": self.config.warmup_fraction,
            "mean_Q1": self.mean_Q1.to_dict(),
            "mean_Q2": self.mean_Q2.to_dict(),
            "mean_sojourn_A": self.mean_sojourn_A.to_dict(),
            "mean_sojourn_B": self.mean_sojourn_B.to_dict(),
            "rates": {k: v.to_dict() for k, v in self.rates.items()},
            "marks": stats_out,
            "censored": list(self.censored),
        }


def empirical_mark_sequences(result: SimResult | list[Replication], k_max: int,
                             level: float = 0.99) -> dict:
    """Time-averaged frequencies of the next/last ``k`` marks, ``k <= k_max``.

    Returns ``{"forward": {seq: Estimate}, "backward": {...},
    "at_departure": {mark: Estimate}}`` with one value per replication.
    """
    reps = result.replications if isinstance(result, SimResult) else list(result)
    if not reps:
        raise SimulationError("no mark log retained")
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    shortest = min(len(r.dep_marks) for r in reps)
    if k_max >= shortest:
        raise SimulationError(f"k_max={k_max} exceeds the mark log length {shortest}")
    out: dict[str, dict] = {"forward": {}, "backward": {}, "at_departure": {}}
    for direction in ("forward", "backward"):
        for k in range(1, k_max + 1):
            per_rep = np.array([_sequence_frequencies(r.dep_times, r.dep_marks.astype(np.int64),
                                                      k, direction) for r in reps])
            for code in range(3**k):
                out[direction][decode_sequence(code, k)] = Estimate(per_rep[:, code], level)
    counts = np.array([np.bincount(r.dep_marks, minlength=3) for r in reps], dtype=float)
    shares = counts / counts.sum(axis=1, keepdims=True)
    for d, name in enumerate(MARK_NAMES):
        out["at_departure"][name] = Estimate(shares[:, d], level)
    return out


def simulate(cfg: SimConfig) -> SimResult:
    """Run ``cfg.replications`` independent replications and summarize them."""
    p = cfg.params
    reps = [run_replication(cfg, r) for r in range(cfg.replications)]
    bad = sum(r.omega_violations for r in reps)
    if bad:
        raise SimulationError(f"{bad} events left both queues at or above their batch size")
    dur = np.array([r.duration for r in reps])
    q1 = np.array([r.area[0] for r in reps]) / dur
    q2 = np.array([r.area[1] for r in reps]) / dur
    wa = np.array([r.sojourn_sum[0] / max(r.sojourn_count[0], 1) for r in reps])
    wb = np.array([r.sojourn_sum[1] / max(r.sojourn_count[1], 1) for r in reps])
    counts = np.array([np.bincount(r.dep_marks, minlength=3) for r in reps], dtype=float)
    a, b, ab = (counts[:, d] / dur for d in range(3))
    rates = {
        "mu_A_impatient": a,
        "mu_B_impatient": b,
        "mu_AB": ab,
        "mu_A_total": a + p.m * ab,
        "mu_B_total": b + p.n * ab,
        "mu_all": a + b + (p.m + p.n) * ab,
    }
    hists = np.array([r.seen_at_arrival / max(r.seen_at_arrival.sum(), 1) for r in reps])
    marks = empirical_mark_sequences(reps, cfg.mark_k_max) if cfg.mark_k_max else {}
    kept = tuple(reps) if cfg.keep_log else tuple(
        Replication(r.index, r.t_start, r.t_end, r.area, r.sojourn_sum, r.sojourn_count,
                    r.arrivals, r.censored, r.dep_times[:0], r.dep_marks[:0],
                    r.seen_at_arrival, r.omega_violations) for r in reps)
    censored = (sum(r.censored[0] for r in reps), sum(r.censored[1] for r in reps))
    return SimResult(cfg, Estimate(q1), Estimate(q2), Estimate(wa), Estimate(wb),
                     {k: Estimate(v) for k, v in rates.items()}, hists.mean(axis=0), hists,
                     marks, censored, kept)


def write_mark_log(path, result: SimResult) -> None:
    """CSV of ``replication,time,mark`` rows for the retained logs."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("replication,time,mark\n")
        for r in result.replications:
            for t, mk in zip(r.dep_times, r.dep_marks):
                fh.write(f"{r.index},{t!r},{MARK_NAMES[mk]}\n")
