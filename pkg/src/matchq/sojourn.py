"""Mean sojourn time of an A-customer.

Three estimates are offered:

* ``mean_sojourn_little``: mean queue length over arrival rate, exact;
* ``mean_sojourn_probabilistic``: a case-by-case formula that looks only
  at the arrivals the tagged customer still needs and at its own patience;
* ``mean_first_passage_upper``: the mean time until the A-queue empties
  after the tagged arrival, a phase-type first passage that bounds the
  sojourn from above.

B-customer versions follow by exchanging the roles of A and B.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelError, ModelParams, StateCoords, build_truncated_generator, in_state_space
from .rg import bidirectional_inverse_apply, factorize_bidirectional, parts_from_levels
from .stationary import StationaryDist, mean_queue_length_A, swapped_distribution

CONVENTIONS = ("pasta", "conditional")


def erlang_tail_integral(lam: float, theta: float, r: int) -> float:
    """``int_0^inf exp(-theta x) P(Erlang(r, lam) > x) dx``.

    Equals ``sum_{k<r} lam^k / (lam + theta)^(k+1)``.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if r < 1:
        raise ValueError("r must be at least 1")
    s = lam + theta
    ratio = lam / s
    k = np.arange(r)
    return float(np.sum(ratio ** k) / s)


def _joint_survival_sum(lam1: float, r1: int, lam2: float, r2: int, theta: float) -> float:
    # sum_{k<r1, l<r2} C(k+l, k) x^k y^l / s with x, y the rate shares; every
    # term is bounded by (x + y)^(k+l) < 1 so the recurrence cannot overflow
    s = lam1 + lam2 + theta
    x, y = lam1 / s, lam2 / s
    total = 0.0
    first = 1.0  # term (k, 0)
    for k in range(r1):
        if k:
            first *= x
        term = first
        total += term
        for l in range(1, r2):
            term *= y * (k + l) / l
            total += term
    return total / s


def erlang_max_sojourn(lam1: float, r1: int, lam2: float, r2: int, theta: float) -> float:
    """``int_0^inf exp(-theta x) [1 - F1(x) F2(x)] dx`` for Erlang ``F1``, ``F2``.

    ``1 - F1 F2 = S1 + S2 - S1 S2`` in terms of the survival functions.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    if lam1 < 0 or lam2 < 0 or r1 < 1 or r2 < 1:
        raise ValueError("need nonnegative rates and r1, r2 >= 1")
    return (erlang_tail_integral(lam1, theta, r1) + erlang_tail_integral(lam2, theta, r2)
            - _joint_survival_sum(lam1, r1, lam2, r2, theta))


def is_post_entry_state(s: tuple[int, int], p: ModelParams) -> bool:
    """States reachable right after an A-arrival, before any matching."""
    i, j = s
    return i >= 1 and in_state_space(i - 1, j, p)


def conditional_sojourn(post_entry: tuple[int, int], p: ModelParams) -> float:
    """Mean sojourn of an A-customer who finds ``post_entry`` on arrival.

    ``post_entry = (i, j)`` counts the tagged customer and is taken before
    matching, so ``(m, j >= n)`` means the arrival completes a match.  The
    tagged customer is the ``f+1``-th member of the ``h+1``-th A-batch in
    line, where ``i = h m + f + 1``.  It leaves at a match, which needs
    ``m - f - 1`` more A-arrivals and ``(h + 1) n - j`` more B-arrivals, or
    at its own patience expiry, whichever comes first.
    """
    i, j = post_entry
    if i < 1:
        raise ModelError("post-entry A state must have i >= 1")
    if not is_post_entry_state(post_entry, p):
        raise ModelError(f"{tuple(post_entry)} is not reachable by an A-arrival")
    m, n = p.m, p.n
    if j >= n:
        if i == m:
            return 0.0
        return erlang_tail_integral(p.lambda1, p.theta1, m - i)
    h, f = divmod(i - 1, m)
    need_b = (h + 1) * n - j
    need_a = m - f - 1
    if need_a == 0:
        return erlang_tail_integral(p.lambda2, p.theta1, need_b)
    return erlang_max_sojourn(p.lambda1, need_a, p.lambda2, need_b, p.theta1)


@dataclass(frozen=True)
class ArrivalWeights:
    """Probability of each post-entry state, before matching."""

    states: tuple[StateCoords, ...]
    phi: np.ndarray = field(repr=False)
    convention: str


def arrival_weights(dist: StationaryDist, convention: str = "pasta") -> ArrivalWeights:
    """Weights of the states an arriving A-customer creates.

    ``"pasta"``: the arrival sees ``(i, j)`` with probability ``pi(i, j)`` and
    creates ``(i + 1, j)``.  ``"conditional"``: ``pi`` restricted to ``i >= 1`` and
    renormalized, each state read directly as a post-entry state.
    """
    pi = dist.as_dict()
    if convention == "pasta":
        states = tuple(StateCoords(i + 1, j) for (i, j) in pi)
        phi = np.fromiter(pi.values(), dtype=float, count=len(pi))
        return ArrivalWeights(states, phi, convention)
    if convention == "conditional":
        keep = [(s, v) for s, v in pi.items() if s[0] >= 1]
        phi = np.array([v for _, v in keep])
        return ArrivalWeights(tuple(StateCoords(*s) for s, _ in keep), phi / phi.sum(),
                              convention)
    raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")


def mean_sojourn_little(dist: StationaryDist, p: ModelParams | None = None) -> float:
    p = p or dist.params
    return mean_queue_length_A(dist) / p.lambda1


def mean_sojourn_probabilistic(dist: StationaryDist, p: ModelParams | None = None,
                               convention: str = "pasta") -> float:
    """Arrival-weighted average of :func:`conditional_sojourn`."""
    p = p or dist.params
    w = arrival_weights(dist, convention)
    values = np.array([conditional_sojourn(s, p) for s in w.states])
    mask = w.phi > 0
    return float(w.phi[mask] @ values[mask])


@dataclass(frozen=True)
class PhRepresentation:
    """First passage to ``{i = 0}`` on a window, as ``(initial, T)``.

    ``T`` is the generator restricted to states with ``i >= 1`` (natural
    level order); ``initial`` is aligned with ``states``.  ``absorbed`` is the
    arrival mass that lands in ``{i = 0}`` immediately (a completed match)
    and ``dropped`` the mass whose entry state lies outside the window.
    """

    states: tuple[StateCoords, ...]
    initial: np.ndarray = field(repr=False)
    T: np.ndarray = field(repr=False)
    level_index: dict[int, np.ndarray] = field(repr=False)
    absorbed: float
    dropped: float


def ph_representation(dist: StationaryDist) -> PhRepresentation:
    p = dist.params
    gen = build_truncated_generator(p, dist.k_neg, dist.k_pos)
    all_states = gen.states()
    keep = np.array([s.i >= 1 for s in all_states])
    kept_idx = np.flatnonzero(keep)
    position = {all_states[k]: t for t, k in enumerate(kept_idx)}
    T = gen.Q[np.ix_(kept_idx, kept_idx)]

    level_index = {}
    for level in gen.levels:
        sl = gen.level_slice(level)
        level_index[level] = np.array([position[all_states[k]]
                                       for k in range(sl.start, sl.stop) if keep[k]], dtype=int)

    initial = np.zeros(len(kept_idx))
    absorbed = dropped = 0.0
    w = arrival_weights(dist, "pasta")
    for s, weight in zip(w.states, w.phi):
        i, j = s
        if i >= p.m and j >= p.n:
            absorbed += weight  # the arrival completes a match and leaves with it
            continue
        t = position.get(s)
        if t is None:
            dropped += weight
        else:
            initial[t] += weight
    states = tuple(all_states[k] for k in kept_idx)
    return PhRepresentation(states, initial, T, level_index, absorbed, dropped)


def mean_first_passage_upper(dist: StationaryDist, p: ModelParams | None = None,
                             ph: PhRepresentation | None = None) -> float:
    """Mean time until no A-customer waits, from the arrival's entry state.

    Computed as ``-initial . T^{-1} e`` with ``T^{-1}`` applied through the
    two-sided block factorization.
    """
    ph = ph or ph_representation(dist)
    parts, perm = parts_from_levels(ph.T, ph.level_index)
    x = bidirectional_inverse_apply(factorize_bidirectional(parts), np.ones(len(perm)))
    return float(-(ph.initial[perm] @ x))


def sojourn_summary(dist: StationaryDist, convention: str = "pasta") -> dict:
    return {
        "E_W_little": mean_sojourn_little(dist),
        "E_W_prob": mean_sojourn_probabilistic(dist, convention=convention),
        "E_xi_upper": mean_first_passage_upper(dist),
        "convention": convention,
    }


def sojourn_summary_B(dist: StationaryDist, convention: str = "pasta") -> dict:
    """B-customer counterpart via the role-swapped model."""
    return sojourn_summary(swapped_distribution(dist), convention)
