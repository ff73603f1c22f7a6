"""R-, G- and U-measures and UL-type block factorizations.

Everything here works on generic block-tridiagonal data.  A matrix ``T``
with diagonal blocks ``D_0..D_N``, super-diagonal ``up_k = T[k, k+1]`` and
sub-diagonal ``down_k = T[k+1, k]`` is factored from the far end inward::

    U_N = D_N
    U_k = D_k + up_k (-U_{k+1})^{-1} down_k
    R_k = up_k (-U_{k+1})^{-1}
    G_k = (-U_k)^{-1} down_{k-1}

so that ``T = (I - R_U) U_D (I - G_L)`` with ``R_U`` strictly upper and
``G_L`` strictly lower block bidiagonal.  The model-specific entry points
build ``T`` from the generator blocks on either axis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .model import ModelParams, row_blocks

PIVOT_TOL = 1e-13


class SingularBlockError(ArithmeticError):
    """A diagonal U-block is numerically singular."""


class CapExhaustedError(ArithmeticError):
    """The level cap grew past its limit without R_1 settling."""


@dataclass(frozen=True)
class BlockTridiagonal:
    """Blocks of a (finite) block-tridiagonal matrix; sizes may vary."""

    diag: tuple[np.ndarray, ...]
    upper: tuple[np.ndarray, ...]
    lower: tuple[np.ndarray, ...]

    def __post_init__(self):
        n = len(self.diag)
        if n == 0:
            raise ValueError("empty block matrix")
        if len(self.upper) != n - 1 or len(self.lower) != n - 1:
            raise ValueError("need len(upper) == len(lower) == len(diag) - 1")
        for k, (u, d) in enumerate(zip(self.upper, self.lower)):
            a, b = self.diag[k].shape[0], self.diag[k + 1].shape[0]
            if u.shape != (a, b) or d.shape != (b, a):
                raise ValueError(f"coupling blocks at {k} do not conform")

    @classmethod
    def from_lists(cls, diag, upper, lower) -> "BlockTridiagonal":
        conv = lambda seq: tuple(np.asarray(b, dtype=float) for b in seq)
        return cls(conv(diag), conv(upper), conv(lower))

    @property
    def nblocks(self) -> int:
        return len(self.diag)

    @property
    def sizes(self) -> list[int]:
        return [d.shape[0] for d in self.diag]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def dim(self) -> int:
        return int(sum(self.sizes))

    def split(self, v: np.ndarray) -> list[np.ndarray]:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.dim:
            raise ValueError(f"vector of length {v.shape[0]} does not match dimension {self.dim}")
        off = self.offsets
        return [v[off[k]:off[k + 1]] for k in range(self.nblocks)]

    def to_dense(self) -> np.ndarray:
        off = self.offsets
        out = np.zeros((self.dim, self.dim))
        for k, d in enumerate(self.diag):
            out[off[k]:off[k + 1], off[k]:off[k + 1]] = d
        for k, (u, l) in enumerate(zip(self.upper, self.lower)):
            out[off[k]:off[k + 1], off[k + 1]:off[k + 2]] = u
            out[off[k + 1]:off[k + 2], off[k]:off[k + 1]] = l
        return out

    def matvec(self, v: np.ndarray) -> np.ndarray:
        parts = self.split(v)
        out = [d @ x for d, x in zip(self.diag, parts)]
        for k, (u, l) in enumerate(zip(self.upper, self.lower)):
            out[k] = out[k] + u @ parts[k + 1]
            out[k + 1] = out[k + 1] + l @ parts[k]
        return np.concatenate(out)

    def transpose(self) -> "BlockTridiagonal":
        return BlockTridiagonal(
            tuple(d.T for d in self.diag),
            tuple(l.T for l in self.lower),
            tuple(u.T for u in self.upper),
        )

    def reversed(self) -> "BlockTridiagonal":
        """Same matrix with the block order reversed."""
        return BlockTridiagonal(self.diag[::-1], self.lower[::-1], self.upper[::-1])

    def with_diag(self, k: int, block: np.ndarray) -> "BlockTridiagonal":
        diag = list(self.diag)
        diag[k] = block
        return BlockTridiagonal(tuple(diag), self.upper, self.lower)


def _checked_lu(block: np.ndarray, where: str):
    if block.shape[0] == 0:
        return None
    with warnings.catch_warnings():
        # exact zero pivots are reported below as SingularBlockError
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(block, check_finite=True)
    pivots = np.abs(np.diag(lu))
    scale = max(1.0, np.abs(block).max())
    if pivots.min() < PIVOT_TOL * scale:
        raise SingularBlockError(f"U-block {where} is numerically singular (pivot {pivots.min():.3e})")
    return lu, piv


def _solve(lu, rhs: np.ndarray, trans: int = 0) -> np.ndarray:
    if lu is None:
        return np.zeros_like(rhs)
    return lu_solve(lu, rhs, trans=trans, check_finite=False)


def _right_inverse_product(lu, left: np.ndarray) -> np.ndarray:
    """``left @ inv(U)`` through the transposed factorization."""
    if lu is None:
        return np.zeros((left.shape[0], 0))
    return lu_solve(lu, left.T, trans=1, check_finite=False).T


@dataclass(frozen=True)
class UlFactorization:
    """``T = (I - R_U) U_D (I - G_L)`` for a block-tridiagonal ``T``.

    ``R_upper[k]`` sits in block (k, k+1) of ``R_U`` and ``G_lower[k]`` in
    block (k, k-1) of ``G_L`` (``G_lower[0]`` is ``None``).
    """

    matrix: BlockTridiagonal = field(repr=False)
    R_upper: tuple[np.ndarray, ...] = field(repr=False)
    U_diag: tuple[np.ndarray, ...] = field(repr=False)
    G_lower: tuple[np.ndarray | None, ...] = field(repr=False)
    lus: tuple = field(repr=False)
    window: tuple[int, int] = (0, 0)

    def reconstruct(self) -> np.ndarray:
        T = self.matrix
        off = T.offsets
        size = T.dim
        I = np.eye(size)
        RU = np.zeros((size, size))
        GL = np.zeros((size, size))
        UD = np.zeros((size, size))
        for k in range(T.nblocks):
            UD[off[k]:off[k + 1], off[k]:off[k + 1]] = self.U_diag[k]
        for k, R in enumerate(self.R_upper):
            RU[off[k]:off[k + 1], off[k + 1]:off[k + 2]] = R
        for k in range(1, T.nblocks):
            GL[off[k]:off[k + 1], off[k - 1]:off[k]] = self.G_lower[k]
        return (I - RU) @ UD @ (I - GL)


def ul_factorize(T: BlockTridiagonal, first_may_be_singular: bool = False,
                 window: tuple[int, int] | None = None) -> UlFactorization:
    """UL-type block factorization of ``T``.

    ``first_may_be_singular`` skips the pivot check on ``U_0``, which is the
    censored generator of a conservative chain and so singular by design.
    """
    N = T.nblocks
    U: list[np.ndarray] = [None] * N  # type: ignore[list-item]
    R: list[np.ndarray] = [None] * (N - 1)  # type: ignore[list-item]
    G: list[np.ndarray | None] = [None] * N
    lus: list = [None] * N
    U[N - 1] = T.diag[N - 1].copy()
    for k in range(N - 1, -1, -1):
        if k < N - 1:
            # R_k = up_k (-U_{k+1})^{-1}
            R[k] = -_right_inverse_product(lus[k + 1], T.upper[k])
            U[k] = T.diag[k] + R[k] @ T.lower[k]
        if k == 0 and first_may_be_singular:
            try:
                lus[0] = _checked_lu(U[0], "0")
            except SingularBlockError:
                lus[0] = None
        else:
            lus[k] = _checked_lu(U[k], str(k))
        if k > 0:
            G[k] = -_solve(lus[k], T.lower[k - 1])
    return UlFactorization(T, tuple(R), tuple(U), tuple(G), tuple(lus),
                           window if window is not None else (0, N - 1))


def apply_unilateral_inverse(f: UlFactorization, v: np.ndarray) -> np.ndarray:
    """``T^{-1} v`` via ``(I - G_L)^{-1} U_D^{-1} (I - R_U)^{-1} v``."""
    T = f.matrix
    parts = T.split(v)
    N = T.nblocks
    y = [None] * N
    y[N - 1] = parts[N - 1]
    for k in range(N - 2, -1, -1):
        y[k] = parts[k] + f.R_upper[k] @ y[k + 1]
    if any(lu is None and T.diag[k].shape[0] for k, lu in enumerate(f.lus)):
        raise SingularBlockError("factorization has a singular U-block")
    z = [_solve(f.lus[k], y[k]) for k in range(N)]
    x = [None] * N
    x[0] = z[0]
    for k in range(1, N):
        x[k] = z[k] + f.G_lower[k] @ x[k - 1]
    return np.concatenate(x)


def apply_unilateral_inverse_left(f: UlFactorization, w: np.ndarray) -> np.ndarray:
    """Row vector ``w T^{-1}`` via ``w (I - G_L)^{-1} U_D^{-1} (I - R_U)^{-1}``."""
    T = f.matrix
    parts = T.split(w)
    N = T.nblocks
    if any(lu is None and T.diag[k].shape[0] for k, lu in enumerate(f.lus)):
        raise SingularBlockError("factorization has a singular U-block")
    y = [None] * N
    y[N - 1] = parts[N - 1]
    for k in range(N - 2, -1, -1):
        y[k] = parts[k] + y[k + 1] @ f.G_lower[k + 1]
    z = [_solve(f.lus[k], y[k], trans=1) for k in range(N)]
    x = [None] * N
    x[0] = z[0]
    for k in range(1, N):
        x[k] = z[k] + x[k - 1] @ f.R_upper[k - 1]
    return np.concatenate(x)


# ---------------------------------------------------------------------------
# Two-sided matrices: a negative part (ordered 0, -1, -2, ...) and a positive
# part (ordered 1, 2, ...) joined by one corner coupling in each direction.


@dataclass(frozen=True)
class BidirectionalParts:
    """``T = [[T11, T12], [T21, T22]]`` with ``T11`` over levels ``0, -1, ...``.

    ``corner_up`` couples the level-0 block of ``T11`` to the level-1 block
    of ``T22`` and ``corner_down`` couples back.  ``neg`` may be ``None`` when
    the non-positive side has no states.
    """

    neg: BlockTridiagonal | None
    pos: BlockTridiagonal
    corner_up: np.ndarray
    corner_down: np.ndarray

    @property
    def neg_dim(self) -> int:
        return 0 if self.neg is None else self.neg.dim

    @property
    def dim(self) -> int:
        return self.neg_dim + self.pos.dim

    def transpose(self) -> "BidirectionalParts":
        neg = None if self.neg is None else self.neg.transpose()
        return BidirectionalParts(neg, self.pos.transpose(), self.corner_down.T, self.corner_up.T)

    def natural_order(self) -> np.ndarray:
        """Permutation from internal order (neg blocks, pos blocks) to level order.

        Entry ``t`` of the result is the internal index of the state sitting at
        position ``t`` when levels are listed from most negative upward.
        """
        idx = []
        if self.neg is not None:
            off = self.neg.offsets
            for k in range(self.neg.nblocks - 1, -1, -1):
                idx.extend(range(off[k], off[k + 1]))
        idx.extend(range(self.neg_dim, self.dim))
        return np.asarray(idx, dtype=int)

    def to_dense(self) -> np.ndarray:
        """Dense matrix in internal order."""
        n1 = self.neg_dim
        out = np.zeros((self.dim, self.dim))
        out[n1:, n1:] = self.pos.to_dense()
        if self.neg is not None:
            out[:n1, :n1] = self.neg.to_dense()
            a = self.neg.sizes[0]
            b = self.pos.sizes[0]
            out[:a, n1:n1 + b] = self.corner_up
            out[n1:n1 + b, :a] = self.corner_down
        return out

    def matvec(self, v: np.ndarray) -> np.ndarray:
        n1 = self.neg_dim
        v1, v2 = v[:n1], v[n1:]
        out2 = self.pos.matvec(v2)
        if self.neg is None:
            return out2
        out1 = self.neg.matvec(v1)
        a, b = self.neg.sizes[0], self.pos.sizes[0]
        out1[:a] += self.corner_up @ v2[:b]
        out2[:b] += self.corner_down @ v1[:a]
        return np.concatenate([out1, out2])


@dataclass(frozen=True)
class BidirectionalFactorization:
    parts: BidirectionalParts
    pos: UlFactorization
    schur: UlFactorization | None
    correction: np.ndarray = field(repr=False)  # T12 T22^{-1} T21, level-0 corner


def factorize_bidirectional(parts: BidirectionalParts) -> BidirectionalFactorization:
    """Factor both halves; the negative half carries the Schur complement.

    The coupling blocks each touch a single corner, so ``T12 T22^{-1} T21``
    is nonzero only in the level-0 block, where it equals
    ``corner_up [T22^{-1}]_{11} corner_down``.  For the UL factorization the
    leading block of the inverse is ``U_1^{-1}``.
    """
    f_pos = ul_factorize(parts.pos)
    if parts.neg is None:
        return BidirectionalFactorization(parts, f_pos, None, np.zeros((0, 0)))
    lu1 = f_pos.lus[0]
    correction = parts.corner_up @ _solve(lu1, parts.corner_down)
    schur = parts.neg.with_diag(0, parts.neg.diag[0] - correction)
    try:
        f_neg = ul_factorize(schur)
    except SingularBlockError as exc:
        raise SingularBlockError(f"Schur complement is singular: {exc}") from exc
    return BidirectionalFactorization(parts, f_pos, f_neg, correction)


def bidirectional_inverse_apply(parts: BidirectionalParts | BidirectionalFactorization,
                                v: np.ndarray) -> np.ndarray:
    """``T^{-1} v`` for a two-sided block matrix, in internal order.

    Uses ``x1 = S^{-1}(v1 - T12 T22^{-1} v2)`` and
    ``x2 = T22^{-1}(v2 - T21 x1)`` with ``S = T11 - T12 T22^{-1} T21``.
    """
    f = parts if isinstance(parts, BidirectionalFactorization) else factorize_bidirectional(parts)
    P = f.parts
    v = np.asarray(v, dtype=float)
    if v.shape[0] != P.dim:
        raise ValueError(f"vector of length {v.shape[0]} does not match dimension {P.dim}")
    n1 = P.neg_dim
    v1, v2 = v[:n1], v[n1:]
    if f.schur is None:
        return apply_unilateral_inverse(f.pos, v2)
    a, b = P.neg.sizes[0], P.pos.sizes[0]
    w2 = apply_unilateral_inverse(f.pos, v2)
    rhs1 = v1.copy()
    rhs1[:a] -= P.corner_up @ w2[:b]
    x1 = apply_unilateral_inverse(f.schur, rhs1)
    rhs2 = v2.copy()
    rhs2[:b] -= P.corner_down @ x1[:a]
    x2 = apply_unilateral_inverse(f.pos, rhs2)
    return np.concatenate([x1, x2])


def bidirectional_inverse_apply_left(f: BidirectionalFactorization, w: np.ndarray) -> np.ndarray:
    """Row vector ``w T^{-1}`` in internal order, reusing ``f``."""
    P = f.parts
    w = np.asarray(w, dtype=float)
    if w.shape[0] != P.dim:
        raise ValueError(f"vector of length {w.shape[0]} does not match dimension {P.dim}")
    n1 = P.neg_dim
    w1, w2 = w[:n1], w[n1:]
    if f.schur is None:
        return apply_unilateral_inverse_left(f.pos, w2)
    # x = w T^{-1}:  x2 = (w2 - x1 T12) T22^{-1},  x1 = (w1 - w2 T22^{-1} T21) S^{-1}
    a, b = P.neg.sizes[0], P.pos.sizes[0]
    y2 = apply_unilateral_inverse_left(f.pos, w2)
    rhs1 = w1.copy()
    rhs1[:a] -= y2[:b] @ P.corner_down
    x1 = apply_unilateral_inverse_left(f.schur, rhs1)
    rhs2 = w2.copy()
    rhs2[:b] -= x1[:a] @ P.corner_up
    x2 = apply_unilateral_inverse_left(f.pos, rhs2)
    return np.concatenate([x1, x2])


# ---------------------------------------------------------------------------
# Model-specific R/G/U sequences.


@dataclass(frozen=True)
class RgMeasures:
    """R/G/U sequences along one axis, keyed by physical level.

    Positive axis: ``R[k] = A0(k) (-U_{k+1})^{-1}``, ``G[k] = (-U_k)^{-1} A2(k)``.
    Negative axis: ``R[l] = B0(l) (-U_{l-1})^{-1}``, ``G[l] = (-U_l)^{-1} B2(l)``
    (``B2(-1)`` being the boundary block into level 0).
    """

    axis: str
    cap: int
    R: dict[int, np.ndarray] = field(repr=False)
    G: dict[int, np.ndarray] = field(repr=False)
    U: dict[int, np.ndarray] = field(repr=False)
    residual_R: dict[int, float] = field(repr=False)
    residual_G: dict[int, float] = field(repr=False)

    @property
    def residual(self) -> float:
        return max([*self.residual_R.values(), *self.residual_G.values()], default=0.0)

    @property
    def start_level(self) -> int:
        return min(self.R)

    @property
    def end_level(self) -> int:
        return max(self.R)

    def levels(self) -> list[int]:
        sign = 1 if self.axis == "positive" else -1
        return sorted(self.R, key=lambda k: sign * k)


def _axis_chain(p: ModelParams, cap: int, axis: str) -> BlockTridiagonal:
    """Block-tridiagonal chain over levels 0, ±1, ..., ±(cap+1) in outward order.

    The level-0 block absorbs the coupling to the opposite axis into its
    diagonal, and the last block drops its outward coupling.
    """
    sign = 1 if axis == "positive" else -1
    levels = [sign * t for t in range(cap + 2)]
    diag, outward, inward = [], [], []
    for t, level in enumerate(levels):
        to_lower, within, to_upper = row_blocks(level, p)
        out_b, in_b = (to_upper, to_lower) if sign > 0 else (to_lower, to_upper)
        if t == 0:
            within = within + in_b
        diag.append(within)
        if t < len(levels) - 1:
            outward.append(out_b)
        if t > 0:
            inward.append(in_b)
    return BlockTridiagonal(tuple(diag), tuple(outward), tuple(inward))


def _rg_for_cap(p: ModelParams, cap: int, axis: str) -> RgMeasures:
    sign = 1 if axis == "positive" else -1
    chain = _axis_chain(p, cap, axis)
    f = ul_factorize(chain, first_may_be_singular=True)
    R = {sign * t: f.R_upper[t] for t in range(cap + 1)}
    G = {sign * t: f.G_lower[t] for t in range(1, cap + 2)}
    U = {sign * t: f.U_diag[t] for t in range(cap + 2)}
    res_R, res_G = {}, {}
    for t in range(cap):
        # outward_t + R_t D_{t+1} + R_t R_{t+1} inward_{t+1}
        r = chain.upper[t] + f.R_upper[t] @ chain.diag[t + 1] \
            + f.R_upper[t] @ f.R_upper[t + 1] @ chain.lower[t + 1]
        res_R[sign * t] = float(np.abs(r).max())
    for t in range(1, cap + 1):
        # outward_t G_{t+1} G_t + D_t G_t + inward_{t-1}
        g = chain.upper[t] @ f.G_lower[t + 1] @ f.G_lower[t] \
            + chain.diag[t] @ f.G_lower[t] + chain.lower[t - 1]
        res_G[sign * t] = float(np.abs(g).max())
    return RgMeasures(axis, cap, R, G, U, res_R, res_G)


def _compute_rg(p: ModelParams, cap: int, tol: float, max_cap: int, axis: str) -> RgMeasures:
    if cap < 3:
        raise ValueError("level cap must be at least 3")
    one = 1 if axis == "positive" else -1
    cur = _rg_for_cap(p, cap, axis)
    while True:
        if 2 * cap > max_cap:
            raise CapExhaustedError(f"R_{one} not settled below cap {max_cap}")
        nxt = _rg_for_cap(p, 2 * cap, axis)
        if np.abs(nxt.R[one] - cur.R[one]).max() < tol:
            return nxt
        cap, cur = 2 * cap, nxt


def compute_rg_positive(p: ModelParams, cap: int = 16, tol: float = 1e-10,
                        max_cap: int = 1 << 16) -> RgMeasures:
    """R/G/U on levels ``0..cap`` of the positive axis, cap doubled until R_1 settles."""
    return _compute_rg(p, cap, tol, max_cap, "positive")


def compute_rg_negative(p: ModelParams, cap: int = 16, tol: float = 1e-10,
                        max_cap: int = 1 << 16) -> RgMeasures:
    """Mirror of :func:`compute_rg_positive` on levels ``0, -1, ..., -cap``."""
    return _compute_rg(p, cap, tol, max_cap, "negative")


def fixed_point_R(up: np.ndarray, diag_next: np.ndarray, down_next2: np.ndarray,
                  R_next: np.ndarray, iters: int = 10_000, tol: float = 1e-14) -> np.ndarray:
    """Monotone iteration of ``R = up (-D)^{-1} + R R_next down (-D)^{-1}``.

    Starting from zero; used to check minimality of the backward construction.
    """
    inv = np.linalg.inv(-diag_next)
    R = np.zeros_like(up)
    for _ in range(iters):
        nxt = up @ inv + R @ R_next @ down_next2 @ inv
        if np.abs(nxt - R).max() < tol:
            return nxt
        R = nxt
    return R


def parts_from_levels(M: np.ndarray, level_index: dict[int, np.ndarray]
                      ) -> tuple[BidirectionalParts, np.ndarray]:
    """Split a dense level-structured matrix into :class:`BidirectionalParts`.

    ``level_index[k]`` lists the row/column indices of ``M`` that belong to
    level ``k``; levels must run contiguously over ``-a..b`` with ``b >= 1``.
    Returns the parts and ``perm`` where ``perm[t]`` is the index in ``M`` of
    internal position ``t``.
    """
    lo, hi = min(level_index), max(level_index)
    if hi < 1 or lo > 0:
        raise ValueError("levels must include 0 and 1")

    def blk(a, b):
        return M[np.ix_(level_index[a], level_index[b])]

    pos_levels = list(range(1, hi + 1))
    pos = BlockTridiagonal(
        tuple(blk(k, k) for k in pos_levels),
        tuple(blk(k, k + 1) for k in pos_levels[:-1]),
        tuple(blk(k + 1, k) for k in pos_levels[:-1]),
    )
    neg_levels = [k for k in range(0, lo - 1, -1) if len(level_index[k])]
    if not neg_levels:
        return (BidirectionalParts(None, pos, np.zeros((0, pos.sizes[0])),
                                   np.zeros((pos.sizes[0], 0))),
                np.concatenate([level_index[k] for k in pos_levels]).astype(int))
    if neg_levels != list(range(0, neg_levels[-1] - 1, -1)):
        raise ValueError("non-positive levels must be contiguous and start at 0")
    neg = BlockTridiagonal(
        tuple(blk(k, k) for k in neg_levels),
        tuple(blk(k, k - 1) for k in neg_levels[:-1]),
        tuple(blk(k - 1, k) for k in neg_levels[:-1]),
    )
    parts = BidirectionalParts(neg, pos, blk(0, 1), blk(1, 0))
    perm = np.concatenate([level_index[k] for k in neg_levels + pos_levels]).astype(int)
    return parts, perm
