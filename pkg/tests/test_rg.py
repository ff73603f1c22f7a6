from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings

from matchq.model import ModelParams, build_block, build_truncated_generator
from matchq.rg import (
    BidirectionalParts,
    BlockTridiagonal,
    CapExhaustedError,
    SingularBlockError,
    apply_unilateral_inverse,
    apply_unilateral_inverse_left,
    bidirectional_inverse_apply,
    bidirectional_inverse_apply_left,
    compute_rg_negative,
    compute_rg_positive,
    factorize_bidirectional,
    fixed_point_R,
    parts_from_levels,
    ul_factorize,
)

from .oracles import censored_R
from .shared import PARAM_SETS
from .test_model import model_params

P23 = PARAM_SETS[0]


def killed_chain(rng, sizes, kill=0.5):
    """Random block-tridiagonal sub-generator with strictly negative row sums."""
    N = len(sizes)
    diag, up, down = [], [], []
    for k in range(N - 1):
        up.append(rng.random((sizes[k], sizes[k + 1])))
        down.append(rng.random((sizes[k + 1], sizes[k])))
    for k, s in enumerate(sizes):
        d = rng.random((s, s))
        np.fill_diagonal(d, 0.0)
        out = d.sum(axis=1) + kill * rng.random(s) + 0.05
        if k < N - 1:
            out += up[k].sum(axis=1)
        if k > 0:
            out += down[k - 1].sum(axis=1)
        diag.append(d - np.diag(out))
    return BlockTridiagonal.from_lists(diag, up, down)


class TestUlFactorization:
    @pytest.mark.parametrize("seed", range(4))
    def test_reconstruction(self, seed):
        T = killed_chain(np.random.default_rng(seed), [3, 3, 2, 4, 3])
        f = ul_factorize(T)
        assert np.abs(f.reconstruct() - T.to_dense()).max() <= 1e-10

    def test_single_level(self):
        T = killed_chain(np.random.default_rng(7), [4])
        f = ul_factorize(T)
        assert f.R_upper == () and f.G_lower == (None,)
        np.testing.assert_array_equal(f.U_diag[0], T.diag[0])

    def test_inverse_matches_dense(self):
        T = killed_chain(np.random.default_rng(3), [6] * 5)
        f = ul_factorize(T)
        v = np.random.default_rng(4).random(T.dim)
        np.testing.assert_allclose(apply_unilateral_inverse(f, v), np.linalg.solve(T.to_dense(), v),
                                   atol=1e-10)
        np.testing.assert_allclose(apply_unilateral_inverse_left(f, v),
                                   np.linalg.solve(T.to_dense().T, v), atol=1e-10)

    def test_zero_and_sign(self):
        T = killed_chain(np.random.default_rng(5), [3, 4, 3])
        f = ul_factorize(T)
        np.testing.assert_array_equal(apply_unilateral_inverse(f, np.zeros(T.dim)), 0.0)
        x = apply_unilateral_inverse(f, np.random.default_rng(6).random(T.dim))
        assert (x <= 0).all()

    def test_dimension_mismatch(self):
        f = ul_factorize(killed_chain(np.random.default_rng(1), [2, 2]))
        with pytest.raises(ValueError):
            apply_unilateral_inverse(f, np.ones(5))

    def test_singular_block(self):
        T = BlockTridiagonal.from_lists([np.zeros((2, 2))], [], [])
        with pytest.raises(SingularBlockError):
            ul_factorize(T)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            BlockTridiagonal.from_lists([np.eye(2), np.eye(3)], [np.ones((2, 2))], [np.ones((3, 2))])

    def test_reversed_and_transpose(self):
        T = killed_chain(np.random.default_rng(2), [2, 3, 4])
        D = T.to_dense()
        np.testing.assert_array_equal(T.transpose().to_dense(), D.T)
        rev = T.reversed().to_dense()
        perm = np.r_[5:9, 2:5, 0:2]
        np.testing.assert_array_equal(rev, D[np.ix_(perm, perm)])
        v = np.arange(9.0)
        np.testing.assert_allclose(T.matvec(v), D @ v)


class TestBidirectional:
    def make(self, seed, coupled=True):
        rng = np.random.default_rng(seed)
        neg = killed_chain(rng, [3, 3, 3, 3], kill=1.0)
        pos = killed_chain(rng, [4, 4, 4, 4, 4], kill=1.0)
        scale = 0.3 if coupled else 0.0
        return BidirectionalParts(neg, pos, rng.random((3, 4)) * scale, rng.random((4, 3)) * scale)

    def test_uncoupled_is_block_diagonal(self):
        P = self.make(0, coupled=False)
        v = np.random.default_rng(1).random(P.dim)
        x = bidirectional_inverse_apply(P, v)
        np.testing.assert_allclose(x[:P.neg_dim], np.linalg.solve(P.neg.to_dense(), v[:P.neg_dim]),
                                   atol=1e-12)
        np.testing.assert_allclose(x[P.neg_dim:], np.linalg.solve(P.pos.to_dense(), v[P.neg_dim:]),
                                   atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_multiply_back(self, seed):
        P = self.make(seed)
        v = np.random.default_rng(seed + 10).standard_normal(P.dim)
        f = factorize_bidirectional(P)
        x = bidirectional_inverse_apply(f, v)
        assert np.abs(P.matvec(x) - v).max() <= 1e-9
        y = bidirectional_inverse_apply_left(f, v)
        assert np.abs(P.to_dense().T @ y - v).max() <= 1e-9

    def test_correction_lives_in_one_corner(self):
        P = self.make(4)
        n1 = P.neg_dim
        D = P.to_dense()
        T12, T21, T22 = D[:n1, n1:], D[n1:, :n1], D[n1:, n1:]
        corr = T12 @ np.linalg.solve(T22, T21)
        mask = np.zeros_like(corr, dtype=bool)
        mask[:3, :3] = True
        assert not corr[~mask].any()
        np.testing.assert_allclose(corr[:3, :3], factorize_bidirectional(P).correction, atol=1e-13)

    def test_parts_from_levels_roundtrip(self):
        gen = build_truncated_generator(P23, 3, 3)
        index = {k: np.arange(gen.level_slice(k).start, gen.level_slice(k).stop) for k in gen.levels}
        parts, perm = parts_from_levels(gen.Q, index)
        np.testing.assert_array_equal(parts.to_dense(), gen.Q[np.ix_(perm, perm)])
        assert sorted(perm) == list(range(gen.size))


class TestRgMeasures:
    @pytest.mark.parametrize("p", PARAM_SETS, ids=str)
    def test_residuals(self, p):
        for rg in (compute_rg_positive(p), compute_rg_negative(p)):
            assert rg.residual_R and rg.residual_G
            assert max(rg.residual_R.values()) <= 1e-12
            assert max(rg.residual_G.values()) <= 1e-12

    @pytest.mark.parametrize("p", PARAM_SETS, ids=str)
    def test_sign_structure(self, p):
        for rg in (compute_rg_positive(p), compute_rg_negative(p)):
            for R in rg.R.values():
                assert (R >= -1e-15).all()
            for G in rg.G.values():
                assert (G >= -1e-15).all()
                assert (G.sum(axis=1) <= 1 + 1e-12).all()
            for level, U in rg.U.items():
                if level == 0:
                    continue
                off = U - np.diag(np.diag(U))
                assert (np.diag(U) < 0).all() and (off >= -1e-15).all()
                assert (U.sum(axis=1) <= 1e-12).all()
                assert (-np.linalg.inv(U) >= -1e-15).all()

    def test_r_norm_decreases(self):
        rg = compute_rg_positive(P23)
        norms = [np.abs(rg.R[k]).sum(axis=1).max() for k in range(2, 20)]
        assert all(b < a for a, b in zip(norms, norms[1:]))

    def test_r1_matches_dense_censoring(self):
        # R_1 = A0 [(-Q_{>=2})^{-1}]_{22} on a long positive-side truncation
        cap = 60
        blocks = [build_block("A1", k, P23).entries for k in range(2, cap + 1)]
        mn = P23.mn
        Qtail = np.zeros((len(blocks) * mn,) * 2)
        for t, k in enumerate(range(2, cap + 1)):
            sl = slice(t * mn, (t + 1) * mn)
            Qtail[sl, sl] = blocks[t]
            if t + 1 < len(blocks):
                Qtail[sl, (t + 1) * mn:(t + 2) * mn] = build_block("A0", k, P23).entries
                Qtail[(t + 1) * mn:(t + 2) * mn, sl] = build_block("A2", k + 1, P23).entries
        R1 = censored_R(build_block("A0", 1, P23).entries, Qtail, mn)
        np.testing.assert_allclose(compute_rg_positive(P23).R[1], R1, atol=1e-8)

    def test_four_level_toy_censoring(self):
        # on a 4-level killed chain the recursion is exact censoring
        T = killed_chain(np.random.default_rng(11), [3, 3, 3, 3])
        f = ul_factorize(T)
        R1 = censored_R(T.upper[1], T.to_dense()[6:, 6:], 3)
        np.testing.assert_allclose(f.R_upper[1], R1, atol=1e-12)

    def test_minimality_fixed_point(self):
        rg = compute_rg_positive(P23)
        for k in (1, 2, 5):
            R = fixed_point_R(build_block("A0", k, P23).entries, build_block("A1", k + 1, P23).entries,
                              build_block("A2", k + 2, P23).entries, rg.R[k + 1])
            np.testing.assert_allclose(R, rg.R[k], atol=1e-10)

    @settings(max_examples=10, deadline=None)
    @given(p=model_params(max_size=3))
    def test_swap_symmetry(self, p):
        neg = compute_rg_negative(p)
        pos = compute_rg_positive(p.swapped())
        J = np.eye(p.mn)[::-1]
        for level in range(-1, -6, -1):
            np.testing.assert_allclose(neg.R[level], J @ pos.R[-level] @ J, atol=1e-12)

    def test_cap_growth_and_exhaustion(self):
        rg = compute_rg_positive(P23, cap=4)
        assert rg.cap >= 8
        with pytest.raises(CapExhaustedError):
            compute_rg_positive(ModelParams(5.0, 1.0, 0.01, 1.0, 1, 1), cap=4, max_cap=8)
        with pytest.raises(ValueError):
            compute_rg_positive(P23, cap=2)
