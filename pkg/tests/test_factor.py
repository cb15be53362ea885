"""Tests for the factorization pipeline, oracle comparisons first."""

import json
from dataclasses import replace

import numpy as np
import pytest

from haarforge.dyadic import EMPTY, DyadicIndex
from haarforge.errors import (
    ConfigError,
    DepthExhaustedError,
    GameContractError,
    InvalidArgumentError,
    NeumannCorrectionError,
    StabilizationError,
)
from haarforge.factor import (
    BasisMap,
    CanonicalStrategy,
    FactorAdversary,
    antisymmetric_embedding,
    antisymmetric_projection,
    assemble_transfer,
    diag_factor_l1,
    diag_factor_unconditional,
    factor_pipeline,
    first_axis_projection,
    l1_stabilize,
    map_norm,
    neumann_correct,
    predicted_norm_bound,
    sign_select,
    tensor_factor_l1l1,
    tensor_universe,
)
from haarforge.game import GameConfig, run_game
from haarforge.norms import NormSpec, operator_norm, pairing
from haarforge.operators import (
    MultiplierEntries,
    OperatorMatrix,
    apply,
    build_multiplier,
    haar_truncation,
    normalization_weights,
)
from haarforge.stepfn import HaarCoefficients, synthesize
from haarforge.strategies import l1_strategy

L1 = NormSpec.lp(1.0)
L2 = NormSpec.lp(2.0)


def interval(level, position):
    return DyadicIndex.interval(level, position)


def exhaustive_best(form: np.ndarray) -> float:
    """Largest |eps^T form eps| over every sign vector, the brute oracle."""
    n = form.shape[0]
    grid = np.array(
        [[1.0 if (m >> i) & 1 else -1.0 for i in range(n)] for m in range(2**n)]
    )
    values = np.einsum("si,ij,sj->s", grid, form, grid)
    return float(np.max(np.abs(values)))


def random_block(rng, n, signed=False):
    """A block instance: entries, weights, and the keys of a truncation."""
    keys = haar_truncation(1, 4, "D+")[:n]
    entries = rng.normal(scale=0.4, size=(16, 16))
    sign = -1.0 if signed else 1.0
    for k in range(16):
        entries[k, k] = sign * rng.uniform(0.4, 1.0)
    T = OperatorMatrix(haar_truncation(1, 4, "D+"), entries, L2)
    lam = rng.uniform(0.5, 1.5, n)
    lam /= np.sqrt(np.sum(lam * lam))
    return keys, lam, T


class TestSignSelect:
    def test_beats_diagonal_mean_on_random_forms(self):
        rng = np.random.default_rng(60)
        for trial in range(100):
            n = int(rng.integers(2, 9))
            keys, lam, T = random_block(rng, n, signed=bool(trial % 2))
            signs = sign_select(keys, lam, lam, T, 0.01, 0.3)
            pos = list(range(n))
            form = np.outer(lam, lam) * T.entries[np.ix_(pos, pos)]
            achieved = float(np.array(signs) @ form @ np.array(signs))
            target = float(np.trace(form))
            assert abs(achieved) >= abs(target) - 1e-12
            assert np.sign(achieved) == np.sign(target)

    def test_never_exceeds_exhaustive_maximum(self):
        rng = np.random.default_rng(61)
        for _ in range(30):
            n = int(rng.integers(2, 8))
            keys, lam, T = random_block(rng, n)
            signs = sign_select(keys, lam, lam, T, 0.01, 0.3)
            form = np.outer(lam, lam) * T.entries[: n, :n]
            achieved = abs(float(np.array(signs) @ form @ np.array(signs)))
            assert achieved <= exhaustive_best(form) + 1e-12

    def test_signs_are_unimodular(self):
        rng = np.random.default_rng(62)
        keys, lam, T = random_block(rng, 6)
        signs = sign_select(keys, lam, lam, T, 0.01, 0.3)
        assert set(signs) <= {1.0, -1.0}

    def test_negative_diagonal_flips_lead(self):
        keys = haar_truncation(1, 4, "D+")[:1]
        entries = np.eye(16) * -0.5
        T = OperatorMatrix(haar_truncation(1, 4, "D+"), entries, L2)
        signs = sign_select(keys, [1.0], [1.0], T, 0.01, 0.3)
        assert signs == (-1.0,)

    def test_mixed_diagonal_signs_rejected(self):
        keys = haar_truncation(1, 4, "D+")[:2]
        entries = np.diag([0.5, -0.5] + [0.5] * 14)
        T = OperatorMatrix(haar_truncation(1, 4, "D+"), entries, L2)
        with pytest.raises(InvalidArgumentError):
            sign_select(keys, [0.7, 0.7], [0.7, 0.7], T, 0.01, 0.3)

    def test_weight_window_enforced(self):
        rng = np.random.default_rng(63)
        keys, lam, T = random_block(rng, 3)
        with pytest.raises(InvalidArgumentError):
            sign_select(keys, lam * 2.0, lam, T, 0.01, 0.3)

    def test_small_diagonal_rejected(self):
        keys = haar_truncation(1, 4, "D+")[:2]
        entries = np.diag([0.5, 0.1] + [0.5] * 14)
        T = OperatorMatrix(haar_truncation(1, 4, "D+"), entries, L2)
        with pytest.raises(InvalidArgumentError):
            sign_select(keys, [0.7, 0.7], [0.7, 0.7], T, 0.01, 0.3)


def play_canonical(T, delta=0.3, eta=0.01):
    convention = "D+" if T.basis[0][0].is_empty else "D"
    config = GameConfig(
        dims=1,
        space=T.space,
        C=1.0,
        eta=eta,
        rounds=len(T.basis),
        depth_cap=T.grid_resolution[0],
        convention=convention,
        partitioned=True,
    )
    return run_game(FactorAdversary(T, delta, eta), CanonicalStrategy(), config)


class TestAssembleTransfer:
    def test_canonical_play_gives_identity_maps(self):
        keys = haar_truncation(1, 3, "D+")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        T = build_multiplier(c, L1)
        transfer = assemble_transfer(play_canonical(T), T)
        assert np.array_equal(transfer.a.entries, np.eye(8))
        assert np.array_equal(transfer.b.entries, np.eye(8))
        assert transfer.offdiag_sum == 0.0
        assert transfer.diagonal.entries[(EMPTY,)] == 0.5

    def test_entries_match_functional_pairings(self):
        keys = haar_truncation(1, 6, "D+")
        rng = np.random.default_rng(64)
        c = MultiplierEntries(1, {k: float(rng.uniform(0.4, 1.0)) for k in keys})
        T = build_multiplier(c, L1)
        config = GameConfig(
            dims=1, space=L1, C=1.0, eta=0.01, rounds=5, depth_cap=6,
            convention="D+", partitioned=True, seed=1,
        )
        transcript = run_game(
            FactorAdversary(T, 0.3, 0.01), l1_strategy(config), config
        )
        transfer = assemble_transfer(transcript, T)
        block = (transfer.b.entries @ T.entries @ transfer.a.entries)[:5, :5]
        for m in range(5):
            for n in range(5):
                direct = pairing(transcript.xstars[m], apply(T, transcript.xs[n]))
                assert abs(block[m, n] - direct) <= 1e-12

    def test_l1_transcript_on_multiplier_has_tiny_offdiag(self):
        keys = haar_truncation(1, 8, "D+")
        rng = np.random.default_rng(65)
        c = MultiplierEntries(1, {k: float(rng.uniform(0.4, 1.0)) for k in keys})
        T = build_multiplier(c, L1)
        config = GameConfig(
            dims=1, space=L1, C=1.0, eta=0.01, rounds=6, depth_cap=8,
            convention="D+", partitioned=True, seed=3,
        )
        transcript = run_game(
            FactorAdversary(T, 0.3, 0.01), l1_strategy(config), config
        )
        transfer = assemble_transfer(transcript, T)
        assert transfer.offdiag_sum < config.eta
        assert all(abs(v) >= 0.3 for v in transfer.diagonal.entries.values())

    def test_corrupt_transcript_rejected(self):
        keys = haar_truncation(1, 3, "D+")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        T = build_multiplier(c, L1)
        transcript = play_canonical(T)
        doctored = HaarCoefficients(
            1,
            {k: 2.0 * v for k, v in transcript.rounds[0].x.entries.items()},
            "D+",
        )
        rounds = (replace(transcript.rounds[0], x=doctored),) + transcript.rounds[1:]
        with pytest.raises(GameContractError, match="corrupt"):
            assemble_transfer(replace(transcript, rounds=rounds), T)


class TestL1Stabilize:
    def test_constant_symbol_stabilizes_at_unit_interval(self):
        keys = haar_truncation(1, 4, "D+")
        c = MultiplierEntries(1, {k: 0.7 for k in keys})
        assert l1_stabilize(c, 0.1) == interval(0, 1)

    def test_level_drop_pushes_root_below_the_jump(self):
        keys = haar_truncation(1, 5, "D+")
        c = MultiplierEntries(
            1,
            {k: (1.0 if k[0].is_empty or k[0].level < 3 else 0.9) for k in keys},
        )
        assert l1_stabilize(c, 0.2) == interval(3, 1)

    def test_left_branch_noise_moves_root_right(self):
        rng = np.random.default_rng(66)
        keys = haar_truncation(1, 5, "D+")
        right = interval(1, 2)
        entries = {}
        for key in keys:
            idx = key[0]
            calm = not idx.is_empty and (idx == right or right.strictly_contains(idx))
            entries[key] = 0.5 if calm else float(rng.uniform(-1.0, 1.0))
        c = MultiplierEntries(1, entries)
        assert l1_stabilize(c, 0.1) == right

    def test_leaf_always_passes(self):
        keys = haar_truncation(1, 2, "D+")
        c = MultiplierEntries(
            1, {k: (1.0 if k[0].level == 0 or k[0].is_empty else -1.0) for k in keys}
        )
        root = l1_stabilize(c, 0.01)
        assert root.level == 1

    def test_ties_break_by_interval_order(self):
        keys = haar_truncation(1, 3, "D+")
        c = MultiplierEntries(1, {k: (2.0 ** -k[0].level if not k[0].is_empty else 1.0) for k in keys})
        root = l1_stabilize(c, 4.0)
        assert root == interval(0, 1)

    def test_partial_symbol_rejected(self):
        c = MultiplierEntries(1, {(interval(0, 1),): 1.0, (EMPTY,): 1.0, (interval(1, 1),): 1.0})
        with pytest.raises(StabilizationError):
            l1_stabilize(c, 0.1)

    def test_eps_must_be_positive(self):
        keys = haar_truncation(1, 2, "D+")
        c = MultiplierEntries(1, {k: 1.0 for k in keys})
        with pytest.raises(InvalidArgumentError):
            l1_stabilize(c, 0.0)


class TestUnconditionalFactor:
    def test_scaled_identity_gives_reciprocal_constant(self):
        keys = haar_truncation(1, 4, "D")
        c = MultiplierEntries(1, {k: 0.3 for k in keys})
        fac = diag_factor_unconditional(c, 0.3, L2)
        assert fac.k_achieved.upper == 1.0 / 0.3
        assert np.array_equal(fac.a_hat.entries, np.eye(15))

    def test_l2_constant_is_reciprocal_minimum(self):
        rng = np.random.default_rng(67)
        keys = haar_truncation(1, 5, "D")
        values = {k: float(rng.uniform(0.3, 1.0)) for k in keys}
        fac = diag_factor_unconditional(MultiplierEntries(1, values), 0.3, L2)
        floor = min(abs(v) for v in values.values())
        assert abs(fac.k_achieved.upper - 1.0 / floor) <= 1e-9

    def test_inverse_identity_is_exact_in_square_norms(self):
        rng = np.random.default_rng(68)
        keys = haar_truncation(1, 3, "D")
        values = {k: float(rng.uniform(0.4, 1.0) * rng.choice([-1, 1])) for k in keys}
        fac = diag_factor_unconditional(MultiplierEntries(1, values), 0.3, NormSpec.hp(1.0))
        diag = np.array([values[k] for k in fac.a_hat.domain_basis])
        product = fac.b_hat.entries @ np.diag(diag) @ fac.a_hat.entries
        assert np.max(np.abs(product - np.eye(7))) <= 1e-15

    def test_entry_below_delta_rejected(self):
        keys = haar_truncation(1, 2, "D")
        values = {k: 0.5 for k in keys}
        values[(interval(1, 1),)] = 0.15
        with pytest.raises(InvalidArgumentError):
            diag_factor_unconditional(MultiplierEntries(1, values), 0.3, L2)

    def test_integral_norm_needs_the_l1_route(self):
        keys = haar_truncation(1, 2, "D")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        with pytest.raises(InvalidArgumentError):
            diag_factor_unconditional(c, 0.3, L1)

    def test_other_exponents_report_two_sided_bounds(self):
        rng = np.random.default_rng(69)
        keys = haar_truncation(1, 3, "D")
        values = {k: float(rng.uniform(0.3, 1.0)) for k in keys}
        fac = diag_factor_unconditional(MultiplierEntries(1, values), 0.3, NormSpec.lp(4.0))
        floor = min(abs(v) for v in values.values())
        assert fac.k_achieved.lower <= 1.0 / floor <= fac.k_achieved.upper + 1e-12


class TestEmbedding:
    def test_embedding_and_projection_have_norm_one(self):
        root = interval(1, 2)
        assert map_norm(antisymmetric_embedding(root, 4)).upper == 1.0
        assert map_norm(antisymmetric_projection(root, 4)).upper == 1.0

    def test_projection_fixes_the_embedded_copy(self):
        root = interval(2, 3)
        A = antisymmetric_embedding(root, 5)
        P = antisymmetric_projection(root, 5)
        assert np.array_equal(P.compose(A).entries, A.entries)

    def test_projection_kills_coarser_functions(self):
        root = interval(2, 3)
        P = antisymmetric_projection(root, 5)
        fine = P.domain_basis
        for j, (idx,) in enumerate(fine):
            if idx.is_empty or idx.strictly_contains(root):
                assert not P.entries[:, j].any()

    def test_isometry_exact_on_dyadic_coefficients(self):
        root = interval(1, 1)
        A = antisymmetric_embedding(root, 5)
        w = normalization_weights(A.domain_basis, L1)
        wf = normalization_weights(A.range_basis, L1)
        rng = np.random.default_rng(70)
        for _ in range(200):
            raw = rng.integers(-8, 9, size=len(A.domain_basis)) / 16.0
            f = HaarCoefficients(
                1, {k: float(v) for k, v in zip(A.domain_basis, raw)}, "D+"
            )
            image = A.entries @ (raw * w)
            g = HaarCoefficients(
                1,
                {k: float(v / wf[i]) for i, (k, v) in enumerate(zip(A.range_basis, image))},
                "D+",
            )
            nf = float(np.abs(synthesize(f, 7).values).mean())
            ng = float(np.abs(synthesize(g, 7).values).mean())
            assert nf == ng

    def test_isometry_close_on_generic_coefficients(self):
        root = interval(1, 2)
        A = antisymmetric_embedding(root, 5)
        w = normalization_weights(A.domain_basis, L1)
        wf = normalization_weights(A.range_basis, L1)
        rng = np.random.default_rng(71)
        for _ in range(800):
            raw = rng.normal(size=len(A.domain_basis))
            f = HaarCoefficients(
                1, {k: float(v) for k, v in zip(A.domain_basis, raw)}, "D+"
            )
            image = A.entries @ (raw * w)
            g = HaarCoefficients(
                1,
                {k: float(v / wf[i]) for i, (k, v) in enumerate(zip(A.range_basis, image))},
                "D+",
            )
            nf = float(np.abs(synthesize(f, 8).values).mean())
            ng = float(np.abs(synthesize(g, 8).values).mean())
            assert abs(nf - ng) <= 1e-12

    def test_no_room_below_a_deep_root(self):
        with pytest.raises(DepthExhaustedError):
            antisymmetric_embedding(interval(3, 1), 4)


class TestDiagFactorL1:
    def test_scaled_identity_achieves_reciprocal(self):
        keys = haar_truncation(1, 4, "D+")
        c = MultiplierEntries(1, {k: 0.3 for k in keys})
        fac = diag_factor_l1(c, 0.3, 0.1)
        assert fac.root == (interval(0, 1),)
        assert fac.k_achieved.upper == 1.0 / 0.3
        assert fac.identity_dim == 8
        diag = np.array([0.3] * 16)
        product = fac.b_hat.entries @ (diag[:, None] * fac.a_hat.entries)
        assert np.max(np.abs(product - np.eye(8))) <= 1e-14

    def test_planted_subtree_is_found_blind(self):
        rng = np.random.default_rng(72)
        keys = haar_truncation(1, 6, "D+")
        planted = interval(2, 2)
        eps0 = 0.3 * 0.1 / 1.1
        entries = {}
        for key in keys:
            idx = key[0]
            calm = not idx.is_empty and (
                idx == planted or planted.strictly_contains(idx)
            )
            if calm:
                entries[key] = 0.32 + float(rng.uniform(-eps0 / 64, eps0 / 64))
            else:
                entries[key] = float(rng.choice([-1, 1]) * rng.uniform(0.3, 1.0))
        fac = diag_factor_l1(MultiplierEntries(1, entries), 0.3, 0.1)
        assert fac.root == (planted,)
        assert fac.k_achieved.upper <= (1.0 + 0.1) / 0.3
        diag = np.array([entries[k] for k in fac.b_hat.domain_basis])
        product = fac.b_hat.entries @ (diag[:, None] * fac.a_hat.entries)
        assert np.max(np.abs(product - np.eye(fac.identity_dim))) <= 1e-12

    def test_requires_constant_symbol(self):
        keys = haar_truncation(1, 3, "D")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        with pytest.raises(InvalidArgumentError):
            diag_factor_l1(c, 0.3, 0.1)

    def test_depth_exhaustion_when_only_leaves_are_calm(self):
        keys = haar_truncation(1, 3, "D+")
        c = MultiplierEntries(
            1,
            {k: (0.9 if k[0].is_empty or k[0].level % 2 == 0 else -0.9) for k in keys},
        )
        with pytest.raises(DepthExhaustedError):
            diag_factor_l1(c, 0.3, 0.1)


class TestNeumann:
    def test_identity_defect_leaves_factor_unchanged(self):
        basis = haar_truncation(1, 3, "D+")
        q = BasisMap.identity(basis, L1)
        pre = BasisMap(basis, basis, np.diag(np.full(8, 2.0)), L1, L1)
        corrected, report = neumann_correct(q, pre)
        assert np.array_equal(corrected.entries, pre.entries)
        assert report.defect.upper == 0.0
        assert report.series_bound == 1.0

    def test_half_defect_inverse_within_two(self):
        basis = haar_truncation(1, 3, "D+")
        entries = np.eye(8)
        entries[1, 1] = 0.5
        q = BasisMap(basis, basis, entries, L1, L1)
        pre = BasisMap.identity(basis, L1)
        corrected, report = neumann_correct(q, pre)
        assert report.defect.upper == 0.5
        assert report.series_bound == 2.0
        assert report.inverse.upper <= 2.0 + 1e-12
        assert np.max(np.abs(q.entries @ corrected.entries - np.eye(8))) <= 1e-12

    def test_expanding_defect_rejected(self):
        basis = haar_truncation(1, 3, "D+")
        entries = np.eye(8)
        entries[2, 2] = -0.2
        q = BasisMap(basis, basis, entries, L1, L1)
        with pytest.raises(NeumannCorrectionError):
            neumann_correct(q, BasisMap.identity(basis, L1))


class TestAdversary:
    def test_tolerances_shrink_and_stay_positive(self):
        keys = haar_truncation(1, 3, "D+")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        T = build_multiplier(c, L1)
        adv = FactorAdversary(T, 0.3, 0.01)
        config = GameConfig(
            dims=1, space=L1, C=1.0, eta=0.01, rounds=8, depth_cap=3,
            convention="D+", partitioned=True,
        )
        values = [adv._tolerance(k, config) for k in range(6)]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert adv._tolerance(5000, config) > 0.0

    def test_partition_separates_diagonal_signs(self):
        keys = haar_truncation(1, 3, "D+")
        c = MultiplierEntries(
            1, {k: (-0.5 if k[0].is_empty or k[0].level == 1 else 0.5) for k in keys}
        )
        T = build_multiplier(c, L1)
        adv = FactorAdversary(T, 0.3, 0.01)
        for key in keys:
            expected = 2 if c.entries[key] < 0 else 1
            assert adv.partition.side(key) == expected

    def test_constraints_accumulate_per_round(self):
        keys = haar_truncation(1, 4, "D+")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        T = build_multiplier(c, L1)
        transcript = play_canonical(T)
        sizes = [len(r.adversary.W_functionals) for r in transcript.rounds]
        assert sizes[0] == 0
        assert all(b > a for a, b in zip(sizes, sizes[1:]))


def planted_multiplier(depth, rng, delta=0.3, eta=0.01, eps=0.1, root=None):
    keys = haar_truncation(1, depth, "D+")
    root = root or interval(2, 1)
    eps0 = (1 - eta) * delta * eps / (1 + eps)
    entries = {}
    for key in keys:
        idx = key[0]
        calm = not idx.is_empty and (idx == root or root.strictly_contains(idx))
        if calm:
            entries[key] = 0.32 + float(rng.uniform(-eps0 / 64, eps0 / 64))
        else:
            entries[key] = float(rng.choice([-1, 1]) * rng.uniform(delta, 1.0))
    return build_multiplier(MultiplierEntries(1, entries), L1)


class TestPipeline:
    def test_constant_multiplier_certificate_is_exact(self):
        keys = haar_truncation(1, 4, "D+")
        c = MultiplierEntries(1, {k: 0.3 for k in keys})
        T = build_multiplier(c, L1)
        cert = factor_pipeline(T, 0.3, L1, 0.01)
        assert abs(cert.norm_product.upper - 1.0 / 0.3) <= 1e-9
        assert cert.residual.upper <= 1e-10
        assert cert.offdiag_sum == 0.0
        assert cert.route == "l1"

    def test_planted_multiplier_meets_the_promised_bound(self):
        T = planted_multiplier(6, np.random.default_rng(73))
        cert = factor_pipeline(T, 0.3, L1, 0.01)
        assert cert.residual.upper <= 0.05
        assert cert.norm_product.upper <= (1 + 0.1) / 0.3
        assert cert.norm_product.upper <= cert.predicted_bound
        assert cert.root == (interval(2, 1),)

    def test_certificate_recomputes_from_stored_maps(self):
        T = planted_multiplier(5, np.random.default_rng(74))
        cert = factor_pipeline(T, 0.3, L1, 0.01)
        again = cert.recompute(T)
        assert abs(again["residual"].upper - cert.residual.upper) <= 1e-10
        assert abs(again["offdiag_sum"] - cert.offdiag_sum) <= 1e-10

    def test_l2_noise_pipeline_measures_spectrally(self):
        keys = haar_truncation(1, 5, "D")
        n = len(keys)
        rng = np.random.default_rng(75)
        entries = np.diag(rng.uniform(0.3, 1.0, n))
        noise = rng.uniform(-1e-3, 1e-3, (n, n))
        np.fill_diagonal(noise, 0.0)
        T = OperatorMatrix(keys, entries + noise, L2)
        cert = factor_pipeline(T, 0.3, L2, 0.01)
        assert cert.route == "unconditional"
        assert cert.residual.upper <= 0.05
        assert cert.residual.lower == cert.residual.upper
        assert cert.norm_product.upper <= cert.predicted_bound

    def test_square_function_norms_run_exactly(self):
        keys = haar_truncation(1, 3, "D")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        for spec in (NormSpec.hp(1.0), NormSpec.triple(1.0)):
            cert = factor_pipeline(build_multiplier(c, spec), 0.3, spec, 0.01)
            assert cert.residual.upper == 0.0
            assert cert.norm_product.upper == 2.0

    def test_estimated_exponents_stay_consistent_with_prediction(self):
        keys = haar_truncation(1, 3, "D")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        spec = NormSpec.lp(4.0)
        cert = factor_pipeline(build_multiplier(c, spec), 0.3, spec, 0.01)
        assert cert.norm_product.lower <= cert.predicted_bound

    def test_diagonal_below_delta_rejected(self):
        keys = haar_truncation(1, 3, "D+")
        values = {k: 0.5 for k in keys}
        values[(interval(1, 2),)] = 0.1
        T = build_multiplier(MultiplierEntries(1, values), L1)
        with pytest.raises(InvalidArgumentError):
            factor_pipeline(T, 0.3, L1, 0.01)

    def test_space_mismatch_rejected(self):
        keys = haar_truncation(1, 3, "D")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        T = build_multiplier(c, L2)
        with pytest.raises(ConfigError):
            factor_pipeline(T, 0.3, NormSpec.lp(4.0), 0.01)

    def test_integral_route_needs_constant_symbol(self):
        keys = haar_truncation(1, 3, "D")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        T = build_multiplier(c, L1)
        with pytest.raises(ConfigError):
            factor_pipeline(T, 0.3, L1, 0.01)

    def test_unroutable_norm_rejected(self):
        keys = haar_truncation(1, 3, "D")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        T = build_multiplier(c, NormSpec.sup())
        with pytest.raises(ConfigError):
            factor_pipeline(T, 0.3, NormSpec.sup(), 0.01)

    def test_partial_round_budget_rejected(self):
        keys = haar_truncation(1, 3, "D+")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        T = build_multiplier(c, L1)
        config = GameConfig(
            dims=1, space=L1, C=1.0, eta=0.01, rounds=4, depth_cap=3,
            convention="D+", partitioned=True,
        )
        with pytest.raises(ConfigError):
            factor_pipeline(T, 0.3, L1, 0.01, config)

    def test_failed_neumann_retries_once_then_propagates(self):
        keys = haar_truncation(1, 3, "D")
        entries = np.diag(np.full(7, 0.4))
        entries[0, 1] = 0.9
        T = OperatorMatrix(keys, entries, L2)
        with pytest.raises(NeumannCorrectionError, match="neumann"):
            factor_pipeline(T, 0.3, L2, 0.01)

    def test_certificate_floor_invariant_enforced(self):
        T = planted_multiplier(4, np.random.default_rng(76))
        cert = factor_pipeline(T, 0.3, L1, 0.01)
        weak = dict(cert.diagonal.entries)
        weak[next(iter(weak))] = 0.01
        with pytest.raises(InvalidArgumentError):
            replace(cert, diagonal=MultiplierEntries(1, weak))

    def test_reruns_are_byte_identical_outside_timings(self):
        T = planted_multiplier(5, np.random.default_rng(77))
        one = factor_pipeline(T, 0.3, L1, 0.01).to_json()
        two = factor_pipeline(T, 0.3, L1, 0.01).to_json()
        one.pop("timings")
        two.pop("timings")
        assert json.dumps(one, sort_keys=True) == json.dumps(two, sort_keys=True)

    def test_stage_timings_are_recorded(self):
        T = planted_multiplier(4, np.random.default_rng(78))
        cert = factor_pipeline(T, 0.3, L1, 0.01)
        assert set(cert.timings) == {"game", "transfer", "diagonal", "neumann", "norms"}

    def test_registered_strategy_left_idle_when_play_is_clean(self):
        class Sentinel(CanonicalStrategy):
            name = "sentinel"

            def respond(self, *args, **kwargs):
                raise AssertionError("fallback ran on a clean game")

        T = planted_multiplier(4, np.random.default_rng(79))
        cert = factor_pipeline(T, 0.3, L1, 0.01, strategy=Sentinel())
        assert cert.fallback is None

    def test_failing_fallback_strategy_keeps_canonical_result(self):
        keys = haar_truncation(1, 3, "D")
        n = len(keys)
        rng = np.random.default_rng(80)
        entries = np.diag(rng.uniform(0.4, 1.0, n))
        noise = rng.uniform(-0.02, 0.02, (n, n))
        np.fill_diagonal(noise, 0.0)
        T = OperatorMatrix(keys, entries + noise, L2)

        class Failing(CanonicalStrategy):
            name = "failing"

            def respond(self, *args, **kwargs):
                raise DepthExhaustedError("no capacity")

        cert = factor_pipeline(T, 0.3, L2, 0.01, strategy=Failing())
        assert cert.offdiag_sum > 0.01
        assert cert.fallback is None
        assert cert.residual.upper <= 0.05


class TestPredictedBound:
    def test_unconditional_margin(self):
        value = predicted_norm_bound("unconditional", 0.3, 0.01, 0.1, 1.0)
        K = 1.0 / 0.29
        assert abs(value - K * 1.01**2 / (1 - 2 * K * 0.01)) <= 1e-12

    def test_l1_route_carries_the_eps_premium(self):
        plain = predicted_norm_bound("unconditional", 0.3, 0.01, 0.1, 1.0)
        fat = predicted_norm_bound("l1", 0.3, 0.01, 0.1, 1.0)
        assert fat > plain

    def test_degenerate_denominator_is_infinite(self):
        assert predicted_norm_bound("l1", 0.3, 0.14, 0.1, 1.0) == float("inf")

    def test_tolerance_must_leave_margin(self):
        with pytest.raises(InvalidArgumentError):
            predicted_norm_bound("l1", 0.01, 0.02, 0.1, 1.0)


class TestTensor:
    def test_first_axis_projection_has_exact_norm_one(self):
        basis = tensor_universe((3, 3))
        P = first_axis_projection(basis, L1)
        report = operator_norm(P, L1, mode="exact")
        assert report.lower == 1.0
        assert report.upper == 1.0

    def test_certificate_matches_compressed_run(self):
        rng = np.random.default_rng(81)
        basis = tensor_universe((3, 4))
        eps0 = (1 - 0.01) * 0.3 * 0.1 / 1.1
        root = interval(1, 1)
        values = []
        for a, b in basis:
            calm = a.is_empty and not b.is_empty and (
                b == root or root.strictly_contains(b)
            )
            if calm:
                values.append(0.32 + float(rng.uniform(-eps0 / 64, eps0 / 64)))
            else:
                values.append(float(rng.choice([-1, 1]) * rng.uniform(0.3, 1.0)))
        T = OperatorMatrix(basis, np.diag(values), L1)
        cert = tensor_factor_l1l1(T, 0.3)
        keep = [k for k, key in enumerate(basis) if key[0].is_empty]
        slice_basis = tuple((basis[k][1],) for k in keep)
        compressed = OperatorMatrix(
            slice_basis, T.entries[np.ix_(keep, keep)], L1
        )
        inner = factor_pipeline(compressed, 0.3, L1, 0.01)
        assert cert.residual.upper == inner.residual.upper
        assert cert.root == inner.root
        assert cert.route == "tensor-l1"
        assert cert.compression["compressed_dim"] == len(slice_basis)
        assert cert.a_norm.upper == 1.0
        assert cert.norm_product.upper <= (1 + 0.1) / 0.3

    def test_recompute_slices_the_tensor_operator(self):
        rng = np.random.default_rng(82)
        basis = tensor_universe((2, 3))
        values = [
            0.5 if key[0].is_empty else float(rng.choice([-1, 1]) * rng.uniform(0.3, 1))
            for key in basis
        ]
        T = OperatorMatrix(basis, np.diag(values), L1)
        cert = tensor_factor_l1l1(T, 0.3)
        again = cert.recompute(T)
        assert abs(again["residual"].upper - cert.residual.upper) <= 1e-10
        assert abs(again["offdiag_sum"] - cert.offdiag_sum) <= 1e-10

    def test_rejects_one_parameter_operators(self):
        keys = haar_truncation(1, 3, "D+")
        c = MultiplierEntries(1, {k: 0.5 for k in keys})
        with pytest.raises(ConfigError):
            tensor_factor_l1l1(build_multiplier(c, L1), 0.3)

    def test_rejects_other_norms(self):
        basis = tensor_universe((2, 2))
        T = OperatorMatrix(basis, np.eye(len(basis)) * 0.5, NormSpec.lp(2.0))
        with pytest.raises(ConfigError):
            tensor_factor_l1l1(T, 0.3)

    def test_rejects_partial_truncations(self):
        basis = tensor_universe((2, 2))[:-1]
        T = OperatorMatrix(basis, np.eye(len(basis)) * 0.5, L1)
        with pytest.raises(ConfigError):
            tensor_factor_l1l1(T, 0.3)

    def test_reruns_are_byte_identical_outside_timings(self):
        basis = tensor_universe((2, 2))
        T = OperatorMatrix(basis, np.eye(len(basis)) * 0.4, L1)
        one = tensor_factor_l1l1(T, 0.3).to_json()
        two = tensor_factor_l1l1(T, 0.3).to_json()
        one.pop("timings")
        two.pop("timings")
        assert json.dumps(one, sort_keys=True) == json.dumps(two, sort_keys=True)


class TestBasisMap:
    def test_composition_requires_matching_truncations(self):
        a = BasisMap.identity(haar_truncation(1, 2, "D+"), L1)
        b = BasisMap.identity(haar_truncation(1, 3, "D+"), L1)
        with pytest.raises(InvalidArgumentError):
            a.compose(b)

    def test_shape_must_match_bases(self):
        basis = haar_truncation(1, 2, "D+")
        with pytest.raises(InvalidArgumentError):
            BasisMap(basis, basis, np.ones((2, 3)), L1, L1)

    def test_norms_agree_with_operator_norms_on_squares(self):
        rng = np.random.default_rng(83)
        basis = haar_truncation(1, 3, "D+")
        entries = rng.normal(size=(8, 8))
        m = BasisMap(basis, basis, entries, L1, L1)
        direct = operator_norm(OperatorMatrix(basis, entries, L1), L1, mode="exact")
        report = map_norm(m)
        assert abs(report.upper - direct.upper) <= 1e-12

    def test_mixed_ambient_norms_rejected(self):
        basis = haar_truncation(1, 2, "D+")
        m = BasisMap(basis, basis, np.eye(4), L1, L2)
        with pytest.raises(InvalidArgumentError):
            map_norm(m)
