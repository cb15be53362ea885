"""Responder strategies: constructions, audits, and the emitted systems."""

import math
from fractions import Fraction

import numpy as np
import pytest

from haarforge.dyadic import EMPTY, DyadicIndex
from haarforge.errors import (
    ConfigError,
    PersistenceUnattainableError,
    StrategyFailedError,
)
from haarforge.game import (
    GameConfig,
    NullAdversary,
    Partition,
    RandomFunctionalAdversary,
    check_win,
    run_game,
)
from haarforge.norms import NormSpec, equivalence_probe, norm_eval, pairing
from haarforge.operators import dual_normalization_weights, normalization_weights
from haarforge.stepfn import HaarCoefficients, synthesize
from haarforge.strategies import (
    GGSystem,
    NullSumAdversary,
    check_freshness,
    check_sum_win,
    dual_probe_norm,
    gg_strategy,
    hphq_strategy,
    l1_strategy,
    mixed_lp_strategy,
    sum_dist_proxy,
    sum_strategy,
    system_from_transcript,
    system_probe_report,
    validate_system,
)

KAPPA_WINDOW = math.sqrt(1.1)


def I(level: int, position: int) -> DyadicIndex:
    return DyadicIndex("interval", level, position)


def h1_config(**overrides) -> GameConfig:
    base = dict(
        dims=1,
        space=NormSpec.hp(1.0),
        C=1.0,
        eta=0.1,
        rounds=7,
        depth_cap=8,
        convention="D",
        partitioned=False,
    )
    base.update(overrides)
    return GameConfig(**base)


def l1_config(**overrides) -> GameConfig:
    base = dict(
        dims=1,
        space=NormSpec.lp(1.0),
        C=1.0,
        eta=0.1,
        rounds=7,
        depth_cap=12,
        convention="D+",
        partitioned=True,
    )
    base.update(overrides)
    return GameConfig(**base)


class FlipAdversary(NullAdversary):
    """No constraints but alternating signs inside every block."""

    name = "flip"

    def choose_signs(self, k, move, rounds, config):
        return tuple(-1.0 if j % 2 else 1.0 for j in range(len(move.E)))


def biorth_offdiagonal(transcript) -> float:
    resolution = (transcript.config.depth_cap,) * transcript.config.dims
    xs = [synthesize(r.x, resolution) for r in transcript.rounds]
    stars = [synthesize(r.xstar, resolution) for r in transcript.rounds]
    worst = 0.0
    for k, star in enumerate(stars):
        for l, x in enumerate(xs):
            if k != l:
                worst = max(worst, abs(pairing(star, x)))
    return worst


def probe_ratios_pass(report) -> bool:
    sup = report["sup"]
    l1 = report["l1"]
    return (
        abs(sup.min_ratio - 1.0) <= 1e-12
        and abs(sup.max_ratio - 1.0) <= 1e-12
        and 1.0 / KAPPA_WINDOW <= l1.min_ratio
        and l1.max_ratio <= KAPPA_WINDOW
    )


class TestGGStrategy:
    def test_opening_block_is_a_full_level(self):
        config = h1_config()
        transcript = run_game(NullAdversary(), gg_strategy(NormSpec.hp(1.0), config), config)
        first = transcript.rounds[0].responder
        levels = {key[0].level for key in first.E}
        assert len(levels) == 1
        level = levels.pop()
        assert {key[0].position for key in first.E} == set(range(1, 2**level + 1))
        assert sum(l * m for l, m in zip(first.lam, first.mu)) == 1.0

    def test_weights_are_measure_ratios_with_unit_mu(self):
        config = h1_config()
        universe = config.universe()
        transcript = run_game(NullAdversary(), gg_strategy(NormSpec.hp(1.0), config), config)
        for k, game_round in enumerate(transcript.rounds):
            move = game_round.responder
            target = universe[k][0]
            assert all(m == 1.0 for m in move.mu)
            for key, lam in zip(move.E, move.lam):
                assert lam == pytest.approx(float(Fraction(key[0].measure, target.measure)), abs=1e-15)
            assert sum(move.lam) == pytest.approx(1.0, abs=1e-12)

    def test_null_game_system_passes_every_audit(self):
        config = h1_config()
        transcript = run_game(NullAdversary(), gg_strategy(NormSpec.hp(1.0), config), config)
        assert check_freshness(transcript)
        assert biorth_offdiagonal(transcript) <= 1e-12
        system = system_from_transcript(transcript)
        verdict = validate_system(system, kappa=0.1)
        assert verdict["ok"]
        assert verdict["halving_defect"] == 0
        assert probe_ratios_pass(system_probe_report(system, trials=1000, seed=0))

    def test_random_banded_adversary_system_passes(self):
        config = h1_config(depth_cap=12)
        adversary = RandomFunctionalAdversary(seed=7, count=2, level_band=4)
        transcript = run_game(adversary, gg_strategy(NormSpec.hp(1.0), config), config)
        assert check_freshness(transcript)
        assert biorth_offdiagonal(transcript) <= 1e-12
        system = system_from_transcript(transcript)
        verdict = validate_system(system, kappa=0.1)
        assert verdict["ok"]
        assert verdict["halving_defect"] == 0
        assert probe_ratios_pass(system_probe_report(system, trials=1000, seed=0))

    def test_weight_sums_stay_inside_the_unit_window(self):
        config = h1_config(depth_cap=12)
        adversary = RandomFunctionalAdversary(seed=11, count=2, level_band=4)
        transcript = run_game(adversary, gg_strategy(NormSpec.hp(1.0), config), config)
        for game_round in transcript.rounds:
            total = sum(l * m for l, m in zip(game_round.responder.lam, game_round.responder.mu))
            assert 1.0 - config.eta < total < 1.0 + config.eta

    def test_lp_variant_wins_the_full_audit(self):
        config = h1_config(space=NormSpec.lp(2.0))
        transcript = run_game(NullAdversary(), gg_strategy(NormSpec.lp(2.0), config), config)
        assert check_win(transcript, trials=300, seed=0).overall

    def test_depth_exhaustion_is_reported(self):
        config = h1_config(depth_cap=3, rounds=7)
        with pytest.raises(StrategyFailedError, match="depth"):
            run_game(NullAdversary(), gg_strategy(NormSpec.hp(1.0), config), config)

    def test_space_must_match_config(self):
        config = h1_config(space=NormSpec.lp(2.0))
        with pytest.raises(ConfigError):
            gg_strategy(NormSpec.hp(1.0), config)

    def test_system_json_round_trip(self):
        config = h1_config()
        transcript = run_game(FlipAdversary(), gg_strategy(NormSpec.hp(1.0), config), config)
        system = system_from_transcript(transcript)
        restored = GGSystem.from_json(system.to_json())
        assert restored.entries == system.entries
        assert restored.scale == system.scale
        assert validate_system(restored, kappa=0.1)["ok"]

    def test_clone_replays_identically(self):
        config = h1_config()
        strategy = gg_strategy(NormSpec.hp(1.0), config)
        twin = strategy.clone()
        first = run_game(FlipAdversary(), strategy, config)
        second = run_game(FlipAdversary(), twin, config)
        for a, b in zip(first.rounds, second.rounds):
            assert a.responder.E == b.responder.E
            assert a.responder.lam == b.responder.lam


class TestL1Strategy:
    def test_trivial_partition_null_game_wins(self):
        config = l1_config()
        transcript = run_game(NullAdversary(), l1_strategy(config), config)
        assert check_win(transcript, trials=300, seed=0).overall
        assert check_freshness(transcript)
        system = system_from_transcript(transcript)
        verdict = validate_system(system, kappa=0.1)
        assert verdict["ok"]
        assert verdict["halving_defect"] == 0
        assert probe_ratios_pass(system_probe_report(system, trials=1000, seed=0))

    def test_level_parity_partition_with_banded_noise_wins(self):
        config = l1_config()
        adversary = RandomFunctionalAdversary(
            seed=5, count=2, partition_name="level-parity", level_band=4
        )
        transcript = run_game(adversary, l1_strategy(config), config)
        assert check_win(transcript, trials=300, seed=0).overall
        assert check_freshness(transcript)
        verdict = validate_system(system_from_transcript(transcript), kappa=0.1)
        assert verdict["ok"]

    def test_weight_sums_follow_the_block_mass(self):
        config = l1_config()
        adversary = RandomFunctionalAdversary(
            seed=5, count=2, partition_name="level-parity", level_band=4
        )
        transcript = run_game(adversary, l1_strategy(config), config)
        for game_round in transcript.rounds:
            total = sum(l * m for l, m in zip(game_round.responder.lam, game_round.responder.mu))
            assert 1.0 - config.eta < total < 1.0 + config.eta

    def test_dual_side_probe_is_isometric(self):
        config = l1_config()
        transcript = run_game(NullAdversary(), l1_strategy(config), config)
        report = system_probe_report(system_from_transcript(transcript), trials=1000, seed=0)
        assert abs(report["sup"].min_ratio - 1.0) <= 1e-12
        assert abs(report["sup"].max_ratio - 1.0) <= 1e-12

    def test_root_block_keeps_the_minimum_mass(self):
        config = l1_config()
        transcript = run_game(NullAdversary(), l1_strategy(config), config)
        opening = transcript.rounds[0].responder
        mass = sum(Fraction(key[0].measure) for key in opening.E if not key[0].is_empty)
        mass += sum(1 for key in opening.E if key[0].is_empty)
        assert mass >= Fraction(2, 5)

    def test_parity_partition_is_winnable_at_four_rounds(self):
        config = l1_config(rounds=4)
        adversary = RandomFunctionalAdversary(seed=3, count=0, partition_name="parity")
        transcript = run_game(adversary, l1_strategy(config), config)
        assert check_win(transcript, trials=300, seed=0).overall

    def test_parity_partition_exhausts_depth_twelve_at_seven_rounds(self):
        config = l1_config()
        adversary = RandomFunctionalAdversary(seed=3, count=0, partition_name="parity")
        with pytest.raises(PersistenceUnattainableError, match="halving"):
            run_game(adversary, l1_strategy(config), config)

    def test_parity_partition_is_winnable_at_depth_sixteen(self):
        config = l1_config(depth_cap=16)
        adversary = RandomFunctionalAdversary(seed=3, count=0, partition_name="parity")
        transcript = run_game(adversary, l1_strategy(config), config)
        assert check_win(transcript, trials=200, seed=0).overall
        assert validate_system(system_from_transcript(transcript), kappa=0.1)["ok"]

    def test_requires_the_constant_including_convention(self):
        config = l1_config(convention="D")
        with pytest.raises(ConfigError):
            l1_strategy(config)


class TestHpHqStrategy:
    def run(self, p, q, adversary, rounds=10):
        config = GameConfig(
            dims=2,
            space=NormSpec.hphq(p, q),
            C=1.0,
            eta=0.1,
            rounds=rounds,
            depth_cap=6,
            convention="D",
            partitioned=False,
        )
        return config, run_game(adversary, hphq_strategy(p, q, config), config)

    def test_symmetric_exponents_win_exactly(self):
        config, transcript = self.run(2.0, 2.0, NullAdversary())
        report = check_win(transcript, trials=300, seed=0)
        assert report.overall
        assert abs(report.equiv_primal.max_ratio - 1.0) <= 1e-12
        assert abs(report.equiv_dual.max_ratio - 1.0) <= 1e-12

    def test_symmetric_exponents_survive_sign_flips(self):
        config, transcript = self.run(2.0, 2.0, FlipAdversary())
        assert check_win(transcript, trials=300, seed=0).overall
        assert check_freshness(transcript)

    def test_asymmetric_exponents_win_against_null(self):
        config, transcript = self.run(2.0, 3.0, NullAdversary())
        assert check_win(transcript, trials=300, seed=0).overall

    def test_opening_collection_sits_over_the_left_half_line(self):
        config, transcript = self.run(2.0, 2.0, NullAdversary())
        universe = config.universe()
        first_fine = next(
            k for k, key in enumerate(universe[: config.rounds])
            if key[0].level > key[1].level
        )
        block = transcript.rounds[first_fine].responder.E
        for K, L in block:
            assert L == I(0, 1)
            assert K.level >= 1
            assert (K.position - 1) / 2 ** (K.level - 1) < 1  # inside [0, 1/2)

    def test_rectangle_weights_multiply_to_measure_ratios(self):
        config, transcript = self.run(2.0, 3.0, FlipAdversary())
        universe = config.universe()
        for k, game_round in enumerate(transcript.rounds):
            target_I, target_J = universe[k]
            move = game_round.responder
            total = 0.0
            for (K, L), lam, mu in zip(move.E, move.lam, move.mu):
                ratio = Fraction(K.measure, target_I.measure) * Fraction(L.measure, target_J.measure)
                assert lam * mu == pytest.approx(float(ratio), abs=1e-14)
                total += lam * mu
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_blocks_are_never_reused(self):
        _, transcript = self.run(2.0, 3.0, FlipAdversary())
        assert check_freshness(transcript)

    def test_two_parameters_required(self):
        config = h1_config(space=NormSpec.hphq(2.0, 2.0))
        with pytest.raises(ConfigError):
            hphq_strategy(2.0, 2.0, config)


class TestMixedStrategy:
    def mixed_config(self, space=None, **overrides):
        base = dict(
            dims=2,
            space=space or NormSpec.mixed(1.5, 3.0),
            C=1.0,
            eta=0.1,
            rounds=10,
            depth_cap=6,
            convention="D",
            partitioned=False,
        )
        base.update(overrides)
        return GameConfig(**base)

    def block_functions(self, transcript):
        return [
            HaarCoefficients(
                transcript.config.dims,
                {key: float(s) for key, s in zip(r.responder.E, r.adversary.signs)},
            )
            for r in transcript.rounds
        ]

    def test_block_modulus_equals_the_target_haar_function(self):
        config = self.mixed_config()
        transcript = run_game(FlipAdversary(), mixed_lp_strategy((1.5, 3.0), config), config)
        universe = config.universe()
        resolution = (config.depth_cap,) * config.dims
        for k, block in enumerate(self.block_functions(transcript)):
            b = synthesize(block, resolution).values
            h = synthesize(HaarCoefficients(2, {universe[k]: 1.0}), resolution).values
            assert np.array_equal(np.abs(b), np.abs(h))

    def test_square_function_probe_is_isometric(self):
        config = self.mixed_config()
        transcript = run_game(FlipAdversary(), mixed_lp_strategy((1.5, 3.0), config), config)
        universe = config.universe()
        blocks = self.block_functions(transcript)
        reference = [HaarCoefficients(2, {universe[k]: 1.0}) for k in range(config.rounds)]
        triple = NormSpec.triple(1.5, 3.0)
        report = equivalence_probe(blocks, reference, triple, triple, trials=300, seed=0)
        assert abs(report.min_ratio - 1.0) <= 1e-12
        assert abs(report.max_ratio - 1.0) <= 1e-12

    def test_triple_norm_game_wins_outright(self):
        config = self.mixed_config(space=NormSpec.triple(1.5, 3.0))
        transcript = run_game(NullAdversary(), mixed_lp_strategy((1.5, 3.0), config), config)
        report = check_win(transcript, trials=300, seed=0)
        assert report.overall
        assert abs(report.equiv_primal.max_ratio - 1.0) <= 1e-12

    def test_one_parameter_blocks_are_full_level_tilings(self):
        config = self.mixed_config(
            dims=1, space=NormSpec.lp(2.0), depth_cap=8, rounds=7
        )
        transcript = run_game(NullAdversary(), mixed_lp_strategy((2.0,), config), config)
        universe = config.universe()
        assert check_win(transcript, trials=300, seed=0).overall
        last_level = 0
        for k, game_round in enumerate(transcript.rounds):
            target = universe[k][0]
            levels = {key[0].level for key in game_round.responder.E}
            assert len(levels) == 1
            level = levels.pop()
            assert level >= max(last_level, target.level)
            stretch = 2 ** (level - target.level)
            want = {(target.position - 1) * stretch + j for j in range(1, stretch + 1)}
            assert {key[0].position for key in game_round.responder.E} == want
            last_level = level

    def test_exponents_must_be_strictly_inside_the_reflexive_range(self):
        config = self.mixed_config(dims=1, space=NormSpec.lp(1.0))
        with pytest.raises(ConfigError):
            mixed_lp_strategy((1.0,), config)

    def test_depth_exhaustion_is_reported(self):
        config = self.mixed_config(dims=1, space=NormSpec.lp(2.0), depth_cap=2, rounds=7)
        with pytest.raises(StrategyFailedError, match="depth"):
            run_game(NullAdversary(), mixed_lp_strategy((2.0,), config), config)


class TestSumStrategy:
    def h1_part(self, **overrides):
        config = h1_config(rounds=6, **overrides)
        return NormSpec.hp(1.0), gg_strategy(NormSpec.hp(1.0), config)

    def test_two_h1_copies_pass_the_merged_audit(self):
        merged = sum_strategy([self.h1_part(), self.h1_part()], p=2.0)
        transcript = merged.play(rounds=12, adversary=NullSumAdversary())
        assert transcript.routing == tuple((k % 2, k // 2) for k in range(12))
        report = check_sum_win(transcript, trials=200, seed=0)
        assert report["overall"]
        assert report["dual_norm_mode"] == "sup-surrogate"

    def test_heterogeneous_parts_pass(self):
        lp_config = h1_config(space=NormSpec.lp(2.0), rounds=5)
        parts = [
            (NormSpec.lp(2.0), mixed_lp_strategy((2.0,), lp_config)),
            self.h1_part(),
        ]
        transcript = sum_strategy(parts, p=2.0).play(rounds=10, adversary=NullSumAdversary())
        assert check_sum_win(transcript, trials=200, seed=0)["overall"]

    def test_single_part_reduces_to_the_bare_game(self):
        config = h1_config(rounds=6)
        bare = run_game(NullAdversary(), gg_strategy(NormSpec.hp(1.0), config), config)
        merged = sum_strategy([self.h1_part()], p=2.0)
        transcript = merged.play(rounds=6, adversary=NullSumAdversary()).transcripts[0]
        for a, b in zip(bare.rounds, transcript.rounds):
            assert a.responder.E == b.responder.E
            assert a.responder.lam == b.responder.lam
            assert a.responder.mu == b.responder.mu
            assert a.adversary.signs == b.adversary.signs

    def test_sum_proxy_never_exceeds_the_component_proxy(self):
        config = h1_config(rounds=6)
        bare = run_game(NullAdversary(), gg_strategy(NormSpec.hp(1.0), config), config)
        resolution = (config.depth_cap,)
        spaces = [NormSpec.hp(1.0), NormSpec.hp(1.0)]
        for k in range(len(bare.rounds)):
            x = synthesize(bare.rounds[k].x, resolution)
            f = synthesize(bare.rounds[k].xstar, resolution)
            merged = sum_dist_proxy(0, x, [(f, f)], spaces, p=2.0)
            component = abs(pairing(x, f)) / dual_probe_norm(f, NormSpec.hp(1.0))
            assert merged <= component + 1e-12
            solo = sum_dist_proxy(0, x, [(f, None)], spaces, p=2.0)
            assert solo == pytest.approx(component, abs=1e-12)


class TestCrossCutting:
    def test_sign_flip_negates_the_derived_pair(self):
        config = h1_config()
        transcript = run_game(FlipAdversary(), gg_strategy(NormSpec.hp(1.0), config), config)
        resolution = (config.depth_cap,)
        rng = np.random.default_rng(2)
        for game_round in transcript.rounds:
            move = game_round.responder
            weights = normalization_weights(move.E, config.space)
            dual_weights = dual_normalization_weights(move.E, config.space)
            flipped = [-s for s in game_round.adversary.signs]
            x_flip = HaarCoefficients(
                1, {key: s * l / w for key, s, l, w in zip(move.E, flipped, move.lam, weights)}
            )
            star_flip = HaarCoefficients(
                1,
                {key: s * m / w for key, s, m, w in zip(move.E, flipped, move.mu, dual_weights)},
            )
            x = synthesize(game_round.x, resolution).values
            assert np.allclose(synthesize(x_flip, resolution).values, -x, atol=1e-14)

            diagonal = {key: float(c) for key, c in zip(move.E, rng.uniform(-1, 1, len(move.E)))}
            for star, primal in (
                (game_round.xstar, game_round.x),
                (star_flip, x_flip),
            ):
                image = HaarCoefficients(
                    1, {key: diagonal[key] * v for key, v in primal.entries.items()}
                )
                value = pairing(synthesize(star, resolution), synthesize(image, resolution))
                diagonal.setdefault("_ref", value)
                assert abs(abs(value) - abs(diagonal["_ref"])) <= 1e-12
            del diagonal["_ref"]

    def test_freshness_flags_reused_blocks(self):
        config = h1_config(rounds=2)

        class RepeatStrategy(gg_strategy(NormSpec.hp(1.0), config).__class__):
            def respond(self, k, eta, functionals, vectors, partition, rounds, config):
                move = super().respond(k, eta, functionals, vectors, partition, rounds, config)
                if k == 1:
                    first = rounds[0].responder
                    return type(move)(move.side, first.E, first.lam, first.mu)
                return move

        strategy = RepeatStrategy(NormSpec.hp(1.0), config)
        transcript = run_game(NullAdversary(), strategy, config)
        assert not check_freshness(transcript)

    def test_level_parity_partition_sides(self):
        partition = Partition("level-parity")
        assert partition.side((EMPTY,)) == 1
        assert partition.side((I(0, 1),)) == 1
        assert partition.side((I(1, 1),)) == 2
        assert partition.side((I(2, 3),)) == 1
        assert partition.side((I(1, 1), I(1, 2))) == 1
        assert partition.side((I(1, 1), I(2, 1))) == 2
