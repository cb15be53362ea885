"""Responder strategies that win the reproduction game, plus system audits.

Every strategy here answers a round by producing a block of fresh Haar
indices whose signed combination imitates the round's target basis vector:
supports reproduce the target's measure, coefficient products sum to one,
and the block sits deep enough that the adversary's constraints pair to
(nearly) zero against it.  The emitted blocks across a full game form a
nested system; `system_from_transcript`, `validate_system`, and
`system_probe_report` extract and audit that system, and
`check_freshness` verifies the cross-round disjointness discipline that
makes biorthogonality automatic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .dyadic import DyadicIndex, index_from_json, index_to_json
from .errors import (
    ConfigError,
    DepthExhaustedError,
    GameContractError,
    InvalidArgumentError,
    PersistenceUnattainableError,
    UnsupportedDimensionError,
)
from .game import (
    SIGN_TOLERANCE,
    AdversaryMove,
    GameConfig,
    GameRound,
    GameTranscript,
    Partition,
    ResponderMove,
    Strategy,
    _derive_pair,
    _eta_halving,
    _validate_move,
)
from .norms import (
    NormSpec,
    dual_norm,
    equivalence_probe,
    norm_eval,
    pairing,
    probe_vectors,
)
from .operators import (
    IndexTuple,
    dual_normalization_weights,
    normalization_weights,
)
from .stepfn import HaarCoefficients, StepFunction, synthesize

__all__ = [
    "GGEntry",
    "GGSystem",
    "GGStrategy",
    "HpHqStrategy",
    "LOneStrategy",
    "MixedStrategy",
    "NullSumAdversary",
    "SumAdversary",
    "SumStrategy",
    "SumTranscript",
    "check_freshness",
    "check_sum_win",
    "decay_margins",
    "dual_probe_norm",
    "gg_strategy",
    "hphq_strategy",
    "l1_strategy",
    "mixed_lp_strategy",
    "sum_dist_proxy",
    "sum_strategy",
    "system_from_transcript",
    "system_probe_report",
    "validate_system",
]


# ---------------------------------------------------------------------------
# Pairing bulk evaluation and the functional-decay test
# ---------------------------------------------------------------------------


def _haar_level_pairings(f: StepFunction, levels: Sequence[int]) -> np.ndarray:
    """Integrals of f against every tensor Haar function of a product level.

    Returns an array of shape (2^j_1, ..., 2^j_d); the entry at position
    (p_1-1, ..., p_d-1) is the integral of f times the Haar function of the
    rectangle with those positions.
    """
    values = f.values
    if len(levels) != values.ndim:
        raise InvalidArgumentError("one level per axis required")
    arr = values * float(Fraction(1, 2 ** sum(f.resolution)))
    for axis, level in enumerate(levels):
        size = arr.shape[axis]
        if level < 0 or 2 ** (level + 1) > size:
            raise InvalidArgumentError(
                f"level {level} is too fine for a grid of {size} cells"
            )
        block = size >> level
        lead = arr.shape[:axis]
        tail = arr.shape[axis + 1 :]
        arr = arr.reshape(lead + (2**level, block) + tail)
        head = (slice(None),) * (axis + 1)
        left = arr[head + (slice(0, block // 2),)].sum(axis=axis + 1)
        right = arr[head + (slice(block // 2, block),)].sum(axis=axis + 1)
        arr = left - right
    return arr


def dual_probe_norm(f: StepFunction, space: NormSpec) -> float:
    """Functional size of f acting on the space, with a sup-norm stand-in.

    Falls back to the sup norm for spaces whose dual norm has no evaluator
    here (the square-function space with exponent one).  The stand-in never
    underestimates pairings against unit vectors of that space's span, so
    decay tests remain meaningful; audits report which scale was used.
    """
    try:
        return dual_norm(f, space)
    except InvalidArgumentError:
        return norm_eval(f, NormSpec.sup())


def _grouped_pairing_sums(
    E: Sequence[IndexTuple], coeffs: np.ndarray, f: StepFunction
) -> float:
    """Sum of coeff * |<h_key, f>| over the block, grouped by level vector."""
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, key in enumerate(E):
        for idx in key:
            if idx.is_empty:
                raise InvalidArgumentError("blocks consist of proper intervals")
        groups.setdefault(tuple(idx.level for idx in key), []).append(i)
    total = 0.0
    for levels, members in groups.items():
        table = np.abs(_haar_level_pairings(f, levels))
        pos = tuple(
            np.array([E[i][axis].position - 1 for i in members])
            for axis in range(len(levels))
        )
        total += float(np.dot(coeffs[members], table[pos]))
    return total


def decay_margins(
    E: Sequence[IndexTuple],
    lam: Sequence[float],
    mu: Sequence[float],
    functionals: Sequence[StepFunction],
    vectors: Sequence[StepFunction],
    space: NormSpec,
) -> tuple[float, float]:
    """Sign-robust constraint violations of a candidate block.

    The primal margin bounds |<x, g>| / scale(g) over every adversary
    functional g and every sign choice for x = sum(sign * lam * e); the dual
    margin does the same for x* against the adversary's vectors.  A round
    whose margins stay below its tolerance satisfies the distance
    requirements no matter which signs arrive afterwards.
    """
    if not functionals and not vectors:
        return 0.0, 0.0
    E = [tuple(key) for key in E]
    weights = normalization_weights(E, space)
    dual_weights = dual_normalization_weights(E, space)
    primal_coeffs = np.array([l / w for l, w in zip(lam, weights)])
    dual_coeffs = np.array([m / w for m, w in zip(mu, dual_weights)])
    primal = 0.0
    for g in functionals:
        scale = dual_probe_norm(g, space)
        if scale == 0.0:
            raise InvalidArgumentError("zero constraint functional")
        primal = max(primal, _grouped_pairing_sums(E, primal_coeffs, g) / scale)
    dual = 0.0
    for v in vectors:
        scale = norm_eval(v, space)
        if scale == 0.0:
            raise InvalidArgumentError("zero constraint vector")
        dual = max(dual, _grouped_pairing_sums(E, dual_coeffs, v) / scale)
    return primal, dual


# ---------------------------------------------------------------------------
# Emitted block systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GGEntry:
    """One round's contribution: target index, block, and the given signs."""

    index: IndexTuple
    block: tuple[IndexTuple, ...]
    signs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "index",
            (self.index,) if isinstance(self.index, DyadicIndex) else tuple(self.index),
        )
        object.__setattr__(
            self,
            "block",
            tuple(
                (key,) if isinstance(key, DyadicIndex) else tuple(key)
                for key in self.block
            ),
        )
        object.__setattr__(self, "signs", tuple(float(s) for s in self.signs))
        if len(self.signs) != len(self.block):
            raise InvalidArgumentError("one sign per block member required")


@dataclass(frozen=True)
class GGSystem:
    """The nested block system a finished game leaves behind.

    entries are in round order; scale is the coverage measure of the root
    block (the round whose target is the whole-line symbol), or one when no
    such round was played.
    """

    dims: int
    depth_cap: int
    convention: str
    entries: tuple[GGEntry, ...]
    scale: Fraction

    def block_function(self, k: int, resolution: tuple[int, ...] | None = None) -> StepFunction:
        """The signed indicator combination b_k of round k's block."""
        entry = self.entries[k]
        resolution = resolution or (self.depth_cap,) * self.dims
        coeffs = HaarCoefficients(
            self.dims,
            {key: float(sign) for key, sign in zip(entry.block, entry.signs)},
            self.convention,
        )
        return synthesize(coeffs, resolution)

    def to_json(self) -> dict:
        return {
            "dims": self.dims,
            "depth_cap": self.depth_cap,
            "convention": self.convention,
            "scale": [self.scale.numerator, self.scale.denominator],
            "entries": [
                {
                    "index": [index_to_json(idx) for idx in entry.index],
                    "H": [
                        [index_to_json(idx) for idx in key] for key in entry.block
                    ],
                    "signs": list(entry.signs),
                }
                for entry in self.entries
            ],
        }

    @staticmethod
    def from_json(payload: dict) -> "GGSystem":
        return GGSystem(
            dims=int(payload["dims"]),
            depth_cap=int(payload["depth_cap"]),
            convention=str(payload["convention"]),
            entries=tuple(
                GGEntry(
                    index=tuple(index_from_json(i) for i in e["index"]),
                    block=tuple(
                        tuple(index_from_json(i) for i in key) for key in e["H"]
                    ),
                    signs=tuple(e["signs"]),
                )
                for e in payload["entries"]
            ),
            scale=Fraction(*payload["scale"]),
        )


def system_from_transcript(transcript: GameTranscript) -> GGSystem:
    """Collect each round's target, block, and signs into a GGSystem."""
    config = transcript.config
    universe = config.universe()
    entries = []
    scale = Fraction(1)
    for k, game_round in enumerate(transcript.rounds):
        target = universe[k]
        entries.append(
            GGEntry(target, game_round.responder.E, game_round.adversary.signs)
        )
        if all(idx.is_empty for idx in target):
            scale = _coverage_measure(game_round.responder.E, config.depth_cap)
    return GGSystem(
        dims=config.dims,
        depth_cap=config.depth_cap,
        convention=config.convention,
        entries=tuple(entries),
        scale=scale,
    )


def _coverage_measure(block: Sequence[IndexTuple], depth_cap: int) -> Fraction:
    total = Fraction(0)
    for key in block:
        piece = Fraction(1)
        for idx in key:
            piece *= idx.measure
        total += piece
    return total


def _coverage_mask(block: Sequence[DyadicIndex], resolution: int) -> np.ndarray:
    mask = np.zeros(2**resolution, dtype=bool)
    for idx in block:
        cells = idx.cells(resolution)
        mask[cells.start : cells.stop] = True
    return mask


def validate_system(
    system: GGSystem,
    kappa: float,
    deltas: Callable[[int], Fraction] | None = None,
) -> dict:
    """Exact check of the nesting hypotheses of a one-parameter system.

    (a) blocks of disjoint targets cover disjoint sets; (b) each block sits
    inside the correctly-signed half-set of its parent's block; (c) child
    coverage halves the parent coverage within the level's tolerance;
    (d) the whole-line block refines the root block, losing at most the
    first tolerance.  When a root round is present, signs are twisted by
    the root block's sign profile before checking (b), matching the nesting
    the root-multiplied system satisfies.  Measures are exact rationals.
    """
    if system.dims != 1:
        raise UnsupportedDimensionError("system validation is one-parameter only")
    if deltas is None:
        kappa_frac = Fraction(kappa)
        deltas = lambda n: kappa_frac * Fraction(1, 2 ** (n + 2))
    R = system.depth_cap
    targets = [entry.index[0] for entry in system.entries]
    blocks = [[key[0] for key in entry.block] for entry in system.entries]
    masks = [_coverage_mask(block, R) for block in blocks]
    counts = [int(mask.sum()) for mask in masks]
    by_target = {target: k for k, target in enumerate(targets)}

    root_values = None
    if any(t.is_empty for t in targets):
        k0 = by_target[DyadicIndex.empty()]
        root_values = np.zeros(2**R, dtype=np.int8)
        for idx, sign in zip(blocks[k0], system.entries[k0].signs):
            left, right = idx.left().cells(R), idx.right().cells(R)
            root_values[left.start : left.stop] = int(sign)
            root_values[right.start : right.stop] = -int(sign)

    def twisted_signs(k: int) -> list[int]:
        entry = system.entries[k]
        out = []
        for idx, sign in zip(blocks[k], entry.signs):
            value = int(sign)
            if root_values is not None and not targets[k].is_empty:
                start = idx.cells(R).start
                if root_values[start] == 0:
                    raise InvalidArgumentError(
                        f"block member {idx} escapes the root block's support"
                    )
                value *= int(root_values[start])
            out.append(value)
        return out

    a_ok = True
    for i in range(len(targets)):
        if targets[i].is_empty:
            continue
        for j in range(i + 1, len(targets)):
            if targets[j].is_empty:
                continue
            ti, tj = targets[i], targets[j]
            if ti.contains(tj) or tj.contains(ti):
                continue
            if bool(np.any(masks[i] & masks[j])):
                a_ok = False

    b_ok = True
    c_ok = True
    c_defect = Fraction(0)
    for k, target in enumerate(targets):
        if target.is_empty or target.level == 0:
            continue
        parent = target.parent()
        if parent not in by_target:
            continue
        kp = by_target[parent]
        want_plus = target == parent.left()
        side = np.zeros(2**R, dtype=bool)
        for idx, tsign in zip(blocks[kp], twisted_signs(kp)):
            half = idx.left() if (tsign > 0) == want_plus else idx.right()
            cells = half.cells(R)
            side[cells.start : cells.stop] = True
        if bool(np.any(masks[k] & ~side)):
            b_ok = False
        half_count = Fraction(counts[kp], 2)
        delta = deltas(target.level)
        lo = (1 - delta) * half_count
        hi = (1 + delta) * half_count
        if not (lo <= counts[k] <= hi):
            c_ok = False
        if half_count > 0:
            c_defect = max(c_defect, abs(Fraction(counts[k]) - half_count) / half_count)

    d_ok = True
    root_target = DyadicIndex.empty()
    line = DyadicIndex.interval(0, 1)
    if root_target in by_target and line in by_target:
        k0, k1 = by_target[root_target], by_target[line]
        if bool(np.any(masks[k1] & ~masks[k0])):
            d_ok = False
        if Fraction(counts[k1]) < (1 - deltas(1)) * Fraction(counts[k0]):
            d_ok = False

    return {
        "a": a_ok,
        "b": b_ok,
        "c": c_ok,
        "d": d_ok,
        "ok": a_ok and b_ok and c_ok and d_ok,
        "halving_defect": c_defect,
        "scale": system.scale,
    }


def system_probe_report(
    system: GGSystem, trials: int = 1000, seed: int = 0
) -> dict:
    """Probe the system against the Haar references in both endpoint norms.

    The integrable-side sequence compares b_k / (scale * |I_k|) with
    h_{I_k} / |I_k|; the bounded-side sequence compares b_k with h_{I_k}.
    A well-formed system keeps the bounded-side ratios at exactly one and
    the integrable-side ratios inside the halving tolerance window.
    """
    if system.dims != 1:
        raise UnsupportedDimensionError("probe report is one-parameter only")
    resolution = (system.depth_cap,)
    scale = float(system.scale)
    primal, dual, ref_primal, ref_dual = [], [], [], []
    for k, entry in enumerate(system.entries):
        target = entry.index[0]
        measure = 1.0 if target.is_empty else float(target.measure)
        b = system.block_function(k, resolution)
        primal.append(b * (1.0 / (scale * measure)))
        dual.append(b)
        h = synthesize(
            HaarCoefficients(1, {entry.index: 1.0}, system.convention), resolution
        )
        ref_primal.append(h * (1.0 / measure))
        ref_dual.append(h)
    one = NormSpec.lp(1.0)
    return {
        "l1": equivalence_probe(primal, ref_primal, one, one, trials=trials, seed=seed),
        "sup": equivalence_probe(
            dual, ref_dual, NormSpec.sup(), NormSpec.sup(), trials=trials, seed=seed + 1
        ),
    }


def check_freshness(transcript: GameTranscript) -> bool:
    """Whether cross-round blocks pair to zero structurally.

    Requires that no index is reused and that any two overlapping indices
    from different rounds are strictly nested or disjoint on some axis, the
    geometry that makes every cross-round pairing vanish exactly.
    """
    config = transcript.config
    R = config.depth_cap
    dims = config.dims
    rounds = [list(r.responder.E) for r in transcript.rounds]

    def bounds(block: list[IndexTuple]) -> tuple[np.ndarray, np.ndarray]:
        lo = np.empty((len(block), dims), dtype=np.int64)
        hi = np.empty((len(block), dims), dtype=np.int64)
        for i, key in enumerate(block):
            for axis, idx in enumerate(key):
                cells = idx.cells(R)
                lo[i, axis], hi[i, axis] = cells.start, cells.stop
        return lo, hi

    seen: set[IndexTuple] = set()
    for block in rounds:
        for key in block:
            if key in seen:
                return False
            seen.add(key)

    packed = [bounds(block) for block in rounds]
    for later in range(1, len(rounds)):
        lo_b, hi_b = packed[later]
        for earlier in range(later):
            lo_a, hi_a = packed[earlier]
            # pairwise (n_a, n_b, dims) comparisons
            disjoint = (hi_b[None] <= lo_a[:, None]) | (hi_a[:, None] <= lo_b[None])
            strict = (
                ((hi_b[None] - lo_b[None]) < (hi_a[:, None] - lo_a[:, None]))
                | ((hi_a[:, None] - lo_a[:, None]) < (hi_b[None] - lo_b[None]))
            )
            ok = (disjoint | strict).any(axis=2)
            if not bool(ok.all()):
                return False
    return True


# ---------------------------------------------------------------------------
# Shared responder plumbing
# ---------------------------------------------------------------------------


class _Record:
    """Internal per-round memory: the full block before any restriction."""

    __slots__ = ("target", "keys", "kept", "signs", "meta")

    def __init__(self, target, keys, kept, meta=None):
        self.target = target
        self.keys = tuple(keys)
        self.kept = tuple(kept)
        self.signs: tuple[float, ...] | None = None
        self.meta = meta or {}


class _BlockStrategy(Strategy):
    """Base for stateful block strategies: history, signs, partitions."""

    def __init__(self, config: GameConfig, strict: bool = False):
        self.config = config
        self.strict = strict
        self._universe = config.universe()
        self._records: list[_Record] = []
        self._round_of: dict[IndexTuple, int] = {}
        self._signed = 0

    def _check_config(self, config: GameConfig) -> None:
        if config is not self.config and config != self.config:
            raise ConfigError("strategy bound to a different game configuration")

    def _target(self, k: int) -> IndexTuple:
        if k != len(self._records):
            raise GameContractError(
                f"round {k} played out of order (expected {len(self._records)})"
            )
        if k >= len(self._universe):
            raise DepthExhaustedError(
                f"round {k} has no target left in a depth-{self.config.depth_cap} universe"
            )
        return self._universe[k]

    def _reconcile(self, rounds: tuple[GameRound, ...]) -> None:
        for i in range(self._signed, min(len(rounds), len(self._records))):
            record = self._records[i]
            played = iter(rounds[i].adversary.signs)
            signs = [1.0] * len(record.keys)
            for pos, keep in enumerate(record.kept):
                if keep:
                    signs[pos] = float(next(played))
            record.signs = tuple(signs)
            self._on_signed(i, record)
        self._signed = min(len(rounds), len(self._records))

    def _on_signed(self, k: int, record: _Record) -> None:
        pass

    def _adapt(
        self,
        E: list[IndexTuple],
        lam: list[float],
        mu: list[float],
        partition: Partition,
    ) -> tuple[int, list[bool], list[IndexTuple], list[float], list[float]]:
        """Restrict a block to its heavier partition side, rescaling weights."""
        sides = [partition.side(key) for key in E]
        if all(s == 1 for s in sides):
            return 1, [True] * len(E), E, lam, mu
        mass = [l * m for l, m in zip(lam, mu)]
        mass_one = sum(m for m, s in zip(mass, sides) if s == 1)
        mass_two = sum(m for m, s in zip(mass, sides) if s == 2)
        side = 1 if mass_one >= mass_two else 2
        rho = (mass_one if side == 1 else mass_two) / (mass_one + mass_two)
        if rho <= 0.0:
            raise GameContractError("the chosen partition side carries no mass")
        boost = 1.0 / math.sqrt(rho)
        kept = [s == side for s in sides]
        E2 = [key for key, keep in zip(E, kept) if keep]
        lam2 = [l * boost for l, keep in zip(lam, kept) if keep]
        mu2 = [m * boost for m, keep in zip(mu, kept) if keep]
        return side, kept, E2, lam2, mu2

    def _finish(
        self,
        k: int,
        target: IndexTuple,
        keys: list[IndexTuple],
        kept: list[bool],
        side: int,
        E: list[IndexTuple],
        lam: list[float],
        mu: list[float],
        meta: dict | None = None,
    ) -> ResponderMove:
        record = _Record(target, keys, kept, meta)
        self._records.append(record)
        self._round_of[target] = k
        return ResponderMove(side=side, E=tuple(E), lam=tuple(lam), mu=tuple(mu))

    def _pick_candidate(
        self, candidates: list[tuple[float, object]], eta: float, what: str
    ):
        """Prefer the first candidate below tolerance, else the least margin."""
        if not candidates:
            raise DepthExhaustedError(f"no admissible {what} below the depth cap")
        for margin, payload in candidates:
            if margin < eta:
                return payload
        best_margin, payload = min(candidates, key=lambda c: c[0])
        if self.strict:
            raise DepthExhaustedError(
                f"constraint decay {best_margin:.3g} never beat the tolerance {eta:.3g}"
            )
        return payload


# ---------------------------------------------------------------------------
# The half-pattern construction for square-function and Lebesgue spaces
# ---------------------------------------------------------------------------


class GGStrategy(_BlockStrategy):
    """Reproduces the one-parameter Haar basis through nested half-patterns.

    Round one answers with a full dyadic level; each later round answers
    with the level-j intervals filling the signed halves of its parent's
    block, so coverage measures reproduce the target measures exactly.
    Weights are the measure ratios raised to the space's exponent, making
    the coefficient products sum to one.
    """

    name = "gg"

    def __init__(self, space: NormSpec, config: GameConfig, strict: bool = False):
        if config.dims != 1 or config.convention != "D":
            raise ConfigError("this construction is one-parameter, mean-zero only")
        if space.kind == "hp":
            if space.exponents[0] != 1.0:
                raise ConfigError("square-function spaces are supported at exponent one")
        elif space.kind == "lp":
            if not space.exponents[0] > 1.0:
                raise ConfigError("Lebesgue exponents must exceed one here")
        else:
            raise ConfigError(f"unsupported space kind {space.kind!r}")
        if space != config.space:
            raise ConfigError("the game config must carry the strategy's space")
        super().__init__(config, strict)
        self.space = space
        self._exponent = space.exponents[0]
        self._last_level = 0

    def clone(self) -> "GGStrategy":
        return GGStrategy(self.space, self.config, self.strict)

    def respond(self, k, eta, functionals, vectors, partition, rounds, config):
        self._check_config(config)
        self._reconcile(rounds)
        target = self._target(k)[0]
        R = config.depth_cap
        if target.level == 0:
            mask = np.ones(2**R, dtype=bool)
        else:
            parent = target.parent()
            parent_round = self._round_of.get((parent,))
            if parent_round is None:
                raise GameContractError(f"round {k}: parent block missing")
            record = self._records[parent_round]
            mask = np.zeros(2**R, dtype=bool)
            want_plus = target == parent.left()
            for key, sign in zip(record.keys, record.signs):
                idx = key[0]
                half = idx.left() if (sign > 0) == want_plus else idx.right()
                cells = half.cells(R)
                mask[cells.start : cells.stop] = True

        inv_p = 1.0 / self._exponent
        inv_q = 1.0 - inv_p
        measure = float(target.measure)
        candidates = []
        for level in range(max(self._last_level + 1, 1), R):
            inside = mask.reshape(2**level, -1).all(axis=1)
            positions = np.nonzero(inside)[0]
            if positions.size == 0:
                continue
            keys = [(DyadicIndex.interval(level, int(p) + 1),) for p in positions]
            ratio = (2.0**-level) / measure
            lam = [ratio**inv_p] * len(keys)
            mu = [ratio**inv_q] * len(keys)
            side, kept, E, lam2, mu2 = self._adapt(keys, lam, mu, partition)
            if not E:
                continue
            margins = decay_margins(E, lam2, mu2, functionals, vectors, self.space)
            payload = (level, keys, kept, side, E, lam2, mu2)
            candidates.append((max(margins), payload))
            if max(margins) < eta:
                break
        level, keys, kept, side, E, lam2, mu2 = self._pick_candidate(
            candidates, eta, "block level"
        )
        self._last_level = level
        return self._finish(k, (target,), keys, kept, side, E, lam2, mu2)


def gg_strategy(space: NormSpec, config: GameConfig, strict: bool = False) -> GGStrategy:
    return GGStrategy(space, config, strict)


# ---------------------------------------------------------------------------
# The integrable-space construction over a partition side
# ---------------------------------------------------------------------------


class LOneStrategy(_BlockStrategy):
    """Plays the lexicographic game on one partition side of the full basis.

    All blocks are drawn from a single side; the root round greedily covers
    the line with side members, and every later round refills its required
    region (the parent's signed halves, twisted by the root block's sign
    profile) with unused side members.  The root coverage becomes the scale
    dividing every weight, so the coefficient products sum to the block
    coverage relative to its ideal value.  Rounds whose halving or coverage
    windows cannot be met below the depth cap fail with the violated
    condition named.
    """

    name = "l1"

    def __init__(
        self,
        config: GameConfig,
        min_lambda: float = 0.4,
        strict: bool = False,
    ):
        if config.dims != 1 or config.convention != "D+":
            raise ConfigError(
                "this construction needs the one-parameter basis with the unit symbol"
            )
        if config.space != NormSpec.lp(1.0):
            raise ConfigError("the game space must be the integrable norm")
        super().__init__(config, strict)
        self.min_lambda = min_lambda
        self._side: int | None = None
        self._members: set[DyadicIndex] = set()
        self._used: set[DyadicIndex] = set()
        self._scale: Fraction | None = None
        self._root_values: np.ndarray | None = None
        kappa = Fraction(config.eta)
        self._delta = lambda n: kappa / 2 ** (n + 2)

    def clone(self) -> "LOneStrategy":
        return LOneStrategy(self.config, self.min_lambda, self.strict)

    def _setup(self, partition: Partition) -> None:
        R = self.config.depth_cap
        intervals = [key[0] for key in self._universe if not key[0].is_empty]
        side_members = {1: set(), 2: set()}
        for idx in intervals:
            side_members[partition.side((idx,))].add(idx)

        def greedy_coverage(members: set[DyadicIndex]) -> Fraction:
            total = Fraction(0)
            stack = [DyadicIndex.interval(0, 1)]
            while stack:
                piece = stack.pop()
                if piece in members:
                    total += piece.measure
                elif piece.level < R - 1:
                    stack.extend((piece.left(), piece.right()))
            return total

        rho = {s: greedy_coverage(side_members[s]) for s in (1, 2)}
        self._side = 1 if rho[1] >= rho[2] else 2
        self._members = side_members[self._side]

    def _fill(
        self, piece: DyadicIndex, min_level: int, out: list[DyadicIndex]
    ) -> None:
        if piece.level >= self.config.depth_cap:
            return
        if (
            piece.level >= min_level
            and piece in self._members
            and piece not in self._used
        ):
            out.append(piece)
            return
        if piece.level >= self.config.depth_cap - 1:
            return
        self._fill(piece.left(), min_level, out)
        self._fill(piece.right(), min_level, out)

    def _on_signed(self, k: int, record: _Record) -> None:
        R = self.config.depth_cap
        if k == 0:
            values = np.zeros(2**R, dtype=np.int8)
            for key, sign in zip(record.keys, record.signs):
                idx = key[0]
                left, right = idx.left().cells(R), idx.right().cells(R)
                values[left.start : left.stop] = int(sign)
                values[right.start : right.stop] = -int(sign)
            self._root_values = values
            record.meta["twisted"] = None
            return
        twisted = []
        for key, sign in zip(record.keys, record.signs):
            start = key[0].cells(R).start
            root = int(self._root_values[start]) if self._root_values is not None else 1
            if root == 0:
                raise GameContractError(
                    f"round {k}: block member {key[0]} escapes the root coverage"
                )
            twisted.append(float(sign) * root)
        record.meta["twisted"] = tuple(twisted)

    def respond(self, k, eta, functionals, vectors, partition, rounds, config):
        self._check_config(config)
        if k == 0 and self._side is None:
            self._setup(partition)
        self._reconcile(rounds)
        target = self._target(k)[0]

        if target.is_empty:
            pieces = [DyadicIndex.interval(0, 1)]
        elif target.level == 0:
            pieces = [key[0] for key in self._records[0].keys]
        else:
            parent = target.parent()
            parent_round = self._round_of.get((parent,))
            if parent_round is None:
                raise GameContractError(f"round {k}: parent block missing")
            record = self._records[parent_round]
            twisted = record.meta.get("twisted")
            if twisted is None:
                raise GameContractError(f"round {k}: parent signs unavailable")
            want_plus = target == parent.left()
            pieces = []
            for key, tsign in zip(record.keys, twisted):
                idx = key[0]
                if idx.level >= config.depth_cap - 1:
                    continue  # the half would be too fine to subdivide
                pieces.append(idx.left() if (tsign > 0) == want_plus else idx.right())
        if not pieces:
            raise DepthExhaustedError(f"round {k}: the required region vanished")

        eta_frac = Fraction(config.eta)
        target_measure = Fraction(1) if target.is_empty else target.measure
        level_n = 0 if target.is_empty else target.level
        base = min(piece.level for piece in pieces)
        failures: list[str] = []
        candidates = []
        for extra in range(0, config.depth_cap - base):
            members: list[DyadicIndex] = []
            for piece in pieces:
                self._fill(piece, piece.level + extra, members)
            if not members:
                failures.append("no unused side members in the region")
                continue
            members.sort()
            coverage = sum((m.measure for m in members), Fraction(0))
            if k == 0:
                if coverage < Fraction(self.min_lambda).limit_denominator(10**6):
                    failures.append(
                        f"root coverage {float(coverage):.4f} below the "
                        f"acceptance threshold {self.min_lambda}"
                    )
                    continue
                scale = coverage
            else:
                scale = self._scale
                total = coverage / (scale * target_measure)
                if not (1 - eta_frac < total < 1 + eta_frac):
                    failures.append(
                        f"weight sum {float(total):.4f} left the unit window"
                    )
                    continue
                if k == 1:
                    if coverage < (1 - self._delta(1)) * self._records[0].meta["coverage"]:
                        failures.append(
                            "root refinement lost more than the first tolerance"
                        )
                        continue
                elif target.level >= 1:
                    parent_cov = self._records[
                        self._round_of[(target.parent(),)]
                    ].meta["coverage"]
                    delta = self._delta(level_n)
                    if not (
                        (1 - delta) * parent_cov / 2
                        <= coverage
                        <= (1 + delta) * parent_cov / 2
                    ):
                        failures.append(
                            f"halving defect {float(abs(coverage - parent_cov / 2) / (parent_cov / 2)):.4g} "
                            f"exceeded the level tolerance {float(delta):.4g}"
                        )
                        continue
            E = [(m,) for m in members]
            lam = [float(m.measure / (scale * target_measure)) for m in members]
            mu = [1.0] * len(members)
            margins = decay_margins(E, lam, mu, functionals, vectors, config.space)
            payload = (members, E, lam, mu, coverage, scale)
            candidates.append((max(margins), payload))
            if max(margins) < eta:
                break
        if not candidates:
            reason = failures[0] if failures else "empty block"
            raise PersistenceUnattainableError(f"round {k}: {reason}")
        members, E, lam, mu, coverage, scale = self._pick_candidate(
            candidates, eta, "refinement depth"
        )
        if k == 0:
            self._scale = scale
        self._used.update(members)
        return self._finish(
            k,
            (target,),
            E,
            [True] * len(E),
            self._side,
            E,
            lam,
            mu,
            meta={"coverage": coverage},
        )


def l1_strategy(
    config: GameConfig, min_lambda: float = 0.4, strict: bool = False
) -> LOneStrategy:
    return LOneStrategy(config, min_lambda, strict)


# ---------------------------------------------------------------------------
# The two-parameter square-function construction
# ---------------------------------------------------------------------------


class HpHqStrategy(_BlockStrategy):
    """Splits the rectangle universe into two halves and refines each.

    Rectangles taller than wide carry their fine grid on the first axis:
    the whole-second-axis rounds grow a one-parameter half-pattern on axis
    one, and the remaining rounds refine the second axis inside each axis-
    one block, following the signed halves of the parent's per-block
    second-axis pattern.  Wider-than-tall rectangles mirror the roles.
    Exponent-weighted measure ratios keep every coefficient product summing
    to one exactly.
    """

    name = "hphq"

    def __init__(self, p: float, q: float, config: GameConfig, strict: bool = False):
        if config.dims != 2 or config.convention != "D":
            raise ConfigError("this construction is two-parameter only")
        expected = NormSpec.hphq(p, q)
        if config.space != expected:
            raise ConfigError("the game config must carry the strategy's space")
        super().__init__(config, strict)
        self.p, self.q = float(p), float(q)
        self.space = expected
        # fine-level bookkeeping per half, per axis-one / axis-two tree
        self._gg_level = {1: 0, 2: 0}
        self._refine_level = {1: 0, 2: 0}

    def clone(self) -> "HpHqStrategy":
        return HpHqStrategy(self.p, self.q, self.config, self.strict)

    @staticmethod
    def _half_of(target: IndexTuple) -> int:
        level_one, level_two = target[0].level, target[1].level
        return 1 if level_one > level_two else 2

    def respond(self, k, eta, functionals, vectors, partition, rounds, config):
        self._check_config(config)
        self._reconcile(rounds)
        target = self._target(k)
        half = self._half_of(target)
        # gg axis carries the moving half-pattern; the other axis refines.
        gg_axis = 0 if half == 1 else 1
        other_axis = 1 - gg_axis
        gg_int, other_int = target[gg_axis], target[other_axis]
        R = config.depth_cap
        inv = [1.0 / self.p, 1.0 / self.q]

        if other_int.level == 0:
            payload = self._respond_pattern_round(
                k, eta, functionals, vectors, partition, target,
                half, gg_axis, gg_int, R, inv,
            )
        else:
            payload = self._respond_refine_round(
                k, eta, functionals, vectors, partition, target,
                half, gg_axis, gg_int, other_int, R, inv,
            )
        keys, kept, side, E, lam, mu, level_kind, level = payload
        if level_kind == "gg":
            self._gg_level[half] = level
        else:
            self._refine_level[half] = level
        meta = {"half": half, "kind": level_kind, "level": level}
        return self._finish(k, target, keys, kept, side, E, lam, mu, meta)

    def _pattern_mask(self, half: int, gg_axis: int, gg_int: DyadicIndex, R: int):
        """Axis mask for the moving half-pattern of the gg axis."""
        if gg_int.level == 1 and half == 1:
            mask = np.zeros(2**R, dtype=bool)
            cells = gg_int.cells(R)
            mask[cells.start : cells.stop] = True
            return mask
        if gg_int.level == 0:
            return np.ones(2**R, dtype=bool)
        parent = gg_int.parent()
        parent_target = (
            (parent, DyadicIndex.interval(0, 1))
            if gg_axis == 0
            else (DyadicIndex.interval(0, 1), parent)
        )
        parent_round = self._round_of.get(parent_target)
        if parent_round is None:
            raise GameContractError(f"pattern parent {parent_target} missing")
        record = self._records[parent_round]
        mask = np.zeros(2**R, dtype=bool)
        want_plus = gg_int == parent.left()
        for key, sign in zip(record.keys, record.signs):
            idx = key[gg_axis]
            half_int = idx.left() if (sign > 0) == want_plus else idx.right()
            cells = half_int.cells(R)
            mask[cells.start : cells.stop] = True
        return mask

    def _respond_pattern_round(
        self, k, eta, functionals, vectors, partition, target,
        half, gg_axis, gg_int, R, inv,
    ):
        mask = self._pattern_mask(half, gg_axis, gg_int, R)
        line = DyadicIndex.interval(0, 1)
        measure = float(gg_int.measure)
        candidates = []
        for level in range(max(self._gg_level[half] + 1, 1), R):
            inside = mask.reshape(2**level, -1).all(axis=1)
            positions = np.nonzero(inside)[0]
            if positions.size == 0:
                continue
            ratio = (2.0**-level) / measure
            lam_value = ratio ** inv[gg_axis]
            mu_value = ratio ** (1.0 - inv[gg_axis])
            keys = []
            for p in positions:
                fine = DyadicIndex.interval(level, int(p) + 1)
                keys.append((fine, line) if gg_axis == 0 else (line, fine))
            lam = [lam_value] * len(keys)
            mu = [mu_value] * len(keys)
            side, kept, E, lam2, mu2 = self._adapt(keys, lam, mu, partition)
            if not E:
                continue
            margins = decay_margins(E, lam2, mu2, functionals, vectors, self.space)
            payload = (keys, kept, side, E, lam2, mu2, "gg", level)
            candidates.append((max(margins), payload))
            if max(margins) < eta:
                break
        return self._pick_candidate(candidates, eta, "pattern level")

    def _respond_refine_round(
        self, k, eta, functionals, vectors, partition, target,
        half, gg_axis, gg_int, other_int, R, inv,
    ):
        line = DyadicIndex.interval(0, 1)
        parent_other = other_int.parent()
        parent_target = [None, None]
        parent_target[gg_axis] = gg_int
        parent_target[1 - gg_axis] = parent_other
        parent_round = self._round_of.get(tuple(parent_target))
        if parent_round is None:
            raise GameContractError(f"round {k}: refinement parent missing")
        record = self._records[parent_round]
        want_plus = other_int == parent_other.left()
        # per-strip second-axis region: signed halves of the parent's blocks
        strips: dict[DyadicIndex, np.ndarray] = {}
        for key, sign in zip(record.keys, record.signs):
            strip = key[gg_axis]
            other = key[1 - gg_axis]
            half_int = other.left() if (sign > 0) == want_plus else other.right()
            cells = half_int.cells(R)
            region = strips.setdefault(strip, np.zeros(2**R, dtype=bool))
            region[cells.start : cells.stop] = True

        gg_measure = float(gg_int.measure)
        other_measure = float(other_int.measure)
        candidates = []
        floor = max(self._refine_level[half] + 1, other_int.level)
        for level in range(floor, R):
            keys = []
            for strip in sorted(strips):
                inside = strips[strip].reshape(2**level, -1).all(axis=1)
                for p in np.nonzero(inside)[0]:
                    fine = DyadicIndex.interval(level, int(p) + 1)
                    key = [None, None]
                    key[gg_axis] = strip
                    key[1 - gg_axis] = fine
                    keys.append(tuple(key))
            if not keys:
                continue
            lam, mu = [], []
            for key in keys:
                ratio_gg = float(key[gg_axis].measure) / gg_measure
                ratio_other = (2.0**-level) / other_measure
                lam.append(
                    ratio_gg ** inv[gg_axis] * ratio_other ** inv[1 - gg_axis]
                )
                mu.append(
                    ratio_gg ** (1.0 - inv[gg_axis])
                    * ratio_other ** (1.0 - inv[1 - gg_axis])
                )
            side, kept, E, lam2, mu2 = self._adapt(keys, lam, mu, partition)
            if not E:
                continue
            margins = decay_margins(E, lam2, mu2, functionals, vectors, self.space)
            payload = (keys, kept, side, E, lam2, mu2, "refine", level)
            candidates.append((max(margins), payload))
            if max(margins) < eta:
                break
        return self._pick_candidate(candidates, eta, "refinement level")


def hphq_strategy(p: float, q: float, config: GameConfig, strict: bool = False) -> HpHqStrategy:
    return HpHqStrategy(p, q, config, strict)


# ---------------------------------------------------------------------------
# The reflexive mixed-norm construction
# ---------------------------------------------------------------------------


class MixedStrategy(_BlockStrategy):
    """Answers each rectangle with a full product grid inside it.

    Per-axis grid levels never decrease and increase strictly whenever the
    round's target is strictly thinner on that axis than an earlier target,
    which keeps grids of different rounds disjoint.  The signed grid sum
    has the same absolute value as the target's Haar function, so square-
    function norms agree exactly.
    """

    name = "mixed"

    def __init__(self, pbar: Sequence[float], config: GameConfig, strict: bool = False):
        pbar = tuple(float(p) for p in pbar)
        if any(not 1.0 < p < math.inf for p in pbar):
            raise ConfigError("all exponents must lie strictly between one and infinity")
        if len(pbar) != config.dims or config.convention != "D":
            raise ConfigError("one exponent per axis on the mean-zero basis required")
        allowed = {NormSpec.mixed(*pbar), NormSpec.triple(*pbar)}
        if config.dims == 1:
            allowed.add(NormSpec.lp(pbar[0]))
        if config.space not in allowed:
            raise ConfigError("the game config must carry the strategy's space")
        super().__init__(config, strict)
        self.pbar = pbar
        self._levels = [0] * config.dims

    def clone(self) -> "MixedStrategy":
        return MixedStrategy(self.pbar, self.config, self.strict)

    def respond(self, k, eta, functionals, vectors, partition, rounds, config):
        self._check_config(config)
        self._reconcile(rounds)
        target = self._target(k)
        dims = config.dims
        R = config.depth_cap
        floors = []
        for axis in range(dims):
            floor = max(self._levels[axis], target[axis].level)
            for record in self._records:
                if record.target[axis].strictly_contains(target[axis]):
                    floor = max(floor, record.meta["levels"][axis] + 1)
            floors.append(floor)
        if any(f >= R for f in floors):
            raise DepthExhaustedError(
                f"round {k}: required axis levels {floors} exceed the depth cap"
            )

        inv = [1.0 / p for p in self.pbar]
        candidates = []
        for extra in range(0, R - max(floors)):
            levels = [f + extra for f in floors]
            if any(lv >= R for lv in levels):
                break
            axes_positions = []
            for axis in range(dims):
                idx = target[axis]
                stretch = 2 ** (levels[axis] - idx.level)
                start = (idx.position - 1) * stretch + 1
                axes_positions.append(
                    [
                        DyadicIndex.interval(levels[axis], start + t)
                        for t in range(stretch)
                    ]
                )
            keys = list(itertools.product(*axes_positions))
            lam_value = 1.0
            mu_value = 1.0
            for axis in range(dims):
                ratio = 2.0 ** -(levels[axis] - target[axis].level)
                lam_value *= ratio ** inv[axis]
                mu_value *= ratio ** (1.0 - inv[axis])
            lam = [lam_value] * len(keys)
            mu = [mu_value] * len(keys)
            side, kept, E, lam2, mu2 = self._adapt(keys, lam, mu, partition)
            if not E:
                continue
            margins = decay_margins(E, lam2, mu2, functionals, vectors, config.space)
            payload = (levels, keys, kept, side, E, lam2, mu2)
            candidates.append((max(margins), payload))
            if max(margins) < eta:
                break
        levels, keys, kept, side, E, lam2, mu2 = self._pick_candidate(
            candidates, eta, "grid"
        )
        self._levels = [max(a, b) for a, b in zip(self._levels, levels)]
        return self._finish(
            k, target, keys, kept, side, E, lam2, mu2, meta={"levels": tuple(levels)}
        )


def mixed_lp_strategy(
    pbar: Sequence[float], config: GameConfig, strict: bool = False
) -> MixedStrategy:
    return MixedStrategy(pbar, config, strict)


# ---------------------------------------------------------------------------
# Unconditional sums: routing, play, and the combined audit
# ---------------------------------------------------------------------------


class SumAdversary:
    """Adversary for sum games; constraints are per-part tuples."""

    name = "sum-adversary"

    def open_round(
        self, m: int, n_parts: int, eta: float
    ) -> tuple[float, list[tuple], list[tuple]]:
        raise NotImplementedError

    def choose_signs(self, m: int, move: ResponderMove) -> tuple[float, ...]:
        return (1.0,) * len(move.E)


class NullSumAdversary(SumAdversary):
    """No constraints; tolerances halve along the merged round order."""

    name = "null"

    def __init__(self, eta: float | None = None):
        self.eta = eta

    def open_round(self, m, n_parts, eta):
        schedule = _eta_halving(self.eta if self.eta is not None else eta)
        return schedule(m), [], []


@dataclass(frozen=True)
class SumTranscript:
    """Per-part transcripts of a merged game plus the routing that made it."""

    p: float
    transcripts: tuple[GameTranscript, ...]
    routing: tuple[tuple[int, int], ...]  # merged round -> (part, local round)

    @property
    def rounds(self) -> int:
        return len(self.routing)


class SumStrategy:
    """Routes merged rounds to component strategies round-robin.

    Component constraints are the coordinate projections of the sum
    constraints; each component plays its own game unchanged, and the
    merged transcript is the interleaving.  One instance plays one game.
    """

    name = "sum"

    def __init__(self, parts: Sequence[tuple[NormSpec, Strategy]], p: float):
        if not parts:
            raise InvalidArgumentError("at least one component required")
        if not 1.0 <= p < math.inf:
            raise InvalidArgumentError("the outer exponent must be finite and >= 1")
        self.parts = [(space, strategy) for space, strategy in parts]
        self.p = float(p)
        for space, strategy in self.parts:
            config = getattr(strategy, "config", None)
            if config is None:
                raise ConfigError("component strategies must carry their game config")
            if config.space != space:
                raise ConfigError("component space disagrees with its strategy")

    def clone(self) -> "SumStrategy":
        return SumStrategy(
            [(space, strategy.clone()) for space, strategy in self.parts], self.p
        )

    def play(
        self,
        rounds: int,
        adversary: SumAdversary | None = None,
        partitions: Sequence[Partition] | None = None,
    ) -> SumTranscript:
        adversary = adversary or NullSumAdversary()
        n = len(self.parts)
        configs = [strategy.config for _, strategy in self.parts]
        if partitions is None:
            partitions = [
                Partition("trivial" if config.partitioned else "none")
                for config in configs
            ]
        local_rounds: list[list[GameRound]] = [[] for _ in self.parts]
        universes = [set(config.universe()) for config in configs]
        routing = []
        for m in range(rounds):
            part = m % n
            k = len(local_rounds[part])
            config = configs[part]
            eta_m, functionals, vectors = adversary.open_round(m, n, config.eta)
            if not eta_m > 0:
                raise GameContractError(f"round {m}: tolerance must be positive")
            proj_f = [f[part] for f in functionals if f[part] is not None]
            proj_v = [v[part] for v in vectors if v[part] is not None]
            move = self.parts[part][1].respond(
                k, eta_m, proj_f, proj_v, partitions[part],
                tuple(local_rounds[part]), config,
            )
            _validate_move(k, move, partitions[part], universes[part], config)
            signs = tuple(float(s) for s in adversary.choose_signs(m, move))
            if len(signs) != len(move.E):
                raise GameContractError(f"round {m}: one sign per block index required")
            if any(abs(abs(s) - 1.0) > SIGN_TOLERANCE for s in signs):
                raise GameContractError(f"round {m}: signs must be unimodular")
            x, xstar = _derive_pair(move, signs, config)
            local_rounds[part].append(
                GameRound(
                    AdversaryMove(eta_m, tuple(proj_f), tuple(proj_v), signs),
                    move, x, xstar,
                )
            )
            routing.append((part, k))
        transcripts = tuple(
            GameTranscript(
                configs[i], partitions[i], tuple(local_rounds[i]),
                adversary.name, getattr(self.parts[i][1], "name", "strategy"),
            )
            for i in range(n)
        )
        return SumTranscript(self.p, transcripts, tuple(routing))


def sum_strategy(parts: Sequence[tuple[NormSpec, Strategy]], p: float) -> SumStrategy:
    return SumStrategy(parts, p)


def sum_dist_proxy(
    part: int,
    x: StepFunction | HaarCoefficients,
    functionals: Sequence[tuple],
    parts: Sequence[NormSpec],
    p: float,
) -> float:
    """Certified distance lower bound for a vector living in one component.

    The pairing against a sum functional only sees the matching coordinate,
    while the functional's size aggregates every coordinate, so this proxy
    never exceeds the component-level proxy.
    """
    q = math.inf if p == 1.0 else p / (p - 1.0)
    best = 0.0
    for f in functionals:
        norms = []
        for space, g in zip(parts, f):
            if g is None:
                continue
            norms.append(dual_probe_norm(g, space))
        if q == math.inf:
            scale = max(norms, default=0.0)
        else:
            scale = float(np.sum(np.array(norms) ** q) ** (1.0 / q)) if norms else 0.0
        if scale == 0.0:
            raise InvalidArgumentError("zero constraint functional")
        g = f[part]
        value = abs(pairing(x, g)) if g is not None else 0.0
        best = max(best, value / scale)
    return best


def check_sum_win(
    sum_transcript: SumTranscript, trials: int = 200, seed: int = 0
) -> dict:
    """Audit a merged game: combined equivalence ratios plus per-part checks.

    Combined norms aggregate component norms with the outer exponent; the
    dual side uses each component's dual norm when available and the sup
    norm otherwise (reported).  Weight windows and biorthogonality are
    checked per part; cross-part pairings vanish by construction.
    """
    p = sum_transcript.p
    parts = sum_transcript.transcripts
    routing = sum_transcript.routing
    if not routing:
        raise InvalidArgumentError("empty merged transcript")
    q = math.inf if p == 1.0 else p / (p - 1.0)

    piece_x, piece_ref, piece_xstar, piece_refstar = [], [], [], []
    spaces = []
    fallback = False
    for part_idx, local_k in routing:
        transcript = parts[part_idx]
        config = transcript.config
        resolution = (config.depth_cap,) * config.dims
        key = config.universe()[local_k]
        w = normalization_weights([key], config.space)[0]
        wstar = dual_normalization_weights([key], config.space)[0]
        ref = synthesize(
            HaarCoefficients(config.dims, {key: 1.0 / w}, config.convention), resolution
        )
        refstar = synthesize(
            HaarCoefficients(config.dims, {key: 1.0 / wstar}, config.convention),
            resolution,
        )
        piece_x.append((part_idx, synthesize(transcript.rounds[local_k].x, resolution)))
        piece_ref.append((part_idx, ref))
        piece_xstar.append(
            (part_idx, synthesize(transcript.rounds[local_k].xstar, resolution))
        )
        piece_refstar.append((part_idx, refstar))
        spaces.append(config.space)
        try:
            dual_norm(ref, config.space)
        except InvalidArgumentError:
            fallback = True

    def combined(pieces: list, coeffs: np.ndarray, evaluate) -> float:
        per_part: dict[int, np.ndarray] = {}
        for c, (part_idx, f) in zip(coeffs, pieces):
            if part_idx in per_part:
                per_part[part_idx] = per_part[part_idx] + c * f.values
            else:
                per_part[part_idx] = c * f.values
        values = [
            evaluate(part_idx, StepFunction(v)) for part_idx, v in per_part.items()
        ]
        arr = np.array(values)
        if q == math.inf and evaluate is dual_eval:
            return float(arr.max())
        exponent = p if evaluate is primal_eval else q
        if exponent == math.inf:
            return float(arr.max())
        return float(np.sum(arr**exponent) ** (1.0 / exponent))

    part_spaces = [t.config.space for t in parts]

    def primal_eval(part_idx: int, f: StepFunction) -> float:
        return norm_eval(f, part_spaces[part_idx])

    def dual_eval(part_idx: int, f: StepFunction) -> float:
        return dual_probe_norm(f, part_spaces[part_idx])

    n = len(routing)
    min_p = min_d = math.inf
    max_p = max_d = -math.inf
    for _, a in probe_vectors(n, trials, seed):
        den = combined(piece_ref, a, primal_eval)
        if den > 0.0:
            ratio = combined(piece_x, a, primal_eval) / den
            min_p, max_p = min(min_p, ratio), max(max_p, ratio)
        den = combined(piece_refstar, a, dual_eval)
        if den > 0.0:
            ratio = combined(piece_xstar, a, dual_eval) / den
            min_d, max_d = min(min_d, ratio), max(max_d, ratio)

    weight_ok = True
    biorth = 0.0
    for transcript in parts:
        if not transcript.rounds:
            continue
        config = transcript.config
        resolution = (config.depth_cap,) * config.dims
        xs = [synthesize(r.x, resolution) for r in transcript.rounds]
        xstars = [synthesize(r.xstar, resolution) for r in transcript.rounds]
        for k, game_round in enumerate(transcript.rounds):
            total = game_round.responder.weight_sum
            if not (1.0 - config.eta < total < 1.0 + config.eta):
                weight_ok = False
            for l in range(len(xs)):
                if l != k:
                    biorth = max(biorth, abs(pairing(xstars[k], xs[l])))

    window = math.sqrt(max(t.config.C + t.config.eta for t in parts))
    overall = (
        min_p >= 1.0 / window - 1e-9
        and max_p <= window + 1e-9
        and min_d >= 1.0 / window - 1e-9
        and max_d <= window + 1e-9
        and weight_ok
        and biorth <= 1e-12
    )
    return {
        "primal_ratio": (min_p, max_p),
        "dual_ratio": (min_d, max_d),
        "dual_norm_mode": "sup-surrogate" if fallback else "exact-dual",
        "weight_pass": weight_ok,
        "biorth_offdiag": biorth,
        "overall": overall,
    }
