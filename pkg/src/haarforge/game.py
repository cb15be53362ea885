"""The reproduction game engine: round protocol, transcripts, win audits.

One round: the adversary posts a tolerance and two finite constraint lists
(functionals the next vector must nearly annihilate, and vectors the next
functional must nearly annihilate); the responder answers with a block --
a side of the partition, an index set inside it, and coefficient pairs
whose products nearly sum to one; the adversary then fixes a sign per
index.  The engine derives the round's vector and functional from the
block and signs, validates every contract, and records everything.
"""

from __future__ import annotations

import hashlib
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dyadic import DyadicIndex, index_from_json, index_to_json, interval_index
from .errors import (
    ConfigError,
    DepthExhaustedError,
    GameContractError,
    InvalidArgumentError,
    StrategyFailedError,
)
from .norms import (
    NormSpec,
    RatioReport,
    dual_norm,
    norm_eval,
    pairing,
    probe_vectors,
)
from .operators import (
    IndexTuple,
    basis_key,
    dual_normalization_weights,
    haar_truncation,
    normalization_weights,
)
from .stepfn import HaarCoefficients, StepFunction, synthesize

SIGN_TOLERANCE = 1e-12


@dataclass(frozen=True)
class GameConfig:
    """Fixed data of one game: space, constants, caps, and conventions."""

    dims: int
    space: NormSpec
    C: float
    eta: float
    rounds: int
    depth_cap: int
    convention: str = "D"
    partitioned: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dims < 1:
            raise ConfigError("dims must be positive")
        if self.eta <= 0 or self.C < 1:
            raise ConfigError("need eta > 0 and C >= 1")
        if self.rounds < 1 or self.depth_cap < 1:
            raise ConfigError("rounds and depth_cap must be positive")
        if self.convention not in ("D", "D+"):
            raise ConfigError(f"unknown convention {self.convention!r}")
        if self.convention == "D+" and self.dims != 1:
            raise ConfigError("the D+ convention is one-parameter only")

    def universe(self) -> tuple[IndexTuple, ...]:
        return haar_truncation(self.dims, self.depth_cap, self.convention)

    def to_json(self) -> dict:
        return {
            "dims": self.dims,
            "space": self.space.to_json(),
            "C": self.C,
            "eta": self.eta,
            "rounds": self.rounds,
            "depth_cap": self.depth_cap,
            "convention": self.convention,
            "partitioned": self.partitioned,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(payload: dict) -> "GameConfig":
        return GameConfig(
            dims=int(payload["dims"]),
            space=NormSpec.from_json(payload["space"]),
            C=float(payload["C"]),
            eta=float(payload["eta"]),
            rounds=int(payload["rounds"]),
            depth_cap=int(payload["depth_cap"]),
            convention=str(payload.get("convention", "D")),
            partitioned=bool(payload.get("partitioned", True)),
            seed=int(payload.get("seed", 0)),
        )


@dataclass(frozen=True)
class Partition:
    """A two-sided labeling of the index universe, reproducible by name.

    trivial: everything on side 1.  parity: alternate along the linear
    order (the empty symbol on side 1).  level-parity: side by the parity
    of the total level (the empty symbol and [0,1) on side 1).  random: a
    seeded fair coin per index, derived from the index itself so the
    labeling is stable.  table: an explicit set of side-2 index tuples,
    everything else on side 1 (the sign split of a diagonal).
    """

    name: str
    seed: int | None = None
    side2: frozenset = frozenset()

    def __post_init__(self) -> None:
        if self.name not in (
            "none", "trivial", "parity", "level-parity", "random", "table",
        ):
            raise ConfigError(f"unknown partition {self.name!r}")
        if self.name == "random" and self.seed is None:
            raise ConfigError("a random partition needs a seed")
        keys = frozenset(
            (key,) if isinstance(key, DyadicIndex) else tuple(key)
            for key in self.side2
        )
        object.__setattr__(self, "side2", keys)

    def side(self, key: IndexTuple) -> int:
        if self.name in ("none", "trivial"):
            return 1
        if self.name == "table":
            return 2 if key in self.side2 else 1
        if self.name == "parity":
            if len(key) == 1 and key[0].is_empty:
                return 1
            if len(key) == 1:
                return 1 + interval_index(key[0]) % 2
            rank = basis_key(key)
            return 1 + int(rank[0]) % 2
        if self.name == "level-parity":
            total = sum(0 if idx.is_empty else idx.level for idx in key)
            return 1 + total % 2
        words = [self.seed or 0]
        for idx in key:
            words.extend((0, 0) if idx.is_empty else (idx.level, idx.position))
        return 1 + int(np.random.default_rng(words).integers(0, 2))

    def to_json(self) -> dict:
        payload: dict = {"name": self.name, "seed": self.seed}
        if self.name == "table":
            payload["side2"] = [
                [index_to_json(idx) for idx in key]
                for key in sorted(self.side2, key=basis_key)
            ]
        return payload

    @staticmethod
    def from_json(payload: dict) -> "Partition":
        side2 = frozenset(
            tuple(index_from_json(part) for part in key)
            for key in payload.get("side2", [])
        )
        return Partition(str(payload["name"]), payload.get("seed"), side2)


@dataclass(frozen=True)
class AdversaryMove:
    """One adversary turn: tolerance, both constraint lists, then signs."""

    eta: float
    W_functionals: tuple[StepFunction, ...]
    G_vectors: tuple[StepFunction, ...]
    signs: tuple[float, ...]


@dataclass(frozen=True)
class ResponderMove:
    """One responder turn: a side, an index block, and coefficient pairs."""

    side: int
    E: tuple[IndexTuple, ...]
    lam: tuple[float, ...]
    mu: tuple[float, ...]

    def __post_init__(self) -> None:
        E = tuple(
            (key,) if isinstance(key, DyadicIndex) else tuple(key) for key in self.E
        )
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        object.__setattr__(self, "mu", tuple(float(v) for v in self.mu))

    @property
    def weight_sum(self) -> float:
        return float(np.dot(self.lam, self.mu))


@dataclass(frozen=True)
class GameRound:
    adversary: AdversaryMove
    responder: ResponderMove
    x: HaarCoefficients
    xstar: HaarCoefficients


@dataclass(frozen=True)
class GameTranscript:
    config: GameConfig
    partition: Partition
    rounds: tuple[GameRound, ...]
    adversary_name: str = ""
    strategy_name: str = ""

    @property
    def xs(self) -> tuple[HaarCoefficients, ...]:
        return tuple(r.x for r in self.rounds)

    @property
    def xstars(self) -> tuple[HaarCoefficients, ...]:
        return tuple(r.xstar for r in self.rounds)

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "partition": self.partition.to_json(),
            "adversary": self.adversary_name,
            "strategy": self.strategy_name,
            "rounds": [
                {
                    "eta": r.adversary.eta,
                    "W": [_function_ref(g) for g in r.adversary.W_functionals],
                    "G": [_function_ref(g) for g in r.adversary.G_vectors],
                    "side": r.responder.side,
                    "E": [
                        [index_to_json(idx) for idx in key] for key in r.responder.E
                    ],
                    "lambda": list(r.responder.lam),
                    "mu": list(r.responder.mu),
                    "signs": list(r.adversary.signs),
                }
                for r in self.rounds
            ],
            "derived": {
                "xs": [x.to_json() for x in self.xs],
                "xstars": [x.to_json() for x in self.xstars],
            },
        }


def _function_ref(f: StepFunction, inline_cells: int = 512) -> dict:
    digest = hashlib.sha256()
    digest.update(repr(f.values.shape).encode())
    digest.update(f.values.tobytes())
    ref: dict = {
        "shape": list(f.values.shape),
        "sha256": digest.hexdigest(),
    }
    if f.values.size <= inline_cells:
        ref["values"] = [float(v) for v in f.values.ravel()]
    return ref


class Adversary(ABC):
    """Chooses the partition, per-round constraints, and per-round signs."""

    name = "adversary"

    def choose_partition(self, config: GameConfig) -> Partition:
        return Partition("trivial")

    @abstractmethod
    def open_round(
        self, k: int, rounds: tuple[GameRound, ...], config: GameConfig
    ) -> tuple[float, list[StepFunction], list[StepFunction]]:
        """Return (eta_k, annihilation functionals, annihilation vectors)."""

    def choose_signs(
        self,
        k: int,
        move: ResponderMove,
        rounds: tuple[GameRound, ...],
        config: GameConfig,
    ) -> tuple[float, ...]:
        return (1.0,) * len(move.E)


class Strategy(ABC):
    """Answers constraints with a block; sees all completed rounds."""

    name = "strategy"

    @abstractmethod
    def respond(
        self,
        k: int,
        eta: float,
        functionals: Sequence[StepFunction],
        vectors: Sequence[StepFunction],
        partition: Partition,
        rounds: tuple[GameRound, ...],
        config: GameConfig,
    ) -> ResponderMove:
        ...


def _eta_halving(eta: float) -> Callable[[int], float]:
    return lambda k: eta * 2.0 ** -(k + 1)


class NullAdversary(Adversary):
    """No constraints, positive tolerances, all-plus signs."""

    name = "null"

    def __init__(self, eta_schedule: Callable[[int], float] | None = None):
        self.eta_schedule = eta_schedule

    def open_round(self, k, rounds, config):
        schedule = self.eta_schedule or _eta_halving(config.eta)
        return schedule(k), [], []


class RandomFunctionalAdversary(Adversary):
    """Seeded random step-function constraints and random signs.

    The partition alternates sides along the linear order, so every level
    keeps half its indices available on each side.  With a finite
    ``level_band`` the noise is constant on cells finer than the band, so
    blocks below it annihilate every constraint exactly; unbanded noise
    carries mass at all levels and no block can make pairings small.
    """

    name = "random-functional"

    def __init__(
        self,
        seed: int = 0,
        count: int = 2,
        eta_schedule: Callable[[int], float] | None = None,
        partition_name: str = "parity",
        level_band: int | None = None,
    ):
        self.seed = seed
        self.count = count
        self.eta_schedule = eta_schedule
        self.partition_name = partition_name
        self.level_band = level_band

    def choose_partition(self, config: GameConfig) -> Partition:
        if self.partition_name == "random":
            return Partition("random", self.seed)
        return Partition(self.partition_name)

    def _noise(self, config: GameConfig, words: list) -> StepFunction:
        depth = config.depth_cap
        band = depth if self.level_band is None else min(self.level_band, depth)
        shape = tuple(2**band for _ in range(config.dims))
        values = np.random.default_rng(words).standard_normal(shape)
        for axis in range(config.dims):
            values = np.repeat(values, 2 ** (depth - band), axis=axis)
        return StepFunction(values)

    def open_round(self, k, rounds, config):
        schedule = self.eta_schedule or _eta_halving(config.eta)
        functionals = [
            self._noise(config, [self.seed, k, j]) for j in range(self.count)
        ]
        vectors = [
            self._noise(config, [self.seed, k, self.count + j])
            for j in range(self.count)
        ]
        return schedule(k), functionals, vectors

    def choose_signs(self, k, move, rounds, config):
        rng = np.random.default_rng([self.seed, 777, k])
        return tuple(float(s) for s in rng.choice([-1.0, 1.0], size=len(move.E)))


class HistoryAdversary(Adversary):
    """Constraints spanned by everything produced so far, and its images.

    With an operator wired in, annihilating the history forces exact
    biorthogonality and kills every off-diagonal matrix entry; the sign
    chooser (if any) is what pushes the diagonal up.
    """

    name = "history"

    def __init__(
        self,
        operator=None,
        sign_chooser: Callable[..., tuple[float, ...]] | None = None,
        eta_schedule: Callable[[int], float] | None = None,
        partition: Partition | None = None,
    ):
        self.operator = operator
        self.sign_chooser = sign_chooser
        self.eta_schedule = eta_schedule
        self.partition = partition or Partition("trivial")

    def choose_partition(self, config: GameConfig) -> Partition:
        return self.partition

    def open_round(self, k, rounds, config):
        from .operators import apply as op_apply

        schedule = self.eta_schedule or _eta_halving(config.eta)
        resolution = (config.depth_cap,) * config.dims
        functionals: list[StepFunction] = []
        vectors: list[StepFunction] = []
        for done in rounds:
            functionals.append(synthesize(done.xstar, resolution))
            vectors.append(synthesize(done.x, resolution))
            if self.operator is not None:
                functionals.append(
                    synthesize(op_apply(self.operator.adjoint(), done.xstar), resolution)
                )
                vectors.append(synthesize(op_apply(self.operator, done.x), resolution))
        return schedule(k), functionals, vectors

    def choose_signs(self, k, move, rounds, config):
        if self.sign_chooser is None:
            return (1.0,) * len(move.E)
        return self.sign_chooser(k, move, rounds, config)


def _derive_pair(
    move: ResponderMove, signs: Sequence[float], config: GameConfig
) -> tuple[HaarCoefficients, HaarCoefficients]:
    weights = normalization_weights(move.E, config.space)
    dual_weights = dual_normalization_weights(move.E, config.space)
    x_entries = {
        key: float(sign * lam / w)
        for key, sign, lam, w in zip(move.E, signs, move.lam, weights)
    }
    xstar_entries = {
        key: float(sign * mu / w)
        for key, sign, mu, w in zip(move.E, signs, move.mu, dual_weights)
    }
    return (
        HaarCoefficients(config.dims, x_entries, config.convention),
        HaarCoefficients(config.dims, xstar_entries, config.convention),
    )


def run_game(adversary: Adversary, strategy: Strategy, config: GameConfig) -> GameTranscript:
    """Play the configured number of rounds and return the full transcript.

    Move validation is strict: any violated contract aborts with an error
    naming the round.  Deterministic whenever both parties are seeded.
    """
    partition = (
        adversary.choose_partition(config) if config.partitioned else Partition("none")
    )
    universe = set(config.universe())
    rounds: list[GameRound] = []
    for k in range(config.rounds):
        eta_k, functionals, vectors = adversary.open_round(k, tuple(rounds), config)
        if not eta_k > 0:
            raise GameContractError(f"round {k}: tolerance must be positive")
        try:
            move = strategy.respond(
                k, eta_k, functionals, vectors, partition, tuple(rounds), config
            )
        except DepthExhaustedError as exc:
            raise StrategyFailedError(
                f"round {k}: the strategy exhausted the depth budget: {exc}"
            ) from exc
        _validate_move(k, move, partition, universe, config)
        signs = tuple(
            float(s)
            for s in adversary.choose_signs(k, move, tuple(rounds), config)
        )
        if len(signs) != len(move.E):
            raise GameContractError(f"round {k}: one sign per block index required")
        if any(abs(abs(s) - 1.0) > SIGN_TOLERANCE for s in signs):
            raise GameContractError(f"round {k}: signs must be unimodular")
        x, xstar = _derive_pair(move, signs, config)
        rounds.append(
            GameRound(AdversaryMove(eta_k, tuple(functionals), tuple(vectors), signs), move, x, xstar)
        )
    return GameTranscript(
        config, partition, tuple(rounds), adversary.name, strategy.name
    )


def _validate_move(
    k: int,
    move: ResponderMove,
    partition: Partition,
    universe: set,
    config: GameConfig,
) -> None:
    if move.side not in (1, 2):
        raise GameContractError(f"round {k}: side must be 1 or 2")
    if not config.partitioned and move.side != 1:
        raise GameContractError(f"round {k}: unpartitioned play stays on side 1")
    if not move.E:
        raise GameContractError(f"round {k}: empty block")
    if len(set(move.E)) != len(move.E):
        raise GameContractError(f"round {k}: repeated block index")
    if len(move.lam) != len(move.E) or len(move.mu) != len(move.E):
        raise GameContractError(f"round {k}: coefficient arity mismatch")
    if any(v < 0 for v in move.lam) or any(v < 0 for v in move.mu):
        raise GameContractError(f"round {k}: coefficients must be nonnegative")
    for key in move.E:
        if key not in universe:
            raise GameContractError(
                f"round {k}: block index {key} outside the depth budget"
            )
        if partition.side(key) != move.side:
            raise GameContractError(
                f"round {k}: block index {key} is not on side {move.side}"
            )
    total = move.weight_sum
    if not (1.0 - config.eta < total < 1.0 + config.eta):
        raise GameContractError(
            f"round {k}: weight sum {total} outside the unit window"
        )


def dist_proxy(
    x: HaarCoefficients | StepFunction,
    functionals: Sequence[StepFunction],
    spec: NormSpec,
) -> float:
    """Certified lower bound for the distance to the joint kernel.

    For any w killed by every functional, |<x, g>| = |<x - w, g>| is at
    most ||x - w|| times the functional norm, so the largest normalized
    pairing never exceeds the true distance.
    """
    best = 0.0
    for g in functionals:
        scale = dual_norm(g, spec)
        if scale == 0.0:
            raise InvalidArgumentError("zero functional in distance proxy")
        best = max(best, abs(pairing(x, g)) / scale)
    return best


@dataclass(frozen=True)
class WinReport:
    """Audit of the four win conditions, with per-round detail."""

    window: float
    equiv_primal: RatioReport
    equiv_dual: RatioReport
    equiv_primal_pass: bool
    equiv_dual_pass: bool
    dist_rounds: tuple[dict, ...]
    dist_pass: bool
    weight_rounds: tuple[float, ...]
    weight_pass: bool
    biorth_offdiag: float
    biorth_pass: bool
    rounds: int
    depth_cap: int
    note: str = field(
        default="probe verdicts refute equivalence; they never certify it"
    )

    @property
    def overall(self) -> bool:
        return (
            self.equiv_primal_pass
            and self.equiv_dual_pass
            and self.dist_pass
            and self.weight_pass
            and self.biorth_pass
        )

    def to_json(self) -> dict:
        return {
            "window": self.window,
            "equiv_primal": self.equiv_primal.to_json(),
            "equiv_dual": self.equiv_dual.to_json(),
            "equiv_primal_pass": self.equiv_primal_pass,
            "equiv_dual_pass": self.equiv_dual_pass,
            "dist_rounds": list(self.dist_rounds),
            "dist_pass": self.dist_pass,
            "weight_rounds": list(self.weight_rounds),
            "weight_pass": self.weight_pass,
            "biorth_offdiag": self.biorth_offdiag,
            "biorth_pass": self.biorth_pass,
            "overall": self.overall,
            "rounds": self.rounds,
            "depth_cap": self.depth_cap,
            "note": self.note,
        }


def _ratio_probe(
    numerators: Sequence[StepFunction],
    denominators: Sequence[StepFunction],
    evaluate: Callable[[StepFunction], float],
    trials: int,
    seed: int,
) -> RatioReport:
    stack_num = np.stack([f.values.ravel() for f in numerators])
    stack_den = np.stack([f.values.ravel() for f in denominators])
    shape = numerators[0].values.shape
    min_ratio, max_ratio = math.inf, -math.inf
    wit_min: tuple[float, ...] = ()
    wit_max: tuple[float, ...] = ()
    degenerate = 0
    probes = probe_vectors(len(numerators), trials, seed)
    for _, a in probes:
        den = evaluate(StepFunction((a @ stack_den).reshape(shape)))
        if den == 0.0:
            degenerate += 1
            continue
        num = evaluate(StepFunction((a @ stack_num).reshape(shape)))
        ratio = num / den
        if ratio < min_ratio:
            min_ratio, wit_min = ratio, tuple(float(c) for c in a)
        if ratio > max_ratio:
            max_ratio, wit_max = ratio, tuple(float(c) for c in a)
    if not wit_min and not wit_max:
        raise InvalidArgumentError("every probe was degenerate")
    return RatioReport(min_ratio, max_ratio, len(probes), degenerate, wit_min, wit_max)


def check_win(
    transcript: GameTranscript, trials: int = 200, seed: int = 0
) -> WinReport:
    """Audit equivalence, distances, weight windows, and biorthogonality."""
    config = transcript.config
    if not transcript.rounds:
        raise InvalidArgumentError("empty transcript")
    window = config.C + config.eta
    root = math.sqrt(window)
    resolution = (config.depth_cap,) * config.dims
    basis = config.universe()[: len(transcript.rounds)]
    weights = normalization_weights(basis, config.space)
    dual_weights = dual_normalization_weights(basis, config.space)
    reference = [
        synthesize(HaarCoefficients(config.dims, {key: 1.0 / w}, config.convention), resolution)
        for key, w in zip(basis, weights)
    ]
    reference_dual = [
        synthesize(HaarCoefficients(config.dims, {key: 1.0 / w}, config.convention), resolution)
        for key, w in zip(basis, dual_weights)
    ]
    xs = [synthesize(x, resolution) for x in transcript.xs]
    xstars = [synthesize(x, resolution) for x in transcript.xstars]

    equiv_primal = _ratio_probe(
        xs, reference, lambda f: norm_eval(f, config.space), trials, seed
    )
    equiv_dual = _ratio_probe(
        xstars, reference_dual, lambda f: dual_norm(f, config.space), trials, seed + 1
    )
    primal_pass = (
        equiv_primal.min_ratio >= 1.0 / root - 1e-9
        and equiv_primal.max_ratio <= root + 1e-9
    )
    dual_pass = (
        equiv_dual.min_ratio >= 1.0 / root - 1e-9
        and equiv_dual.max_ratio <= root + 1e-9
    )

    dist_rounds = []
    dist_ok = True
    for k, game_round in enumerate(transcript.rounds):
        eta_k = game_round.adversary.eta
        proxy_x = dist_proxy(xs[k], game_round.adversary.W_functionals, config.space)
        proxy_star = max(
            (
                abs(pairing(xstars[k], v)) / norm_eval(v, config.space)
                for v in game_round.adversary.G_vectors
                if norm_eval(v, config.space) > 0.0
            ),
            default=0.0,
        )
        ok = proxy_x < eta_k and proxy_star < eta_k
        dist_ok = dist_ok and ok
        dist_rounds.append(
            {
                "round": k,
                "eta": eta_k,
                "proxy_primal": proxy_x,
                "proxy_dual": proxy_star,
                "pass": ok,
            }
        )

    weight_rounds = tuple(r.responder.weight_sum for r in transcript.rounds)
    weight_ok = all(
        1.0 - config.eta < value < 1.0 + config.eta for value in weight_rounds
    )

    gram = np.array([[pairing(xstars[k], xs[l]) for l in range(len(xs))] for k in range(len(xs))])
    off = gram - np.diag(np.diagonal(gram))
    biorth_offdiag = float(np.max(np.abs(off))) if off.size else 0.0
    diag_matches = np.allclose(np.diagonal(gram), weight_rounds, atol=1e-10)
    biorth_ok = biorth_offdiag <= 1e-12 and diag_matches

    return WinReport(
        window=window,
        equiv_primal=equiv_primal,
        equiv_dual=equiv_dual,
        equiv_primal_pass=primal_pass,
        equiv_dual_pass=dual_pass,
        dist_rounds=tuple(dist_rounds),
        dist_pass=dist_ok,
        weight_rounds=weight_rounds,
        weight_pass=weight_ok,
        biorth_offdiag=biorth_offdiag,
        biorth_pass=biorth_ok,
        rounds=config.rounds,
        depth_cap=config.depth_cap,
    )
