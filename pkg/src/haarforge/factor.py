"""Factorization of the identity through large-diagonal operators.

The pipeline plays the constraint game to extract a block system, assembles
the transfer operators, factors the resulting diagonal (one route per basis
geometry), corrects the small off-diagonal defect by a Neumann series, and
emits a certificate whose every claim is a measured quantity.  A separate
entry point lifts one-parameter certificates to the bi-parameter grid
through the first-axis compression.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .dyadic import EMPTY, DyadicIndex, index_to_json
from .errors import (
    ConfigError,
    DepthExhaustedError,
    GameContractError,
    HaarforgeError,
    InvalidArgumentError,
    NeumannCorrectionError,
    StabilizationError,
)
from .game import (
    Adversary,
    GameConfig,
    GameTranscript,
    Partition,
    ResponderMove,
    Strategy,
    run_game,
)
from .norms import NormSpec, OperatorNormReport, operator_norm
from .operators import (
    IndexTuple,
    MultiplierEntries,
    OperatorMatrix,
    apply,
    basis_key,
    chain_variation,
    dual_normalization_weights,
    haar_truncation,
    normalization_weights,
)
from .stepfn import HaarCoefficients, synthesize

ETA_FLOOR = 2.0**-1020
BIORTH_TOLERANCE = 1e-8
UNCONDITIONAL_KINDS = ("hp", "hphq", "triple")


# ---------------------------------------------------------------------------
# Rectangular coordinate maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BasisMap:
    """A linear map between two truncations, in normalized coordinates.

    Entry (i, j) is the i-th range coordinate of the image of the j-th
    domain basis vector.  The square same-basis case is an OperatorMatrix;
    the diagonal factorization of the constant-including system genuinely
    needs rectangular maps, because the identity it factors lives on a
    coarser truncation than the operator.
    """

    domain_basis: tuple[IndexTuple, ...]
    range_basis: tuple[IndexTuple, ...]
    entries: np.ndarray
    domain_space: NormSpec
    range_space: NormSpec

    def __post_init__(self) -> None:
        for name in ("domain_basis", "range_basis"):
            basis = tuple(
                (key,) if isinstance(key, DyadicIndex) else tuple(key)
                for key in getattr(self, name)
            )
            if not basis:
                raise InvalidArgumentError("empty truncation")
            object.__setattr__(self, name, basis)
        entries = np.array(self.entries, dtype=float)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        shape = (len(self.range_basis), len(self.domain_basis))
        if entries.shape != shape:
            raise InvalidArgumentError(
                f"entries shape {entries.shape} does not match bases {shape}"
            )

    @property
    def is_square(self) -> bool:
        return self.domain_basis == self.range_basis

    def compose(self, inner: "BasisMap") -> "BasisMap":
        """The map self after ``inner``."""
        if inner.range_basis != self.domain_basis:
            raise InvalidArgumentError("composition needs matching truncations")
        return BasisMap(
            inner.domain_basis,
            self.range_basis,
            self.entries @ inner.entries,
            inner.domain_space,
            self.range_space,
        )

    def as_operator(self) -> OperatorMatrix:
        if not self.is_square:
            raise InvalidArgumentError("only square maps have an operator form")
        return OperatorMatrix(self.domain_basis, self.entries, self.domain_space)

    @staticmethod
    def from_operator(T: OperatorMatrix) -> "BasisMap":
        return BasisMap(T.basis, T.basis, T.entries, T.space, T.space)

    @staticmethod
    def identity(basis: Sequence[IndexTuple], space: NormSpec) -> "BasisMap":
        basis = tuple(basis)
        return BasisMap(basis, basis, np.eye(len(basis)), space, space)

    def _side(self, which: str) -> OperatorMatrix:
        cached = self.__dict__.get(which)
        if cached is None:
            basis = self.domain_basis if which == "_dom" else self.range_basis
            space = self.domain_space if which == "_dom" else self.range_space
            cached = OperatorMatrix.identity(basis, space)
            self.__dict__[which] = cached
        return cached

    def realization(self) -> np.ndarray:
        """Grid values of images of grid cells: range cells by domain cells."""
        cached = self.__dict__.get("_realization")
        if cached is None:
            synth = self._side("_rng").synthesis_matrix()
            dual = self._side("_dom").dual_matrix()
            cached = synth @ self.entries @ dual
            cached.setflags(write=False)
            self.__dict__["_realization"] = cached
        return cached

    def to_json(self) -> dict:
        return {
            "domain": [[index_to_json(i) for i in key] for key in self.domain_basis],
            "range": [[index_to_json(i) for i in key] for key in self.range_basis],
            "entries": [float(v) for v in self.entries.ravel()],
            "domain_space": self.domain_space.to_json(),
            "range_space": self.range_space.to_json(),
        }


def map_norm(m: BasisMap) -> OperatorNormReport:
    """Operator norm bounds of a coordinate map between truncations.

    Exact at the endpoints and at exponent two: over the grid realization
    the extreme points of the unit ball of L^1 are scaled cell indicators,
    the sup norm dualizes to row masses, and the L^2 case is a weighted
    singular value.  Square maps in other norms fall back to two-sided
    estimate bounds.
    """
    spec = m.domain_space
    if spec != m.range_space:
        raise InvalidArgumentError("map norms need one ambient norm on both sides")
    if spec.kind == "lp" and spec.exponents[0] in (1.0, 2.0):
        R = m.realization()
        scale = R.shape[1] / R.shape[0]
        if spec.exponents[0] == 1.0:
            value = float(np.max(np.abs(R).sum(axis=0))) * scale
            method = "cell-extreme"
        else:
            value = float(np.linalg.norm(R, 2)) * math.sqrt(scale)
            method = "spectral"
        return OperatorNormReport(value, value, "exact", method, method)
    if spec.kind == "sup":
        R = m.realization()
        value = float(np.max(np.abs(R).sum(axis=1)))
        return OperatorNormReport(value, value, "exact", "cell-extreme", "cell-extreme")
    if (
        spec.kind in UNCONDITIONAL_KINDS
        and m.is_square
        and not np.any(m.entries - np.diag(np.diag(m.entries)))
    ):
        value = float(np.max(np.abs(np.diag(m.entries))))
        return OperatorNormReport(
            value, value, "exact", "diagonal-extreme", "diagonal-extreme"
        )
    if m.is_square and spec.kind == "lp":
        return operator_norm(m.as_operator(), spec, mode="estimate")
    raise InvalidArgumentError(
        f"no norm evaluation for {'square' if m.is_square else 'rectangular'} "
        f"maps in {spec.kind!r}"
    )


def _norm_product(a: OperatorNormReport, b: OperatorNormReport) -> OperatorNormReport:
    return OperatorNormReport(
        a.lower * b.lower,
        a.upper * b.upper,
        "product",
        f"{a.lower_method}*{b.lower_method}",
        f"{a.upper_method}*{b.upper_method}",
    )


# ---------------------------------------------------------------------------
# Derandomized sign selection
# ---------------------------------------------------------------------------


def sign_select(
    E: Sequence[IndexTuple | DyadicIndex],
    lam: Sequence[float],
    mu: Sequence[float],
    T: OperatorMatrix,
    eta: float,
    delta: float,
) -> tuple[float, ...]:
    """Signs pushing the bilinear form past the diagonal sum.

    Fixes one sign at a time in the linear order of the block, keeping the
    conditional mean of F(eps) = sum_ij eps_i eps_j mu_i lam_j <e*_i, T e_j>
    on the profitable side; at the root the conditional mean is exactly the
    diagonal sum, so |F| of the output never falls below |sum lam mu diag|.
    """
    keys = tuple(
        (key,) if isinstance(key, DyadicIndex) else tuple(key) for key in E
    )
    if len(keys) != len(lam) or len(keys) != len(mu):
        raise InvalidArgumentError("one weight pair per block index required")
    order = {key: k for k, key in enumerate(T.basis)}
    try:
        pos = [order[key] for key in keys]
    except KeyError as exc:
        raise InvalidArgumentError(f"block index outside the truncation: {exc}")
    lam_v = np.asarray(lam, dtype=float)
    mu_v = np.asarray(mu, dtype=float)
    total = float(lam_v @ mu_v)
    if not (1.0 - eta < total < 1.0 + eta):
        raise InvalidArgumentError(f"weight sum {total} outside the unit window")
    diag = T.entries[pos, pos]
    if float(np.min(np.abs(diag))) < delta:
        raise InvalidArgumentError("a diagonal entry falls below delta on the block")
    if float(np.max(diag)) > 0 > float(np.min(diag)):
        raise InvalidArgumentError("mixed diagonal signs on the block")
    form = np.outer(mu_v, lam_v) * T.entries[np.ix_(pos, pos)]
    target = float(np.trace(form))
    lead = 1.0 if target >= 0 else -1.0
    symmetric = form + form.T
    signs = np.zeros(len(keys))
    for t in sorted(range(len(keys)), key=lambda i: basis_key(keys[i])):
        coupling = float(symmetric[t] @ signs)
        signs[t] = lead if coupling >= 0 else -lead
    value = float(signs @ form @ signs)
    if lead * value < lead * target - 1e-9:
        raise InvalidArgumentError("sign selection lost the conditional mean")
    return tuple(float(s) for s in signs)


# ---------------------------------------------------------------------------
# Transfer operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransferOperators:
    """The game-to-basis change maps and the diagonal they produce.

    a sends the k-th basis vector to the k-th round's block vector; b pairs
    with the block functionals and returns to basis coordinates, so b
    composed with a is the identity on the played rounds and the diagonal
    entries are the block pairings through the operator.  The operator-norm
    distance from b T a to its diagonal is at most twice the basis constant
    times offdiag_sum.
    """

    a: OperatorMatrix
    b: OperatorMatrix
    diagonal: MultiplierEntries
    offdiag_sum: float


def _offdiag_mass(block: np.ndarray) -> float:
    masked = np.abs(block)
    np.fill_diagonal(masked, 0.0)
    return float(masked.sum())


def assemble_transfer(
    transcript: GameTranscript, T: OperatorMatrix
) -> TransferOperators:
    """Build the block transfer maps of a transcript against an operator."""
    basis = T.basis
    order = {key: k for k, key in enumerate(basis)}
    n = len(basis)
    played = len(transcript.rounds)
    if played > n:
        raise InvalidArgumentError("more rounds than basis vectors")
    weights = normalization_weights(basis, T.space)
    volumes = np.array(
        [
            float(np.prod([float(i.measure) if not i.is_empty else 1.0 for i in key]))
            for key in basis
        ]
    )
    A = np.zeros((n, n))
    B = np.zeros((n, n))
    for m, x in enumerate(transcript.xs):
        for key, raw in x.entries.items():
            if key not in order:
                raise InvalidArgumentError(
                    f"round {m} uses {key} outside the truncation"
                )
            k = order[key]
            A[k, m] = raw * weights[k]
    for m, xstar in enumerate(transcript.xstars):
        for key, raw in xstar.entries.items():
            if key not in order:
                raise InvalidArgumentError(
                    f"round {m} pairs with {key} outside the truncation"
                )
            k = order[key]
            B[m, k] = raw * volumes[k] / weights[k]
    gram = B[:played] @ A[:, :played]
    defect = float(np.max(np.abs(gram - np.eye(played))))
    if defect >= BIORTH_TOLERANCE:
        raise GameContractError(
            f"corrupt transcript: biorthogonality defect {defect:.3e}"
        )
    targets = transcript.config.universe()
    product = B @ T.entries @ A
    block = product[:played, :played]
    diagonal = MultiplierEntries(
        transcript.config.dims,
        {targets[m]: float(block[m, m]) for m in range(played)},
    )
    offdiag = _offdiag_mass(block)
    return TransferOperators(
        OperatorMatrix(basis, A, T.space),
        OperatorMatrix(basis, B, T.space),
        diagonal,
        offdiag,
    )


# ---------------------------------------------------------------------------
# Diagonal factorization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NeumannReport:
    """Invertibility evidence: defect, series bound, and the measured inverse."""

    defect: OperatorNormReport
    series_bound: float
    inverse: OperatorNormReport

    def to_json(self) -> dict:
        return {
            "defect": self.defect.to_json(),
            "series_bound": self.series_bound,
            "inverse": self.inverse.to_json(),
        }


def neumann_correct(
    Q: BasisMap | OperatorMatrix, pre_B: BasisMap | OperatorMatrix
) -> tuple[BasisMap, NeumannReport]:
    """Absorb an invertible defect into the left factor by a direct solve."""
    q_map = BasisMap.from_operator(Q) if isinstance(Q, OperatorMatrix) else Q
    b_map = BasisMap.from_operator(pre_B) if isinstance(pre_B, OperatorMatrix) else pre_B
    if not q_map.is_square:
        raise InvalidArgumentError("the defect operator must be square")
    if b_map.range_basis != q_map.domain_basis:
        raise InvalidArgumentError("the left factor must land in the defect domain")
    size = len(q_map.domain_basis)
    deviation = BasisMap(
        q_map.domain_basis,
        q_map.domain_basis,
        np.eye(size) - q_map.entries,
        q_map.domain_space,
        q_map.range_space,
    )
    defect = map_norm(deviation)
    if defect.upper >= 1.0:
        raise NeumannCorrectionError(
            f"the correction series needs defect below one, measured {defect.upper:.4f}"
        )
    corrected = BasisMap(
        b_map.domain_basis,
        b_map.range_basis,
        np.linalg.solve(q_map.entries, b_map.entries),
        b_map.domain_space,
        b_map.range_space,
    )
    inverse = BasisMap(
        q_map.domain_basis,
        q_map.domain_basis,
        np.linalg.inv(q_map.entries),
        q_map.domain_space,
        q_map.range_space,
    )
    report = NeumannReport(defect, 1.0 / (1.0 - defect.upper), map_norm(inverse))
    return corrected, report


@dataclass(frozen=True)
class DiagonalFactor:
    """One factorization of the identity through a diagonal."""

    a_hat: BasisMap
    b_hat: BasisMap
    k_achieved: OperatorNormReport
    route: str
    identity_dim: int
    root: IndexTuple | None = None
    stabilized_value: float | None = None
    neumann: NeumannReport | None = None


def _check_floor(diagonal: MultiplierEntries, delta: float) -> np.ndarray:
    values = np.array([diagonal.entries[key] for key in sorted(diagonal.entries, key=basis_key)])
    low = float(np.min(np.abs(values)))
    if low < delta:
        raise InvalidArgumentError(
            f"a diagonal entry has modulus {low:.6f}, below delta {delta}"
        )
    return values


def diag_factor_unconditional(
    diagonal: MultiplierEntries, delta: float, space: NormSpec
) -> DiagonalFactor:
    """Invert a diagonal entrywise where coordinate moduli control the norm."""
    exact = space.kind in UNCONDITIONAL_KINDS or (
        space.kind == "lp" and space.exponents[0] == 2.0
    )
    admissible = exact or (
        space.kind == "lp" and 1.0 < space.exponents[0] < math.inf
    )
    if not admissible:
        raise InvalidArgumentError(
            f"no unconditional diagonal factorization in {space.kind!r}"
        )
    _check_floor(diagonal, delta)
    basis = tuple(sorted(diagonal.entries, key=basis_key))
    inverse = np.array([1.0 / diagonal.entries[key] for key in basis])
    a_hat = BasisMap.identity(basis, space)
    b_hat = BasisMap(basis, basis, np.diag(inverse), space, space)
    peak = float(np.max(np.abs(inverse)))
    if exact:
        k_achieved = OperatorNormReport(
            peak, peak, "exact", "diagonal-extreme", "diagonal-extreme"
        )
    else:
        k_achieved = map_norm(b_hat)
    return DiagonalFactor(a_hat, b_hat, k_achieved, "unconditional", len(basis))


def l1_stabilize(c: MultiplierEntries, eps: float) -> DyadicIndex:
    """Shallowest root whose subtree keeps headed chain variation within eps/4.

    Small variation over chains entering at the root bounds both the chain
    seminorm and the entry deviation of the recentered symbol, and the
    sandwich inequality turns that into an operator bound of eps on the
    subtree span.  Leaf roots have no chains at all, so the search always
    succeeds within the symbol's depth; ties break by interval order.
    """
    if c.dims != 1:
        raise InvalidArgumentError("stabilization is one-parameter only")
    if eps <= 0:
        raise InvalidArgumentError("eps must be positive")
    support = {key[0] for key in c.entries}
    levels = sorted(idx.level for idx in support if not idx.is_empty)
    if not levels:
        raise StabilizationError("the symbol has no intervals to stabilize on")
    depth = levels[-1] + 1
    expected = 2 ** (depth) - 1
    if len([i for i in support if not i.is_empty]) != expected:
        raise StabilizationError("the symbol must cover a full truncation")
    for level in range(depth):
        for position in range(1, 2**level + 1):
            root = DyadicIndex.interval(level, position)
            if chain_variation(c, root=root, headed=True) <= eps / 4.0:
                return root
    raise StabilizationError("no stable subtree within the depth")


def _affine_child(root: DyadicIndex, idx: DyadicIndex, mirror: bool) -> DyadicIndex:
    """Image of an interval under the squeeze onto the root's chosen half."""
    level = root.level + 1 + idx.level
    inf = root.inf + idx.inf * root.measure / 2
    if mirror:
        inf += root.measure / 2
    position = int(inf * 2**level) + 1
    return DyadicIndex.interval(level, position)


def antisymmetric_embedding(root: DyadicIndex, depth: int) -> BasisMap:
    """Isometry of the coarse system onto antisymmetric functions under root.

    The constant maps to the root's Haar function; every interval squeezes
    affinely into the root's left half and extends by its negated mirror
    image, which halves each coefficient across the two copies and keeps
    the integral of the modulus unchanged.
    """
    fine = haar_truncation(1, depth, "D+")
    room = depth - root.level - 1
    if room < 1:
        raise DepthExhaustedError(
            f"a level-{root.level} root leaves no room below depth {depth}"
        )
    coarse = haar_truncation(1, room, "D+")
    order = {key: k for k, key in enumerate(fine)}
    entries = np.zeros((len(fine), len(coarse)))
    for j, (idx,) in enumerate(coarse):
        if idx.is_empty:
            entries[order[(root,)], j] = 1.0
            continue
        left = _affine_child(root, idx, mirror=False)
        right = _affine_child(root, idx, mirror=True)
        entries[order[(left,)], j] = 0.5
        entries[order[(right,)], j] = -0.5
    space = NormSpec.lp(1.0)
    return BasisMap(coarse, fine, entries, space, space)


def antisymmetric_projection(root: DyadicIndex, depth: int) -> BasisMap:
    """Norm-one projection onto antisymmetric functions under the root.

    Averages a function against its negated half-shift inside the root and
    kills everything whose restriction there is symmetric, in particular
    all coarser Haar functions, which are constant on the root.
    """
    fine = haar_truncation(1, depth, "D+")
    order = {key: k for k, key in enumerate(fine)}
    entries = np.zeros((len(fine), len(fine)))
    half = root.measure / 2
    for j, (idx,) in enumerate(fine):
        if idx.is_empty or not (idx == root or root.strictly_contains(idx)):
            continue
        if idx == root:
            entries[j, j] = 1.0
            continue
        if idx.inf < root.inf + half:
            partner = DyadicIndex.interval(
                idx.level, int((idx.inf + half) * 2**idx.level) + 1
            )
            entries[j, j] = 0.5
            entries[order[(partner,)], j] = -0.5
        else:
            partner = DyadicIndex.interval(
                idx.level, int((idx.inf - half) * 2**idx.level) + 1
            )
            entries[j, j] = 0.5
            entries[order[(partner,)], j] = -0.5
    space = NormSpec.lp(1.0)
    return BasisMap(fine, fine, entries, space, space)


def diag_factor_l1(
    diagonal: MultiplierEntries, delta: float, eps: float
) -> DiagonalFactor:
    """Factor the identity through a diagonal on the constant-including system.

    Stabilizes the symbol on a subtree, embeds a coarse copy of the whole
    system antisymmetrically under the stabilized root, inverts with the
    norm-one projection scaled by the root entry, and absorbs the residual
    variation by a Neumann correction, so the achieved constant stays
    within (1 + eps) of the reciprocal entry.
    """
    values = _check_floor(diagonal, delta)
    if (EMPTY,) not in diagonal.entries:
        raise InvalidArgumentError(
            "the L1 route needs the constant-including truncation"
        )
    eps0 = delta * eps / (1.0 + eps)
    root = l1_stabilize(diagonal, eps0)
    depth = max(key[0].level for key in diagonal.entries if not key[0].is_empty) + 1
    a_hat = antisymmetric_embedding(root, depth)
    fine = a_hat.range_basis
    if len(fine) != len(values):
        raise InvalidArgumentError("the symbol must cover a full truncation")
    projection = antisymmetric_projection(root, depth)
    pivot = diagonal.entries[(root,)]
    unfold = np.zeros((len(a_hat.domain_basis), len(fine)))
    order = {key: k for k, key in enumerate(fine)}
    for j, (idx,) in enumerate(a_hat.domain_basis):
        if idx.is_empty:
            unfold[j, order[(root,)]] = 1.0
            continue
        left = _affine_child(root, idx, mirror=False)
        right = _affine_child(root, idx, mirror=True)
        unfold[j, order[(left,)]] = 1.0
        unfold[j, order[(right,)]] = -1.0
    space = NormSpec.lp(1.0)
    b_pre = BasisMap(
        fine,
        a_hat.domain_basis,
        (unfold @ projection.entries) / pivot,
        space,
        space,
    )
    diag_vals = np.array([diagonal.entries[key] for key in fine])
    q0 = BasisMap(
        a_hat.domain_basis,
        a_hat.domain_basis,
        b_pre.entries @ (diag_vals[:, None] * a_hat.entries),
        space,
        space,
    )
    b_hat, report = neumann_correct(q0, b_pre)
    k_achieved = _norm_product(map_norm(a_hat), map_norm(b_hat))
    return DiagonalFactor(
        a_hat,
        b_hat,
        k_achieved,
        "l1",
        len(a_hat.domain_basis),
        root=(root,),
        stabilized_value=pivot,
        neumann=report,
    )


# ---------------------------------------------------------------------------
# The factorization game
# ---------------------------------------------------------------------------


class CanonicalStrategy(Strategy):
    """Answers each round with the target itself at unit weights."""

    name = "canonical"

    def __init__(self) -> None:
        self._universe: tuple[IndexTuple, ...] | None = None

    def respond(self, k, eta, functionals, vectors, partition, rounds, config):
        if self._universe is None:
            self._universe = config.universe()
        key = self._universe[k]
        side = partition.side(key) if config.partitioned else 1
        return ResponderMove(side=side, E=(key,), lam=(1.0,), mu=(1.0,))


class FactorAdversary(Adversary):
    """The theorem's adversary against a fixed large-diagonal operator.

    Splits the universe by diagonal sign, shrinks tolerances along the
    round-indexed schedule, spans the constraints by the full history of
    block vectors, block functionals, consumed basis prefix, and all their
    operator images, and picks signs by conditional-expectation selection.
    Constraint functions are synthesized once and shared across rounds.
    """

    name = "factor"

    def __init__(
        self,
        operator: OperatorMatrix,
        delta: float,
        eta: float,
        schedule: Callable[[int], float] | None = None,
    ) -> None:
        self.operator = operator
        self.delta = delta
        self.eta = eta
        self.schedule = schedule
        diag = operator.diagonal()
        self.partition = Partition(
            "table",
            None,
            frozenset(
                key for k, key in enumerate(operator.basis) if diag[k] <= -delta
            ),
        )
        self._order = {key: k for k, key in enumerate(operator.basis)}
        self._wstar = dual_normalization_weights(operator.basis, operator.space)
        self._functionals: list = []
        self._vectors: list = []
        self._ingested = 0
        self._prefix = 0
        self._scale: float | None = None

    def choose_partition(self, config: GameConfig) -> Partition:
        return self.partition

    def _operator_scale(self) -> float:
        if self._scale is None:
            try:
                mode = "exact" if self.operator.space.kind == "lp" and (
                    self.operator.space.exponents[0] == 1.0
                ) else "estimate"
                self._scale = operator_norm(
                    self.operator, self.operator.space, mode=mode
                ).upper
            except InvalidArgumentError:
                self._scale = float(np.linalg.norm(self.operator.entries, 2))
            self._scale = max(self._scale, 1e-12)
        return self._scale

    def _tolerance(self, k: int, config: GameConfig) -> float:
        if self.schedule is not None:
            return self.schedule(k)
        scale = self._operator_scale()
        base = self.eta / (
            2.0 * scale * (k + 1) * math.sqrt(config.C + self.eta)
        )
        return max(math.ldexp(base, -(k + 1)), ETA_FLOOR)

    def _basis_unit(self, i: int, config: GameConfig, dual: bool) -> HaarCoefficients:
        weights = (
            dual_normalization_weights if dual else normalization_weights
        )((self.operator.basis[i],), config.space)
        return HaarCoefficients(
            config.dims,
            {self.operator.basis[i]: 1.0 / float(weights[0])},
            config.convention,
        )

    def _adjoint_apply(self, xstar: HaarCoefficients, config: GameConfig) -> HaarCoefficients:
        """Transport a functional through the operator in dual coordinates."""
        r = np.zeros(len(self.operator.basis))
        for key, raw in xstar.entries.items():
            r[self._order[key]] = raw
        out = (self.operator.entries.T @ (r * self._wstar)) / self._wstar
        return HaarCoefficients(
            config.dims,
            {key: float(v) for key, v in zip(self.operator.basis, out)},
            config.convention,
        )

    def open_round(self, k, rounds, config):
        resolution = (config.depth_cap,) * config.dims
        for done in rounds[self._ingested:]:
            self._vectors.append(synthesize(done.x, resolution))
            self._vectors.append(
                synthesize(apply(self.operator, done.x), resolution)
            )
            self._functionals.append(synthesize(done.xstar, resolution))
            self._functionals.append(
                synthesize(self._adjoint_apply(done.xstar, config), resolution)
            )
            top = max(self._order[key] for key in done.responder.E)
            while self._prefix <= top:
                unit = self._basis_unit(self._prefix, config, dual=False)
                dual_unit = self._basis_unit(self._prefix, config, dual=True)
                self._vectors.append(synthesize(unit, resolution))
                self._vectors.append(
                    synthesize(apply(self.operator, unit), resolution)
                )
                self._functionals.append(synthesize(dual_unit, resolution))
                self._functionals.append(
                    synthesize(self._adjoint_apply(dual_unit, config), resolution)
                )
                self._prefix += 1
        self._ingested = len(rounds)
        return self._tolerance(k, config), list(self._functionals), list(self._vectors)

    def choose_signs(self, k, move, rounds, config):
        return sign_select(
            move.E, move.lam, move.mu, self.operator, config.eta, self.delta
        )


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FactorizationCertificate:
    """Measured evidence that the identity factors through an operator.

    Every bound is a measured quantity over the stored maps; the predicted
    bound is the closed-form constant the construction promises, and the
    invariants let a consumer recompute the residual and the off-diagonal
    mass from the stored operators alone.
    """

    a_tilde: BasisMap
    b_tilde: BasisMap
    transfer_a: BasisMap
    transfer_b: BasisMap
    diagonal: MultiplierEntries
    offdiag_sum: float
    residual: OperatorNormReport
    norm_product: OperatorNormReport
    a_norm: OperatorNormReport
    b_norm: OperatorNormReport
    predicted_bound: float
    route: str
    space: NormSpec
    delta: float
    eta: float
    eps: float
    identity_dim: int
    neumann: NeumannReport
    transcript_ref: Mapping
    timings: Mapping[str, float]
    root: IndexTuple | None = None
    stabilized_value: float | None = None
    fallback: str | None = None
    compression: Mapping | None = None

    def __post_init__(self) -> None:
        floor = (1.0 - self.eta) * self.delta - 1e-12
        small = min(abs(v) for v in self.diagonal.entries.values())
        if small < floor:
            raise InvalidArgumentError(
                f"certificate diagonal entry {small:.6f} below the window {floor:.6f}"
            )

    def recompute(self, T: OperatorMatrix) -> dict:
        """Re-derive the residual and off-diagonal mass from stored maps."""
        composed = self.b_tilde.compose(BasisMap.from_operator(T)).compose(
            self.a_tilde
        )
        size = len(composed.domain_basis)
        residual = map_norm(
            BasisMap(
                composed.domain_basis,
                composed.domain_basis,
                composed.entries - np.eye(size),
                composed.domain_space,
                composed.range_space,
            )
        )
        entries = T.entries
        if self.route == "tensor-l1":
            keep = [
                k for k, key in enumerate(T.basis) if key[0].is_empty
            ]
            entries = T.entries[np.ix_(keep, keep)]
        played = len(self.diagonal.entries)
        block = (
            self.transfer_b.entries @ entries @ self.transfer_a.entries
        )[:played, :played]
        return {"residual": residual, "offdiag_sum": _offdiag_mass(block)}

    def to_json(self) -> dict:
        return {
            "route": self.route,
            "space": self.space.to_json(),
            "delta": self.delta,
            "eta": self.eta,
            "eps": self.eps,
            "diagonal": self.diagonal.to_json(),
            "offdiag_sum": self.offdiag_sum,
            "residual": {"lower": self.residual.lower, "upper": self.residual.upper},
            "norm_product": {
                "lower": self.norm_product.lower,
                "upper": self.norm_product.upper,
            },
            "a_norm": {"lower": self.a_norm.lower, "upper": self.a_norm.upper},
            "b_norm": {"lower": self.b_norm.lower, "upper": self.b_norm.upper},
            "predicted_bound": self.predicted_bound,
            "identity_dim": self.identity_dim,
            "root": [index_to_json(i) for i in self.root] if self.root else None,
            "stabilized_value": self.stabilized_value,
            "fallback": self.fallback,
            "neumann": self.neumann.to_json(),
            "compression": dict(self.compression) if self.compression else None,
            "transcript": dict(self.transcript_ref),
            "timings": dict(self.timings),
        }


def predicted_norm_bound(
    route: str, delta: float, eta: float, eps: float, C: float, lam: float = 1.0
) -> float:
    """Closed-form product bound promised by the construction."""
    margin = delta - eta
    if margin <= 0:
        raise InvalidArgumentError("delta must exceed eta")
    K = ((1.0 + eps) if route in ("l1", "tensor-l1") else 1.0) / margin
    denom = 1.0 - 2.0 * lam * K * eta
    if denom <= 0:
        return math.inf
    return lam * K * (C + eta) ** 2 / denom


@contextmanager
def _stage(name: str):
    try:
        yield
    except HaarforgeError as exc:
        raise type(exc)(f"{name}: {exc}") from exc


def _transcript_ref(transcript: GameTranscript, fallback: str | None) -> dict:
    digest = hashlib.sha256()
    payload = {
        "xs": [x.to_json() for x in transcript.xs],
        "xstars": [x.to_json() for x in transcript.xstars],
        "signs": [list(r.adversary.signs) for r in transcript.rounds],
    }
    digest.update(json.dumps(payload, sort_keys=True).encode())
    return {
        "adversary": transcript.adversary_name,
        "strategy": transcript.strategy_name,
        "rounds": len(transcript.rounds),
        "partition": transcript.partition.to_json(),
        "config": transcript.config.to_json(),
        "fallback": fallback,
        "derived_sha256": digest.hexdigest(),
    }


def _resolve_route(space: NormSpec, convention: str) -> str:
    if space.kind == "lp" and space.exponents[0] == 1.0:
        if convention != "D+":
            raise ConfigError("the L1 route needs the constant-including truncation")
        return "l1"
    if space.kind in UNCONDITIONAL_KINDS or (
        space.kind == "lp" and 1.0 < space.exponents[0] < math.inf
    ):
        return "unconditional"
    raise ConfigError(f"no diagonal factorization route for {space.kind!r}")


def factor_pipeline(
    T: OperatorMatrix,
    delta: float,
    space: NormSpec,
    eta: float,
    config: GameConfig | None = None,
    *,
    eps: float = 0.1,
    strategy: Strategy | None = None,
    _retry: bool = True,
) -> FactorizationCertificate:
    """Play, transfer, factor the diagonal, correct, and certify.

    The game runs the canonical play first; when the measured off-diagonal
    mass exceeds eta and a space strategy is supplied, a full game against
    that strategy is tried and the transcript with the smaller mass wins.
    A failed Neumann correction triggers exactly one retry at a tenth of
    the tolerance before the failure propagates.
    """
    try:
        return _pipeline_once(T, delta, space, eta, config, eps, strategy)
    except NeumannCorrectionError:
        if not _retry:
            raise
        shrunk = replace(config, eta=eta / 10.0) if config is not None else None
        return factor_pipeline(
            T,
            delta,
            space,
            eta / 10.0,
            shrunk,
            eps=eps,
            strategy=strategy,
            _retry=False,
        )


def _pipeline_once(
    T: OperatorMatrix,
    delta: float,
    space: NormSpec,
    eta: float,
    config: GameConfig | None,
    eps: float,
    strategy: Strategy | None,
) -> FactorizationCertificate:
    if T.space != space:
        raise ConfigError("the operator must carry the pipeline's space")
    if T.dims != 1:
        raise ConfigError("the one-parameter pipeline needs one parameter")
    convention = "D+" if T.basis[0][0].is_empty else "D"
    route = _resolve_route(space, convention)
    diag = T.diagonal()
    if float(np.min(np.abs(diag))) < delta:
        raise InvalidArgumentError("the operator diagonal falls below delta")
    if config is None:
        config = GameConfig(
            dims=1,
            space=space,
            C=1.0,
            eta=eta,
            rounds=len(T.basis),
            depth_cap=T.grid_resolution[0],
            convention=convention,
            partitioned=True,
        )
    if config.universe() != T.basis:
        raise ConfigError("the game universe must match the operator truncation")
    if config.rounds != len(T.basis):
        raise ConfigError("the factorization game must play the whole truncation")
    timings: dict[str, float] = {}
    tick = time.perf_counter()

    with _stage("game"):
        transcript = run_game(
            FactorAdversary(T, delta, eta), CanonicalStrategy(), config
        )
    timings["game"] = time.perf_counter() - tick
    tick = time.perf_counter()
    with _stage("transfer"):
        transfer = assemble_transfer(transcript, T)
    fallback = None
    if transfer.offdiag_sum > eta and strategy is not None:
        try:
            with _stage("game"):
                alt = run_game(FactorAdversary(T, delta, eta), strategy, config)
            with _stage("transfer"):
                alt_transfer = assemble_transfer(alt, T)
            if alt_transfer.offdiag_sum < transfer.offdiag_sum:
                transcript, transfer = alt, alt_transfer
                fallback = strategy.name
        except HaarforgeError:
            fallback = None
    timings["transfer"] = time.perf_counter() - tick
    tick = time.perf_counter()

    with _stage("diagonal"):
        floor = (1.0 - eta) * delta
        if route == "l1":
            dfac = diag_factor_l1(transfer.diagonal, floor, eps)
        else:
            dfac = diag_factor_unconditional(transfer.diagonal, floor, space)
    timings["diagonal"] = time.perf_counter() - tick
    tick = time.perf_counter()

    with _stage("neumann"):
        a_map = BasisMap.from_operator(transfer.a)
        b_map = BasisMap.from_operator(transfer.b)
        t_map = BasisMap.from_operator(T)
        a_tilde = a_map.compose(dfac.a_hat)
        pre_b = dfac.b_hat.compose(b_map)
        q = pre_b.compose(t_map).compose(a_tilde)
        b_tilde, neumann = neumann_correct(q, pre_b)
    timings["neumann"] = time.perf_counter() - tick
    tick = time.perf_counter()

    with _stage("norms"):
        composed = b_tilde.compose(t_map).compose(a_tilde)
        size = len(composed.domain_basis)
        residual = map_norm(
            BasisMap(
                composed.domain_basis,
                composed.domain_basis,
                composed.entries - np.eye(size),
                composed.domain_space,
                composed.range_space,
            )
        )
        a_norm = map_norm(a_tilde)
        b_norm = map_norm(b_tilde)
    timings["norms"] = time.perf_counter() - tick

    return FactorizationCertificate(
        a_tilde=a_tilde,
        b_tilde=b_tilde,
        transfer_a=a_map,
        transfer_b=b_map,
        diagonal=transfer.diagonal,
        offdiag_sum=transfer.offdiag_sum,
        residual=residual,
        norm_product=_norm_product(a_norm, b_norm),
        a_norm=a_norm,
        b_norm=b_norm,
        predicted_bound=predicted_norm_bound(route, delta, eta, eps, config.C),
        route=route,
        space=space,
        delta=delta,
        eta=eta,
        eps=eps,
        identity_dim=dfac.identity_dim,
        neumann=neumann,
        transcript_ref=_transcript_ref(transcript, fallback),
        timings=timings,
        root=dfac.root,
        stabilized_value=dfac.stabilized_value,
        fallback=fallback,
    )


# ---------------------------------------------------------------------------
# The bi-parameter lift
# ---------------------------------------------------------------------------


def tensor_universe(depths: tuple[int, int]) -> tuple[IndexTuple, ...]:
    """All pairs from two constant-including one-parameter truncations."""
    first = haar_truncation(1, depths[0], "D+")
    second = haar_truncation(1, depths[1], "D+")
    keys = [(a[0], b[0]) for a in first for b in second]
    return tuple(sorted(keys, key=basis_key))


def first_axis_projection(basis: Sequence[IndexTuple], space: NormSpec) -> OperatorMatrix:
    """The compression onto keys whose first factor is the constant symbol."""
    flags = np.array([1.0 if key[0].is_empty else 0.0 for key in basis])
    return OperatorMatrix(tuple(basis), np.diag(flags), space)


def tensor_factor_l1l1(
    T: OperatorMatrix,
    delta: float,
    *,
    eta: float = 0.01,
    eps: float = 0.1,
    strategy: Strategy | None = None,
) -> FactorizationCertificate:
    """Factor through a bi-parameter operator via the first-axis compression.

    The compression onto the span of constant-by-interval keys has norm one
    and identifies isometrically with the one-parameter system, so the
    one-parameter pipeline runs on the compressed matrix and the resulting
    maps lift back through the identification.
    """
    if T.dims != 2:
        raise ConfigError("the tensor route needs two parameters")
    if T.space != NormSpec.lp(1.0):
        raise ConfigError("the tensor route factors through the integral norm")
    depths = T.grid_resolution
    if T.basis != tensor_universe(depths):
        raise ConfigError("the operator must cover the full tensor truncation")
    diag = T.diagonal()
    if float(np.min(np.abs(diag))) < delta:
        raise InvalidArgumentError("the operator diagonal falls below delta")
    tick = time.perf_counter()
    space = NormSpec.lp(1.0)
    projection = first_axis_projection(T.basis, space)
    projection_norm = operator_norm(projection, space, mode="exact")
    keep = [k for k, key in enumerate(T.basis) if key[0].is_empty]
    slice_basis = tuple((T.basis[k][1],) for k in keep)
    compressed = OperatorMatrix(
        slice_basis, T.entries[np.ix_(keep, keep)], space
    )
    compress_time = time.perf_counter() - tick

    inner = factor_pipeline(
        compressed, delta, space, eta, eps=eps, strategy=strategy
    )

    tick = time.perf_counter()
    embed_entries = np.zeros((len(T.basis), len(slice_basis)))
    for j, k in enumerate(keep):
        embed_entries[k, j] = 1.0
    embed = BasisMap(slice_basis, T.basis, embed_entries, space, space)
    restrict = BasisMap(T.basis, slice_basis, embed_entries.T, space, space)
    a_tensor = embed.compose(inner.a_tilde)
    b_tensor = inner.b_tilde.compose(restrict)
    composed = b_tensor.compose(BasisMap.from_operator(T)).compose(a_tensor)
    size = len(composed.domain_basis)
    residual = map_norm(
        BasisMap(
            composed.domain_basis,
            composed.domain_basis,
            composed.entries - np.eye(size),
            space,
            space,
        )
    )
    a_norm = map_norm(a_tensor)
    b_norm = map_norm(b_tensor)
    lift_time = time.perf_counter() - tick

    timings = dict(inner.timings)
    timings["compression"] = compress_time
    timings["lift"] = lift_time
    return FactorizationCertificate(
        a_tilde=a_tensor,
        b_tilde=b_tensor,
        transfer_a=inner.transfer_a,
        transfer_b=inner.transfer_b,
        diagonal=inner.diagonal,
        offdiag_sum=inner.offdiag_sum,
        residual=residual,
        norm_product=_norm_product(a_norm, b_norm),
        a_norm=a_norm,
        b_norm=b_norm,
        predicted_bound=predicted_norm_bound("tensor-l1", delta, eta, eps, 1.0),
        route="tensor-l1",
        space=space,
        delta=delta,
        eta=eta,
        eps=eps,
        identity_dim=inner.identity_dim,
        neumann=inner.neumann,
        transcript_ref=inner.transcript_ref,
        timings=timings,
        root=inner.root,
        stabilized_value=inner.stabilized_value,
        fallback=inner.fallback,
        compression={
            "projection_norm": {
                "lower": projection_norm.lower,
                "upper": projection_norm.upper,
            },
            "compressed_dim": len(slice_basis),
        },
    )
