"""Finite linear operators in Haar coordinates.

An operator is stored as the matrix of a truncation: entry (m, k) is the
m-th normalized coordinate functional applied to the image of the k-th
normalized basis vector.  Normalization follows the ambient norm: the basis
vector for an index tuple is the tensor Haar function divided by the product
of factor measures raised to 1/p per axis, so "large diagonal" thresholds
compare directly against operator norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dyadic import (
    EMPTY,
    DyadicIndex,
    DyadicRect,
    index_from_json,
    index_to_json,
    interval_index,
    level_intervals,
    rect_index,
)
from .dyadic import pairing as pair_levels
from .errors import (
    IncompleteMultiplierError,
    InvalidArgumentError,
    UnsupportedDimensionError,
)
from .norms import NormSpec, dual_space, james_norm
from .stepfn import HaarCoefficients, haar_function

IndexTuple = tuple[DyadicIndex, ...]


def strictly_above(a: DyadicIndex, b: DyadicIndex) -> bool:
    """Strict order on the extended system: empty symbol, then containment.

    The empty symbol sits strictly above the unit interval even though both
    have the same support, matching the chain convention for multipliers.
    """
    if a.is_empty:
        return not b.is_empty
    if b.is_empty:
        return False
    return a.strictly_contains(b)


def basis_key(key: IndexTuple) -> tuple:
    """Sort key realizing the linear order of each truncation.

    One parameter: empty symbol first, then interval order.  Two parameters:
    rectangle order, with keys carrying an empty factor ranked before every
    rectangle (paired extended indices, so the doubly-empty key comes first).
    Higher arity: levels folded through the pairing map, then positions
    lexicographically.
    """
    if len(key) == 1:
        idx = key[0]
        return (0, 0) if idx.is_empty else (1, interval_index(idx))
    if len(key) == 2:
        if any(idx.is_empty for idx in key):
            codes = tuple(
                0 if idx.is_empty else interval_index(idx) for idx in key
            )
            return (-1, pair_levels(*codes))
        return (rect_index(DyadicRect(key)),)
    for idx in key:
        if idx.is_empty:
            raise InvalidArgumentError("empty symbol needs arity at most two")
    folded = key[0].level
    for idx in key[1:]:
        folded = pair_levels(folded, idx.level)
    return (folded, tuple(idx.position for idx in key))


def haar_truncation(dims: int, depth: int, convention: str = "D") -> tuple[IndexTuple, ...]:
    """All index tuples with factor levels below ``depth``, in linear order."""
    if depth < 1:
        raise InvalidArgumentError("depth must be at least 1")
    if convention not in ("D", "D+"):
        raise InvalidArgumentError(f"unknown convention {convention!r}")
    if convention == "D+" and dims != 1:
        raise UnsupportedDimensionError("the D+ convention is one-parameter only")
    intervals = [idx for level in range(depth) for idx in level_intervals(level)]
    if dims == 1:
        keys: list[IndexTuple] = [(idx,) for idx in intervals]
        if convention == "D+":
            keys = [(EMPTY,)] + keys
        return tuple(keys)
    pool = [intervals] * dims
    out: list[IndexTuple] = []
    def rec(prefix: tuple[DyadicIndex, ...], axis: int) -> None:
        if axis == dims:
            out.append(prefix)
            return
        for idx in pool[axis]:
            rec(prefix + (idx,), axis + 1)
    rec((), 0)
    out.sort(key=basis_key)
    return tuple(out)


def _normalization_exponents(space: NormSpec, dims: int) -> tuple[float, ...]:
    if space.kind == "sup":
        return (math.inf,) * dims
    if space.kind in ("lp", "hp"):
        return (space.exponents[0],) * dims
    if space.kind in ("mixed", "triple", "hphq"):
        if len(space.exponents) != dims:
            raise InvalidArgumentError(
                f"{len(space.exponents)} exponents for {dims} parameters"
            )
        return space.exponents
    raise InvalidArgumentError(f"no grid normalization for kind {space.kind!r}")


def normalization_weights(keys: Sequence[IndexTuple], space: NormSpec) -> np.ndarray:
    """Basis normalizers: w with e = h/w for each key, in the given space."""
    if not keys:
        return np.zeros(0)
    exps = _normalization_exponents(space, len(keys[0]))
    out = np.ones(len(keys))
    for col, key in enumerate(keys):
        w = 1.0
        for idx, p in zip(key, exps):
            if not math.isinf(p):
                w *= float(idx.measure if not idx.is_empty else 1.0) ** (1.0 / p)
        out[col] = w
    return out


def dual_normalization_weights(keys: Sequence[IndexTuple], space: NormSpec) -> np.ndarray:
    """Normalizers of the biorthogonal functionals: e* = h/w*.

    w* has exponent 1 - 1/p per axis, so the pair satisfies e*(e) = 1 even
    when the dual norm itself has no representable tag.
    """
    if not keys:
        return np.zeros(0)
    exps = _normalization_exponents(space, len(keys[0]))
    out = np.ones(len(keys))
    for col, key in enumerate(keys):
        w = 1.0
        for idx, p in zip(key, exps):
            share = 1.0 if math.isinf(p) else 1.0 - 1.0 / p
            measure = float(idx.measure if not idx.is_empty else 1.0)
            w *= measure**share
        out[col] = w
    return out


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """A truncated operator: ordered basis, coordinate matrix, ambient norm."""

    basis: tuple[IndexTuple, ...]
    entries: np.ndarray
    space: NormSpec = field(default_factory=lambda: NormSpec.lp(1.0))

    def __post_init__(self) -> None:
        if self.space.kind == "james":
            basis = tuple(self.basis)
        else:
            basis = tuple(
                (key,) if isinstance(key, DyadicIndex) else tuple(key)
                for key in self.basis
            )
        object.__setattr__(self, "basis", basis)
        entries = np.array(self.entries, dtype=float)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        if entries.shape != (len(basis), len(basis)):
            raise InvalidArgumentError(
                f"entries shape {entries.shape} does not match basis size {len(basis)}"
            )
        if self.space.kind == "james":
            return
        if not basis:
            raise InvalidArgumentError("empty truncation")
        dims = len(basis[0])
        if any(len(key) != dims for key in basis):
            raise InvalidArgumentError("basis tuples have mixed arity")
        keys = [basis_key(key) for key in basis]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            raise InvalidArgumentError("basis is not in increasing linear order")
        _normalization_exponents(self.space, dims)

    @property
    def dims(self) -> int:
        if self.space.kind == "james":
            raise InvalidArgumentError("the James truncation has no grid")
        return len(self.basis[0])

    @property
    def grid_resolution(self) -> tuple[int, ...]:
        res = [0] * self.dims
        for key in self.basis:
            for axis, idx in enumerate(key):
                if not idx.is_empty:
                    res[axis] = max(res[axis], idx.level + 1)
        return tuple(res)

    def _weights(self) -> np.ndarray:
        """Per-column normalization: product of factor measures to 1/p."""
        return normalization_weights(self.basis, self.space)

    def synthesis_matrix(self) -> np.ndarray:
        """Grid values of each normalized basis vector, one per column."""
        cached = self.__dict__.get("_synthesis")
        if cached is None:
            res = self.grid_resolution
            weights = self._weights()
            cols = [
                haar_function(key, res).values.ravel() / weights[k]
                for k, key in enumerate(self.basis)
            ]
            cached = np.column_stack(cols)
            cached.setflags(write=False)
            self.__dict__["_synthesis"] = cached
        return cached

    def dual_matrix(self) -> np.ndarray:
        """Integration weights of each coordinate functional, one per row."""
        cached = self.__dict__.get("_dual")
        if cached is None:
            res = self.grid_resolution
            volume = float(np.prod([2.0**-r for r in res]))
            weights = self._weights()
            rows = [
                haar_function(key, res).values.ravel()
                * (volume * weights[k] / float(
                    np.prod([
                        float(idx.measure if not idx.is_empty else 1.0)
                        for idx in key
                    ])
                ))
                for k, key in enumerate(self.basis)
            ]
            cached = np.vstack(rows)
            cached.setflags(write=False)
            self.__dict__["_dual"] = cached
        return cached

    def column(self, k: int) -> tuple[IndexTuple, np.ndarray]:
        return self.basis[k], self.entries[:, k]

    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.entries).copy()

    def adjoint(self) -> "OperatorMatrix":
        """Transpose in the dual normalization; entries are shared values."""
        return OperatorMatrix(self.basis, self.entries.T.copy(), dual_space(self.space))

    def compose(self, inner: "OperatorMatrix") -> "OperatorMatrix":
        """Matrix of self applied after ``inner`` on the same truncation."""
        if self.basis != inner.basis:
            raise InvalidArgumentError("composition needs identical truncations")
        return OperatorMatrix(self.basis, self.entries @ inner.entries, inner.space)

    def to_json(self) -> dict:
        return {
            "basis": [[index_to_json(idx) for idx in key] for key in self.basis],
            "entries": [float(v) for v in self.entries.ravel()],
            "space": self.space.to_json(),
        }

    @staticmethod
    def from_json(payload: Mapping) -> "OperatorMatrix":
        basis = tuple(
            tuple(index_from_json(idx) for idx in key) for key in payload["basis"]
        )
        size = len(basis)
        entries = np.asarray(payload["entries"], dtype=float).reshape(size, size)
        return OperatorMatrix(basis, entries, NormSpec.from_json(payload["space"]))

    @staticmethod
    def identity(basis: Sequence[IndexTuple], space: NormSpec) -> "OperatorMatrix":
        return OperatorMatrix(tuple(basis), np.eye(len(basis)), space)


@dataclass(frozen=True)
class MultiplierEntries:
    """A scalar per index tuple; the symbol of a diagonal operator."""

    dims: int
    entries: Mapping[IndexTuple, float]

    def __post_init__(self) -> None:
        normalized: dict[IndexTuple, float] = {}
        for key, value in self.entries.items():
            key = (key,) if isinstance(key, DyadicIndex) else tuple(key)
            if len(key) != self.dims:
                raise InvalidArgumentError(
                    f"index tuple {key} has wrong arity for dims={self.dims}"
                )
            normalized[key] = float(value)
        object.__setattr__(self, "entries", normalized)

    def to_json(self) -> list:
        records = []
        for key in sorted(self.entries, key=basis_key):
            records.append(
                {
                    "index": [index_to_json(idx) for idx in key],
                    "value": self.entries[key],
                }
            )
        return records

    @staticmethod
    def from_json(payload: Sequence[Mapping]) -> "MultiplierEntries":
        entries = {}
        dims = 1
        for record in payload:
            key = tuple(index_from_json(idx) for idx in record["index"])
            dims = len(key)
            entries[key] = float(record["value"])
        return MultiplierEntries(dims, entries)


def build_multiplier(
    c: MultiplierEntries,
    space: NormSpec | None = None,
    basis: Sequence[IndexTuple] | None = None,
) -> OperatorMatrix:
    """Diagonal operator with the given symbol.

    The truncation defaults to the symbol's own support in linear order;
    an explicit basis must be covered by the symbol.
    """
    if basis is None:
        ordered = tuple(sorted(c.entries, key=basis_key))
    else:
        ordered = tuple(
            (key,) if isinstance(key, DyadicIndex) else tuple(key) for key in basis
        )
        missing = [key for key in ordered if key not in c.entries]
        if missing:
            raise IncompleteMultiplierError(
                f"symbol missing {len(missing)} entries, first {missing[0]}"
            )
    diag = np.diag([c.entries[key] for key in ordered])
    return OperatorMatrix(ordered, diag, space or NormSpec.lp(1.0))


def chain_variation(
    c: MultiplierEntries, root: DyadicIndex = EMPTY, headed: bool = False
) -> float:
    """Largest total step variation along descending chains below ``root``.

    By the triangle inequality a chain that skips levels is dominated by the
    filled-in chain, so the supremum is realized on parent-child steps and a
    single upward sweep suffices.  Chains start anywhere in the subtree, or
    at the root itself when ``headed`` is set.
    """
    if c.dims != 1:
        raise UnsupportedDimensionError("chain variation is one-parameter only")
    values = {key[0]: v for key, v in c.entries.items()}
    members = [
        idx for idx in values
        if idx == root or strictly_above(root, idx)
    ]
    if headed and root not in values:
        raise InvalidArgumentError("a headed chain needs the root in the symbol")
    if not members:
        return 0.0
    best: dict[DyadicIndex, float] = {}
    for idx in sorted(members, key=lambda i: -1 if i.is_empty else i.level, reverse=True):
        if idx.is_empty:
            children = [lvl0 for lvl0 in (level_intervals(0)[0],) if lvl0 in values]
        else:
            children = [child for child in (idx.left(), idx.right()) if child in values]
        score = 0.0
        for child in children:
            step = abs(values[idx] - values[child]) + best.get(child, 0.0)
            score = max(score, step)
        best[idx] = score
    if headed:
        return best[root]
    return max(best[idx] for idx in members)


def apply(T: OperatorMatrix, x: HaarCoefficients) -> HaarCoefficients:
    """Image coefficients, in the raw (unnormalized) Haar convention."""
    order = {key: k for k, key in enumerate(T.basis)}
    weights = T._weights()
    vec = np.zeros(len(T.basis))
    for key, value in x.entries.items():
        if key not in order:
            raise InvalidArgumentError(f"coefficient on {key} outside the truncation")
        vec[order[key]] = value * weights[order[key]]
    out = T.entries @ vec
    entries = {
        key: float(out[k] / weights[k])
        for k, key in enumerate(T.basis)
        if out[k] != 0.0
    }
    return HaarCoefficients(x.dims, entries, x.convention)


class SumOperator:
    """Block-diagonal operator on a finite sum of grid spaces.

    A vector of the sum space is a tuple of coefficient vectors, one per
    part; its norm is the p-sum of the part norms.  Realized lazily: parts
    keep their own truncations and ambient norms.
    """

    def __init__(self, parts: Sequence[OperatorMatrix], p: float):
        if not parts:
            raise InvalidArgumentError("a sum needs at least one part")
        if not (1.0 <= p < math.inf):
            raise InvalidArgumentError("the sum exponent must lie in [1, inf)")
        self.parts = tuple(parts)
        self.p = float(p)

    @property
    def basis(self) -> tuple[tuple[int, IndexTuple], ...]:
        out = []
        for n, part in enumerate(self.parts):
            out.extend((n, key) for key in part.basis)
        return tuple(out)

    def entries_blockdiag(self) -> np.ndarray:
        size = sum(len(part.basis) for part in self.parts)
        out = np.zeros((size, size))
        at = 0
        for part in self.parts:
            k = len(part.basis)
            out[at : at + k, at : at + k] = part.entries
            at += k
        return out

    def split(self, flat: np.ndarray) -> list[np.ndarray]:
        out, at = [], 0
        for part in self.parts:
            k = len(part.basis)
            out.append(flat[at : at + k])
            at += k
        return out

    def vector_norm(self, flat: np.ndarray) -> float:
        from .norms import norm_eval
        from .stepfn import StepFunction

        total = 0.0
        for part, coords in zip(self.parts, self.split(flat)):
            S = part.synthesis_matrix()
            shape = tuple(2**r for r in part.grid_resolution)
            value = norm_eval(StepFunction((S @ coords).reshape(shape)), part.space)
            total += value**self.p
        return total ** (1.0 / self.p)

    def apply_flat(self, flat: np.ndarray) -> np.ndarray:
        pieces = [
            part.entries @ coords
            for part, coords in zip(self.parts, self.split(flat))
        ]
        return np.concatenate(pieces)

    def probe_norm(self, trials: int = 300, seed: int = 0) -> tuple[float, float]:
        """Probe lower bound and block upper bound for the sum operator."""
        from .norms import operator_norm, probe_vectors

        size = sum(len(part.basis) for part in self.parts)
        lower = 0.0
        for _, a in probe_vectors(size, trials, seed):
            den = self.vector_norm(a)
            if den == 0.0:
                continue
            lower = max(lower, self.vector_norm(self.apply_flat(a)) / den)
        upper = max(
            operator_norm(part, part.space, mode="estimate", trials=trials, seed=seed).upper
            for part in self.parts
        )
        return lower, max(lower, upper)

    def projection(self, k: int) -> "SumOperator":
        """The sum operator keeping part k and annihilating the others."""
        if not 0 <= k < len(self.parts):
            raise InvalidArgumentError("part index out of range")
        parts = [
            OperatorMatrix(
                part.basis,
                np.eye(len(part.basis)) if n == k else np.zeros((len(part.basis),) * 2),
                part.space,
            )
            for n, part in enumerate(self.parts)
        ]
        return SumOperator(parts, self.p)


def direct_sum(parts: Sequence[OperatorMatrix], p: float) -> SumOperator:
    """Block-diagonal sum acting on the p-sum of the part spaces."""
    return SumOperator(parts, p)


def james_shift_demo(n: int, trials: int = 1000, seed: int = 0) -> tuple[OperatorMatrix, dict]:
    """Identity minus shift on the first ``n`` James vectors, with probes.

    The matrix has unit diagonal; the shift preserves the norm exactly (a
    shifted sequence is a zero-padded one), so probe ratios stay below 2.
    """
    if n < 2:
        raise InvalidArgumentError("the demo needs dimension at least 2")
    entries = np.eye(n) - np.diag(np.ones(n - 1), -1)
    T = OperatorMatrix(tuple(range(1, n + 1)), entries, NormSpec.james())
    max_ratio = 0.0
    shift_exact = True
    rng_checks = min(trials, 1000)
    for k in range(rng_checks):
        rng = np.random.default_rng([seed, k])
        a = rng.standard_normal(n)
        base = james_norm(a)
        if base == 0.0:
            continue
        shifted = james_norm(np.concatenate(([0.0], a)))
        if abs(shifted - base) > 1e-10 * max(1.0, base):
            shift_exact = False
        image = np.concatenate((a, [0.0])) - np.concatenate(([0.0], a))
        max_ratio = max(max_ratio, james_norm(image) / base)
    report = {
        "diagonal": [float(v) for v in np.diagonal(entries)],
        "max_ratio": max_ratio,
        "shift_isometric": shift_exact,
        "trials": rng_checks,
    }
    return T, report
