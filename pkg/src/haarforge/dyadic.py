"""Exact combinatorics of dyadic intervals, rectangles, and interval collections.

Intervals are half-open I = [(i-1)/2^j, i/2^j) with level j >= 0 and position
1 <= i <= 2^j. The empty symbol stands for the constant function indicator of
[0,1) and carries no level or position. All measures are exact Fractions; grid
cells at a resolution are indexed 0..2^resolution-1 left to right.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    DepthExhaustedError,
    EmptySymbolOrderError,
    InvalidArgumentError,
    InvalidCollectionError,
    PruneBudgetError,
    SerializationError,
    UnsupportedDimensionError,
)

__all__ = [
    "DyadicIndex",
    "EMPTY",
    "DyadicRect",
    "IntervalCollection",
    "GenerationDecomposition",
    "interval_index",
    "interval_from_index",
    "pairing",
    "unpair",
    "rect_index",
    "generations",
    "persistent_cells",
    "prune_collection",
    "epsilon_split",
    "eventual_choice_k0",
    "level_intervals",
    "all_intervals_up_to",
    "collection_to_json",
    "collection_from_json",
]


@total_ordering
@dataclass(frozen=True)
class DyadicIndex:
    """A dyadic interval or the empty symbol.

    kind is "interval" or "empty". For intervals, level j and position i encode
    [(i-1)/2^j, i/2^j). Ordering sorts the empty symbol first, then intervals by
    interval_index; this matches the enumeration that treats the constant
    function as the minimum.
    """

    kind: str
    level: int = 0
    position: int = 0

    def __post_init__(self) -> None:
        if self.kind == "empty":
            if self.level or self.position:
                raise InvalidArgumentError("empty symbol carries no level/position")
            return
        if self.kind != "interval":
            raise InvalidArgumentError(f"unknown index kind {self.kind!r}")
        if self.level < 0:
            raise InvalidArgumentError(f"negative level {self.level}")
        if not 1 <= self.position <= 2**self.level:
            raise InvalidArgumentError(
                f"position {self.position} out of range for level {self.level}"
            )

    # -- constructors -------------------------------------------------------

    @staticmethod
    def interval(level: int, position: int) -> "DyadicIndex":
        return DyadicIndex("interval", level, position)

    @staticmethod
    def empty() -> "DyadicIndex":
        return EMPTY

    # -- geometry -----------------------------------------------------------

    @property
    def is_empty(self) -> bool:
        return self.kind == "empty"

    @property
    def inf(self) -> Fraction:
        self._require_interval()
        return Fraction(self.position - 1, 2**self.level)

    @property
    def sup(self) -> Fraction:
        self._require_interval()
        return Fraction(self.position, 2**self.level)

    @property
    def measure(self) -> Fraction:
        # The empty symbol acts on all of [0,1); its conventional size is 1.
        if self.is_empty:
            return Fraction(1)
        return Fraction(1, 2**self.level)

    def left(self) -> "DyadicIndex":
        self._require_interval()
        return DyadicIndex.interval(self.level + 1, 2 * self.position - 1)

    def right(self) -> "DyadicIndex":
        self._require_interval()
        return DyadicIndex.interval(self.level + 1, 2 * self.position)

    def parent(self) -> "DyadicIndex":
        self._require_interval()
        if self.level == 0:
            raise InvalidArgumentError("[0,1) has no parent interval")
        return DyadicIndex.interval(self.level - 1, (self.position + 1) // 2)

    def contains(self, other: "DyadicIndex") -> bool:
        """Set containment; the empty symbol is treated as [0,1)."""
        a = (Fraction(0), Fraction(1)) if self.is_empty else (self.inf, self.sup)
        b = (Fraction(0), Fraction(1)) if other.is_empty else (other.inf, other.sup)
        return a[0] <= b[0] and b[1] <= a[1]

    def strictly_contains(self, other: "DyadicIndex") -> bool:
        return self.contains(other) and self != other

    def cells(self, resolution: int) -> range:
        """Grid cells at the given resolution covered by this interval."""
        if self.is_empty:
            return range(0, 2**resolution)
        if resolution < self.level:
            raise InvalidArgumentError(
                f"resolution {resolution} below interval level {self.level}"
            )
        width = 2 ** (resolution - self.level)
        start = (self.position - 1) * width
        return range(start, start + width)

    def _require_interval(self) -> None:
        if self.is_empty:
            raise InvalidArgumentError("operation needs an interval, got the empty symbol")

    def __lt__(self, other: "DyadicIndex") -> bool:
        if self.is_empty:
            return not other.is_empty
        if other.is_empty:
            return False
        return interval_index(self) < interval_index(other)

    def __repr__(self) -> str:
        if self.is_empty:
            return "DyadicIndex.empty()"
        return f"DyadicIndex.interval({self.level}, {self.position})"


EMPTY = DyadicIndex("empty")


@dataclass(frozen=True)
class DyadicRect:
    """A d-parameter dyadic rectangle; factors are always genuine intervals."""

    factors: tuple[DyadicIndex, ...]

    def __post_init__(self) -> None:
        if not self.factors:
            raise InvalidArgumentError("rectangle needs at least one factor")
        for f in self.factors:
            if f.is_empty:
                raise InvalidCollectionError("rectangles never use the empty symbol")

    @property
    def dim(self) -> int:
        return len(self.factors)

    @property
    def measure(self) -> Fraction:
        out = Fraction(1)
        for f in self.factors:
            out *= f.measure
        return out

    def __repr__(self) -> str:
        inner = ", ".join(f"({f.level},{f.position})" for f in self.factors)
        return f"DyadicRect[{inner}]"


# ---------------------------------------------------------------------------
# Linear orders
# ---------------------------------------------------------------------------


def interval_index(index: DyadicIndex) -> int:
    """Order position 2^j + i - 1 of an interval; bijective per depth cap."""
    if index.is_empty:
        raise EmptySymbolOrderError("no order position for the empty symbol")
    return 2**index.level + index.position - 1


def interval_from_index(k: int) -> DyadicIndex:
    """Inverse of interval_index."""
    if k < 1:
        raise InvalidArgumentError(f"order positions start at 1, got {k}")
    level = k.bit_length() - 1
    return DyadicIndex.interval(level, k - 2**level + 1)


def pairing(m: int, n: int) -> int:
    """Pair two nonnegative levels into a single rank."""
    if m < 0 or n < 0:
        raise InvalidArgumentError("pairing needs nonnegative integers")
    return n * n + m if m < n else m * m + m + n


def unpair(t: int) -> tuple[int, int]:
    """Inverse of pairing."""
    if t < 0:
        raise InvalidArgumentError("rank must be nonnegative")
    r = _isqrt(t)
    rem = t - r * r
    if rem < r:
        return rem, r
    return r, rem - r


def _isqrt(t: int) -> int:
    import math

    return math.isqrt(t)


def rect_index(rect: DyadicRect) -> int:
    """Rank of a two-parameter rectangle.

    Primary key is the paired level rank, then inf of the first factor, then
    inf of the second; within one level pair (m, n) the offsets enumerate in
    row-major order, so the rank admits a closed form.
    """
    if rect.dim != 2:
        raise UnsupportedDimensionError(
            f"rectangle order is defined for two parameters, got {rect.dim}"
        )
    first, second = rect.factors
    m, n = first.level, second.level
    t = pairing(m, n)
    prior = 0
    for s in range(t):
        mm, nn = unpair(s)
        prior += 2 ** (mm + nn)
    return prior + (first.position - 1) * 2**n + (second.position - 1)


# ---------------------------------------------------------------------------
# Collections and generations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntervalCollection:
    """A finite set of dyadic intervals below a depth cap."""

    members: frozenset[DyadicIndex]
    depth_cap: int

    def __post_init__(self) -> None:
        if self.depth_cap < 0:
            raise InvalidArgumentError("depth cap must be nonnegative")
        for member in self.members:
            if member.is_empty:
                raise InvalidCollectionError("collections contain intervals only")
            if member.level > self.depth_cap:
                raise InvalidCollectionError(
                    f"member level {member.level} exceeds depth cap {self.depth_cap}"
                )

    @staticmethod
    def of(members: Iterable[DyadicIndex], depth_cap: int) -> "IntervalCollection":
        return IntervalCollection(frozenset(members), depth_cap)

    def __iter__(self) -> Iterator[DyadicIndex]:
        return iter(sorted(self.members))

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, item: DyadicIndex) -> bool:
        return item in self.members

    def coverage_cells(self, resolution: int | None = None) -> frozenset[int]:
        res = self.depth_cap if resolution is None else resolution
        out: set[int] = set()
        for member in self.members:
            out.update(member.cells(res))
        return frozenset(out)

    def coverage_measure(self) -> Fraction:
        return Fraction(len(self.coverage_cells()), 2**self.depth_cap)

    def is_pairwise_disjoint(self) -> bool:
        seen: set[int] = set()
        for member in self.members:
            cells = member.cells(self.depth_cap)
            if seen.intersection(cells):
                return False
            seen.update(cells)
        return True


@dataclass(frozen=True)
class GenerationDecomposition:
    """Layers of a collection plus the finite-depth persistent set.

    layers[n] holds the members whose strict supersets within the collection
    number exactly n; persistent is the coverage of the last nonempty layer
    (equivalently the intersection of all layer coverages, since coverage
    shrinks layer by layer). Cells are at the collection's depth cap.
    """

    layers: tuple[frozenset[DyadicIndex], ...]
    persistent: frozenset[int]
    depth_cap: int

    @property
    def persistent_measure(self) -> Fraction:
        return Fraction(len(self.persistent), 2**self.depth_cap)

    def layer_coverage(self, n: int) -> frozenset[int]:
        out: set[int] = set()
        for member in self.layers[n]:
            out.update(member.cells(self.depth_cap))
        return frozenset(out)


def generations(
    collection: IntervalCollection, horizon: int | None = None
) -> GenerationDecomposition:
    """Split a collection into maximality layers and compute its persistent set.

    The layer of a member equals its count of strict supersets inside the
    collection (supersets of a dyadic interval form a chain, so peeling
    maximal elements removes exactly one ancestor per layer). The persistent
    set is the coverage of layer `horizon` (default: last nonempty layer).
    """
    if not collection.members:
        raise InvalidArgumentError("generations of an empty collection are undefined")
    members = sorted(collection.members)
    layer_of: dict[DyadicIndex, int] = {}
    for member in members:
        count = 0
        walker = member
        while walker.level > 0:
            walker = walker.parent()
            if walker in collection.members:
                count += 1
        layer_of[member] = count
    n_layers = max(layer_of.values()) + 1
    layers: list[set[DyadicIndex]] = [set() for _ in range(n_layers)]
    for member, n in layer_of.items():
        layers[n].add(member)
    if horizon is None:
        horizon = n_layers - 1
    if not 0 <= horizon < n_layers:
        raise InvalidArgumentError(
            f"horizon {horizon} outside layer range 0..{n_layers - 1}"
        )
    persistent: set[int] = set()
    for member in layers[horizon]:
        persistent.update(member.cells(collection.depth_cap))
    return GenerationDecomposition(
        layers=tuple(frozenset(layer) for layer in layers),
        persistent=frozenset(persistent),
        depth_cap=collection.depth_cap,
    )


def persistent_cells(
    collection: IntervalCollection, horizon: int | None = None
) -> frozenset[int]:
    return generations(collection, horizon=horizon).persistent


def prune_collection(
    collection: IntervalCollection,
    kappa: Fraction | float,
    forced_drops: Iterable[DyadicIndex] = (),
) -> IntervalCollection:
    """Drop requested members while respecting per-layer loss budgets.

    Layer k may lose coverage at most kappa/2^{k+1}; a forced drop exceeding
    its layer budget raises PruneBudgetError. Without forced drops the
    collection is returned unchanged (finite collections need no pruning).
    The result keeps only members still reachable through surviving ancestors,
    so its layer structure matches the pruned layers.
    """
    kappa = Fraction(kappa).limit_denominator(2**40) if not isinstance(kappa, Fraction) else kappa
    if not 0 < kappa < 1:
        raise InvalidArgumentError(f"budget must lie in (0,1), got {kappa}")
    drops = frozenset(forced_drops)
    if not drops:
        return collection
    unknown = drops - collection.members
    if unknown:
        raise InvalidArgumentError(f"cannot drop non-members: {sorted(unknown)}")

    decomposition = generations(collection)
    cap = collection.depth_cap
    survivors: set[DyadicIndex] = set()
    kept_prev_cells: set[int] = set()
    for k, layer in enumerate(decomposition.layers):
        if k == 0:
            candidates = set(layer)
        else:
            # Only members below a surviving previous-layer member stay eligible.
            candidates = {
                member
                for member in layer
                if any(cell in kept_prev_cells for cell in member.cells(cap))
            }
        kept = candidates - drops
        lost_cells: set[int] = set()
        for member in candidates & drops:
            lost_cells.update(member.cells(cap))
        for member in kept:
            lost_cells.difference_update(member.cells(cap))
        budget = kappa / 2 ** (k + 1)
        loss = Fraction(len(lost_cells), 2**cap)
        if loss > budget:
            raise PruneBudgetError(
                f"layer {k} loss {loss} exceeds budget {budget}"
            )
        survivors.update(kept)
        kept_prev_cells = set()
        for member in kept:
            kept_prev_cells.update(member.cells(cap))
        if not kept:
            break
    if not survivors:
        raise PruneBudgetError("pruning removed every member")
    return IntervalCollection(frozenset(survivors), cap)


def epsilon_split(
    collection: IntervalCollection,
    signs: Mapping[DyadicIndex, int],
    k: int,
    ambient: IntervalCollection,
) -> tuple[frozenset[int], frozenset[int], frozenset[DyadicIndex], frozenset[DyadicIndex]]:
    """Split the coverage of a signed collection into its +1 and -1 sides.

    Returns (plus cells, minus cells, successors inside plus, successors
    inside minus); successors are the ambient collection's layer-k members
    contained in the respective side. Cells are at the ambient depth cap.
    """
    if not collection.is_pairwise_disjoint():
        raise InvalidCollectionError("signed collection must be pairwise disjoint")
    cap = ambient.depth_cap
    if collection.depth_cap > cap:
        raise InvalidArgumentError("collection depth cap exceeds ambient depth cap")
    for member in collection.members:
        if member not in signs:
            raise InvalidArgumentError(f"missing sign for {member}")
        if signs[member] not in (-1, 1):
            raise InvalidArgumentError(f"signs must be +-1, got {signs[member]}")
    in_ambient = collection.members & ambient.members
    if in_ambient == collection.members and collection.members:
        decomposition = generations(ambient)
        layer_of = {
            member: n
            for n, layer in enumerate(decomposition.layers)
            for member in layer
        }
        own_max = max(layer_of[m] for m in collection.members)
        if k < own_max:
            raise InvalidArgumentError(
                f"successor level {k} below the collection's layer {own_max}"
            )

    plus: set[int] = set()
    minus: set[int] = set()
    for member, sign in ((m, signs[m]) for m in collection.members):
        left_cells = member.left().cells(cap)
        right_cells = member.right().cells(cap)
        if sign == 1:
            plus.update(left_cells)
            minus.update(right_cells)
        else:
            plus.update(right_cells)
            minus.update(left_cells)

    decomposition = generations(ambient)
    if k < len(decomposition.layers):
        layer = decomposition.layers[k]
    else:
        layer = frozenset()
    succ_plus = frozenset(
        member for member in layer if set(member.cells(cap)) <= plus
    )
    succ_minus = frozenset(
        member for member in layer if set(member.cells(cap)) <= minus
    )
    return frozenset(plus), frozenset(minus), succ_plus, succ_minus


def eventual_choice_k0(
    ambient: IntervalCollection,
    collection: IntervalCollection,
    signs: Mapping[DyadicIndex, int],
    delta: Fraction | float,
) -> int:
    """Least layer from which both sign-split successor coverages stay dense.

    Scans k up to the last ambient layer; at each k the two successor
    coverages C must satisfy |C ∩ persistent| >= (1-delta)|C|. Returns the
    least k0 such that the check holds for every k in [k0, last layer].
    """
    delta = Fraction(delta).limit_denominator(2**40) if not isinstance(delta, Fraction) else delta
    if delta <= 0:
        raise InvalidArgumentError("delta must be positive")
    decomposition = generations(ambient)
    cap = ambient.depth_cap
    persistent = decomposition.persistent
    cov = collection.coverage_cells(cap)
    if cov:
        inside = len(set(cov) & persistent)
        if 2 * inside <= len(cov):
            raise InvalidArgumentError(
                "collection coverage retains at most half its persistent mass"
            )

    last = len(decomposition.layers) - 1
    ok: list[bool] = []
    for k in range(last + 1):
        _, _, succ_plus, succ_minus = epsilon_split(collection, signs, k, ambient)
        good = True
        for side in (succ_plus, succ_minus):
            cells: set[int] = set()
            for member in side:
                cells.update(member.cells(cap))
            if not cells:
                continue
            kept = len(cells & persistent)
            if Fraction(kept, len(cells)) < 1 - delta:
                good = False
                break
        ok.append(good)
    k0 = None
    for k in range(last, -1, -1):
        if not ok[k]:
            break
        k0 = k
    if k0 is None:
        raise DepthExhaustedError(
            "no layer satisfies the density requirement through the depth cap"
        )
    return k0


# ---------------------------------------------------------------------------
# Enumeration helpers
# ---------------------------------------------------------------------------


def level_intervals(level: int) -> list[DyadicIndex]:
    return [DyadicIndex.interval(level, i) for i in range(1, 2**level + 1)]


def all_intervals_up_to(max_level: int) -> list[DyadicIndex]:
    return list(
        itertools.chain.from_iterable(level_intervals(j) for j in range(max_level + 1))
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def index_to_json(index: DyadicIndex) -> dict:
    if index.is_empty:
        return {"kind": "empty"}
    return {"level": index.level, "position": index.position}


def index_from_json(payload: Mapping) -> DyadicIndex:
    if payload.get("kind") == "empty":
        return EMPTY
    try:
        return DyadicIndex.interval(int(payload["level"]), int(payload["position"]))
    except (KeyError, TypeError) as exc:
        raise SerializationError(f"malformed index record {payload!r}") from exc


def collection_to_json(collection: IntervalCollection) -> list[dict]:
    return [index_to_json(member) for member in collection]


def collection_from_json(
    payload: Sequence[Mapping], depth_cap: int
) -> IntervalCollection:
    return IntervalCollection.of((index_from_json(rec) for rec in payload), depth_cap)
