"""Piecewise-constant functions on [0,1)^d and the Haar transform.

A StepFunction stores cell values on a dyadic grid, C-ordered with axis 1
outermost (axis d varies fastest), matching iterated integrals whose innermost
integral runs over the last coordinate. Coefficient arrays use the slot
convention: per axis, slot 0 is the constant component and slot k >= 1 belongs
to the interval with order position k.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dyadic import EMPTY, DyadicIndex, interval_from_index, interval_index
from .errors import (
    InvalidArgumentError,
    MeanNotZeroError,
    ResolutionError,
    SerializationError,
    UnsupportedDimensionError,
)

__all__ = [
    "StepFunction",
    "HaarCoefficients",
    "haar_function",
    "analyze",
    "synthesize",
    "pointwise_mul",
    "forward_slots",
    "inverse_slots",
]

IndexTuple = tuple[DyadicIndex, ...]


@dataclass(frozen=True)
class StepFunction:
    """A function constant on dyadic grid cells.

    values has shape (2^{n_1}, ..., 2^{n_d}) for per-axis resolutions n_s.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        for size in arr.shape:
            if size & (size - 1) or size == 0:
                raise InvalidArgumentError(
                    f"grid sizes must be powers of two, got shape {arr.shape}"
                )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    # -- basic queries -------------------------------------------------------

    @property
    def dims(self) -> int:
        return self.values.ndim

    @property
    def resolution(self) -> tuple[int, ...]:
        return tuple(int(size).bit_length() - 1 for size in self.values.shape)

    def integral(self) -> float:
        return float(self.values.mean())

    def axis_means(self, axis: int) -> np.ndarray:
        return self.values.mean(axis=axis)

    # -- constructors --------------------------------------------------------

    @staticmethod
    def constant(value: float, resolution: Sequence[int] | int) -> "StepFunction":
        res = _as_resolution(resolution)
        shape = tuple(2**n for n in res)
        return StepFunction(np.full(shape, float(value)))

    @staticmethod
    def from_values(values: np.ndarray) -> "StepFunction":
        return StepFunction(np.asarray(values, dtype=np.float64))

    # -- algebra -------------------------------------------------------------

    def refine(self, resolution: Sequence[int] | int) -> "StepFunction":
        """Re-grid to a finer resolution; values are preserved pointwise."""
        res = _as_resolution(resolution)
        if len(res) != self.dims:
            raise InvalidArgumentError("refinement must keep the dimension")
        arr = self.values
        for axis, (old, new) in enumerate(zip(self.resolution, res)):
            if new < old:
                raise ResolutionError(
                    f"cannot coarsen axis {axis} from {old} to {new}"
                )
            if new > old:
                arr = np.repeat(arr, 2 ** (new - old), axis=axis)
        return StepFunction(arr)

    def __add__(self, other: "StepFunction") -> "StepFunction":
        a, b = _common_grid(self, other)
        return StepFunction(a.values + b.values)

    def __sub__(self, other: "StepFunction") -> "StepFunction":
        a, b = _common_grid(self, other)
        return StepFunction(a.values - b.values)

    def __mul__(self, scalar: float) -> "StepFunction":
        return StepFunction(self.values * float(scalar))

    __rmul__ = __mul__

    def __abs__(self) -> "StepFunction":
        return StepFunction(np.abs(self.values))

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "dims": self.dims,
            "resolution": list(self.resolution),
            "values": [float(v) for v in self.values.ravel()],
        }

    @staticmethod
    def from_json(payload: Mapping) -> "StepFunction":
        try:
            dims = int(payload["dims"])
            res = payload["resolution"]
            res = [int(res)] * dims if isinstance(res, int) else [int(r) for r in res]
            values = np.array(payload["values"], dtype=np.float64)
            return StepFunction(values.reshape(tuple(2**n for n in res)))
        except (KeyError, TypeError, ValueError) as exc:
            raise SerializationError(f"malformed step function payload: {exc}") from exc


def _as_resolution(resolution: Sequence[int] | int) -> tuple[int, ...]:
    if isinstance(resolution, int):
        return (resolution,)
    out = tuple(int(r) for r in resolution)
    if not out or any(r < 0 for r in out):
        raise InvalidArgumentError(f"bad resolution {resolution!r}")
    return out


def _common_grid(a: StepFunction, b: StepFunction) -> tuple[StepFunction, StepFunction]:
    if a.dims != b.dims:
        raise UnsupportedDimensionError(
            f"dimension mismatch: {a.dims} vs {b.dims}"
        )
    res = tuple(max(x, y) for x, y in zip(a.resolution, b.resolution))
    return a.refine(res), b.refine(res)


@dataclass(frozen=True)
class HaarCoefficients:
    """Finitely supported coefficients keyed by index tuples.

    convention "D" spans mean-zero tensor Haar functions only; "D+" (one
    parameter) additionally admits the constant via the empty symbol.
    """

    dims: int
    entries: Mapping[IndexTuple, float]
    convention: str = "D"

    def __post_init__(self) -> None:
        if self.convention not in ("D", "D+"):
            raise InvalidArgumentError(f"unknown convention {self.convention!r}")
        if self.convention == "D+" and self.dims != 1:
            raise UnsupportedDimensionError(
                "the constant-including convention is one-parameter only"
            )
        normalized: dict[IndexTuple, float] = {}
        for key, value in self.entries.items():
            key = (key,) if isinstance(key, DyadicIndex) else tuple(key)
            if len(key) != self.dims:
                raise InvalidArgumentError(
                    f"index tuple {key} has wrong arity for dims={self.dims}"
                )
            for idx in key:
                if idx.is_empty and self.convention != "D+":
                    raise InvalidArgumentError(
                        "empty symbol requires the D+ convention"
                    )
            normalized[key] = float(value)
        object.__setattr__(self, "entries", normalized)

    def max_level(self) -> int:
        out = 0
        for key in self.entries:
            for idx in key:
                if not idx.is_empty:
                    out = max(out, idx.level)
        return out

    def to_json(self) -> list:
        records = []
        for key in sorted(self.entries, key=_key_sort):
            factors = [
                {"kind": "empty"} if idx.is_empty else
                {"level": idx.level, "position": idx.position}
                for idx in key
            ]
            records.append({"index": factors, "value": self.entries[key]})
        return records


def _key_sort(key: IndexTuple) -> tuple:
    return tuple(
        (-1, 0) if idx.is_empty else (idx.level, idx.position) for idx in key
    )


# ---------------------------------------------------------------------------
# Haar functions
# ---------------------------------------------------------------------------


def haar_function(
    idx: IndexTuple | DyadicIndex, resolution: Sequence[int] | int
) -> StepFunction:
    """The tensor Haar function for an index tuple, on the requested grid."""
    key = (idx,) if isinstance(idx, DyadicIndex) else tuple(idx)
    res = _as_resolution(resolution)
    if len(res) != len(key):
        raise InvalidArgumentError(
            f"resolution arity {len(res)} != index arity {len(key)}"
        )
    axes = []
    for idx_s, n in zip(key, res):
        axes.append(_haar_axis(idx_s, n))
    out = axes[0]
    for axis_values in axes[1:]:
        out = np.multiply.outer(out, axis_values)
    return StepFunction(out)


def _haar_axis(idx: DyadicIndex, resolution: int) -> np.ndarray:
    if idx.is_empty:
        return np.ones(2**resolution)
    if resolution < idx.level + 1:
        raise ResolutionError(
            f"resolution {resolution} cannot resolve level {idx.level} plateaus"
        )
    out = np.zeros(2**resolution)
    width = 2 ** (resolution - idx.level)
    start = (idx.position - 1) * width
    out[start : start + width // 2] = 1.0
    out[start + width // 2 : start + width] = -1.0
    return out


# ---------------------------------------------------------------------------
# Fast slot transforms
# ---------------------------------------------------------------------------


def forward_slots(values: np.ndarray) -> np.ndarray:
    """Haar-analyze every axis; slot k >= 1 is a_{interval k}, slot 0 the mean."""
    arr = np.asarray(values, dtype=np.float64)
    for axis in range(arr.ndim):
        arr = _forward_axis(arr, axis)
    return arr


def inverse_slots(slots: np.ndarray) -> np.ndarray:
    arr = np.asarray(slots, dtype=np.float64)
    for axis in range(arr.ndim):
        arr = _inverse_axis(arr, axis)
    return arr


def _forward_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(arr, axis, -1)
    shape = moved.shape
    n = shape[-1].bit_length() - 1
    flat = moved.reshape(-1, shape[-1])
    out = np.empty_like(flat)
    means = flat
    for j in range(n - 1, -1, -1):
        left = means[:, 0::2]
        right = means[:, 1::2]
        out[:, 2**j : 2 ** (j + 1)] = (left - right) / 2.0
        means = (left + right) / 2.0
    out[:, 0] = means[:, 0]
    return np.moveaxis(out.reshape(shape), -1, axis)


def _inverse_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(arr, axis, -1)
    shape = moved.shape
    n = shape[-1].bit_length() - 1
    flat = moved.reshape(-1, shape[-1])
    means = flat[:, :1].copy()
    for j in range(n):
        coefs = flat[:, 2**j : 2 ** (j + 1)]
        nxt = np.empty((flat.shape[0], 2 ** (j + 1)))
        nxt[:, 0::2] = means + coefs
        nxt[:, 1::2] = means - coefs
        means = nxt
    return np.moveaxis(means.reshape(shape), -1, axis)


# ---------------------------------------------------------------------------
# analyze / synthesize
# ---------------------------------------------------------------------------

_ZERO_TOL = 1e-12


def analyze(f: StepFunction, convention: str = "D") -> HaarCoefficients:
    """Expand a step function over the tensor Haar system.

    Under convention D every slot touching a constant axis component must
    vanish (all per-axis slice means are zero); under D+ (one parameter) the
    constant slot becomes the empty-symbol coefficient.
    """
    if convention == "D+" and f.dims != 1:
        raise UnsupportedDimensionError(
            "the constant-including convention is one-parameter only"
        )
    slots = forward_slots(f.values)
    scale = float(np.max(np.abs(f.values))) or 1.0
    entries: dict[IndexTuple, float] = {}
    for flat_index in np.ndindex(slots.shape):
        value = float(slots[flat_index])
        if any(k == 0 for k in flat_index):
            if convention == "D":
                if abs(value) > _ZERO_TOL * scale:
                    raise MeanNotZeroError(
                        "mean-zero convention with nonzero constant component "
                        f"at slots {flat_index}: {value}"
                    )
                continue
            # D+, d=1: the single zero slot is the empty-symbol coefficient
            if value != 0.0:
                entries[(EMPTY,)] = value
            continue
        if value != 0.0:
            key = tuple(interval_from_index(k) for k in flat_index)
            entries[key] = value
    return HaarCoefficients(dims=f.dims, entries=entries, convention=convention)


def synthesize(
    coeffs: HaarCoefficients, resolution: Sequence[int] | int
) -> StepFunction:
    """Pointwise sum of coefficient-weighted tensor Haar functions."""
    res = _as_resolution(resolution)
    if len(res) != coeffs.dims:
        raise InvalidArgumentError(
            f"resolution arity {len(res)} != dims {coeffs.dims}"
        )
    for key in coeffs.entries:
        for idx, n in zip(key, res):
            if not idx.is_empty and n < idx.level + 1:
                raise ResolutionError(
                    f"axis resolution {n} cannot resolve level {idx.level}"
                )
    slots = np.zeros(tuple(2**n for n in res))
    for key, value in coeffs.entries.items():
        flat_index = tuple(
            0 if idx.is_empty else interval_index(idx) for idx in key
        )
        slots[flat_index] = value
    return StepFunction(inverse_slots(slots))


def pointwise_mul(f: StepFunction, g: StepFunction) -> StepFunction:
    """Cellwise product at the common refinement."""
    a, b = _common_grid(f, g)
    return StepFunction(a.values * b.values)
