"""Norms on step functions, coefficient systems, and finite operators.

Covers the plain and mixed Lebesgue norms, the sup norm, square-function
norms (one- and two-parameter, plus the equivalent mixed-square norm), the
James norm on scalar sequences, two-sided operator-norm bounds, and ratio
probing for basis equivalence constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator, Sequence

import numpy as np

from .errors import InvalidArgumentError, UnsupportedExactError
from .stepfn import HaarCoefficients, StepFunction, analyze, pointwise_mul, synthesize

if TYPE_CHECKING:  # pragma: no cover - annotation only
    from .operators import OperatorMatrix

_KINDS = ("lp", "mixed", "sup", "hp", "hphq", "triple", "james")
_COEFFICIENT_KINDS = ("hp", "hphq", "triple")


@dataclass(frozen=True)
class NormSpec:
    """A norm selector: which functional to evaluate and with what exponents.

    ``exponents`` are finite reals in [1, inf); the essential-sup norm is its
    own kind rather than an infinite exponent.
    """

    kind: str
    exponents: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise InvalidArgumentError(f"unknown norm kind {self.kind!r}")
        exps = tuple(float(p) for p in self.exponents)
        object.__setattr__(self, "exponents", exps)
        expected = {"lp": 1, "hp": 1, "hphq": 2, "sup": 0, "james": 0}
        if self.kind in expected and len(exps) != expected[self.kind]:
            raise InvalidArgumentError(
                f"{self.kind} norm takes {expected[self.kind]} exponent(s)"
            )
        if self.kind in ("mixed", "triple") and not exps:
            raise InvalidArgumentError(f"{self.kind} norm needs an exponent tuple")
        for p in exps:
            if not math.isfinite(p) or p < 1.0:
                raise InvalidArgumentError(
                    f"exponent {p} outside [1, inf); use kind='sup' for the sup norm"
                )

    @staticmethod
    def lp(p: float) -> "NormSpec":
        return NormSpec("lp", (p,))

    @staticmethod
    def mixed(*exponents: float) -> "NormSpec":
        return NormSpec("mixed", tuple(exponents))

    @staticmethod
    def sup() -> "NormSpec":
        return NormSpec("sup")

    @staticmethod
    def hp(p: float) -> "NormSpec":
        return NormSpec("hp", (p,))

    @staticmethod
    def hphq(p: float, q: float) -> "NormSpec":
        return NormSpec("hphq", (p, q))

    @staticmethod
    def triple(*exponents: float) -> "NormSpec":
        return NormSpec("triple", tuple(exponents))

    @staticmethod
    def james() -> "NormSpec":
        return NormSpec("james")

    @property
    def dual_exponents(self) -> tuple[float, ...]:
        """Conjugate exponents, with ``inf`` conjugate to 1."""
        return tuple(math.inf if p == 1.0 else p / (p - 1.0) for p in self.exponents)

    @property
    def outside_hypothesis(self) -> bool:
        """True when a mixed-square norm is evaluated at an endpoint exponent.

        The equivalence backing that norm assumes every exponent is strictly
        between 1 and infinity; evaluation still proceeds, flagged.
        """
        return self.kind == "triple" and any(p == 1.0 for p in self.exponents)

    def to_json(self) -> dict:
        return {"kind": self.kind, "exponents": list(self.exponents)}

    @staticmethod
    def from_json(payload: dict) -> "NormSpec":
        return NormSpec(str(payload["kind"]), tuple(payload.get("exponents", ())))


def _iterated_norm(values: np.ndarray, exponents: Sequence[float]) -> float:
    """Innermost-axis-last iterated norm; tolerates infinite exponents."""
    work = np.abs(np.asarray(values, dtype=float))
    for axis in range(len(exponents) - 1, -1, -1):
        p = exponents[axis]
        if math.isinf(p):
            work = work.max(axis=axis)
        else:
            work = np.mean(work**p, axis=axis) ** (1.0 / p)
    return float(work)


def square_function(coeffs: HaarCoefficients) -> StepFunction:
    """Pointwise square function of a coefficient family, at full resolution.

    The squared tensor Haar functions are indicators, so the square equals
    the coefficient-squared sum of box indicators; no cancellation occurs.
    """
    res = [0] * coeffs.dims
    for key in coeffs.entries:
        for axis, idx in enumerate(key):
            if not idx.is_empty:
                res[axis] = max(res[axis], idx.level + 1)
    squares = np.zeros(tuple(2**n for n in res))
    for key, value in coeffs.entries.items():
        block = tuple(
            slice(idx.cells(n).start, idx.cells(n).stop)
            for idx, n in zip(key, res)
        )
        squares[block] += value * value
    return StepFunction(np.sqrt(squares))


def _as_step(x: StepFunction | HaarCoefficients) -> StepFunction:
    if isinstance(x, StepFunction):
        return x
    res = [1] * x.dims
    for key in x.entries:
        for axis, idx in enumerate(key):
            if not idx.is_empty:
                res[axis] = max(res[axis], idx.level + 1)
    return synthesize(x, res)


def _as_coefficients(x: StepFunction | HaarCoefficients) -> HaarCoefficients:
    if isinstance(x, HaarCoefficients):
        return x
    return analyze(x, convention="D+" if x.dims == 1 else "D")


def norm_eval(x: StepFunction | HaarCoefficients, spec: NormSpec) -> float:
    """Evaluate ``spec`` on a step function or coefficient family.

    Square-function kinds take coefficients (step functions are analyzed
    first); the remaining kinds take step functions (coefficients are
    synthesized first).  All evaluations are exact cell sums.
    """
    if spec.kind == "james":
        raise InvalidArgumentError(
            "the James norm applies to scalar sequences; call james_norm"
        )
    if spec.kind in _COEFFICIENT_KINDS:
        coeffs = _as_coefficients(x)
        if spec.kind != "hp" and len(spec.exponents) != coeffs.dims:
            raise InvalidArgumentError(
                f"{len(spec.exponents)} exponents for {coeffs.dims} parameters"
            )
        if spec.kind == "hphq" and coeffs.dims != 2:
            raise InvalidArgumentError("hphq norm is two-parameter")
        square = square_function(coeffs)
        if spec.kind == "hp":
            return _iterated_norm(square.values.ravel(), (spec.exponents[0],))
        return _iterated_norm(square.values, spec.exponents)
    f = _as_step(x)
    if spec.kind == "sup":
        return float(np.max(np.abs(f.values)))
    if spec.kind == "lp":
        return _iterated_norm(f.values.ravel(), (spec.exponents[0],))
    if len(spec.exponents) != f.dims:
        raise InvalidArgumentError(
            f"{len(spec.exponents)} exponents for {f.dims} parameters"
        )
    return _iterated_norm(f.values, spec.exponents)


def dual_space(spec: NormSpec) -> NormSpec:
    """The conjugate-exponent norm tag, when it is representable.

    The sup norm and exponent-1 norms are conjugate to each other; a mixed
    norm with an exponent-1 axis has a sup axis in its dual, which no tag
    expresses, so that case raises.
    """
    if spec.kind == "sup":
        return NormSpec.lp(1.0)
    if spec.kind not in ("lp", "mixed"):
        raise InvalidArgumentError(f"no dual tag for kind {spec.kind!r}")
    duals = spec.dual_exponents
    if any(math.isinf(q) for q in duals):
        if spec.kind == "lp" or all(math.isinf(q) for q in duals):
            return NormSpec.sup()
        raise InvalidArgumentError(
            "mixed dual with an endpoint exponent has no norm tag"
        )
    return NormSpec(spec.kind, duals)


def dual_norm(f: StepFunction | HaarCoefficients, spec: NormSpec) -> float:
    """Norm of ``f`` acting as an integration functional on the spec'd space.

    Exact by conjugate-exponent evaluation for the Lebesgue kinds.  For the
    square-function kinds with every exponent strictly above 1, the
    conjugate square-function norm is used; it represents the dual only up
    to the equivalence constants of the underlying spaces, and the endpoint
    (whose dual is not a function-space norm here) raises.
    """
    if spec.kind == "james":
        raise InvalidArgumentError("no dual-norm evaluation for the James kind")
    if spec.kind == "sup":
        return norm_eval(_as_step(f), NormSpec.lp(1.0))
    if spec.kind in _COEFFICIENT_KINDS:
        if any(p == 1.0 for p in spec.exponents):
            raise InvalidArgumentError(
                "endpoint square-function duals are outside this evaluation"
            )
        return norm_eval(f, NormSpec(spec.kind, spec.dual_exponents))
    step = _as_step(f)
    if spec.kind == "lp":
        q = spec.dual_exponents[0]
        flat = step.values.ravel()
        return float(np.max(np.abs(flat))) if math.isinf(q) else _iterated_norm(flat, (q,))
    if len(spec.exponents) != step.dims:
        raise InvalidArgumentError(
            f"{len(spec.exponents)} exponents for {step.dims} parameters"
        )
    return _iterated_norm(step.values, spec.dual_exponents)


def pairing(f: StepFunction | HaarCoefficients, g: StepFunction | HaarCoefficients) -> float:
    """Integral of the product over the unit cube, an exact cell sum."""
    fs, gs = _as_step(f), _as_step(g)
    if fs.dims != gs.dims:
        raise InvalidArgumentError(f"dims mismatch: {fs.dims} vs {gs.dims}")
    return pointwise_mul(fs, gs).integral()


def james_norm(a: Sequence[float]) -> float:
    """Largest root-sum-of-squares of block sums over consecutive blocks.

    Dynamic program over block endpoints: the best value for a prefix either
    ends a block at the prefix end or coincides with a shorter prefix.
    Skipping an entry never helps, since it can sit in its own block.
    """
    arr = np.asarray(list(a), dtype=float)
    n = arr.size
    if n == 0:
        return 0.0
    prefix = np.concatenate(([0.0], np.cumsum(arr)))
    best = np.zeros(n + 1)
    for i in range(1, n + 1):
        sums = prefix[i] - prefix[:i]
        best[i] = np.max(best[:i] + sums * sums)
    return float(math.sqrt(best[n]))


@dataclass(frozen=True)
class OperatorNormReport:
    """Two-sided bounds with the method that produced each side."""

    lower: float
    upper: float
    mode: str
    lower_method: str
    upper_method: str
    witness: dict | None = None

    def __post_init__(self) -> None:
        if self.lower > self.upper + 1e-12:
            raise InvalidArgumentError("lower bound exceeds upper bound")

    def __iter__(self) -> Iterator[float]:
        yield self.lower
        yield self.upper

    def to_json(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "mode": self.mode,
            "lower_method": self.lower_method,
            "upper_method": self.upper_method,
            "witness": self.witness,
        }


def _exact_endpoint_norm(T: "OperatorMatrix", which: str) -> tuple[float, dict]:
    """Extreme-point evaluation on the grid realization, batched by cells.

    ``which`` = "columns" gives the 1-norm (max mass of a cell image),
    "rows" the sup-norm (max mass of an adjoint cell image).
    """
    G = T.synthesis_matrix() @ T.entries  # grid values of T e_k, per column k
    E = T.dual_matrix()
    cells = E.shape[1]
    width = max(1, min(cells, 2_000_000 // max(1, cells)))
    best, arg = -1.0, 0
    if which == "columns":
        for start in range(0, cells, width):
            block = np.abs(G @ E[:, start : start + width]).sum(axis=0)
            k = int(np.argmax(block))
            if block[k] > best:
                best, arg = float(block[k]), start + k
    else:
        for start in range(0, cells, width):
            block = np.abs(G[start : start + width, :] @ E).sum(axis=1)
            k = int(np.argmax(block))
            if block[k] > best:
                best, arg = float(block[k]), start + k
    return best, {"cell": arg}


def _power_iteration_sigma(T: "OperatorMatrix", seed: int, iters: int = 300) -> float:
    """Top singular value of the grid realization, from below."""
    S = T.synthesis_matrix()
    E = T.dual_matrix()
    A = T.entries
    rng = np.random.default_rng([seed, 0x51])
    v = rng.standard_normal(E.shape[1])
    sigma = 0.0
    for _ in range(iters):
        w = S @ (A @ (E @ v))
        back = E.T @ (A.T @ (S.T @ w))
        scale = np.linalg.norm(back)
        if scale == 0.0:
            return 0.0
        sigma = float(np.linalg.norm(w) / np.linalg.norm(v))
        v = back / scale
    return sigma


def probe_vectors(n: int, trials: int, seed: int) -> list[tuple[str, np.ndarray]]:
    """Deterministic probe family: all unit vectors, then seeded random draws.

    Random draws cycle Gaussian / Rademacher / sparse (support <= 3); each
    draw uses its own counter-split generator so reports are reproducible
    and order-independent.
    """
    probes: list[tuple[str, np.ndarray]] = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        probes.append((f"unit:{i}", e))
    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        style = k % 3
        if style == 0:
            probes.append((f"gauss:{k}", rng.standard_normal(n)))
        elif style == 1:
            probes.append((f"rademacher:{k}", rng.integers(0, 2, n) * 2.0 - 1.0))
        else:
            support = rng.choice(n, size=min(3, n), replace=False)
            vec = np.zeros(n)
            vec[support] = rng.standard_normal(support.size)
            probes.append((f"sparse:{k}", vec))
    return probes


def operator_norm(
    T: "OperatorMatrix",
    spec: NormSpec,
    mode: str = "estimate",
    trials: int = 200,
    seed: int = 0,
) -> OperatorNormReport:
    """Two-sided bounds on the operator norm of the grid realization of T.

    Exact mode exists only at the endpoints: domain/range L^1 (max image
    mass over grid cells, the extreme points of the ball) and sup (the same
    evaluation on the adjoint).  Estimate mode reports the best realized
    probe ratio below and the smallest of three certified relaxations above:
    the normalized-column mass sum, endpoint interpolation, and (exponent 2,
    moderate grids) the exact spectral value.
    """
    if spec.kind not in ("lp", "mixed", "sup"):
        raise InvalidArgumentError(f"operator norms are not defined for {spec.kind!r}")
    if mode not in ("exact", "estimate"):
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    if mode == "exact":
        if spec.kind == "lp" and spec.exponents[0] == 1.0:
            value, witness = _exact_endpoint_norm(T, "columns")
            return OperatorNormReport(value, value, "exact", "cell-extreme", "cell-extreme", witness)
        if spec.kind == "sup":
            value, witness = _exact_endpoint_norm(T, "rows")
            return OperatorNormReport(value, value, "exact", "cell-extreme", "cell-extreme", witness)
        raise UnsupportedExactError(
            "exact operator norms exist only for exponent 1 and the sup norm"
        )

    S = T.synthesis_matrix()
    G = S @ T.entries
    shape = tuple(2**r for r in T.grid_resolution)
    dims = len(shape)
    if spec.kind != "sup" and spec.kind != "lp" and len(spec.exponents) != dims:
        raise InvalidArgumentError(
            f"{len(spec.exponents)} exponents for {dims} parameters"
        )

    def measure(values_flat: np.ndarray) -> float:
        if spec.kind == "sup":
            return float(np.max(np.abs(values_flat)))
        if spec.kind == "lp":
            return _iterated_norm(values_flat.ravel(), (spec.exponents[0],))
        return _iterated_norm(values_flat.reshape(shape), spec.exponents)

    lower, lower_method, witness = 0.0, "probe", None
    for name, a in probe_vectors(len(T.basis), trials, seed):
        den = measure(S @ a)
        if den == 0.0:
            continue
        ratio = measure(G @ a) / den
        if ratio > lower:
            lower, lower_method = ratio, name
            witness = {"probe": name, "coefficients": [float(c) for c in a]}

    uppers: list[tuple[float, str]] = []
    dual = _dual_spec_exponents(spec, dims)
    column_mass = 0.0
    E = T.dual_matrix()
    cell_volume = 1.0 / S.shape[0]
    for k in range(len(T.basis)):
        functional = E[k, :] / cell_volume
        column = G[:, k]
        column_mass += _measure_by(dual, functional, shape) * measure(column)
    uppers.append((column_mass, "column-mass"))
    if spec.kind == "lp":
        p = spec.exponents[0]
        one, _ = _exact_endpoint_norm(T, "columns")
        top, _ = _exact_endpoint_norm(T, "rows")
        uppers.append((one ** (1.0 / p) * top ** (1.0 - 1.0 / p), "interpolation"))
        if p == 2.0:
            if S.shape[0] <= 2048:
                sigma = float(np.linalg.norm(G @ E, 2))
                uppers.append((sigma, "spectral"))
                if sigma > lower:
                    lower, lower_method = sigma, "spectral"
            else:
                sigma = _power_iteration_sigma(T, seed)
                if sigma > lower:
                    lower, lower_method = sigma, "power-iteration"
    if spec.kind == "sup":
        top, _ = _exact_endpoint_norm(T, "rows")
        uppers.append((top, "cell-extreme"))
    upper, upper_method = min(uppers)
    lower = min(lower, upper)
    return OperatorNormReport(lower, upper, "estimate", lower_method, upper_method, witness)


def _dual_spec_exponents(spec: NormSpec, dims: int) -> tuple[float, ...]:
    if spec.kind == "sup":
        return (1.0,)
    if spec.kind == "lp":
        p = spec.exponents[0]
        return (math.inf,) if p == 1.0 else (p / (p - 1.0),)
    return spec.dual_exponents


def _measure_by(exponents: tuple[float, ...], values_flat: np.ndarray, shape: tuple[int, ...]) -> float:
    cube = values_flat.reshape(shape)
    if len(exponents) == 1:
        flat = np.abs(cube)
        if math.isinf(exponents[0]):
            return float(flat.max())
        return float(np.mean(flat ** exponents[0]) ** (1.0 / exponents[0]))
    return _iterated_norm(cube, exponents)


@dataclass(frozen=True)
class RatioReport:
    """Extremal norm ratios over a probe family, with realizing witnesses."""

    min_ratio: float
    max_ratio: float
    trials: int
    degenerate: int
    witness_min: tuple[float, ...]
    witness_max: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.min_ratio > self.max_ratio:
            raise InvalidArgumentError("min ratio exceeds max ratio")

    @property
    def best_constant_lower(self) -> float:
        """Smallest C compatible with all ratios lying in [C^-1/2, C^1/2]."""
        return max(self.max_ratio**2, self.min_ratio**-2 if self.min_ratio > 0 else math.inf, 1.0)

    def certifies_violation(self, constant: float) -> bool:
        root = math.sqrt(constant)
        return self.max_ratio > root or self.min_ratio < 1.0 / root

    def to_json(self) -> dict:
        return {
            "min_ratio": self.min_ratio,
            "max_ratio": self.max_ratio,
            "trials": self.trials,
            "degenerate": self.degenerate,
            "witness_min": list(self.witness_min),
            "witness_max": list(self.witness_max),
        }

    @staticmethod
    def from_json(payload: dict) -> "RatioReport":
        return RatioReport(
            float(payload["min_ratio"]),
            float(payload["max_ratio"]),
            int(payload["trials"]),
            int(payload["degenerate"]),
            tuple(float(c) for c in payload["witness_min"]),
            tuple(float(c) for c in payload["witness_max"]),
        )


def equivalence_probe(
    X: Sequence[StepFunction | HaarCoefficients],
    Y: Sequence[StepFunction | HaarCoefficients],
    spec_x: NormSpec,
    spec_y: NormSpec,
    trials: int = 300,
    seed: int = 0,
) -> RatioReport:
    """Extremal ratios ||sum a_i x_i|| / ||sum a_i y_i|| over seeded probes.

    A ratio outside [C^-1/2, C^1/2] certifies that the systems are not
    impartially C-equivalent; the report only bounds the best constant from
    below, never certifies it.  Probes with a zero denominator are discarded
    and counted.
    """
    if len(X) != len(Y) or not X:
        raise InvalidArgumentError("basis lists must be equal-length and nonempty")
    VX = _stack_values(X)
    VY = _stack_values(Y)
    min_ratio, max_ratio = math.inf, -math.inf
    wit_min: tuple[float, ...] = ()
    wit_max: tuple[float, ...] = ()
    degenerate = 0
    probes = probe_vectors(len(X), trials, seed)
    for _, a in probes:
        den = norm_eval(StepFunction((a @ VY[0]).reshape(VY[1])), spec_y)
        if den == 0.0:
            degenerate += 1
            continue
        num = norm_eval(StepFunction((a @ VX[0]).reshape(VX[1])), spec_x)
        ratio = num / den
        if ratio < min_ratio:
            min_ratio, wit_min = ratio, tuple(float(c) for c in a)
        if ratio > max_ratio:
            max_ratio, wit_max = ratio, tuple(float(c) for c in a)
    if not wit_min and not wit_max:
        raise InvalidArgumentError("every probe was degenerate")
    return RatioReport(min_ratio, max_ratio, len(probes), degenerate, wit_min, wit_max)


def _stack_values(
    basis: Sequence[StepFunction | HaarCoefficients],
) -> tuple[np.ndarray, tuple[int, ...]]:
    steps = [_as_step(x) for x in basis]
    dims = steps[0].dims
    if any(s.dims != dims for s in steps):
        raise InvalidArgumentError("basis elements must share dimensionality")
    res = tuple(max(s.resolution[axis] for s in steps) for axis in range(dims))
    refined = [s.refine(res) for s in steps]
    shape = refined[0].values.shape
    return np.stack([s.values.ravel() for s in refined]), shape
