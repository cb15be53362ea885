"""Command-line front end: configuration, orchestration, report emission.

Every subcommand resolves its parameters (flags over config-file values over
defaults), runs one module pipeline, writes a JSON artifact with timings in a
separate top-level field, prints a one-line verdict, and exits 0 on pass,
1 on pipeline failure or failed verdict, 2 on usage errors.  All randomness
flows from the single --seed; batch trials derive per-trial generators by
index, so worker count never changes the output.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .dyadic import DyadicIndex
from .errors import HaarforgeError
from .factor import factor_pipeline, first_axis_projection, tensor_factor_l1l1, tensor_universe
from .game import (
    GameConfig,
    NullAdversary,
    RandomFunctionalAdversary,
    check_win,
    run_game,
)
from .norms import NormSpec, james_norm, norm_eval, operator_norm
from .operators import (
    MultiplierEntries,
    OperatorMatrix,
    build_multiplier,
    chain_variation,
    haar_truncation,
)
from .stepfn import HaarCoefficients
from .strategies import (
    check_freshness,
    gg_strategy,
    l1_strategy,
    system_from_transcript,
    system_probe_report,
    validate_system,
)

MAX_DEPTH_ONE = 14
MAX_DEPTH_PER_AXIS = 7


class UsageError(Exception):
    """A structurally valid invocation with unusable parameter values."""


def thread_cap() -> int:
    """Worker bound for batch trials, from HAARFORGE_THREADS (default 1)."""
    raw = os.environ.get("HAARFORGE_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"HAARFORGE_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise UsageError("HAARFORGE_THREADS must be at least 1")
    return value


def parse_space(text: str) -> NormSpec:
    token = text.strip().lower()
    fixed = {
        "l1": NormSpec.lp(1.0),
        "l2": NormSpec.lp(2.0),
        "h1": NormSpec.hp(1.0),
        "sup": NormSpec.sup(),
    }
    if token in fixed:
        return fixed[token]
    kind, sep, rest = token.partition(":")
    if sep:
        try:
            values = tuple(float(v) for v in rest.split(","))
        except ValueError:
            raise UsageError(f"bad exponents in space {text!r}")
        makers = {
            "lp": NormSpec.lp,
            "hp": NormSpec.hp,
            "hphq": NormSpec.hphq,
            "mixed": NormSpec.mixed,
            "triple": NormSpec.triple,
        }
        if kind in makers:
            try:
                return makers[kind](*values)
            except (HaarforgeError, TypeError) as exc:
                raise UsageError(f"bad space {text!r}: {exc}")
    raise UsageError(f"unknown space {text!r}")


def parse_vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise UsageError(f"bad vector {text!r}")


def trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def check_depth(depth: int, *, axes: int = 1) -> None:
    cap = MAX_DEPTH_ONE if axes == 1 else MAX_DEPTH_PER_AXIS
    if depth < 1 or depth > cap:
        raise UsageError(f"depth {depth} outside [1, {cap}]")


def write_artifact(path: str, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text)


def artifact(command: str, settings: dict, result: dict, timings: dict) -> dict:
    return {
        "command": command,
        "settings": settings,
        "result": result,
        "timings": timings,
    }


def ratio_window(kappa: float) -> float:
    return math.sqrt(1.0 + kappa)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_norms_eval(args: dict) -> int:
    spec_text = args["spec"]
    vector = parse_vector(args["vector"])
    if not vector:
        raise UsageError("the vector must be nonempty")
    tick = time.perf_counter()
    if spec_text.strip().lower() == "james":
        value = james_norm(vector)
        detail = {"spec": "james", "vector": vector, "value": value}
    else:
        spec = parse_space(spec_text)
        n = len(vector)
        if n & (n - 1) == 0:
            convention, depth = "D+", n.bit_length() - 1
        elif (n + 1) & n == 0:
            convention, depth = "D", (n + 1).bit_length() - 1
        else:
            raise UsageError(
                f"vector length {n} fits no truncation (need 2^R or 2^R - 1)"
            )
        check_depth(max(depth, 1))
        keys = haar_truncation(1, max(depth, 1), convention) if depth else (
            haar_truncation(1, 1, "D+")[:1]
        )
        if len(keys) != n:
            keys = keys[:n]
        coeffs = HaarCoefficients(
            1, dict(zip(keys, vector)), convention
        )
        value = norm_eval(coeffs, spec)
        detail = {
            "spec": spec.to_json(),
            "vector": vector,
            "value": value,
            "convention": convention,
            "depth": depth,
        }
    elapsed = time.perf_counter() - tick
    write_artifact(
        args["out"],
        artifact("norms eval", {"spec": spec_text, "vector": args["vector"]},
                 detail, {"eval": elapsed}),
    )
    print(f"PASS norm={value!r}")
    return 0


def _game_config(space: NormSpec, args: dict) -> GameConfig:
    integral = space.kind == "lp" and space.exponents[0] == 1.0
    return GameConfig(
        dims=1,
        space=space,
        C=args["C"],
        eta=args["eta"],
        rounds=args["rounds"],
        depth_cap=args["depth"],
        convention="D+" if integral else "D",
        partitioned=integral,
        seed=args["seed"],
    )


def _pick_strategy(space: NormSpec, config: GameConfig):
    if space.kind == "lp" and space.exponents[0] == 1.0:
        return l1_strategy(config)
    return gg_strategy(space, config)


def _pick_adversary(name: str, seed: int, config: GameConfig):
    if name == "null":
        return NullAdversary()
    if name == "random":
        partition = "level-parity" if config.partitioned else "parity"
        return RandomFunctionalAdversary(
            seed=seed, count=2, partition_name=partition, level_band=4
        )
    raise UsageError(f"unknown adversary {name!r}")


def _dual_evaluable(space: NormSpec) -> bool:
    if space.kind in ("lp", "sup"):
        return True
    return all(p > 1.0 for p in space.exponents)


def cmd_game_run(args: dict) -> int:
    space = parse_space(args["space"])
    check_depth(args["depth"])
    config = _game_config(space, args)
    adversary = _pick_adversary(args["adversary"], args["seed"], config)
    strategy = _pick_strategy(space, config)
    tick = time.perf_counter()
    transcript = run_game(adversary, strategy, config)
    played = time.perf_counter() - tick
    tick = time.perf_counter()
    if _dual_evaluable(space):
        report = check_win(transcript, trials=args["trials"], seed=args["seed"])
        audit = {"mode": "full", "win": report.to_json()}
        ok = bool(report.overall)
        detail = (
            f"primal=[{report.equiv_primal.min_ratio:.6f},"
            f"{report.equiv_primal.max_ratio:.6f}]"
        )
    else:
        fresh = check_freshness(transcript)
        weights = all(
            1.0 - config.eta < r.responder.weight_sum < 1.0 + config.eta
            for r in transcript.rounds
        )
        verdict = validate_system(system_from_transcript(transcript), kappa=0.1)
        ok = fresh and weights and bool(verdict["ok"])
        audit = {
            "mode": "system",
            "fresh": fresh,
            "weights": weights,
            "hypotheses": {key: bool(verdict[key]) for key in "abcd"},
        }
        detail = f"fresh={fresh} weights={'ok' if weights else 'out'}"
    audited = time.perf_counter() - tick
    settings = {k: args[k] for k in ("space", "adversary", "rounds", "depth",
                                     "eta", "C", "trials", "seed")}
    write_artifact(
        args["out"],
        artifact("game run", settings,
                 {"transcript": transcript.to_json(), "audit": audit},
                 {"game": played, "audit": audited}),
    )
    print(
        f"{'PASS' if ok else 'FAIL'} strategy={strategy.name} "
        f"adversary={adversary.name} rounds={len(transcript.rounds)} {detail}"
    )
    return 0 if ok else 1


def cmd_validate_gg(args: dict) -> int:
    space = parse_space(args["space"])
    check_depth(args["depth"])
    config = _game_config(space, args)
    adversary = _pick_adversary(args["adversary"], args["seed"], config)
    strategy = _pick_strategy(space, config)
    tick = time.perf_counter()
    transcript = run_game(adversary, strategy, config)
    played = time.perf_counter() - tick
    tick = time.perf_counter()
    system = system_from_transcript(transcript)
    verdict = validate_system(system, kappa=args["kappa"])
    probes = system_probe_report(system, trials=args["trials"], seed=args["seed"])
    audited = time.perf_counter() - tick
    window = ratio_window(args["kappa"])
    sup, l1 = probes["sup"], probes["l1"]
    ratios_ok = (
        abs(sup.min_ratio - 1.0) <= 1e-12
        and abs(sup.max_ratio - 1.0) <= 1e-12
        and 1.0 / window <= l1.min_ratio
        and l1.max_ratio <= window
    )
    ok = bool(verdict["ok"]) and ratios_ok
    settings = {k: args[k] for k in ("space", "adversary", "rounds", "depth",
                                     "eta", "C", "kappa", "trials", "seed")}
    result = {
        "hypotheses": {key: bool(verdict[key]) for key in ("a", "b", "c", "d")},
        "halving_defect": float(verdict["halving_defect"]),
        "probes": {"sup": sup.to_json(), "l1": l1.to_json()},
        "window": window,
        "ok": ok,
    }
    write_artifact(
        args["out"],
        artifact("validate gg", settings, result,
                 {"game": played, "audit": audited}),
    )
    hyp = " ".join(f"{key}={'yes' if verdict[key] else 'no'}" for key in "abcd")
    print(
        f"{'PASS' if ok else 'FAIL'} {hyp} "
        f"sup=[{sup.min_ratio:.6f},{sup.max_ratio:.6f}] "
        f"l1=[{l1.min_ratio:.6f},{l1.max_ratio:.6f}]"
    )
    return 0 if ok else 1


def planted_symbol(
    keys, rng, delta: float, eta: float, eps: float, root: DyadicIndex
) -> dict:
    """Entries +-[delta,1] with the variation kept off one subtree."""
    calm_value = delta + 0.02
    jitter = (1.0 - eta) * delta * eps / (1.0 + eps) / 64.0
    entries = {}
    for key in keys:
        idx = key[-1]
        lead_empty = all(part.is_empty for part in key[:-1])
        calm = (
            lead_empty
            and not idx.is_empty
            and (idx == root or root.strictly_contains(idx))
        )
        if calm:
            entries[key] = calm_value + float(rng.uniform(-jitter, jitter))
        else:
            entries[key] = float(rng.choice([-1.0, 1.0]) * rng.uniform(delta, 1.0))
    return entries


def _certificate_payload(cert) -> tuple[dict, dict]:
    payload = cert.to_json()
    timings = payload.pop("timings")
    return payload, timings


def _norm_product_verdict(cert, residual_cap: float) -> tuple[bool, str]:
    exact = cert.norm_product.lower == cert.norm_product.upper
    measured = cert.norm_product.upper if exact else cert.norm_product.lower
    ok = (
        cert.residual.upper <= residual_cap
        and measured <= cert.predicted_bound + 1e-12
    )
    line = (
        f"norm_product={cert.norm_product.upper:.6f} "
        f"residual={cert.residual.upper:.3e} "
        f"predicted={cert.predicted_bound:.6f} route={cert.route}"
    )
    return ok, line


def cmd_factor_run(args: dict) -> int:
    space = parse_space(args["space"])
    check_depth(args["depth"])
    delta, eta = args["delta"], args["eta"]
    if not 0 < delta < 1:
        raise UsageError("delta must lie in (0, 1)")
    if not 0 < eta < delta:
        raise UsageError("eta must lie in (0, delta)")
    rng = trial_rng(args["seed"], 0)
    integral = space.kind == "lp" and space.exponents[0] == 1.0
    tick = time.perf_counter()
    if integral:
        keys = haar_truncation(1, args["depth"], "D+")
        level = max(0, min(2, args["depth"] - 2))
        position = int(rng.integers(1, 2**level + 1))
        root = DyadicIndex.interval(level, position)
        entries = planted_symbol(keys, rng, delta, eta, args["eps"], root)
        T = build_multiplier(MultiplierEntries(1, entries), space)
    else:
        keys = haar_truncation(1, args["depth"], "D")
        n = len(keys)
        matrix = np.diag(rng.uniform(delta, 1.0, n))
        if args["noise"] > 0:
            noise = rng.uniform(-args["noise"], args["noise"], (n, n))
            np.fill_diagonal(noise, 0.0)
            matrix = matrix + noise
        T = OperatorMatrix(keys, matrix, space)
    built = time.perf_counter() - tick
    cert = factor_pipeline(T, delta, space, eta, eps=args["eps"])
    payload, timings = _certificate_payload(cert)
    timings["build"] = built
    settings = {k: args[k] for k in ("space", "delta", "depth", "eta", "eps",
                                     "noise", "seed")}
    write_artifact(args["out"], artifact("factor run", settings, payload, timings))
    ok, line = _norm_product_verdict(cert, args["residual_cap"])
    print(f"{'PASS' if ok else 'FAIL'} {line}")
    return 0 if ok else 1


def cmd_factor_tensor(args: dict) -> int:
    depths = args["depth"]
    if isinstance(depths, str):
        try:
            depths = tuple(int(v) for v in depths.split(","))
        except ValueError:
            raise UsageError(f"bad tensor depth {args['depth']!r}")
    else:
        depths = tuple(int(v) for v in depths)
    if len(depths) != 2:
        raise UsageError("tensor depth needs two axes, like 4,4")
    for depth in depths:
        check_depth(depth, axes=2)
    delta, eta = args["delta"], args["eta"]
    if not 0 < delta < 1:
        raise UsageError("delta must lie in (0, 1)")
    if not 0 < eta < delta:
        raise UsageError("eta must lie in (0, delta)")
    rng = trial_rng(args["seed"], 0)
    tick = time.perf_counter()
    basis = tensor_universe(depths)
    level = max(0, min(2, depths[1] - 2))
    position = int(rng.integers(1, 2**level + 1))
    root = DyadicIndex.interval(level, position)
    entries = planted_symbol(basis, rng, delta, eta, args["eps"], root)
    values = [entries[key] for key in basis]
    T = OperatorMatrix(basis, np.diag(values), NormSpec.lp(1.0))
    built = time.perf_counter() - tick
    cert = tensor_factor_l1l1(T, delta, eta=eta, eps=args["eps"])
    payload, timings = _certificate_payload(cert)
    timings["build"] = built
    settings = {k: args[k] for k in ("delta", "eta", "eps", "seed")}
    settings["depth"] = list(depths)
    write_artifact(args["out"], artifact("factor tensor", settings, payload, timings))
    ok, line = _norm_product_verdict(cert, args["residual_cap"])
    projection = cert.compression["projection_norm"]["upper"]
    ok = ok and projection == 1.0
    print(f"{'PASS' if ok else 'FAIL'} {line} projection_norm={projection}")
    return 0 if ok else 1


def cmd_james_demo(args: dict) -> int:
    if args["trials"] > 0 and args["seed"] is None:
        raise UsageError("random trials need --seed")
    size = args["size"]
    if not 1 <= size <= 16:
        raise UsageError("size must lie in [1, 16]")
    tick = time.perf_counter()
    canonical = [
        {"vector": [1.0, 1.0], "value": james_norm([1.0, 1.0]), "expected": 2.0},
        {
            "vector": [1.0, -1.0],
            "value": james_norm([1.0, -1.0]),
            "expected": math.sqrt(2.0),
        },
    ]
    ok = all(abs(row["value"] - row["expected"]) <= 1e-12 for row in canonical)
    trials = []
    for index in range(args["trials"]):
        rng = trial_rng(args["seed"], index)
        vector = [float(v) for v in rng.integers(-3, 4, size)]
        value = james_norm(vector)
        single = abs(sum(vector))
        atoms = math.sqrt(sum(v * v for v in vector))
        sane = value + 1e-12 >= max(single, atoms)
        ok = ok and sane
        trials.append({"vector": vector, "value": value, "lower_bounds_ok": sane})
    elapsed = time.perf_counter() - tick
    settings = {k: args[k] for k in ("trials", "size", "seed")}
    write_artifact(
        args["out"],
        artifact("james demo", settings,
                 {"canonical": canonical, "trials": trials, "ok": ok},
                 {"demo": elapsed}),
    )
    print(
        f"{'PASS' if ok else 'FAIL'} james((1,1))={canonical[0]['value']!r} "
        f"james((1,-1))={canonical[1]['value']!r} trials={args['trials']}"
    )
    return 0 if ok else 1


def _sandwich_trial(seed: int, index: int, depth: int) -> dict:
    rng = trial_rng(seed, index)
    trial_depth = int(rng.integers(1, depth + 1))
    convention = "D+" if index % 2 else "D"
    keys = haar_truncation(1, trial_depth, convention)
    symbol = MultiplierEntries(
        1, {key: float(rng.uniform(-1.0, 1.0)) for key in keys}
    )
    spec = NormSpec.lp(1.0)
    variation = chain_variation(symbol)
    peak = max(abs(v) for v in symbol.entries.values())
    norm = operator_norm(build_multiplier(symbol, spec), spec, mode="exact").upper
    ok = 0.25 * variation <= norm + 1e-12 and norm <= variation + 3.0 * peak + 1e-12
    return {
        "depth": trial_depth,
        "convention": convention,
        "variation": variation,
        "peak": peak,
        "norm": norm,
        "ok": ok,
    }


def cmd_sandwich_test(args: dict) -> int:
    check_depth(args["depth"])
    if args["trials"] < 1:
        raise UsageError("trials must be at least 1")
    workers = thread_cap()
    tick = time.perf_counter()
    indices = range(args["trials"])
    if workers == 1:
        rows = [_sandwich_trial(args["seed"], i, args["depth"]) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(
                pool.map(lambda i: _sandwich_trial(args["seed"], i, args["depth"]),
                         indices)
            )
    elapsed = time.perf_counter() - tick
    ok = all(row["ok"] for row in rows)
    settings = {k: args[k] for k in ("trials", "depth", "seed")}
    write_artifact(
        args["out"],
        artifact("sandwich test", settings,
                 {"trials": rows, "ok": ok}, {"trials": elapsed}),
    )
    worst = min(
        (row["variation"] + 3 * row["peak"]) - row["norm"] for row in rows
    )
    print(
        f"{'PASS' if ok else 'FAIL'} trials={args['trials']} "
        f"tightest_upper_slack={worst:.6f}"
    )
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------

COMMANDS = {
    ("norms", "eval"): cmd_norms_eval,
    ("game", "run"): cmd_game_run,
    ("validate", "gg"): cmd_validate_gg,
    ("factor", "run"): cmd_factor_run,
    ("factor", "tensor"): cmd_factor_tensor,
    ("james", "demo"): cmd_james_demo,
    ("sandwich", "test"): cmd_sandwich_test,
}

DEFAULTS = {
    ("norms", "eval"): {"out": "norms_eval.json"},
    ("game", "run"): {
        "space": "h1", "adversary": "null", "rounds": 7, "depth": 8,
        "eta": 0.1, "C": 1.0, "trials": 300, "out": "game_run.json",
    },
    ("validate", "gg"): {
        "space": "h1", "adversary": "random", "rounds": 7, "depth": 8,
        "eta": 0.1, "C": 1.0, "kappa": 0.1, "trials": 1000,
        "out": "validate_gg.json",
    },
    ("factor", "run"): {
        "space": "l1", "delta": 0.3, "depth": 6, "eta": 0.01, "eps": 0.1,
        "noise": 0.0, "residual_cap": 0.05, "out": "factor_run.json",
    },
    ("factor", "tensor"): {
        "delta": 0.3, "depth": "4,4", "eta": 0.01, "eps": 0.1,
        "residual_cap": 0.05, "out": "factor_tensor.json",
    },
    ("james", "demo"): {"trials": 8, "size": 8, "out": "james_demo.json"},
    ("sandwich", "test"): {"trials": 100, "depth": 6, "out": "sandwich_test.json"},
}

RANDOMIZED = {
    ("game", "run"),
    ("validate", "gg"),
    ("factor", "run"),
    ("factor", "tensor"),
    ("sandwich", "test"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="haarforge",
        description="Haar system games, norms, and factorization certificates.",
    )
    groups = parser.add_subparsers(dest="group", required=True)

    def leaf(group, name, flags):
        sub = group.add_parser(name)
        sub.add_argument("--config", help="JSON file mirroring the flags")
        sub.add_argument("--out", help="artifact path")
        sub.add_argument("--seed", type=int, help="master seed")
        for flag, kind in flags.items():
            sub.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=kind)
        return sub

    norms = groups.add_parser("norms").add_subparsers(dest="sub", required=True)
    leaf(norms, "eval", {"spec": str, "vector": str})

    game = groups.add_parser("game").add_subparsers(dest="sub", required=True)
    leaf(game, "run", {
        "space": str, "adversary": str, "rounds": int, "depth": int,
        "eta": float, "C": float, "trials": int,
    })

    validate = groups.add_parser("validate").add_subparsers(dest="sub", required=True)
    leaf(validate, "gg", {
        "space": str, "adversary": str, "rounds": int, "depth": int,
        "eta": float, "C": float, "kappa": float, "trials": int,
    })

    factor = groups.add_parser("factor").add_subparsers(dest="sub", required=True)
    leaf(factor, "run", {
        "space": str, "delta": float, "depth": int, "eta": float,
        "eps": float, "noise": float, "residual_cap": float,
    })
    leaf(factor, "tensor", {
        "delta": float, "depth": str, "eta": float, "eps": float,
        "residual_cap": float,
    })

    james = groups.add_parser("james").add_subparsers(dest="sub", required=True)
    leaf(james, "demo", {"trials": int, "size": int})

    sandwich = groups.add_parser("sandwich").add_subparsers(dest="sub", required=True)
    leaf(sandwich, "test", {"trials": int, "depth": int})

    return parser


def resolve(args: argparse.Namespace) -> dict:
    command = (args.group, args.sub)
    merged = {key: value for key, value in vars(args).items()
              if key not in ("group", "sub", "config")}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as handle:
                mirrored = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config!r}: {exc}")
        if not isinstance(mirrored, dict):
            raise UsageError("the config file must hold a flat JSON object")
        for key, value in mirrored.items():
            attr = key.replace("-", "_")
            if attr not in merged:
                raise UsageError(f"config key {key!r} mirrors no flag")
            if merged[attr] is None:
                merged[attr] = value
    for key, value in DEFAULTS[command].items():
        if merged.get(key) is None:
            merged[key] = value
    missing = [key for key, value in merged.items() if value is None and key != "seed"]
    if missing:
        raise UsageError(f"missing required flags: {', '.join(sorted(missing))}")
    if command in RANDOMIZED and merged.get("seed") is None:
        raise UsageError("randomized runs need --seed")
    return merged


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        merged = resolve(args)
        return COMMANDS[(args.group, args.sub)](merged)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except HaarforgeError as exc:
        print(f"FAIL {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
