"""Command-line entry point: instance files, experiments and CSV reports.

    ksumforge gen --problem kxor --k 4 --n 20 --r 128 --seed 7 --out i.txt
    ksumforge solve --algo ktree --in i.txt --seed 7
    ksumforge reduce --pipeline xor --k 4 --n 20 --m 14 --trials 50
    ksumforge collide --k 3 --n 14 --m 10 --r 64 --oracle lexmin --trials 20000 --seed 1
    ksumforge fourier --p 5 --q 3 --r 2
    ksumforge count-quadruples --mode product --q-min 16 --q-max 1024

Exit status: 0 on completion, 1 when an invariant or bound check fails,
2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from math import log
from pathlib import Path
from typing import Callable, List, Optional

from . import analysis, reductions, solvers
from .algebra import next_prime
from .core import (
    InvariantViolation,
    MSumInstance,
    ParameterError,
    SeededRng,
    SumInstance,
    XorInstance,
    checked_oracle,
    gen_msum_instance,
    gen_sum_instance,
    gen_xor_instance,
)

logger = logging.getLogger("ksumforge")

REPORT_HEADER = "# ksum-forge-report v1"
COLUMNS = ("experiment", "k", "size_param", "m_or_p", "q", "t", "r", "trials", "successes",
           "estimate", "ci_lo", "ci_hi", "paper_bound", "oracle_calls", "wall_ms", "seed")
COMMANDS = ("gen", "solve", "reduce", "collide", "fourier", "count-quadruples")

_HEADERS = {"KXOR": XorInstance, "KSUM": SumInstance, "KMSUM": MSumInstance}


# ---------------------------------------------------------------- instance files

def format_instance(instance) -> str:
    if isinstance(instance, XorInstance):
        digits = -(-instance.n // 4)
        head = f"KXOR {instance.k} {instance.n} {instance.r}"
        body = [format(e, f"0{digits}x") for e in instance.elements]
    elif isinstance(instance, SumInstance):
        head = f"KSUM {instance.k} {instance.N} {instance.r}"
        body = [str(e) for e in instance.elements]
    else:
        head = f"KMSUM {instance.k} {instance.L} {instance.r}"
        body = [str(e) for e in instance.elements]
    return "\n".join([head] + body) + "\n"


def loads_instance(text: str):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValueError("empty instance file")
    head = lines[0].split()
    if len(head) != 4 or head[0] not in _HEADERS:
        raise ValueError(f"malformed header {lines[0]!r}")
    try:
        k, size, r = (int(v) for v in head[1:])
    except ValueError:
        raise ValueError(f"malformed header {lines[0]!r}") from None
    body = lines[1:]
    if len(body) != r:
        raise ValueError(f"header announces {r} elements, found {len(body)}")
    base = 16 if head[0] == "KXOR" else 10
    try:
        elements = tuple(int(line.strip(), base) for line in body)
    except ValueError as err:
        raise ValueError(f"malformed element: {err}") from None
    return _HEADERS[head[0]](k, size, elements)


def parse_instance(path):
    with open(path, "r", encoding="ascii", newline="") as fh:
        return loads_instance(fh.read())


def write_instance(instance, path) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(format_instance(instance))


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    command: str = "gen"
    problem: str = "kxor"
    k: int = 4
    n: int = 20
    N: int = 1 << 24
    L: int = 1 << 24
    r: Optional[int] = None
    m: Optional[int] = None
    p: Optional[int] = None
    q: Optional[int] = None
    M: Optional[int] = None
    algo: str = "ktree"
    oracle: str = "lexmin"
    pipeline: str = "xor"
    membership: str = "per_iteration"
    iterations: Optional[int] = None
    call_cap: Optional[int] = None
    prescreen: bool = True
    mode: str = "product"
    q_min: int = 16
    q_max: int = 1024
    quad_N: Optional[int] = None
    magnitude_slack: float = analysis.MAGNITUDE_SLACK
    quadruple_slack: float = analysis.QUADRUPLE_SLACK
    trials: int = 1
    seed: int = 0
    threads: Optional[int] = None
    input: Optional[str] = None
    out: Optional[str] = None
    json: Optional[str] = None
    timings: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def resolve_threads(value: Optional[int]) -> int:
    if value is None:
        env = os.environ.get("KSUMFORGE_THREADS")
        value = int(env) if env else (os.cpu_count() or 1)
    if value < 1:
        raise ParameterError("thread count must be >= 1")
    return value


def map_trials(fn: Callable[[int], object], trials: int, threads: int) -> list:
    """``[fn(0), ..., fn(trials-1)]``; order and values do not depend on ``threads``."""
    if threads <= 1 or trials <= 1:
        return [fn(i) for i in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))


# ---------------------------------------------------------------- reports

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def make_row(experiment: str, **values) -> dict:
    row = {c: None for c in COLUMNS}
    row["experiment"] = experiment
    for key, value in values.items():
        if key not in row:
            raise KeyError(key)
        row[key] = value
    return row


def render_csv(rows: List[dict], timings: bool = False) -> str:
    buf = io.StringIO()
    buf.write(REPORT_HEADER + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) if (c != "wall_ms" or timings) else "" for c in COLUMNS])
    return buf.getvalue()


def _proportion(successes: int, trials: int):
    lo, hi = analysis.wilson_interval(successes, trials)
    return successes / trials if trials else 0.0, lo, hi


# ---------------------------------------------------------------- commands

def _default_r(cfg: ExperimentConfig) -> int:
    if cfg.r is not None:
        return cfg.r
    if cfg.problem == "kxor":
        return max(cfg.k, round(2 ** (cfg.n / cfg.k)))
    size = cfg.N if cfg.problem == "ksum" else cfg.L
    return max(cfg.k, round(size ** (1 / cfg.k)))


def _generate(cfg: ExperimentConfig, rng: SeededRng):
    r = _default_r(cfg)
    if cfg.problem == "kxor":
        return gen_xor_instance(cfg.k, cfg.n, r, rng)
    if cfg.problem == "ksum":
        return gen_sum_instance(cfg.k, cfg.N, r, rng)
    if cfg.problem == "kmsum":
        return gen_msum_instance(cfg.k, cfg.L, r, rng)
    raise ParameterError(f"unknown problem {cfg.problem!r}")


def cmd_gen(cfg: ExperimentConfig, threads: int) -> List[dict]:
    rng = SeededRng(cfg.seed)
    insts = [_generate(cfg, rng.child(i)) for i in range(cfg.trials)]
    if cfg.out is None:
        for inst in insts:
            sys.stdout.write(format_instance(inst))
        return []
    path = Path(cfg.out)
    if len(insts) == 1:
        write_instance(insts[0], path)
    else:
        for i, inst in enumerate(insts):
            write_instance(inst, path.with_name(f"{path.stem}.{i}{path.suffix}"))
    return []


def cmd_solve(cfg: ExperimentConfig, threads: int) -> List[dict]:
    if cfg.input is None:
        raise ParameterError("solve needs --in")
    inst = parse_instance(cfg.input)
    oracle = solvers.make_oracle(cfg.algo, inst.family, solvers.SolverConfig(algorithm=cfg.algo))
    checked = checked_oracle(oracle)
    rng = SeededRng(cfg.seed)
    start = time.perf_counter()
    outs = map_trials(lambda i: checked(inst, rng.child(i)), cfg.trials, threads)
    wall = (time.perf_counter() - start) * 1000
    first = outs[0]
    print("failure" if first is None else "solution " + " ".join(map(str, first)))
    wins = sum(o is not None for o in outs)
    est, lo, hi = _proportion(wins, cfg.trials)
    return [make_row(f"solve:{cfg.algo}", k=inst.k, size_param=inst.size_param, r=inst.r,
                     trials=cfg.trials, successes=wins, estimate=est, ci_lo=lo, ci_hi=hi,
                     oracle_calls=cfg.trials, wall_ms=wall, seed=cfg.seed)]


def _prescreened(cfg: ExperimentConfig, rng: SeededRng, solvable: Callable):
    for j in range(10_000):
        inst = _generate(cfg, rng.child(j))
        if not cfg.prescreen or solvable(inst):
            return inst
    raise ParameterError("pre-screening found no solvable instance in 10000 draws")


def cmd_reduce(cfg: ExperimentConfig, threads: int) -> List[dict]:
    cfg = replace(cfg)
    k = cfg.k
    if cfg.pipeline == "xor":
        cfg.problem = "kxor"
        m = cfg.m if cfg.m is not None else cfg.n
        L = cfg.iterations or 2 ** (cfg.n - m + 3)
        oracle = solvers.make_oracle(cfg.algo, "kxor")

        def run(inst, rng):
            return reductions.xor_theorem_pipeline(
                inst, m, oracle, reductions.ReductionBudget(L, call_cap=cfg.call_cap), rng,
                membership=cfg.membership)

        solvable = solvers.brute_force
        point = dict(size_param=cfg.n, m_or_p=m, t=cfg.n - m)
    elif cfg.pipeline == "msum":
        cfg.problem = "kmsum"
        if cfg.p is None or cfg.q is None:
            raise ParameterError("msum pipeline needs --p and --q")
        cfg.L = cfg.p * cfg.q
        L = cfg.iterations or reductions.default_msum_iterations(k, cfg.q)
        oracle = solvers.make_oracle(cfg.algo, "kmsum")

        def run(inst, rng):
            return reductions.msum_reduce(inst, cfg.p, cfg.q, oracle,
                                          reductions.ReductionBudget(L, call_cap=cfg.call_cap), rng)

        solvable = solvers.sort_and_match
        point = dict(size_param=cfg.L, m_or_p=cfg.p, q=cfg.q)
    elif cfg.pipeline == "sum":
        cfg.problem = "ksum"
        M = cfg.M if cfg.M is not None else cfg.N
        cap = cfg.call_cap or -(-cfg.N // M)
        oracle = solvers.make_oracle(cfg.algo, "ksum")
        r = _default_r(cfg)

        def run(inst, rng):
            return reductions.sum_theorem_pipeline(inst, M, oracle,
                                                   reductions.ReductionBudget(cap, call_cap=cap),
                                                   rng, oracle_r=r)

        solvable = solvers.sort_and_match
        point = dict(size_param=cfg.N, m_or_p=M)
    else:
        raise ParameterError(f"unknown pipeline {cfg.pipeline!r}")
    root = SeededRng(cfg.seed)

    def trial(i):
        inst = _prescreened(cfg, root.child(i).child(0), solvable)
        return run(inst, root.child(i).child(1))

    reports = map_trials(trial, cfg.trials, threads)
    wins = sum(rep.outcome is not None for rep in reports)
    est, lo, hi = _proportion(wins, cfg.trials)
    return [make_row(f"reduce:{cfg.pipeline}", k=k, r=_default_r(cfg), trials=cfg.trials,
                     successes=wins, estimate=est, ci_lo=lo, ci_hi=hi,
                     oracle_calls=sum(rep.calls for rep in reports),
                     wall_ms=sum(rep.wall_time for rep in reports) * 1000, seed=cfg.seed, **point)]


def cmd_collide(cfg: ExperimentConfig, threads: int) -> List[dict]:
    r = cfg.r if cfg.r is not None else 64
    if cfg.problem == "kmsum":
        if cfg.p is None or cfg.q is None:
            raise ParameterError("arithmetic collisions need --p and --q")
        setup = analysis.CollisionSetup("kmsum", cfg.k, r, p=cfg.p, q=cfg.q)
    else:
        m = cfg.m if cfg.m is not None else cfg.n
        setup = analysis.CollisionSetup("kxor", cfg.k, r, m=m, t=cfg.n - m)
    if cfg.oracle == "lexmin":
        oracle = solvers.lexmin_oracle(setup.family)
    else:
        oracle = solvers.make_oracle(cfg.oracle, setup.family)
    start = time.perf_counter()
    est = analysis.estimate_collision(oracle, setup, cfg.trials, SeededRng(cfg.seed), threads=threads,
                                      slack=cfg.magnitude_slack)
    wall = (time.perf_counter() - start) * 1000
    return [make_row("collide", k=est.k, size_param=est.size_param, m_or_p=est.m_or_p, q=est.q,
                     t=est.t, r=est.r, trials=est.trials, successes=est.collisions,
                     estimate=est.estimate, ci_lo=est.ci_lo, ci_hi=est.ci_hi,
                     paper_bound=est.paper_bound, oracle_calls=est.oracle_calls, wall_ms=wall,
                     seed=cfg.seed)]


def cmd_fourier(cfg: ExperimentConfig, threads: int) -> List[dict]:
    p = cfg.p if cfg.p is not None else 3
    q = cfg.q if cfg.q is not None else 2
    r = cfg.r if cfg.r is not None else 2
    start = time.perf_counter()
    scan = analysis.magnitude_bound_scan(p, q, r, cfg.magnitude_slack)
    for row in scan.rows:
        exact = float(analysis.magnitude_via_zero_pairs(row.S, p, q))
        if abs(row.value - exact) > 1e-12:
            raise InvariantViolation(f"zero-pair identity fails at S={row.S.S}: {row.value} vs {exact}")
    wall = (time.perf_counter() - start) * 1000
    if not scan.within_slack:
        raise InvariantViolation(f"max |M| pq = {scan.scaled_max} exceeds slack {scan.slack}")
    return [make_row("fourier", size_param=p * q, m_or_p=p, q=q, r=r, trials=len(scan.rows),
                     estimate=scan.scaled_max, paper_bound=float(scan.slack), wall_ms=wall,
                     seed=cfg.seed)]


def cmd_count_quadruples(cfg: ExperimentConfig, threads: int) -> List[dict]:
    rows = []
    failed = []
    q = cfg.q_min
    while q <= cfg.q_max:
        start = time.perf_counter()
        if cfg.mode == "sum":
            N = cfg.quad_N if cfg.quad_N is not None else q * next_prime(q)
            count = analysis.count_quadruples(q, "sum", N)
        else:
            N = None
            count = analysis.count_quadruples(q, cfg.mode)
        bound = cfg.quadruple_slack * q * q * log(q)
        if count > bound:
            failed.append(q)
        rows.append(make_row(f"quadruples:{cfg.mode}", size_param=N, q=q, trials=1,
                             estimate=count, paper_bound=bound,
                             wall_ms=(time.perf_counter() - start) * 1000, seed=cfg.seed))
        q *= 2
    if failed:
        err = InvariantViolation(f"quadruple count exceeds slack bound at q={failed}")
        err.rows = rows
        raise err
    return rows


HANDLERS = {
    "gen": cmd_gen,
    "solve": cmd_solve,
    "reduce": cmd_reduce,
    "collide": cmd_collide,
    "fourier": cmd_fourier,
    "count-quadruples": cmd_count_quadruples,
}


def run(cfg: ExperimentConfig) -> int:
    """Execute one configured experiment; return the exit status."""
    if cfg.command not in HANDLERS:
        raise ParameterError(f"unknown command {cfg.command!r}")
    if cfg.trials < 1:
        raise ParameterError("--trials must be >= 1")
    threads = resolve_threads(cfg.threads)
    status = 0
    start = time.perf_counter()
    try:
        rows = HANDLERS[cfg.command](cfg, threads)
    except InvariantViolation as err:
        logger.error("invariant check failed: %s", err)
        rows, status = getattr(err, "rows", []), 1
    if cfg.command != "gen":
        text = render_csv(rows, cfg.timings)
        if cfg.out:
            Path(cfg.out).write_text(text, encoding="ascii")
        elif rows:
            sys.stdout.write(text)
    if cfg.json:
        summary = {"config": asdict(cfg), "status": status, "rows": rows,
                   "wall_ms": (time.perf_counter() - start) * 1000}
        Path(cfg.json).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return status


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ksumforge", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--trials", type=int, default=S)
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--out", default=S, help="CSV report (gen: instance file)")
    common.add_argument("--json", default=S, help="JSON summary path")
    common.add_argument("--threads", type=int, default=S)
    common.add_argument("--config", default=S, help="JSON config; explicit flags override it")
    common.add_argument("--dump-config", dest="dump_config", default=S)
    common.add_argument("--timings", action="store_true", default=S,
                        help="fill the wall_ms column (breaks byte-identical reports)")

    problem = argparse.ArgumentParser(add_help=False)
    problem.add_argument("--problem", choices=("kxor", "ksum", "kmsum"), default=S)
    problem.add_argument("--k", type=int, default=S)
    problem.add_argument("--n", type=int, default=S)
    problem.add_argument("--N", type=int, default=S)
    problem.add_argument("--L", type=int, default=S)
    problem.add_argument("--r", type=int, default=S)

    sub.add_parser("gen", parents=[common, problem], help="sample an instance file")
    p = sub.add_parser("solve", parents=[common], help="run a solver on an instance file")
    p.add_argument("--algo", choices=solvers.SOLVER_NAMES, default=S)
    p.add_argument("--in", dest="input", default=S)

    p = sub.add_parser("reduce", parents=[common, problem], help="run a reduction end to end")
    p.add_argument("--pipeline", choices=("xor", "msum", "sum"), default=S)
    p.add_argument("--algo", choices=solvers.SOLVER_NAMES, default=S)
    for flag in ("--m", "--p", "--q", "--M", "--iterations", "--call-cap"):
        p.add_argument(flag, type=int, default=S)
    p.add_argument("--membership", choices=("per_iteration", "final"), default=S)
    p.add_argument("--no-prescreen", dest="prescreen", action="store_false", default=S)

    p = sub.add_parser("collide", parents=[common, problem], help="estimate obfuscation collisions")
    p.add_argument("--oracle", choices=solvers.SOLVER_NAMES, default=S)
    for flag in ("--m", "--p", "--q"):
        p.add_argument(flag, type=int, default=S)
    p.add_argument("--slack", dest="magnitude_slack", type=float, default=S)

    p = sub.add_parser("fourier", parents=[common], help="exact magnitude scan")
    for flag in ("--p", "--q", "--r"):
        p.add_argument(flag, type=int, default=S)
    p.add_argument("--slack", dest="magnitude_slack", type=float, default=S)

    p = sub.add_parser("count-quadruples", parents=[common], help="exact quadruple counts")
    p.add_argument("--mode", choices=("product", "sum"), default=S)
    p.add_argument("--q-min", dest="q_min", type=int, default=S)
    p.add_argument("--q-max", dest="q_max", type=int, default=S)
    p.add_argument("--N", dest="quad_N", type=int, default=S)
    p.add_argument("--slack", dest="quadruple_slack", type=float, default=S)
    return parser


def config_from_args(argv: Optional[List[str]] = None) -> ExperimentConfig:
    ns = vars(build_parser().parse_args(argv))
    verbose = ns.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    base = {}
    config_path = ns.pop("config", None)
    dump = ns.pop("dump_config", None)
    if config_path:
        base = json.loads(Path(config_path).read_text())
    base.update(ns)
    cfg = ExperimentConfig.from_dict(base)
    if dump:
        Path(dump).write_text(cfg.to_json() + "\n")
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cfg = config_from_args(argv)
        return run(cfg)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except (ParameterError, ValueError, OSError, json.JSONDecodeError) as err:
        print(f"ksumforge: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
