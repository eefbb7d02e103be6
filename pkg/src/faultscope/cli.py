"""``faultscope`` command line: gen, analyze, localize, sweep, selftest."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .cluster import iterate_localization
from .gammoid import DomainError, Gammoid, spark_exact
from .graph import GraphError, InfluenceGraph
from .lintransfer import (
    DegenerateCoherenceError,
    ResolventError,
    coherence_at,
    coherence_spark_bound,
    default_s_samples,
    is_cascade,
    shortest_path_coherence,
    spark_lower_bound,
)
from .reconstruct import ReconstructionProblem, SolverConfig, beta_sweep, fitted_output, solve
from .simulate import (
    DEFAULT_OUT_DEGREE,
    INPUT_SHAPES,
    GridError,
    IntegrationError,
    LinearSystem,
    SignalBundle,
    TwinExperiment,
    make_twin,
    simulate,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
BUNDLE_FILES = ("system.json", "graph.json", "w_true.csv", "y_data.csv", "meta.json")


class UsageError(Exception):
    pass


class BundleError(OSError):
    pass


# --- helpers ----------------------------------------------------------------


def thread_count() -> int:
    cap = os.environ.get("FAULTSCOPE_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise UsageError(f"FAULTSCOPE_THREADS must be an integer, got {cap!r}") from None
    return n


def write_text(path: Path, text: str) -> None:
    """Write via a temporary file so readers never see a partial file."""
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def parse_sweep(text: str) -> List[float]:
    """``a:b:n`` -> ``n`` log-spaced values from ``a`` to ``b``."""
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise UsageError(f"beta sweep must look like a:b:n, got {text!r}") from None
    if a <= 0 or b <= 0 or n < 1:
        raise UsageError("beta sweep needs positive bounds and n >= 1")
    return list(np.logspace(math.log10(a), math.log10(b), n)) if n > 1 else [a]


def parse_complex_list(text: str) -> List[complex]:
    try:
        return [complex(tok.strip().replace(" ", "")) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"could not parse s samples {text!r}; use e.g. '10,10+10j,1e8'") from None


def parse_nodes(text: Optional[str], n: int) -> Optional[List[int]]:
    if text is None or text == "all":
        return None
    try:
        nodes = sorted({int(t) for t in text.split(",") if t.strip()})
    except ValueError:
        raise UsageError(f"node list must be comma separated integers, got {text!r}") from None
    if not nodes or any(not 0 <= i < n for i in nodes):
        raise UsageError(f"node list {text!r} is empty or out of range [0, {n})")
    return nodes


def seed_range(text: str) -> List[int]:
    try:
        if ":" in text:
            a, b = text.split(":")
            return list(range(int(a), int(b)))
        return [int(s) for s in text.split(",")]
    except ValueError:
        raise UsageError(f"seeds must look like a:b or a,b,c, got {text!r}") from None


# --- bundle I/O ---------------------------------------------------------------


def save_bundle(exp: TwinExperiment, out: Path) -> List[Path]:
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "system.json": dump_json(exp.system.to_dict()),
        "graph.json": dump_json(exp.graph.to_dict()),
        "w_true.csv": exp.true_input.to_csv(),
        "y_data.csv": exp.y_data.to_csv(),
        "meta.json": dump_json(exp.meta),
    }
    paths = []
    for name, text in files.items():
        write_text(out / name, text)
        paths.append(out / name)
    return paths


def load_bundle(path: Path):
    """Returns ``(system, y_data, w_true or None, meta)``."""
    if not path.is_dir():
        raise BundleError(f"bundle directory {path} does not exist")
    try:
        sys_ = LinearSystem.from_dict(json.loads((path / "system.json").read_text()))
        y = SignalBundle.from_csv((path / "y_data.csv").read_text())
        w = None
        if (path / "w_true.csv").exists():
            w = SignalBundle.from_csv((path / "w_true.csv").read_text())
        meta = {}
        if (path / "meta.json").exists():
            meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise BundleError(f"missing bundle file: {exc.filename}") from None
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise BundleError(f"malformed bundle in {path}: {exc}") from None
    return sys_, y, w, meta


class RecordedData:
    """Stand-in for a twin when only recorded data is available; sensors cannot move."""

    def __init__(self, system: LinearSystem, y: SignalBundle):
        self.system = system
        self._y = y

    def measure(self, sensors: Sequence[int]) -> SignalBundle:
        if tuple(sensors) != tuple(self.system.sensors):
            raise UsageError("recorded data cannot be re-measured at other sensors")
        return self._y


def write_manifest(out: Path, command: str, config: dict, inputs, outputs, seed, t0) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "input_paths": [str(p) for p in inputs],
        "output_paths": [str(p) for p in outputs],
        "seed": seed,
        "tool_version": __version__,
        "wall_time": time.perf_counter() - t0,
    }
    path = out / "manifest.json"
    write_text(path, dump_json(manifest))
    return path


def config_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


# --- commands ---------------------------------------------------------------


def cmd_gen(args) -> int:
    t0 = time.perf_counter()
    if not 1 <= args.k <= args.n:
        raise UsageError(f"--k must lie in [1, --n] (got k={args.k}, n={args.n})")
    if not 1 <= args.sensors <= args.n:
        raise UsageError(f"--sensors must lie in [1, --n] (got {args.sensors}, n={args.n})")
    try:
        exp = make_twin(args.n, args.sensors, args.k, args.shape, args.seed, args.dt,
                        args.horizon, args.out_degree)
    except GridError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    paths = save_bundle(exp, out)
    if args.manifest:
        write_manifest(out, "gen", config_of(args), [], paths, args.seed, t0)
    print(f"wrote twin bundle to {out} (targets {list(exp.targets)}, sensors {list(exp.system.sensors)})")
    return EXIT_OK


def analyze_system(system: LinearSystem, max_spark_size: int, s_samples=None,
                   ground: Optional[Sequence[int]] = None) -> tuple:
    g = system.graph()
    L = list(range(system.n)) if ground is None else list(ground)
    gam = Gammoid(g, L, system.sensors)
    spark = spark_exact(gam, max_spark_size)
    coh = shortest_path_coherence(gam)
    bound = coherence_spark_bound(coh, len(gam.ground_set))
    s_list = default_s_samples(system.A) if s_samples is None else list(s_samples)
    samples = []
    for s in s_list:
        c = coherence_at(system, s, gam.ground_set, gam.output_set)
        samples.append({
            "s": [s.real, s.imag],
            "mu_mutual": c.mutual,
            "spark_lower_bound": coherence_spark_bound(c, len(gam.ground_set)),
        })
    report = {
        "n": system.n,
        "sensors": list(system.sensors),
        "ground_set": list(gam.ground_set),
        "spark_exact": spark.value,
        "spark_unbounded": spark.unbounded,
        "spark_truncated": spark.truncated,
        "dependent_set": None if spark.dependent_set is None else list(spark.dependent_set),
        "localizable_k": max(0, (spark.value - 1) // 2),
        "mu_mutual": coh.mutual,
        "spark_lower_bound": _finite(bound),
        "bound_consistent": bool(spark.value >= bound - 1e-9 or spark.truncated),
        "unobservable": list(coh.excluded),
        "is_cascade": is_cascade(gam),
        "gramian_samples": samples,
    }
    return report, coh


def _finite(x: float):
    return None if math.isinf(x) else x


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    bundle = Path(args.bundle)
    system, _, _, _ = load_bundle(bundle)
    if args.max_spark_size < 1:
        raise UsageError("--max-spark-size must be at least 1")
    s_samples = parse_complex_list(args.s_samples) if args.s_samples else None
    ground = parse_nodes(args.ground, system.n)
    report, coh = analyze_system(system, args.max_spark_size, s_samples, ground)
    out = Path(args.out) if args.out else bundle
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "analysis.json", out / "coherence.csv"]
    write_text(paths[0], dump_json(report))
    write_text(paths[1], coh.to_csv())
    if args.manifest:
        write_manifest(out, "analyze", config_of(args), [bundle], paths, None, t0)
    flag = " (lower bound, search truncated)" if report["spark_truncated"] else ""
    print(f"spark = {report['spark_exact']}{flag}; mutual shortest-path coherence = "
          f"{report['mu_mutual']:.4g}; localizable k <= {report['localizable_k']}")
    return EXIT_OK


def long_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "channel", "series", "value"])
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def bundle_rows(sig: SignalBundle, series: str):
    for j, ch in enumerate(sig.channels):
        for t, v in zip(sig.grid, sig.values[:, j]):
            yield (repr(float(t)), ch, series, repr(float(v)))


def cmd_localize(args) -> int:
    t0 = time.perf_counter()
    bundle = Path(args.bundle)
    system, y, w_true, meta = load_bundle(bundle)
    ground = parse_nodes(args.ground, system.n) or list(range(system.n))
    if args.beta <= 0:
        raise UsageError("--beta must be positive")
    n_clusters = args.n_clusters
    if n_clusters not in ("sensors", "gap"):
        try:
            n_clusters = int(n_clusters)
        except ValueError:
            raise UsageError(f"--n-clusters must be an integer, 'sensors' or 'gap', got {n_clusters!r}") from None
        if n_clusters < 1:
            raise UsageError("--n-clusters must be at least 1")
    if args.pipeline_beta <= 0:
        raise UsageError("--pipeline-beta must be positive")
    if args.k < 1 or args.rounds < 1:
        raise UsageError("--k and --rounds must be at least 1")
    cfg = SolverConfig(max_iters=args.max_iters)
    prob = ReconstructionProblem(system, y, ground, args.beta, args.epsilon, cfg)
    res = solve(prob)
    y_fit = fitted_output(prob, res)

    out = Path(args.out) if args.out else bundle
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    def emit(name, text):
        write_text(out / name, text)
        paths.append(out / name)

    emit("w_hat.csv", res.w_hat.to_csv())
    emit("y_fit.csv", y_fit.to_csv())
    emit("objective_trace.csv", "iteration,objective\n" + "".join(
        f"{i},{v!r}\n" for i, v in enumerate(res.objective_trace)))
    summary = res.summary(args.epsilon)
    summary["top_channels"] = res.top_channels(min(5, len(ground)))
    emit("summary.json", dump_json(summary))

    if w_true is not None:
        exp = TwinExperiment(system, w_true, y, int(meta.get("seed", 0)))
    else:
        exp = RecordedData(system, y)
    trace = iterate_localization(exp, args.k, args.rounds, args.pipeline_beta, args.linkage, cfg,
                                 ground, n_clusters=n_clusters,
                                 move_sensors=w_true is not None)
    emit("trace.json", trace.to_json() + "\n")

    emit("plot_output_fit.csv", long_csv(list(bundle_rows(y, "data")) + list(bundle_rows(y_fit, "fit"))))
    rows = list(bundle_rows(res.w_hat, "estimate"))
    if w_true is not None:
        rows += list(bundle_rows(w_true, "true"))
    emit("plot_input.csv", long_csv(rows))

    if args.beta_sweep:
        betas = parse_sweep(args.beta_sweep)
        results = beta_sweep(prob, betas)
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["beta", "objective", "fit_norm", "penalty", "support_size", "top_channel",
                     "converged", "iterations"])
        for b, r in zip(betas, results):
            wr.writerow([repr(float(b)), repr(r.objective), repr(r.fit_norm), repr(r.penalty),
                         len(r.support), r.top_channels(1)[0] if r.support else "", r.converged, r.iterations])
        emit("sweep.csv", buf.getvalue())

    if args.manifest:
        write_manifest(out, "localize", config_of(args), [bundle], paths, meta.get("seed"), t0)
    status = "converged" if res.converged else "NOT converged"
    print(f"solver {status} after {res.iterations} iterations; top channels "
          f"{summary['top_channels']}; final ground set {list(trace.final_ground_set)}")
    return EXIT_OK


def _sweep_one(seed: int, args, betas: Sequence[float]) -> List[list]:
    exp = make_twin(args.n, args.sensors, args.k, args.shape, seed, args.dt, args.horizon,
                    args.out_degree)
    gam = Gammoid(exp.graph, range(args.n), exp.system.sensors)
    spark = spark_exact(gam, args.max_spark_size)
    prob = ReconstructionProblem(exp.system, exp.y_data, range(args.n), betas[0],
                                 solver=SolverConfig(max_iters=args.max_iters))
    rows = []
    for b, r in zip(betas, beta_sweep(prob, betas)):
        top = r.top_channels(len(exp.targets))
        rows.append([seed, repr(float(b)), " ".join(map(str, exp.targets)), " ".join(map(str, top)),
                     int(set(top) == set(exp.targets)), spark.value, int(spark.truncated),
                     repr(r.objective), int(r.converged), r.iterations])
    return rows


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    seeds = seed_range(args.seeds)
    if not seeds:
        raise UsageError("no seeds given")
    betas = parse_sweep(args.beta_sweep) if args.beta_sweep else [args.beta]
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        chunks = list(pool.map(lambda s: _sweep_one(s, args, betas), seeds))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["seed", "beta", "targets", "top_channels", "hit", "spark", "spark_truncated",
                 "objective", "converged", "iterations"])
    for rows in chunks:
        wr.writerows(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    write_text(path, buf.getvalue())
    if args.manifest:
        write_manifest(out, "sweep", config_of(args), [], [path], seeds[0], t0)
    hits = sum(r[4] for rows in chunks for r in rows)
    total = sum(len(rows) for rows in chunks)
    print(f"{hits}/{total} runs recovered the injected support; results in {path}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    checks = []

    def check(name, ok):
        checks.append(ok)
        print(f"{'PASS' if ok else 'FAIL'}  {name}")

    chain = InfluenceGraph(3, [(0, 1, 1.0), (1, 2, 1.0)])
    check("chain spark is 2", spark_exact(Gammoid(chain, [0, 1, 2], [2])).value == 2)
    sys1 = LinearSystem(np.array([[-1.0]]), (0,), np.array([1.0]), 1.0, 1e-3)
    states, _ = simulate(sys1)
    check("RK4 decay error <= 1e-8",
          float(np.max(np.abs(states.values[:, 0] - np.exp(-states.grid)))) <= 1e-8)
    check("spark bound arithmetic", spark_lower_bound(0.5) == 3.0)
    exp = make_twin(5, 3, 1, "pulse", seed=1, dt=0.1, horizon=2.0)
    res = solve(ReconstructionProblem(exp.system, exp.y_data, range(5), 1e-3))
    check("solver reduces the objective", res.objective <= res.objective_trace[0])
    return EXIT_OK if all(checks) else EXIT_NUMERIC


# --- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="faultscope", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def twin_flags(q):
        q.add_argument("--n", type=int, default=30)
        q.add_argument("--sensors", type=int, default=10)
        q.add_argument("--k", type=int, default=1)
        q.add_argument("--shape", choices=INPUT_SHAPES, default="pulse")
        q.add_argument("--dt", type=float, default=0.05)
        q.add_argument("--horizon", type=float, default=10.0)
        q.add_argument("--out-degree", type=float, default=DEFAULT_OUT_DEGREE)

    g = sub.add_parser("gen", help="generate a twin experiment bundle")
    twin_flags(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--manifest", action="store_true")
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("analyze", help="spark, coherence and bounds of a bundle")
    a.add_argument("bundle")
    a.add_argument("--max-spark-size", type=int, default=6)
    a.add_argument("--s-samples", default=None, help="comma separated complex s values")
    a.add_argument("--ground", default=None, help="comma separated ground nodes (default all)")
    a.add_argument("--out", default=None)
    a.add_argument("--manifest", action="store_true")
    a.set_defaults(func=cmd_analyze)

    lo = sub.add_parser("localize", help="reconstruct inputs and run the localisation loop")
    lo.add_argument("bundle")
    lo.add_argument("--beta", type=float, default=0.01)
    lo.add_argument("--beta-sweep", default=None, help="a:b:n log-spaced betas")
    lo.add_argument("--epsilon", type=float, default=None)
    lo.add_argument("--k", type=int, default=1)
    lo.add_argument("--rounds", type=int, default=5)
    lo.add_argument("--ground", default=None)
    lo.add_argument("--linkage", choices=("average", "complete", "single"), default="complete")
    lo.add_argument("--pipeline-beta", type=float, default=1e-3,
                    help="regularisation used inside the localisation loop")
    lo.add_argument("--n-clusters", default="2",
                    help="input clusters per round: an integer, 'sensors' or 'gap'")
    lo.add_argument("--max-iters", type=int, default=5000)
    lo.add_argument("--out", default=None)
    lo.add_argument("--manifest", action="store_true")
    lo.set_defaults(func=cmd_localize)

    s = sub.add_parser("sweep", help="ensemble of twin experiments")
    twin_flags(s)
    s.add_argument("--seeds", default="0:10")
    s.add_argument("--beta", type=float, default=0.01)
    s.add_argument("--beta-sweep", default=None)
    s.add_argument("--max-spark-size", type=int, default=3)
    s.add_argument("--max-iters", type=int, default=5000)
    s.add_argument("--out", required=True)
    s.add_argument("--manifest", action="store_true")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("selftest", help="quick built-in consistency checks")
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, DomainError, GraphError, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, BundleError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ResolventError, IntegrationError, DegenerateCoherenceError, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
