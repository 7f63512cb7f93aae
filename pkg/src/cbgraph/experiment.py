"""Config-driven regret experiments, aggregation and scaling fits."""
from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import graph as G
from .env import (
    ContextSchedule,
    build_hard_instance,
    make_rng,
    read_instance,
    read_schedule,
)
from .errors import InvalidInputError
from .policies import ALGORITHMS, RADII, PolicyConfig
from .quantities import SMALL_CAP, beta_M_exact, independence_number_exact, mas_number_exact

SCHEMA_VERSION = 1
WORKERS_ENV = "CBGRAPH_WORKERS"
GENERATORS = ("erdos-renyi", "grid", "chain", "complete", "edgeless", "random-transitive-closure")
AGGREGATE_HEADER = ("algorithm", "T", "reps", "mean", "median", "q05", "q95")


class ConfigError(InvalidInputError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid experiment config: " + "; ".join(self.problems))


@dataclass
class ExperimentConfig:
    name: str
    graph: dict
    M: int
    horizons: list
    algorithms: list
    delta: float = 0.1
    reps: int = 1
    seed: int = 0
    out: str = "results"
    instance: str = "hard"
    schedule: str = "blocks"
    radius: str = "standard"
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        bad = []
        if self.schema != SCHEMA_VERSION:
            bad.append(f"schema: expected {SCHEMA_VERSION}, got {self.schema!r}")
        if not isinstance(self.name, str) or not self.name:
            bad.append("name: must be a non-empty string")
        bad += _graph_problems(self.graph)
        if not _posint(self.M):
            bad.append("M: must be a positive integer")
        if not isinstance(self.horizons, list) or not self.horizons or not all(_posint(t) for t in self.horizons):
            bad.append("horizons: must be a non-empty list of positive integers")
        if not isinstance(self.algorithms, list) or not self.algorithms or any(a not in ALGORITHMS for a in self.algorithms):
            bad.append(f"algorithms: each must be one of {sorted(ALGORITHMS)}")
        if not isinstance(self.delta, (int, float)) or not 0 < self.delta < 1:
            bad.append("delta: must lie in (0, 1)")
        if not _posint(self.reps):
            bad.append("reps: must be a positive integer")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            bad.append("seed: must be a nonnegative integer")
        if not isinstance(self.out, str) or not self.out:
            bad.append("out: must be a path")
        if not isinstance(self.instance, str):
            bad.append("instance: 'hard' or a file path")
        if self.schedule not in ("blocks", "random") and not isinstance(self.schedule, str):
            bad.append("schedule: 'blocks', 'random' or a file path")
        if self.radius not in RADII:
            bad.append(f"radius: one of {RADII}")
        if bad:
            raise ConfigError(bad)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError(["config: must be a JSON object"])
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        required = ["name", "graph", "M", "horizons", "algorithms"]
        missing = [k for k in required if k not in d]
        problems = [f"{k}: unknown field" for k in unknown] + [f"{k}: missing" for k in missing]
        if "schema" not in d:
            problems.append("schema: missing")
        if problems:
            raise ConfigError(problems)
        return cls(**d)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"json: {exc}"]) from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        cfg = cls.loads(Path(path).read_text())
        base = Path(path).resolve().parent
        cfg._base = base
        return cfg


def _posint(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool) and x > 0


def _graph_problems(spec) -> list:
    if not isinstance(spec, dict):
        return ["graph: must be an object with 'file' or 'generator'"]
    if "file" in spec:
        return [] if isinstance(spec["file"], str) else ["graph.file: must be a path"]
    gen = spec.get("generator")
    if gen not in GENERATORS:
        return [f"graph.generator: one of {GENERATORS}"]
    bad = []
    if gen == "grid":
        for key in ("k", "M"):
            if not _posint(spec.get(key)):
                bad.append(f"graph.{key}: positive integer required")
        if not bad and spec["k"] * spec["M"] > 24:
            bad.append("graph: grid larger than 24 vertices")
    else:
        K = spec.get("K")
        if not _posint(K) or K > 24:
            bad.append("graph.K: integer in 1..24 required")
    if gen in ("erdos-renyi", "random-transitive-closure"):
        p = spec.get("p")
        if not isinstance(p, (int, float)) or not 0 <= p <= 1:
            bad.append("graph.p: probability in [0, 1] required")
        if "seed" in spec and not isinstance(spec["seed"], int):
            bad.append("graph.seed: integer required")
    return bad


def build_graph(spec: dict, base: Optional[Path] = None) -> G.FeedbackGraph:
    if "file" in spec:
        path = Path(spec["file"])
        if base is not None and not path.is_absolute():
            path = base / path
        return G.read_graph(path)
    gen = spec["generator"]
    if gen == "grid":
        return G.grid(spec["k"], spec["M"])
    K = spec["K"]
    if gen == "chain":
        return G.chain(K, closed=spec.get("closed", True))
    if gen == "complete":
        return G.complete(K)
    if gen == "edgeless":
        return G.edgeless(K)
    rng = make_rng(spec.get("seed", 0), "graph", gen)
    if gen == "erdos-renyi":
        return G.erdos_renyi(K, spec["p"], rng)
    return G.random_transitive_closure(K, spec["p"], rng)


# -- cells ---------------------------------------------------------------------------------

def cell_name(algorithm: str, T: int, rep: int) -> str:
    return f"{algorithm}_T{T}_r{rep}"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _setting(cfg: ExperimentConfig, g: G.FeedbackGraph, T: int, rep: int, base):
    """Instance and schedule for one (T, rep); shared by every algorithm."""
    env_rng = make_rng(cfg.seed, "env", T, rep)
    if cfg.instance == "hard":
        _, inst, sched = build_hard_instance(g, cfg.M, T, env_rng)
    else:
        inst = read_instance(_resolve(cfg.instance, base), g)
        sched = None
    if cfg.schedule == "random":
        sched = ContextSchedule.random(inst.M, T, env_rng)
    elif cfg.schedule == "blocks":
        if sched is None:
            sched = ContextSchedule.even_blocks(inst.M, T)
    else:
        sched = read_schedule(_resolve(cfg.schedule, base))
        if sched.T != T:
            raise InvalidInputError(f"schedule file has {sched.T} rounds, horizon is {T}")
    return inst, sched


def _resolve(p: str, base) -> Path:
    path = Path(p)
    return path if base is None or path.is_absolute() else Path(base) / path


def run_cell(cfg: ExperimentConfig, g: G.FeedbackGraph, algorithm: str, T: int, rep: int, base=None):
    inst, sched = _setting(cfg, g, T, rep, base)
    pcfg = PolicyConfig(T, inst.K, inst.M, cfg.delta, cfg.radius)
    rng = make_rng(cfg.seed, "policy", algorithm, T, rep)
    return ALGORITHMS[algorithm](inst, sched, pcfg, rng, rep)


def _cell_job(args):
    cfg_dict, base, graph_text, algorithm, T, rep, out = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    g = G.parse_graph(graph_text)
    trace = run_cell(cfg, g, algorithm, T, rep, base)
    _atomic_write(Path(out) / "traces" / f"{cell_name(algorithm, T, rep)}.csv", trace.to_csv())
    # aggregate the value as written, so traces reproduce the aggregate exactly
    return algorithm, T, rep, float(f"{trace.cum_regret[-1]:.12g}")


def aggregate_rows(finals: dict, cfg: ExperimentConfig) -> list:
    """finals maps (algorithm, T) to the list of per-rep final regrets."""
    rows = []
    for algorithm in cfg.algorithms:
        for T in cfg.horizons:
            vals = np.array(finals[(algorithm, T)], dtype=float)
            rows.append({
                "algorithm": algorithm,
                "T": T,
                "reps": int(vals.size),
                "mean": float(vals.mean()),
                "median": float(np.median(vals)),
                "q05": float(np.quantile(vals, 0.05)),
                "q95": float(np.quantile(vals, 0.95)),
            })
    return rows


def format_aggregate(rows: list) -> str:
    lines = [",".join(AGGREGATE_HEADER)]
    for r in rows:
        lines.append(
            f"{r['algorithm']},{r['T']},{r['reps']},{r['mean']:.12g},{r['median']:.12g},{r['q05']:.12g},{r['q95']:.12g}"
        )
    return "\n".join(lines) + "\n"


def read_trace_final(path) -> float:
    """Final cumulative regret as written in a trace CSV."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        col = header.index("cum_regret")
        last = None
        for line in fh:
            last = line
    if last is None:
        raise InvalidInputError(f"{path}: trace has no rows")
    return float(last.rstrip("\n").split(",")[col])


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> list:
    """Run every (algorithm, T, rep) cell, write traces, aggregate.csv and report.txt."""
    base = getattr(cfg, "_base", None)
    g = build_graph(cfg.graph, base)
    out = _resolve(cfg.out, base)
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    jobs = [
        (cfg.to_dict(), base, G.format_graph(g), a, T, r, str(out))
        for a in cfg.algorithms
        for T in cfg.horizons
        for r in range(cfg.reps)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    finals = {}
    for algorithm, T, rep, final in results:
        finals.setdefault((algorithm, T), [0.0] * cfg.reps)[rep] = final
    rows = aggregate_rows(finals, cfg)
    _atomic_write(out / "aggregate.csv", format_aggregate(rows))
    _atomic_write(out / "report.txt", experiment_report(cfg, g, rows))
    return rows


def experiment_report(cfg: ExperimentConfig, g: G.FeedbackGraph, rows: list) -> str:
    lines = [f"experiment {cfg.name}", f"graph K={g.K} M={cfg.M}"]
    quantity = None
    if g.K <= SMALL_CAP:
        quantity = beta_M_exact(g, cfg.M).value
        lines.append(f"alpha {independence_number_exact(g).value}")
        lines.append(f"mas {mas_number_exact(g).value}")
        lines.append(f"beta_M {quantity}")
    for r in rows:
        lines.append(
            f"{r['algorithm']} T={r['T']} reps={r['reps']} mean={r['mean']:.6g} "
            f"median={r['median']:.6g} q05={r['q05']:.6g} q95={r['q95']:.6g}"
        )
    if len(cfg.horizons) >= 3 and quantity:
        for algorithm in cfg.algorithms:
            sel = [r for r in rows if r["algorithm"] == algorithm]
            fit = scaling_fit([r["T"] for r in sel], [r["mean"] for r in sel], quantity)
            lines.append(f"fit {algorithm} {fit.describe()}")
    return "\n".join(lines) + "\n"


# -- scaling fits ------------------------------------------------------------------------

@dataclass
class ScalingFit:
    c: float
    r2: float
    residuals: list
    slope: float
    flat: bool

    def describe(self) -> str:
        tag = " flat" if self.flat else ""
        return f"c={self.c:.6g} r2={self.r2:.4f} loglog_slope={self.slope:.4f}{tag}"


def scaling_fit(horizons: Sequence[float], regrets: Sequence[float], q: float, flat_tol: float = 0.1) -> ScalingFit:
    """Least-squares c in regret = c * sqrt(q * T), plus a log-log slope check."""
    T = np.asarray(horizons, dtype=float)
    y = np.asarray(regrets, dtype=float)
    if T.size != y.size:
        raise InvalidInputError("horizons and regrets differ in length")
    if T.size < 3:
        raise InvalidInputError("scaling fit needs at least 3 horizon points")
    if q <= 0 or np.any(T <= 0):
        raise InvalidInputError("q and horizons must be positive")
    x = np.sqrt(q * T)
    c = float(x @ y / (x @ x))
    resid = y - c * x
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    if np.all(y > 0):
        slope = float(np.polyfit(np.log(T), np.log(y), 1)[0])
    else:
        slope = 0.0
    return ScalingFit(c, r2, resid.tolist(), slope, abs(slope) < flat_tol)


# -- graph families ------------------------------------------------------------------------

def oriented_random_graph(K: int, p: float, rng: np.random.Generator) -> G.FeedbackGraph:
    """Random undirected graph with every edge given one random direction."""
    und = G.random_undirected(K, p, rng)
    flip = rng.random((K, K)) < 0.5
    edges = [(u, v) if flip[min(u, v), max(u, v)] else (v, u) for u, v in und.edges if u < v]
    return G.FeedbackGraph.from_edges(K, edges)


@dataclass
class FamilyRow:
    family: str
    M: int
    alpha: int
    mas: int
    beta: int
    T: int
    mean_regret: float
    per_beta: float
    per_mas: float


def compare_graph_families(
    K: int = 8,
    Ms: Sequence[int] = (1, 2, 4),
    T: int = 2000,
    reps: int = 5,
    p: float = 0.4,
    seed: int = 0,
    delta: float = 0.1,
) -> tuple:
    """alg2 on a directed graph and on its symmetrisation, normalised by sqrt(beta_M T) and sqrt(m T)."""
    rng = make_rng(seed, "families", K)
    directed = oriented_random_graph(K, p, rng)
    families = [("directed", directed), ("undirected", G.symmetrize(directed))]
    rows = []
    for name, g in families:
        alpha = independence_number_exact(g).value
        mas = mas_number_exact(g).value
        if name == "undirected" and mas != alpha:
            raise InvalidInputError("symmetrised graph has m != alpha")
        for M in Ms:
            beta = beta_M_exact(g, M).value
            finals = []
            for rep in range(reps):
                env_rng = make_rng(seed, "env", name, M, T, rep)
                _, inst, sched = build_hard_instance(g, M, T, env_rng)
                pcfg = PolicyConfig(T, g.K, M, delta)
                tr = ALGORITHMS["alg2"](inst, sched, pcfg, make_rng(seed, "policy", name, M, T, rep), rep)
                finals.append(tr.final_regret)
            mean = float(np.mean(finals))
            rows.append(FamilyRow(name, M, alpha, mas, beta, T, mean, mean / math.sqrt(beta * T), mean / math.sqrt(mas * T)))
    lines = ["family M alpha mas beta_M T mean_regret regret/sqrt(beta_M T) regret/sqrt(m T)"]
    for r in rows:
        lines.append(
            f"{r.family} {r.M} {r.alpha} {r.mas} {r.beta} {r.T} {r.mean_regret:.6g} {r.per_beta:.6g} {r.per_mas:.6g}"
        )
    return rows, "\n".join(lines) + "\n"
