"""Seeded experiment orchestration and CSV/JSON output.

Seed scheme: replication ``r`` of an experiment with master seed ``m`` uses
``SeedSequence(m, spawn_key=(r,))`` and spawns four children, in order, for
the edge stream, the initial states, the estimator's random start and the
k-means seeding. SBM sweeps use ``spawn_key=(n, g)`` for graph ``g`` and
``(n, g, r)`` for run ``r`` on it. Results are merged in replication order,
so serial and parallel execution produce the same tables.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .dynamics import make_rng
from .estimation import Snapshot, accuracy, exact_recovery, geometric_grid, run_trajectory
from .graph_model import (
    BlockGossipModel,
    CommunityAssignment,
    GossipNetwork,
    ModelError,
    SbmParams,
    graph_to_interaction,
    load_model_config,
    model_to_config,
    sample_sbm,
    weighted_to_interaction,
)
from .oracle import chi_gap, mean_matrices_general, oracle_report, stationary_mean_solve

log = logging.getLogger(__name__)

KINDS = ("single", "recovery-curve", "compare", "sbm-sweep", "karate")
METHODS = ("alg1", "kmeans", "kmeans++", "spectral")
ESTIMATOR_HEADER = ["t", "accuracy", "exact", "ws_hat", "wd_hat", "skipped_updates"]
CURVE_HEADER = ["t", "method", "p_t"]


class ConfigError(ModelError):
    pass


# -- presets -------------------------------------------------------------------

def small_complete_model() -> BlockGossipModel:
    """Twelve agents, five regular and one stubborn per community, ratio 5."""
    return BlockGossipModel.from_ratio([(5, 1), (5, 1)], 5.0, 0.5, [1.0, -1.0])


def comparison_model(model_seed: int = 0) -> BlockGossipModel:
    """n = 400 with n_1 = 150 and eight stubborn agents per community, ratio 5.

    The first stubborn agent of community 1 (2) holds 1 (-1); the other
    stubborn states are drawn once from uniform(-1, 1) with ``model_seed``,
    so every replication runs on the same model.
    """
    xs = make_rng(model_seed).uniform(-1.0, 1.0, size=16)
    xs[0], xs[8] = 1.0, -1.0
    return BlockGossipModel.from_ratio([(142, 8), (242, 8)], 5.0, 0.5, xs)


PRESETS: dict[str, Callable[..., BlockGossipModel]] = {
    "small-complete": lambda seed=0: small_complete_model(),
    "comparison": comparison_model,
}


# -- config --------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    steps: int = 1_000_000
    replications: int = 1
    model: Any = None
    model_seed: int = 0
    a: float = 1.0
    initial: tuple[float, float] = (-1.0, 1.0)
    snapshots: Any = None
    methods: tuple[str, ...] = ("alg1",)
    q: float = 0.5
    sbm: Mapping = field(default_factory=dict)
    karate: Mapping = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.steps < 0:
            raise ConfigError("steps must be nonnegative")
        if self.a <= 0:
            raise ConfigError("step parameter a must be positive")
        lo, hi = self.initial
        if not lo < hi:
            raise ConfigError("initial range must satisfy low < high")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if self.kind in ("single", "recovery-curve", "compare") and self.model is None:
            raise ConfigError(f"experiment {self.kind!r} needs a 'model'")
        if self.kind in ("single", "recovery-curve", "compare"):
            self.block_model()  # fail early on a bad model

    def block_model(self) -> BlockGossipModel:
        m = self.model
        try:
            if isinstance(m, str) and m in PRESETS:
                return PRESETS[m](self.model_seed)
            return load_model_config(m)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model config: {exc.msg} at line {exc.lineno} column {exc.colno}") from exc
        except (KeyError, TypeError, ValueError, OSError) as exc:
            raise ConfigError(f"model config: {exc}") from exc

    def grid(self) -> np.ndarray:
        s = self.snapshots
        if s is None:
            return geometric_grid(self.steps)
        if isinstance(s, Mapping):
            return geometric_grid(self.steps, float(s.get("ratio", 1.2)))
        pts = sorted({int(v) for v in s if 0 <= int(v) <= self.steps})
        return np.array(pts, dtype=np.int64)


_FIELDS = {
    "kind", "seed", "steps", "replications", "model", "model_seed", "a", "initial",
    "snapshots", "methods", "q", "sbm", "karate", "out",
}


def parse_config(source, **overrides) -> ExperimentConfig:
    """Build a config from a mapping, JSON text or a JSON file path.

    Keyword overrides (e.g. from the command line) win over file values when
    they are not None.
    """
    if isinstance(source, Mapping):
        raw = dict(source)
    else:
        text = str(source)
        where = "config"
        if not text.lstrip().startswith("{"):
            where = text
            try:
                text = Path(text).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{where}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{where}: top level must be an object")
    unknown = set(raw) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for k, v in overrides.items():
        if v is not None:
            raw[k] = v
    if raw.get("seed") is None:
        raise ConfigError("a seed is required")
    if "kind" not in raw:
        raise ConfigError("config needs 'kind'")
    try:
        if "initial" in raw:
            raw["initial"] = tuple(float(v) for v in raw["initial"])
        if "methods" in raw:
            raw["methods"] = tuple(raw["methods"])
        for k in ("seed", "steps", "replications", "model_seed"):
            if k in raw:
                raw[k] = int(raw[k])
        for k in ("a", "q"):
            if k in raw:
                raw[k] = float(raw[k])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    if raw["kind"] == "compare" and "methods" not in raw:
        raw["methods"] = METHODS
    return ExperimentConfig(**raw)


# -- CSV helpers -----------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def to_csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def read_csv(text: str) -> tuple[list[str], list[list[str]]]:
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


def _write(out: str | os.PathLike | None, name: str, text: str) -> Path | None:
    if out is None:
        return None
    path = Path(out) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


# -- replication machinery ---------------------------------------------------------

def replication_seeds(master: int, key: tuple[int, ...]) -> list[np.random.SeedSequence]:
    """[edge stream, initial states, estimator start, k-means] seeds."""
    return np.random.SeedSequence(master, spawn_key=key).spawn(4)


@dataclass(frozen=True)
class RunRecord:
    key: tuple[int, ...]
    snapshots: tuple[Snapshot, ...]


def run_replication(net: GossipNetwork, steps: int, master: int, key: tuple[int, ...],
                    grid, a: float = 1.0, initial=(-1.0, 1.0),
                    baselines: Sequence[str] = (), keep_S: bool = False,
                    track_recovery: bool = False) -> RunRecord:
    s_edges, s_init, s_est, s_km = replication_seeds(master, key)
    x0 = make_rng(s_init).uniform(initial[0], initial[1], size=net.assignment.n_r)
    snaps = run_trajectory(net, x0, steps, s_edges, a=a, est_seed=s_est,
                           snapshot_times=grid, kmeans_seed=s_km, baselines=baselines,
                           keep_S=keep_S, track_recovery=track_recovery)
    return RunRecord(key, tuple(snaps))


def _call(job):
    fn, args, kwargs = job
    return fn(*args, **kwargs)


def resolve_threads(threads: int | None) -> int:
    env = os.environ.get("GOSSIP_BLOCKS_THREADS")
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError("GOSSIP_BLOCKS_THREADS must be an integer") from None
    return max(1, int(threads or 1))


def run_jobs(jobs: list, threads: int | None = 1) -> list:
    """Run ``(fn, args, kwargs)`` jobs; results come back in job order."""
    threads = resolve_threads(threads)
    if threads == 1 or len(jobs) <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_call, jobs))


def assumption_problem(net: GossipNetwork) -> str | None:
    """Why recovery cannot work on ``net``, or None."""
    a = net.assignment
    xs = net.stubborn_states
    labs = a.labels[a.stubborn]
    if a.n_communities != 2:
        return None
    if not ((labs == 1).any() and (labs == 2).any()):
        return "stubborn agents sit in only one community"
    m1, m2 = xs[labs == 1].mean(), xs[labs == 2].mean()
    if m1 == m2:
        return "community-mean stubborn states coincide"
    return None


def _block_warning(model: BlockGossipModel) -> str | None:
    gap = chi_gap(model)
    if abs(gap) <= 1e-12 * max(1.0, float(np.abs(model.stubborn_states).max())):
        return f"chi gap is {gap!r}; communities are not identifiable from states"
    return None


@dataclass
class ExperimentResult:
    files: dict[str, Path | None]
    tables: dict[str, str]
    warnings: list[str]
    summary: dict = field(default_factory=dict)


# -- experiments -----------------------------------------------------------------

def _estimator_rows(snaps, truth):
    for s in snaps:
        yield (s.t, accuracy(s.labels, truth), exact_recovery(s.labels, truth),
               s.w_s_hat, s.w_d_hat, s.skipped)


def run_single(cfg: ExperimentConfig, threads=None) -> ExperimentResult:
    model = cfg.block_model()
    net = GossipNetwork.from_model(model)
    warnings = [w for w in (_block_warning(model),) if w]
    rec = run_replication(net, cfg.steps, cfg.seed, (0,), cfg.grid(), cfg.a, cfg.initial)
    table = to_csv(ESTIMATOR_HEADER, _estimator_rows(rec.snapshots, model.assignment.labels))
    report = json.dumps(oracle_report(model), indent=2, sort_keys=True) + "\n"
    files = {
        "estimator.csv": _write(cfg.out, "estimator.csv", table),
        "oracle.json": _write(cfg.out, "oracle.json", report),
    }
    final = rec.snapshots[-1] if rec.snapshots else None
    summary = {
        "final_accuracy": accuracy(final.labels, model.assignment.labels) if final else None,
        "w_s": model.w_s,
        "w_d": model.w_d,
    }
    return ExperimentResult(files, {"estimator.csv": table, "oracle.json": report}, warnings, summary)


def _method_labels(s: Snapshot, method: str) -> np.ndarray:
    return s.labels if method == "alg1" else s.baselines[method]


def recovery_curve_table(records: Sequence[RunRecord], truth, methods) -> tuple[str, dict]:
    """p_t per (t, method) plus the first grid time with p_t = 1 per method."""
    times = [s.t for s in records[0].snapshots]
    rows = []
    first_full: dict[str, int | None] = {m: None for m in methods}
    curves: dict[str, list[float]] = {m: [] for m in methods}
    for k, t in enumerate(times):
        for m in methods:
            flags = [exact_recovery(_method_labels(r.snapshots[k], m), truth) for r in records]
            p = float(np.mean(flags))
            curves[m].append(p)
            if p == 1.0 and first_full[m] is None:
                first_full[m] = t
            rows.append((t, m, p))
    return to_csv(CURVE_HEADER, rows), {"times": times, "curves": curves, "first_full": first_full}


def run_recovery_curve(cfg: ExperimentConfig, threads=None) -> ExperimentResult:
    model = cfg.block_model()
    net = GossipNetwork.from_model(model)
    warnings = [w for w in (_block_warning(model),) if w]
    for w in warnings:
        log.warning(w)
    baselines = tuple(m for m in cfg.methods if m != "alg1")
    grid = cfg.grid()
    jobs = [
        (run_replication, (net, cfg.steps, cfg.seed, (r,), grid, cfg.a, cfg.initial, baselines), {})
        for r in range(cfg.replications)
    ]
    records = run_jobs(jobs, threads)
    table, summary = recovery_curve_table(records, model.assignment.labels, cfg.methods)
    summary["chi_gap"] = chi_gap(model)
    files = {"p_t.csv": _write(cfg.out, "p_t.csv", table)}
    return ExperimentResult(files, {"p_t.csv": table}, warnings, summary)


def sbm_network(n: int, graph_seed, q: float = 0.5, nu1: float = 0.5,
                regular_fraction: float = 0.45, stubborn_fraction: float = 0.05):
    """SBM sample with p_s = (log n)^2 / n, p_d = log n / n; stubborn agents
    hold 1 in community 1 and -1 in community 2."""
    ln = math.log(n)
    params = SbmParams(n, nu1, min(1.0, ln * ln / n), min(1.0, ln / n))
    sizes = [params.n1, params.n2]
    fr = regular_fraction / (regular_fraction + stubborn_fraction)
    counts = []
    for nk in sizes:
        nr = int(round(fr * nk))
        counts.append((nr, nk - nr))
    assignment = CommunityAssignment.from_counts(counts)
    graph = sample_sbm(params, graph_seed)
    isolated = int((graph.degrees() == 0).sum())
    if isolated:
        log.info("SBM sample (n=%d) has %d isolated agents; kept", n, isolated)
    xs = np.r_[np.ones(counts[0][1]), -np.ones(counts[1][1])]
    net = GossipNetwork(graph_to_interaction(graph), assignment, q, xs)
    return net, params


def ratio_error(ws_hat: float, wd_hat: float, params: SbmParams) -> float:
    target = params.p_s / params.p_d
    return abs(ws_hat / wd_hat - target) / target


def _sbm_run(n, gkey, rkey, master, steps, a, initial, q, sbm_opts):
    gseed = np.random.SeedSequence(master, spawn_key=gkey)
    net, params = sbm_network(n, gseed, q, **sbm_opts)
    rec = run_replication(net, steps, master, rkey, [steps], a, initial)
    s = rec.snapshots[-1]
    return (n, gkey[1], rkey[2], accuracy(s.labels, net.assignment.labels),
            ratio_error(s.w_s_hat, s.w_d_hat, params))


def run_sbm_sweep(cfg: ExperimentConfig, threads=None) -> ExperimentResult:
    opts = dict(cfg.sbm)
    sizes = [int(v) for v in opts.pop("sizes", (100, 300, 900))]
    graphs = int(opts.pop("graphs", 20))
    runs = int(opts.pop("runs", 20))
    sbm_opts = {k: float(opts[k]) for k in ("nu1", "regular_fraction", "stubborn_fraction") if k in opts}
    jobs = [
        (_sbm_run, (n, (n, g), (n, g, r), cfg.seed, cfg.steps, cfg.a, cfg.initial, cfg.q, sbm_opts), {})
        for n in sizes for g in range(graphs) for r in range(runs)
    ]
    rows = run_jobs(jobs, threads)
    runs_csv = to_csv(["n", "graph", "run", "accuracy", "ratio_error"], rows)
    summary_rows = []
    per_n = {}
    for n in sizes:
        acc = [r[3] for r in rows if r[0] == n]
        err = [r[4] for r in rows if r[0] == n]
        per_n[n] = (float(np.mean(acc)), float(np.median(err)))
        summary_rows.append((n, *per_n[n]))
    summary_csv = to_csv(["n", "mean_accuracy", "median_ratio_error"], summary_rows)
    files = {
        "sbm_runs.csv": _write(cfg.out, "sbm_runs.csv", runs_csv),
        "sbm_summary.csv": _write(cfg.out, "sbm_summary.csv", summary_csv),
    }
    return ExperimentResult(files, {"sbm_runs.csv": runs_csv, "sbm_summary.csv": summary_csv},
                            [], {"per_n": per_n})


# -- karate club -----------------------------------------------------------------

@dataclass(frozen=True)
class WeightedGraphData:
    weights: np.ndarray
    labels: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ModelError("weight matrix must be square")
        if not np.array_equal(w, w.T) or np.any(np.diag(w) != 0) or (w < 0).any():
            raise ModelError("weight matrix must be symmetric, nonnegative, zero diagonal")
        if not (w > 0).any():
            raise ModelError("weight matrix has no positive entry")

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def load_karate(truth: str = "faction") -> WeightedGraphData:
    """Bundled Zachary karate-club weights; labels 1 = Mr. Hi, 2 = Officer."""
    pkg = resources.files("gossip_blocks") / "data"
    weights = np.loadtxt(io.StringIO((pkg / "karate_weights.csv").read_text()), delimiter=",")
    header, rows = read_csv((pkg / "karate_labels.csv").read_text())
    if truth not in header[1:]:
        raise ConfigError(f"unknown karate truth column {truth!r}")
    col = header.index(truth)
    names = tuple(r[col] for r in rows)
    labels = np.array([1 if v == "Mr. Hi" else 2 for v in names], dtype=np.int64)
    return WeightedGraphData(weights, labels, names)


def karate_network(stubborn_states=(1.0, -1.0), q: float = 0.5, truth: str = "faction"):
    """Members 1 and 34 are stubborn; edges fire proportionally to weight."""
    data = load_karate(truth)
    stubborn = np.zeros(data.n, dtype=bool)
    stubborn[[0, data.n - 1]] = True
    assignment = CommunityAssignment(data.labels, stubborn)
    W = weighted_to_interaction(data.weights)
    return GossipNetwork(W, assignment, q, np.asarray(stubborn_states, dtype=float))


def run_karate(cfg: ExperimentConfig, threads=None) -> ExperimentResult:
    opts = cfg.karate
    net = karate_network(opts.get("stubborn_states", (1.0, -1.0)), cfg.q,
                         opts.get("truth", "faction"))
    warnings = [w for w in (assumption_problem(net),) if w]
    grid = cfg.grid()
    jobs = [
        (run_replication, (net, cfg.steps, cfg.seed, (r,), grid, cfg.a, cfg.initial), {})
        for r in range(cfg.replications)
    ]
    records = run_jobs(jobs, threads)
    truth = net.assignment.labels
    rows = []
    finals = []
    for rec in records:
        for s in rec.snapshots:
            rows.append((rec.key[0], s.t, accuracy(s.labels, truth), exact_recovery(s.labels, truth)))
        if rec.snapshots:
            finals.append(accuracy(rec.snapshots[-1].labels, truth))
    table = to_csv(["replication", "t", "accuracy", "exact"], rows)
    dyn = mean_matrices_general(net.W, net.assignment.stubborn, net.q)
    x_r = stationary_mean_solve(dyn, net.stubborn_states)
    summary = {
        "final_accuracy": finals,
        "rho_A": dyn.spectral_radius,
        "stationary_accuracy": accuracy(
            _stationary_labels(net, x_r), truth),
    }
    files = {"karate_accuracy.csv": _write(cfg.out, "karate_accuracy.csv", table)}
    return ExperimentResult(files, {"karate_accuracy.csv": table}, warnings, summary)


def _stationary_labels(net: GossipNetwork, x_r: np.ndarray) -> np.ndarray:
    from .estimation import recover_labels

    return recover_labels(x_r, net.assignment.stubborn, net.assignment.witness_positions())


RUNNERS = {
    "single": run_single,
    "recovery-curve": run_recovery_curve,
    "compare": run_recovery_curve,
    "sbm-sweep": run_sbm_sweep,
    "karate": run_karate,
}


def run_experiment(cfg: ExperimentConfig, threads=None) -> ExperimentResult:
    result = RUNNERS[cfg.kind](cfg, threads)
    if cfg.out is not None:
        meta = {"config": _config_echo(cfg), "warnings": result.warnings}
        text = json.dumps(meta, indent=2, sort_keys=True) + "\n"
        result.files["run.json"] = _write(cfg.out, "run.json", text)
    return result


def _config_echo(cfg: ExperimentConfig) -> dict:
    model = cfg.model
    if cfg.kind in ("single", "recovery-curve", "compare"):
        model = model_to_config(cfg.block_model())
    return {
        "kind": cfg.kind, "seed": cfg.seed, "steps": cfg.steps,
        "replications": cfg.replications, "model": model, "model_seed": cfg.model_seed,
        "a": cfg.a, "initial": list(cfg.initial), "snapshots": cfg.snapshots,
        "methods": list(cfg.methods), "q": cfg.q, "sbm": dict(cfg.sbm),
        "karate": dict(cfg.karate),
    }
