"""Experiment configuration, sweep execution, result files and aggregation.

A config is an INI file: one ``[experiment]`` section plus one
``[arch:<name>]`` section per compared architecture.  List-valued keys are
comma separated.  Every (condition, repetition) pair becomes one run whose
trace is written as CSV next to a JSON metadata sidecar.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import itertools
import json
import logging
import math
import re
import time
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import regression as rg
from .dqn import DQNConfig, train_dqn
from .layers import Network, mlp_spec, mrbf_spec, urbf_spec

logger = logging.getLogger(__name__)

TASKS = ("regression", "maze")
AXES = ("complexity", "nnpi", "param_count", "timestep")
STD_DIVISOR = "N"

DESK_REPETITIONS = 5
DESK_TIMESTEPS = 50_000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    name: str
    kind: str  # mlp | urbf | mrbf
    hidden: tuple[int, ...] = ()
    nnpi: tuple[int, ...] = (20,)
    latent: tuple[int, ...] = (16,)


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "regression"
    archs: tuple[ArchConfig, ...] = ()
    function: str = "gauss"
    complexity: tuple[int, ...] = (0, 1, 3, 5)
    level: tuple[int, ...] = (1,)
    encoding: str = "coordinates"
    init_range: tuple[float, float] = (-5.0, 5.0)
    learn_spreads: bool = True
    lr: float = 1e-4
    epochs: int = 300
    batch_size: int = 256
    n_train: int = rg.N_TRAIN
    n_test: int = rg.N_TEST
    total_timesteps: int = 150_000
    learning_starts: int = 30_000
    buffer_size: int = 100_000
    gamma: float = 0.99
    sync_period: int = 1000
    repetitions: int = 1
    base_seed: int = 0
    output_dir: str = "results"

    def __post_init__(self):
        validate(self)

    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.repetitions)]

    def fingerprint(self) -> str:
        body = serialize(replace(self, output_dir=""))
        return hashlib.sha256(body.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Condition:
    """One cell of a sweep: an architecture at fixed sizes and difficulty."""

    arch: str
    kind: str
    difficulty: int  # complexity M (regression) or maze level
    nnpi: int
    latent: int = 0

    def key(self) -> str:
        parts = [self.arch, f"d{self.difficulty}"]
        if self.kind == "urbf":
            parts.append(f"k{self.nnpi}")
        if self.latent:
            parts.append(f"l{self.latent}")
        return "_".join(parts)


# -- config parsing ----------------------------------------------------------

_INT_TUPLES = ("complexity", "level")
_EXPERIMENT_SCALARS = {
    "task": str, "function": str, "encoding": str, "lr": float, "epochs": int,
    "batch_size": int, "n_train": int, "n_test": int, "total_timesteps": int,
    "learning_starts": int, "buffer_size": int, "gamma": float, "sync_period": int,
    "repetitions": int, "base_seed": int, "output_dir": str,
}


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _join(values) -> str:
    return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in values)


def validate(cfg: ExperimentConfig) -> None:
    if cfg.task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {cfg.task!r}")
    if cfg.repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    if not cfg.archs:
        raise ConfigError("at least one [arch:<name>] section is required")
    if len({a.name for a in cfg.archs}) != len(cfg.archs):
        raise ConfigError("architecture names must be unique")
    if cfg.task == "regression" and cfg.function not in ("gauss", "disc"):
        raise ConfigError(f"function must be gauss or disc, got {cfg.function!r}")
    if cfg.task == "maze" and cfg.encoding not in ("coordinates", "matrix"):
        raise ConfigError(f"encoding must be coordinates or matrix, got {cfg.encoding!r}")
    if len(cfg.init_range) != 2 or not cfg.init_range[0] < cfg.init_range[1]:
        raise ConfigError(f"init_range must be 'lo, hi' with lo < hi, got {cfg.init_range}")
    for cond in conditions(cfg):
        try:
            network_spec(cfg, cond)
        except ValueError as exc:
            raise ConfigError(f"architecture {cond.arch}: {exc}") from None


def parse(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if "experiment" not in cp:
        raise ConfigError("missing [experiment] section")
    sec = cp["experiment"]
    kwargs: dict = {}
    try:
        for key, value in sec.items():
            if key in _EXPERIMENT_SCALARS:
                kwargs[key] = _EXPERIMENT_SCALARS[key](value)
            elif key in _INT_TUPLES:
                kwargs[key] = _ints(value)
            elif key == "init_range":
                kwargs[key] = _floats(value)
            elif key == "learn_spreads":
                kwargs[key] = sec.getboolean(key)
            else:
                raise ConfigError(f"unknown key {key!r} in [experiment]")
        archs = []
        for name in cp.sections():
            if not name.startswith("arch:"):
                if name != "experiment":
                    raise ConfigError(f"unknown section [{name}]")
                continue
            a = cp[name]
            unknown = set(a) - {"kind", "hidden", "nnpi", "latent"}
            if unknown:
                raise ConfigError(f"unknown keys {sorted(unknown)} in [{name}]")
            arch_kw = {"name": name[len("arch:"):], "kind": a.get("kind", "")}
            for key in ("hidden", "nnpi", "latent"):
                if key in a:
                    arch_kw[key] = _ints(a[key])
            archs.append(ArchConfig(**arch_kw))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed value: {exc}") from None
    return ExperimentConfig(archs=tuple(archs), **kwargs)


def serialize(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    exp = {}
    for key, value in asdict(cfg).items():
        if key == "archs":
            continue
        if isinstance(value, (tuple, list)):
            exp[key] = _join(value)
        elif isinstance(value, float):
            exp[key] = repr(value)
        else:
            exp[key] = str(value)
    cp["experiment"] = exp
    for a in cfg.archs:
        cp[f"arch:{a.name}"] = {
            "kind": a.kind,
            "hidden": _join(a.hidden),
            "nnpi": _join(a.nnpi),
            "latent": _join(a.latent),
        }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse(text)


def default_config(task: str, desk_scale: bool = False) -> ExperimentConfig:
    """The headline comparison for ``task``: the "32, 64, 128" row, or latent width 16 on the maze."""
    if task == "regression":
        cfg = ExperimentConfig(
            task="regression",
            archs=(
                ArchConfig("mlp", "mlp", (32, 64, 128)),
                ArchConfig("mrbf", "mrbf", (32, 64, 128)),
                ArchConfig("urbf", "urbf", (32, 64, 128), nnpi=(20,)),
            ),
            repetitions=30,
            output_dir="results/regress",
        )
    elif task == "maze":
        cfg = ExperimentConfig(
            task="maze",
            archs=(
                ArchConfig("mlp", "mlp", latent=(16,)),
                ArchConfig("mrbf", "mrbf", latent=(16,)),
                ArchConfig("urbf", "urbf", nnpi=(20,), latent=(16,)),
            ),
            init_range=(0.0, 8.0),
            lr=8e-4,
            batch_size=64,
            repetitions=10,
            output_dir="results/maze",
        )
    else:
        raise ConfigError(f"unknown task {task!r}")
    return desk(cfg) if desk_scale else cfg


def desk(cfg: ExperimentConfig) -> ExperimentConfig:
    """Reduced budgets: 5 repetitions, 50k maze timesteps."""
    changes: dict = {"repetitions": DESK_REPETITIONS}
    if cfg.task == "maze":
        changes["total_timesteps"] = DESK_TIMESTEPS
    return replace(cfg, **changes)


# -- sweep expansion ----------------------------------------------------------


def conditions(cfg: ExperimentConfig) -> list[Condition]:
    difficulties = cfg.complexity if cfg.task == "regression" else cfg.level
    out = []
    for d in difficulties:
        for a in cfg.archs:
            nnpis = a.nnpi if a.kind == "urbf" else (0,)
            latents = a.latent if cfg.task == "maze" else (0,)
            for k, lat in itertools.product(nnpis, latents):
                out.append(Condition(a.name, a.kind, d, k, lat))
    return out


def network_spec(cfg: ExperimentConfig, cond: Condition):
    if cond.kind not in ("mlp", "urbf", "mrbf"):
        raise ValueError(f"kind must be mlp, urbf or mrbf, got {cond.kind!r}")
    if cfg.task == "maze":
        return _dqn_config(cfg, cond, 0).network_spec()
    arch = next(a for a in cfg.archs if a.name == cond.arch)
    if cond.kind == "mlp":
        return mlp_spec(2, arch.hidden)
    if cond.kind == "mrbf":
        return mrbf_spec(2, arch.hidden, init_range=cfg.init_range)
    return urbf_spec(2, cond.nnpi, arch.hidden, init_range=cfg.init_range, learn_spreads=cfg.learn_spreads)


def _dqn_config(cfg: ExperimentConfig, cond: Condition, seed: int) -> DQNConfig:
    return DQNConfig(
        level=cond.difficulty,
        encoding=cfg.encoding,
        arch=cond.kind,
        latent=cond.latent,
        nnpi=cond.nnpi or DQNConfig.nnpi,
        init_range=tuple(cfg.init_range),
        learn_spreads=cfg.learn_spreads,
        lr=cfg.lr,
        gamma=cfg.gamma,
        total_timesteps=cfg.total_timesteps,
        learning_starts=cfg.learning_starts,
        buffer_size=cfg.buffer_size,
        batch_size=cfg.batch_size,
        sync_period=cfg.sync_period,
        seed=seed,
    )


# -- runs ----------------------------------------------------------------------


@dataclass
class RunResult:
    task: str
    fingerprint: str
    condition: Condition
    repetition: int
    seed: int
    final_metric: float = float("nan")
    param_count: int = 0
    duration: float = 0.0
    status: str = "ok"
    error: str = ""
    trace_header: tuple[str, ...] = ()
    trace: list[tuple] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def stem(self) -> str:
        return f"{self.condition.key()}_rep{self.repetition:03d}"

    def metadata(self) -> dict:
        meta = asdict(self)
        meta.pop("trace")
        meta["trace_header"] = list(self.trace_header)
        meta["metric"] = "test_mse" if self.task == "regression" else "avg_reward_per_timestep"
        return meta


def run_condition(cfg: ExperimentConfig, cond: Condition, repetition: int) -> RunResult:
    """Execute one repetition of one condition.  Exceptions are captured."""
    seed = cfg.base_seed + repetition
    result = RunResult(cfg.task, cfg.fingerprint(), cond, repetition, seed)
    t0 = time.perf_counter()
    try:
        if cfg.task == "regression":
            target = rg.sample_target(cfg.function, cond.difficulty, [seed, 1])
            data = rg.sample_dataset(target, [seed, 2], cfg.n_train, cfg.n_test)
            net = Network(network_spec(cfg, cond), [seed, 3])
            run = rg.train_regression(net, data, cfg.epochs, cfg.batch_size, cfg.lr, [seed, 4])
            result.final_metric = run.final_test_mse
            result.param_count = net.param_count()
            result.trace_header = ("epoch", "train_mse", "test_mse")
            result.trace = [(i + 1, a, b) for i, (a, b) in enumerate(zip(run.train_mse, run.test_mse))]
        else:
            run = train_dqn(_dqn_config(cfg, cond, seed))
            result.final_metric = run.avg_reward_per_timestep
            result.param_count = run.param_count
            result.trace_header = ("episode_index", "end_timestep", "return", "epsilon")
            result.trace = [
                (i, t, r, e)
                for i, (t, r, e) in enumerate(zip(run.episode_end_steps, run.episode_returns, run.episode_epsilons))
            ]
    except Exception as exc:  # a failed repetition must not abort its siblings
        result.status = "failed"
        result.error = f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"
        logger.error("run %s failed: %s", result.stem(), exc)
    result.duration = time.perf_counter() - t0
    return result


def save_result(result: RunResult, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    base = directory / result.stem()
    with open(base.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(result.trace_header)
        for row in result.trace:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    base.with_suffix(".json").write_text(json.dumps(result.metadata(), indent=2))
    return base


def load_result(json_path) -> RunResult:
    json_path = Path(json_path)
    meta = json.loads(json_path.read_text())
    meta.pop("metric", None)
    cond = Condition(**meta.pop("condition"))
    header = tuple(meta.pop("trace_header"))
    trace = []
    csv_path = json_path.with_suffix(".csv")
    if csv_path.exists():
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                trace.append(tuple(float(v) if re.search(r"[.eE]|nan|inf", v) else int(v) for v in row))
    return RunResult(condition=cond, trace_header=header, trace=trace, **meta)


def load_results(directory) -> list[RunResult]:
    return [load_result(p) for p in sorted(Path(directory).glob("*.json")) if p.name != "summary.json"]


def run_experiment(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> list[RunResult]:
    """Run every (condition, repetition) and persist each result as it finishes."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    (out / "config.ini").write_text(serialize(cfg))
    jobs = [(c, r) for c in conditions(cfg) for r in range(cfg.repetitions)]
    results: list[RunResult] = []
    if workers <= 1:
        for cond, rep in jobs:
            res = run_condition(cfg, cond, rep)
            save_result(res, out)
            logger.info("%s %s metric=%.6g (%.1fs)", res.stem(), res.status, res.final_metric, res.duration)
            results.append(res)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_condition, cfg, c, r) for c, r in jobs]
            for fut in as_completed(futures):
                res = fut.result()
                save_result(res, out)
                results.append(res)
    order = {(c, r): i for i, (c, r) in enumerate(jobs)}
    results.sort(key=lambda res: order[(res.condition, res.repetition)])
    return results


# -- aggregation ---------------------------------------------------------------


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation (divisor N)."""
    if len(values) == 0:
        raise ValueError("cannot summarize an empty set of values")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0))


@dataclass
class Aggregate:
    task: str
    condition: Condition
    mean: float
    std: float
    count: int
    param_count: int
    std_divisor: str = STD_DIVISOR
    curve: list[tuple[int, float, float, int]] = field(default_factory=list)


def learning_curve(results: Sequence[RunResult], bin_size: int = 1000) -> list[tuple[int, float, float, int]]:
    """Per-bin mean episode return across runs: (bin end, mean, std, runs)."""
    per_run: list[dict[int, float]] = []
    for res in results:
        bins: dict[int, list[float]] = {}
        for _, end, ret, _ in res.trace:
            b = int(math.ceil(end / bin_size) * bin_size)
            bins.setdefault(b, []).append(float(ret))
        per_run.append({b: float(np.mean(v)) for b, v in bins.items()})
    out = []
    for b in sorted(set().union(*per_run)) if per_run else []:
        vals = [r[b] for r in per_run if b in r]
        m, s = summarize(vals)
        out.append((b, m, s, len(vals)))
    return out


def aggregate(results: Iterable[RunResult], curve_bin: int = 1000) -> list[Aggregate]:
    """Group successful runs by condition and summarize their final metric."""
    results = list(results)
    if not results:
        raise ValueError("no results to aggregate")
    groups: dict[tuple[str, Condition], list[RunResult]] = {}
    for res in results:
        if res.ok:
            groups.setdefault((res.task, res.condition), []).append(res)
    if not groups:
        raise ValueError("every run failed; nothing to aggregate")
    out = []
    for (task, cond), runs in groups.items():
        runs.sort(key=lambda r: r.repetition)
        mean, std = summarize([r.final_metric for r in runs])
        curve = learning_curve(runs, curve_bin) if task == "maze" else []
        out.append(Aggregate(task, cond, mean, std, len(runs), runs[0].param_count, curve=curve))
    return out


def _axis_value(agg: Aggregate, axis: str):
    if axis == "complexity":
        return agg.condition.difficulty
    if axis == "nnpi":
        return agg.condition.nnpi
    if axis == "param_count":
        return agg.param_count
    raise ValueError(axis)


def plot_rows(aggregates: Sequence[Aggregate], axis: str) -> list[tuple]:
    """(architecture, axis value, mean, std, count) sorted by axis value, then architecture."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    if not aggregates:
        raise ValueError("no aggregates to emit")
    if len({a.task for a in aggregates}) > 1:
        raise ValueError("cannot mix regression and maze results in one table")
    rows = []
    if axis == "timestep":
        for a in aggregates:
            for b, m, s, n in a.curve:
                rows.append((_label(a, aggregates, axis), b, m, s, n))
    else:
        if axis == "nnpi":
            aggregates = [a for a in aggregates if a.condition.kind == "urbf"]
            if not aggregates:
                raise ValueError("nnpi axis needs U-RBF results")
        for a in aggregates:
            rows.append((_label(a, aggregates, axis), _axis_value(a, axis), a.mean, a.std, a.count))
    rows.sort(key=lambda r: (r[1], r[0]))
    return rows


def _label(agg: Aggregate, everything: Sequence[Aggregate], axis: str) -> str:
    """Architecture name, qualified by the sweep fields that are not on the axis."""
    same_arch = [a.condition for a in everything if a.condition.arch == agg.condition.arch]
    parts = [agg.condition.arch]
    if axis != "complexity" and len({c.difficulty for c in same_arch}) > 1:
        parts.append(f"d={agg.condition.difficulty}")
    if axis != "nnpi" and len({c.nnpi for c in same_arch}) > 1:
        parts.append(f"nnpi={agg.condition.nnpi}")
    if len({c.latent for c in same_arch}) > 1:
        parts.append(f"latent={agg.condition.latent}")
    return ",".join(parts)


def emit_plot_data(aggregates: Sequence[Aggregate], axis: str, path) -> Path:
    rows = plot_rows(aggregates, axis)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["architecture", axis, "mean", "std", "count"])
        for r in rows:
            w.writerow([r[0], r[1], repr(r[2]), repr(r[3]), r[4]])
    return path


def write_summary(aggregates: Sequence[Aggregate], directory) -> Path:
    directory = Path(directory)
    rows = [
        {
            "task": a.task,
            **asdict(a.condition),
            "mean": a.mean,
            "std": a.std,
            "count": a.count,
            "param_count": a.param_count,
        }
        for a in aggregates
    ]
    path = directory / "summary.json"
    path.write_text(json.dumps({"std_divisor": STD_DIVISOR, "groups": rows}, indent=2))
    with open(directory / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return path
