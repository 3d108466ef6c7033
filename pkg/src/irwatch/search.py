"""Multi-seed sweep over the architecture grid, Pareto-front extraction and
deployment-point selection.

Runs are independent (config, seed) tasks: failures are quarantined rather
than fatal, completed runs persisted under a results directory are skipped
on restart, and aggregation is a deterministic reduce keyed by
(config name, seed) so the outcome does not depend on execution order.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from . import metrics, nn, quant
from .arch import ArchConfig, parse_name
from .data import Frame, SplitSpec, split_dataset

METRIC_KEYS = ("bal_acc", "acc", "f1", "roc_auc")


@dataclass
class RunResult:
    config: str
    seed: int
    ok: bool
    error: str | None = None
    epochs_run: int = 0
    best_val_loss: float = math.nan
    metrics_float: dict[str, float] = dataclasses.field(default_factory=dict)
    metrics_int8: dict[str, float] = dataclasses.field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "RunResult":
        return RunResult(**json.loads(text))


@dataclass
class ConfigSummary:
    config: str
    params: int
    macs: int
    size_bytes: int
    n_runs: int
    failures: int
    mean_float: dict[str, float]
    std_float: dict[str, float]
    mean_int8: dict[str, float]
    std_int8: dict[str, float]
    mean_epochs: float


@dataclass
class SweepResult:
    runs: list[RunResult]
    summaries: list[ConfigSummary]


def train_and_evaluate(
    arch: ArchConfig,
    split,
    train_config: nn.TrainConfig,
    qat: bool = True,
) -> RunResult:
    """One full run: float training, quantization (QAT or plain calibration),
    then float and int8 metrics on the test sessions."""
    params, report = nn.train(arch, split, train_config)
    if qat:
        _, _, qmodel = quant.qat_finetune(
            arch, params, split, quant.make_qat_config(train_config),
            norm_mean=split.norm.mean, norm_std=split.norm.std,
        )
    else:
        qmodel = quant.calibrate(
            params, arch, split.train_x,
            norm_mean=split.norm.mean, norm_std=split.norm.std,
        )
    if split.test_x.shape[0] == 0:
        raise ValueError("split has no test samples to evaluate")
    float_probs = nn.predict_batch(arch, params, split.test_x)
    int_probs = quant.int_predict(qmodel, split.test_x)
    return RunResult(
        config=arch.name,
        seed=train_config.seed,
        ok=True,
        epochs_run=report.epochs_run,
        best_val_loss=report.best_val_loss,
        metrics_float=metrics.summarize(float_probs, split.test_y),
        metrics_int8=metrics.summarize(int_probs, split.test_y),
    )


# -- worker-process machinery -------------------------------------------------

_WORKER: dict = {}


def _worker_init(frames, split_spec, train_config, qat):
    _WORKER["frames"] = frames
    _WORKER["split_spec"] = split_spec
    _WORKER["train_config"] = train_config
    _WORKER["qat"] = qat
    _WORKER["splits"] = {}


def _worker_split(window: int):
    if window not in _WORKER["splits"]:
        _WORKER["splits"][window] = split_dataset(
            _WORKER["frames"], _WORKER["split_spec"], window
        )
    return _WORKER["splits"][window]


def _worker_run(task: tuple[str, int]) -> RunResult:
    name, seed = task
    arch = parse_name(name)
    cfg = dataclasses.replace(_WORKER["train_config"], seed=seed)
    try:
        split = _worker_split(arch.window)
        return train_and_evaluate(arch, split, cfg, _WORKER["qat"])
    except Exception as exc:  # quarantine, do not kill the sweep
        return RunResult(config=name, seed=seed, ok=False, error=f"{type(exc).__name__}: {exc}")


def _run_path(results_dir: str, name: str, seed: int) -> str:
    return os.path.join(results_dir, "runs", f"{name}__s{seed}.json")


def run_sweep(
    grid: Iterable[ArchConfig],
    frames: list[Frame],
    split_spec: SplitSpec,
    train_config: nn.TrainConfig,
    seeds: Iterable[int] = (0, 1, 2, 3, 4),
    qat: bool = True,
    workers: int = 1,
    results_dir: str | None = None,
    progress=None,
) -> SweepResult:
    """Train every (config, seed) pair and aggregate per-config statistics.

    With a results_dir, each finished run is written to runs/<config>__s<n>.json
    and already-present runs are skipped, making the sweep resumable.
    """
    grid = list(grid)
    seeds = list(seeds)
    if not grid or not seeds:
        raise ValueError("grid and seeds must be non-empty")

    done: dict[tuple[str, int], RunResult] = {}
    pending: list[tuple[str, int]] = []
    for cfg in grid:
        for seed in seeds:
            key = (cfg.name, seed)
            if results_dir is not None:
                path = _run_path(results_dir, *key)
                if os.path.exists(path):
                    with open(path) as fh:
                        done[key] = RunResult.from_json(fh.read())
                    continue
            pending.append(key)

    if results_dir is not None:
        os.makedirs(os.path.join(results_dir, "runs"), exist_ok=True)

    def _record(res: RunResult) -> None:
        done[(res.config, res.seed)] = res
        if results_dir is not None:
            with open(_run_path(results_dir, res.config, res.seed), "w") as fh:
                fh.write(res.to_json())
        if progress is not None:
            progress(res)

    if workers > 1 and pending:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_worker_init,
            initargs=(frames, split_spec, train_config, qat),
        ) as pool:
            for res in pool.map(_worker_run, pending):
                _record(res)
    else:
        _worker_init(frames, split_spec, train_config, qat)
        for task in pending:
            _record(_worker_run(task))

    runs = [done[k] for k in sorted(done)]
    return SweepResult(runs=runs, summaries=summarize_runs(runs))


def _mean_std(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def summarize_runs(runs: list[RunResult]) -> list[ConfigSummary]:
    by_config: dict[str, list[RunResult]] = {}
    for r in runs:
        by_config.setdefault(r.config, []).append(r)
    out = []
    for name in sorted(by_config):
        group = by_config[name]
        ok = [r for r in group if r.ok]
        arch = parse_name(name)
        mean_f, std_f, mean_i, std_i = {}, {}, {}, {}
        for key in METRIC_KEYS:
            if ok:
                mf, sf = _mean_std([r.metrics_float[key] for r in ok])
                mi, si = _mean_std([r.metrics_int8[key] for r in ok])
            else:
                mf = sf = mi = si = math.nan
            mean_f[key], std_f[key] = mf, sf
            mean_i[key], std_i[key] = mi, si
        out.append(
            ConfigSummary(
                config=name,
                params=arch.param_count(),
                macs=arch.mac_count(),
                size_bytes=arch.quantized_size_bytes(),
                n_runs=len(ok),
                failures=len(group) - len(ok),
                mean_float=mean_f,
                std_float=std_f,
                mean_int8=mean_i,
                std_int8=std_i,
                mean_epochs=(sum(r.epochs_run for r in ok) / len(ok)) if ok else math.nan,
            )
        )
    return out


def results_table(summaries: list[ConfigSummary]) -> str:
    """Canonical CSV, one row per config; deterministic for identical runs."""
    cols = ["config", "params", "macs", "size_bytes", "n_runs", "failures"]
    for path in ("float", "int8"):
        for key in METRIC_KEYS:
            cols += [f"{key}_{path}_mean", f"{key}_{path}_std"]
    cols.append("epochs_mean")
    lines = [",".join(cols)]
    for s in sorted(summaries, key=lambda s: s.config):
        row = [s.config, str(s.params), str(s.macs), str(s.size_bytes), str(s.n_runs), str(s.failures)]
        for mean, std in ((s.mean_float, s.std_float), (s.mean_int8, s.std_int8)):
            for key in METRIC_KEYS:
                row += [repr(mean[key]), repr(std[key])]
        row.append(repr(s.mean_epochs))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


# -- Pareto extraction and deployment-point selection --------------------------


class PointRecord(NamedTuple):
    name: str
    accuracy: float
    cost: float


def pareto_front(points: Iterable[PointRecord | tuple]) -> list[PointRecord]:
    """Non-dominated subset: p survives iff no q has cost <= and accuracy >=
    with at least one strict; exact ties on both axes keep the
    lexicographically smallest name."""
    recs = [PointRecord(*p) for p in points]
    recs.sort(key=lambda r: (r.cost, -r.accuracy, r.name))
    front: list[PointRecord] = []
    best_acc = -math.inf
    for r in recs:
        if r.accuracy > best_acc:
            front.append(r)
            best_acc = r.accuracy
    return front


def select_deployment_points(front: Iterable[PointRecord | tuple]) -> dict[str, PointRecord]:
    """The three headline picks from a (bal_acc, params) front: the most
    accurate config, the smallest within one balanced-accuracy point of it,
    and the smallest overall. Accuracy is a fraction, so one point = 0.01."""
    recs = [PointRecord(*p) for p in front]
    if not recs:
        raise ValueError("front must be non-empty")
    max_acc = max(r.accuracy for r in recs)
    best = min((r for r in recs if r.accuracy == max_acc), key=lambda r: (r.cost, r.name))
    threshold = max_acc - 0.01 - 1e-12
    near = [r for r in recs if r.accuracy >= threshold]
    max_acc_minus1 = min(near, key=lambda r: (r.cost, -r.accuracy, r.name))
    min_size = min(recs, key=lambda r: (r.cost, -r.accuracy, r.name))
    return {"MaxAcc": best, "MaxAccMinus1": max_acc_minus1, "MinSize": min_size}


def front_from_summaries(
    summaries: list[ConfigSummary],
    cost: str = "params",
    path: str = "int8",
) -> list[PointRecord]:
    """Points (config, mean bal_acc, cost) for Pareto work; cost is 'params'
    or 'macs', path is 'int8' (matches published post-quantization figures)
    or 'float'."""
    if cost not in ("params", "macs"):
        raise ValueError("cost must be 'params' or 'macs'")
    if path not in ("float", "int8"):
        raise ValueError("path must be 'float' or 'int8'")
    pts = []
    for s in summaries:
        if s.n_runs == 0:
            continue
        acc = (s.mean_int8 if path == "int8" else s.mean_float)["bal_acc"]
        pts.append(PointRecord(s.config, acc, getattr(s, cost)))
    return pareto_front(pts)
