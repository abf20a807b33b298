"""Experiment orchestration: dataset generation, training, evaluation, reporting.

All outputs are plain files (JSONL, JSON, CSV with LF line endings) whose
contents depend only on the configuration and the seed.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, gcnn
from .instances import generate_split, read_jsonl, write_jsonl
from .policy import baseline_weights, evaluate_local, evaluate_policy

log = logging.getLogger(__name__)

POLICIES = ("baseline", "local", "gnn")
RESULT_FIELDS = (
    "instance", "size", "draw", "policy", "tasks", "objective",
    "congested_tasks", "congestion_ratio", "latencies", "congested",
)
SUMMARY_FIELDS = (
    "size", "policy", "pairs", "tasks", "mean_latency", "mean_objective",
    "congestion", "ci_low", "ci_high", "ratio_mean", "ratio_q1", "ratio_median",
    "ratio_q3", "ratio_whisker_low", "ratio_whisker_high",
)


class HarnessError(RuntimeError):
    """User-facing failure; the CLI prints the message and exits nonzero."""


@dataclass
class ExperimentConfig:
    sizes: list = field(default_factory=lambda: list(range(20, 111, 10)))
    train: int = 2000
    test: int = 1000
    draws: int = 10
    T: int = 1000
    K: int = 10
    nu: int = 2
    lr: float = 1e-6
    seed: int = 0
    out: str = "runs"
    max_steps: int = 20000
    clip_norm: float | None = 3000.0
    eval_every: int = 100
    patience: int = 10
    min_delta: float = 1e-3
    val_fraction: float = 0.1
    aggregation: str = "self"

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise HarnessError(f"cannot read config {path}: {exc}") from exc
        return cls().updated(data)

    def updated(self, values: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(self)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise HarnessError(f"unknown config keys: {', '.join(unknown)}")
        cfg = dataclasses.replace(self, **values)
        cfg.sizes = parse_sizes(cfg.sizes)
        return cfg

    def train_config(self) -> gcnn.TrainConfig:
        return gcnn.TrainConfig(
            lr=self.lr, T=self.T, K=self.K, seed=self.seed, max_steps=self.max_steps,
            clip_norm=self.clip_norm, eval_every=self.eval_every, patience=self.patience,
            min_delta=self.min_delta, val_fraction=self.val_fraction,
        )


def parse_sizes(value) -> list[int]:
    """'20:60:10' (inclusive range), '20,40' or a list of ints."""
    if isinstance(value, (list, tuple)):
        sizes = [int(s) for s in value]
    else:
        text = str(value).strip()
        try:
            if ":" in text:
                parts = [int(p) for p in text.split(":")]
                if len(parts) == 2:
                    parts.append(10)
                lo, hi, step = parts
                if step <= 0:
                    raise ValueError
                sizes = list(range(lo, hi + 1, step))
            else:
                sizes = [int(p) for p in text.split(",") if p.strip()]
        except ValueError:
            raise HarnessError(f"bad size list {value!r}") from None
    if not sizes or min(sizes) < 3:
        raise HarnessError(f"sizes must be non-empty and at least 3, got {value!r}")
    return sizes


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        w.writerows(rows)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise HarnessError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _load_dataset(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise HarnessError(f"dataset not found: {path}")
    try:
        data = read_jsonl(path)
    except (OSError, ValueError) as exc:
        raise HarnessError(f"cannot read dataset {path}: {exc}") from exc
    if not data:
        raise HarnessError(f"dataset {path} is empty")
    return data


def _load_model(path) -> gcnn.GcnnModel:
    try:
        return gcnn.load(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise HarnessError(f"cannot read model {path}: {exc}") from exc


# ---------------------------------------------------------------- generate

def cmd_generate(cfg: ExperimentConfig) -> dict:
    out = _outdir(cfg)
    files = {}
    for split, count in (("train", cfg.train), ("test", cfg.test)):
        insts = generate_split(split, count, cfg.sizes, cfg.seed, nu=cfg.nu, draws=cfg.draws)
        path = out / f"{split}.jsonl"
        try:
            write_jsonl(path, insts)
        except OSError as exc:
            raise HarnessError(f"cannot write {path}: {exc}") from exc
        files[split] = {"path": path.name, "instances": count, "sha256": _sha256(path)}
        log.info("wrote %d %s instances to %s", count, split, path)
    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "sizes": cfg.sizes,
        "draws": cfg.draws,
        "nu": cfg.nu,
        "files": files,
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


# ---------------------------------------------------------------- train

def cmd_train(cfg: ExperimentConfig, data=None, init=None) -> tuple[Path, gcnn.TrainLog]:
    dataset = _load_dataset(data or Path(cfg.out) / "train.jsonl")
    if init:
        model = _load_model(init)
    else:
        model = gcnn.init_model(cfg.seed, aggregation=cfg.aggregation)

    def progress(step, tr, val):
        log.info("step %d train %.4g val %.4g", step, tr, val)

    best, trace = gcnn.train(model, dataset, cfg.train_config(), progress=progress)
    out = _outdir(cfg)
    model_path = out / "model.json"
    gcnn.save(best, model_path)
    _write_csv(out / "train_log.csv", ("step", "train_objective", "validation_objective"),
               [(s, _fmt(t), _fmt(v)) for s, t, v in trace.rows])
    log.info("best step %d, early stop %s, skipped %d", trace.best_step, trace.stopped_early, trace.skipped)
    return model_path, trace


# ---------------------------------------------------------------- eval

def evaluate_instance(inst, policies, model, T, K) -> list[tuple]:
    """Result rows for every task draw of one instance (draw-major, policy order)."""
    rows = []
    ext = inst.extended
    for d, tasks in enumerate(inst.task_draws):
        for pol in policies:
            if pol == "baseline":
                r = evaluate_policy(inst, tasks, baseline_weights(ext), T=T, K=K)
            elif pol == "local":
                r = evaluate_local(inst, tasks, T=T, K=K)
            else:
                r = gcnn.evaluate_gnn(model, inst, tasks, T=T, K=K)
            n = len(tasks)
            cong = int(np.sum(r.congested))
            rows.append((
                inst.index, inst.size, d, pol, n, repr(float(r.objective)), cong,
                repr(cong / n) if n else repr(0.0),
                ";".join(repr(float(u)) for u in r.latency),
                ";".join(str(int(c)) for c in r.congested),
            ))
    return rows


_WORKER = {}


def _init_worker(model_dict, policies, T, K):
    _WORKER.update(
        model=gcnn.from_dict(model_dict) if model_dict else None, policies=policies, T=T, K=K,
    )


def _work(inst):
    w = _WORKER
    return evaluate_instance(inst, w["policies"], w["model"], w["T"], w["K"])


def worker_count(jobs: int) -> int:
    env = os.environ.get("OFFLOADNET_THREADS")
    try:
        cap = int(env) if env else (os.cpu_count() or 1)
    except ValueError:
        raise HarnessError(f"OFFLOADNET_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, jobs))


def cmd_eval(cfg: ExperimentConfig, data=None, model_path=None, policies=None) -> Path:
    dataset = _load_dataset(data or Path(cfg.out) / "test.jsonl")
    default_model = Path(cfg.out) / "model.json"
    if model_path is None and default_model.is_file():
        model_path = default_model
    policies = tuple(policies) if policies else tuple(p for p in POLICIES if p != "gnn" or model_path)
    bad = [p for p in policies if p not in POLICIES]
    if bad:
        raise HarnessError(f"unknown policy {bad[0]!r}; choose from {', '.join(POLICIES)}")
    model = None
    if "gnn" in policies:
        if model_path is None:
            raise HarnessError("gnn policy needs a model file (--model)")
        model = _load_model(model_path)
    workers = worker_count(len(dataset))
    if workers == 1:
        chunks = [evaluate_instance(inst, policies, model, cfg.T, cfg.K) for inst in dataset]
    else:
        init = (gcnn.to_dict(model) if model else None, policies, cfg.T, cfg.K)
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=init) as pool:
            chunks = list(pool.map(_work, dataset, chunksize=4))
    order = {p: i for i, p in enumerate(POLICIES)}
    rows = sorted((r for c in chunks for r in c), key=lambda r: (r[0], r[2], order[r[3]]))
    path = _outdir(cfg) / "results.csv"
    _write_csv(path, RESULT_FIELDS, rows)
    log.info("wrote %d rows to %s", len(rows), path)
    return path


# ---------------------------------------------------------------- report

def read_results(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise HarnessError(f"results not found: {path}")
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or set(RESULT_FIELDS) - set(reader.fieldnames):
            raise HarnessError(f"{path} is not a results file")
        rows = []
        for lineno, r in enumerate(reader, 2):
            try:
                lat = [float(x) for x in r["latencies"].split(";")] if r["latencies"] else []
                cong = [bool(int(x)) for x in r["congested"].split(";")] if r["congested"] else []
                rows.append({
                    "instance": int(r["instance"]), "size": int(r["size"]), "draw": int(r["draw"]),
                    "policy": r["policy"], "objective": float(r["objective"]),
                    "latencies": np.array(lat), "congested": np.array(cong, dtype=bool),
                })
            except (ValueError, KeyError) as exc:
                raise HarnessError(f"{path}:{lineno}: bad row ({exc})") from exc
            if len(lat) != len(cong) or len(lat) != int(r["tasks"]):
                raise HarnessError(f"{path}:{lineno}: task count mismatch")
    if not rows:
        raise HarnessError(f"{path} has no result rows")
    return rows


def congestion_interval(congested: int, total: int) -> tuple[float, float, float]:
    """Normal-approximation 95% interval for a congestion probability."""
    if total == 0:
        return math.nan, math.nan, math.nan
    p = congested / total
    half = 1.96 * math.sqrt(p * (1 - p) / total)
    return p, p - half, p + half


def box_stats(values) -> tuple[float, ...]:
    """(mean, q1, median, q3, whisker low, whisker high) with 1.5 IQR whiskers."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return (math.nan,) * 6
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    return float(v.mean()), float(q1), float(med), float(q3), float(lo), float(hi)


def latency_ratios(rows) -> list[tuple]:
    """Per (instance, draw) mean of policy latency over baseline latency, task by task."""
    base = {(r["instance"], r["draw"]): r["latencies"] for r in rows if r["policy"] == "baseline"}
    out = []
    for r in rows:
        b = base.get((r["instance"], r["draw"]))
        if b is None or len(b) == 0:
            continue
        if len(b) != len(r["latencies"]):
            raise HarnessError(f"unpaired rows for instance {r['instance']} draw {r['draw']}")
        out.append((r["instance"], r["size"], r["draw"], r["policy"], float(np.mean(r["latencies"] / b))))
    return out


def summarize(rows) -> list[tuple]:
    ratios = latency_ratios(rows)
    sizes = sorted({r["size"] for r in rows})
    present = [p for p in POLICIES if any(r["policy"] == p for r in rows)]
    table = []
    for size in sizes + ["all"]:
        for pol in present:
            sel = [r for r in rows if r["policy"] == pol and (size == "all" or r["size"] == size)]
            if not sel:
                continue
            lat = np.concatenate([r["latencies"] for r in sel])
            cong = int(sum(int(r["congested"].sum()) for r in sel))
            p, lo, hi = congestion_interval(cong, lat.size)
            rat = [x[4] for x in ratios if x[3] == pol and (size == "all" or x[1] == size)]
            table.append((
                size, pol, len(sel), lat.size, float(lat.mean()) if lat.size else math.nan,
                float(np.mean([r["objective"] for r in sel])), p, lo, hi, *box_stats(rat),
            ))
    return table


def cmd_report(cfg: ExperimentConfig, results=None) -> Path:
    rows = read_results(results or Path(cfg.out) / "results.csv")
    table = summarize(rows)
    out = _outdir(cfg)
    path = out / "summary.csv"
    _write_csv(path, SUMMARY_FIELDS, [[_fmt(x) for x in row] for row in table])
    _write_csv(out / "ratios.csv", ("instance", "size", "draw", "policy", "ratio"),
               [[_fmt(x) for x in row] for row in latency_ratios(rows)])
    log.info("wrote %s", path)
    return path
