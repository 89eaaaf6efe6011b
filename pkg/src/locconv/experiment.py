"""Multi-seed training runs and their CSV artifacts."""
from __future__ import annotations

import csv
import functools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import data, models, training
from .config import RunConfig
from .curves import emit_learning_curves

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("model", "horizon", "seed", "status", "valid_rmse", "test_rmse",
                  "valid_mae", "test_mae", "epochs", "params", "wall_ms")
METRICS = ("valid_rmse", "test_rmse", "valid_mae", "test_mae")


@dataclass
class Prepared:
    x_train: np.ndarray
    y_train: np.ndarray
    x_valid: np.ndarray
    y_valid: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    mask: np.ndarray
    scaler: Optional[training.MinMaxScaler]

    @property
    def grid(self) -> tuple:
        return self.x_train.shape[1:]


@dataclass
class ExperimentResult:
    rows: list
    aggregate: list
    curves: dict = field(default_factory=dict)   # (model, seed) -> list of per-epoch dicts
    config_hash: str = ""
    wall_ms: int = 0


# --- data ---------------------------------------------------------------------

def _load_balls(cfg: RunConfig):
    if cfg.data_dir:
        meta = json.loads((Path(cfg.data_dir) / "metadata.json").read_text())
        return tuple(data.load_dataset(cfg.data_dir, meta[k]) for k in ("train", "test_all", "test_bounce"))
    return data.generate_ball_dataset(cfg.n_train, cfg.n_test, cfg.n_bounce, seed=cfg.data_seed)


def _series(cfg: RunConfig) -> data.FrameDataset:
    if cfg.task == "windgrid":
        if cfg.data_dir:
            meta = json.loads((Path(cfg.data_dir) / "metadata.json").read_text())
            return data.load_dataset(cfg.data_dir, meta["series"])
        return data.generate_windgrid(cfg.W, cfg.H, cfg.T, cfg.bias_amplitude, seed=cfg.data_seed)
    if not cfg.csv_path:
        raise ValueError("task external-csv needs csv_path")
    return data.read_csv_grid(cfg.csv_path, cfg.W, cfg.H)


def _split_scheme(cfg: RunConfig):
    if all(float(s).is_integer() and s > 1 for s in cfg.split):
        return [int(s) for s in cfg.split]
    return [float(s) for s in cfg.split]


def prepare(cfg: RunConfig) -> Prepared:
    """Windows for training, validation (model selection) and test."""
    if cfg.task == "balls":
        # validation is the unfiltered test set, test is the bounce-filtered one
        train, valid, test = _load_balls(cfg)
        mask = train.mask
        scaler = training.MinMaxScaler.fit(train.frames, mask) if cfg.normalize else None
    else:
        sp = training.split(_series(cfg), _split_scheme(cfg))
        train, valid, test, mask = sp.train, sp.valid, sp.test, sp.train.mask
        scaler = sp.scaler if cfg.normalize else None
    parts = []
    for ds in (train, valid, test):
        if scaler is not None:
            ds = ds.with_frames(scaler.transform(ds.frames))
        parts.extend(training.make_windows(ds, cfg.l, cfg.horizons))
    return Prepared(*parts, mask=mask, scaler=scaler)


@functools.lru_cache(maxsize=2)
def _prepared_for(cfg_json: str) -> Prepared:
    return prepare(RunConfig.from_dict(json.loads(cfg_json)))


# --- one (model, seed) job ----------------------------------------------------

def model_tag(cfg: RunConfig, tag: str) -> str:
    tag = models.normalize_tag(tag)
    if cfg.task == "balls" and tag != "PR" and tag not in models.BALL_TAGS:
        ball = "BALLS_" + tag.upper()
        if ball not in models.BALL_TAGS:
            raise ValueError(f"{tag} has no bouncing-ball configuration")
        return ball
    return tag


def build_model(cfg: RunConfig, tag: str, seed: int, grid: tuple) -> models.Model:
    W, H, T = grid
    return models.build(model_tag(cfg, tag), W, H, T, cfg.width_scale, seed=seed,
                        n_out=len(cfg.horizons), hidden_activation=cfg.hidden_activation,
                        match_params=cfg.match_params)


def _evaluate(model, prep: Prepared, batch: int) -> dict:
    out = {}
    for split_name, x, y in (("valid", prep.x_valid, prep.y_valid), ("test", prep.x_test, prep.y_test)):
        pred = model.predict(x, batch)
        out[split_name] = training.metrics(pred, y, prep.mask, prep.scaler)
        out[split_name + "_h"] = training.horizon_metrics(pred, y, prep.mask, prep.scaler)
    return out


def run_job(cfg: RunConfig, tag: str, seed: int, prep: Optional[Prepared] = None) -> dict:
    """Train one model for one seed; returns rows, curve and best weights."""
    prep = prep if prep is not None else _prepared_for(json.dumps(cfg.to_dict(), sort_keys=True))
    model = build_model(cfg, tag, seed, prep.grid)
    state = training.AdamState(lr=cfg.lr)
    shuffle = np.random.default_rng([seed, 0x5EED])
    start = time.perf_counter()
    curve, status = [], "ok"
    best_epoch, best, best_state = 0, _evaluate(model, prep, cfg.batch_size), model.state()
    n = len(prep.x_train)
    epochs = cfg.epochs if model.params else 0
    try:
        for epoch in range(1, epochs + 1):
            order = shuffle.permutation(n)
            total = 0.0
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                total += training.train_step(model, prep.x_train[idx], prep.y_train[idx],
                                             prep.mask, state) * len(idx)
            ev = _evaluate(model, prep, cfg.batch_size)
            if not all(math.isfinite(v) for v in ev["valid"] + ev["test"]):
                raise training.DivergenceError(f"{tag}: non-finite predictions at epoch {epoch}")
            curve.append({"epoch": epoch, "train_loss": total / n,
                          "valid_mse": ev["valid"][0] ** 2, "test_mse": ev["test"][0] ** 2})
            if epoch == 1 or ev["valid"][0] < best["valid"][0]:
                best_epoch, best, best_state = epoch, ev, model.state()
            log.info("%s seed %d epoch %d loss %.6g valid %.6g", tag, seed, epoch, total / n, ev["valid"][0])
    except training.DivergenceError as err:
        log.warning("seed %d of %s failed: %s", seed, tag, err)
        status = "failed"
    wall = int(round((time.perf_counter() - start) * 1000)) if cfg.record_wall_time else 0
    rows = []
    for k, h in enumerate(cfg.horizons):
        (vr, vm), (tr, tm) = best["valid_h"][k], best["test_h"][k]
        if status != "ok":
            vr = vm = tr = tm = float("nan")
        rows.append({"model": tag, "horizon": h, "seed": seed, "status": status,
                     "valid_rmse": vr, "test_rmse": tr, "valid_mae": vm, "test_mae": tm,
                     "epochs": best_epoch, "params": model.n_params, "wall_ms": wall})
    return {"rows": rows, "curve": curve, "state": best_state}


# --- aggregation and files ----------------------------------------------------

def aggregate(rows: list) -> list:
    """Mean and population standard deviation over successful seeds."""
    out, keys = [], []
    for r in rows:
        if (r["model"], r["horizon"]) not in keys:
            keys.append((r["model"], r["horizon"]))
    for model, h in keys:
        group = [r for r in rows if r["model"] == model and r["horizon"] == h]
        ok = [r for r in group if r["status"] == "ok"]
        agg = {"model": model, "horizon": h, "n_seeds": len(ok), "n_failed": len(group) - len(ok),
               "params": group[0]["params"]}
        for m in METRICS:
            vals = np.array([r[m] for r in ok], dtype=np.float64)
            agg[m + "_mean"] = float(vals.mean()) if len(vals) else float("nan")
            agg[m + "_std"] = float(vals.std()) if len(vals) else float("nan")
        out.append(agg)
    return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, rows: list, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


AGG_COLUMNS = ("model", "horizon", "n_seeds", "n_failed", "params") + tuple(
    f"{m}_{s}" for m in METRICS for s in ("mean", "std"))
CURVE_COLUMNS = ("model", "seed", "epoch", "train_loss", "valid_mse", "test_mse")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("LOCCONV_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(cfg: RunConfig, write: bool = True) -> ExperimentResult:
    start = time.perf_counter()
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True)
    jobs = [(tag, seed) for tag in cfg.models for seed in cfg.seeds]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_job_from_json, cfg_json, tag, seed) for tag, seed in jobs]
            results = [f.result() for f in futures]
    else:
        prep = _prepared_for(cfg_json)
        results = [run_job(cfg, tag, seed, prep) for tag, seed in jobs]
    rows = [r for res in results for r in res["rows"]]
    curves = {(tag, seed): res["curve"] for (tag, seed), res in zip(jobs, results)}
    wall = int(round((time.perf_counter() - start) * 1000)) if cfg.record_wall_time else 0
    result = ExperimentResult(rows, aggregate(rows), curves, cfg.digest(), wall)
    if write:
        write_outputs(cfg, result, {job: res["state"] for job, res in zip(jobs, results)})
    return result


def _job_from_json(cfg_json: str, tag: str, seed: int) -> dict:
    return run_job(RunConfig.from_dict(json.loads(cfg_json)), tag, seed)


def write_outputs(cfg: RunConfig, result: ExperimentResult, states: Optional[dict] = None) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    write_csv(out / "results.csv", result.rows, RESULT_COLUMNS)
    write_csv(out / "aggregate.csv", result.aggregate, AGG_COLUMNS)
    raw = [{"model": tag, "seed": seed, **point}
           for (tag, seed), curve in result.curves.items() for point in curve]
    write_csv(out / "curves_raw.csv", raw, CURVE_COLUMNS)
    per_model: dict = {}
    for (tag, _), curve in result.curves.items():
        if curve:
            per_model.setdefault(tag, []).append([p[cfg.curve_metric] for p in curve])
    if per_model:
        emit_learning_curves(per_model, out / "learning_curves.csv", out / "learning_curves.svg",
                             ylabel=cfg.curve_metric)
    summary = {"config_hash": result.config_hash, "wall_ms": result.wall_ms,
               "models": cfg.models, "seeds": cfg.seeds}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if states and cfg.save_checkpoints:
        ckpt = out / "checkpoints"
        ckpt.mkdir(exist_ok=True)
        for (tag, seed), state in states.items():
            if state:
                np.savez(ckpt / f"{tag}_seed{seed}.npz", **state)
    return out


def evaluate_run(run_dir, data_dir: Optional[str] = None) -> list:
    """Re-score the stored best checkpoints of a finished run."""
    run_dir = Path(run_dir)
    cfg = RunConfig.load(run_dir / "config.json")
    if data_dir:
        cfg = cfg.replace(data_dir=data_dir)
    prep = prepare(cfg)
    rows = []
    for tag in cfg.models:
        for seed in cfg.seeds:
            model = build_model(cfg, tag, seed, prep.grid)
            path = run_dir / "checkpoints" / f"{tag}_seed{seed}.npz"
            if model.params:
                if not path.exists():
                    raise FileNotFoundError(f"missing checkpoint {path}")
                with np.load(path) as z:
                    model.load_state({k: z[k] for k in z.files})
            ev = _evaluate(model, prep, cfg.batch_size)
            for k, h in enumerate(cfg.horizons):
                (vr, vm), (tr, tm) = ev["valid_h"][k], ev["test_h"][k]
                rows.append({"model": tag, "horizon": h, "seed": seed, "valid_rmse": vr,
                             "test_rmse": tr, "valid_mae": vm, "test_mae": tm})
    return rows
