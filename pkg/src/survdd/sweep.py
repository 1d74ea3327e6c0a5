"""Capacity sweep: train every (model, width, lr, batch, replicate) cell, aggregate, find thresholds.

Rows are appended to ``rows.log.csv`` as workers finish, so an interrupted
sweep resumes where it stopped; at the end the log is rewritten in canonical
order as ``rows.csv``. Floats are written with ``repr`` so a read-back is
exact.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import GenConfig, SurvivalData, generate_dataset, make_grid, make_rng
from .exceptions import InvalidConfigError, MarginError
from .losses import LOSS_KINDS
from .net import TrainConfig, forward, make_task, mlp_init, param_count, spectral_norm, train
from .theory import margin_budget_check, measure_margin

logger = logging.getLogger(__name__)

__all__ = [
    "SweepConfig",
    "SweepRow",
    "CurvePoint",
    "ROW_FIELDS",
    "CURVE_FIELDS",
    "cell_seed",
    "prepare_data",
    "cell_train_config",
    "run_cell",
    "sweep_cells",
    "run_sweep",
    "aggregate",
    "detect_threshold",
    "thresholds",
    "write_rows",
    "read_rows",
    "write_curves",
    "read_curves",
    "write_manifest",
    "render_curves",
]

THRESHOLD_FRAC = 0.05
BUDGET_KIND = {"deepsurv": "deepsurv", "pchazard": "interval", "nnet": "interval", "nmtlr": "cumulative"}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SweepConfig:
    models: tuple = LOSS_KINDS
    widths: tuple = (2, 4, 8, 16, 32, 64, 128, 256)
    batch_sizes: tuple = (32, 64, 128, 256)
    lrs: tuple = (5e-5, 1e-4, 3e-4, 5e-4, 1e-3, 2e-3)
    replicates: int = 30
    base_seed: int = 0
    gen: GenConfig = field(default_factory=GenConfig)
    train_frac: float = 0.7
    intervals: dict = field(default_factory=lambda: {"pchazard": 50, "nnet": 20, "nmtlr": 20})
    grid_scheme: str = "equidistant"
    deepsurv_full_batch: bool = False
    max_epochs: int = 2000
    window: int = 20
    # full-batch DeepSurv makes one step per epoch, so it gets its own window and budget
    deepsurv_window: int = 200
    deepsurv_max_epochs: int | None = None  # None: use max_epochs
    rel_tol: float = 1e-4
    jobs: int = 1

    def __post_init__(self):
        for name in ("models", "widths", "batch_sizes", "lrs"):
            val = tuple(getattr(self, name))
            if not val:
                raise InvalidConfigError(f"{name} must be nonempty")
            object.__setattr__(self, name, val)
        unknown = set(self.models) - set(LOSS_KINDS)
        if unknown:
            raise InvalidConfigError(f"unknown models {sorted(unknown)}")
        if self.replicates < 1:
            raise InvalidConfigError("replicates must be >= 1")
        if any(w < 1 for w in self.widths) or any(b < 1 for b in self.batch_sizes):
            raise InvalidConfigError("widths and batch sizes must be >= 1")
        if any(lr <= 0 for lr in self.lrs):
            raise InvalidConfigError("learning rates must be > 0")
        if not 0 < self.train_frac < 1:
            raise InvalidConfigError("train_frac must lie in (0, 1)")
        if self.deepsurv_max_epochs is not None and self.deepsurv_max_epochs < 0:
            raise InvalidConfigError("deepsurv_max_epochs must be >= 0")
        if self.window < 1 or self.deepsurv_window < 1 or self.max_epochs < 0:
            raise InvalidConfigError("windows must be >= 1 and max_epochs >= 0")
        if self.jobs < 1:
            raise InvalidConfigError("jobs must be >= 1")
        if isinstance(self.gen, dict):
            object.__setattr__(self, "gen", GenConfig.from_dict(self.gen))
        for kind in self.models:
            if kind != "deepsurv" and kind not in self.intervals:
                raise InvalidConfigError(f"no interval count for {kind!r}")

    @classmethod
    def desk(cls, **kw):
        base = dict(
            widths=(2, 4, 8, 16, 32, 64, 128, 256),
            batch_sizes=(32, 128),
            lrs=(1e-3, 2e-3),
            replicates=5,
            gen=GenConfig(n=400, p=30, s=10, seed=1),
            # 280 training subjects give ~9x fewer steps per epoch than the full-size data,
            # so the plateau window is widened to cover a comparable number of updates
            window=200,
            # one deterministic step per epoch: a window as long as the budget disables the
            # plateau stop, which otherwise fires during Adam's spike-and-recover cycles
            deepsurv_full_batch=True,
            deepsurv_window=4000,
            deepsurv_max_epochs=4000,
        )
        base.update(kw)
        return cls(**base)

    @classmethod
    def paper(cls, **kw):
        return cls(**kw)

    @classmethod
    def preset(cls, name, **kw):
        if name not in ("desk", "paper"):
            raise InvalidConfigError(f"unknown preset {name!r}")
        return getattr(cls, name)(**kw)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["gen"] = self.gen.to_dict()
        for k in ("models", "widths", "batch_sizes", "lrs"):
            d[k] = list(d[k])
        d["intervals"] = dict(sorted(self.intervals.items()))
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown sweep config keys: {sorted(unknown)}")
        d = dict(d)
        if "gen" in d and isinstance(d["gen"], dict):
            d["gen"] = GenConfig.from_dict(d["gen"])
        return cls(**d)

    def config_hash(self):
        """Hash of everything that affects results (``jobs`` excluded)."""
        d = self.to_dict()
        d.pop("jobs")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def batches_for(self, model, n_train):
        if model == "deepsurv" and self.deepsurv_full_batch:
            return (n_train,)
        return self.batch_sizes


# ---------------------------------------------------------------------------
# rows


@dataclass(frozen=True)
class SweepRow:
    model: str
    width: int
    d: int
    lr: float
    batch: int
    replicate: int
    seed: int
    full_batch: bool
    init_loss: float
    train_loss: float
    test_loss: float
    train_loss_sum: float
    w_norm: float
    embed_norm: float
    margin: float
    budget_lhs: float
    budget_rhs: float
    z_dev: float
    converged_epoch: int
    diverged: bool

    @property
    def key(self):
        return (self.model, self.width, self.lr, self.batch, self.replicate)


ROW_FIELDS = tuple(f.name for f in dataclasses.fields(SweepRow))
_INT_FIELDS = {"width", "d", "batch", "replicate", "seed", "converged_epoch"}
_BOOL_FIELDS = {"full_batch", "diverged"}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse_row(rec):
    vals = {}
    for name in ROW_FIELDS:
        s = rec[name]
        if name == "model":
            vals[name] = s
        elif name in _INT_FIELDS:
            vals[name] = int(s)
        elif name in _BOOL_FIELDS:
            vals[name] = s == "1"
        else:
            vals[name] = float(s)
    return SweepRow(**vals)


def cell_seed(base_seed, model, width, lr, batch, replicate):
    """``base_seed`` plus a stable 32-bit hash of the cell coordinates."""
    tag = f"{model}|{int(width)}|{float(lr)!r}|{int(batch)}|{int(replicate)}".encode()
    h = int.from_bytes(hashlib.blake2b(tag, digest_size=4).digest(), "little")
    return int(base_seed) + h


# ---------------------------------------------------------------------------
# running


@dataclass(frozen=True)
class SweepData:
    train: SurvivalData
    test: SurvivalData
    eta_train: np.ndarray
    grids: dict


def prepare_data(cfg: SweepConfig) -> SweepData:
    """One pool from ``cfg.gen`` split train/test by a seeded permutation, plus per-model grids.

    Grids span ``(0, tau]`` so test times always fall inside; N-MTLR gets an
    extra tail interval past ``tau``.
    """
    data, truth = generate_dataset(cfg.gen)
    perm = make_rng(cfg.gen.seed + 1).permutation(len(data))
    n_tr = int(round(cfg.train_frac * len(data)))
    tr, te = np.sort(perm[:n_tr]), np.sort(perm[n_tr:])
    grids = {}
    for kind in cfg.models:
        if kind == "deepsurv":
            continue
        m = cfg.intervals[kind]
        grids[kind] = make_grid(data.time[tr], m, cfg.grid_scheme, t_max=cfg.gen.tau,
                                tail=(kind == "nmtlr"))
    return SweepData(data[tr], data[te], truth.eta[tr], grids)


def cell_train_config(cfg: SweepConfig, model, lr, batch, seed) -> TrainConfig:
    full = model == "deepsurv" and cfg.deepsurv_full_batch
    max_epochs = cfg.max_epochs
    if full and cfg.deepsurv_max_epochs is not None:
        max_epochs = cfg.deepsurv_max_epochs
    return TrainConfig(lr=lr, batch_size=batch, max_epochs=max_epochs,
                       window=cfg.deepsurv_window if full else cfg.window,
                       rel_tol=cfg.rel_tol, full_batch=full, seed=seed)


def run_cell(cfg: SweepConfig, sd: SweepData, model, width, lr, batch, replicate) -> SweepRow:
    seed = cell_seed(cfg.base_seed, model, width, lr, batch, replicate)
    grid = sd.grids.get(model)
    task_tr = make_task(model, sd.train, grid)
    task_te = make_task(model, sd.test, grid)
    q = 1 if model == "deepsurv" else len(grid) - 1
    tcfg = cell_train_config(cfg, model, lr, batch, seed)
    full = tcfg.full_batch
    params = mlp_init(sd.train.X.shape[1], width, q, seed)
    out = train(params, task_tr, task_te, model, tcfg,
                eta_train=sd.eta_train if model == "deepsurv" else None)
    nan = math.nan
    margin = b_lhs = b_rhs = z_dev = nan
    if not out.diverged:
        logits, emb = forward(out.params, task_tr.X)
        z = logits[:, 0] if model == "deepsurv" else logits
        margin = measure_margin(z, task_tr.target, model).gamma
        if margin > 0:
            Wt, b = out.params.readout
            try:
                chk = margin_budget_check(Wt, b, emb, task_tr.target, BUDGET_KIND[model])
                b_lhs, b_rhs = chk.lhs, chk.rhs
            except MarginError:
                pass
        if model == "deepsurv":
            z_dev = out.z_deviation
    return SweepRow(
        model=model, width=int(width), d=param_count(sd.train.X.shape[1], width, q), lr=float(lr),
        batch=int(batch), replicate=int(replicate), seed=seed, full_batch=full,
        init_loss=out.init_loss, train_loss=out.train_loss, test_loss=out.test_loss,
        train_loss_sum=out.train_total, w_norm=out.w_norm, embed_norm=out.embed_max_norm,
        margin=margin, budget_lhs=b_lhs, budget_rhs=b_rhs, z_dev=z_dev,
        converged_epoch=out.converged_epoch, diverged=out.diverged,
    )


_WORKER = {}


def _init_worker(cfg_dict):
    from threadpoolctl import threadpool_limits

    _WORKER["limits"] = threadpool_limits(1)
    cfg = SweepConfig.from_dict(cfg_dict)
    _WORKER["cfg"] = cfg
    _WORKER["data"] = prepare_data(cfg)


def _work(cell):
    return run_cell(_WORKER["cfg"], _WORKER["data"], *cell)


def sweep_cells(cfg: SweepConfig, n_train):
    cells = []
    for model in cfg.models:
        for width in cfg.widths:
            for lr in cfg.lrs:
                for batch in cfg.batches_for(model, n_train):
                    for rep in range(cfg.replicates):
                        cells.append((model, int(width), float(lr), int(batch), rep))
    return cells


def run_sweep(cfg: SweepConfig, out_dir, progress=None):
    """Run (or resume) the sweep into ``out_dir``; returns rows in canonical order.

    Writes ``rows.log.csv`` (append-only), ``rows.csv`` (sorted) and
    ``manifest.json``, and appends this session's wall time to ``timing.json``.
    A log written under a different config is rejected.
    """
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "rows.log.csv"
    chash = cfg.config_hash()
    manifest_path = out / "manifest.json"
    if log_path.exists() and manifest_path.exists():
        old = json.loads(manifest_path.read_text()).get("config_hash")
        if old != chash:
            raise InvalidConfigError(f"{out} holds a sweep with a different config; use a fresh directory")
    sd = prepare_data(cfg)
    write_manifest(cfg, sd, manifest_path)

    done = {r.key: r for r in read_rows(log_path)} if log_path.exists() else {}
    todo = [c for c in sweep_cells(cfg, len(sd.train)) if c not in done]
    new_file = not log_path.exists()
    with open(log_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(ROW_FIELDS)
            fh.flush()

        def emit(row):
            writer.writerow([_fmt(getattr(row, f)) for f in ROW_FIELDS])
            fh.flush()
            done[row.key] = row
            if progress is not None:
                progress(row, len(done))

        if cfg.jobs == 1:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(1):
                for cell in todo:
                    emit(run_cell(cfg, sd, *cell))
        elif todo:
            with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker,
                                     initargs=(cfg.to_dict(),)) as pool:
                futs = [pool.submit(_work, c) for c in todo]
                for fut in as_completed(futs):
                    emit(fut.result())
    rows = sorted(done.values(), key=_sort_key)
    write_rows(rows, out / "rows.csv")
    _log_timing(out / "timing.json", len(todo), time.perf_counter() - t0, cfg.jobs)
    return rows


def _log_timing(path, n_cells, seconds, jobs):
    doc = json.loads(path.read_text()) if path.exists() else {"sessions": []}
    doc["sessions"].append({"cells_run": n_cells, "seconds": round(seconds, 3), "jobs": jobs})
    doc["total_seconds"] = round(sum(s["seconds"] for s in doc["sessions"]), 3)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _sort_key(r):
    return (r.model, r.width, r.lr, r.batch, r.replicate)


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class CurvePoint:
    model: str
    width: int
    d: int
    init_loss: float
    train_loss: float
    test_loss: float
    w_norm: float
    embed_norm: float
    margin: float
    z_dev: float
    n_cells: int
    n_diverged: int
    gap: bool


CURVE_FIELDS = tuple(f.name for f in dataclasses.fields(CurvePoint))
_CURVE_STATS = ("init_loss", "train_loss", "test_loss", "w_norm", "embed_norm", "margin", "z_dev")


def _median(vals):
    # even count: midpoint of the two central values
    v = sorted(vals)
    k = len(v)
    if k == 0:
        return math.nan
    mid = k // 2
    return v[mid] if k % 2 else 0.5 * (v[mid - 1] + v[mid])


def aggregate(rows):
    """Mean over replicates per (width, lr, batch), then median over (lr, batch) per width.

    Diverged rows are dropped and counted. A width whose every cell diverged
    is kept as a gap with NaN statistics. Rows may mix models; points come
    back sorted by (model, width).
    """
    groups = {}
    for r in rows:
        groups.setdefault((r.model, r.width), {}).setdefault((r.lr, r.batch), []).append(r)
    points = []
    for (model, width), cells in sorted(groups.items()):
        n_div = sum(r.diverged for rs in cells.values() for r in rs)
        d = next(iter(cells.values()))[0].d
        means = {s: [] for s in _CURVE_STATS}
        for key in sorted(cells):
            ok = [r for r in cells[key] if not r.diverged]
            if not ok:
                continue
            for s in _CURVE_STATS:
                vals = [getattr(r, s) for r in ok]
                means[s].append(sum(vals) / len(vals))
        n_ok = len(means["train_loss"])
        stats = {s: _median(means[s]) for s in _CURVE_STATS}
        points.append(CurvePoint(model=model, width=width, d=d, n_cells=n_ok, n_diverged=n_div,
                                 gap=n_ok == 0, **stats))
    return points


def detect_threshold(curve, infimum, tol):
    """Smallest width whose aggregated train loss is within ``tol`` of ``infimum``."""
    for pt in sorted(curve, key=lambda p: p.width):
        if not pt.gap and pt.train_loss <= infimum + tol:
            return pt.width
    return None


def thresholds(points, infima=None):
    """Threshold width per model with ``tol = THRESHOLD_FRAC * init_loss`` at the smallest width.

    ``infima`` maps model to its per-sample training-loss infimum (default 0).
    """
    infima = infima or {}
    out = {}
    for model in sorted({p.model for p in points}):
        curve = [p for p in points if p.model == model]
        first = min((p for p in curve if not p.gap), key=lambda p: p.width, default=None)
        inf = float(infima.get(model, 0.0))
        if first is None:
            out[model] = {"width": None, "infimum": inf, "tol": None}
            continue
        tol = THRESHOLD_FRAC * first.init_loss
        out[model] = {"width": detect_threshold(curve, inf, tol), "infimum": inf, "tol": tol}
    return out


# ---------------------------------------------------------------------------
# persistence


def write_rows(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([_fmt(getattr(r, f)) for f in ROW_FIELDS])


def read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROW_FIELDS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [_parse_row(rec) for rec in reader]


def write_curves(points, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_FIELDS)
        for p in points:
            w.writerow([_fmt(getattr(p, f)) for f in CURVE_FIELDS])


def read_curves(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CURVE_FIELDS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for rec in reader:
            vals = {}
            for name in CURVE_FIELDS:
                s = rec[name]
                if name == "model":
                    vals[name] = s
                elif name in ("width", "d", "n_cells", "n_diverged"):
                    vals[name] = int(s)
                elif name == "gap":
                    vals[name] = s == "1"
                else:
                    vals[name] = float(s)
            out.append(CurvePoint(**vals))
    return out


def write_manifest(cfg: SweepConfig, sd: SweepData | None, path):
    from .losses import loss_infimum

    doc = {"config": cfg.to_dict(), "config_hash": cfg.config_hash()}
    if sd is not None:
        infima = {}
        for kind in cfg.models:
            task = make_task(kind, sd.train, sd.grids.get(kind))
            infima[kind] = {"sum": loss_infimum(kind, task.target),
                            "per_sample": loss_infimum(kind, task.target) / task.n}
        doc.update(
            n_train=len(sd.train), n_test=len(sd.test),
            censoring_train=sd.train.censoring_fraction,
            grids={k: [float(x) for x in g] for k, g in sd.grids.items()},
            train_infimum=infima,
        )
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


# ---------------------------------------------------------------------------
# plotting

_W, _H = 640, 400
_L, _R, _T, _B = 70, 20, 30, 50


def _ticks(lo, hi, k=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (k - 1) for i in range(k)]


def render_curves(points, out=None, threshold=None, title=None, show_z_dev=None):
    """Line chart of train/test loss against width on a log2 axis, as SVG text.

    ``show_z_dev`` defaults to True when any point has a finite ``z_dev``; that
    series is drawn on the same axis. ``threshold`` draws a vertical marker.
    Writes to ``out`` if given and returns the SVG string.
    """
    pts = sorted((p for p in points if not p.gap), key=lambda p: p.width)
    if len(pts) < 2:
        raise ValueError("need at least two non-gap points to draw a curve")
    if show_z_dev is None:
        show_z_dev = any(math.isfinite(p.z_dev) for p in pts)
    series = [("train", "train_loss", "#1f77b4"), ("test", "test_loss", "#d62728")]
    if show_z_dev:
        series.append(("z dev", "z_dev", "#2ca02c"))
    vals = [getattr(p, a) for _, a, _ in series for p in pts if math.isfinite(getattr(p, a))]
    if not vals:
        raise ValueError("no finite values to plot")
    ylo, yhi = min(vals), max(vals)
    if yhi == ylo:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    xlo, xhi = math.log2(pts[0].width), math.log2(pts[-1].width)
    if xhi == xlo:
        xlo, xhi = xlo - 0.5, xhi + 0.5

    def X(w):
        return _L + (math.log2(w) - xlo) / (xhi - xlo) * (_W - _L - _R)

    def Y(v):
        return _T + (yhi - v) / (yhi - ylo) * (_H - _T - _B)

    el = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<line x1="{_L}" y1="{_H - _B}" x2="{_W - _R}" y2="{_H - _B}" stroke="black"/>',
        f'<line x1="{_L}" y1="{_T}" x2="{_L}" y2="{_H - _B}" stroke="black"/>',
    ]
    if title:
        el.append(f'<text x="{_W / 2:.2f}" y="18" text-anchor="middle" font-size="14">{title}</text>')
    for p in pts:
        x = X(p.width)
        el.append(f'<line x1="{x:.2f}" y1="{_H - _B}" x2="{x:.2f}" y2="{_H - _B + 4}" stroke="black"/>')
        el.append(f'<text x="{x:.2f}" y="{_H - _B + 18}" text-anchor="middle" font-size="11">{p.width}</text>')
    for v in _ticks(ylo, yhi):
        y = Y(v)
        el.append(f'<line x1="{_L - 4}" y1="{y:.2f}" x2="{_L}" y2="{y:.2f}" stroke="black"/>')
        el.append(f'<text x="{_L - 6}" y="{y + 4:.2f}" text-anchor="end" font-size="11">{v:.3g}</text>')
    el.append(f'<text x="{(_L + _W - _R) / 2:.2f}" y="{_H - 12}" text-anchor="middle" font-size="12">'
              "neurons per layer</text>")
    if threshold is not None:
        x = X(threshold)
        el.append(f'<line class="threshold" x1="{x:.2f}" y1="{_T}" x2="{x:.2f}" y2="{_H - _B}" '
                  'stroke="gray" stroke-dasharray="4 3"/>')
    for k, (label, attr, color) in enumerate(series):
        xy = [(X(p.width), Y(getattr(p, attr))) for p in pts if math.isfinite(getattr(p, attr))]
        if xy:
            coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in xy)
            el.append(f'<polyline class="{attr}" fill="none" stroke="{color}" stroke-width="2" '
                      f'points="{coords}"/>')
        ly = _T + 14 * k + 6
        el.append(f'<line x1="{_W - 110}" y1="{ly}" x2="{_W - 90}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        el.append(f'<text x="{_W - 85}" y="{ly + 4}" font-size="11">{label}</text>')
    el.append("</svg>")
    svg = "\n".join(el) + "\n"
    if out is not None:
        Path(out).write_text(svg)
    return svg
