"""Simulated right-censored survival data and interval discretization.

Covariates are Gaussian with AR(1) correlation, the log-hazard is a sparse sum
of thresholded covariates, event times are Weibull, and observations are
censored by a uniform censoring time and an administrative cutoff.

All randomness flows through :func:`make_rng`, a Philox (counter-based,
64-bit keyed) generator, so ``seed`` and ``seed + k`` give reproducible,
independent streams.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DomainError, GridError, InvalidConfigError

__all__ = [
    "GenConfig",
    "SurvivalRecord",
    "SurvivalData",
    "GroundTruth",
    "DiscretizedDataset",
    "IntervalDiscretizer",
    "make_rng",
    "sample_covariates",
    "make_coefficients",
    "true_log_hazard",
    "sample_event_time",
    "apply_censoring",
    "generate_dataset",
    "make_grid",
    "assign_intervals",
    "discretize",
    "write_dataset",
    "read_dataset",
]

GRID_TOP_MARGIN = 1e-9


@dataclass(frozen=True)
class GenConfig:
    n: int = 3500
    p: int = 200
    s: int = 50
    rho: float = 0.6
    beta_range: float = 0.5
    scale: float = 0.31
    gamma: float = 0.7
    cens_hi: float = 0.8
    tau: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidConfigError(f"n must be >= 1, got {self.n}")
        if not 1 <= self.s <= self.p:
            raise InvalidConfigError(f"need 1 <= s <= p, got s={self.s}, p={self.p}")
        if not 0 <= self.rho < 1:
            raise InvalidConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.gamma <= 0:
            raise InvalidConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.tau <= 0:
            raise InvalidConfigError(f"tau must be > 0, got {self.tau}")
        if self.cens_hi <= 0:
            raise InvalidConfigError(f"cens_hi must be > 0, got {self.cens_hi}")
        if self.beta_range < 0:
            raise InvalidConfigError("beta_range must be >= 0")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown GenConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SurvivalRecord:
    x: np.ndarray
    time: float
    event: int


@dataclass(frozen=True)
class SurvivalData:
    """Column-oriented set of survival records."""

    X: np.ndarray
    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        time = np.asarray(self.time, dtype=float).ravel()
        event = np.asarray(self.event).ravel().astype(np.int64)
        if X.ndim != 2 or X.shape[0] != time.shape[0] or event.shape != time.shape:
            raise ValueError("X, time and event must agree in length")
        if np.any(time < 0):
            raise DomainError("observed times must be nonnegative")
        if not np.all((event == 0) | (event == 1)):
            raise DomainError("event flags must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)

    def __len__(self):
        return self.time.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return SurvivalRecord(self.X[i], float(self.time[i]), int(self.event[i]))
        return SurvivalData(self.X[i], self.time[i], self.event[i])

    @property
    def censoring_fraction(self):
        return float(1.0 - self.event.mean())


@dataclass(frozen=True)
class GroundTruth:
    beta: np.ndarray
    support: np.ndarray
    eta: np.ndarray
    scale: float

    @property
    def eta_rms(self):
        return float(np.sqrt(np.mean(self.eta**2)))

    @property
    def eta_norm(self):
        """Raw Euclidean norm of the true log-hazard over the sample."""
        return float(np.linalg.norm(self.eta))


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def sample_covariates(n, p, rho, rng):
    """Draw an ``n x p`` matrix whose rows are N(0, Sigma) with Sigma_kl = rho^|k-l|."""
    if not 0 <= rho < 1:
        raise InvalidConfigError(f"rho must lie in [0, 1), got {rho}")
    eps = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = eps[:, 0]
    innov = np.sqrt(1.0 - rho * rho)
    for k in range(1, p):
        X[:, k] = rho * X[:, k - 1] + innov * eps[:, k]
    return X


def make_coefficients(p, s, half_width, rng):
    """Sparse coefficients; returns ``(beta, support)`` with ``support`` sorted."""
    if s > p or s < 0:
        raise InvalidConfigError(f"need 0 <= s <= p, got s={s}, p={p}")
    support = np.sort(rng.permutation(p)[:s])
    beta = np.zeros(p)
    beta[support] = rng.uniform(-half_width, half_width, size=s)
    return beta, support


def true_log_hazard(x, beta, support, scale):
    x = np.asarray(x, dtype=float)
    support = np.asarray(support, dtype=np.int64)
    ind = (x[..., support] > 0).astype(float)
    return scale * (ind @ np.asarray(beta, dtype=float)[support])


def sample_event_time(eta, gamma, u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise DomainError("u must lie strictly inside (0, 1)")
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    t = (-np.log(u) / np.exp(eta)) ** (1.0 / gamma)
    return t if t.ndim else float(t)


def apply_censoring(T, C, tau):
    T = np.asarray(T, dtype=float)
    C = np.asarray(C, dtype=float)
    Y = np.minimum(np.minimum(T, C), tau)
    delta = ((T <= C) & (T <= tau)).astype(np.int64)
    if Y.ndim == 0:
        return float(Y), int(delta)
    return Y, delta


def _open_unit(rng, n):
    u = rng.random(n)
    u[u == 0.0] = np.nextafter(0.0, 1.0)
    return u


def generate_dataset(cfg: GenConfig):
    """Simulate ``cfg.n`` subjects; returns ``(SurvivalData, GroundTruth)``."""
    rng = make_rng(cfg.seed)
    beta, support = make_coefficients(cfg.p, cfg.s, cfg.beta_range, rng)
    X = sample_covariates(cfg.n, cfg.p, cfg.rho, rng)
    eta = true_log_hazard(X, beta, support, cfg.scale)
    T = sample_event_time(eta, cfg.gamma, _open_unit(rng, cfg.n))
    C = rng.uniform(0.0, cfg.cens_hi, size=cfg.n)
    Y, delta = apply_censoring(T, C, cfg.tau)
    truth = GroundTruth(beta=beta, support=support, eta=eta, scale=cfg.scale)
    return SurvivalData(X, Y, delta), truth


# ---------------------------------------------------------------------------
# discretization


@dataclass(frozen=True)
class DiscretizedDataset:
    """Interval assignment of a set of observed times.

    ``idx`` is the 0-based interval index, so subject ``i`` lies in
    ``(grid[idx[i]], grid[idx[i] + 1]]``. ``mask[i, k]`` marks the at-risk
    cells ``k <= idx[i]`` and ``y[i, k]`` the event indicators.
    """

    grid: np.ndarray
    idx: np.ndarray
    rho: np.ndarray
    event: np.ndarray
    mask: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)

    @property
    def m(self):
        return self.grid.shape[0] - 1

    @property
    def n(self):
        return self.idx.shape[0]

    @property
    def j_of(self):
        """1-based interval index j(i)."""
        return self.idx + 1

    @property
    def n_cells(self):
        return int(self.mask.sum())

    def subset(self, rows):
        return DiscretizedDataset(
            grid=self.grid,
            idx=self.idx[rows],
            rho=self.rho[rows],
            event=self.event[rows],
            mask=self.mask[rows],
            y=self.y[rows],
            r=_risk_counts(self.idx[rows], self.m),
        )


def make_grid(time, m, scheme="equidistant", t_max=None, tail=False):
    """Cut points ``0 = tau_0 < ... < tau_m``.

    The data are spread over ``(0, top]`` with ``top = t_max`` or
    ``max(time)``, inflated by a relative 1e-9. With ``tail=True`` the data
    occupy the first ``m - 1`` intervals and one more interval is appended past
    ``top``, so every subject has at least one later interval.
    """
    if m < 1:
        raise InvalidConfigError(f"m must be >= 1, got {m}")
    if tail and m < 2:
        raise InvalidConfigError("a tail interval needs m >= 2")
    time = np.asarray(time, dtype=float)
    top = float(np.max(time)) if t_max is None else float(t_max)
    if top <= 0:
        raise GridError("grid top must be positive")
    top *= 1.0 + GRID_TOP_MARGIN
    k = m - 1 if tail else m
    if scheme == "equidistant":
        cuts = np.linspace(0.0, top, k + 1)
    elif scheme == "quantile":
        inner = np.quantile(time, np.arange(1, k) / k) if k > 1 else np.empty(0)
        cuts = np.concatenate([[0.0], inner, [top]])
    else:
        raise InvalidConfigError(f"unknown grid scheme {scheme!r}")
    if tail:
        cuts = np.append(cuts, top + (cuts[-1] - cuts[-2]))
    _check_grid(cuts)
    return cuts


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.shape[0] < 2 or grid[0] != 0.0:
        raise GridError("grid must be a 1-d array starting at 0 with >= 2 cuts")
    if np.any(np.diff(grid) <= 0):
        raise GridError("grid has a zero-width or decreasing interval")
    return grid


def _risk_counts(idx, m):
    # r_j = #{i : idx_i >= j}
    counts = np.bincount(idx, minlength=m)
    return counts[::-1].cumsum()[::-1]


def assign_intervals(time, event, grid):
    grid = _check_grid(grid)
    time = np.asarray(time, dtype=float).ravel()
    event = np.asarray(event).ravel().astype(np.int64)
    if np.any(time < 0):
        raise DomainError("observed times must be nonnegative")
    if np.any(time > grid[-1]):
        bad = int(np.argmax(time > grid[-1]))
        raise GridError(f"time {time[bad]} of subject {bad} exceeds grid top {grid[-1]}")
    m = grid.shape[0] - 1
    # right-closed intervals: time == tau_j belongs to interval j
    idx = np.maximum(np.searchsorted(grid[1:], time, side="left"), 0)
    lo, hi = grid[idx], grid[idx + 1]
    rho = (time - lo) / (hi - lo)
    cols = np.arange(m)
    mask = cols[None, :] <= idx[:, None]
    y = ((cols[None, :] == idx[:, None]) & (event[:, None] == 1)).astype(float)
    return DiscretizedDataset(
        grid=grid, idx=idx, rho=rho, event=event, mask=mask, y=y, r=_risk_counts(idx, m)
    )


def discretize(time, event, m, scheme="equidistant", t_max=None, tail=False):
    return assign_intervals(time, event, make_grid(time, m, scheme, t_max, tail))


class IntervalDiscretizer(TransformerMixin, BaseEstimator):
    """Learn an interval grid from observed times and assign subjects to it.

    ``transform`` takes a survival target (see :func:`survdd.validation.check_survival_y`)
    and returns a :class:`DiscretizedDataset`.
    """

    def __init__(self, n_intervals=20, scheme="equidistant", t_max=None, tail=False):
        self.n_intervals = n_intervals
        self.scheme = scheme
        self.t_max = t_max
        self.tail = tail

    def fit(self, y, _=None):
        from .validation import check_survival_y

        time, _event = check_survival_y(y)
        self.grid_ = make_grid(time, self.n_intervals, self.scheme, self.t_max, self.tail)
        return self

    def transform(self, y):
        from .validation import check_survival_y

        check_is_fitted(self, "grid_")
        time, event = check_survival_y(y)
        return assign_intervals(time, event, self.grid_)


# ---------------------------------------------------------------------------
# persistence


def write_dataset(prefix, data: SurvivalData, truth: GroundTruth | None = None,
                  cfg: GenConfig | None = None, grid=None):
    """Write ``<prefix>.csv`` and the ``<prefix>.json`` sidecar; returns both paths."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    p = data.X.shape[1]
    header = ",".join([f"x_{k + 1}" for k in range(p)] + ["time", "event"])
    csv_path = prefix.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write(header + "\n")
        for i in range(len(data)):
            vals = [repr(float(v)) for v in data.X[i]]
            vals += [repr(float(data.time[i])), str(int(data.event[i]))]
            fh.write(",".join(vals) + "\n")
    meta = {
        "config": cfg.to_dict() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "n": len(data),
        "p": p,
        "censoring_fraction": data.censoring_fraction,
        "grid": None if grid is None else [float(g) for g in grid],
    }
    if truth is not None:
        meta.update(
            beta=[float(b) for b in truth.beta],
            support=[int(k) for k in truth.support],
            eta=[float(e) for e in truth.eta],
            eta_rms=truth.eta_rms,
            eta_norm=truth.eta_norm,
            scale=truth.scale,
        )
    json_path = prefix.with_suffix(".json")
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def read_dataset(prefix):
    """Inverse of :func:`write_dataset`; returns ``(data, truth_or_None, meta)``."""
    prefix = Path(prefix)
    csv_path = prefix if prefix.suffix == ".csv" else prefix.with_suffix(".csv")
    arr = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    data = SurvivalData(arr[:, :-2], arr[:, -2], arr[:, -1].astype(np.int64))
    meta = {}
    truth = None
    json_path = csv_path.with_suffix(".json")
    if json_path.exists():
        meta = json.loads(json_path.read_text())
        if meta.get("beta") is not None:
            truth = GroundTruth(
                beta=np.asarray(meta["beta"]),
                support=np.asarray(meta["support"], dtype=np.int64),
                eta=np.asarray(meta["eta"]),
                scale=meta["scale"],
            )
    return data, truth, meta
