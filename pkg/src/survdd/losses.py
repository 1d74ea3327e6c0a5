"""Negative log-likelihood losses for neural survival models.

Four losses are provided, each returning a :class:`LossReport` with the total,
per-subject terms, the gradient with respect to the logits, and the minimal
logit margin:

* ``deepsurv``: Cox negative log partial likelihood (Breslow ties) on a
  scalar score per subject.
* ``pchazard``: piecewise-constant hazard with ``softplus`` intensities.
* ``nnet``: discrete-time logistic hazards (Nnet-Survival).
* ``nmtlr``: multi-task logistic regression on suffix-summed logits.

Totals are raw sums. Everything is evaluated in stabilized form so that
logits of magnitude 1e3 and beyond stay finite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, NumericError, TailDefinitionError

__all__ = [
    "LOSS_KINDS",
    "LossReport",
    "RiskSetIndex",
    "risk_sets",
    "softplus",
    "log_softplus",
    "sigmoid",
    "log_sigmoid",
    "deepsurv_loss",
    "deepsurv_loss_naive",
    "pchazard_loss",
    "pchazard_infimum",
    "nnet_loss",
    "nmtlr_loss",
    "nmtlr_probabilities",
    "loss_infimum",
    "compute_loss",
    "deepsurv_true_npll",
    "grad_check",
]

LOSS_KINDS = ("deepsurv", "pchazard", "nnet", "nmtlr")
SWITCH = 30.0


# ---------------------------------------------------------------------------
# stable scalar maps


def softplus(z):
    """``log(1 + e^z)`` as ``max(z, 0) + log1p(e^{-|z|})``; no overflow for any finite ``z``."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def log_softplus(z):
    """``log(softplus(z))``, switched to ``z - e^z / 2`` (error O(e^{2z})) below ``z = -30``."""
    z = np.asarray(z, dtype=float)
    mid = np.log(softplus(np.maximum(z, -SWITCH)))
    return np.where(z < -SWITCH, z - 0.5 * np.exp(np.minimum(z, 0.0)), mid)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0, e) / (1.0 + e)


def log_sigmoid(z):
    return -softplus(-np.asarray(z, dtype=float))


def _softplus_sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.maximum(z, 0.0) + np.log1p(e), np.where(z >= 0, 1.0, e) / (1.0 + e)


def _check_finite(logits):
    bad = ~np.isfinite(logits)
    if np.any(bad):
        row = int(np.argwhere(bad)[0][0])
        raise NumericError(f"non-finite logit for subject {row}", index=row)


@dataclass(frozen=True)
class LossReport:
    kind: str
    total: float
    per_sample: np.ndarray = field(repr=False)
    grad: np.ndarray = field(repr=False)
    margin: float
    n_events: int

    @property
    def n(self):
        return self.per_sample.shape[0]

    @property
    def mean(self):
        """Total divided by the number of subjects."""
        return self.total / self.n

    @property
    def per_event(self):
        return self.total / max(self.n_events, 1)


# ---------------------------------------------------------------------------
# risk sets


@dataclass(frozen=True)
class RiskSetIndex:
    """Risk sets ``R_i = {j : T_j >= T_i}`` of a sample.

    ``order`` sorts subjects by descending time (stable), so ``R_i`` is
    ``order[:risk_end[i]]``. ``group_start[i]`` is where the tie group of
    ``i`` begins in ``order``; ``tie_groups`` lists ``(start, stop)`` slices
    of tie groups with more than one member.
    """

    time: np.ndarray
    event: np.ndarray
    order: np.ndarray
    risk_end: np.ndarray
    group_start: np.ndarray
    tie_groups: tuple

    @property
    def n(self):
        return self.time.shape[0]

    @property
    def events(self):
        return np.flatnonzero(self.event)

    def members(self, i):
        return self.order[: self.risk_end[i]]


def risk_sets(time, event) -> RiskSetIndex:
    time = np.asarray(time, dtype=float).ravel()
    event = np.asarray(event).ravel().astype(np.int64)
    n = time.shape[0]
    order = np.argsort(-time, kind="stable")
    st = time[order]
    new_group = np.ones(n, dtype=bool)
    new_group[1:] = st[1:] != st[:-1]
    starts = np.flatnonzero(new_group)
    stops = np.append(starts[1:], n)
    sizes = stops - starts
    gs_sorted = np.repeat(starts, sizes)
    ge_sorted = np.repeat(stops, sizes)
    group_start = np.empty(n, dtype=np.int64)
    risk_end = np.empty(n, dtype=np.int64)
    group_start[order] = gs_sorted
    risk_end[order] = ge_sorted
    ties = tuple((int(a), int(b)) for a, b in zip(starts, stops) if b - a > 1)
    return RiskSetIndex(time, event, order, risk_end, group_start, ties)


def _reduce_others(values, rs: RiskSetIndex, op):
    """For each subject ``i``, reduce ``values`` over ``R_i \\ {i}`` (``-inf`` if empty)."""
    v = values[rs.order]
    if op == "lse":
        acc = np.logaddexp.accumulate(v)
        combine = np.logaddexp
    else:
        acc = np.maximum.accumulate(v)
        combine = np.maximum
    gs = rs.group_start[rs.order]
    before = np.where(gs > 0, acc[np.maximum(gs - 1, 0)], -np.inf)
    out_sorted = before.copy()
    for a, b in rs.tie_groups:
        seg = v[a:b]
        grid = np.where(np.eye(b - a, dtype=bool), -np.inf, seg[None, :])
        if op == "lse":
            loo = np.logaddexp.reduce(grid, axis=1)
        else:
            loo = grid.max(axis=1)
        out_sorted[a:b] = combine(before[a:b], loo)
    out = np.empty_like(out_sorted)
    out[rs.order] = out_sorted
    return out


# ---------------------------------------------------------------------------
# DeepSurv


def deepsurv_loss(logits, rs: RiskSetIndex, with_margin=True) -> LossReport:
    shape = np.shape(logits)
    z = np.asarray(logits, dtype=float).reshape(-1)
    if z.shape[0] != rs.n:
        raise ValueError(f"expected {rs.n} scores, got {z.shape[0]}")
    _check_finite(z)
    ev = rs.event == 1
    others = _reduce_others(z, rs, "lse")
    per_sample = np.where(ev, softplus(others - z), 0.0)

    lse_full = np.logaddexp(others, z)
    # d/dz_k = exp(z_k) * sum_{events i : T_i <= T_k} exp(-LSE_i) - delta_k
    lw = np.where(ev, -lse_full, -np.inf)[rs.order]
    suffix = np.logaddexp.accumulate(lw[::-1])[::-1]
    log_s = suffix[rs.group_start]
    grad = np.exp(z + log_s) - ev

    margin = math.nan
    if with_margin and ev.any():
        margin = float(np.where(ev, z - _reduce_others(z, rs, "max"), np.inf).min())
    return LossReport(
        "deepsurv", float(per_sample.sum()), per_sample, grad.reshape(shape), margin, int(ev.sum())
    )


def deepsurv_loss_naive(logits, time, event):
    """Direct O(n^2) evaluation of the partial likelihood; reference only."""
    z = [float(v) for v in np.asarray(logits, dtype=float).ravel()]
    time = [float(t) for t in np.asarray(time).ravel()]
    event = [int(e) for e in np.asarray(event).ravel()]
    total = 0.0
    for i in range(len(z)):
        if not event[i]:
            continue
        risk = [z[j] for j in range(len(z)) if time[j] >= time[i]]
        top = max(risk)
        total += top + math.log(sum(math.exp(r - top) for r in risk)) - z[i]
    return total


# ---------------------------------------------------------------------------
# interval models


def _interval_margin(values, disc, enabled=True):
    ev = disc.event == 1
    if not enabled or not ev.any():
        return math.nan
    rows = np.flatnonzero(ev)
    cols = disc.idx[rows]
    own = values[rows, cols]
    rest = values[rows].copy()
    rest[np.arange(rows.size), cols] = -np.inf
    if values.shape[1] == 1:
        return math.inf
    return float((own - rest.max(axis=1)).min())


def _check_interval_logits(logits, disc):
    z = np.asarray(logits, dtype=float)
    if z.shape != (disc.n, disc.m):
        raise ValueError(f"expected logits of shape {(disc.n, disc.m)}, got {z.shape}")
    _check_finite(z)
    return z


def pchazard_loss(logits, disc, with_margin=True) -> LossReport:
    z = _check_interval_logits(logits, disc)
    ev = disc.event == 1
    if np.any(disc.rho[ev] <= 0):
        bad = int(np.flatnonzero(ev & (disc.rho <= 0))[0])
        raise DomainError(f"event subject {bad} has zero exposure in its interval")
    n = disc.n
    rows = np.arange(n)
    j = disc.idx
    eta, sig = _softplus_sigmoid(z)
    before = disc.mask.copy()
    before[rows, j] = False
    zj = z[rows, j]
    per_sample = (
        np.where(ev, -log_softplus(zj), 0.0)
        + disc.rho * eta[rows, j]
        + np.where(before, eta, 0.0).sum(axis=1)
    )
    grad = np.where(before, sig, 0.0)
    # d/dz [-log softplus(z)] = -sigmoid(z) / softplus(z)
    ratio = np.exp(log_sigmoid(zj) - log_softplus(zj))
    grad[rows, j] = disc.rho * sig[rows, j] - np.where(ev, ratio, 0.0)
    return LossReport(
        "pchazard", float(per_sample.sum()), per_sample, grad, _interval_margin(z, disc, with_margin), int(ev.sum())
    )


def pchazard_infimum(disc):
    ev = disc.event == 1
    rho = disc.rho[ev]
    if np.any(rho <= 0):
        raise DomainError("an event subject has zero exposure; the infimum is -inf")
    return float(np.sum(1.0 + np.log(rho)))


def nnet_loss(logits, disc, with_margin=True) -> LossReport:
    z = _check_interval_logits(logits, disc)
    sign = 2.0 * disc.y - 1.0
    e = np.exp(-np.abs(z))
    # log(1 + e^{-s z}) with s = +-1 shares e^{-|z|} with the sigmoid
    cell = np.where(disc.mask, np.maximum(-sign * z, 0.0) + np.log1p(e), 0.0)
    per_sample = cell.sum(axis=1)
    sig = np.where(z >= 0, 1.0, e) / (1.0 + e)
    grad = np.where(disc.mask, sig - disc.y, 0.0)
    return LossReport(
        "nnet", float(per_sample.sum()), per_sample, grad, _interval_margin(z, disc, with_margin),
        int(disc.event.sum()),
    )


def _suffix_sum(z):
    return np.cumsum(z[:, ::-1], axis=1)[:, ::-1]


def _prefix_suffix_lse(C):
    n, m = C.shape
    pad = np.full((n, 1), -np.inf)
    pre = np.hstack([pad, np.logaddexp.accumulate(C, axis=1)])  # pre[:, k] = LSE(C[:, :k])
    suf = np.hstack([np.logaddexp.accumulate(C[:, ::-1], axis=1)[:, ::-1], pad])  # LSE(C[:, k:])
    return pre, suf


def nmtlr_probabilities(logits):
    """Event probabilities ``p`` and survival ``S_j = sum_{l > j} p_l`` per subject."""
    C = _suffix_sum(np.asarray(logits, dtype=float))
    logp = C - np.logaddexp.reduce(C, axis=1, keepdims=True)
    p = np.exp(logp)
    S = np.hstack([np.cumsum(p[:, ::-1], axis=1)[:, ::-1][:, 1:], np.zeros((p.shape[0], 1))])
    return p, S


def nmtlr_loss(logits, disc, with_margin=True) -> LossReport:
    z = _check_interval_logits(logits, disc)
    n, m = z.shape
    ev = disc.event == 1
    j = disc.idx
    if np.any(~ev & (j >= m - 1)):
        bad = int(np.flatnonzero(~ev & (j >= m - 1))[0])
        raise TailDefinitionError(
            f"censored subject {bad} lies in the last interval and has no survival tail"
        )
    rows = np.arange(n)
    C = _suffix_sum(z)
    pre, suf = _prefix_suffix_lse(C)
    Cj = C[rows, j]
    others = np.logaddexp(pre[rows, j], suf[rows, j + 1])
    # event rows may sit in the last interval, where the tail is empty
    head, tail = pre[rows, j + 1], np.where(ev, 0.0, suf[rows, j + 1])
    per_sample = np.where(ev, softplus(others - Cj), softplus(head - tail))

    logZ = suf[:, 0:1]
    P = np.exp(C - logZ)
    cols = np.arange(m)[None, :]
    in_tail = (cols > j[:, None]) & ~ev[:, None]
    target = np.where(
        ev[:, None],
        (cols == j[:, None]).astype(float),
        np.exp(np.where(in_tail, C - tail[:, None], -np.inf)),
    )
    gC = P - target
    grad = np.cumsum(gC, axis=1)  # C_l depends on z_k for every l <= k
    return LossReport(
        "nmtlr", float(per_sample.sum()), per_sample, grad, _interval_margin(C, disc, with_margin), int(ev.sum())
    )


# ---------------------------------------------------------------------------
# dispatch and helpers


_LOSSES = {
    "deepsurv": deepsurv_loss,
    "pchazard": pchazard_loss,
    "nnet": nnet_loss,
    "nmtlr": nmtlr_loss,
}


def compute_loss(kind, logits, target, with_margin=True) -> LossReport:
    """Evaluate loss ``kind``; ``target`` is a RiskSetIndex for deepsurv, else a DiscretizedDataset."""
    try:
        fn = _LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}") from None
    return fn(logits, target, with_margin)


def loss_infimum(kind, target):
    """Infimum of the raw-sum training loss over free logits."""
    if kind == "pchazard":
        return pchazard_infimum(target)
    if kind in _LOSSES:
        return 0.0
    raise ValueError(f"unknown loss kind {kind!r}")


def deepsurv_true_npll(data, truth):
    """Partial likelihood loss at the data-generating log-hazard."""
    rs = risk_sets(data.time, data.event)
    rep = deepsurv_loss(truth.eta, rs)
    return {"raw": rep.total, "per_event": rep.per_event, "per_sample": rep.mean}


def grad_check(kind, logits, target, h=1e-5):
    """Worst relative error between analytic and central-difference gradients.

    The error is ``max|a - fd| / max(max|a|, max|fd|)`` over all logits.
    """
    z = np.array(logits, dtype=float)
    analytic = compute_loss(kind, z, target).grad.ravel()
    flat = z.ravel()
    fd = np.empty_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = compute_loss(kind, flat.reshape(z.shape), target).total
        flat[k] = orig - h
        down = compute_loss(kind, flat.reshape(z.shape), target).total
        flat[k] = orig
        fd[k] = (up - down) / (2 * h)
    scale = max(np.abs(analytic).max(), np.abs(fd).max(), np.finfo(float).tiny)
    return float(np.abs(analytic - fd).max() / scale)
