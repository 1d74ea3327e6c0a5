"""Numerical checks of the interpolation constructions and margin-norm bounds.

Bounds and margins here are computed with their own arithmetic (plain numpy,
brute-force over pairs) rather than through :mod:`survdd.losses`, so a bug in
the loss code cannot hide behind a matching bug in its verifier. The losses
themselves are evaluated with :mod:`survdd.losses`, since they are what is
being checked.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .exceptions import DomainError, MarginError, OutOfRegimeError, SeparabilityError, TailDefinitionError
from .losses import deepsurv_loss, nmtlr_loss, nnet_loss, pchazard_loss, risk_sets

__all__ = [
    "T_GRID",
    "EPS_GRID",
    "SLACK",
    "MarginReport",
    "BoundCheck",
    "CheckResult",
    "measure_margin",
    "deepsurv_scaling_path",
    "epsilon_margin_deepsurv",
    "margin_budget_check",
    "pchazard_construct",
    "pchazard_free_optimum",
    "nnet_construct",
    "nmtlr_construct",
]

T_GRID = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0)
EPS_GRID = (1e-1, 1e-2, 1e-3, 1e-6)
SLACK = 1e-12
BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class MarginReport:
    kind: str
    gamma: float
    pair: tuple  # (subject, competitor subject) or (subject, competitor interval)
    epsilon: float = math.nan


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float

    @property
    def slack(self):
        return self.lhs - self.rhs

    @property
    def passed(self):
        return self.slack >= -BOUND_SLACK


@dataclass
class CheckResult:
    """One line of a verification report."""

    name: str
    params: dict
    lhs: float
    rhs: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


# ---------------------------------------------------------------------------
# margins


def _comparable(time, event):
    """Boolean matrix P[i, j]: event i and j in R_i \\ {i}."""
    time = np.asarray(time, dtype=float)
    ev = np.asarray(event).astype(bool)
    P = (time[None, :] >= time[:, None]) & ev[:, None]
    np.fill_diagonal(P, False)
    return P


def _cumulative(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    run = np.zeros(z.shape[0])
    for k in range(z.shape[1] - 1, -1, -1):
        run = run + z[:, k]
        out[:, k] = run
    return out


def measure_margin(logits, target, kind) -> MarginReport:
    """Smallest logit margin.

    ``kind="deepsurv"``: min over events ``i`` and ``j`` in ``R_i \\ {i}`` of
    ``z_i - z_j`` (``target`` is a RiskSetIndex or ``(time, event)``).
    ``"pchazard"``/``"nnet"``/``"interval"``: min over events of
    ``z[i, j(i)] - max_{k != j(i)} z[i, k]``. ``"nmtlr"``/``"cumulative"``:
    the same on the suffix sums ``C_j = sum_{k >= j} z_k``.
    """
    if kind == "deepsurv":
        time, event = (target.time, target.event) if hasattr(target, "time") else target
        z = np.asarray(logits, dtype=float).ravel()
        if not np.any(event):
            raise MarginError("margin is undefined without events")
        P = _comparable(time, event)
        if not P.any():
            i = int(np.flatnonzero(event)[0])
            return MarginReport(kind, math.inf, (i, i))
        gaps = np.where(P, z[:, None] - z[None, :], np.inf)
        i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
        return MarginReport(kind, float(gaps[i, j]), (int(i), int(j)))

    if kind in ("nmtlr", "cumulative"):
        values = _cumulative(logits)
    elif kind in ("pchazard", "nnet", "interval"):
        values = np.asarray(logits, dtype=float)
    else:
        raise ValueError(f"unknown margin kind {kind!r}")
    rows = np.flatnonzero(target.event == 1)
    if rows.size == 0:
        raise MarginError("margin is undefined without events")
    best = (math.inf, (int(rows[0]), int(target.idx[rows[0]])))
    for i in rows:
        j = target.idx[i]
        others = np.delete(values[i], j)
        if others.size == 0:
            continue
        k = int(np.argmax(others))
        gap = float(values[i, j] - others[k])
        if gap < best[0]:
            best = (gap, (int(i), int(k + (k >= j))))
    return MarginReport(kind, best[0], best[1])


# ---------------------------------------------------------------------------
# DeepSurv


def deepsurv_scaling_path(z_base, rs, t_grid=T_GRID):
    """Loss along ``t * z_base`` against ``sum_i log(1 + k_i e^{-t gamma})``.

    Returns a list of :class:`CheckResult` (one per ``t``) plus a final
    monotonicity check. Raises :class:`SeparabilityError` if ``z_base`` does
    not strictly separate every comparable pair.
    """
    z = np.asarray(z_base, dtype=float).ravel()
    rep = measure_margin(z, rs, "deepsurv")
    if rep.gamma <= 0:
        i, j = rep.pair
        raise SeparabilityError(
            f"event {i} does not outrank subject {j} of its risk set (gap {rep.gamma:.3g})"
        )
    P = _comparable(rs.time, rs.event)
    k = P.sum(axis=1)[np.asarray(rs.event).astype(bool)]
    gamma = rep.gamma
    out, losses = [], []
    for t in t_grid:
        loss = deepsurv_loss(t * z, rs, with_margin=False).total
        bound = float(np.sum(np.log1p(k * np.exp(-t * gamma)))) if math.isfinite(gamma) else 0.0
        losses.append(loss)
        out.append(CheckResult("deepsurv_scaling_bound", {"t": t, "gamma": gamma}, loss, bound,
                               loss <= bound + SLACK))
    steps = np.diff(losses)
    dec = bool(np.all(steps < 0)) if len(losses) > 1 else True
    worst = float(steps.max()) if steps.size else 0.0
    out.append(CheckResult("deepsurv_scaling_decreasing", {"t_grid": list(t_grid)}, worst, 0.0, dec))
    return out


def epsilon_margin_deepsurv(logits, rs, epsilon=None):
    """Check ``min margin >= log(1/eps) - log 2`` for a score vector with loss excess ``<= eps``.

    ``epsilon`` defaults to the loss itself (its infimum is 0). Returns
    ``(MarginReport, BoundCheck)``.
    """
    z = np.asarray(logits, dtype=float).ravel()
    loss = deepsurv_loss(z, rs, with_margin=False).total
    eps = loss if epsilon is None else float(epsilon)
    if eps > math.log(2) or eps <= 0:
        raise OutOfRegimeError(f"epsilon must lie in (0, log 2], got {eps}")
    if loss > eps:
        raise DomainError(f"loss {loss} exceeds epsilon {eps}")
    rep = measure_margin(z, rs, "deepsurv")
    required = math.log(1.0 / eps) - math.log(2.0)
    return MarginReport("deepsurv", rep.gamma, rep.pair, eps), BoundCheck(rep.gamma, required)


def _max_pair_distance(F, time, event):
    P = _comparable(time, event)
    best = 0.0
    for i in np.flatnonzero(P.any(axis=1)):
        d = np.linalg.norm(F[P[i]] - F[i], axis=1).max()
        best = max(best, float(d))
    return best


def margin_budget_check(W, b, embeddings, target, kind) -> BoundCheck:
    """Readout norm against the margin it realizes on ``embeddings``.

    ``W`` has shape ``(q, u)``. For ``kind="deepsurv"`` the bound is
    ``gamma / max ||f_i - f_j||`` over comparable pairs and ``lhs = ||W||_2``.
    For ``"interval"`` the bias is absorbed into ``[W b]`` acting on ``(f, 1)``
    and the bound is ``gamma / (sqrt 2 max ||(f_i, 1)||)``. ``"cumulative"``
    applies the interval bound to the suffix-sum readout ``U [W b]``.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    F = np.asarray(embeddings, dtype=float)
    if kind == "deepsurv":
        z = F @ W[0] + b[0]
        gamma = measure_margin(z, target, "deepsurv").gamma
        if not gamma > 0:
            raise MarginError(f"no positive margin (gamma={gamma})")
        dist = _max_pair_distance(F, target.time, target.event)
        lhs = float(np.linalg.svd(W, compute_uv=False)[0])
        return BoundCheck(lhs, gamma / dist if dist > 0 else math.inf)

    Wt = np.hstack([W, b[:, None]])
    Ft = np.hstack([F, np.ones((F.shape[0], 1))])
    if kind == "cumulative":
        Wt = np.triu(np.ones((Wt.shape[0], Wt.shape[0]))) @ Wt
    elif kind != "interval":
        raise ValueError(f"unknown budget kind {kind!r}")
    phi = Ft @ Wt.T
    gamma = measure_margin(phi, target, "interval").gamma
    if not gamma > 0:
        raise MarginError(f"no positive margin (gamma={gamma})")
    fmax = float(np.linalg.norm(Ft, axis=1).max())
    lhs = float(np.linalg.svd(Wt, compute_uv=False)[0])
    return BoundCheck(lhs, gamma / (math.sqrt(2.0) * fmax))


# ---------------------------------------------------------------------------
# interval-model constructions


def _pch_infimum(disc):
    ev = disc.event == 1
    return float(sum(1.0 + math.log(r) for r in disc.rho[ev]))


def pchazard_construct(disc, eps_prime):
    """Logits with intensity ``eps'`` off the event cells and ``1/rho`` on them.

    Returns ``(logits, CheckResult)``; the check compares the excess over the
    infimum with ``n_cells * eps' * (1 + max rho)``.
    """
    ev = disc.event == 1
    if np.any(disc.rho[ev] <= 0):
        raise DomainError("event subjects need positive exposure")
    n, m = disc.mask.shape
    z = np.full((n, m), math.log(math.expm1(eps_prime)))
    rows = np.flatnonzero(ev)
    inv = 1.0 / disc.rho[rows]
    # log(e^a - 1) = a + log(1 - e^{-a})
    z[rows, disc.idx[rows]] = inv + np.log(-np.expm1(-inv))
    loss = pchazard_loss(z, disc, with_margin=False).total
    inf = _pch_infimum(disc)
    excess = loss - inf
    bound = int(disc.mask.sum()) * eps_prime * (1.0 + float(disc.rho.max()))
    return z, CheckResult("pchazard_construct", {"eps_prime": eps_prime}, excess, bound,
                          excess <= bound + SLACK, {"loss": loss, "infimum": inf})


def pchazard_free_optimum(disc, seed=0, max_iter=20000):
    """Minimize the PC-Hazard loss over free logits with L-BFGS; returns ``(loss, infimum)``."""
    rng = np.random.default_rng(seed)
    shape = disc.mask.shape
    x0 = rng.normal(scale=0.1, size=shape).ravel()

    def fg(x):
        rep = pchazard_loss(x.reshape(shape), disc, with_margin=False)
        return rep.total, rep.grad.ravel()

    res = minimize(fg, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "maxfun": 4 * max_iter, "ftol": 1e-15, "gtol": 1e-12})
    return float(res.fun), _pch_infimum(disc)


def nnet_construct(disc, t):
    """Logits ``+t`` on event cells and ``-t`` elsewhere; loss against ``n_cells e^{-t}``."""
    z = np.where(disc.y == 1, float(t), -float(t))
    loss = nnet_loss(z, disc, with_margin=False).total
    bound = int(disc.mask.sum()) * math.exp(-t)
    return z, CheckResult("nnet_construct", {"t": t}, loss, bound, loss <= bound + SLACK)


def nmtlr_construct(disc, t):
    """Base logits whose suffix sums equal ``+-t`` targets.

    Events get ``C_{j(i)} = t`` and ``-t`` elsewhere; censored subjects get
    ``-t`` up to and including their interval and ``t`` after it. Base logits
    follow by differencing, ``z_m = C_m`` and ``z_k = C_k - C_{k+1}``.
    Returns ``(logits, CheckResult)`` where the check compares every
    per-subject term with ``log(1 + (m-1) e^{-2t})`` (events) or
    ``log(1 + j/(m-j) e^{-2t})`` (censored, ``j`` the 1-based interval).
    """
    n, m = disc.mask.shape
    ev = disc.event == 1
    j = disc.idx
    if np.any(~ev & (j >= m - 1)):
        raise TailDefinitionError("a censored subject lies in the last interval")
    cols = np.arange(m)[None, :]
    C = np.where(
        ev[:, None],
        np.where(cols == j[:, None], t, -t),
        np.where(cols > j[:, None], t, -t),
    ).astype(float)
    z = np.empty_like(C)
    z[:, -1] = C[:, -1]
    z[:, :-1] = C[:, :-1] - C[:, 1:]
    terms = nmtlr_loss(z, disc, with_margin=False).per_sample
    jj = j + 1
    bound = np.where(
        ev,
        np.log1p((m - 1) * math.exp(-2 * t)),
        np.log1p(jj / np.maximum(m - jj, 1) * math.exp(-2 * t)),
    )
    worst = int(np.argmax(terms - bound))
    ok = bool(np.all(terms <= bound + SLACK))
    return z, CheckResult("nmtlr_construct", {"t": t}, float(terms[worst]), float(bound[worst]), ok,
                          {"loss": float(terms.sum())})
