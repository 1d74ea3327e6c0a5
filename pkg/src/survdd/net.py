"""Two-hidden-layer ReLU network with a shared embedding and a linear readout.

The network maps ``x`` to the embedding ``f(x)`` (output of the second hidden
layer) and then to logits ``f(x) @ W + b`` with ``q`` outputs: ``q = 1`` for
the Cox partial likelihood and ``q = m`` for interval models. Weights are
stored as ``(fan_in, fan_out)``; the readout in the usual ``q x u`` layout is
``W.T``, which has the same spectral norm.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datagen import SurvivalData, assign_intervals, make_rng
from .exceptions import InvalidConfigError, NumericError
from .losses import compute_loss, loss_infimum, risk_sets

logger = logging.getLogger(__name__)

__all__ = [
    "MlpParams",
    "TrainConfig",
    "TrainOutcome",
    "LossTask",
    "AdamState",
    "param_count",
    "mlp_init",
    "forward",
    "loss_grad",
    "adam_init",
    "adam_step",
    "make_task",
    "train",
    "spectral_norm",
    "z_norm_diagnostic",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "survdd-mlp"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpParams:
    layers: tuple  # ((W, b), ...) with W of shape (fan_in, fan_out)

    @property
    def p(self):
        return self.layers[0][0].shape[0]

    @property
    def width(self):
        return self.layers[0][0].shape[1]

    @property
    def q(self):
        return self.layers[-1][0].shape[1]

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in self.layers)

    @property
    def readout(self):
        """Last layer as ``(W, b)`` with ``W`` of shape ``(q, u)``."""
        W, b = self.layers[-1]
        return W.T, b

    def flat(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.layers])

    def with_flat(self, theta):
        out, k = [], 0
        for W, b in self.layers:
            W2 = theta[k : k + W.size].reshape(W.shape)
            k += W.size
            b2 = theta[k : k + b.size].copy()
            k += b.size
            out.append((W2.copy(), b2))
        return MlpParams(tuple(out))


def param_count(p, width, q):
    return p * width + width + width * width + width + width * q + q


def mlp_init(p, width, q, seed):
    """Glorot-uniform weights, zero biases."""
    if min(p, width, q) < 1:
        raise InvalidConfigError(f"all layer sizes must be >= 1, got p={p}, width={width}, q={q}")
    rng = make_rng(seed)
    layers = []
    for fan_in, fan_out in ((p, width), (width, width), (width, q)):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-lim, lim, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return MlpParams(tuple(layers))


def _forward_cache(params, X):
    acts = [X]
    h = X
    for W, b in params.layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    W, b = params.layers[-1]
    return h @ W + b, acts


def forward(params, X):
    """Return ``(logits, embedding)`` for a batch of covariates."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.p:
        raise ValueError(f"expected covariates with {params.p} columns, got shape {X.shape}")
    logits, acts = _forward_cache(params, X)
    return logits, acts[-1]


def _backward(params, acts, g_out):
    grads = []
    g = g_out
    for li in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[li]
        a_in = acts[li]
        grads.append((a_in.T @ g, g.sum(axis=0)))
        if li:
            g = (g @ W.T) * (a_in > 0)
    return tuple(reversed(grads))


# ---------------------------------------------------------------------------
# loss tasks


@dataclass(frozen=True)
class LossTask:
    """Covariates plus the loss-specific target (risk sets or interval assignment)."""

    kind: str
    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    target: object = field(repr=False)

    @property
    def n(self):
        return self.X.shape[0]

    def batch(self, rows):
        if self.kind == "deepsurv":
            tgt = risk_sets(self.time[rows], self.event[rows])
        else:
            tgt = self.target.subset(rows)
        return LossTask(self.kind, self.X[rows], self.time[rows], self.event[rows], tgt)

    @property
    def infimum(self):
        return loss_infimum(self.kind, self.target)


def make_task(kind, data: SurvivalData, grid=None):
    if kind == "deepsurv":
        target = risk_sets(data.time, data.event)
    else:
        if grid is None:
            raise InvalidConfigError(f"loss {kind!r} needs an interval grid")
        target = assign_intervals(data.time, data.event, grid)
    return LossTask(kind, data.X, data.time, data.event, target)


def loss_grad(params, task: LossTask):
    """Raw-sum loss report and exact parameter gradient ``((dW, db), ...)``."""
    logits, acts = _forward_cache(params, task.X)
    if params.q == 1 and task.kind == "deepsurv":
        z = logits[:, 0]
    else:
        z = logits
    rep = compute_loss(task.kind, z, task.target, with_margin=False)
    if not np.isfinite(rep.total):
        bad = int(np.flatnonzero(~np.isfinite(rep.per_sample))[0])
        raise NumericError(f"non-finite loss contribution from subject {bad}", index=bad)
    g = rep.grad.reshape(logits.shape)
    return rep, _backward(params, acts, g)


# ---------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamState:
    params: MlpParams
    m: tuple
    v: tuple
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    zeros = tuple((np.zeros_like(W), np.zeros_like(b)) for W, b in params.layers)
    return AdamState(params, zeros, zeros, 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, grads):
    """One bias-corrected Adam update; returns a new state."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    layers, ms, vs = [], [], []
    for (W, b), (mW, mb), (vW, vb), (gW, gb) in zip(state.params.layers, state.m, state.v, grads):
        new = []
        for x, m_, v_, g in ((W, mW, vW, gW), (b, mb, vb, gb)):
            m_ = b1 * m_ + (1.0 - b1) * g
            v_ = b2 * v_ + (1.0 - b2) * g * g
            x = x - state.lr * (m_ / c1) / (np.sqrt(v_ / c2) + state.eps)
            new.append((x, m_, v_))
        layers.append((new[0][0], new[1][0]))
        ms.append((new[0][1], new[1][1]))
        vs.append((new[0][2], new[1][2]))
    return replace(state, params=MlpParams(tuple(layers)), m=tuple(ms), v=tuple(vs), t=t)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 2000
    window: int = 20
    rel_tol: float = 1e-4
    full_batch: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidConfigError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise InvalidConfigError("batch size must be >= 1")
        if not 0 < self.rel_tol < 1:
            raise InvalidConfigError("rel_tol must lie in (0, 1)")
        if self.window < 1 or self.max_epochs < 0:
            raise InvalidConfigError("window must be >= 1 and max_epochs >= 0")


@dataclass
class TrainOutcome:
    params: MlpParams
    trace: np.ndarray
    converged_epoch: int
    diverged: bool
    init_loss: float
    train_loss: float
    train_total: float
    test_loss: float
    w_norm: float
    embed_max_norm: float
    margin: float
    z_norm: float = math.nan
    eta_norm: float = math.nan

    @property
    def z_deviation(self):
        return self.z_norm - self.eta_norm


def _full_loss(params, task, with_margin=False):
    logits, _ = _forward_cache(params, task.X)
    z = logits[:, 0] if task.kind == "deepsurv" else logits
    return compute_loss(task.kind, z, task.target, with_margin)


def _plateaued(trace, window, rel_tol):
    # improvement of the running best over the last `window` epochs, relative to the start
    if len(trace) <= window:
        return False
    prev_best = min(trace[:-window])
    recent_best = min(trace[-window:])
    scale = max(abs(trace[0]), np.finfo(float).tiny)
    return (prev_best - recent_best) < rel_tol * scale


def train(params, data_train: LossTask, data_test: LossTask | None, loss_kind, cfg: TrainConfig,
          eta_train=None):
    """Mini-batch Adam until the training loss plateaus or ``max_epochs`` is hit.

    The trace holds the full-data training loss (mean per subject) before
    training and after each epoch. The returned parameters are the best ones on
    that trace. A non-finite loss stops training and flags the outcome as
    diverged.
    """
    if data_train.kind != loss_kind:
        raise InvalidConfigError(f"task is for {data_train.kind!r}, not {loss_kind!r}")
    rng = make_rng(cfg.seed)
    n = data_train.n
    state = adam_init(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    bs = n if (cfg.full_batch or cfg.batch_size >= n) else cfg.batch_size

    init = _full_loss(params, data_train)
    trace = [init.mean]
    best_params, best = params, init.mean
    diverged = False
    epoch = 0
    while epoch < cfg.max_epochs:
        epoch += 1
        perm = rng.permutation(n)
        try:
            for start in range(0, n, bs):
                rows = perm[start : start + bs]
                task = data_train if bs == n else data_train.batch(np.sort(rows))
                _, grads = loss_grad(state.params, task)
                scale = 1.0 / len(rows)
                grads = tuple((gW * scale, gb * scale) for gW, gb in grads)
                state = adam_step(state, grads)
            cur = _full_loss(state.params, data_train).mean
        except NumericError as exc:
            logger.warning("training diverged at epoch %d: %s", epoch, exc)
            diverged = True
            break
        if not np.isfinite(cur):
            diverged = True
            break
        trace.append(cur)
        if cur < best:
            best, best_params = cur, state.params
        if _plateaued(trace, cfg.window, cfg.rel_tol):
            break

    final = best_params
    if diverged:
        nan = math.nan
        return TrainOutcome(final, np.asarray(trace), epoch, True, init.mean, nan, nan, nan,
                            nan, nan, nan)
    rep = _full_loss(final, data_train, with_margin=True)
    test_loss = _full_loss(final, data_test).mean if data_test is not None else math.nan
    _, emb = forward(final, data_train.X)
    out = TrainOutcome(
        params=final,
        trace=np.asarray(trace),
        converged_epoch=epoch,
        diverged=False,
        init_loss=init.mean,
        train_loss=rep.mean,
        train_total=rep.total,
        test_loss=test_loss,
        w_norm=spectral_norm(final.readout[0]),
        embed_max_norm=float(np.linalg.norm(emb, axis=1).max()),
        margin=rep.margin,
    )
    if loss_kind == "deepsurv" and eta_train is not None:
        out.z_norm, out.eta_norm, _ = z_norm_diagnostic(final, data_train.X, eta_train)
    return out


# ---------------------------------------------------------------------------
# diagnostics


def spectral_norm(W, tol=1e-9, max_iter=200):
    """Largest singular value by power iteration from the normalized all-ones vector."""
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[None, :]
    if not np.any(W):
        return 0.0
    v = np.ones(W.shape[1]) / math.sqrt(W.shape[1])
    if not np.any(W @ v):
        # start orthogonal to the row space; restart on the heaviest column
        v = np.zeros(W.shape[1])
        v[np.argmax(np.linalg.norm(W, axis=0))] = 1.0
    sigma = 0.0
    for _ in range(max_iter):
        u = W @ v
        new = float(np.linalg.norm(u))
        v = W.T @ u
        v /= np.linalg.norm(v)
        if abs(new - sigma) <= tol * new:
            sigma = new
            break
        sigma = new
    return max(sigma, float(np.linalg.norm(W @ v)))


def z_norm_diagnostic(params, X, eta):
    """Euclidean norms of fitted scores and true log-hazard, and their difference.

    ``eta`` may be an array or a :class:`~survdd.datagen.GroundTruth`.
    """
    if params.q != 1:
        raise InvalidConfigError("the score-norm diagnostic needs a single-output network")
    eta = np.asarray(getattr(eta, "eta", eta), dtype=float)
    z, _ = forward(params, X)
    zn = float(np.linalg.norm(z[:, 0]))
    en = float(np.linalg.norm(eta))
    return zn, en, zn - en


def save_checkpoint(params, path):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layers": [
            {"shape": list(W.shape), "W": W.ravel().tolist(), "b": b.tolist()}
            for W, b in params.layers
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint header in {path}")
    layers = tuple(
        (np.asarray(L["W"], dtype=float).reshape(L["shape"]), np.asarray(L["b"], dtype=float))
        for L in doc["layers"]
    )
    return MlpParams(layers)
