"""Self-check suites run by ``survdd verify``.

Each suite returns a list of :class:`~survdd.theory.CheckResult`. Instances
are small and seeded, so a full run takes seconds.
"""
from __future__ import annotations

import math

import numpy as np

from .datagen import GenConfig, discretize, generate_dataset, make_grid, make_rng
from .losses import LOSS_KINDS, deepsurv_loss, deepsurv_loss_naive, grad_check, risk_sets
from .net import TrainConfig, forward, make_task, mlp_init, train
from .theory import (
    EPS_GRID,
    CheckResult,
    deepsurv_scaling_path,
    epsilon_margin_deepsurv,
    margin_budget_check,
    measure_margin,
    nmtlr_construct,
    nnet_construct,
    pchazard_construct,
    pchazard_free_optimum,
)

SUITES = ("losses", "constructions", "margins")
T_CHECK = (2.0, 5.0, 10.0, 20.0)
BUDGET_KIND = {"deepsurv": "deepsurv", "pchazard": "interval", "nnet": "interval", "nmtlr": "cumulative"}


def random_instance(rng, n, m=None, tail=False):
    """Random times/events (at least one event) and, if ``m`` is given, their discretization."""
    time = rng.uniform(0.05, 1.0, n)
    event = rng.integers(0, 2, n)
    event[rng.integers(n)] = 1
    if m is None:
        return time, event
    return time, event, discretize(time, event, m, tail=tail)


def suite_losses(seed=0, n_instances=20):
    rng = make_rng(seed)
    out = []
    for kind in LOSS_KINDS:
        worst = 0.0
        for _ in range(n_instances):
            n = int(rng.integers(2, 11))
            m = int(rng.integers(2, 6))
            if kind == "deepsurv":
                time, event = random_instance(rng, n)
                target, z = risk_sets(time, event), rng.normal(size=n)
            else:
                _, _, target = random_instance(rng, n, m, tail=kind == "nmtlr")
                z = rng.normal(size=(n, m))
            worst = max(worst, grad_check(kind, z, target, h=1e-5))
        out.append(CheckResult("grad_check", {"kind": kind, "instances": n_instances, "h": 1e-5},
                               worst, 1e-6, worst <= 1e-6))
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 51))
        time = np.round(rng.uniform(0, 1, n), 1)  # coarse rounding forces ties
        event = rng.integers(0, 2, n)
        z = rng.normal(scale=3, size=n)
        fast = deepsurv_loss(z, risk_sets(time, event)).total
        slow = deepsurv_loss_naive(z, time, event)
        worst = max(worst, abs(fast - slow) / max(abs(slow), 1e-300))
    out.append(CheckResult("deepsurv_oracle", {"instances": 100}, worst, 1e-12, worst <= 1e-12))
    return out


def suite_constructions(seed=0, n_instances=5):
    rng = make_rng(seed + 1)
    out = []
    for k in range(n_instances):
        n = int(rng.integers(3, 16))
        time, event = random_instance(rng, n)
        z = -time + 0.0  # earlier time, higher score: separates every comparable pair without ties
        if len(np.unique(time)) == n:
            out.extend(deepsurv_scaling_path(z, risk_sets(time, event)))
        _, _, disc = random_instance(rng, n, 3)
        for t in T_CHECK:
            out.append(nnet_construct(disc, t)[1])
        _, _, disc_tail = random_instance(rng, n, 4, tail=True)
        for t in T_CHECK:
            out.append(nmtlr_construct(disc_tail, t)[1])
        _, chk = pchazard_construct(disc, 1e-5)
        out.append(CheckResult("pchazard_construct_excess", {"eps_prime": 1e-5, "instance": k},
                               chk.lhs, 1e-3, chk.lhs <= 1e-3))
        out.append(chk)
        loss, inf = pchazard_free_optimum(disc, seed=k)
        out.append(CheckResult("pchazard_free_optimum", {"instance": k}, loss - inf, 1e-3,
                               loss - inf <= 1e-3))
    return out


def suite_margins(seed=0):
    """Train small networks and check the margin-norm and epsilon-margin relations on them."""
    out = []
    data, _ = generate_dataset(GenConfig(n=60, p=5, s=3, seed=seed))
    for kind in LOSS_KINDS:
        grid = None if kind == "deepsurv" else make_grid(data.time, 5, tail=kind == "nmtlr")
        task = make_task(kind, data, grid)
        q = 1 if kind == "deepsurv" else len(grid) - 1
        params = mlp_init(5, 32, q, seed)
        cfg = TrainConfig(lr=5e-3, max_epochs=400, full_batch=True, seed=seed)
        res = train(params, task, None, kind, cfg)
        logits, emb = forward(res.params, data.X)
        z = logits[:, 0] if kind == "deepsurv" else logits
        gamma = measure_margin(z, task.target, kind).gamma
        if gamma <= 0:
            out.append(CheckResult("margin_budget", {"kind": kind, "skipped": "no positive margin"},
                                   gamma, 0.0, True))
            continue
        W, b = res.params.readout
        bc = margin_budget_check(W, b, emb, task.target, BUDGET_KIND[kind])
        out.append(CheckResult("margin_budget", {"kind": kind, "gamma": gamma}, bc.lhs, bc.rhs, bc.passed))
        if kind == "deepsurv" and res.train_total <= math.log(2):
            rep, chk = epsilon_margin_deepsurv(z, task.target)
            out.append(CheckResult("epsilon_margin", {"epsilon": rep.epsilon}, chk.lhs, chk.rhs, chk.passed))
    # the same relation on explicit two-subject scores
    rs = risk_sets(np.array([1.0, 2.0]), np.array([1, 0]))
    for eps in EPS_GRID:
        gap = -math.log(math.expm1(eps))  # log(1 + e^{-gap}) = eps
        rep, chk = epsilon_margin_deepsurv(np.array([gap, 0.0]), rs, eps * (1 + 1e-12))
        out.append(CheckResult("epsilon_margin_two_point", {"epsilon": eps}, chk.lhs, chk.rhs,
                               chk.passed))
    return out


def run_suite(name="all", seed=0):
    if name == "all":
        names = SUITES
    elif name in SUITES:
        names = (name,)
    else:
        raise ValueError(f"unknown suite {name!r}; expected 'all' or one of {SUITES}")
    fns = {"losses": suite_losses, "constructions": suite_constructions, "margins": suite_margins}
    out = []
    for n in names:
        out.extend(fns[n](seed))
    return out
