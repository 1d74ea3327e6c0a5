"""Command-line front end: ``survdd {gen,train,sweep,aggregate,plot,verify}``.

Exit codes: 0 success, 1 usage or validation error, 2 failed verification.
Every command prints its resolved configuration as JSON and writes it next to
its outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .datagen import GenConfig, generate_dataset, make_grid, make_rng, read_dataset, write_dataset
from .exceptions import InvalidConfigError
from .losses import LOSS_KINDS, loss_infimum
from .net import TrainConfig, make_task, mlp_init, save_checkpoint, train
from .sweep import (
    SweepConfig,
    aggregate,
    read_curves,
    read_rows,
    render_curves,
    run_sweep,
    thresholds,
    write_curves,
)
from .verify import SUITES, run_suite

logger = logging.getLogger("survdd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# config helpers


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, pairs):
    """Apply ``a.b=value`` overrides; values are parsed as JSON when possible.

    Only existing keys may be set, so typos fail loudly.
    """
    cfg = json.loads(json.dumps(cfg))
    for pair in pairs or ():
        if "=" not in pair:
            raise InvalidConfigError(f"override {pair!r} is not of the form key=value")
        key, text = pair.split("=", 1)
        parts = key.split(".")
        node = cfg
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise InvalidConfigError(f"unknown config key {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise InvalidConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = _parse_value(text)
    return cfg


def _load_json(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: invalid JSON ({exc})") from None


def _echo(cfg, dest=None):
    text = json.dumps(cfg, indent=2, sort_keys=True)
    print(text)
    if dest is not None:
        Path(dest).parent.mkdir(parents=True, exist_ok=True)
        Path(dest).write_text(text + "\n")


def _sweep_config(args):
    base = SweepConfig.preset(args.preset).to_dict()
    if getattr(args, "config", None):
        user = _load_json(args.config)
        unknown = set(user) - set(base)
        if unknown:
            raise InvalidConfigError(f"unknown sweep config keys: {sorted(unknown)}")
        if "gen" in user:
            unknown = set(user["gen"]) - set(base["gen"])
            if unknown:
                raise InvalidConfigError(f"unknown gen keys: {sorted(unknown)}")
            base["gen"].update(user.pop("gen"))
        base.update(user)
    if args.seed is not None:
        base["base_seed"] = args.seed
    if args.jobs is not None:
        base["jobs"] = args.jobs
    return SweepConfig.from_dict(apply_overrides(base, args.set))


def _gen_config(args):
    base = SweepConfig.preset(args.preset).gen.to_dict()
    if args.config:
        user = _load_json(args.config)
        user = user.get("gen", user)
        unknown = set(user) - set(base)
        if unknown:
            raise InvalidConfigError(f"unknown gen keys: {sorted(unknown)}")
        base.update(user)
    if args.seed is not None:
        base["seed"] = args.seed
    return GenConfig.from_dict(apply_overrides(base, args.set))


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    cfg = _gen_config(args)
    _echo({"gen": cfg.to_dict()}, Path(str(args.out) + ".config.json"))
    data, truth = generate_dataset(cfg)
    csv_path, _ = write_dataset(args.out, data, truth, cfg)
    print(f"wrote {csv_path}: n={len(data)} censoring={data.censoring_fraction:.3f} "
          f"eta_rms={truth.eta_rms:.4f}", file=sys.stderr)
    return 0


def cmd_train(args):
    data, truth, meta = read_dataset(args.data)
    tcfg = {
        "model": args.model, "width": args.width, "intervals": args.intervals,
        "test_frac": args.test_frac,
        "train": {"lr": args.lr, "batch_size": args.batch, "max_epochs": args.max_epochs,
                  "window": 20, "rel_tol": 1e-4, "full_batch": args.full_batch,
                  "seed": args.seed if args.seed is not None else 0},
    }
    tcfg = apply_overrides(tcfg, args.set)
    if tcfg["model"] not in LOSS_KINDS:
        raise InvalidConfigError(f"unknown model {tcfg['model']!r}")
    out = Path(args.out)
    _echo({"data": str(args.data), **tcfg}, out.with_suffix(".config.json"))
    train_cfg = TrainConfig(**tcfg["train"])
    perm = make_rng(train_cfg.seed).permutation(len(data))
    n_te = int(round(tcfg["test_frac"] * len(data)))
    tr, te = np.sort(perm[n_te:]), np.sort(perm[:n_te])
    kind = tcfg["model"]
    grid = None
    if kind != "deepsurv":
        grid = make_grid(data.time, tcfg["intervals"], tail=kind == "nmtlr")
    task_tr = make_task(kind, data[tr], grid)
    task_te = make_task(kind, data[te], grid) if n_te > 0 else None
    q = 1 if kind == "deepsurv" else len(grid) - 1
    params = mlp_init(data.X.shape[1], tcfg["width"], q, train_cfg.seed)
    eta = truth.eta[tr] if (truth is not None and kind == "deepsurv") else None
    res = train(params, task_tr, task_te, kind, train_cfg, eta_train=eta)
    save_checkpoint(res.params, out)
    summary = {
        "model": kind, "width": tcfg["width"], "epochs": res.converged_epoch, "diverged": res.diverged,
        "init_loss": res.init_loss, "train_loss": res.train_loss, "test_loss": res.test_loss,
        "train_loss_sum": res.train_total, "infimum_sum": loss_infimum(kind, task_tr.target),
        "w_norm": res.w_norm, "margin": res.margin, "z_dev": res.z_deviation,
        "grid": None if grid is None else [float(g) for g in grid],
    }
    out.with_suffix(".summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2), file=sys.stderr)
    return 0


def cmd_sweep(args):
    cfg = _sweep_config(args)
    out = Path(args.out)
    _echo(cfg.to_dict(), out / "config.json")

    def progress(row, k):
        if args.verbose:
            print(f"[{k}] {row.model} width={row.width} lr={row.lr} batch={row.batch} "
                  f"rep={row.replicate} train={row.train_loss:.4g}", file=sys.stderr)

    rows = run_sweep(cfg, out, progress)
    print(f"wrote {out / 'rows.csv'} ({len(rows)} rows)", file=sys.stderr)
    return 0


def _manifest_near(path):
    m = Path(path).parent / "manifest.json"
    return json.loads(m.read_text()) if m.exists() else None


def cmd_aggregate(args):
    src = Path(args.inp)
    if not src.exists():
        raise FileNotFoundError(f"rows file not found: {src}")
    _echo({"in": str(src), "out": str(args.out)})
    points = aggregate(read_rows(src))
    write_curves(points, args.out)
    man = _manifest_near(src)
    infima = {k: v["per_sample"] for k, v in (man or {}).get("train_infimum", {}).items()}
    th = thresholds(points, infima)
    Path(args.out).with_suffix(".thresholds.json").write_text(json.dumps(th, indent=2, sort_keys=True) + "\n")
    for model, t in th.items():
        print(f"{model}: threshold width {t['width']}", file=sys.stderr)
    return 0


def cmd_plot(args):
    src = Path(args.inp)
    if not src.exists():
        raise FileNotFoundError(f"curves file not found: {src}")
    _echo({"in": str(src), "out": str(args.out), "model": args.model})
    points = read_curves(src)
    models = sorted({p.model for p in points}) if args.model is None else [args.model]
    th_path = src.with_suffix(".thresholds.json")
    th = json.loads(th_path.read_text()) if th_path.exists() else {}
    out = Path(args.out)
    for model in models:
        curve = [p for p in points if p.model == model]
        if not curve:
            raise InvalidConfigError(f"no curve for model {model!r} in {src}")
        dest = out if len(models) == 1 else out.with_name(f"{out.stem}-{model}{out.suffix}")
        render_curves(curve, dest, threshold=th.get(model, {}).get("width"), title=model)
        print(f"wrote {dest}", file=sys.stderr)
    return 0


def cmd_verify(args):
    seed = args.seed if args.seed is not None else 0
    _echo({"suite": args.suite, "seed": seed})
    results = [r.to_dict() for r in run_suite(args.suite, seed)]
    text = json.dumps(results, indent=2, default=float)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    failed = [r for r in results if not r["pass"]]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=sys.stderr)
    return 2 if failed else 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, suppress):
    def dflt(v):
        return argparse.SUPPRESS if suppress else v

    p.add_argument("--seed", type=int, default=dflt(None), help="base seed")
    p.add_argument("--jobs", type=int, default=dflt(None), help="worker processes")
    p.add_argument("--preset", choices=("desk", "paper"), default=dflt("desk"))
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=dflt(None),
                   help="dotted config override, repeatable")
    p.add_argument("-v", "--verbose", action="store_true", default=dflt(False))


def build_parser():
    # global flags work before or after the subcommand
    common = _Parser(add_help=False)
    _add_common(common, suppress=True)

    ap = _Parser(prog="survdd", description=__doc__.splitlines()[0])
    _add_common(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON file with data-generation settings")
    p.add_argument("--out", required=True, help="output prefix (writes .csv and .json)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train one network on a dataset file")
    p.add_argument("--data", required=True, help="dataset prefix written by gen")
    p.add_argument("--model", choices=LOSS_KINDS, default="deepsurv")
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--intervals", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--max-epochs", type=int, default=2000)
    p.add_argument("--full-batch", action="store_true")
    p.add_argument("--test-frac", type=float, default=0.3)
    p.add_argument("--out", required=True, help="checkpoint path (JSON)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", parents=[common], help="run a capacity sweep")
    p.add_argument("--config", help="JSON sweep config (keys override the preset)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("aggregate", parents=[common], help="aggregate sweep rows into curves")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("plot", parents=[common], help="render curves to SVG")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=LOSS_KINDS, default=None)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("verify", parents=[common], help="run the numerical self-checks")
    p.add_argument("--suite", choices=("all",) + SUITES, default="all")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_verify)
    return ap


def dispatch(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidConfigError, FileNotFoundError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
