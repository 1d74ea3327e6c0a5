import dataclasses
import itertools
import json
import math
import re
import statistics
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from survdd.datagen import GenConfig
from survdd.exceptions import InvalidConfigError
from survdd.net import param_count
from survdd.sweep import (
    CURVE_FIELDS,
    ROW_FIELDS,
    CurvePoint,
    SweepConfig,
    SweepRow,
    aggregate,
    cell_seed,
    detect_threshold,
    read_curves,
    read_rows,
    render_curves,
    run_sweep,
    sweep_cells,
    thresholds,
    write_curves,
    write_rows,
)

GOLDEN = Path(__file__).parent / "golden"


def tiny_config(**kw):
    base = dict(models=("nnet",), widths=(2, 4), batch_sizes=(16,), lrs=(1e-2,), replicates=2,
                gen=GenConfig(n=40, p=4, s=2, seed=0), intervals={"nnet": 3}, max_epochs=15)
    base.update(kw)
    return SweepConfig(**base)


def make_row(model="nnet", width=2, lr=1e-3, batch=32, replicate=0, train=1.0, test=2.0,
             diverged=False, **kw):
    vals = dict(model=model, width=width, d=param_count(3, width, 2), lr=lr, batch=batch,
                replicate=replicate, seed=0, full_batch=False, init_loss=5.0, train_loss=train,
                test_loss=test, train_loss_sum=train * 10, w_norm=1.0, embed_norm=1.0, margin=0.1,
                budget_lhs=1.0, budget_rhs=0.5, z_dev=math.nan, converged_epoch=10, diverged=diverged)
    vals.update(kw)
    return SweepRow(**vals)


def point(width, train, gap=False, init=1.0, model="nnet", z_dev=math.nan, test=None):
    return CurvePoint(model=model, width=width, d=width, init_loss=init, train_loss=train,
                      test_loss=train + 0.5 if test is None else test, w_norm=1.0, embed_norm=1.0,
                      margin=0.0, z_dev=z_dev, n_cells=0 if gap else 1, n_diverged=0, gap=gap)


def same(a, b):
    """Dataclass equality treating NaN as equal to NaN."""
    for f in dataclasses.fields(a):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, float) and math.isnan(x):
            if not (isinstance(y, float) and math.isnan(y)):
                return False
        elif x != y:
            return False
    return True


def brute_aggregate(rows):
    """Independent aggregation: pandas-free groupby with statistics.median."""
    out = {}
    for width in sorted({r.width for r in rows}):
        cells = []
        for lr, batch in sorted({(r.lr, r.batch) for r in rows if r.width == width}):
            vals = [r.train_loss for r in rows
                    if (r.width, r.lr, r.batch) == (width, lr, batch) and not r.diverged]
            if vals:
                cells.append(statistics.fmean(vals))
        out[width] = statistics.median(cells) if cells else math.nan
    return out


class TestConfig:
    def test_paper_grid(self):
        cfg = SweepConfig.paper()
        assert cfg.batch_sizes == (32, 64, 128, 256)
        assert cfg.lrs == (5e-5, 1e-4, 3e-4, 5e-4, 1e-3, 2e-3)
        assert cfg.replicates == 30
        assert cfg.intervals == {"pchazard": 50, "nnet": 20, "nmtlr": 20}

    def test_desk_dataset(self):
        g = SweepConfig.desk().gen
        assert (g.n, g.p, g.s) == (400, 30, 10)

    @pytest.mark.parametrize("kw", [dict(widths=()), dict(replicates=0), dict(lrs=(0.0,)),
                                    dict(models=("cox",)), dict(train_frac=1.0), dict(jobs=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfigError):
            tiny_config(**kw)

    def test_dict_round_trip(self):
        cfg = SweepConfig.desk()
        assert SweepConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
        with pytest.raises(InvalidConfigError):
            SweepConfig.from_dict({"widths": [2], "bogus": 1})

    def test_hash_changes_iff_config_changes(self):
        a = tiny_config()
        assert a.config_hash() == tiny_config().config_hash()
        assert a.config_hash() == tiny_config(jobs=3).config_hash()
        for kw in (dict(widths=(2, 8)), dict(replicates=3), dict(base_seed=1),
                   dict(gen=GenConfig(n=41, p=4, s=2, seed=0)), dict(max_epochs=16)):
            assert tiny_config(**kw).config_hash() != a.config_hash()


class TestCells:
    def test_cardinality(self):
        cfg = tiny_config()
        cells = list(sweep_cells(cfg, 28))
        assert len(cells) == 2 * 1 * 1 * 2

    def test_full_batch_deepsurv_has_one_batch(self):
        cfg = tiny_config(models=("deepsurv", "nnet"), batch_sizes=(8, 16), deepsurv_full_batch=True)
        cells = list(sweep_cells(cfg, 28))
        assert len(cells) == 2 * 2 * (1 + 2)
        assert {c[3] for c in cells if c[0] == "deepsurv"} == {28}

    def test_seed_is_stable_and_distinct(self):
        s = cell_seed(0, "nnet", 2, 1e-3, 32, 0)
        assert s == cell_seed(0, "nnet", 2, 1e-3, 32, 0)
        assert cell_seed(5, "nnet", 2, 1e-3, 32, 0) == s + 5
        seeds = {cell_seed(0, m, w, lr, b, r) for m, w, lr, b, r in
                 itertools.product(("nnet", "nmtlr"), (2, 4), (1e-3, 2e-3), (32, 64), range(3))}
        assert len(seeds) == 48


class TestRunSweep:
    def test_rows_and_resume(self, tmp_path):
        cfg = tiny_config()
        rows = run_sweep(cfg, tmp_path)
        assert len(rows) == 4
        assert all(np.isfinite(r.train_loss) and r.d == param_count(4, r.width, 3) for r in rows
                   if not r.diverged)
        first = (tmp_path / "rows.csv").read_bytes()
        # simulate an interrupt: keep the header and the first two logged rows
        log = tmp_path / "rows.log.csv"
        log.write_text("".join(log.read_text().splitlines(keepends=True)[:3]))
        (tmp_path / "rows.csv").unlink()
        again = run_sweep(cfg, tmp_path)
        assert (tmp_path / "rows.csv").read_bytes() == first
        assert len(again) == 4
        assert len(log.read_text().splitlines()) == 5

    def test_rerun_is_noop(self, tmp_path):
        cfg = tiny_config()
        run_sweep(cfg, tmp_path)
        log = (tmp_path / "rows.log.csv").read_bytes()
        run_sweep(cfg, tmp_path)
        assert (tmp_path / "rows.log.csv").read_bytes() == log

    def test_mismatched_directory(self, tmp_path):
        run_sweep(tiny_config(widths=(2,), replicates=1), tmp_path)
        with pytest.raises(InvalidConfigError):
            run_sweep(tiny_config(widths=(4,), replicates=1), tmp_path)

    def test_manifest(self, tmp_path):
        cfg = tiny_config(widths=(2,), replicates=1)
        run_sweep(cfg, tmp_path)
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["config_hash"] == cfg.config_hash()
        assert man["n_train"] + man["n_test"] == 40
        assert man["train_infimum"]["nnet"]["sum"] == 0.0

    def test_worker_pool_matches_inline(self, tmp_path):
        cfg = tiny_config(widths=(2,))
        run_sweep(cfg, tmp_path / "a")
        run_sweep(dataclasses.replace(cfg, jobs=2), tmp_path / "b")
        assert (tmp_path / "a/rows.csv").read_bytes() == (tmp_path / "b/rows.csv").read_bytes()


class TestAggregate:
    def test_single_row(self):
        r = make_row(train=0.3, test=0.7)
        (p,) = aggregate([r])
        assert (p.width, p.train_loss, p.test_loss, p.n_cells, p.gap) == (2, 0.3, 0.7, 1, False)

    def test_mean_then_midpoint_median(self):
        rows = [make_row(lr=1e-3, replicate=k, train=v) for k, v in enumerate((1.0, 2.0, 3.0))]
        rows.append(make_row(lr=2e-3, train=10.0))
        (p,) = aggregate(rows)
        assert p.train_loss == 6.0

    def test_diverged_excluded_and_counted(self):
        rows = [make_row(train=1.0), make_row(replicate=1, train=math.nan, diverged=True),
                make_row(width=4, train=math.nan, diverged=True)]
        p2, p4 = aggregate(rows)
        assert p2.train_loss == 1.0 and p2.n_diverged == 1
        assert p4.gap and p4.n_diverged == 1 and math.isnan(p4.train_loss)

    @given(st.lists(st.tuples(st.sampled_from((2, 4, 8)), st.sampled_from((1e-3, 2e-3, 5e-4)),
                              st.sampled_from((32, 64)), st.integers(0, 3),
                              st.floats(0, 10, allow_nan=False), st.booleans()),
                    min_size=1, max_size=40, unique_by=lambda t: t[:4]))
    def test_matches_brute_force(self, cells):
        rows = [make_row(width=w, lr=lr, batch=b, replicate=r, train=math.nan if dv else v, diverged=dv)
                for w, lr, b, r, v, dv in cells]
        want = brute_aggregate(rows)
        got = {p.width: p.train_loss for p in aggregate(rows)}
        assert got.keys() == want.keys()
        for w in want:
            if math.isnan(want[w]):
                assert math.isnan(got[w])
            else:
                assert got[w] == pytest.approx(want[w], rel=1e-12, abs=1e-12)

    def test_reaggregation_of_persisted_rows(self, tmp_path):
        rows = [make_row(width=w, lr=lr, replicate=r, train=0.1 * w + lr * 1e3 + r / 7)
                for w in (2, 4) for lr in (1e-3, 2e-3) for r in range(3)]
        write_rows(rows, tmp_path / "rows.csv")
        got, want = aggregate(read_rows(tmp_path / "rows.csv")), aggregate(rows)
        assert len(got) == len(want) and all(same(a, b) for a, b in zip(got, want))


class TestThreshold:
    def test_first_point_already_within(self):
        assert detect_threshold([point(2, 0.01), point(4, 0.001)], 0.0, 0.05) == 2

    def test_crossing(self):
        curve = [point(w, v) for w, v in ((16, 0.5), (32, 0.2), (64, 0.04), (128, 0.01))]
        assert detect_threshold(curve, 0.0, 0.05) == 64

    def test_never(self):
        assert detect_threshold([point(2, 1.0), point(4, 0.9)], 0.0, 0.05) is None

    def test_gap_skipped(self):
        assert detect_threshold([point(2, math.nan, gap=True), point(4, 0.0)], 0.0, 0.1) == 4

    def test_negative_infimum(self):
        assert detect_threshold([point(2, -0.2), point(4, -0.5)], -0.52, 0.05) == 4

    def test_thresholds_tolerance(self):
        curve = [point(2, 1.5, init=2.0), point(4, 0.09, init=2.0), point(8, 0.05, init=2.0)]
        th = thresholds(curve)
        assert th["nnet"]["tol"] == pytest.approx(0.1)
        assert th["nnet"]["width"] == 4
        assert thresholds(curve, {"nnet": -1.0})["nnet"]["width"] is None


class TestPersistence:
    def test_row_round_trip(self, tmp_path):
        rows = [make_row(train=1 / 3, test=math.pi, margin=-1e-300, z_dev=math.nan),
                make_row(width=4, train=math.nan, diverged=True, w_norm=math.inf)]
        write_rows(rows, tmp_path / "r.csv")
        back = read_rows(tmp_path / "r.csv")
        for a, b in zip(rows, back):
            for f in ROW_FIELDS:
                x, y = getattr(a, f), getattr(b, f)
                if isinstance(x, float) and math.isnan(x):
                    assert math.isnan(y)
                else:
                    assert x == y and type(x) is type(y)

    def test_curve_round_trip(self, tmp_path):
        pts = [point(2, 0.1 / 3), point(4, math.nan, gap=True)]
        write_curves(pts, tmp_path / "c.csv")
        back = read_curves(tmp_path / "c.csv")
        assert same(back[0], pts[0]) and back[1].gap and math.isnan(back[1].train_loss)

    def test_wrong_header(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_rows(tmp_path / "x.csv")
        with pytest.raises(ValueError):
            read_curves(tmp_path / "x.csv")

    def test_column_order_golden(self, tmp_path):
        write_rows([], tmp_path / "r.csv")
        write_curves([], tmp_path / "c.csv")
        assert (tmp_path / "r.csv").read_text() == (GOLDEN / "rows_header.csv").read_text()
        assert (tmp_path / "c.csv").read_text() == (GOLDEN / "curves_header.csv").read_text()
        assert ",".join(ROW_FIELDS) + "\n" == (GOLDEN / "rows_header.csv").read_text().replace("\r", "")
        assert ",".join(CURVE_FIELDS) + "\n" == (GOLDEN / "curves_header.csv").read_text().replace("\r", "")


def toy_curve():
    return [point(w, v, model="deepsurv", z_dev=dz, test=t)
            for w, v, dz, t in ((2, 1.2, -0.5, 1.4), (4, 0.6, 0.1, 1.6), (8, 0.2, 0.4, 1.3), (16, 0.05, 0.8, 1.1))]


class TestRender:
    def test_two_points(self):
        svg = render_curves([point(2, 1.0), point(4, 0.5)])
        train = re.search(r'<polyline[^>]*class="train_loss"[^>]*points="([^"]+)"', svg)
        assert train and len(train.group(1).split()) == 2
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")

    def test_threshold_marker(self):
        pts = [point(2, 1.0), point(4, 0.5)]
        assert 'class="threshold"' in render_curves(pts, threshold=4)
        assert 'class="threshold"' not in render_curves(pts)

    def test_z_dev_series(self):
        assert 'class="z_dev"' in render_curves(toy_curve())
        assert 'class="z_dev"' not in render_curves([point(2, 1.0), point(4, 0.5)])

    def test_degenerate(self):
        with pytest.raises(ValueError):
            render_curves([point(2, 1.0)])
        with pytest.raises(ValueError):
            render_curves([point(2, 1.0), point(4, math.nan, gap=True)])

    def test_golden_svg(self, tmp_path):
        svg = render_curves(toy_curve(), out=tmp_path / "f.svg", threshold=8, title="toy")
        assert (tmp_path / "f.svg").read_text() == svg
        assert svg == (GOLDEN / "toy_curve.svg").read_text()
