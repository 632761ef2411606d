import csv
import math
import statistics

import numpy as np
import pytest

from tabseg import tensor as T
from tabseg.checkpoint import encode_checkpoint, load_checkpoint
from conftest import write_plan
from tabseg.config import desk_train_config, plan_from_file
from tabseg.data import Sample, load_samples, read_manifest, split_dataset
from tabseg.errors import ConfigurationError, DataError, NumericError
from tabseg.metrics import METRICS, TISSUES
from tabseg.reports import read_report_csv
from tabseg.trainer import (
    GROUND_TRUTH, evaluate_transfer, mse_loss, run_generality, run_performance, run_reliability,
    segment, train, train_on_samples,
)


def tiny(variant="tabs", **kw):
    return desk_train_config(variant, features=16, **kw)


@pytest.fixture(scope="module")
def site_a(phantom_root):
    return load_samples(phantom_root / "siteA", target=32)


# -- loss ---------------------------------------------------------------------------------

def test_mse_loss_examples():
    rng = np.random.default_rng(0)
    gt = rng.random((3, 4, 4, 4))
    mask = rng.random((4, 4, 4)) > 0.3
    with T.high_precision():
        assert float(mse_loss(T.Tensor(gt), gt, mask).data) == 0.0
        assert float(mse_loss(T.Tensor(gt + 0.25), gt, mask).data) == pytest.approx(0.0625, rel=1e-12)
        pred = rng.random((3, 4, 4, 4))
        direct = math.fsum(((pred - gt) ** 2)[:, mask].ravel()) / (3 * mask.sum())
        assert float(mse_loss(T.Tensor(pred), gt, mask).data) == pytest.approx(direct, rel=1e-7)


def test_masked_loss_ignores_target_outside_mask():
    rng = np.random.default_rng(1)
    pred, gt = rng.random((2, 3, 4, 4, 4)), rng.random((2, 3, 4, 4, 4))
    mask = rng.random((2, 4, 4, 4)) > 0.5
    changed = gt.copy()
    changed[np.broadcast_to(~mask[:, None], gt.shape)] = 7.0
    with T.high_precision():
        a = float(mse_loss(T.Tensor(pred), gt, mask).data)
        b = float(mse_loss(T.Tensor(pred), changed, mask).data)
    assert a == b


def test_mse_loss_shape_and_mask_errors():
    with pytest.raises(ConfigurationError, match="prediction"):
        mse_loss(T.Tensor(np.zeros((3, 2, 2, 2))), np.zeros((3, 2, 2, 3)))
    with pytest.raises(DataError, match="empty mask"):
        mse_loss(T.Tensor(np.zeros((3, 2, 2, 2))), np.zeros((3, 2, 2, 2)), np.zeros((2, 2, 2), bool))


# -- training loop ----------------------------------------------------------------------

def test_history_and_selection(site_a):
    result = train_on_samples(tiny(epochs=3), site_a[:3], site_a[3:])
    assert [h["epoch"] for h in result.history] == [1, 2, 3]
    best = min(h["val_loss"] for h in result.history)
    assert result.checkpoint.best_validation_loss == best
    assert result.history[result.checkpoint.epoch - 1]["val_loss"] == best


def test_training_is_deterministic(site_a):
    a = train_on_samples(tiny("unet", epochs=2), site_a[:3], site_a[3:])
    b = train_on_samples(tiny("unet", epochs=2), site_a[:3], site_a[3:])
    assert encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint)


def test_training_does_not_touch_inputs(site_a):
    before = [(s.image.tobytes(), s.target.tobytes()) for s in site_a]
    train_on_samples(tiny(epochs=1), site_a[:3], site_a[3:])
    assert [(s.image.tobytes(), s.target.tobytes()) for s in site_a] == before


def test_single_phantom_loss_decreases(site_a):
    result = train_on_samples(tiny(epochs=50, batch_size=1), site_a[:1], site_a[:1])
    assert result.history[-1]["train_loss"] < result.history[0]["train_loss"]


def test_nan_loss_aborts_with_coordinates(site_a):
    bad = Sample("x", "t1", np.full_like(site_a[0].image, np.nan), site_a[0].target)
    with pytest.raises(NumericError, match="epoch 1, batch 0"):
        train_on_samples(tiny(epochs=1), [bad], site_a[3:])


def test_empty_sets_are_rejected(site_a):
    with pytest.raises(ConfigurationError, match="empty training"):
        train_on_samples(tiny(epochs=1), [], site_a)
    with pytest.raises(ConfigurationError, match="empty validation"):
        train_on_samples(tiny(epochs=1), site_a, [])


def test_train_writes_checkpoint_and_history(phantom_root, tmp_path):
    ck = tmp_path / "m.ckpt"
    cfg = tiny(epochs=2, data=str(phantom_root / "siteA"), checkpoint=str(ck))
    result = train(cfg)
    assert load_checkpoint(ck).epoch == result.checkpoint.epoch
    rows = list(csv.DictReader(open(f"{ck}.history.csv")))
    assert [int(r["epoch"]) for r in rows] == [1, 2]


def test_segment_is_read_only_probability(site_a):
    model = tiny().model
    from tabseg.models import build_model

    net = build_model(model)
    before = {k: p.data.tobytes() for k, p in net.parameters().items()}
    out = segment(net, site_a[0].image)
    np.testing.assert_allclose(out.sum(axis=0), 1, atol=1e-5)
    assert {k: p.data.tobytes() for k, p in net.parameters().items()} == before


# -- experiments -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def plan_dir(phantom_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    common = dict(source="siteA", data_root=phantom_root, checkpoint_dir=out / "ckpt",
                  variants="tabs,unet", epochs=2, features=16)
    return out, common


@pytest.fixture(scope="module")
def performance(plan_dir):
    out, common = plan_dir
    plan = plan_from_file(write_plan(out / "perf.cfg", kind="performance", report=out / "perf", **common))
    return plan, run_performance(plan)


def test_performance_report_shape(performance, phantom_root):
    plan, report = performance
    _, _, test_ids = split_dataset([(r.subject, r.atrophy) for r in read_manifest(phantom_root / "siteA")], 0)
    assert len(report.rows) == 2 * len(test_ids)
    lines = report.render_table().splitlines()
    head1, head2 = lines[0].split("\t"), lines[1].split("\t")
    assert head1 == ["Project", "Metrics", "TABS", "", "", "Unet", "", ""]
    assert head2[2:] == ["Gray Matter", "White Matter", "CSF"] * 2
    assert [l.split("\t")[1] for l in lines[2:]] == ["DICE", "Jaccard Index", "Pearson", "Spearman", "HD", "MSE"]
    assert all(len(l.split("\t")) == 8 for l in lines)
    for p in (plan.checkpoint_path("tabs"), plan.checkpoint_path("unet")):
        assert p.exists() and p.with_name(p.name + ".history.csv").exists()


def test_summary_matches_independent_aggregation(performance, tmp_path):
    _, report = performance
    paths = report.write(tmp_path / "perf")
    assert [p.name for p in paths] == ["perf.csv", "perf.txt", "perf_dice.png", "perf_training.png"]
    rows = read_report_csv(paths[0])
    assert len(rows) == 3 * len(report.rows)
    summary = report.summary()
    for method in ("tabs", "unet"):
        for tissue in TISSUES:
            for metric in METRICS:
                vals = [float(r[metric]) for r in rows
                        if r["method"] == method and r["tissue"] == tissue and r[metric] != ""]
                mean, sd, n = summary[("siteA", method, tissue, metric)]
                assert n == len(vals)
                if n:
                    assert mean == pytest.approx(statistics.fmean(vals), rel=1e-9, abs=1e-12)
                    assert sd == pytest.approx(statistics.stdev(vals) if n > 1 else 0.0, rel=1e-9, abs=1e-12)


def test_evaluating_twice_is_identical(performance):
    plan, report = performance
    again = evaluate_transfer(plan, "siteA", "tabs", "siteA")
    assert [r.record.values for r in again] == [r.record.values for r in report.rows if r.method == "tabs"]


def test_generality_rows_and_same_site_reduction(performance, plan_dir, phantom_root):
    plan, report = performance
    out, common = plan_dir
    gen = plan_from_file(write_plan(out / "gen.cfg", kind="generality", target="siteB",
                                    report=out / "gen", **common))
    greport = run_generality(gen)
    _, _, test_b = split_dataset([(r.subject, r.atrophy) for r in read_manifest(phantom_root / "siteB")], 0)
    assert len([r for r in greport.rows if r.method == "tabs"]) == len(test_b)
    assert greport.projects == ["siteA→siteB"]
    same = evaluate_transfer(gen, "siteA", "unet", "siteA")
    assert [r.record.values for r in same] == [r.record.values for r in report.rows if r.method == "unet"]


def test_missing_checkpoint_is_explicit(plan_dir, tmp_path):
    out, common = plan_dir
    plan = plan_from_file(write_plan(tmp_path / "g.cfg", kind="generality", target="siteB",
                                     report=tmp_path / "g", **{**common, "checkpoint_dir": tmp_path}))
    with pytest.raises(DataError, match="missing checkpoint"):
        run_generality(plan)


def test_reliability_report(performance, plan_dir):
    out, common = plan_dir
    rel = plan_from_file(write_plan(out / "rel.cfg", kind="reliability", target="siteB",
                                    report=out / "rel", **{**common, "variants": "tabs"}))
    report = run_reliability(rel)
    assert report.methods == ["tabs", GROUND_TRUTH]
    assert len([r for r in report.rows if r.method == "tabs"]) == 5
    gt_rows = [r for r in report.rows if r.method == GROUND_TRUTH]
    assert len(gt_rows) == 5 and all(r.record.is_perfect() for r in gt_rows)
    header = report.render_table().splitlines()[0].split("\t")
    assert header[2:] == ["TABS", "", "", "Ground truth", "", ""]


def test_reliability_needs_two_timepoints(performance, plan_dir, tmp_path):
    from tabseg.data import write_phantom_dataset

    out, common = plan_dir
    write_phantom_dataset(tmp_path / "siteC", 2, 32, "siteC", 0)
    rel = plan_from_file(write_plan(tmp_path / "r.cfg", kind="reliability", target="siteC",
                                    report=tmp_path / "r",
                                    **{**common, "data_root": tmp_path, "variants": "tabs"}))
    with pytest.raises(DataError, match="two timepoints"):
        run_reliability(rel)
