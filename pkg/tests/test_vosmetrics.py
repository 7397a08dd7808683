import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mogakit.numkit import ShapeError
from mogakit.vosmetrics import (
    MissingPredictionError,
    boundary_fmeasure,
    default_tolerance,
    evaluate_dataset,
    mask_boundary,
    region_similarity,
)
from oracles import brute_boundary, brute_fmeasure, brute_iou

masks8 = arrays(np.bool_, (8, 8))


def test_j_identity_and_disjoint():
    m = np.zeros((10, 10), bool)
    m[2:6, 3:7] = True
    assert region_similarity(m, m) == 1.0
    other = np.zeros_like(m)
    other[7:, 7:] = True
    assert region_similarity(m, other) == 0.0


def test_j_half_overlap():
    left = np.zeros((10, 10), bool)
    left[:, :5] = True
    top = np.zeros((10, 10), bool)
    top[:5] = True
    assert region_similarity(left, top) == 25 / 75


def test_j_both_empty():
    z = np.zeros((4, 4), bool)
    assert region_similarity(z, z) == 1.0


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        region_similarity(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ShapeError):
        boundary_fmeasure(np.zeros((3, 3)), np.zeros((3, 4)))


def test_f_identity():
    m = np.zeros((20, 20), bool)
    m[5:15, 4:12] = True
    assert boundary_fmeasure(m, m) == 1.0


def test_f_shift_within_tolerance():
    gt = np.zeros((20, 20), bool)
    gt[5:15, 5:15] = True
    pred = np.roll(gt, 1, axis=1)
    assert boundary_fmeasure(pred, gt, tol_px=2) == 1.0
    assert boundary_fmeasure(pred, gt, tol_px=0) < 1.0


def test_f_empty_prediction():
    gt = np.zeros((20, 20), bool)
    gt[5:15, 5:15] = True
    assert boundary_fmeasure(np.zeros_like(gt), gt) == 0.0
    assert boundary_fmeasure(gt, np.zeros_like(gt)) == 0.0
    assert boundary_fmeasure(np.zeros_like(gt), np.zeros_like(gt)) == 1.0


def test_boundary_includes_image_edge():
    m = np.ones((4, 4), bool)
    b = mask_boundary(m)
    assert b.sum() == 12 and not b[1:3, 1:3].any()


def test_default_tolerance():
    assert default_tolerance((64, 64)) == 1
    assert default_tolerance((480, 854)) == 8


@settings(max_examples=200, deadline=None)
@given(pred=masks8, gt=masks8, tol=st.sampled_from([0, 1, 2]))
def test_matches_brute_force(pred, gt, tol):
    assert region_similarity(pred, gt) == brute_iou(pred.tolist(), gt.tolist())
    assert boundary_fmeasure(pred, gt, tol) == brute_fmeasure(pred.tolist(), gt.tolist(), tol)
    assert set(zip(*np.nonzero(mask_boundary(pred)))) == set(brute_boundary(pred.tolist()))


@settings(max_examples=100, deadline=None)
@given(pred=masks8, gt=masks8, tol=st.sampled_from([0, 1, 2]))
def test_symmetry(pred, gt, tol):
    assert region_similarity(pred, gt) == region_similarity(gt, pred)
    assert boundary_fmeasure(pred, gt, tol) == pytest.approx(boundary_fmeasure(gt, pred, tol), abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(pred=masks8, gt=masks8, data=st.data())
def test_adding_true_positives_never_lowers_j(pred, gt, data):
    missing = np.argwhere(gt & ~pred)
    if len(missing) == 0:
        return
    k = data.draw(st.integers(1, len(missing)))
    grown = pred.copy()
    for y, x in missing[:k]:
        grown[y, x] = True
    assert region_similarity(grown, gt) >= region_similarity(pred, gt)


def test_tol_zero_is_exact_boundary_f():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p, g = rng.random((8, 8)) > 0.5, rng.random((8, 8)) > 0.5
        bp, bg = mask_boundary(p), mask_boundary(g)
        if not bp.any() or not bg.any():
            continue
        prec = (bp & bg).sum() / bp.sum()
        rec = (bp & bg).sum() / bg.sum()
        exact = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
        assert boundary_fmeasure(p, g, 0) == pytest.approx(exact, abs=1e-15)


# ---- dataset aggregation

def _square(T, lo, hi, size=16):
    m = np.zeros((T, size, size), bool)
    m[:, lo:hi, lo:hi] = True
    return m


def test_perfect_dataset():
    gt = {"a": {1: _square(4, 2, 8), 2: _square(4, 9, 14)}, "b": {1: _square(3, 4, 10)}}
    rep = evaluate_dataset(gt, gt)
    assert rep.J == 1.0 and rep.F == 1.0 and rep.JF == 1.0


def test_dataset_mean_of_objects():
    gt1 = np.zeros((2, 10, 10), bool)
    gt1[:, :, :5] = True
    pred2 = np.zeros((2, 10, 10), bool)
    pred2[:, :, :5] = True
    gt2 = np.zeros((2, 10, 10), bool)
    gt2[:, :, :10] = True  # J = 0.5
    rep = evaluate_dataset({"c": {1: gt1, 2: pred2}}, {"c": {1: gt1, 2: gt2}})
    js = sorted(o.J for o in rep.objects)
    assert js == [0.5, 1.0]
    assert rep.J == 0.75
    assert rep.JF == pytest.approx((rep.J + rep.F) / 2)


def test_prompt_frame_excluded():
    gt = _square(3, 2, 8)
    pred = gt.copy()
    pred[0] = False
    rep = evaluate_dataset({"a": {1: pred}}, {"a": {1: gt}})
    assert rep.JF == 1.0
    assert rep.objects[0].frames == [1, 2]
    rep_all = evaluate_dataset({"a": {1: pred}}, {"a": {1: gt}}, exclude_prompt_frame=False)
    assert rep_all.J < 1.0


def test_missing_prediction_lists_gap():
    gt = {"a": {1: _square(3, 2, 8), 2: _square(3, 2, 8)}, "b": {1: _square(3, 2, 8)}}
    with pytest.raises(MissingPredictionError, match=r"a/object 2.*b: all objects"):
        evaluate_dataset({"a": {1: gt["a"][1]}}, gt)


def test_random_dataset_matches_brute_force():
    rng = np.random.default_rng(1)
    preds, gts = {}, {}
    for c in range(4):
        preds[f"c{c}"], gts[f"c{c}"] = {}, {}
        for o in (1, 2):
            preds[f"c{c}"][o] = rng.random((3, 8, 8)) > 0.5
            gts[f"c{c}"][o] = rng.random((3, 8, 8)) > 0.5
    rep = evaluate_dataset(preds, gts, tol_px=1)
    Js, Fs = [], []
    for c in gts:
        for o in gts[c]:
            Js.append(np.mean([brute_iou(preds[c][o][t].tolist(), gts[c][o][t].tolist()) for t in (1, 2)]))
            Fs.append(np.mean([brute_fmeasure(preds[c][o][t].tolist(), gts[c][o][t].tolist(), 1) for t in (1, 2)]))
    assert rep.J == pytest.approx(np.mean(Js), abs=1e-15)
    assert rep.F == pytest.approx(np.mean(Fs), abs=1e-15)


def test_csv_outputs(tmp_path):
    gt = {"a": {1: _square(3, 2, 8)}}
    rep = evaluate_dataset(gt, gt, dataset="toy")
    rep.write_csv(tmp_path / "m.csv")
    rep.write_traces(tmp_path / "t.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].startswith("#") and "excluded" in lines[0]
    assert lines[1] == "dataset,clip_id,object_id,J,F"
    assert lines[2].startswith("toy,a,1,")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "clip_id,object_id,frame,J,F"
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 3
