import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mogakit.corrupt import (
    KINDS,
    TemporalSchedule,
    apply_corruption,
    corrupt_clip,
    corrupt_dataset,
    motion_kernel,
    severity_schedule,
)
from mogakit.data import ToyDatasetSpec, render_clip


@pytest.fixture(scope="module")
def clip():
    return render_clip(ToyDatasetSpec(frames=6), seed=3)


def test_eight_kinds():
    assert len(KINDS) == 8 and len(set(KINDS)) == 8


def test_schedule_constant_without_modulation():
    s = severity_schedule(TemporalSchedule(5, 0.4, [(1.0, 0.0, 0.3), (2.0, 0.0, 1.0)]))
    assert np.array_equal(s, np.full(5, 0.4))


def test_schedule_worked_example():
    s = severity_schedule(TemporalSchedule(4, 0.5, [(1.0, 0.3, 0.0)]))
    assert np.allclose(s, [0.5, 0.8, 0.5, 0.2], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(T=st.integers(1, 64), seed=st.integers(0, 2**31 - 1),
       amp=st.floats(0, 0.6), base=st.floats(0, 1))
def test_schedule_bounds_and_smoothness(T, seed, amp, base):
    sched = TemporalSchedule.sample(T, seed, max_amp=amp, base_range=(base, base))
    s = severity_schedule(sched)
    assert s.shape == (T,)
    assert np.all((s >= 0) & (s <= 1))
    if T > 1:
        assert np.max(np.abs(np.diff(s))) <= sched.lipschitz_bound() + 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_zero_severity_identity(kind, clip):
    f = clip.frames[2]
    out = apply_corruption(f, kind, 0.0, seed=9, t=2)
    assert np.array_equal(out, f)


@pytest.mark.parametrize("kind", KINDS)
def test_output_range_and_determinism(kind, clip):
    f = clip.frames[1]
    a = apply_corruption(f, kind, 0.8, seed=5, t=1)
    b = apply_corruption(f, kind, 0.8, seed=5, t=1)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a, f)


def test_unknown_kind(clip):
    with pytest.raises(ValueError):
        apply_corruption(clip.frames[0], "jpeg", 0.5)


def test_severity_range_checked(clip):
    with pytest.raises(ValueError):
        apply_corruption(clip.frames[0], "fog", 1.5)


@pytest.mark.parametrize("s", [0.25, 0.5, 1.0])
def test_gaussian_noise_std(s):
    frame = np.full((256, 256, 3), 0.5)
    out = apply_corruption(frame, "gaussian_noise", s, seed=1, t=0)
    assert abs(out[..., 0].std() - 0.2 * s) <= 0.05 * 0.2 * s


def test_motion_blur_impulse():
    frame = np.zeros((64, 64, 3))
    frame[32, 32] = 1.0
    out = apply_corruption(frame, "motion_blur", 1.0, seed=4, t=0)[..., 0]
    assert out.sum() == pytest.approx(1.0, abs=1e-6)
    ys, xs = np.nonzero(out)
    w = out[ys, xs]
    pts = np.stack([ys, xs], 1).astype(float)
    c = (pts * w[:, None]).sum(0)
    cov = ((pts - c).T * w) @ (pts - c)
    minor, major = np.sqrt(np.linalg.eigvalsh(cov))
    # a uniform segment of 15 taps spans 14 px: std 14 / sqrt(12)
    assert major == pytest.approx(14 / np.sqrt(12), abs=0.3)
    assert minor < 0.6
    assert np.abs(c - 32).max() < 1e-9


@pytest.mark.parametrize("angle", [0.0, 0.3, np.pi / 4, 1.2, np.pi / 2])
def test_motion_kernel_normalized(angle):
    for L in (1, 4, 15):
        assert motion_kernel(L, angle).sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("kind", ["gaussian_noise", "iso_noise", "motion_blur", "resampling_blur"])
def test_monotone_degradation(kind, clip):
    f = clip.frames[0]
    mad = [np.abs(apply_corruption(f, kind, s, seed=2, t=0) - f).mean() for s in np.linspace(0, 1, 11)]
    assert all(b >= a - 1e-12 for a, b in zip(mad, mad[1:])), mad


def test_per_clip_factors_fixed_across_frames(clip):
    # same frame content at different t: jitter is a per-clip transform
    f = clip.frames[0]
    a = apply_corruption(f, "color_jitter", 0.5, seed=3, t=0)
    b = apply_corruption(f, "color_jitter", 0.5, seed=3, t=5)
    assert np.array_equal(a, b)


def test_corrupt_clip_preserves_labels(clip):
    sched = TemporalSchedule.sample(clip.T, seed=11)
    out = corrupt_clip(clip, "snow", sched)
    assert out.masks.tobytes() == clip.masks.tobytes()
    assert out.object_ids == clip.object_ids
    assert out.meta["corruption.kind"] == "snow"
    assert out.meta["corruption.seed"] == "11"
    assert "artifact-defined" in out.meta["corruption.schedule_formula"]


def test_corrupt_clip_zero_schedule_is_identity(clip):
    out = corrupt_clip(clip, "fog", TemporalSchedule(clip.T, 0.0, [], seed=1))
    assert np.array_equal(out.frames, clip.frames)


def test_corrupt_clip_deterministic(clip):
    sched = TemporalSchedule.sample(clip.T, seed=12)
    a = corrupt_clip(clip, "rain", sched)
    b = corrupt_clip(clip, "rain", sched)
    assert a.frames.tobytes() == b.frames.tobytes()


def test_corrupt_clip_length_mismatch(clip):
    with pytest.raises(ValueError):
        corrupt_clip(clip, "fog", TemporalSchedule(clip.T + 1, 0.5))


def test_corrupt_dataset_round_robin(clip):
    clips = [clip] * 9
    out = corrupt_dataset(clips, "all", seed=0)
    assert [c.meta["corruption.kind"] for c in out] == list(KINDS) + [KINDS[0]]
    again = corrupt_dataset(clips, "all", seed=0)
    assert all(a.frames.tobytes() == b.frames.tobytes() for a, b in zip(out, again))
