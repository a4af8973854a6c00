import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gst.align import (
    AugmentParams,
    PointPairSet,
    apply_augment,
    pairs_from_bundles,
    sample_augment,
    scale_residual,
    solve_scale,
)
from gst.errors import InputError
from gst.evalkit import iou3d
from gst.scene import Aabb, aggregate_points, rotation_z
from gst.synth import make_fixture

from oracles import golden_section_min, stationary_point

# ---------------------------------------------------------------------------
# scale
# ---------------------------------------------------------------------------


def test_scale_single_pair():
    assert solve_scale(PointPairSet([[1, 0, 0]], [[2, 0, 0]])) == 2.0


def test_scale_two_pairs_matches_minimizer():
    pairs = PointPairSet([[1, 0, 0], [0, 2, 0]], [[2, 0, 0], [0, 2, 0]])
    s = solve_scale(pairs)
    assert s == pytest.approx(1.2, abs=1e-15)
    def residual(x):
        return scale_residual(pairs, x)

    # value comparisons resolve a quadratic minimum only to ~sqrt(eps)
    assert s == pytest.approx(golden_section_min(residual, 0.0, 10.0), abs=1e-7)
    assert s == pytest.approx(stationary_point(residual, 0.0, 10.0), abs=1e-9)


def test_scale_identity(rng):
    p = rng.normal(size=(50, 3))
    assert solve_scale(PointPairSet(p, p)) == pytest.approx(1.0, abs=1e-15)


def test_scale_errors_and_clamp(caplog):
    with pytest.raises(InputError):
        solve_scale(PointPairSet(np.zeros((3, 3)), np.ones((3, 3))))
    with pytest.raises(InputError):
        PointPairSet(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(InputError):
        PointPairSet([[np.nan, 0, 0]], [[1, 0, 0]])
    s = solve_scale(PointPairSet([[1, 0, 0]], [[-3, 0, 0]]))
    assert s > 0
    assert "non-positive" in caplog.text


def test_scale_trim_discards_outliers(rng):
    src = rng.uniform(1, 2, size=(100, 3))
    ref = 1.5 * src
    ref[:5] *= 40  # gross outliers
    pairs = PointPairSet(src, ref)
    assert abs(solve_scale(pairs) - 1.5) > 0.5
    assert solve_scale(pairs, trim=0.1) == pytest.approx(1.5, abs=1e-12)
    with pytest.raises(InputError):
        solve_scale(pairs, trim=1.0)


@given(st.integers(0, 10_000), st.floats(0.1, 10))
def test_scale_local_optimality_and_rotation_invariance(seed, true_s):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(30, 3))
    ref = true_s * src + rng.normal(0, 0.05, size=src.shape)
    pairs = PointPairSet(src, ref)
    s = solve_scale(pairs)
    r0 = scale_residual(pairs, s)
    assert r0 <= scale_residual(pairs, s * (1 + 1e-3))
    assert r0 <= scale_residual(pairs, s * (1 - 1e-3))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    rotated = PointPairSet(src @ q.T, ref @ q.T)
    assert solve_scale(rotated) == pytest.approx(s, rel=1e-9)


def test_pairs_from_bundles_planted_scale():
    a = make_fixture(n_frames=4, size=32, depth_step=0.01)
    b = make_fixture(n_frames=4, size=32, depth_step=0.01, depth_scale=1.7)
    pairs = pairs_from_bundles(a, b)
    assert len(pairs) == sum(int(f.depth.valid.sum()) for f in a.frames)
    assert set(np.unique(pairs.view)) == {0, 1, 2, 3}
    assert solve_scale(pairs) == pytest.approx(1.7, abs=1e-6)
    with pytest.raises(InputError):
        pairs_from_bundles(a, make_fixture(n_frames=3, size=32))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def test_quarter_turn_box():
    box = AugmentParams(90).apply_box(Aabb((0, 0, 0), (1, 2, 3)))
    assert box == Aabb((-2, 0, 0), (0, 1, 3))


def test_identity_augment(fixture_bundle):
    out = apply_augment(fixture_bundle, AugmentParams())
    assert out.objects == fixture_bundle.objects
    assert out.room_area == fixture_bundle.room_area
    for a, b in zip(out.frames, fixture_bundle.frames):
        assert np.array_equal(a.depth.values, b.depth.values)
        assert np.allclose(a.pose.rotation, b.pose.rotation) and np.allclose(a.pose.translation, b.pose.translation)


def test_scale_two_doubles_distances():
    params = AugmentParams(180, 2.0, (0.3, -0.2, 0.1))
    pts = np.random.default_rng(0).normal(size=(20, 3))
    out = params.apply(pts)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=2)
    assert np.allclose(d1, 2 * d0)


def test_augment_validation(fixture_bundle):
    with pytest.raises(InputError):
        apply_augment(fixture_bundle, AugmentParams(45))
    with pytest.raises(InputError):
        apply_augment(fixture_bundle, AugmentParams(0, 1.3))
    with pytest.raises(InputError):
        apply_augment(fixture_bundle, AugmentParams(0, 1.0, (0, 0, 1.5)))
    apply_augment(fixture_bundle, AugmentParams(0, 2.0), strict=False)  # test-only override


def test_sampled_params_in_range():
    rng = np.random.default_rng(0)
    for _ in range(100):
        sample_augment(rng).validate()


def test_augment_back_projection_consistent(fixture_bundle):
    params = AugmentParams(270, 0.8, (0.5, -1.0, 0.25))
    before = aggregate_points(fixture_bundle.point_maps())
    out = apply_augment(fixture_bundle, params)
    after = aggregate_points(out.point_maps())
    assert np.max(np.abs(after.points - params.apply(before.points))) < 1e-9
    assert out.room_area == pytest.approx(fixture_bundle.room_area * 0.64)
    assert np.allclose(out.trajectories[0], params.apply(fixture_bundle.trajectories[0]))


@st.composite
def params(draw):
    return AugmentParams(
        draw(st.sampled_from([0, 90, 180, 270])),
        draw(st.floats(0.75, 1.25)),
        tuple(draw(st.floats(-1, 1)) for _ in range(3)),
    )


@st.composite
def boxes(draw):
    lo = [draw(st.floats(-3, 3)) for _ in range(3)]
    size = [draw(st.floats(0.05, 2)) for _ in range(3)]
    return Aabb(tuple(lo), tuple(np.add(lo, size)))


@given(params(), boxes(), boxes())
def test_iou_invariant_under_augment(p, a, b):
    assert iou3d(p.apply_box(a), p.apply_box(b)) == pytest.approx(iou3d(a, b), abs=1e-9)


@given(params(), boxes(), st.tuples(*[st.floats(0, 1)] * 3))
def test_containment_preserved(p, box, frac):
    inside = np.add(box.min, np.multiply(frac, np.subtract(box.max, box.min)))
    moved = p.apply_box(box)
    q = p.apply(inside)
    tol = 1e-9
    assert np.all(q >= np.subtract(moved.min, tol)) and np.all(q <= np.add(moved.max, tol))
    # the transformed box is exactly the image of the original, not an enlargement
    assert moved.volume == pytest.approx(box.volume * p.scale**3, rel=1e-9)


def test_rotation_matrices_match_rotation_z():
    for deg in (0, 90, 180, 270):
        assert np.allclose(AugmentParams(deg).rotation, rotation_z(math.radians(deg)), atol=1e-15)
