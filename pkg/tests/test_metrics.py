import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evhands.hand import HandMesh
from evhands.metrics import (DEFAULT_THRESHOLDS, PckCurve, auc, gated_coll_percent, pck_curve,
                             relative_errors, relative_root_errors, write_curve_csv)


class TestPck:
    def test_perfect(self):
        c = pck_curve(np.zeros(50))
        assert np.all(c.values == 1) and auc(c) == 1.0

    def test_constant_fifty(self):
        c = pck_curve(np.full(30, 50.0))
        assert c.values[49] == 0 and c.values[50] == 1
        assert auc(c) == pytest.approx(0.5, abs=1e-12)

    def test_all_beyond_range(self):
        c = pck_curve(np.full(10, 150.0))
        assert np.all(c.values == 0) and auc(c) == 0.0

    def test_sampled_curves(self):
        th = DEFAULT_THRESHOLDS
        assert auc(PckCurve(th, np.ones_like(th))) == 1.0
        assert auc(PckCurve(th, np.zeros_like(th))) == 0.0
        assert auc(PckCurve(th, th / 100.0)) == pytest.approx(0.5, abs=1e-12)

    def test_exact_area_matches_fine_trapezoid(self, rng):
        e = rng.gamma(2.0, 20.0, 500)
        fine = np.linspace(0, 100, 200001)
        ref = auc(PckCurve(fine, pck_curve(e, fine).values))
        assert auc(pck_curve(e)) == pytest.approx(ref, abs=1e-4)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 200), min_size=1, max_size=50))
    def test_monotone_and_bounded(self, errs):
        c = pck_curve(errs)
        assert np.all(np.diff(c.values) >= 0)
        assert 0.0 <= auc(c) <= 1.0
        assert c.values[-1] == (1.0 if max(errs) <= 100 else c.values[-1])

    def test_dominance(self, rng):
        e = rng.uniform(0, 120, 200)
        assert auc(pck_curve(e * 0.8)) >= auc(pck_curve(e))

    def test_csv(self, tmp_path):
        write_curve_csv(tmp_path / "c.csv", pck_curve([10.0, 20.0]))
        rows = list(csv.reader(open(tmp_path / "c.csv")))
        assert rows[0] == ["threshold_mm", "value"] and len(rows) == 102
        assert rows[16] == ["15.0", "0.5"]


def hands(rng):
    return rng.normal(0, 0.05, (4, 21, 3)), rng.normal(0, 0.05, (4, 21, 3))


class TestRelative:
    def test_per_hand_offsets_cancel(self, rng):
        g, _ = hands(rng)
        p = g + rng.normal(size=(4, 1, 3))
        np.testing.assert_allclose(relative_errors(p, g), 0, atol=1e-9)

    def test_fingertip(self, rng):
        g, _ = hands(rng)
        p = g.copy()
        p[:, 20] += [0, 0.02, 0]
        e = relative_errors(p, g)
        np.testing.assert_allclose(e[:, 20], 20.0, rtol=1e-9)
        assert np.all(e[:, :20] == 0)

    def test_common_offset_cancels(self, rng):
        gl, gr = hands(rng)
        d = rng.normal(size=(4, 1, 3))
        np.testing.assert_allclose(relative_root_errors(gl + d, gr + d, gl, gr), 0, atol=1e-9)

    def test_left_extra_offset(self, rng):
        gl, gr = hands(rng)
        d = rng.normal(size=(4, 1, 3))
        e = relative_root_errors(gl + d + [0.03, 0, 0], gr + d, gl, gr)
        np.testing.assert_allclose(e[:, :21], 30.0, rtol=1e-9)
        np.testing.assert_allclose(e[:, 21:], 0.0, atol=1e-9)


def mesh_pair(n_hit, n=20):
    """Two meshes of ``n`` separate triangles each; the first ``n_hit`` pairs cross."""
    base = np.array([[0, 0, 0], [0.5, 0, 0], [0, 0.5, 0]], float)
    left = np.concatenate([base + [0, 2.0 * i, 0] for i in range(n)])
    right = np.concatenate([base + [5, 2.0 * i, 0] for i in range(n)])
    for i in range(n_hit):
        right[3 * i:3 * i + 3] = [[0.1, 2 * i + 0.1, -1], [0.3, 2 * i + 0.1, -1], [0.1, 2 * i + 0.1, 1]]
    faces = np.arange(3 * n).reshape(n, 3)
    return HandMesh(left, faces), HandMesh(right, faces)


class TestGatedColl:
    near = (np.zeros(3), np.array([0.03, 0, 0]))
    far = (np.zeros(3), np.array([0.08, 0, 0]))

    def test_none_qualify(self):
        stat = gated_coll_percent([(*mesh_pair(1), *self.far)])
        assert stat.empty and stat.value is None

    def test_single_frame(self):
        stat = gated_coll_percent([(*mesh_pair(1), *self.near)])
        assert stat.frames == 1 and stat.value == pytest.approx(5.0)

    def test_mean_of_two(self):
        frames = [(*mesh_pair(0), *self.near), (*mesh_pair(2), *self.near), (*mesh_pair(3), *self.far)]
        stat = gated_coll_percent(frames)
        assert stat.frames == 2 and stat.value == pytest.approx(5.0)
