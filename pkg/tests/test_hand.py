import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from evhands import ad
from evhands.errors import BehindCameraError, ValidationError
from evhands.hand import (NUM_JOINTS, WRIST, HandParams, decode_pose, edge_manifold, generate_toy_assets,
                          load_assets, mirror_assets, pose_batch, pose_mesh, project, regress_joints,
                          rotation_matrix, save_assets)
from evhands.sim import CameraIntrinsics


def zero_mean(assets):
    a = generate_toy_assets(0, assets.handedness)
    a.pose_mean = np.zeros_like(a.pose_mean)
    return a


class TestAssets:
    def test_deterministic_bytes(self, tmp_path):
        save_assets(tmp_path / "a.naf", generate_toy_assets(3))
        save_assets(tmp_path / "b.naf", generate_toy_assets(3))
        assert (tmp_path / "a.naf").read_bytes() == (tmp_path / "b.naf").read_bytes()

    def test_seed_matters(self):
        a, b = generate_toy_assets(1), generate_toy_assets(2)
        assert not np.allclose(a.shape_basis, b.shape_basis)

    def test_invariants(self, right_assets):
        a = right_assets
        np.testing.assert_allclose(a.skinning_weights.sum(1), 1, atol=1e-12)
        assert np.all(a.skinning_weights >= 0)
        np.testing.assert_allclose(a.joint_regressor.sum(1), 1, atol=1e-12)
        assert a.joint_regressor.shape[0] == NUM_JOINTS
        assert a.parents[0] == -1 and np.all(a.parents[1:] < np.arange(1, NUM_JOINTS))
        assert 300 <= a.num_vertices <= 600

    def test_watertight(self, right_assets, left_assets):
        assert edge_manifold(right_assets.faces)
        assert edge_manifold(left_assets.faces)

    def test_mirror(self, right_assets, left_assets):
        np.testing.assert_array_equal(left_assets.template_vertices[:, 0], -right_assets.template_vertices[:, 0])
        assert left_assets.handedness == "left"
        assert generate_toy_assets(0, "left").faces.tolist() == left_assets.faces.tolist()

    def test_file_round_trip(self, tmp_path, right_assets):
        save_assets(tmp_path / "r.naf", right_assets)
        back = load_assets(tmp_path / "r.naf")
        np.testing.assert_array_equal(back.template_vertices, right_assets.template_vertices)
        assert back.faces.tolist() == right_assets.faces.tolist()
        assert "template_vertices" in (tmp_path / "r.naf.txt").read_text()


class TestDecodePose:
    def test_zero_is_mean(self, right_assets):
        np.testing.assert_array_equal(decode_pose(np.zeros(6), right_assets).reshape(-1), right_assets.pose_mean)

    def test_unit_coefficient(self, right_assets):
        got = decode_pose(np.eye(6)[0], right_assets).reshape(-1)
        np.testing.assert_allclose(got, right_assets.pose_mean + right_assets.pose_basis[:, 0])

    def test_affine(self, right_assets, rng):
        t1, t2 = rng.normal(size=6), rng.normal(size=6)
        a, b = 0.7, -1.3
        lhs = decode_pose(a * t1 + b * t2, right_assets)
        mean = right_assets.pose_mean.reshape(15, 3)
        rhs = a * decode_pose(t1, right_assets) + b * decode_pose(t2, right_assets) - (a + b - 1) * mean
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestPose:
    def test_rest_pose_is_template(self, right_assets):
        a = zero_mean(right_assets)
        mesh = pose_mesh(HandParams(), a)
        np.testing.assert_allclose(mesh.vertices, a.template_vertices, atol=1e-12)

    def test_translation(self, right_assets):
        a = zero_mean(right_assets)
        mesh = pose_mesh(HandParams(trans=[0.1, 0, 0]), a)
        np.testing.assert_allclose(mesh.vertices, a.template_vertices + [0.1, 0, 0], atol=1e-12)

    def test_rotation_about_z(self):
        np.testing.assert_allclose(rotation_matrix([0, 0, np.pi]) @ [0.05, 0, 0], [-0.05, 0, 0], atol=1e-15)

    def test_rodrigues_matches_scipy(self, rng):
        for r in rng.normal(size=(20, 3)):
            np.testing.assert_allclose(rotation_matrix(r), Rotation.from_rotvec(r).as_matrix(), atol=1e-12)

    def test_rest_joints(self, right_assets):
        a = zero_mean(right_assets)
        np.testing.assert_allclose(regress_joints(HandParams(), a), a.joint_regressor @ a.template_vertices,
                                   atol=1e-12)

    def test_wrist_is_regressor_centroid(self, right_assets):
        a = zero_mean(right_assets)
        w = a.joint_regressor[WRIST]
        expect = (w[:, None] * a.template_vertices).sum(0) / w.sum()
        np.testing.assert_allclose(regress_joints(HandParams(), a)[WRIST], expect, atol=1e-12)

    def test_rigid_equivariance(self, right_assets, rng):
        for _ in range(10):
            theta, beta = rng.normal(size=6), rng.normal(size=10)
            rot, trans = rng.normal(size=3), rng.normal(size=3)
            j0 = regress_joints(HandParams(theta, beta), right_assets)
            j1 = regress_joints(HandParams(theta, beta, rot, trans), right_assets)
            expect = j0 @ rotation_matrix(rot).T + trans
            np.testing.assert_allclose(j1, expect, rtol=1e-6, atol=1e-9)

    def test_shape_affine(self, right_assets, rng):
        theta = rng.normal(size=6)
        b1, b2 = rng.normal(size=10), rng.normal(size=10)
        v = lambda b: pose_mesh(HandParams(theta, b), right_assets).vertices  # noqa: E731
        np.testing.assert_allclose(v(0.5 * b1 + 0.5 * b2), 0.5 * v(b1) + 0.5 * v(b2), atol=1e-12)

    def test_batch_matches_single(self, right_assets, rng):
        p = rng.normal(size=(4, 22)) * 0.5
        verts, joints = pose_batch(p, right_assets)
        for i in range(4):
            np.testing.assert_allclose(joints[i], regress_joints(HandParams.from_vector(p[i]), right_assets),
                                       atol=1e-12)

    def test_left_is_mirror_of_right(self, right_assets, left_assets, rng):
        from evhands.hand import mirror_params
        p = HandParams(rng.normal(size=6), rng.normal(size=10), rng.normal(size=3), rng.normal(size=3))
        vr = pose_mesh(p, right_assets).vertices
        vl = pose_mesh(mirror_params(p), left_assets).vertices
        np.testing.assert_allclose(vl, vr * [-1, 1, 1], atol=1e-12)

    def test_bad_params(self):
        with pytest.raises(ValidationError):
            HandParams(theta=np.zeros(5))
        with pytest.raises(ValidationError):
            HandParams(trans=[0, np.nan, 0])


class TestProject:
    cam = CameraIntrinsics()

    def test_principal_point(self):
        np.testing.assert_allclose(project(np.array([[0, 0, 1.0]]), self.cam), [[self.cam.cx, self.cam.cy]])

    def test_unit_slope(self):
        z = 0.7
        np.testing.assert_allclose(project(np.array([[z, 0, z]]), self.cam), [[self.cam.fx + self.cam.cx, self.cam.cy]])

    def test_depth_halves_offset(self):
        a = project(np.array([[0.1, 0.05, 1.0]]), self.cam) - [self.cam.cx, self.cam.cy]
        b = project(np.array([[0.1, 0.05, 2.0]]), self.cam) - [self.cam.cx, self.cam.cy]
        np.testing.assert_allclose(b, a / 2)

    def test_behind_camera(self):
        with pytest.raises(BehindCameraError) as exc:
            project(np.array([[0, 0, 1.0], [0, 0, -1.0], [0, 0, 0.0]]), self.cam)
        assert exc.value.indices == [1, 2]

    def test_tensor_matches_array(self, rng):
        pts = rng.normal(size=(5, 3)) + [0, 0, 3]
        with ad.precision(np.float64):
            t = project(ad.Tensor(pts), self.cam)
        np.testing.assert_allclose(t.data, project(pts, self.cam), atol=1e-12)
