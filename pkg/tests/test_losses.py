import math

import numpy as np
import pytest

from evhands import ad
from evhands.errors import ValidationError
from evhands.events import SegLabel
from evhands.hand import HandParams
from evhands.losses import (LossLog, LossWeights, TwoHandPrediction, TwoHandTarget, combine_terms,
                            interhand_loss, joint_loss, joints2d_loss, mano_loss, real_total_loss, seg_loss,
                            tikhonov_reg, total_loss)
from evhands.sim import CameraIntrinsics

CAM = CameraIntrinsics()


def joints(rng, n=21):
    return rng.normal(0, 0.05, (n, 3)) + [0, 0, 0.6]


class TestJointLoss:
    def test_zero_at_gt(self, rng):
        j = joints(rng)
        assert joint_loss(j, j).item() == 0.0

    def test_uniform_offset(self, rng):
        j = joints(rng)
        assert joint_loss(j + [0.03, 0, 0], j).item() == pytest.approx(0.03, rel=1e-6)

    def test_one_joint_off(self, rng):
        j = joints(rng)
        p = j.copy()
        p[4] += [0, 0.21, 0]
        assert joint_loss(p, j).item() == pytest.approx(0.01, rel=1e-6)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValidationError):
            joint_loss(joints(rng), joints(rng, 20))


class TestManoLoss:
    def test_zero_at_gt(self, rng):
        p = HandParams(rng.normal(size=6), rng.normal(size=10))
        assert mano_loss(p, p).item() == 0.0

    def test_translation_is_l1(self):
        assert mano_loss(HandParams(trans=[0.1, -0.2, 0]), HandParams()).item() == pytest.approx(0.3)

    def test_theta_is_squared(self):
        assert mano_loss(HandParams(theta=2 * np.eye(6)[0]), HandParams()).item() == pytest.approx(4.0)


class TestSegLoss:
    def test_uniform_logits(self):
        loss, n = seg_loss(np.zeros((3, 4)), [SegLabel.LEFT, SegLabel.RIGHT, SegLabel.BACKGROUND])
        assert n == 3 and loss.item() == pytest.approx(math.log(4), rel=1e-6)

    def test_large_margin_goes_to_zero(self):
        labels = [SegLabel.LEFT, SegLabel.BACKGROUND]
        vals = []
        for margin in (1.0, 5.0, 20.0):
            lg = np.zeros((2, 4))
            lg[0, SegLabel.LEFT] = margin
            lg[1, SegLabel.BACKGROUND] = margin
            vals.append(seg_loss(lg, labels)[0].item())
        assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-7

    def test_all_no_class(self):
        loss, n = seg_loss(np.ones((4, 4)), [SegLabel.NO_CLASS] * 4)
        assert n == 0 and loss.item() == 0.0

    def test_no_class_and_masked_rows_excluded(self, rng):
        lg = rng.normal(size=(5, 4))
        labels = np.array([0, 3, 1, 2, 0])
        mask = np.array([1, 1, 1, 1, 0], bool)
        loss, n = seg_loss(lg, labels, mask)
        kept, _ = seg_loss(lg[[0, 2, 3]], labels[[0, 2, 3]])
        assert n == 3 and loss.item() == pytest.approx(kept.item(), rel=1e-12)

    def test_no_gradient_into_excluded_rows(self, rng):
        with ad.precision(np.float64):
            lg = ad.Tensor(rng.normal(size=(4, 4)), requires_grad=True)
            with ad.Tape() as tape:
                loss, _ = seg_loss(lg, [0, 3, 1, 2], [1, 1, 1, 0])
            (g,) = ad.backward(tape, loss, [lg])
        assert np.all(g[[1, 3]] == 0) and np.any(g[0] != 0)


class TestInterhand:
    def setup(self, rng):
        gl = HandParams(rng.normal(size=6), rng.normal(size=10), rng.normal(size=3), [-0.1, 0, 0.6])
        gr = HandParams(rng.normal(size=6), gl.beta, rng.normal(size=3), [0.1, 0, 0.6])
        return gl, gr, joints(rng), joints(rng)

    def test_perfect(self, rng):
        gl, gr, jl, jr = self.setup(rng)
        assert interhand_loss(gl, gr, gl, gr, jl, jr, jl, jr).item() == 0.0

    def test_common_translation_cancels(self, rng):
        gl, gr, jl, jr = self.setup(rng)
        d = np.array([0.05, -0.02, 0.1])
        pl = HandParams(gl.theta, gl.beta, gl.rot, gl.trans + d)
        pr = HandParams(gr.theta, gr.beta, gr.rot, gr.trans + d)
        assert interhand_loss(pl, pr, gl, gr, jl + d, jr + d, jl, jr).item() == pytest.approx(0.0, abs=1e-24)

    def test_shape_term(self, rng):
        gl, gr, jl, jr = self.setup(rng)
        pl = HandParams(gl.theta, gl.beta + np.eye(10)[0], gl.rot, gl.trans)
        assert interhand_loss(pl, gr, gl, gr, jl, jr, jl, jr).item() == pytest.approx(1.0)


class TestTikhonov:
    def test_zero(self):
        assert tikhonov_reg(HandParams()).item() == 0.0

    def test_theta_weight(self):
        assert tikhonov_reg(HandParams(theta=[2, 0, 0, 0, 0, 0])).item() == pytest.approx(0.1)

    def test_beta_weight(self):
        assert tikhonov_reg(HandParams(beta=np.eye(10)[3])).item() == pytest.approx(25.0)


class TestJoints2d:
    def test_zero(self, rng):
        j = joints(rng)
        assert joints2d_loss(j, j, CAM, CAM).item() == pytest.approx(0.0, abs=1e-9)

    def test_depth_ambiguity(self, rng):
        j = joints(rng)
        scale = rng.uniform(0.5, 2.0, (21, 1))
        assert joints2d_loss(j * scale, j, CAM, CAM).item() == pytest.approx(0.0, abs=1e-4)

    def test_five_pixel_offset(self, rng):
        j = joints(rng)
        # move every joint by 5 px horizontally at its own depth
        shifted = j + np.stack([5 * j[:, 2] / CAM.fx, np.zeros(21), np.zeros(21)], 1)
        assert joints2d_loss(shifted, j, CAM, CAM).item() == pytest.approx(5.0, rel=1e-5)


def prediction(rng, seg=True):
    p = rng.normal(size=(2, 2, 22))
    j = rng.normal(0, 0.05, (2, 2, 21, 3)) + [0, 0, 0.6]
    lg = rng.normal(size=(2, 6, 4)) if seg else None
    return (TwoHandPrediction(ad.Tensor(p[0]), ad.Tensor(p[1]), ad.Tensor(j[0]), ad.Tensor(j[1]),
                              None if lg is None else ad.Tensor(lg)))


def target(rng):
    p = rng.normal(size=(2, 2, 22))
    j = rng.normal(0, 0.05, (2, 2, 21, 3)) + [0, 0, 0.6]
    return TwoHandTarget(p[0], p[1], j[0], j[1], rng.integers(0, 4, (2, 6)), np.ones((2, 6), bool))


class TestTotal:
    @pytest.mark.parametrize("term,expect", [("joints", 0.01), ("mano", 10.0), ("seg", 1.0),
                                             ("interhand", 100.0), ("isec", 100.0), ("reg", 1.0)])
    def test_unit_component_weights(self, term, expect):
        rep = combine_terms({term: ad.Tensor(1.0)}, LossWeights())
        assert rep.value == expect

    def test_zero_components(self):
        rep = combine_terms({t: ad.Tensor(0.0) for t in ("joints", "mano", "seg", "reg")}, LossWeights())
        assert rep.value == 0.0

    def test_breakdown_sums(self, rng):
        with ad.precision(np.float64):
            rep = total_loss(prediction(rng), target(rng), isec_fn=lambda p: ad.Tensor(0.37))
        assert set(rep.weighted) == {"joints", "mano", "seg", "interhand", "isec", "reg"}
        assert sum(rep.weighted.values()) == pytest.approx(rep.value, rel=1e-12)

    def test_zero_at_ground_truth(self, rng):
        t = target(rng)
        t.params_r[:, 6:16] = t.params_l[:, 6:16]
        t.params_l[:, :16] = 0
        t.params_r[:, :16] = 0
        pred = TwoHandPrediction(ad.Tensor(t.params_l), ad.Tensor(t.params_r), ad.Tensor(t.joints_l),
                                 ad.Tensor(t.joints_r))
        assert total_loss(pred, t).value == 0.0

    def test_isec_weight_zero_skips_fn(self, rng):
        called = []
        total_loss(prediction(rng), target(rng), LossWeights(isec=0.0),
                   isec_fn=lambda p: called.append(1) or ad.Tensor(1.0))
        assert not called

    def test_negative_weight_rejected(self):
        with pytest.raises(ValidationError):
            LossWeights(seg=-1.0)


class TestRealTotal:
    def test_logits_do_not_matter(self, rng):
        pred, t = prediction(rng), target(rng)
        a = real_total_loss(pred, t, CAM, CAM).value
        pred.seg_logits = ad.Tensor(pred.seg_logits.data * 100)
        assert real_total_loss(pred, t, CAM, CAM).value == a

    def test_matches_term_by_term(self, rng):
        with ad.precision(np.float64):
            pred, t = prediction(rng), target(rng)
            w = LossWeights(joints2d=0.3)
            got = real_total_loss(pred, t, CAM, CAM, w)
            j2 = (joints2d_loss(pred.joints_l, t.joints_l, CAM, CAM)
                  + joints2d_loss(pred.joints_r, t.joints_r, CAM, CAM)).item()
            ih = interhand_loss(pred.params_l, pred.params_r, t.params_l, t.params_r, pred.joints_l,
                                pred.joints_r, t.joints_l, t.joints_r).item()
            reg = (tikhonov_reg(pred.params_l) + tikhonov_reg(pred.params_r)).item()
            synth = total_loss(pred, t, w)
        assert got.value == pytest.approx(0.3 * j2 + 100 * ih + reg, rel=1e-12)
        assert set(got.weighted) == {"joints2d", "interhand", "reg"}
        assert got.weighted["interhand"] == synth.weighted["interhand"]
        assert got.weighted["reg"] == synth.weighted["reg"]


def test_loss_log_csv(tmp_path):
    rep = combine_terms({"joints": ad.Tensor(2.0), "reg": ad.Tensor(0.5)}, LossWeights())
    with LossLog(tmp_path / "loss.csv") as log:
        log.write(0, rep)
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,term,value"
    assert [l.split(",")[1] for l in lines[1:]] == ["joints", "reg", "total"]
