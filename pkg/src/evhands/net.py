"""Two-hand regression network, optimiser and training step.

Data flow for a batch of resampled clouds (B x M x 5)::

    features F (B x M x 256)  <- shared per-point MLP with a max-pooled context
    Q_L, Q_R   (B x M x 256)  <- one small MLP per hand
    S          (B x M x 4)    <- segmentation head
    H_h = F @ softmax(Q_h^T S / sqrt(d_s))          (B x M x 4, per hand)
    params_h   (B x 22)       <- per-point MLP on H_h, masked max-pool, MLP head

The left and right branches and regressors have separate weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ad
from .collision import intersection_loss_tensor
from .container import decode_arrays, encode_arrays
from .errors import NumericAbort, ValidationError
from .hand import N_PARAMS, HandAssets, hand_forward
from .losses import LossReport, LossWeights, TwoHandPrediction, TwoHandTarget, total_loss

CHECKPOINT_TAG = "# evhands checkpoint"
_NEG = -1e9


@dataclass(frozen=True)
class NetConfig:
    in_dim: int = 5
    backbone: tuple = (32, 64)
    feat_dim: int = 256
    q_hidden: int = 64
    seg_hidden: int = 32
    n_classes: int = 4
    reg_point: tuple = (32, 128)
    reg_hidden: int = 64
    softmax_axis: str = "feature"

    def __post_init__(self):
        if self.softmax_axis not in ("feature", "class"):
            raise ValidationError("softmax_axis must be 'feature' or 'class'")
        object.__setattr__(self, "backbone", tuple(self.backbone))
        object.__setattr__(self, "reg_point", tuple(self.reg_point))

    def layers(self) -> list[tuple[str, int, int]]:
        """(name, fan_in, fan_out) of every dense layer."""
        out = []
        widths = (self.in_dim,) + self.backbone
        for i in range(len(self.backbone)):
            out.append((f"bb{i}", widths[i], widths[i + 1]))
        out.append(("bb_out", 2 * self.backbone[-1], self.feat_dim))
        for h in ("l", "r"):
            out += [(f"q{h}0", self.feat_dim, self.q_hidden), (f"q{h}1", self.q_hidden, self.feat_dim)]
        out += [("seg0", self.feat_dim, self.seg_hidden), ("seg1", self.seg_hidden, self.n_classes)]
        for h in ("l", "r"):
            widths = (self.n_classes,) + self.reg_point
            for i in range(len(self.reg_point)):
                out.append((f"reg{h}_pt{i}", widths[i], widths[i + 1]))
            out += [(f"reg{h}_h0", self.reg_point[-1], self.reg_hidden),
                    (f"reg{h}_h1", self.reg_hidden, N_PARAMS)]
        return out


class Model:
    """Weights as named tensors plus the forward pass."""

    def __init__(self, config: NetConfig = NetConfig(), seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.step = 0
        rng = np.random.default_rng(seed)
        self.params: dict[str, ad.Tensor] = {}
        for name, fi, fo in config.layers():
            w = rng.standard_normal((fi, fo)) * math.sqrt(2.0 / fi)
            self.params[name + ".w"] = ad.Tensor(w.astype(dtype), requires_grad=True, name=name + ".w")
            self.params[name + ".b"] = ad.Tensor(np.zeros(fo, dtype), requires_grad=True, name=name + ".b")

    def astype(self, dtype) -> "Model":
        m = Model.__new__(Model)
        m.config, m.seed, m.step = self.config, self.seed, self.step
        m.params = {k: ad.Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()}
        return m

    def _dense(self, x, name, act=True):
        y = x @ self.params[name + ".w"] + self.params[name + ".b"]
        return ad.relu(y) if act else y

    # --- stages -------------------------------------------------------------
    def extract_features(self, x, mask=None):
        """Per-point features (B x M x feat_dim) with a global max-pooled context."""
        x = ad.as_tensor(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        b, m = x.shape[:2]
        h = x
        for i in range(len(self.config.backbone)):
            h = self._dense(h, f"bb{i}")
        g = masked_max(h, mask if mask is None or not squeeze else np.asarray(mask)[None])
        ctx = ad.concat([h, g.reshape(b, 1, -1) + np.zeros((1, m, 1), h.dtype)], axis=-1)
        f = self._dense(ctx, "bb_out")
        return f[0] if squeeze else f

    def branches(self, f):
        ql = self._dense(self._dense(f, "ql0"), "ql1", act=False)
        qr = self._dense(self._dense(f, "qr0"), "qr1", act=False)
        s = self._dense(self._dense(f, "seg0"), "seg1", act=False)
        return ql, qr, s

    def regress(self, h, mask, side: str):
        z = h
        for i in range(len(self.config.reg_point)):
            z = self._dense(z, f"reg{side}_pt{i}")
        pooled = masked_max(z, mask)
        return self._dense(self._dense(pooled, f"reg{side}_h0"), f"reg{side}_h1", act=False)

    def forward(self, x, mask=None):
        """Returns ``(params_l B x 22, params_r B x 22, seg_logits B x M x 4)``."""
        x = ad.as_tensor(x, next(iter(self.params.values())))
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
            mask = None if mask is None else np.asarray(mask)[None]
        if mask is None:
            mask = np.ones(x.shape[:2], dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=1).all():
            raise ValidationError("empty cloud: every point is padding")
        f = self.extract_features(x, mask)
        ql, qr, s = self.branches(f)
        keep = mask[..., None].astype(f.dtype)
        hl = attention_block(ql * keep, s, f, self.config.softmax_axis)
        hr = attention_block(qr * keep, s, f, self.config.softmax_axis)
        return self.regress(hl, mask, "l"), self.regress(hr, mask, "r"), s

    def predict(self, x, mask, assets_l: HandAssets, assets_r: HandAssets) -> TwoHandPrediction:
        pl, pr, s = self.forward(x, mask)
        vl, jl = hand_forward(pl[:, 0:6], pl[:, 6:16], pl[:, 16:19], pl[:, 19:22], assets_l)
        vr, jr = hand_forward(pr[:, 0:6], pr[:, 6:16], pr[:, 16:19], pr[:, 19:22], assets_r)
        return TwoHandPrediction(pl, pr, jl, jr, s, vl, vr)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def header(self) -> dict:
        return {"config": asdict(self.config), "seed": self.seed, "step": self.step,
                "layers": [list(l) for l in self.config.layers()]}


def masked_max(h, mask):
    """Max over the point axis (-2), ignoring rows where ``mask`` is false."""
    if mask is None:
        return h.max(axis=-2)
    mask = np.asarray(mask, dtype=bool)
    bias = np.where(mask, 0.0, _NEG).astype(h.dtype)[..., None]
    return (h + bias).max(axis=-2)


def attention_block(q, s, f, axis: str = "feature"):
    """Feature-wise attention ``H = F @ softmax(Q^T S / sqrt(d_s))``.

    ``q``: (..., M, D), ``s``: (..., M, d_s), ``f``: (..., M, D) -> (..., M, d_s).
    With ``axis="feature"`` every column of the D x d_s score matrix is
    normalised over the D feature channels; ``"class"`` normalises rows instead.
    """
    q, s, f = ad.as_tensor(q), ad.as_tensor(s), ad.as_tensor(f)
    if q.shape != f.shape or q.shape[:-1] != s.shape[:-1]:
        raise ValidationError(f"attention shapes do not match: Q{q.shape} S{s.shape} F{f.shape}")
    d_s = s.shape[-1]
    scores = ad.swapaxes(q, -1, -2) @ s / math.sqrt(d_s)
    a = ad.softmax(scores, axis=-2 if axis == "feature" else -1)
    return f @ a


# --- optimisation ----------------------------------------------------------------


@dataclass
class Adam:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, ad.Tensor], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in sorted(params):
            g = grads.get(name)
            if g is None:
                continue
            p = params[name]
            m = self.m.get(name, np.zeros_like(p.data))
            v = self.v.get(name, np.zeros_like(p.data))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            if self.lr:
                upd = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
                p.data = (p.data - upd).astype(p.data.dtype)


@dataclass
class Batch:
    features: np.ndarray  # B x M x 5
    mask: np.ndarray  # B x M, false for padding rows
    target: TwoHandTarget


@dataclass(frozen=True)
class LossConfig:
    weights: LossWeights = LossWeights()
    use_isec: bool = False
    isec_height_scale: float = 1.0


def first_nonfinite(tape: ad.Tape, model: Model) -> str:
    for name, p in model.params.items():
        if not np.all(np.isfinite(p.data)):
            return f"weight {name}"
    for i, node in enumerate(tape.nodes):
        if not np.all(np.isfinite(node.data)):
            return f"tape node {i} ({node.op}, shape {node.shape})"
    return "none found"


def compute_loss(model: Model, batch: Batch, assets_l, assets_r, cfg: LossConfig) -> LossReport:
    pred = model.predict(batch.features, batch.mask, assets_l, assets_r)
    isec = None
    if cfg.use_isec:
        def isec(p):
            return intersection_loss_tensor(p.verts_l, p.verts_r, assets_l.faces, assets_r.faces,
                                            cfg.isec_height_scale)
    return total_loss(pred, batch.target, cfg.weights, isec)


def train_step(model: Model, batch: Batch, opt: Adam, assets_l, assets_r,
               cfg: LossConfig = LossConfig()) -> LossReport:
    """Forward, loss, backward and one Adam update; aborts on non-finite values."""
    with ad.Tape() as tape:
        report = compute_loss(model, batch, assets_l, assets_r, cfg)
    if not np.isfinite(report.value):
        raise NumericAbort(f"non-finite loss at step {model.step}; first bad value: "
                           f"{first_nonfinite(tape, model)}")
    names = list(model.params)
    grads = ad.backward(tape, report.total, [model.params[n] for n in names])
    for n, g in zip(names, grads):
        if not np.all(np.isfinite(g)):
            raise NumericAbort(f"non-finite gradient for {n} at step {model.step}")
    opt.step(model.params, dict(zip(names, grads)))
    model.step += 1
    return report


# --- checkpoints -------------------------------------------------------------------


def save_checkpoint(path, model: Model) -> None:
    """A two-line text header (tag, JSON) followed by a named-array container."""
    head = f"{CHECKPOINT_TAG}\n{json.dumps(model.header(), sort_keys=True)}\n".encode()
    Path(path).write_bytes(head + encode_arrays(model.arrays()))


def load_checkpoint(path) -> Model:
    buf = Path(path).read_bytes()
    first = buf.find(b"\n")
    second = buf.find(b"\n", first + 1)
    if buf[:first].decode(errors="replace") != CHECKPOINT_TAG or second < 0:
        raise ValidationError(f"{path}: not a checkpoint")
    header = json.loads(buf[first + 1:second])
    arrays = decode_arrays(buf[second + 1:], str(path))
    model = Model(NetConfig(**header["config"]), seed=header["seed"])
    model.step = header["step"]
    for k, v in arrays.items():
        if k not in model.params or model.params[k].shape != v.shape:
            raise ValidationError(f"{path}: unexpected array {k} {v.shape}")
        model.params[k].data = v
    return model
