"""Run configuration loaded from JSON; unknown keys are rejected."""

from __future__ import annotations

import json
from pathlib import Path

import pydantic
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ValidationError
from .events import WindowSpec
from .losses import LossWeights
from .net import LossConfig, NetConfig
from .sim import AugmentParams, CameraIntrinsics, SimConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CameraSection(_Section):
    width: int = Field(346, gt=0)
    height: int = Field(240, gt=0)
    vertical_fov_deg: float = Field(30.0, gt=0, lt=180)

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.width, self.height, self.vertical_fov_deg)


class SimSection(_Section):
    contrast_threshold: float = Field(0.4, gt=0)
    epsilon: float = Field(1e-4, gt=0)

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(self.contrast_threshold, self.epsilon, seed)


class AugmentSection(_Section):
    max_xy_jitter: int = Field(0, ge=0)
    max_t_jitter_us: int = Field(0, ge=0)
    polarity_swap_prob: float = Field(0.0, ge=0, le=1)

    def params(self) -> AugmentParams:
        return AugmentParams(self.max_xy_jitter, self.max_t_jitter_us, self.polarity_swap_prob)

    @property
    def enabled(self) -> bool:
        return bool(self.max_xy_jitter or self.max_t_jitter_us or self.polarity_swap_prob)


class WindowSection(_Section):
    length_us: int = Field(2000, gt=0)
    stride_us: int = Field(1000, gt=0)

    @model_validator(mode="after")
    def _stride(self):
        if self.stride_us > self.length_us:
            raise ValueError("stride_us must not exceed length_us")
        return self

    def spec(self) -> WindowSpec:
        return WindowSpec(self.length_us, self.stride_us)


class DataSection(_Section):
    scripts: list[str] = ["clap", "crossover"]
    duration_s: float = Field(15.0, gt=0)
    fps_render: float = Field(100.0, gt=0)
    vertex_noise_mm: float = Field(3.0, ge=0)
    keep_every: int = Field(10, ge=1)
    resample_m: int = Field(512, ge=1)
    split: str = Field("interleave", pattern="^(interleave|script)$")
    test_every: int = Field(5, ge=2)
    test_scripts: list[str] = []
    augment: AugmentSection = AugmentSection()


class LossSection(_Section):
    joints: float = Field(0.01, ge=0)
    mano: float = Field(10.0, ge=0)
    seg: float = Field(1.0, ge=0)
    interhand: float = Field(100.0, ge=0)
    isec: float = Field(100.0, ge=0)
    theta: float = Field(0.025, ge=0)
    beta: float = Field(25.0, ge=0)
    joints2d: float = Field(0.01, ge=0)

    def weights(self) -> LossWeights:
        return LossWeights(**self.model_dump())


class NetSection(_Section):
    backbone: list[int] = [32, 64]
    feat_dim: int = Field(256, gt=0)
    q_hidden: int = Field(64, gt=0)
    seg_hidden: int = Field(32, gt=0)
    reg_point: list[int] = [32, 128]
    reg_hidden: int = Field(64, gt=0)
    softmax_axis: str = Field("feature", pattern="^(feature|class)$")

    def net_config(self) -> NetConfig:
        d = self.model_dump()
        return NetConfig(backbone=tuple(d.pop("backbone")), reg_point=tuple(d.pop("reg_point")), **d)


class TrainSection(_Section):
    iterations: int = Field(5000, ge=0)
    batch_size: int = Field(8, ge=1)
    lr: float = Field(1e-3, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    use_isec: bool = False
    isec_start: int = Field(0, ge=0)
    isec_height_scale: float = Field(1.0, gt=0)
    checkpoint_every: int = Field(1000, ge=0)

    def loss_config(self, loss: LossSection, step: int) -> LossConfig:
        return LossConfig(loss.weights(), self.use_isec and step >= self.isec_start, self.isec_height_scale)


class EvalSection(_Section):
    batch_size: int = Field(32, ge=1)
    gate_mm: float = Field(50.0, gt=0)


class BenchSection(_Section):
    duration_s: float = Field(2.0, gt=0)
    forward_windows: int = Field(64, ge=0)
    events_per_ms: int = Field(150, ge=0)


class RunConfig(_Section):
    seed: int = 0
    camera: CameraSection = CameraSection()
    sim: SimSection = SimSection()
    window: WindowSection = WindowSection()
    data: DataSection = DataSection()
    loss: LossSection = LossSection()
    net: NetSection = NetSection()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()
    bench: BenchSection = BenchSection()

    def with_seed(self, seed: int | None) -> "RunConfig":
        return self if seed is None else self.model_copy(update={"seed": seed})

    def dump(self) -> str:
        return json.dumps(self.model_dump(), indent=2, sort_keys=True)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except pydantic.ValidationError as exc:
        raise ValidationError(f"invalid config: {exc}") from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config file (or defaults when ``path`` is None) and apply nested overrides."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
    if overrides:
        data = merge(data, overrides)
    return parse_config(data)


def merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out
