"""The image classification network: convolutional feature extractor ``f``
mapping images to a flat feature row per sample, and a dense head ``g``
mapping features to class scores.

Default architecture: conv 3x3x16 (stride 1, pad 1) -> ReLU -> maxpool 2 ->
conv 3x3x32 (pad 1) -> ReLU -> maxpool 2 -> flatten -> dense to 128 features,
head dense 128 -> 10.  Sized so that a 128-sample batch yields a 128x128
feature matrix for the per-batch SVD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import ParameterSet

WEIGHT_INITS = ("he", "xavier")


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class ModelSpec:
    image_hw: tuple[int, int] = (28, 28)
    in_channels: int = 1
    conv_channels: tuple[int, ...] = (16, 32)
    kernel_size: int = 3
    feature_dim: int = 128
    classes: int = 10

    def __post_init__(self):
        if self.feature_dim < 1 or self.classes < 2:
            raise ModelError("feature_dim must be >= 1 and classes >= 2")
        h, w = self.image_hw
        for _ in self.conv_channels:
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ModelError(f"image {self.image_hw} too small for {len(self.conv_channels)} pooling stages")

    @property
    def flat_dim(self) -> int:
        h, w = self.image_hw
        for _ in self.conv_channels:
            h, w = h // 2, w // 2
        channels = self.conv_channels[-1] if self.conv_channels else self.in_channels
        return channels * h * w

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        c = self.in_channels
        k = self.kernel_size
        for i, o in enumerate(self.conv_channels):
            shapes[f"conv{i}_w"] = (o, c, k, k)
            shapes[f"conv{i}_b"] = (o,)
            c = o
        shapes["feat_w"] = (self.flat_dim, self.feature_dim)
        shapes["feat_b"] = (self.feature_dim,)
        shapes["head_w"] = (self.feature_dim, self.classes)
        shapes["head_b"] = (self.classes,)
        shapes["k_hat"] = ()
        return shapes


DEFAULT_SPEC = ModelSpec()


def _init_std(shape, kind: str) -> float:
    if len(shape) == 4:
        fan_in = shape[1] * shape[2] * shape[3]
        fan_out = shape[0] * shape[2] * shape[3]
    else:
        fan_in, fan_out = shape[0], shape[1]
    if kind == "he":
        return float(np.sqrt(2.0 / fan_in))
    return float(np.sqrt(2.0 / (fan_in + fan_out)))


def build_model(
    spec: ModelSpec,
    seed: int,
    dtype=np.float32,
    weight_init: str = "he",
) -> ParameterSet:
    """Seeded initialization; identical seeds give bitwise-identical weights.

    Weight matrices/kernels draw from a zero-mean normal scaled by the chosen
    fan rule, biases start at zero, and the gate parameter ``k_hat`` draws
    from a standard normal.
    """
    if weight_init not in WEIGHT_INITS:
        raise ModelError(f"unknown weight init '{weight_init}' (expected one of {WEIGHT_INITS})")
    rng = np.random.Generator(np.random.PCG64(seed))
    params = ParameterSet()
    for name, shape in spec.param_shapes().items():
        if name == "k_hat":
            value = rng.standard_normal()
        elif name.endswith("_b"):
            value = np.zeros(shape)
        else:
            value = rng.standard_normal(shape) * _init_std(shape, weight_init)
        params.add(name, Tensor(np.asarray(value, dtype=dtype), requires_grad=True))
    return params


def forward_features(params: ParameterSet, spec: ModelSpec, x: Tensor) -> Tensor:
    """f: image batch (b, c, h, w) -> feature matrix (b, feature_dim)."""
    pad = spec.kernel_size // 2
    out = x
    for i in range(len(spec.conv_channels)):
        w = params[f"conv{i}_w"]
        b = params[f"conv{i}_b"]
        out = ad.conv2d(out, w, stride=1, padding=pad)
        out = ad.add(out, b.reshape(1, -1, 1, 1))
        out = ad.relu(out)
        out = ad.maxpool2x2(out)
    flat = out.reshape(out.shape[0], -1)
    return ad.add(ad.matmul(flat, params["feat_w"]), params["feat_b"])


def forward_head(params: ParameterSet, phi: Tensor) -> Tensor:
    """g: feature matrix (b, feature_dim) -> class scores (b, classes)."""
    return ad.add(ad.matmul(phi, params["head_w"]), params["head_b"])


def forward_scores(params: ParameterSet, spec: ModelSpec, x: Tensor) -> Tensor:
    return forward_head(params, forward_features(params, spec, x))
