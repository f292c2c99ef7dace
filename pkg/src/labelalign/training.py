"""The adaptation objective and the training loop.

Per step: sample a labeled source batch and an unlabeled target batch, push
both through the feature extractor, split each feature matrix spectrally with
a shared learnable gate, then minimize

    classification(g(top(source))) + lam * ||g(bottom(target))||^2 + gamma * k^2

where ``k = sigmoid(k_hat)`` is the normalized gate position.  The bottom
filter keeps only the trailing spectrum of the target features, so driving
``g`` toward zero output there suppresses dependence on directions carrying
no label variation.

Modes:

* ``dla``        the full objective above.
* ``no_adapt``   source-only baseline: the gate is saturated (all-ones, i.e.
  the filter reduces to the identity and is skipped) and the alignment and
  rank terms are zero.
* ``partial_la`` the alignment term is dropped but the gated top filter and
  the rank regularizer stay: a supervised regularizer, no target data needed.

Evaluation always bypasses the filter: a per-batch SVD is ill-defined for
single-example inference, so accuracy is measured on raw features.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import BatchSampler, ImageDataset, next_batch
from .model import DEFAULT_SPEC, ModelSpec, WEIGHT_INITS, build_model, forward_features, forward_head
from .optim import ParameterSet, make_optimizer
from .spectral import GRADIENT_MODES, AlignmentGate, ones_gate_weights, spectral_filter

MODES = ("dla", "no_adapt", "partial_la")
ALIGNMENT_TARGETS = ("probabilities", "logits")
CLASSIFICATION_LOSSES = ("cross_entropy", "squared_error")
GATES = ("learned", "ones")
OPTIMIZERS = ("adam", "sgd")
DTYPES = {"float32": np.float32, "float64": np.float64}


class ConfigError(Exception):
    pass


class TrainingAborted(Exception):
    def __init__(self, step: int, parts: "DlaLossParts"):
        super().__init__(
            f"non-finite loss at step {step}: cls={parts.cls} align={parts.align} "
            f"k_reg={parts.k_reg} k={parts.k}"
        )
        self.step = step
        self.parts = parts


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-3
    gamma: float = 1e-3
    beta: float = 5.0
    alpha: float = 1e-3
    batch_size: int = 128
    steps: int = 2100
    seed: int = 0
    mode: str = "dla"
    gradient_mode: str = "projected"
    alignment_target: str = "probabilities"
    classification_loss: str = "cross_entropy"
    optimizer: str = "adam"
    weight_init: str = "he"
    dtype: str = "float32"
    gate: str = "learned"
    val_every: int = 50
    timing: bool = True

    def validate(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.val_every < 0:
            raise ConfigError(f"val_every must be >= 0, got {self.val_every}")
        for name, value, allowed in (
            ("mode", self.mode, MODES),
            ("gradient_mode", self.gradient_mode, GRADIENT_MODES),
            ("alignment_target", self.alignment_target, ALIGNMENT_TARGETS),
            ("classification_loss", self.classification_loss, CLASSIFICATION_LOSSES),
            ("optimizer", self.optimizer, OPTIMIZERS),
            ("weight_init", self.weight_init, WEIGHT_INITS),
            ("gate", self.gate, GATES),
        ):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got '{value}'")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {tuple(DTYPES)}, got '{self.dtype}'")
        return self

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]


@dataclass
class DlaLossParts:
    """Raw (unweighted) loss terms; total applies the lam/gamma weights."""

    cls: float
    align: float
    k_reg: float
    total: float
    k: float


@dataclass
class MetricsRecord:
    step: int
    parts: DlaLossParts
    src_acc: float
    val_acc: float | None = None
    wall_ms: float | None = None


@dataclass
class TrainData:
    source: ImageDataset
    target: ImageDataset | None = None
    val: ImageDataset | None = None
    test: ImageDataset | None = None


@dataclass
class TrainResult:
    params: ParameterSet
    spec: ModelSpec
    records: list[MetricsRecord] = field(default_factory=list)


def _classification(logits, labels, cfg):
    """(loss tensor, detached probabilities)."""
    if cfg.classification_loss == "cross_entropy":
        return ad.softmax_cross_entropy(logits, labels)
    probs = ad.softmax(logits)
    onehot = np.zeros(probs.shape, dtype=probs.data.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ad.squared_error(probs, onehot), probs.detach()


def dla_loss(
    params: ParameterSet,
    spec: ModelSpec,
    source_images: np.ndarray,
    source_labels: np.ndarray,
    target_images: np.ndarray | None,
    cfg: TrainConfig,
) -> tuple[Tensor, DlaLossParts, np.ndarray]:
    """One objective evaluation; returns the total loss tensor, the raw loss
    parts, and the detached source probabilities (for batch accuracy)."""
    dtype = cfg.np_dtype
    x = Tensor(np.asarray(source_images, dtype=dtype))
    if len(source_images) == 0:
        raise ConfigError("source batch is empty")
    if cfg.mode == "dla" and target_images is None:
        raise ConfigError("dla mode needs a target batch")

    k_value = float(1.0 / (1.0 + np.exp(-float(params["k_hat"].data))))
    phi = forward_features(params, spec, x)

    if cfg.mode == "no_adapt":
        logits = forward_head(params, phi)
        cls_t, probs = _classification(logits, source_labels, cfg)
        total_t = cls_t
        parts = DlaLossParts(
            cls=float(cls_t.data), align=0.0, k_reg=0.0, total=float(total_t.data), k=k_value
        )
        return total_t, parts, probs.data

    if cfg.gate == "learned":
        gate = AlignmentGate(k_hat=params["k_hat"], beta=cfg.beta)
    else:
        gate = None  # all-ones weights, constant

    def gated(features, side):
        if gate is not None:
            return spectral_filter(features, gate, side, cfg.gradient_mode)
        r = min(features.shape)
        return spectral_filter(
            features, ones_gate_weights(r, dtype=dtype), side, cfg.gradient_mode
        )

    phi_top = gated(phi, "top")
    logits = forward_head(params, phi_top)
    cls_t, probs = _classification(logits, source_labels, cfg)

    align_t = None
    if cfg.mode == "dla" and target_images is not None:
        x_t = Tensor(np.asarray(target_images, dtype=dtype))
        if len(target_images) == 0:
            raise ConfigError("target batch is empty")
        phi_t = forward_features(params, spec, x_t)
        if phi_t.shape[1] != phi.shape[1]:
            raise ConfigError(
                f"feature width mismatch: source {phi.shape[1]} vs target {phi_t.shape[1]}"
            )
        phi_bottom = gated(phi_t, "bottom")
        out_t = forward_head(params, phi_bottom)
        if cfg.alignment_target == "probabilities":
            out_t = ad.softmax(out_t)
        align_t = ad.mean_squared_norm(out_t)

    k_t = ad.sigmoid(params["k_hat"])
    kreg_t = ad.mul(k_t, k_t)

    total_t = cls_t
    if align_t is not None:
        total_t = ad.add(total_t, ad.scale(align_t, cfg.lam))
    total_t = ad.add(total_t, ad.scale(kreg_t, cfg.gamma))

    parts = DlaLossParts(
        cls=float(cls_t.data),
        align=0.0 if align_t is None else float(align_t.data),
        k_reg=float(kreg_t.data),
        total=float(total_t.data),
        k=k_value,
    )
    return total_t, parts, probs.data


def trainable_names(params: ParameterSet, cfg: TrainConfig) -> list[str]:
    """All weights, plus the gate parameter whenever gradients can reach it."""
    names = [n for n in params.names() if n != "k_hat"]
    if cfg.mode != "no_adapt" and (cfg.gate == "learned" or cfg.gamma > 0):
        names.append("k_hat")
    return names


def train(
    cfg: TrainConfig,
    data: TrainData,
    spec: ModelSpec = DEFAULT_SPEC,
    on_step=None,
) -> TrainResult:
    """Run the configured number of steps and record metrics for each.

    Aborts with :class:`TrainingAborted` on a non-finite loss rather than
    skipping the step; gradient-mode blowups should surface, not hide.
    """
    cfg.validate()
    if cfg.mode == "dla" and data.target is None:
        raise ConfigError("dla mode needs an unlabeled target dataset")

    seeds = np.random.SeedSequence(cfg.seed).generate_state(4)
    params = build_model(spec, int(seeds[0]), dtype=cfg.np_dtype, weight_init=cfg.weight_init)
    optimizer = make_optimizer(cfg.optimizer, cfg.alpha)
    trainable = params.subset(trainable_names(params, cfg))

    src_sampler = BatchSampler(len(data.source), cfg.batch_size, int(seeds[1]))
    tgt_sampler = None
    use_target = cfg.mode == "dla" and data.target is not None
    if use_target:
        tgt_sampler = BatchSampler(len(data.target), cfg.batch_size, int(seeds[2]))

    records: list[MetricsRecord] = []
    for step in range(1, cfg.steps + 1):
        t0 = time.perf_counter() if cfg.timing else 0.0
        batch = next_batch(
            src_sampler, data.source, tgt_sampler, data.target if use_target else None
        )
        total_t, parts, probs = dla_loss(
            params, spec, batch.source_images, batch.source_labels, batch.target_images, cfg
        )
        if not np.isfinite(parts.total):
            raise TrainingAborted(step, parts)
        ad.backward(total_t)
        optimizer.step(trainable)
        src_acc = float((probs.argmax(axis=1) == batch.source_labels).mean())
        wall_ms = (time.perf_counter() - t0) * 1000.0 if cfg.timing else None

        val_acc = None
        if data.val is not None and cfg.val_every and step % cfg.val_every == 0:
            val_acc = evaluate(params, spec, data.val)

        record = MetricsRecord(
            step=step, parts=parts, src_acc=src_acc, val_acc=val_acc, wall_ms=wall_ms
        )
        records.append(record)
        if on_step is not None:
            on_step(record, params)
    return TrainResult(params=params, spec=spec, records=records)


def evaluate(
    params: ParameterSet,
    spec: ModelSpec,
    dataset: ImageDataset,
    batch_size: int = 256,
) -> float:
    """Accuracy of argmax(g(f(x))) on a labeled dataset; no spectral filter,
    so the result is invariant to the gate parameter."""
    if dataset.labels is None:
        raise ConfigError("evaluation needs a labeled dataset")
    if len(dataset) == 0:
        raise ConfigError("evaluation dataset is empty")
    dtype = params["feat_w"].data.dtype
    hits = 0
    for start in range(0, len(dataset), batch_size):
        stop = min(start + batch_size, len(dataset))
        x = Tensor(np.asarray(dataset.images[start:stop], dtype=dtype))
        scores = forward_head(params, forward_features(params, spec, x))
        hits += int((scores.data.argmax(axis=1) == dataset.labels[start:stop]).sum())
    return hits / len(dataset)
