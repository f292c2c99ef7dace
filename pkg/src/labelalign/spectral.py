"""Thin SVD, sigmoid soft-gating of the spectrum, and differentiable filters.

A feature matrix ``phi`` (n x d) factors as ``U diag(sigma) V^T`` with
``r = min(n, d)``.  A learnable scalar ``k_hat`` is squashed to
``k = sigmoid(k_hat) in (0, 1)`` and turned into per-index gate weights

    w_i = 1 / (1 + exp(beta * (i - k*r)))        for i = 1..r

so ``w`` decays from ~1 to ~0 around the real-valued cut index ``k*r``.
The *top* filter reconstructs ``U diag(w * sigma) V^T`` (keeps the leading
spectrum), the *bottom* filter uses ``(1 - w) * sigma`` (keeps the trailing
spectrum); the two always sum back to the reconstruction of ``phi``.

Gradients come in two flavours:

* ``projected`` (default): the factors are treated as constants and the
  gradient w.r.t. ``phi`` flows through the algebraically equal projection
  ``phi @ V diag(w) V^T``; the gradient w.r.t. ``k_hat`` flows through ``w``.
* ``full``: additionally differentiates through the factors themselves with
  the standard SVD differential; cross-singular-value denominators
  ``sigma_j^2 - sigma_i^2`` are clamped in magnitude to avoid blowups on
  (near-)repeated singular values, and a warning is logged when the clamp
  engages.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _accumulate, _make, mul, scale, sigmoid, sub

logger = logging.getLogger(__name__)

GRADIENT_MODES = ("projected", "full")
FILTER_SIDES = ("top", "bottom")

# relative clamp for 1/(sigma_j^2 - sigma_i^2) in full mode
_DENOM_CLAMP_REL = 1e-6


class SpectralError(Exception):
    pass


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD triple: ``u`` (n x r), ``sigma`` (r,) nonincreasing, ``v`` (d x r)."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return self.sigma.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def thin_svd(phi) -> SvdFactors:
    """Deterministic thin SVD of a real matrix.

    The sign ambiguity is fixed by making the largest-magnitude entry of each
    column of ``v`` nonnegative (first index wins ties), so identical inputs
    always yield identical factors.
    """
    a = phi.data if isinstance(phi, Tensor) else np.asarray(phi)
    if a.ndim != 2:
        raise SpectralError(f"thin_svd expects a matrix, got shape {a.shape}")
    n, d = a.shape
    if n < 1 or d < 1:
        raise SpectralError(f"thin_svd needs nonempty extents, got {a.shape}")
    if not np.isfinite(a).all():
        raise SpectralError("thin_svd input contains non-finite entries")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(
            "SVD failed to converge: shape "
            f"{a.shape}, frobenius norm {np.linalg.norm(a):.6g}, "
            f"max |entry| {np.abs(a).max():.6g}"
        ) from exc
    v = vt.T
    anchor = np.abs(v).argmax(axis=0)
    flip = v[anchor, np.arange(v.shape[1])] < 0
    v[:, flip] *= -1
    u[:, flip] *= -1
    return SvdFactors(u=u, sigma=s, v=v)


# ---------------------------------------------------------------------------
# gate
# ---------------------------------------------------------------------------


def gate_weights(k_hat: Tensor, beta: float, r: int) -> Tensor:
    """Soft gate weights over spectrum indices 1..r, differentiable in k_hat."""
    if r < 1:
        raise SpectralError(f"gate needs r >= 1, got {r}")
    if beta <= 0:
        raise SpectralError(f"gate sharpness must be positive, got {beta}")
    idx = Tensor(np.arange(1, r + 1, dtype=k_hat.data.dtype))
    k = sigmoid(k_hat)
    # w = sigmoid(beta * (k*r - i)) == 1 / (1 + exp(beta * (i - k*r)))
    return sigmoid(scale(sub(scale(k, float(r)), idx), float(beta)))


@dataclass
class AlignmentGate:
    """Learnable pre-sigmoid cut parameter plus fixed sharpness.

    ``k_hat`` is unconstrained; ``k = sigmoid(k_hat)`` stays in (0, 1) and
    places the half-open gate at real-valued index ``k * r``.
    """

    k_hat: Tensor
    beta: float

    def __post_init__(self):
        if self.beta <= 0:
            raise SpectralError(f"gate sharpness must be positive, got {self.beta}")

    def k(self) -> float:
        return float(_sigmoid_scalar(float(self.k_hat.data)))

    def weights(self, r: int) -> Tensor:
        return gate_weights(self.k_hat, self.beta, r)


def _sigmoid_scalar(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def ones_gate_weights(r: int, dtype=np.float64) -> Tensor:
    """Constant all-ones gate (the saturated gate used by baselines/tests)."""
    return Tensor(np.ones(r, dtype=dtype))


# ---------------------------------------------------------------------------
# SVD differential (full mode)
# ---------------------------------------------------------------------------


def _svd_backward(u, s, v, du, ds, dv):
    """Gradient w.r.t. the decomposed matrix given factor gradients.

    Standard thin-SVD differential with clamped cross terms.  ``du``/``dv``
    may be None when the loss does not touch that factor.
    """
    n, r = u.shape
    d = v.shape[0]
    s2 = s * s
    smax2 = s2[0] if s2.size and s2[0] > 0 else 1.0
    diff = s2[None, :] - s2[:, None]
    tau = _DENOM_CLAMP_REL * smax2
    small = (np.abs(diff) < tau) & ~np.eye(r, dtype=bool)
    if small.any():
        logger.warning(
            "degenerate spectrum: %d cross-term denominators clamped (min gap %.3g)",
            int(small.sum()),
            float(np.abs(diff[~np.eye(r, dtype=bool)]).min()) if r > 1 else 0.0,
        )
    denom = np.where(np.abs(diff) < tau, np.where(diff < 0, -tau, tau), diff)
    f = 1.0 / denom
    np.fill_diagonal(f, 0.0)

    bracket = np.zeros((r, r), dtype=u.dtype)
    if ds is not None:
        bracket[np.diag_indices(r)] = ds
    s_floor = np.maximum(s, 1e-12 * np.sqrt(smax2))
    extra = None
    if du is not None:
        utdu = u.T @ du
        bracket += (f * (utdu - utdu.T)) * s[None, :]
        if n > r:
            extra = (du - u @ utdu) / s_floor[None, :] @ v.T
    if dv is not None:
        vtdv = v.T @ dv
        bracket += s[:, None] * (f * (vtdv - vtdv.T))
        if d > r:
            term = (u / s_floor[None, :]) @ (dv - v @ vtdv).T
            extra = term if extra is None else extra + term
    da = u @ bracket @ v.T
    if extra is not None:
        da = da + extra
    return da


# ---------------------------------------------------------------------------
# the filter itself
# ---------------------------------------------------------------------------


def _filter_node(phi: Tensor, factors: SvdFactors, w: Tensor, side: str, mode: str) -> Tensor:
    u, s, v = factors.u, factors.sigma, factors.v
    w_applied = w.data if side == "top" else 1.0 - w.data
    s_used = w_applied * s
    out_data = (u * s_used) @ v.T
    w_sign = 1.0 if side == "top" else -1.0

    def backward(out):
        g = out.grad
        m = u.T @ g @ v  # r x r, shared by the w-gradient and full mode
        if w.requires_grad:
            _accumulate(w, w_sign * s * np.diagonal(m))
        if phi.requires_grad:
            if mode == "projected":
                proj = (v * w_applied) @ v.T
                _accumulate(phi, g @ proj)
            else:
                du = g @ (v * s_used)
                dv = g.T @ (u * s_used)
                ds = w_applied * np.diagonal(m)
                _accumulate(phi, _svd_backward(u, s, v, du, ds, dv))

    return _make(out_data, (phi, w), backward)


def spectral_filter(phi: Tensor, gate, side: str, mode: str = "projected") -> Tensor:
    """Gate-weighted spectral reconstruction of ``phi``.

    ``side='top'`` keeps the leading spectrum (weights ``w``), ``'bottom'``
    the trailing one (weights ``1 - w``); the two sides sum to the
    reconstruction of ``phi``.  ``gate`` is an :class:`AlignmentGate` or a
    precomputed weight tensor of length ``min(phi.shape)``.
    """
    if side not in FILTER_SIDES:
        raise SpectralError(f"unknown filter side '{side}'")
    if mode not in GRADIENT_MODES:
        raise SpectralError(f"unknown gradient mode '{mode}'")
    factors = thin_svd(phi)
    r = factors.rank
    if isinstance(gate, AlignmentGate):
        w = gate.weights(r)
    else:
        w = gate
        if w.data.shape != (r,):
            raise SpectralError(
                f"gate weights shape {w.data.shape} does not match spectrum length {r}"
            )
    return _filter_node(phi, factors, w, side, mode)
