"""Training losses: forward L2, kernel MMD terms, max-likelihood, boundary.

The squared maximum mean discrepancy uses an inverse-multiquadric kernel
summed over a fixed set of squared bandwidths and the biased V-statistic
(non-negative, so it can be used directly as a loss).  It is implemented
as one fused autodiff primitive: composing it from elementwise graph ops
costs hundreds of milliseconds per step on 1024-point batches, which the
fused forward/backward avoids while remaining finite-difference checkable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .gradcore import Var


@dataclass(frozen=True)
class KernelSpec:
    """Inverse-multiquadric kernel sum(c / (c + ||u-v||^2)) over squared scales c."""

    family: str = "inverse_multiquadric"
    bandwidths: tuple = (0.05, 0.2, 0.9)

    def __post_init__(self):
        if self.family != "inverse_multiquadric":
            raise ValueError(f"unsupported kernel family '{self.family}'")
        if len(self.bandwidths) < 1 or any(c <= 0 for c in self.bandwidths):
            raise ValueError("kernel needs at least one positive squared bandwidth")


DEFAULT_KERNEL = KernelSpec()


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (-2.0) * (a @ b.T)
    d += (a * a).sum(axis=1)[:, None]
    d += (b * b).sum(axis=1)[None, :]
    return d


def _kernel_mean(d: np.ndarray, bandwidths, buf: np.ndarray) -> float:
    total = 0.0
    for c in bandwidths:
        np.add(d, c, out=buf)
        np.divide(c, buf, out=buf)
        total += float(buf.mean())
    return total


def _kernel_weight(d: np.ndarray, bandwidths) -> np.ndarray:
    """sum_c c / (c + d)^2, the negated derivative of the kernel w.r.t. d."""
    p = np.zeros_like(d)
    buf = np.empty_like(d)
    for c in bandwidths:
        np.add(d, c, out=buf)
        np.multiply(buf, buf, out=buf)
        np.divide(c, buf, out=buf)
        p += buf
    return p


def mmd(a, b, kernel: KernelSpec = DEFAULT_KERNEL) -> Var:
    """Biased squared MMD between two sample batches (clipped at zero)."""
    av, bv = gc.as_var(a), gc.as_var(b)
    xa, xb = av.value, bv.value
    if xa.ndim != 2 or xb.ndim != 2 or xa.shape[1] != xb.shape[1]:
        raise ValueError(f"mmd expects aligned 2-D batches, got {xa.shape} and {xb.shape}")
    n, m = xa.shape[0], xb.shape[0]
    if n < 2 or m < 2:
        raise ValueError("mmd needs at least two points per batch")

    d_aa = _sq_dists(xa, xa)
    d_bb = _sq_dists(xb, xb)
    d_ab = _sq_dists(xa, xb)
    value = (
        _kernel_mean(d_aa, kernel.bandwidths, np.empty_like(d_aa))
        + _kernel_mean(d_bb, kernel.bandwidths, np.empty_like(d_bb))
        - 2.0 * _kernel_mean(d_ab, kernel.bandwidths, np.empty_like(d_ab))
    )

    def vjp_a(g):
        p_aa = _kernel_weight(d_aa, kernel.bandwidths)
        p_ab = _kernel_weight(d_ab, kernel.bandwidths)
        term_aa = p_aa.sum(axis=1)[:, None] * xa - p_aa @ xa
        term_ab = p_ab.sum(axis=1)[:, None] * xa - p_ab @ xb
        return g * (4.0 / (n * m) * term_ab - 4.0 / (n * n) * term_aa)

    def vjp_b(g):
        p_bb = _kernel_weight(d_bb, kernel.bandwidths)
        p_ab = _kernel_weight(d_ab, kernel.bandwidths)
        term_bb = p_bb.sum(axis=1)[:, None] * xb - p_bb @ xb
        term_ba = p_ab.sum(axis=0)[:, None] * xb - p_ab.T @ xa
        return g * (4.0 / (n * m) * term_ba - 4.0 / (m * m) * term_bb)

    raw = Var.from_op(np.float64(value), (av, bv), (vjp_a, vjp_b), "imq_mmd")
    return gc.relu(raw)


def l2_forward_loss(pred, truth) -> Var:
    """Mean over the batch of the squared l2 residual summed over output dims."""
    pv, tv = gc.as_var(pred), gc.as_var(truth)
    if pv.value.shape != tv.value.shape:
        raise ValueError(f"shape mismatch: {pv.value.shape} vs {tv.value.shape}")
    res = pv - tv
    if pv.value.ndim == 1:
        return gc.square_norm(res)
    return gc.mean(gc.square_norm(res, axis=1))


def latent_loss(joint_yz, y_marginal: np.ndarray, z_prior: np.ndarray,
                kernel: KernelSpec = DEFAULT_KERNEL) -> Var:
    """MMD between network outputs [y-hat, z-hat] and an independent product sample.

    The product batch pairs (already shuffled) true observations with fresh
    standard-normal latents.
    """
    product = np.concatenate([np.asarray(y_marginal, dtype=np.float64),
                              np.asarray(z_prior, dtype=np.float64)], axis=1)
    return mmd(joint_yz, product, kernel)


def x_prior_loss(x_backward, x_prior, kernel: KernelSpec = DEFAULT_KERNEL) -> Var:
    """MMD between backward predictions and samples of the design-space prior."""
    return mmd(x_backward, x_prior, kernel)


def ml_loss(net, x: np.ndarray, y: np.ndarray, sigma: float = 0.1, phi: Var | None = None) -> Var:
    """Gaussian max-likelihood objective for the bijection.

    Mean over the batch of 0.5 * (||y-hat - y||^2 / sigma^2 + ||z-hat||^2)
    minus the log-determinant of the forward Jacobian.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    phi = Var(net.params) if phi is None else phi
    out, logdet = net.forward_graph(Var(x), phi, with_logdet=True)
    y_hat, z_hat = gc.split(out, net.config.dim_y)
    per_point = (
        gc.square_norm(y_hat - y, axis=1) * (0.5 / sigma**2)
        + gc.square_norm(z_hat, axis=1) * 0.5
        - logdet
    )
    return gc.mean(per_point)


def _abs(v: Var) -> Var:
    return gc.relu(v) + gc.relu(-v)


def boundary_loss(x, center: np.ndarray, box_range: np.ndarray) -> Var:
    """Hinge penalty for leaving the box [center - range/2, center + range/2].

    Zero inside the box (including its boundary); per-point sum over
    coordinates of the overshoot distance.  A 2-D input yields one value
    per row.
    """
    center = np.asarray(center, dtype=np.float64)
    box_range = np.asarray(box_range, dtype=np.float64)
    if np.any(box_range <= 0):
        raise ValueError("box range must be positive elementwise")
    xv = gc.as_var(x)
    overshoot = gc.relu(_abs(xv - center) - box_range / 2.0)
    return gc.vsum(overshoot, axis=-1)


def total_loss(weights, loss_x, loss_y, loss_z):
    """Weighted sum of the three training losses."""
    wx, wy, wz = weights
    if min(wx, wy, wz) < 0:
        raise ValueError("loss weights must be non-negative")
    return wx * loss_x + wy * loss_y + wz * loss_z
