"""Dual sliced-Wasserstein discriminators.

A discriminator is an encoder ``E`` followed by ``M`` dual SWD blocks. Each
block rotates the embedding by an orthogonal matrix and applies a learned 1D
function per coordinate::

    T_i(x) = u_i * LeakyReLU(w_i * x + b_i)

The orthogonal matrices are kept on the Stiefel manifold by
:func:`stiefel_update`; they are never handed to Adam.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

__all__ = [
    "ManifoldDrift",
    "init_orthogonal",
    "orthogonality_error",
    "stiefel_update",
    "stiefel_step_",
    "swd_block_forward",
    "SwdBlocks",
    "SwdDiscriminator",
    "discriminator_forward",
]

DRIFT_TOL = 1e-5


class ManifoldDrift(ValueError):
    """Raised when a matrix handed to the Stiefel update is not orthogonal."""


def init_orthogonal(r: int, seed: int) -> np.ndarray:
    """Random r x r orthogonal matrix (Haar distributed), deterministic in ``seed``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    rng = np.random.default_rng(seed)
    q, rr = np.linalg.qr(rng.standard_normal((r, r)))
    return q * np.where(np.diag(rr) < 0, -1.0, 1.0)


def orthogonality_error(theta) -> float:
    """Frobenius norm of ``theta^T theta - I``."""
    if isinstance(theta, torch.Tensor):
        theta = theta.detach().cpu().double().numpy()
    theta = np.asarray(theta, dtype=np.float64)
    return float(np.linalg.norm(theta.T @ theta - np.eye(theta.shape[1])))


def _qr_retract(a: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(a)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


def stiefel_update(theta_mat, euclid_grad, lr: float) -> np.ndarray:
    """One Riemannian gradient-descent step on the orthogonal group.

    The Euclidean gradient is projected onto the tangent space at ``theta``,
    ``G - theta sym(theta^T G)``, a step of size ``lr`` is taken, and the
    result is pulled back onto the manifold with a sign-corrected QR.
    """
    theta = np.asarray(theta_mat, dtype=np.float64)
    grad = np.asarray(euclid_grad, dtype=np.float64)
    if theta.shape != grad.shape or theta.ndim != 2:
        raise ValueError(f"shape mismatch: {theta.shape} vs {grad.shape}")
    err = orthogonality_error(theta)
    if err > DRIFT_TOL:
        raise ManifoldDrift(f"||theta^T theta - I||_F = {err:.3e} exceeds {DRIFT_TOL}")
    if lr == 0 or not np.any(grad):
        return theta.copy()
    a = theta.T @ grad
    tangent = grad - theta @ (0.5 * (a + a.T))
    return _qr_retract(theta - lr * tangent)


@torch.no_grad()
def stiefel_step_(theta: torch.Tensor, lr: float) -> None:
    """In-place :func:`stiefel_update` of a stacked (M, r, r) parameter from its ``.grad``."""
    if theta.grad is None:
        return
    grads = theta.grad.detach().cpu().double().numpy()
    current = theta.detach().cpu().double().numpy()
    updated = np.stack([stiefel_update(t, g, lr) for t, g in zip(current, grads)])
    theta.copy_(torch.from_numpy(updated).to(theta.dtype))


def swd_block_forward(embd: torch.Tensor, theta: torch.Tensor, u: torch.Tensor,
                      w: torch.Tensor, b: torch.Tensor,
                      negative_slope: float = 0.2) -> torch.Tensor:
    """Score of a single dual SWD block: mean over i of T_i((embd @ theta)_i)."""
    r = theta.shape[0]
    if embd.shape[-1] != r:
        raise ValueError(f"embedding width {embd.shape[-1]} does not match block width {r}")
    orth = embd @ theta.to(embd.dtype)
    return (u * F.leaky_relu(w * orth + b, negative_slope)).mean(dim=-1)


class SwdBlocks(nn.Module):
    """``M`` dual SWD blocks sharing one latent width ``r``.

    ``theta`` is stored in float64 so that orthogonality holds to 1e-10
    regardless of the network precision; it is cast on the fly.
    """

    def __init__(self, r: int, num_blocks: int = 4, negative_slope: float = 0.2,
                 seed: int = 0):
        super().__init__()
        self.r = r
        self.num_blocks = num_blocks
        self.negative_slope = negative_slope
        thetas = np.stack([init_orthogonal(r, seed + m) for m in range(num_blocks)])
        self.theta = nn.Parameter(torch.from_numpy(thetas))
        self.u = nn.Parameter(torch.ones(num_blocks, r))
        self.w = nn.Parameter(torch.ones(num_blocks, r))
        self.b = nn.Parameter(torch.zeros(num_blocks, r))

    def project(self, embd: torch.Tensor) -> torch.Tensor:
        """(B, r) embeddings -> (M, B, r) rotated coordinates."""
        if embd.shape[-1] != self.r:
            raise ValueError(f"embedding width {embd.shape[-1]} does not match r={self.r}")
        return torch.einsum("br,mrs->mbs", embd, self.theta.to(embd.dtype))

    def per_block(self, embd: torch.Tensor) -> torch.Tensor:
        orth = self.project(embd)
        pre = self.w[:, None, :] * orth + self.b[:, None, :]
        return (self.u[:, None, :] * F.leaky_relu(pre, self.negative_slope)).mean(dim=-1)

    def forward(self, embd: torch.Tensor) -> torch.Tensor:
        return self.per_block(embd).mean(dim=0)

    def slopes(self, embd: torch.Tensor) -> torch.Tensor:
        """Per-coordinate derivatives dT_i/dx_i at the rotated embedding, shape (M, B, r)."""
        pre = self.w[:, None, :] * self.project(embd) + self.b[:, None, :]
        leak = torch.where(pre > 0, torch.ones_like(pre), torch.full_like(pre, self.negative_slope))
        return self.u[:, None, :] * self.w[:, None, :] * leak

    def euclidean_parameters(self):
        """Parameters trained by Adam (everything except ``theta``)."""
        return [self.u, self.w, self.b]


class SwdDiscriminator(nn.Module):
    """``D = mean_m S_m o E``: encoder followed by dual SWD blocks."""

    def __init__(self, encoder: nn.Module, r: int, num_blocks: int = 4,
                 negative_slope: float = 0.2, seed: int = 0):
        super().__init__()
        self.encoder = encoder
        self.blocks = SwdBlocks(r, num_blocks, negative_slope, seed)

    @property
    def r(self) -> int:
        return self.blocks.r

    def embed(self, x: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        if cond is not None:
            if cond.shape[0] != x.shape[0] or cond.shape[2:] != x.shape[2:]:
                raise ValueError(f"condition shape {tuple(cond.shape)} incompatible with {tuple(x.shape)}")
            x = torch.cat([x, cond], dim=1)
        return self.encoder(x)

    def forward(self, x: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        return self.blocks(self.embed(x, cond))

    def adam_parameters(self):
        return list(self.encoder.parameters()) + self.blocks.euclidean_parameters()

    def stiefel_parameters(self):
        return [self.blocks.theta]


def discriminator_forward(x: torch.Tensor, disc: SwdDiscriminator,
                          cond: torch.Tensor | None = None) -> torch.Tensor:
    """Per-sample critic score: average of the block scores of ``E(x)`` (or ``E(x|cond)``)."""
    return disc(x, cond)
