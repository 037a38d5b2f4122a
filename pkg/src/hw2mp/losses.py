"""Scalar objectives of the three-player game and the CTC recognition loss.

Sign conventions. ``word_disc_loss`` and ``char_disc_loss`` return the
objectives exactly as written for the critics::

    L = E[D(x)] - E[D(x_tilde)] + lambda1 * E||grad D(x_hat)||^2
        + lambda2 * E||grad T(x_bar) - 1||^2

The critics are trained by *minimising* ``critic_objective`` (adversarial
difference negated, penalties kept positive) so the penalties act as
regularisers. The generator minimises :func:`total_generator_loss`.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import torch
from torch import autograd

from .config import HyperParams
from .swd import SwdBlocks, SwdDiscriminator

__all__ = [
    "LabelTooLong",
    "CriticTerms",
    "interpolate",
    "gradient_penalty_sq",
    "lipschitz_penalty_T",
    "word_disc_terms",
    "word_disc_loss",
    "char_disc_terms",
    "char_disc_loss",
    "critic_objective",
    "reconstruction_l1",
    "total_generator_loss",
    "ctc_loss",
    "ctc_feasible",
]

NEG_INF = -1e30


class LabelTooLong(ValueError):
    """The label cannot be aligned to the available number of time steps."""


class CriticTerms(NamedTuple):
    adversarial: torch.Tensor   # E[D(real)] - E[D(fake)]
    gradient_penalty: torch.Tensor
    lipschitz_penalty: torch.Tensor


def interpolate(x: torch.Tensor, x_tilde: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Per-sample convex combination ``eps * x + (1 - eps) * x_tilde``."""
    if x.shape != x_tilde.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_tilde.shape)}")
    eps = torch.as_tensor(eps, dtype=x.dtype).reshape(-1, *([1] * (x.dim() - 1)))
    if eps.shape[0] != x.shape[0]:
        raise ValueError(f"{eps.shape[0]} mixing weights for a batch of {x.shape[0]}")
    return eps * x + (1 - eps) * x_tilde


def gradient_penalty_sq(D, x_hat: torch.Tensor, cond: torch.Tensor | None = None,
                        create_graph: bool = True) -> torch.Tensor:
    """Batch mean of ``||grad_x D(x)||_2^2`` at ``x_hat``.

    ``D`` is any callable returning one score per sample; when ``cond`` is
    given it is called as ``D(x, cond)`` and the gradient is taken with
    respect to ``x`` only.
    """
    x_hat = x_hat.detach().requires_grad_(True)
    scores = D(x_hat) if cond is None else D(x_hat, cond)
    (grad,) = autograd.grad(scores.sum(), x_hat, create_graph=create_graph, allow_unused=True)
    if grad is None:
        return scores.new_zeros(())
    return grad.flatten(1).pow(2).sum(dim=1).mean()


def lipschitz_penalty_T(blocks: SwdBlocks, x_bar_embd: torch.Tensor) -> torch.Tensor:
    """Batch mean of ``||T'(x_bar) - 1||_2^2`` over the per-coordinate slopes of every block.

    ``x_bar_embd`` holds encoder outputs; each block rotates them by its
    ``theta`` before the slopes ``u_i w_i LeakyReLU'(w_i x_i + b_i)`` are
    evaluated. Blocks are averaged.
    """
    slopes = blocks.slopes(x_bar_embd)
    return (slopes - 1).pow(2).sum(dim=-1).mean()


def critic_objective(terms: CriticTerms, lambda1: float, lambda2: float) -> torch.Tensor:
    """Quantity minimised by a critic update."""
    return -terms.adversarial + lambda1 * terms.gradient_penalty + lambda2 * terms.lipschitz_penalty


def _combine(terms: CriticTerms, lambda1: float, lambda2: float) -> torch.Tensor:
    return terms.adversarial + lambda1 * terms.gradient_penalty + lambda2 * terms.lipschitz_penalty


def word_disc_terms(x, x_tilde, y, x_hat, x_bar, D_w: SwdDiscriminator) -> CriticTerms:
    adv = D_w(x, y).mean() - D_w(x_tilde, y).mean()
    gp = gradient_penalty_sq(D_w, x_hat, y)
    lp = lipschitz_penalty_T(D_w.blocks, D_w.embed(x_bar, y))
    return CriticTerms(adv, gp, lp)


def word_disc_loss(x, x_tilde, y, x_hat, x_bar, D_w: SwdDiscriminator, hp: HyperParams) -> torch.Tensor:
    """Word-level objective, conditioned on the handwritten images ``y``."""
    return _combine(word_disc_terms(x, x_tilde, y, x_hat, x_bar, D_w), hp.lambda1_w, hp.lambda2_w)


def char_disc_terms(char_real, char_gen, x_hat_c, x_bar_c, D_c: SwdDiscriminator) -> CriticTerms:
    adv = D_c(char_real).mean() - D_c(char_gen).mean()
    gp = gradient_penalty_sq(D_c, x_hat_c)
    lp = lipschitz_penalty_T(D_c.blocks, D_c.embed(x_bar_c))
    return CriticTerms(adv, gp, lp)


def char_disc_loss(char_real, char_gen, x_hat_c, x_bar_c, D_c: SwdDiscriminator,
                   hp: HyperParams) -> torch.Tensor:
    """Character-level objective; every expectation runs over all character slices of the batch."""
    return _combine(char_disc_terms(char_real, char_gen, x_hat_c, x_bar_c, D_c), hp.lambda1_c, hp.lambda2_c)


def reconstruction_l1(x: torch.Tensor, x_tilde: torch.Tensor) -> torch.Tensor:
    """Mean absolute pixel error."""
    return (x_tilde - x).abs().mean()


def total_generator_loss(L_w_term: torch.Tensor, L_c_term: torch.Tensor, x: torch.Tensor,
                         x_tilde: torch.Tensor, hp: HyperParams) -> torch.Tensor:
    """``L_w + lambda_char * L_c + lambda_recons * E|x_tilde - x|``.

    The adversarial terms are the critics' differences ``E[D(real)] - E[D(fake)]``
    evaluated on the generator output; penalties do not enter.
    """
    return L_w_term + hp.lambda_char * L_c_term + hp.lambda_recons * reconstruction_l1(x, x_tilde)


# ---------------------------------------------------------------------------
# CTC
# ---------------------------------------------------------------------------

def ctc_feasible(label: Sequence[int], T: int) -> bool:
    """True if some alignment of length ``T`` collapses to ``label``."""
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats <= T


def ctc_loss(log_probs: torch.Tensor, labels, blank: int | None = None,
             reduction: str = "none") -> torch.Tensor:
    """Negative log-likelihood of ``labels`` under per-step class log-probabilities.

    ``log_probs`` is (T, C) for one sequence or (B, T, C) for a batch;
    ``labels`` is a sequence of class indices, or a list of them for a batch.
    The blank defaults to the last class. Computed with the standard forward
    recursion over the blank-interleaved label in log space.
    """
    single = log_probs.dim() == 2
    if single:
        log_probs = log_probs.unsqueeze(0)
        labels = [labels]
    B, T, C = log_probs.shape
    if len(labels) != B:
        raise ValueError(f"{len(labels)} labels for a batch of {B}")
    if blank is None:
        blank = C - 1
    labels = [list(map(int, lab)) for lab in labels]
    for lab in labels:
        if any(c < 0 or c >= C or c == blank for c in lab):
            raise ValueError(f"label {lab} contains an invalid class index")
        if not ctc_feasible(lab, T):
            raise LabelTooLong(f"label of length {len(lab)} cannot be aligned in {T} steps")

    S = 2 * max((len(lab) for lab in labels), default=0) + 1
    ext = torch.full((B, S), blank, dtype=torch.long)
    skip = torch.zeros((B, S), dtype=torch.bool)
    lengths = torch.tensor([2 * len(lab) + 1 for lab in labels])
    for b, lab in enumerate(labels):
        for k, c in enumerate(lab):
            ext[b, 2 * k + 1] = c
            if k > 0 and lab[k - 1] != c:
                skip[b, 2 * k + 1] = True
    valid = torch.arange(S)[None, :] < lengths[:, None]

    neg = log_probs.new_full((), NEG_INF)
    emit = torch.gather(log_probs, 2, ext[:, None, :].expand(B, T, S))   # (B, T, S)
    alpha = torch.full((B, S), NEG_INF, dtype=log_probs.dtype)
    alpha = torch.where(torch.arange(S)[None, :] < 2, emit[:, 0], alpha)
    alpha = torch.where(valid, alpha, neg)
    pad = torch.full((B, 1), NEG_INF, dtype=log_probs.dtype)
    for t in range(1, T):
        prev1 = torch.cat([pad, alpha[:, :-1]], dim=1)
        prev2 = torch.cat([pad, pad, alpha[:, :-2]], dim=1)[:, :S]
        prev2 = torch.where(skip, prev2, neg)
        alpha = torch.logsumexp(torch.stack([alpha, prev1, prev2]), dim=0) + emit[:, t]
        alpha = torch.where(valid, alpha, neg)
    last = alpha.gather(1, (lengths - 1)[:, None]).squeeze(1)
    second = alpha.gather(1, (lengths - 2).clamp(min=0)[:, None]).squeeze(1)
    second = torch.where(lengths > 1, second, neg)
    loss = -torch.logaddexp(last, second)
    if reduction == "mean":
        loss = loss.mean()
    elif reduction == "sum":
        loss = loss.sum()
    elif reduction != "none":
        raise ValueError(f"unknown reduction {reduction!r}")
    return loss[0] if single and reduction == "none" else loss
