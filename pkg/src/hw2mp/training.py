"""Adversarial training of the translator and CTC training of recognizers.

One :func:`train_step` runs ``n_critic`` word-critic updates, ``n_critic``
character-critic updates and a single generator update. Critic updates use
Adam for the encoder and the per-coordinate functions and a Riemannian step
for the orthogonal matrices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .config import HyperParams, RunConfig
from .data import ALPHABET, encode_label
from .losses import (char_disc_terms, critic_objective, ctc_loss, interpolate,
                     reconstruction_l1, total_generator_loss, word_disc_terms, _combine)
from .metrics import ctc_decode
from .networks import (CHAR_CELL, Recognizer, UNetGenerator, char_encoder, extract_characters,
                       word_encoder)
from .swd import SwdDiscriminator, stiefel_step_

log = logging.getLogger(__name__)

__all__ = [
    "NumericalFailure",
    "MissingGenerator",
    "PairedData",
    "TrainState",
    "build_train_state",
    "train_step",
    "train_gan",
    "heldout_l1",
    "generate",
    "train_recognizer",
    "recognize",
]


class NumericalFailure(RuntimeError):
    """A loss became NaN or infinite."""


class MissingGenerator(ValueError):
    """A recognizer mode that consumes generated machine print was given no generator."""


@dataclass
class PairedData:
    """Standardized handwritten/machine-print pairs with a seeded epoch-shuffled sampler."""

    hw: torch.Tensor
    mp: torch.Tensor
    labels: list[str]
    boxes: list[list[tuple[int, int]]]
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)
    _order: np.ndarray = field(init=False, repr=False)
    _pos: int = field(init=False, repr=False, default=0)

    def __post_init__(self):
        n = self.hw.shape[0]
        if not (self.mp.shape[0] == len(self.labels) == len(self.boxes) == n):
            raise ValueError("handwritten images, machine print, labels and boxes must align")
        if n == 0:
            raise ValueError("empty dataset")
        self._rng = np.random.default_rng(self.seed)
        self._order = self._rng.permutation(n)

    def __len__(self) -> int:
        return self.hw.shape[0]

    def next_indices(self, batch_size: int) -> np.ndarray:
        out = []
        while len(out) < batch_size:
            if self._pos == len(self._order):
                self._order = self._rng.permutation(len(self))
                self._pos = 0
            take = min(batch_size - len(out), len(self._order) - self._pos)
            out.extend(self._order[self._pos:self._pos + take])
            self._pos += take
        return np.asarray(out)

    def batch(self, batch_size: int):
        idx = self.next_indices(batch_size)
        t = torch.as_tensor(idx)
        return (self.hw[t], self.mp[t], [self.labels[i] for i in idx], [self.boxes[i] for i in idx])

    @classmethod
    def from_tensors(cls, tensors, seed: int = 0) -> "PairedData":
        hw, mp, labels, boxes = tensors
        return cls(hw, mp, list(labels), list(boxes), seed)


@dataclass
class TrainState:
    generator: UNetGenerator
    word_disc: SwdDiscriminator
    char_disc: SwdDiscriminator
    opt_g: torch.optim.Optimizer
    opt_w: torch.optim.Optimizer
    opt_c: torch.optim.Optimizer
    hp: HyperParams
    rng: torch.Generator
    step: int = 0
    word_disc_updates: int = 0
    char_disc_updates: int = 0
    history: list[dict] = field(default_factory=list)

    def modules(self) -> dict[str, torch.nn.Module]:
        return {"generator": self.generator, "word_disc": self.word_disc, "char_disc": self.char_disc}


def _adam(params, hp: HyperParams) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=hp.lr, betas=(hp.adam_beta1, hp.adam_beta2))


def build_train_state(hp: HyperParams, cfg: RunConfig | None = None, seed: int = 0,
                      dtype: torch.dtype = torch.float32) -> TrainState:
    """Fresh generator and critics initialised from ``seed``."""
    cfg = cfg or RunConfig(hp=hp)
    torch.manual_seed(seed)
    gen = UNetGenerator(levels=cfg.gen_levels, base_channels=cfg.gen_base_channels,
                        max_channels=cfg.gen_max_channels, z_channels=cfg.z_channels,
                        norm=cfg.gen_norm)
    d_w = SwdDiscriminator(word_encoder(hp.r_w, cfg.word_channels), hp.r_w, hp.M_w,
                           hp.leaky_slope, seed=seed * 7919 + 1)
    d_c = SwdDiscriminator(char_encoder(hp.r_c, cfg.char_channels), hp.r_c, hp.M_c,
                           hp.leaky_slope, seed=seed * 7919 + 1000)
    for m in (gen, d_w, d_c):
        _to_dtype(m, dtype)
    rng = torch.Generator().manual_seed(seed)
    return TrainState(gen, d_w, d_c, _adam(gen.parameters(), hp), _adam(d_w.adam_parameters(), hp),
                      _adam(d_c.adam_parameters(), hp), hp, rng)


def _to_dtype(module: torch.nn.Module, dtype: torch.dtype) -> None:
    # keeps the float64 orthogonal matrices in float64
    for name, p in module.named_parameters():
        if not name.endswith("theta"):
            p.data = p.data.to(dtype)


def _check_finite(**values) -> None:
    for name, v in values.items():
        if not torch.isfinite(v).all():
            raise NumericalFailure(f"{name} is not finite: {v}")


def _noise(state: TrainState, batch: int, like: torch.Tensor) -> torch.Tensor:
    shape = state.generator.noise_shape(batch, like.shape[2], like.shape[3])
    return torch.randn(shape, generator=state.rng, dtype=like.dtype)


def _uniform(state: TrainState, n: int, like: torch.Tensor) -> torch.Tensor:
    return torch.rand(n, generator=state.rng, dtype=like.dtype)


def _critic_update(disc: SwdDiscriminator, opt, terms, lambda1: float, lambda2: float,
                   stiefel_lr: float) -> torch.Tensor:
    obj = critic_objective(terms, lambda1, lambda2)
    _check_finite(critic_objective=obj)
    disc.zero_grad(set_to_none=True)
    obj.backward()
    opt.step()
    for theta in disc.stiefel_parameters():
        stiefel_step_(theta, stiefel_lr)
    return obj


def train_step(state: TrainState, data: PairedData, hp: HyperParams | None = None) -> TrainState:
    """One outer iteration of the three-player game (mutates and returns ``state``)."""
    hp = hp or state.hp
    bs = hp.batch_size
    G, D_w, D_c = state.generator, state.word_disc, state.char_disc
    G.train()

    for _ in range(hp.n_critic):
        y, x, _, _ = data.batch(bs)
        with torch.no_grad():
            x_tilde = G(y, _noise(state, bs, y))
        x_hat = interpolate(x, x_tilde, _uniform(state, bs, x))
        x_bar = interpolate(x, x_tilde, _uniform(state, bs, x))
        terms = word_disc_terms(x, x_tilde, y, x_hat, x_bar, D_w)
        _critic_update(D_w, state.opt_w, terms, hp.lambda1_w, hp.lambda2_w, hp.stiefel_lr)
        state.word_disc_updates += 1
    L_w = _combine(terms, hp.lambda1_w, hp.lambda2_w).detach()

    for _ in range(hp.n_critic):
        y, x, labels, boxes = data.batch(bs)
        with torch.no_grad():
            x_tilde = G(y, _noise(state, bs, y))
        real_c = extract_characters(x, boxes).pixels
        gen_c = extract_characters(x_tilde, boxes).pixels
        n = real_c.shape[0]
        x_hat_c = interpolate(real_c, gen_c, _uniform(state, n, x))
        x_bar_c = interpolate(real_c, gen_c, _uniform(state, n, x))
        terms = char_disc_terms(real_c, gen_c, x_hat_c, x_bar_c, D_c)
        _critic_update(D_c, state.opt_c, terms, hp.lambda1_c, hp.lambda2_c, hp.stiefel_lr)
        state.char_disc_updates += 1
    L_c = _combine(terms, hp.lambda1_c, hp.lambda2_c).detach()

    y, x, labels, boxes = data.batch(bs)
    x_tilde = G(y, _noise(state, bs, y))
    adv_w = D_w(x, y).mean() - D_w(x_tilde, y).mean()
    real_c = extract_characters(x, boxes).pixels
    gen_c = extract_characters(x_tilde, boxes).pixels
    adv_c = D_c(real_c).mean() - D_c(gen_c).mean()
    total = total_generator_loss(adv_w, adv_c, x, x_tilde, hp)
    _check_finite(total=total)
    G.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    state.step += 1

    state.history.append({
        "step": state.step,
        "L_w": float(L_w),
        "L_c": float(L_c),
        "recon_L1": float(reconstruction_l1(x, x_tilde.detach())),
        "total": float(total.detach()),
    })
    return state


@torch.no_grad()
def generate(generator: UNetGenerator, hw: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    """Deterministic (z = 0) translation in evaluation mode (running normalization statistics)."""
    was_training = generator.training
    generator.eval()
    out = torch.cat([generator(hw[i:i + batch_size]) for i in range(0, hw.shape[0], batch_size)])
    generator.train(was_training)
    return out


def heldout_l1(generator: UNetGenerator, hw: torch.Tensor, mp: torch.Tensor) -> float:
    return float(reconstruction_l1(mp, generate(generator, hw)))


def train_gan(state: TrainState, data: PairedData, steps: int, callback=None,
              log_every: int = 0) -> TrainState:
    for _ in range(steps):
        train_step(state, data)
        if callback is not None:
            callback(state)
        if log_every and state.step % log_every == 0:
            rec = state.history[-1]
            log.info("step %d  L_w %.4f  L_c %.4f  recon %.4f  total %.4f", rec["step"],
                     rec["L_w"], rec["L_c"], rec["recon_L1"], rec["total"])
    return state


# ---------------------------------------------------------------------------
# Recognizer
# ---------------------------------------------------------------------------

def _mode_inputs(mode: str, images: torch.Tensor, generator: UNetGenerator | None):
    if mode == "handwritten":
        return images, None
    if generator is None:
        raise MissingGenerator(f"mode {mode!r} needs a trained generator")
    generated = generate(generator, images)
    if mode == "generated":
        return generated, None
    return images, generated


def train_recognizer(images: torch.Tensor, labels: Sequence[str], mode: str = "handwritten",
                     generator: UNetGenerator | None = None, hidden: int = 64, epochs: int = 40,
                     lr: float = 1e-3, batch_size: int = 16, seed: int = 0,
                     width_pools: int = 3, channels: Sequence[int] = (16, 32, 48, 64, 64)):
    """Fit a CTC recognizer; returns ``(model, curve)``.

    ``handwritten`` reads ``images`` directly with one feature path,
    ``generated`` reads the generator's translation of ``images``, and
    ``joint`` reads both through two paths merged by joint attention.
    ``curve[0]`` is the mean CTC loss before training, ``curve[e]`` the mean
    training loss of epoch ``e``.
    """
    main, aux = _mode_inputs(mode, images, generator)
    torch.manual_seed(seed)
    model = Recognizer(len(ALPHABET) + 1, mode=mode, hidden=hidden, channels=channels,
                       width_pools=width_pools)
    targets = [encode_label(lab) for lab in labels]
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)

    def batch_loss(idx):
        t = torch.as_tensor(idx)
        out = model(main[t], None if aux is None else aux[t])
        return ctc_loss(out, [targets[i] for i in idx], reduction="mean")

    n = main.shape[0]
    model.eval()
    with torch.no_grad():
        chunks = [np.arange(i, min(i + 64, n)) for i in range(0, n, 64)]
        curve = [float(sum(batch_loss(c) * len(c) for c in chunks) / n)]
    model.train()
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            loss = batch_loss(idx)
            _check_finite(ctc=loss)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        curve.append(total / n)
    model.eval()
    return model, curve


@torch.no_grad()
def recognize(model: Recognizer, images: torch.Tensor, generator: UNetGenerator | None = None,
              decode: str = "greedy", lexicon: Sequence[str] | None = None,
              beam_width: int = 16) -> list[str]:
    """Transcribe ``images``; modes other than ``handwritten`` need the generator."""
    main, aux = _mode_inputs(model.mode, images, generator)
    model.eval()
    out = model(main, aux)
    return [ctc_decode(lp, decode, lexicon, beam_width) for lp in out]
