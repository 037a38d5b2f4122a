"""Differentiable building blocks.

Generator: a U-Net with noise concatenated at the bottleneck.
Critic encoders: strided-convolution pyramids ending in a dense layer.
Recognizer: one or two convolutional feature paths, optional joint attention,
two BiLSTM layers and a per-timestep log-softmax for CTC.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn
import torch.nn.functional as F

IMAGE_HEIGHT = 32
IMAGE_WIDTH = 128
CHAR_CELL = 32

__all__ = [
    "IMAGE_HEIGHT",
    "IMAGE_WIDTH",
    "CHAR_CELL",
    "CharSlices",
    "UNetGenerator",
    "unet_generate",
    "ConvEncoder",
    "word_encoder",
    "char_encoder",
    "extract_characters",
    "masked_image",
    "RecognitionPath",
    "recognition_features",
    "joint_attention",
    "BiLSTMCTCHead",
    "Recognizer",
]


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

class UNetGenerator(nn.Module):
    """U-Net with ``levels`` stride-2 encoder stages and mirrored decoder stages.

    Decoder stage ``k`` receives the upsampled output of stage ``k+1``
    concatenated with encoder activation ``k`` (the skip connection). Noise
    ``z`` of shape (B, z_channels, H/2^levels, W/2^levels) is concatenated to
    the innermost encoder activation. With ``norm`` every stage except the
    first encoder stage and the output head is batch-normalized.
    """

    def __init__(self, levels: int = 5, base_channels: int = 16, max_channels: int = 128,
                 z_channels: int = 8, in_channels: int = 1, out_channels: int = 1, norm: bool = True):
        super().__init__()
        if levels < 1:
            raise ValueError("levels must be >= 1")
        self.levels = levels
        self.z_channels = z_channels
        chans = [min(base_channels * 2 ** k, max_channels) for k in range(levels)]
        self.channels = chans

        self.down = nn.ModuleList()
        prev = in_channels
        for c in chans:
            self.down.append(nn.Conv2d(prev, c, 4, stride=2, padding=1))
            prev = c

        # up[k] maps level k+1 features back to the resolution of level k
        self.up = nn.ModuleList()
        for k in reversed(range(levels)):
            inner = chans[k] + (z_channels if k == levels - 1 else chans[k])
            outer = chans[k - 1] if k > 0 else base_channels
            self.up.insert(0, nn.ConvTranspose2d(inner, outer, 4, stride=2, padding=1))
        self.head = nn.Conv2d(base_channels + in_channels, out_channels, 3, padding=1)
        self.norm = norm
        bn = (lambda c: nn.BatchNorm2d(c)) if norm else (lambda c: nn.Identity())
        self.down_norm = nn.ModuleList([nn.Identity() if k == 0 else bn(c) for k, c in enumerate(chans)])
        self.up_norm = nn.ModuleList([bn(m.out_channels) for m in self.up])

    def noise_shape(self, batch: int, height: int = IMAGE_HEIGHT,
                    width: int = IMAGE_WIDTH) -> tuple[int, int, int, int]:
        s = 2 ** self.levels
        return (batch, self.z_channels, height // s, width // s)

    def forward(self, hw: torch.Tensor, z: torch.Tensor | None = None) -> torch.Tensor:
        if hw.dim() != 4:
            raise ValueError(f"expected (B, C, H, W) input, got shape {tuple(hw.shape)}")
        s = 2 ** self.levels
        if hw.shape[2] % s or hw.shape[3] % s:
            raise ValueError(f"spatial size {tuple(hw.shape[2:])} not divisible by {s}")
        expected = self.noise_shape(hw.shape[0], hw.shape[2], hw.shape[3])
        if z is None:
            z = hw.new_zeros(expected)
        if tuple(z.shape) != expected:
            raise ValueError(f"noise shape {tuple(z.shape)} does not match {expected}")

        skips = []
        h = hw
        for k, conv in enumerate(self.down):
            h = self.down_norm[k](conv(h))
            h = F.leaky_relu(h, 0.2) if k < self.levels - 1 else F.relu(h)
            skips.append(h)

        h = torch.cat([skips[-1], z], dim=1)
        for k in reversed(range(self.levels)):
            h = F.relu(self.up_norm[k](self.up[k](h)))
            if k > 0:
                h = torch.cat([h, skips[k - 1]], dim=1)
        return self.head(torch.cat([h, hw], dim=1))


def unet_generate(hw: torch.Tensor, z: torch.Tensor | None, generator: UNetGenerator) -> torch.Tensor:
    """Translate handwritten images to machine print. ``z=None`` is the deterministic mode."""
    return generator(hw, z)


# ---------------------------------------------------------------------------
# Critic encoders
# ---------------------------------------------------------------------------

class ConvEncoder(nn.Module):
    """Stride-2 conv pyramid with LeakyReLU and no normalization, then a dense layer to ``r``."""

    def __init__(self, in_channels: int, height: int, width: int, channels: Sequence[int], r: int):
        super().__init__()
        layers = []
        prev = in_channels
        for c in channels:
            layers += [nn.Conv2d(prev, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            prev = c
            height //= 2
            width //= 2
        self.features = nn.Sequential(*layers)
        self.in_channels = in_channels
        self.proj = nn.Linear(prev * height * width, r)
        self.r = r

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        return self.proj(self.features(x).flatten(1))


def word_encoder(r: int = 128, channels: Sequence[int] = (16, 32, 64, 64),
                 conditional: bool = True) -> ConvEncoder:
    """Word-level encoder; the conditional variant takes the handwritten image as a second channel."""
    return ConvEncoder(2 if conditional else 1, IMAGE_HEIGHT, IMAGE_WIDTH, channels, r)


def char_encoder(r: int = 32, channels: Sequence[int] = (16, 32, 64)) -> ConvEncoder:
    return ConvEncoder(1, CHAR_CELL, CHAR_CELL, channels, r)


# ---------------------------------------------------------------------------
# Character extraction
# ---------------------------------------------------------------------------

@dataclass
class CharSlices:
    """All character crops of a batch, resized to fixed cells.

    ``pixels`` is (N, 1, cell, cell); ``word_index[n]`` and ``k[n]`` locate
    slice ``n`` in its word; ``boxes[n]`` holds the (x0, x1) column bounds.
    """

    pixels: torch.Tensor
    word_index: torch.Tensor
    k: torch.Tensor
    boxes: torch.Tensor
    labels: list[str] | None = None

    def __len__(self) -> int:
        return self.pixels.shape[0]


def _slice_grid(boxes: torch.Tensor, height: int, width: int, cell: int,
                dtype: torch.dtype) -> torch.Tensor:
    # sampling coordinates that match bilinear resize (half-pixel centres,
    # source index clamped to the crop) so no column outside a box is read
    x0 = boxes[:, 0:1].to(dtype)
    x1 = boxes[:, 1:2].to(dtype)
    j = torch.arange(cell, dtype=dtype)[None, :]
    src_x = x0 + (j + 0.5) * (x1 - x0) / cell - 0.5
    src_x = torch.maximum(torch.minimum(src_x, x1 - 1), x0)
    i = torch.arange(cell, dtype=dtype)
    src_y = ((i + 0.5) * height / cell - 0.5).clamp(0, height - 1)
    gx = (2 * src_x + 1) / width - 1
    gy = (2 * src_y + 1) / height - 1
    n = boxes.shape[0]
    grid = torch.stack(torch.broadcast_tensors(gx[:, None, :].expand(n, cell, cell),
                                               gy[None, :, None].expand(n, cell, cell)), dim=-1)
    return grid


def extract_characters(img: torch.Tensor, boxes: Sequence[Sequence[tuple[int, int]]],
                       labels: Sequence[str] | None = None, cell: int = CHAR_CELL) -> CharSlices:
    """Crop every character box from every word and resize each crop to ``cell x cell``.

    ``boxes[b]`` lists the (x0, x1) column ranges of word ``b``. Crops span the
    full image height. Pixels outside all boxes never reach the output.
    """
    if img.dim() != 4 or img.shape[1] != 1:
        raise ValueError(f"expected (B, 1, H, W) images, got {tuple(img.shape)}")
    if len(boxes) != img.shape[0]:
        raise ValueError(f"{len(boxes)} box lists for a batch of {img.shape[0]}")
    height, width = img.shape[2], img.shape[3]
    flat, owner, ks, chars = [], [], [], []
    for b, word_boxes in enumerate(boxes):
        for k, (x0, x1) in enumerate(word_boxes):
            if not (0 <= x0 < x1 <= width):
                raise ValueError(f"box ({x0}, {x1}) of word {b} outside [0, {width}]")
            flat.append((x0, x1))
            owner.append(b)
            ks.append(k)
        if labels is not None:
            if len(labels[b]) != len(word_boxes):
                raise ValueError(f"label {labels[b]!r} has {len(labels[b])} characters, "
                                 f"{len(word_boxes)} boxes given")
            chars.extend(labels[b])
    box_t = torch.tensor(flat, dtype=torch.long).reshape(-1, 2)
    owner_t = torch.tensor(owner, dtype=torch.long)
    k_t = torch.tensor(ks, dtype=torch.long)
    if not flat:
        return CharSlices(img.new_zeros((0, 1, cell, cell)), owner_t, k_t, box_t,
                          chars if labels is not None else None)
    grid = _slice_grid(box_t, height, width, cell, img.dtype)
    pixels = F.grid_sample(img[owner_t], grid, mode="bilinear", align_corners=False)
    return CharSlices(pixels, owner_t, k_t, box_t, chars if labels is not None else None)


def masked_image(img: torch.Tensor, boxes: Sequence[Sequence[tuple[int, int]]]) -> torch.Tensor:
    """Copy of ``img`` with every column outside the character boxes set to zero."""
    mask = torch.zeros(img.shape[0], 1, 1, img.shape[3], dtype=img.dtype)
    for b, word_boxes in enumerate(boxes):
        for x0, x1 in word_boxes:
            mask[b, ..., x0:x1] = 1
    return img * mask


# ---------------------------------------------------------------------------
# Recognizer
# ---------------------------------------------------------------------------

class RecognitionPath(nn.Module):
    """Five conv-BN-ReLU-maxpool stages that turn a 32 x 128 image into a T x d sequence.

    Every stage halves the height; the first ``width_pools`` stages also halve
    the width, so ``T = 128 / 2**width_pools``.
    """

    def __init__(self, channels: Sequence[int] = (16, 32, 48, 64, 64), width_pools: int = 3,
                 in_channels: int = 1):
        super().__init__()
        if len(channels) != 5:
            raise ValueError("the feature path has exactly five stages")
        if not 0 <= width_pools <= 5:
            raise ValueError("width_pools must lie in [0, 5]")
        layers = []
        prev = in_channels
        for k, c in enumerate(channels):
            pool = (2, 2) if k < width_pools else (2, 1)
            layers += [nn.Conv2d(prev, c, 3, padding=1), nn.BatchNorm2d(c), nn.ReLU(),
                       nn.MaxPool2d(pool, pool)]
            prev = c
        self.layers = nn.Sequential(*layers)
        self.width_pools = width_pools
        self.out_dim = prev

    def seq_len(self, width: int = IMAGE_WIDTH) -> int:
        return width // 2 ** self.width_pools

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        if img.dim() != 4 or img.shape[2] != IMAGE_HEIGHT:
            raise ValueError(f"expected (B, C, {IMAGE_HEIGHT}, W) images, got {tuple(img.shape)}")
        f = self.layers(img)                      # (B, d, 1, T)
        return f.squeeze(2).transpose(1, 2)       # (B, T, d)


def recognition_features(img: torch.Tensor, path: RecognitionPath) -> torch.Tensor:
    return path(img)


def joint_attention(H: torch.Tensor, P: torch.Tensor, W_attn: torch.Tensor,
                    return_weights: bool = False):
    """Attend from handwritten features ``H`` (.., T, d1) to machine-print features ``P`` (.., T, d2).

    ``N_ij = tanh(H_i W P_j)``, ``alpha = softmax_j(N)``, ``Hhat = alpha P`` and
    the result is ``concat(H, Hhat)`` along the feature axis.
    """
    if H.shape[-1] != W_attn.shape[0] or P.shape[-1] != W_attn.shape[1]:
        raise ValueError(f"W_attn {tuple(W_attn.shape)} incompatible with H {tuple(H.shape)} "
                         f"and P {tuple(P.shape)}")
    if H.shape[:-1] != P.shape[:-1]:
        raise ValueError(f"H and P disagree on leading dims: {tuple(H.shape)} vs {tuple(P.shape)}")
    scores = torch.tanh(H @ W_attn @ P.transpose(-1, -2))
    alpha = torch.softmax(scores, dim=-1)
    A = torch.cat([H, alpha @ P], dim=-1)
    return (A, alpha) if return_weights else A


class BiLSTMCTCHead(nn.Module):
    """Two bidirectional LSTM layers and a linear layer to ``num_classes`` log-probabilities."""

    def __init__(self, in_dim: int, hidden: int, num_classes: int, num_layers: int = 2):
        super().__init__()
        self.lstm = nn.LSTM(in_dim, hidden, num_layers=num_layers, bidirectional=True,
                            batch_first=True)
        self.out = nn.Linear(2 * hidden, num_classes)

    def encode(self, A: torch.Tensor) -> torch.Tensor:
        return self.lstm(A)[0]

    def forward(self, A: torch.Tensor) -> torch.Tensor:
        return F.log_softmax(self.out(self.encode(A)), dim=-1)


class Recognizer(nn.Module):
    """CRNN recognizer in three modes.

    ``handwritten`` and ``generated`` use one feature path on a single image;
    ``joint`` runs a handwritten and a machine-print path and merges them with
    :func:`joint_attention`. Output is (B, T, num_classes) log-probabilities
    with the CTC blank in the last slot.
    """

    MODES = ("handwritten", "generated", "joint")

    def __init__(self, num_classes: int, mode: str = "handwritten", hidden: int = 64,
                 channels: Sequence[int] = (16, 32, 48, 64, 64), width_pools: int = 3):
        super().__init__()
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {mode!r}")
        self.mode = mode
        self.hidden = hidden
        self.num_classes = num_classes
        self.path_h = RecognitionPath(channels, width_pools)
        d1 = self.path_h.out_dim
        in_dim = d1
        if mode == "joint":
            self.path_p = RecognitionPath(channels, width_pools)
            d2 = self.path_p.out_dim
            self.W_attn = nn.Parameter(torch.randn(d1, d2) / (d1 * d2) ** 0.5)
            in_dim = d1 + d2
        self.head = BiLSTMCTCHead(in_dim, hidden, num_classes)

    def merged(self, img: torch.Tensor, mp: torch.Tensor | None = None) -> torch.Tensor:
        H = self.path_h(img)
        if self.mode != "joint":
            return H
        if mp is None:
            raise ValueError("joint mode needs the generated machine-print image")
        return joint_attention(H, self.path_p(mp), self.W_attn)

    def embed(self, img: torch.Tensor, mp: torch.Tensor | None = None) -> torch.Tensor:
        """Time-mean of the BiLSTM outputs, one vector per image."""
        return self.head.encode(self.merged(img, mp)).mean(dim=1)

    def forward(self, img: torch.Tensor, mp: torch.Tensor | None = None) -> torch.Tensor:
        return self.head(self.merged(img, mp))
