"""Evaluation metrics and CTC decoding."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "levenshtein",
    "average_levenshtein",
    "word_accuracy",
    "GaussianStats",
    "gaussian_stats",
    "frechet_distance",
    "embed_images",
    "fhd",
    "ctc_greedy",
    "ctc_lexicon_beam",
    "ctc_decode",
    "ctc_sequence_logprob",
]


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute) by dynamic programming."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def average_levenshtein(preds: Sequence[str], refs: Sequence[str]) -> float:
    """Mean raw edit distance per word pair."""
    if len(preds) != len(refs):
        raise ValueError(f"{len(preds)} predictions for {len(refs)} references")
    if not refs:
        raise ValueError("empty evaluation set")
    return float(np.mean([levenshtein(p, r) for p, r in zip(preds, refs)]))


def word_accuracy(preds: Sequence[str], refs: Sequence[str]) -> float:
    if len(preds) != len(refs):
        raise ValueError(f"{len(preds)} predictions for {len(refs)} references")
    if not refs:
        raise ValueError("empty evaluation set")
    return sum(p == r for p, r in zip(preds, refs)) / len(refs)


# ---------------------------------------------------------------------------
# Frechet distance
# ---------------------------------------------------------------------------

@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int


def gaussian_stats(features) -> GaussianStats:
    """Sample mean and unbiased covariance of an (n, d) feature matrix."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] < 2:
        raise ValueError("need at least two samples for a covariance")
    mu = f.mean(axis=0)
    centred = f - mu
    sigma = centred.T @ centred / (f.shape[0] - 1)
    return GaussianStats(mu, 0.5 * (sigma + sigma.T), f.shape[0])


def _sqrtm_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """``||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))`` between two Gaussians.

    The trace of ``(S1 S2)^(1/2)`` is computed as the trace of the symmetric
    root of ``S1^(1/2) S2 S1^(1/2)``, with negative eigenvalues clamped to 0.
    """
    mu1, mu2 = np.atleast_1d(s1.mu), np.atleast_1d(s2.mu)
    a, b = np.atleast_2d(s1.sigma), np.atleast_2d(s2.sigma)
    if mu1.shape != mu2.shape or a.shape != b.shape or a.shape[0] != mu1.shape[0]:
        raise ValueError(f"dimension mismatch: {mu1.shape}/{a.shape} vs {mu2.shape}/{b.shape}")
    root_a = _sqrtm_psd(a)
    middle = root_a @ b @ root_a
    vals = np.clip(np.linalg.eigvalsh(0.5 * (middle + middle.T)), 0, None)
    diff = mu1 - mu2
    d = float(diff @ diff + np.trace(a) + np.trace(b) - 2 * np.sqrt(vals).sum())
    return max(d, 0.0)


def embed_images(recognizer, images, batch_size: int = 64) -> np.ndarray:
    """Time-averaged BiLSTM outputs of ``recognizer`` for every image, as float64."""
    import torch

    was_training = recognizer.training
    recognizer.eval()
    out = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            out.append(recognizer.embed(images[i:i + batch_size]).double().cpu().numpy())
    recognizer.train(was_training)
    return np.concatenate(out)


def fhd(real_images, gen_images, recognizer) -> float:
    """Frechet handwritten distance: Frechet distance between recognizer embeddings."""
    if recognizer is None:
        raise ValueError("FHD needs a trained recognizer")
    real = gaussian_stats(embed_images(recognizer, real_images))
    gen = gaussian_stats(embed_images(recognizer, gen_images))
    return frechet_distance(real, gen)


# ---------------------------------------------------------------------------
# CTC decoding
# ---------------------------------------------------------------------------

def _np(log_probs) -> np.ndarray:
    if hasattr(log_probs, "detach"):
        log_probs = log_probs.detach().cpu().double().numpy()
    return np.asarray(log_probs, dtype=np.float64)


def ctc_greedy(log_probs, blank: int | None = None) -> list[int]:
    """Best-path decoding: argmax per step, merge repeats, drop blanks."""
    lp = _np(log_probs)
    blank = lp.shape[1] - 1 if blank is None else blank
    out, prev = [], None
    for c in lp.argmax(axis=1):
        if c != prev and c != blank:
            out.append(int(c))
        prev = c
    return out


def ctc_sequence_logprob(log_probs, label: Sequence[int], blank: int | None = None) -> float:
    """log p(label | log_probs) by the CTC forward recursion; -inf when infeasible."""
    lp = _np(log_probs)
    T, C = lp.shape
    blank = C - 1 if blank is None else blank
    ext = [blank]
    for c in label:
        ext += [c, blank]
    S = len(ext)
    alpha = np.full(S, -np.inf)
    alpha[0] = lp[0, blank]
    if S > 1:
        alpha[1] = lp[0, ext[1]]
    for t in range(1, T):
        new = np.full(S, -np.inf)
        for s in range(S):
            terms = [alpha[s]]
            if s >= 1:
                terms.append(alpha[s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                terms.append(alpha[s - 2])
            new[s] = np.logaddexp.reduce(terms) + lp[t, ext[s]]
        alpha = new
    return float(np.logaddexp(alpha[-1], alpha[-2]) if S > 1 else alpha[-1])


def _lexicon_trie(lexicon: Sequence[Sequence[int]]):
    children = defaultdict(set)
    words = set()
    for word in lexicon:
        word = tuple(word)
        words.add(word)
        for k in range(len(word)):
            children[word[:k]].add(word[k])
    return children, words


def ctc_lexicon_beam(log_probs, lexicon: Sequence[Sequence[int]], beam_width: int = 16,
                     blank: int | None = None) -> tuple[int, ...]:
    """Prefix beam search restricted to prefixes of lexicon words.

    Returns the most probable complete lexicon word among the surviving beams;
    if pruning removed every complete word, each lexicon word is scored
    exactly and the best one returned.
    """
    if not lexicon:
        raise ValueError("lexicon-constrained decoding needs a non-empty lexicon")
    lp = _np(log_probs)
    T, C = lp.shape
    blank = C - 1 if blank is None else blank
    children, words = _lexicon_trie(lexicon)

    beams = {(): (0.0, -np.inf)}   # prefix -> (log p ending in blank, log p ending in symbol)
    for t in range(T):
        nxt = defaultdict(lambda: [-np.inf, -np.inf])
        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            entry = nxt[prefix]
            entry[0] = np.logaddexp(entry[0], total + lp[t, blank])
            if prefix:
                entry[1] = np.logaddexp(entry[1], pnb + lp[t, prefix[-1]])
            for c in sorted(children.get(prefix, ())):
                new = nxt[prefix + (c,)]
                base = pb if prefix and c == prefix[-1] else total
                new[1] = np.logaddexp(new[1], base + lp[t, c])
        ranked = sorted(nxt.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))
        beams = {k: tuple(v) for k, v in ranked[:beam_width]}

    complete = [(np.logaddexp(*v), k) for k, v in beams.items() if k in words]
    complete = [(score, k) for score, k in complete if np.isfinite(score)]
    if complete:
        return max(complete, key=lambda sk: (sk[0], [-c for c in sk[1]]))[1]
    scored = [(ctc_sequence_logprob(lp, w, blank), tuple(w)) for w in lexicon]
    return max(scored, key=lambda sk: sk[0])[1]


def ctc_decode(log_probs, mode: str = "greedy", lexicon: Sequence[str] | None = None,
               beam_width: int = 16, alphabet: str | None = None) -> str:
    """Decode one (T, C) log-probability matrix to a string.

    ``mode`` is ``"greedy"`` or ``"lexicon-beam"``. Class ``i`` maps to
    ``alphabet[i]``; the blank is the last class.
    """
    if alphabet is None:
        from .data import ALPHABET as alphabet
    index = {ch: i for i, ch in enumerate(alphabet)}
    if mode == "greedy":
        return "".join(alphabet[i] for i in ctc_greedy(log_probs))
    if mode == "lexicon-beam":
        if not lexicon:
            raise ValueError("lexicon-constrained decoding needs a non-empty lexicon")
        encoded = [[index[c] for c in word] for word in lexicon]
        return "".join(alphabet[i] for i in ctc_lexicon_beam(log_probs, encoded, beam_width))
    raise ValueError(f"unknown decoding mode {mode!r}")
