"""Language embeddings, cosine similarity, and the binary matching (ITM) loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numkit as nk
from .describer import BOS, EOS, V

ITM_EPS = 1e-6


class DegenerateSimilarityError(ValueError):
    pass


@dataclass
class Pair:
    w: nk.Tensor
    v: nk.Tensor
    y: int


def init_params(store: nk.ParamStore, d: int, rng: np.random.Generator) -> None:
    store.add("lang.embed", rng.normal(0.0, 1.0, size=(V, d)))


def embed_description(tokens: Sequence[int], table: nk.Tensor) -> nk.Tensor:
    """Mean embedding of the tokens strictly between BOS and EOS."""
    toks = list(tokens)
    if not toks or toks[0] != BOS or toks[-1] != EOS:
        raise ValueError("description must be framed by BOS ... EOS")
    body = toks[1:-1]
    if not body:
        raise ValueError("empty description body")
    weights = np.zeros((1, table.shape[0]))
    for t in body:
        weights[0, t] += 1.0 / len(body)
    return nk.matmul(nk.Tensor(weights), table)


def cosine_similarity(w: nk.Tensor, v: nk.Tensor) -> nk.Tensor:
    if w.shape != v.shape or w.shape[0] != 1:
        raise nk.ShapeError(f"cosine_similarity needs two 1xd rows, got {w.shape} and {v.shape}")
    if not np.any(w.data) or not np.any(v.data):
        raise DegenerateSimilarityError("degenerate similarity")
    dot = nk.sum(nk.mul(w, v))
    norms = nk.mul(nk.sqrt(nk.sum(nk.mul(w, w))), nk.sqrt(nk.sum(nk.mul(v, v))))
    return nk.div(dot, norms)


def itm_loss(batch: Sequence[Pair], degenerate: str = "raise") -> nk.Tensor:
    """Mean binary cross-entropy of the rescaled similarity (s + 1) / 2 against the match label.

    ``degenerate="neutral"`` scores a pair containing a zero vector as s = 0
    (chance level) instead of raising.
    """
    if not batch:
        raise ValueError("itm_loss needs a non-empty batch")
    if degenerate not in ("raise", "neutral"):
        raise ValueError(f"unknown degenerate policy {degenerate!r}")
    terms = []
    for p in batch:
        try:
            s = cosine_similarity(p.w, p.v)
        except DegenerateSimilarityError:
            if degenerate == "raise":
                raise
            s = nk.zeros(1, 1)
        s_hat = nk.clamp(nk.scale(nk.add(s, nk.Tensor(1.0)), 0.5), ITM_EPS, 1.0 - ITM_EPS)
        if p.y == 1:
            terms.append(nk.scale(nk.log(s_hat), -1.0))
        else:
            terms.append(nk.scale(nk.log(nk.sub(nk.Tensor(1.0), s_hat)), -1.0))
    return nk.mean(nk.concat_rows(terms))


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 2:
        raise ValueError("a derangement needs at least 2 elements")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def make_negatives(positives: Sequence[tuple[nk.Tensor, nk.Tensor]], rng: np.random.Generator) -> list[Pair]:
    """All positives (y=1) followed by (w_i, v_sigma(i)) negatives (y=0) for a seeded derangement sigma."""
    if len(positives) < 2:
        raise ValueError("make_negatives needs at least 2 positives")
    sigma = derangement(len(positives), rng)
    batch = [Pair(w, v, 1) for w, v in positives]
    batch += [Pair(positives[i][0], positives[int(j)][1], 0) for i, j in enumerate(sigma)]
    return batch

