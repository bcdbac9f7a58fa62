"""Single-layer autoregressive description decoder conditioned on agent tokens.

Each position embeds its token plus a learned position vector, attends
causally over the prefix, then attends to the valid rows of the conditioning
matrix ``A``; a linear map gives next-token logits.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import numkit as nk
from .describer import BOS, EOS, L_MAX, V
from .layers import init_linear, linear


def init_params(store: nk.ParamStore, d: int, rng: np.random.Generator, l_max: int = L_MAX) -> None:
    store.add("itg.embed", rng.normal(0.0, 1.0, size=(V, d)))
    store.add("itg.pos", rng.normal(0.0, 0.1, size=(l_max, d)))
    for blk in ("sa", "ca"):
        for m in ("q", "k", "v"):
            init_linear(store, f"itg.{blk}.{m}", d, d, rng, bias=False)
    init_linear(store, "itg.out", d, V, rng, zero=True)


def _compact(A: nk.Tensor, mask) -> nk.Tensor | None:
    if mask is None:
        return A if A.shape[0] else None
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if len(idx) == 0:
        return None
    return A if len(idx) == A.shape[0] else nk.take_rows(A, idx)


def _check_prefix(prefix: Sequence[int], l_max: int) -> list[int]:
    toks = [int(t) for t in prefix]
    if not 1 <= len(toks) <= l_max:
        raise ValueError(f"prefix length {len(toks)} outside [1, {l_max}]")
    if toks[0] != BOS:
        raise ValueError("prefix must start with BOS")
    if any(not 0 <= t < V for t in toks):
        raise ValueError("token id outside the vocabulary")
    return toks


def all_logits(prefix: Sequence[int], A: nk.Tensor, store: nk.ParamStore, mask=None) -> nk.Tensor:
    """Next-token logits after every prefix position, shape (len(prefix), V)."""
    l_max = store["itg.pos"].shape[0]
    toks = _check_prefix(prefix, l_max)
    n = len(toks)
    x = nk.add(nk.take_rows(store["itg.embed"], toks), nk.take_rows(store["itg.pos"], range(n)))
    sa = nk.scaled_dot_attention(linear(store, "itg.sa.q", x), linear(store, "itg.sa.k", x),
                                 linear(store, "itg.sa.v", x), causal=True)
    h = nk.add(x, sa)
    cond = _compact(A, mask)
    if cond is not None:
        ca = nk.scaled_dot_attention(linear(store, "itg.ca.q", h), linear(store, "itg.ca.k", cond),
                                     linear(store, "itg.ca.v", cond))
        h = nk.add(h, ca)
    return linear(store, "itg.out", h)


def step_logits(prefix: Sequence[int], A: nk.Tensor, store: nk.ParamStore, mask=None) -> nk.Tensor:
    logits = all_logits(prefix, A, store, mask)
    return nk.take_rows(logits, [logits.shape[0] - 1])


def itg_loss(desc: Sequence[int], A: nk.Tensor, store: nk.ParamStore, mask=None) -> nk.Tensor:
    """Teacher-forced mean negative log-likelihood of tokens 2..N given their prefixes."""
    toks = list(desc)
    if len(toks) < 2:
        raise ValueError("description too short to score")
    logp = nk.log_softmax_rows(all_logits(toks[:-1], A, store, mask))
    n = len(toks) - 1
    return nk.scale(nk.mean(nk.pick(logp, range(n), toks[1:])), -1.0)


def greedy_decode(A: nk.Tensor, store: nk.ParamStore, mask=None, l_max: int | None = None) -> list[int]:
    l_max = store["itg.pos"].shape[0] if l_max is None else l_max
    out = [BOS]
    with nk.no_grad():
        while len(out) < l_max:
            nxt = int(np.argmax(step_logits(out, A, store, mask).data[0]))
            out.append(nxt)
            if nxt == EOS:
                return out
    out.append(EOS)
    return out
