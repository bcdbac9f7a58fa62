"""Ego/agent self-attention and (ego, agents) -> map cross-attention.

Each layer applies, with residual connections,

    X <- X + SelfAttn(X W_Q, X W_K, X W_V)          over valid ego/agent rows
    X <- X + CrossAttn(X W_Q, M W_K, M W_V)         over valid map rows, if any
    X <- X + tanh(X F_1) F_2

Masked rows are dropped before any arithmetic and re-inserted as zero rows,
so padding never changes the valid outputs.
"""

from __future__ import annotations

import numpy as np

from . import numkit as nk
from .layers import init_linear, linear


class TopologyError(ValueError):
    pass


def init_params(store: nk.ParamStore, d: int, layers: int, rng: np.random.Generator,
                zero_values: bool = True) -> None:
    for li in range(layers):
        for blk in ("sa", "ca"):
            init_linear(store, f"tgm.{li}.{blk}.q", d, d, rng, bias=False)
            init_linear(store, f"tgm.{li}.{blk}.k", d, d, rng, bias=False)
            init_linear(store, f"tgm.{li}.{blk}.v", d, d, rng, zero=zero_values, bias=False)
        init_linear(store, f"tgm.{li}.ff1", d, d, rng, bias=False)
        init_linear(store, f"tgm.{li}.ff2", d, d, rng, zero=zero_values, bias=False)


def n_layers(store: nk.ParamStore) -> int:
    n = 0
    while f"tgm.{n}.sa.q.W" in store:
        n += 1
    return n


def concat_queries(q_ego: nk.Tensor, Q_agents: nk.Tensor, mask) -> tuple[nk.Tensor, np.ndarray]:
    if q_ego.shape[0] != 1 or q_ego.shape[1] != Q_agents.shape[1]:
        raise nk.ShapeError(f"concat_queries: ego {q_ego.shape} vs agents {Q_agents.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (Q_agents.shape[0],):
        raise nk.ShapeError("agent mask length does not match agent rows")
    return nk.concat_rows([q_ego, Q_agents]), np.concatenate([[True], mask])


def _attend(store, prefix, x, kv, heads):
    q, k, v = linear(store, f"{prefix}.q", x), linear(store, f"{prefix}.k", kv), linear(store, f"{prefix}.v", kv)
    if heads == 1:
        return nk.scaled_dot_attention(q, k, v)
    d = q.shape[1]
    if d % heads:
        raise TopologyError(f"feature dim {d} not divisible by {heads} heads")
    w = d // heads
    parts = [nk.scaled_dot_attention(nk.slice_cols(q, h * w, (h + 1) * w), nk.slice_cols(k, h * w, (h + 1) * w),
                                     nk.slice_cols(v, h * w, (h + 1) * w)) for h in range(heads)]
    return nk.concat_cols(parts)


def tgm_forward(Q_concat: nk.Tensor, concat_mask, Q_map: nk.Tensor, map_mask, store: nk.ParamStore,
                heads: int = 1) -> tuple[nk.Tensor, nk.Tensor]:
    """Refine the concatenated ego/agent queries; returns (q_ego 1xd, Q_agents N_a x d)."""
    cmask = np.asarray(concat_mask, dtype=bool)
    if cmask.shape != (Q_concat.shape[0],):
        raise nk.ShapeError("concat mask length does not match query rows")
    if not cmask[0]:
        raise TopologyError("ego row is masked")
    mmask = np.asarray(map_mask, dtype=bool)
    if mmask.shape != (Q_map.shape[0],):
        raise nk.ShapeError("map mask length does not match map rows")

    rows = np.flatnonzero(cmask)
    x = Q_concat if len(rows) == len(cmask) else nk.take_rows(Q_concat, rows)
    map_rows = np.flatnonzero(mmask)
    m = None
    if len(map_rows):
        m = Q_map if len(map_rows) == len(mmask) else nk.take_rows(Q_map, map_rows)

    for li in range(n_layers(store)):
        x = nk.add(x, _attend(store, f"tgm.{li}.sa", x, x, heads))
        if m is not None:
            x = nk.add(x, _attend(store, f"tgm.{li}.ca", x, m, heads))
        ff = linear(store, f"tgm.{li}.ff2", nk.tanh(linear(store, f"tgm.{li}.ff1", x)))
        x = nk.add(x, ff)

    q_ego = nk.take_rows(x, [0])
    n_agents = Q_concat.shape[0] - 1
    if len(rows) == 1:
        return q_ego, nk.zeros(n_agents, Q_concat.shape[1])
    agents = nk.take_rows(x, range(1, len(rows)))
    return q_ego, nk.scatter_rows(agents, rows[1:] - 1, n_agents)
