"""Affine layers over numkit tensors and their parameter initialisers."""

from __future__ import annotations

import numpy as np

from . import numkit as nk


def init_linear(store: nk.ParamStore, prefix: str, fan_in: int, fan_out: int, rng: np.random.Generator,
                zero: bool = False, bias: bool = True) -> None:
    if zero:
        w = np.zeros((fan_in, fan_out))
    else:
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
    store.add(f"{prefix}.W", w)
    if bias:
        store.add(f"{prefix}.b", np.zeros((1, fan_out)))


def linear(store: nk.ParamStore, prefix: str, x: nk.Tensor) -> nk.Tensor:
    y = nk.matmul(x, store[f"{prefix}.W"])
    b = f"{prefix}.b"
    return nk.add_row(y, store[b]) if b in store else y


def init_mlp(store, prefix, fan_in, hidden, fan_out, rng, zero_out=False) -> None:
    init_linear(store, f"{prefix}.l1", fan_in, hidden, rng)
    init_linear(store, f"{prefix}.l2", hidden, fan_out, rng, zero=zero_out)


def mlp(store, prefix, x: nk.Tensor) -> nk.Tensor:
    return linear(store, f"{prefix}.l2", nk.tanh(linear(store, f"{prefix}.l1", x)))
