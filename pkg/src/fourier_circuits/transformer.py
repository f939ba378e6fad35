"""Multi-head attention classifier for k-input modular addition.

The input sequence is ``a_1 .. a_k, =`` where ``=`` is an extra token with id
``p``.  Each layer applies ``m`` attention heads; their outputs are concatenated
and projected back to width ``d`` by ``W^P``.  An optional ReLU feed-forward
block (``mlp_hidden > 0``) can follow each attention layer.  Logits are read from the final
position through an unembedding matrix.

Parameters live in a flat ``{name: array}`` dictionary so the training loop
can treat every model the same way.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dataset import check_arity, check_modulus


@dataclass(frozen=True)
class AttnConfig:
    p: int
    k: int
    heads: int = 4
    d: int = 128
    d_head: int = 32
    layers: int = 1
    seed: int = 0
    positional: bool = True
    residual: bool = True
    layer_norm: bool = False
    tied_unembed: bool = False
    mlp_hidden: int = 0

    def __post_init__(self):
        check_modulus(self.p)
        check_arity(self.k)
        for name in ("heads", "d", "d_head"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.layers not in (1, 2):
            raise ValueError(f"layers must be 1 or 2, got {self.layers}")
        if self.mlp_hidden < 0:
            raise ValueError("mlp_hidden must be >= 0")

    @property
    def seq_len(self) -> int:
        return self.k + 1

    @property
    def equals_token(self) -> int:
        return self.p

    def parameter_count(self) -> int:
        p, k, d, m, dh, L = self.p, self.k, self.d, self.heads, self.d_head, self.layers
        unembed = 0 if self.tied_unembed else d * p
        mlp = 2 * d * self.mlp_hidden
        return (p + 1) * d + (k + 1) * d + L * (3 * m * d * dh + m * dh * d + mlp) + unembed


def parameter_shapes(cfg: AttnConfig) -> dict[str, tuple[int, ...]]:
    shapes = {"E": (cfg.p + 1, cfg.d), "P": (cfg.k + 1, cfg.d)}
    for layer in range(cfg.layers):
        for mat in ("K", "Q", "V"):
            shapes[f"{mat}{layer}"] = (cfg.heads, cfg.d, cfg.d_head)
        shapes[f"O{layer}"] = (cfg.heads * cfg.d_head, cfg.d)
        if cfg.mlp_hidden:
            shapes[f"A{layer}"] = (cfg.d, cfg.mlp_hidden)
            shapes[f"B{layer}"] = (cfg.mlp_hidden, cfg.d)
    if not cfg.tied_unembed:
        shapes["U"] = (cfg.d, cfg.p)
    return shapes


@dataclass
class AttnParams:
    cfg: AttnConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "AttnParams":
        return AttnParams(self.cfg, {k: v.copy() for k, v in self.arrays.items()})


def init_transformer(cfg: AttnConfig) -> AttnParams:
    """Uniform ``[-1/sqrt(d), 1/sqrt(d)]`` initialization, drawn in a fixed order from ``seed``."""
    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / math.sqrt(cfg.d)
    arrays = {name: rng.uniform(-bound, bound, shape) for name, shape in parameter_shapes(cfg).items()}
    if not cfg.positional:
        arrays["P"] = np.zeros_like(arrays["P"])
    return AttnParams(cfg, arrays)


def token_sequences(cfg: AttnConfig, inputs) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.intp)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.shape[1] != cfg.k:
        raise ValueError(f"expected {cfg.k} inputs per row, got {inputs.shape[1]}")
    if inputs.size and (inputs.min() < 0 or inputs.max() >= cfg.p):
        raise ValueError("inputs out of range")
    eq = np.full((inputs.shape[0], 1), cfg.equals_token, dtype=np.intp)
    return np.concatenate([inputs, eq], axis=1)


def _layer_norm(x: ad.Tensor, eps: float = 1e-5) -> ad.Tensor:
    shape = x.shape
    keep = shape[:-1] + (1,)
    mu = ad.reshape(ad.mean(x, axis=-1), keep)
    xc = ad.sub(x, mu)
    var = ad.reshape(ad.mean(ad.mul(xc, xc), axis=-1), keep)
    return ad.mul(xc, ad.power(ad.add(var, eps), -0.5))


def attention_block(cfg: AttnConfig, x: ad.Tensor, t: dict, layer: int, weights_out: list | None = None) -> ad.Tensor:
    """One multi-head attention layer on ``x`` of shape ``(n, T, d)``."""
    n, T, d = x.shape
    m, dh = cfg.heads, cfg.d_head
    xs = ad.reshape(x, (n, 1, T, d))
    q = ad.matmul(xs, t[f"Q{layer}"])  # (n, m, T, dh)
    k = ad.matmul(xs, t[f"K{layer}"])
    v = ad.matmul(xs, t[f"V{layer}"])
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = ad.softmax_rows(scores)  # normalized over key positions
    if weights_out is not None:
        weights_out.append(attn.data)
    heads = ad.matmul(attn, v)  # (n, m, T, dh)
    merged = ad.reshape(ad.transpose(heads, (0, 2, 1, 3)), (n, T, m * dh))
    return ad.matmul(merged, t[f"O{layer}"])


def forward_tensors(cfg: AttnConfig, t: dict, inputs, weights_out: list | None = None) -> ad.Tensor:
    """Logits ``(n, p)`` built from autodiff primitives so they can be differentiated."""
    tokens = token_sequences(cfg, inputs)
    n, T = tokens.shape
    x = ad.reshape(ad.gather_rows(t["E"], tokens.reshape(-1)), (n, T, cfg.d))
    if cfg.positional:
        x = ad.add(x, t["P"])
    for layer in range(cfg.layers):
        h = _layer_norm(x) if cfg.layer_norm else x
        y = attention_block(cfg, h, t, layer, weights_out)
        x = ad.add(x, y) if cfg.residual else y
        if cfg.mlp_hidden:
            h = _layer_norm(x) if cfg.layer_norm else x
            y = ad.matmul(ad.relu(ad.matmul(h, t[f"A{layer}"])), t[f"B{layer}"])
            x = ad.add(x, y) if cfg.residual else y
    last = ad.take(x, T - 1, axis=1)
    if cfg.tied_unembed:
        value_rows = ad.gather_rows(t["E"], np.arange(cfg.p))
        return ad.matmul(last, ad.transpose(value_rows, (1, 0)))
    return ad.matmul(last, t["U"])


def as_tensors(params: AttnParams, requires_grad: bool = False) -> dict[str, ad.Tensor]:
    return {name: ad.Tensor(arr, requires_grad=requires_grad, name=name) for name, arr in params.arrays.items()}


def forward_batch(params: AttnParams, inputs) -> np.ndarray:
    return forward_tensors(params.cfg, as_tensors(params), inputs).data


def forward_transformer(params: AttnParams, a) -> np.ndarray:
    a = np.asarray(a, dtype=np.intp).reshape(-1)
    if len(a) != params.cfg.k:
        raise ValueError(f"expected {params.cfg.k} inputs, got {len(a)}")
    return forward_batch(params, a[None, :])[0]


def attention_weights(params: AttnParams, inputs) -> list[np.ndarray]:
    """Per-layer softmax weights of shape ``(n, heads, T, T)``."""
    out: list[np.ndarray] = []
    forward_tensors(params.cfg, as_tensors(params), inputs, out)
    return out


def _check_head(params: AttnParams, head: int, layer: int) -> None:
    if not 0 <= layer < params.cfg.layers:
        raise IndexError(f"layer {layer} out of range")
    if not 0 <= head < params.cfg.heads:
        raise IndexError(f"head {head} out of range")


def attention_matrix(params: AttnParams, head: int, layer: int = 0) -> np.ndarray:
    """``W^K W^{Q T}`` for one head, shape ``(d, d)``."""
    _check_head(params, head, layer)
    return params.arrays[f"K{layer}"][head] @ params.arrays[f"Q{layer}"][head].T


def token_space_attention(params: AttnParams, head: int, layer: int = 0) -> np.ndarray:
    """``E~ W^{KQ} E~^T`` over the ``p`` value tokens (positions excluded)."""
    e = params.arrays["E"][: params.cfg.p]
    return e @ attention_matrix(params, head, layer) @ e.T


def write_matrix_csv(path, matrix: np.ndarray) -> None:
    """``row,col,value`` rows in row-major order."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "col", "value"])
        for (i, j), v in np.ndenumerate(np.asarray(matrix)):
            writer.writerow([i, j, repr(float(v))])
