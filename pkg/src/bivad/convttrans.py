"""Convolutional temporal self-attention encoder/decoder.

Sequence elements are whole feature maps.  Per head, conv layers emit
query/key/value maps; a pair scores as the dot product of the flattened
maps scaled by 1/sqrt(flattened length).  Heads concatenate along channels
with no output projection.  Blocks are post-norm residual: sublayer, add,
channel-wise spatial normalization.

The encoder runs once per clip over the context positions and emits the
context knowledge (per-head K/V reused by every decoder block; the matching
Q is produced for completeness but nothing consumes it).  Decoder
self-attention is causally masked with an additive -1e9 bias, so masked
weights underflow to exact zeros and later positions cannot leak backwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .layers import ChannelSpatialNorm, Conv2d
from .tensor import Parameter, Tensor

MASK_VALUE = -1e9


def tsa_score(qi: Tensor, kj: Tensor) -> Tensor:
    """Scaled dot product of two equally-shaped feature maps (a scalar)."""
    if qi.shape != kj.shape:
        raise ValueError(f"score operands must match, got {qi.shape} vs {kj.shape}")
    return T.div(T.sum_(T.mul(qi, kj)), math.sqrt(qi.size))


def attend(weights: Tensor, values: Tensor) -> Tensor:
    """Weighted sum of stacked values: weights (S,), values (S, ...)."""
    w = T.reshape(weights, (weights.size,) + (1,) * (values.ndim - 1))
    return T.sum_(T.mul(values, w), axis=0)


def causal_bias(t: int, dtype=np.float32) -> np.ndarray:
    """(t, t) additive bias: 0 at/below the diagonal, -1e9 above."""
    return np.triu(np.full((t, t), MASK_VALUE, dtype=dtype), k=1)


def positional_channel_code(positions, channels: int, dtype=np.float32) -> np.ndarray:
    """Sinusoid code per sequence position, one value per channel."""
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    idx = np.arange(channels, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (idx // 2)) / channels)
    code = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return code.astype(dtype)


@dataclass
class ContextKnowledge:
    """Per-head projections of the encoded context, computed once per clip."""
    q: list[Tensor]       # each (B, S, D); produced but unused downstream
    k: list[Tensor]
    v: list[Tensor]
    d: int                # flattened per-head length d_head * fh * fw
    fh: int
    fw: int
    d_head: int


class HeadProjections:
    """Per-head conv kernels for any subset of Q/K/V (no biases).

    All kernels run as one concatenated conv; gradients split back to the
    individual head parameters through the concat.
    """

    def __init__(self, name: str, ch_in: int, heads: int, d_head: int, k: int,
                 rng: np.random.Generator, kinds=("Wq", "Wk", "Wv"), dtype=np.float32):
        self.heads = heads
        self.d_head = d_head
        self.kinds = tuple(kinds)
        self.kernels: dict[str, list[Parameter]] = {}
        for kind in self.kinds:
            row = []
            for h in range(heads):
                p = Parameter(np.zeros((d_head, ch_in, k, k), dtype), f"{name}.head{h}.{kind}")
                T.init_uniform(p, ch_in * k * k, rng)
                row.append(p)
            self.kernels[kind] = row

    def project(self, x: Tensor, b: int, length: int) -> dict[str, list[Tensor]]:
        """x: (b*length, ch_in, fh, fw) -> per kind, per head (b, length, D)."""
        fh, fw = x.shape[-2], x.shape[-1]
        stacked = T.concat([self.kernels[kind][h] for kind in self.kinds
                            for h in range(self.heads)], axis=0)
        out = T.conv2d(x, stacked)
        d = self.d_head * fh * fw
        res: dict[str, list[Tensor]] = {}
        for ki, kind in enumerate(self.kinds):
            per_head = []
            for h in range(self.heads):
                offset = (ki * self.heads + h) * self.d_head
                sl = T.narrow(out, 1, offset, self.d_head)
                per_head.append(T.reshape(sl, (b, length, d)))
            res[kind] = per_head
        return res

    def parameters(self) -> list[Parameter]:
        return [p for kind in self.kinds for p in self.kernels[kind]]


def _attend_heads(qs, ks, vs, d: int, bias: np.ndarray | None) -> list[Tensor]:
    inv = 1.0 / math.sqrt(d)
    outs = []
    for qf, kf, vf in zip(qs, ks, vs):
        scores = T.mul(T.bmm(qf, kf, transpose_b=True), inv)
        attn = T.softmax_last(scores, bias)
        outs.append(T.bmm(attn, vf))
    return outs


def _merge_heads(heads_out, b: int, length: int, d_head: int, fh: int, fw: int) -> Tensor:
    maps = [T.reshape(h, (b * length, d_head, fh, fw)) for h in heads_out]
    return T.concat(maps, axis=1)


class ConvFFN:
    def __init__(self, name: str, ch: int, hidden: int, k: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.conv1 = Conv2d(name + ".ffn1", ch, hidden, k, rng, dtype=dtype)
        self.conv2 = Conv2d(name + ".ffn2", hidden, ch, k, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(T.leaky_relu(self.conv1(x)))

    def parameters(self):
        return self.conv1.parameters() + self.conv2.parameters()


class EncoderBlock:
    def __init__(self, name: str, cfg: ModelConfig, rng, dtype=np.float32):
        ch, k = cfg.ch_feat, cfg.attn_kernel
        self.proj = HeadProjections(name + ".tsa", ch, cfg.heads, cfg.d_head, k, rng, dtype=dtype)
        self.norm1 = ChannelSpatialNorm(name + ".norm1", ch, dtype)
        self.ffn = ConvFFN(name, ch, cfg.ffn_hidden, k, rng, dtype)
        self.norm2 = ChannelSpatialNorm(name + ".norm2", ch, dtype)

    def __call__(self, x: Tensor, b: int, s: int) -> Tensor:
        fh, fw = x.shape[-2], x.shape[-1]
        p = self.proj.project(x, b, s)
        d = self.proj.d_head * fh * fw
        heads_out = _attend_heads(p["Wq"], p["Wk"], p["Wv"], d, None)
        attn = _merge_heads(heads_out, b, s, self.proj.d_head, fh, fw)
        x = self.norm1(T.add(x, attn))
        return self.norm2(T.add(x, self.ffn(x)))

    def parameters(self):
        return (self.proj.parameters() + self.norm1.parameters()
                + self.ffn.parameters() + self.norm2.parameters())


class DecoderBlock:
    def __init__(self, name: str, cfg: ModelConfig, rng, dtype=np.float32):
        ch, k = cfg.ch_feat, cfg.attn_kernel
        self.self_proj = HeadProjections(name + ".tsa", ch, cfg.heads, cfg.d_head, k, rng, dtype=dtype)
        self.norm1 = ChannelSpatialNorm(name + ".norm1", ch, dtype)
        self.cross_proj = HeadProjections(name + ".cross", ch, cfg.heads, cfg.d_head, k,
                                          rng, kinds=("Wq",), dtype=dtype)
        self.norm2 = ChannelSpatialNorm(name + ".norm2", ch, dtype)
        self.ffn = ConvFFN(name, ch, cfg.ffn_hidden, k, rng, dtype)
        self.norm3 = ChannelSpatialNorm(name + ".norm3", ch, dtype)

    def __call__(self, x: Tensor, knowledge: ContextKnowledge, bias: np.ndarray,
                 b: int, t: int) -> Tensor:
        fh, fw = x.shape[-2], x.shape[-1]
        d = self.self_proj.d_head * fh * fw
        p = self.self_proj.project(x, b, t)
        sa = _merge_heads(_attend_heads(p["Wq"], p["Wk"], p["Wv"], d, bias),
                          b, t, self.self_proj.d_head, fh, fw)
        x = self.norm1(T.add(x, sa))
        q = self.cross_proj.project(x, b, t)["Wq"]
        ca = _merge_heads(_attend_heads(q, knowledge.k, knowledge.v, knowledge.d, None),
                          b, t, self.cross_proj.d_head, fh, fw)
        x = self.norm2(T.add(x, ca))
        return self.norm3(T.add(x, self.ffn(x)))

    def parameters(self):
        return (self.self_proj.parameters() + self.norm1.parameters()
                + self.cross_proj.parameters() + self.norm2.parameters()
                + self.ffn.parameters() + self.norm3.parameters())


class TransformerEncoder:
    """N blocks plus the knowledge projections on the final output."""

    def __init__(self, name: str, cfg: ModelConfig, rng, dtype=np.float32):
        self.blocks = [EncoderBlock(f"{name}.block{i}", cfg, rng, dtype)
                       for i in range(cfg.blocks)]
        self.knowledge = HeadProjections(name + ".knowledge", cfg.ch_feat, cfg.heads,
                                         cfg.d_head, cfg.attn_kernel, rng, dtype=dtype)

    def __call__(self, ctx_feats: Tensor, b: int, s: int) -> ContextKnowledge:
        x = ctx_feats
        for blk in self.blocks:
            x = blk(x, b, s)
        fh, fw = x.shape[-2], x.shape[-1]
        proj = self.knowledge.project(x, b, s)
        return ContextKnowledge(q=proj["Wq"], k=proj["Wk"], v=proj["Wv"],
                                d=self.knowledge.d_head * fh * fw,
                                fh=fh, fw=fw, d_head=self.knowledge.d_head)

    def parameters(self):
        out = []
        for blk in self.blocks:
            out.extend(blk.parameters())
        out.extend(self.knowledge.parameters())
        return out


class TransformerDecoder:
    def __init__(self, name: str, cfg: ModelConfig, rng, dtype=np.float32):
        self.blocks = [DecoderBlock(f"{name}.block{i}", cfg, rng, dtype)
                       for i in range(cfg.blocks)]

    def __call__(self, tgt_feats: Tensor, knowledge: ContextKnowledge,
                 b: int, t: int) -> Tensor:
        bias = causal_bias(t, tgt_feats.dtype)
        x = tgt_feats
        for blk in self.blocks:
            x = blk(x, knowledge, bias, b, t)
        return x

    def parameters(self):
        out = []
        for blk in self.blocks:
            out.extend(blk.parameters())
        return out
