"""Recurrent bridge between the transformer decoder and the output head.

Two stacked ConvLSTM cells run over the decoding steps at full frame
resolution.  The alpha cell consumes the teacher-forcing tap (the encoder's
first-layer activation of the frame the decoder consumed at that step); the
beta cell additionally sees alpha's fresh hidden state next to the decoder's
mid-level map, which is the layer interaction that motivates the design.

``residual`` mode swaps the recurrence for tap + mid addition; ``none``
passes the mid-level maps straight through.  Both keep the interface so the
surrounding pipeline does not care which variant is configured.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .tensor import Parameter, Tensor


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


class ConvLstmCell:
    """Standard ConvLSTM gates over channel-concatenated inputs.

    Four kernels (forget, input, candidate, output) are held separately but
    applied as one conv for speed; in_ch counts the hidden state plus every
    extra input stream.
    """

    def __init__(self, name: str, ch: int, in_ch: int, k: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.ch = ch
        self.kernels = []
        self.biases = []
        for gate in ("W_F", "W_I", "W_C", "W_O"):
            kp = Parameter(np.zeros((ch, in_ch, k, k), dtype), f"{name}.{gate}")
            T.init_uniform(kp, in_ch * k * k, rng)
            self.kernels.append(kp)
            self.biases.append(Parameter(np.zeros((ch,), dtype), f"{name}.b{gate[-1]}"))

    def step(self, state: LstmState, inputs: list[Tensor]) -> LstmState:
        x = T.concat([state.h] + inputs, axis=1)
        gates = T.conv2d(x, T.concat(self.kernels, axis=0), T.concat(self.biases, axis=0))
        f_, i_, c_, o_ = T.split(gates, 4, axis=1)
        f = T.sigmoid(f_)
        i = T.sigmoid(i_)
        cand = T.tanh(c_)
        o = T.sigmoid(o_)
        c = T.add(T.mul(f, state.c), T.mul(i, cand))
        h = T.mul(o, T.tanh(c))
        return LstmState(h=h, c=c)

    def parameters(self):
        return list(self.kernels) + list(self.biases)


class LiConvLstmBridge:
    def __init__(self, name: str, cfg: ModelConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.mode = cfg.bridge_mode
        self.ch = cfg.ch1
        self.dtype = dtype
        if self.mode == "convlstm":
            k = cfg.bridge_kernel
            self.alpha = ConvLstmCell(name + ".alpha", cfg.ch1, 2 * cfg.ch1, k, rng, dtype)
            self.beta = ConvLstmCell(name + ".beta", cfg.ch1, 3 * cfg.ch1, k, rng, dtype)

    def zero_state(self, batch: int, hw: tuple[int, int]) -> LstmState:
        z = np.zeros((batch, self.ch) + hw, self.dtype)
        return LstmState(h=Tensor(z.copy()), c=Tensor(z.copy()))

    def alpha_step(self, state: LstmState, tap: Tensor) -> LstmState:
        return self.alpha.step(state, [tap])

    def beta_step(self, state: LstmState, h_alpha: Tensor, mid: Tensor) -> LstmState:
        return self.beta.step(state, [h_alpha, mid])

    def run(self, taps: list[Tensor], mids: list[Tensor]) -> list[Tensor]:
        """Per decoding step, the map handed to the output head."""
        if len(taps) != len(mids):
            raise ValueError(f"got {len(taps)} taps for {len(mids)} decoder steps")
        if self.mode == "none":
            return list(mids)
        if self.mode == "residual":
            return [T.add(m, t) for m, t in zip(mids, taps)]
        batch, hw = taps[0].shape[0], (taps[0].shape[-2], taps[0].shape[-1])
        a_state = self.zero_state(batch, hw)
        b_state = self.zero_state(batch, hw)
        out = []
        for tap, mid in zip(taps, mids):
            a_state = self.alpha_step(a_state, tap)
            b_state = self.beta_step(b_state, a_state.h, mid)
            out.append(b_state.h)
        return out

    def parameters(self):
        if self.mode != "convlstm":
            return []
        return self.alpha.parameters() + self.beta.parameters()
