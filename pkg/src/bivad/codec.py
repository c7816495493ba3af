"""Shared spatial codec: frames to feature maps and back.

The encoder downsamples twice (stride-2 convs), so features live at a
quarter of the frame resolution.  Its first, full-resolution activation
doubles as the teacher-forcing tap consumed by the recurrent bridge.  The
decoder mirrors the ladder with transposed convs; the output head maps the
bridge (or mid-level) state back to frame space through tanh.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .layers import Conv2d, ConvTranspose2d
from .tensor import Tensor


class SpatialCodec:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        c_img, c1, c2, cf = cfg.image_channels, cfg.ch1, cfg.ch2, cfg.ch_feat
        self.enc1 = Conv2d("codec.enc1", c_img, c1, 3, rng, stride=1, dtype=dtype)
        self.enc2 = Conv2d("codec.enc2", c1, c2, 3, rng, stride=2, dtype=dtype)
        self.enc3 = Conv2d("codec.enc3", c2, cf, 3, rng, stride=2, dtype=dtype)
        self.up1 = ConvTranspose2d("codec.up1", cf, c2, 3, rng, stride=2, dtype=dtype)
        self.up2 = ConvTranspose2d("codec.up2", c2, c1, 3, rng, stride=2, dtype=dtype)
        self.out = Conv2d("codec.head", c1, c_img, 3, rng, stride=1, dtype=dtype)

    def encode(self, frames: Tensor) -> tuple[Tensor, Tensor]:
        """(N, C_img, H, W) -> features (N, ch_feat, H/4, W/4) and the
        full-resolution tap (N, ch1, H, W)."""
        tap = T.leaky_relu(self.enc1(frames))
        h = T.leaky_relu(self.enc2(tap))
        feats = T.leaky_relu(self.enc3(h))
        return feats, tap

    def decode(self, feats: Tensor) -> Tensor:
        """Features back to a full-resolution mid-level map (N, ch1, H, W)."""
        h = T.leaky_relu(self.up1(feats))
        return T.leaky_relu(self.up2(h))

    def head(self, mid: Tensor) -> Tensor:
        """Mid-level map to a frame prediction in [-1, 1]."""
        return T.tanh(self.out(mid))

    def parameters(self):
        out = []
        for layer in (self.enc1, self.enc2, self.enc3, self.up1, self.up2, self.out):
            out.extend(layer.parameters())
        return out
