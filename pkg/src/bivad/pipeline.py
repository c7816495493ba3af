"""Clip layout and the full bi-directional prediction model.

A clip covers 2n+1 frames sampled every ``stride`` source frames around a
centre t.  Position p corresponds to source offset (p - n) * stride.  Roles
overlap on purpose:

    context        positions [0, n-m) and (n+m, 2n]   (both flanks)
    forward run    consumes  [n-m-1, n+m), predicts [n-m, n+m]
    backward run   consumes  (n+m+1 .. n-m+1 descending), predicts the
                   same ascending window from the other side

so the first forward input is the last pre-context frame and the first
backward input is the first post-context frame (shift-by-one decoding).
Predictions from both runs fuse as eta * forward + (1 - eta) * backward;
the middle fused frame is the one scored at inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .bridge import LiConvLstmBridge
from .codec import SpatialCodec
from .config import ModelConfig
from .convttrans import ContextKnowledge, TransformerDecoder, TransformerEncoder, positional_channel_code
from .errors import FormatError, InvalidArgumentError
from .tensor import Tensor


# -- clip index math -----------------------------------------------------


def clip_offsets(cfg: ModelConfig) -> list[int]:
    return [(p - cfg.n) * cfg.stride for p in range(cfg.clip_len)]


def context_positions(cfg: ModelConfig) -> list[int]:
    return list(range(0, cfg.n - cfg.m)) + list(range(cfg.n + cfg.m + 1, cfg.clip_len))


def forward_input_positions(cfg: ModelConfig) -> list[int]:
    return [cfg.n - cfg.m - 1 + p for p in range(cfg.num_targets)]


def forward_output_positions(cfg: ModelConfig) -> list[int]:
    return [cfg.n - cfg.m + p for p in range(cfg.num_targets)]


def backward_input_positions(cfg: ModelConfig) -> list[int]:
    return [cfg.n + cfg.m + 1 - p for p in range(cfg.num_targets)]


def backward_output_positions(cfg: ModelConfig) -> list[int]:
    return [cfg.n + cfg.m - p for p in range(cfg.num_targets)]


def slice_clips(total_frames: int, cfg: ModelConfig) -> list[int]:
    """Valid clip centres for a video of the given length (may be empty)."""
    lo = cfg.margin
    hi = total_frames - cfg.margin
    return list(range(lo, hi)) if hi > lo else []


def gather_clip(video: np.ndarray, center: int, cfg: ModelConfig) -> np.ndarray:
    """(T, C, H, W) video -> (2n+1, C, H, W) clip around centre."""
    idx = [center + off for off in clip_offsets(cfg)]
    if idx[0] < 0 or idx[-1] >= video.shape[0]:
        raise InvalidArgumentError(
            f"centre {center} needs frames {idx[0]}..{idx[-1]}, video has {video.shape[0]}")
    return video[idx]


@dataclass
class PredictionBundle:
    """Per-clip predictions, each a list over ascending target positions."""
    forward: list[Tensor] | None
    backward: list[Tensor] | None   # realigned ascending
    fused: list[Tensor]


def fuse(forward: list[Tensor], backward: list[Tensor], eta: float) -> list[Tensor]:
    """eta-weighted blend of the two runs (both ascending)."""
    if len(forward) != len(backward):
        raise InvalidArgumentError("fusion needs matching prediction counts")
    return [T.add(T.mul(f, eta), T.mul(b, 1.0 - eta)) for f, b in zip(forward, backward)]


class BiVadModel:
    """Shared codec, context encoder, and two direction-specific decoders."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.codec = SpatialCodec(cfg, rng, dtype)
        self.encoder = TransformerEncoder("convttrans.encoder", cfg, rng, dtype)
        self.decoder_f = TransformerDecoder("convttrans.decoder_f", cfg, rng, dtype)
        self.bridge_f = LiConvLstmBridge("bridge.forward", cfg, rng, dtype)
        self.decoder_b = TransformerDecoder("convttrans.decoder_b", cfg, rng, dtype)
        self.bridge_b = LiConvLstmBridge("bridge.backward", cfg, rng, dtype)
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise InvalidArgumentError("duplicate parameter names in model")

    def parameters(self):
        out = []
        for mod in (self.codec, self.encoder, self.decoder_f, self.bridge_f,
                    self.decoder_b, self.bridge_b):
            out.extend(mod.parameters())
        return out

    def param_dict(self):
        return {p.name: p for p in self.parameters()}

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state(self, named: dict[str, np.ndarray]):
        params = self.param_dict()
        missing = sorted(set(params) - set(named))
        extra = sorted(set(named) - set(params))
        if missing or extra:
            raise FormatError(
                f"checkpoint does not match model: missing {missing[:3]}, extra {extra[:3]}")
        for name, p in params.items():
            arr = named[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise FormatError(
                    f"checkpoint entry {name} has shape {arr.shape}, model wants {p.data.shape}")
            p.data[...] = arr.astype(p.data.dtype)

    # -- forward -----------------------------------------------------------

    def _validate_frames(self, frames: np.ndarray):
        cfg = self.cfg
        want = (cfg.clip_len, cfg.image_channels, cfg.image_size, cfg.image_size)
        if frames.ndim != 5 or frames.shape[1:] != want:
            raise InvalidArgumentError(
                f"expected clip batch (B, {want[0]}, {want[1]}, {want[2]}, {want[3]}), "
                f"got {frames.shape}")

    def _gather(self, seq: Tensor, positions: list[int], b: int, chw: tuple) -> Tensor:
        sel = T.index_select(seq, 1, positions)
        return T.reshape(sel, (b * len(positions),) + chw)

    def _per_step(self, seq: Tensor, step: int, b: int, chw: tuple) -> Tensor:
        return T.reshape(T.narrow(seq, 1, step, 1), (b,) + chw)

    def encode_clip(self, frames: np.ndarray):
        """Encode every clip frame once; returns flattened feature/tap pools."""
        self._validate_frames(frames)
        cfg = self.cfg
        b, l = frames.shape[:2]
        flat = Tensor(np.ascontiguousarray(frames.reshape((b * l,) + frames.shape[2:])),
                      dtype=self.dtype)
        feats, taps = self.codec.encode(flat)
        fh, fw = feats.shape[-2], feats.shape[-1]
        feat_chw = (cfg.ch_feat, fh, fw)
        tap_chw = (cfg.ch1, cfg.image_size, cfg.image_size)
        feats_seq = T.reshape(feats, (b, l, int(np.prod(feat_chw))))
        taps_seq = T.reshape(taps, (b, l, int(np.prod(tap_chw))))
        return feats_seq, taps_seq, feat_chw, tap_chw

    def _maybe_positional(self, x: Tensor, positions: list[int], b: int) -> Tensor:
        if self.cfg.positional_encoding != "channel":
            return x
        code = positional_channel_code(positions, self.cfg.ch_feat, self.dtype)
        tiled = np.tile(code, (b, 1))[:, :, None, None]
        return T.add(x, Tensor(tiled))

    def context_knowledge(self, feats_seq: Tensor, b: int, feat_chw: tuple) -> ContextKnowledge:
        pos = context_positions(self.cfg)
        ctx = self._gather(feats_seq, pos, b, feat_chw)
        ctx = self._maybe_positional(ctx, pos, b)
        return self.encoder(ctx, b, len(pos))

    def _run_direction(self, feats_seq, taps_seq, knowledge, b, feat_chw, tap_chw,
                       in_pos: list[int], decoder, bridge) -> list[Tensor]:
        cfg = self.cfg
        t = len(in_pos)
        tgt = self._gather(feats_seq, in_pos, b, feat_chw)
        tgt = self._maybe_positional(tgt, in_pos, b)
        dec_out = decoder(tgt, knowledge, b, t)
        mids = self.codec.decode(dec_out)
        mids_seq = T.reshape(mids, (b, t, int(np.prod(tap_chw))))
        mids_list = [self._per_step(mids_seq, p, b, tap_chw) for p in range(t)]
        taps_list = [self._gather(taps_seq, [pos], b, tap_chw) for pos in in_pos]
        bridged = bridge.run(taps_list, mids_list)
        stacked = T.concat(bridged, axis=0)
        frames_out = self.codec.head(stacked)
        return T.split(frames_out, t, axis=0)

    def run_forward_pipeline(self, feats_seq, taps_seq, knowledge, b, feat_chw, tap_chw):
        return self._run_direction(feats_seq, taps_seq, knowledge, b, feat_chw, tap_chw,
                                   forward_input_positions(self.cfg),
                                   self.decoder_f, self.bridge_f)

    def run_backward_pipeline(self, feats_seq, taps_seq, knowledge, b, feat_chw, tap_chw):
        raw = self._run_direction(feats_seq, taps_seq, knowledge, b, feat_chw, tap_chw,
                                  backward_input_positions(self.cfg),
                                  self.decoder_b, self.bridge_b)
        return list(reversed(raw))

    def forward(self, frames: np.ndarray) -> PredictionBundle:
        """frames: (B, 2n+1, C, H, W) in [-1, 1] -> per-position predictions."""
        cfg = self.cfg
        feats_seq, taps_seq, feat_chw, tap_chw = self.encode_clip(frames)
        b = frames.shape[0]
        knowledge = self.context_knowledge(feats_seq, b, feat_chw)
        fwd = bwd = None
        if cfg.direction_mode in ("bi", "forward_only"):
            fwd = self.run_forward_pipeline(feats_seq, taps_seq, knowledge, b, feat_chw, tap_chw)
        if cfg.direction_mode in ("bi", "backward_only"):
            bwd = self.run_backward_pipeline(feats_seq, taps_seq, knowledge, b, feat_chw, tap_chw)
        if cfg.direction_mode == "bi":
            fused = fuse(fwd, bwd, cfg.eta)
        else:
            fused = list(fwd if fwd is not None else bwd)
        return PredictionBundle(forward=fwd, backward=bwd, fused=fused)

    __call__ = forward

    def target_frames(self, frames: np.ndarray) -> np.ndarray:
        """(B, T, C, H, W) ground-truth frames matching bundle.fused order."""
        return frames[:, forward_output_positions(self.cfg)]
