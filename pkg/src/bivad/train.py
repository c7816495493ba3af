"""Middle-frame prediction training.

One epoch walks a shuffled clip index in fixed-size batches; the loss is the
combined structural + local-absolute error averaged over every predicted
position and the batch.  A held-out clip split drives the learning-rate
plateau schedule, early stopping, and best-checkpoint selection.  Everything
random derives from train.seed, so a rerun reproduces the run exactly.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import (Prefetcher, build_clip_index, gather_batch, load_video,
                   scan_split, split_train_val)
from .errors import InvalidArgumentError
from .objective import combined_loss, gaussian_window
from .pipeline import BiVadModel, clip_offsets
from .storage import save_checkpoint
from .tensor import Adam, Tensor

CHECKPOINT_NAME = "model.bvt"
LOG_NAME = "train_log.txt"
MIN_IMPROVEMENT = 1e-8


class PlateauScheduler:
    """Halve (by `decay`) the optimizer learning rate after `patience`
    epochs without validation improvement."""

    def __init__(self, optimizer: Adam, patience: int = 3, decay: float = 0.5):
        if patience < 1:
            raise InvalidArgumentError("patience must be >= 1")
        if not 0.0 < decay < 1.0:
            raise InvalidArgumentError("decay must be in (0, 1)")
        self.optimizer = optimizer
        self.patience = patience
        self.decay = decay
        self.best = float("inf")
        self.stall = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch; returns True when the rate was just decayed."""
        if val_loss < self.best - MIN_IMPROVEMENT:
            self.best = val_loss
            self.stall = 0
            return False
        self.stall += 1
        if self.stall >= self.patience:
            self.optimizer.lr *= self.decay
            self.stall = 0
            return True
        return False


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    checkpoint_path: str
    best_val_loss: float
    best_epoch: int
    history: list[EpochStats] = field(default_factory=list)
    stopped_early: bool = False


def _chunk(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def _clip_loss(model: BiVadModel, frames: np.ndarray, window: np.ndarray) -> Tensor:
    """Combined loss averaged over every fused prediction of the batch."""
    bundle = model.forward(frames)
    targets = model.target_frames(frames)
    pred = T.concat(bundle.fused, axis=0)
    tgt = np.concatenate([targets[:, k] for k in range(targets.shape[1])], axis=0)
    return combined_loss(pred, Tensor(tgt), window, model.cfg.lam).total


def _epoch_batches(videos, refs, offsets, order, batch_size, prefetch):
    def produce():
        for chunk in _chunk([refs[i] for i in order], batch_size):
            yield gather_batch(videos, chunk, offsets)
    return Prefetcher(produce(), depth=prefetch)


def train_model(cfg: RunConfig, log=None) -> TrainResult:
    """Full training run from cfg.data.root; returns the best checkpoint."""
    say = log if log is not None else (lambda line: None)
    mcfg, tcfg = cfg.model, cfg.train
    mcfg.validate()

    entries = scan_split(cfg.data.root, "train")
    videos = [load_video(e.frame_dir, mcfg.image_size, mcfg.image_channels)
              for e in entries]
    refs = build_clip_index([v.shape[0] for v in videos], mcfg.margin,
                            hop=tcfg.clip_hop)
    if not refs:
        raise InvalidArgumentError(
            "training videos are too short for even one clip")
    split_rng = np.random.default_rng([tcfg.seed, 101])
    train_refs, val_refs = split_train_val(refs, tcfg.val_fraction, split_rng)
    if not train_refs:
        raise InvalidArgumentError("no training clips left after the val split")

    model = BiVadModel(mcfg, seed=tcfg.seed)
    opt = Adam(model.parameters(), lr=tcfg.lr)
    sched = PlateauScheduler(opt, patience=tcfg.plateau_patience, decay=tcfg.lr_decay)
    window = gaussian_window(mcfg.window_size, mcfg.window_sigma)
    offsets = clip_offsets(mcfg)

    os.makedirs(tcfg.out_dir, exist_ok=True)
    ckpt_path = os.path.join(tcfg.out_dir, CHECKPOINT_NAME)
    log_path = os.path.join(tcfg.out_dir, LOG_NAME)

    say(f"clips={len(refs)} train={len(train_refs)} val={len(val_refs)} "
        f"params={model.count_parameters()}")

    result = TrainResult(checkpoint_path=ckpt_path, best_val_loss=float("inf"),
                         best_epoch=0)
    since_best = 0
    with open(log_path, "w") as logf:
        for epoch in range(1, tcfg.max_epochs + 1):
            t0 = time.perf_counter()
            order = np.random.default_rng([tcfg.seed, epoch]).permutation(
                len(train_refs))
            total, seen = 0.0, 0
            for batch in _epoch_batches(videos, train_refs, offsets, order,
                                        tcfg.batch_size, tcfg.prefetch):
                loss = _clip_loss(model, batch, window)
                loss.backward()
                opt.step()
                total += loss.item() * batch.shape[0]
                seen += batch.shape[0]
            train_loss = total / seen

            if val_refs:
                vtotal, vseen = 0.0, 0
                with T.no_grad():
                    for chunk in _chunk(val_refs, tcfg.batch_size):
                        batch = gather_batch(videos, chunk, offsets)
                        vloss = _clip_loss(model, batch, window)
                        vtotal += vloss.item() * batch.shape[0]
                        vseen += batch.shape[0]
                val_loss = vtotal / vseen
            else:
                val_loss = train_loss

            secs = time.perf_counter() - t0
            stats = EpochStats(epoch, train_loss, val_loss, opt.lr, secs)
            result.history.append(stats)
            line = (f"epoch={epoch} train_loss={train_loss:.6f} "
                    f"val_loss={val_loss:.6f} lr={opt.lr:.6g} seconds={secs:.1f}")
            logf.write(line + "\n")
            logf.flush()
            say(line)

            if val_loss < result.best_val_loss - MIN_IMPROVEMENT:
                result.best_val_loss = val_loss
                result.best_epoch = epoch
                since_best = 0
                save_checkpoint(ckpt_path, model.state_arrays())
            else:
                since_best += 1
                if since_best >= tcfg.early_stop_patience:
                    result.stopped_early = True
                    say(f"early stop after epoch {epoch}")
                    break
            sched.step(val_loss)

        logf.write(f"best_val_loss={result.best_val_loss:.6f} "
                   f"best_epoch={result.best_epoch}\n")
    if not os.path.exists(ckpt_path):
        save_checkpoint(ckpt_path, model.state_arrays())
    return result
