"""Epoch loop, early stopping and evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import tensorcore as tc
from ..errors import InvalidArgumentError, ShapeError, TrainingDivergedError
from ..mcanet import McanetModel, save_model
from .augment import sign_flip
from .config import TrainConfig
from .metrics import MetricsReport
from .optim import AdamW


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels; stabilised by log-sum-exp."""
    return tc.cross_entropy(logits, labels)


def _ce_numpy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(labels)), labels]))


def _check_compatible(model: McanetModel, data) -> None:
    cfg = model.config
    if data.constellation.shape[-1] != cfg.image_res:
        raise ShapeError(f"feature resolution {data.constellation.shape[-1]} does not match model "
                         f"image_res {cfg.image_res}")
    if data.wavelet.shape[1] != cfg.wavelet_dim:
        raise ShapeError(f"wavelet length {data.wavelet.shape[1]} does not match model {cfg.wavelet_dim}")
    if data.eye.shape[1] != cfg.eye_channels:
        raise ShapeError(f"eye channels {data.eye.shape[1]} do not match model {cfg.eye_channels}")
    if len(data) and (data.labels.min() < 0 or data.labels.max() >= cfg.n_classes):
        raise InvalidArgumentError(f"labels must lie in [0, {cfg.n_classes})")


def predict_logits(model: McanetModel, data, batch_size: int = 256) -> np.ndarray:
    return model.predict(data.constellation, data.eye, data.wavelet, batch_size=batch_size)


def embeddings(model: McanetModel, data, batch_size: int = 256) -> np.ndarray:
    """Eval-mode pre-classifier vectors, (N, fused_channels)."""
    was = model.training
    model.eval()
    out = []
    try:
        with tc.no_grad():
            for s in range(0, len(data), batch_size):
                sl = slice(s, s + batch_size)
                out.append(model.features(data.constellation[sl], data.eye[sl], data.wavelet[sl]).data)
    finally:
        model.train(was)
    return np.concatenate(out)


def evaluate(model: McanetModel, data, batch_size: int = 256) -> MetricsReport:
    _check_compatible(model, data)
    logits = predict_logits(model, data, batch_size)
    names = data.class_names or [str(i) for i in range(model.config.n_classes)]
    if len(names) != model.config.n_classes:
        names = [str(i) for i in range(model.config.n_classes)]
    return MetricsReport.from_predictions(data.labels, logits.argmax(axis=1), data.snr_db, names,
                                          loss=_ce_numpy(logits, data.labels))


@dataclass
class TrainResult:
    model: McanetModel
    history: list[dict]
    best_epoch: int
    epochs_run: int
    best_val_loss: float
    best_val_accuracy: float
    stopped_early: bool
    seconds: float
    checkpoint: Path | None = None
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"best_epoch": self.best_epoch, "epochs_run": self.epochs_run,
                "best_val_loss": self.best_val_loss, "best_val_accuracy": self.best_val_accuracy,
                "stopped_early": self.stopped_early, "seconds": round(self.seconds, 3),
                "checkpoint": str(self.checkpoint) if self.checkpoint else None}


def train(model: McanetModel, train_set, val_set, cfg: TrainConfig | None = None, out_dir=None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Mini-batch AdamW on cross-entropy with per-epoch validation.

    The state with the lowest validation loss is restored into ``model`` at the
    end and, when ``out_dir`` is given, written there as ``model.amrw``.
    Training stops after ``cfg.patience`` epochs without improvement.
    """
    cfg = cfg or TrainConfig()
    _check_compatible(model, train_set)
    _check_compatible(model, val_set)
    if len(train_set) == 0 or len(val_set) == 0:
        raise InvalidArgumentError("train and validation sets must be non-empty")
    opt = AdamW(model, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 0x747261])
    aug_rng = np.random.default_rng([cfg.seed, 0x617567])
    offsets = model.config.band_offsets
    n = len(train_set)
    history: list[dict] = []
    best = (np.inf, -1, 0.0)
    best_state = model.state_dict()
    stale = 0
    start = time.perf_counter()
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            labels = train_set.labels[idx]
            opt.zero_grad()
            cons, eye, wav = train_set.constellation[idx], train_set.eye[idx], train_set.wavelet[idx]
            if cfg.augment:
                flips = aug_rng.random((2, len(idx))) < 0.5
                cons, eye, wav = sign_flip(cons, eye, wav, flips[0], flips[1], offsets)
            logits = model(cons, eye, wav)
            loss = cross_entropy(logits, labels)
            value = loss.item()
            if not np.isfinite(value):
                last = epoch - 1 if epoch > 1 else None
                raise TrainingDivergedError(
                    f"training loss became non-finite in epoch {epoch}; last finite epoch: {last}", last)
            loss.backward()
            opt.step()
            loss_sum += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
        val_logits = predict_logits(model, val_set, cfg.eval_batch_size)
        val_loss = _ce_numpy(val_logits, val_set.labels)
        val_acc = float(np.mean(val_logits.argmax(axis=1) == val_set.labels))
        rec = {"epoch": epoch, "train_loss": loss_sum / n, "train_accuracy": correct / n,
               "val_loss": val_loss, "val_accuracy": val_acc,
               "seconds": round(time.perf_counter() - t0, 3)}
        history.append(rec)
        if progress is not None:
            progress(rec)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(
                f"validation loss became non-finite in epoch {epoch}; last finite epoch: "
                f"{epoch - 1 if epoch > 1 else None}", epoch - 1 if epoch > 1 else None)
        if val_loss < best[0]:
            best = (val_loss, epoch, val_acc)
            best_state = model.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    result = TrainResult(model, history, best[1], len(history), float(best[0]), float(best[2]),
                         len(history) < cfg.epochs, time.perf_counter() - start)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint = save_model(model, out / "model.amrw")
    return result
