"""Stratified train/val/test partitioning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    stratified: bool = True
    warnings: list[dict] = field(default_factory=list)

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def _cell_counts(n: int, ratios) -> tuple[int, int, int]:
    n_train = int(np.floor(n * ratios[0] + 0.5))
    n_val = int(np.floor(n * ratios[1] + 0.5))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_dataset(dataset, ratios=(0.7, 0.2, 0.1), seed: int = 0) -> Split:
    """Partition sample indices, stratified by (label, snr) cell.

    ``dataset`` is anything with ``labels`` and ``snr_db`` arrays. Each cell is
    shuffled and cut by rounded ratios, so per-cell counts are within one
    sample of target. If any cell is too small to give every split a sample,
    the whole set is shuffled and cut globally and a warning is recorded.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    labels = np.asarray(dataset.labels)
    snr = np.round(np.asarray(dataset.snr_db, dtype=np.float64), 6)
    n = len(labels)
    rng = np.random.default_rng(seed)
    cells: dict[tuple[int, float], np.ndarray] = {}
    for key in sorted(set(zip(labels.tolist(), snr.tolist()))):
        cells[key] = np.flatnonzero((labels == key[0]) & (snr == key[1]))

    small = [k for k, idx in cells.items() if min(_cell_counts(len(idx), ratios)) < 1]
    if small:
        perm = rng.permutation(n)
        a, b, _ = _cell_counts(n, ratios)
        warn = {"code": "split_fallback",
                "message": f"{len(small)} (label, snr) cells too small to stratify; used a global shuffle",
                "cells": [[int(k[0]), float(k[1])] for k in small[:20]]}
        return Split(np.sort(perm[:a]), np.sort(perm[a:a + b]), np.sort(perm[a + b:]), False, [warn])

    parts = ([], [], [])
    for idx in cells.values():
        perm = idx[rng.permutation(len(idx))]
        a, b, _ = _cell_counts(len(idx), ratios)
        parts[0].append(perm[:a])
        parts[1].append(perm[a:a + b])
        parts[2].append(perm[a + b:])
    return Split(*(np.sort(np.concatenate(p)) for p in parts))
