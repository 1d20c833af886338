"""Label-preserving sign-flip augmentation.

Negating I or Q maps every scheme onto itself up to a phase rotation or
conjugation. The effect on each modality is a cheap array operation: the
constellation flips along an axis, the eye raster of the flipped channel
flips vertically, and the wavelet bands of that channel change sign (the DWT
is linear). Rasters match re-featurizing the flipped frame up to bin-edge
ties and the one-row rounding of the eye fill.
"""

from __future__ import annotations

import numpy as np


def _channel_masks(band_offsets: dict[str, tuple[int, int]], dim: int) -> tuple[np.ndarray, np.ndarray]:
    mask_i = np.zeros(dim, dtype=bool)
    mask_q = np.zeros(dim, dtype=bool)
    for name, (start, stop) in band_offsets.items():
        (mask_i if name.endswith("_I") else mask_q)[start:stop] = True
    return mask_i, mask_q


def sign_flip(cons: np.ndarray, eye: np.ndarray, wavelet: np.ndarray, flip_i: np.ndarray, flip_q: np.ndarray,
              band_offsets: dict[str, tuple[int, int]]):
    """Apply I -> -I where ``flip_i`` and Q -> -Q where ``flip_q`` (boolean per sample).

    Constellation columns follow I and rows follow Q. Eye channel 0 is I and,
    when present, channel 1 is Q. Inputs are not modified.
    """
    flip_i = np.asarray(flip_i, dtype=bool)
    flip_q = np.asarray(flip_q, dtype=bool)
    cons, eye, wavelet = cons.copy(), eye.copy(), wavelet.copy()
    cons[flip_i] = cons[flip_i][..., ::-1]
    cons[flip_q] = cons[flip_q][..., ::-1, :]
    eye[flip_i, 0] = eye[flip_i, 0][..., ::-1, :]
    if eye.shape[1] > 1:
        eye[flip_q, 1] = eye[flip_q, 1][..., ::-1, :]
    mask_i, mask_q = _channel_masks(band_offsets, wavelet.shape[1])
    sign = np.ones(wavelet.shape, dtype=wavelet.dtype)
    sign[np.ix_(flip_i, mask_i)] = -1
    sign[np.ix_(flip_q, mask_q)] = -1
    return cons, eye, wavelet * sign
