"""Ordinal targets, cumulative-output decoding and evaluation metrics.

A label ``k`` out of ``K`` ordered classes is encoded as ``K-1`` threshold
bits ``r_i = 1 if i < k``. Network outputs are decoded by binarizing at 0.5
and keeping only the leading run of ones.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DomainError

THRESHOLD = 0.5


def encode(k: int, K: int) -> np.ndarray:
    """Cumulative 0/1 target vector of length ``K-1`` for label ``k``."""
    if K < 2:
        raise DomainError(f"need at least 2 classes, got K={K}")
    if not 0 <= k < K:
        raise DomainError(f"label {k} outside [0, {K - 1}]")
    return (np.arange(K - 1) < k).astype(np.float64)


def binarize(raw) -> np.ndarray:
    return (np.asarray(raw, dtype=np.float64) >= THRESHOLD).astype(np.int64)


def truncate(bits) -> np.ndarray:
    """Zero every bit after the first zero, restoring the ordinal form."""
    bits = np.asarray(bits, dtype=np.int64)
    return np.cumprod(bits)


def decode(raw) -> int:
    return int(truncate(binarize(raw)).sum())


def _check_pair(pred_labels: Sequence[int], true_labels: Sequence[int]):
    if len(pred_labels) != len(true_labels):
        raise DomainError(
            f"prediction/truth length mismatch: {len(pred_labels)} vs {len(true_labels)}"
        )
    if len(pred_labels) == 0:
        raise DomainError("metrics need at least one example")


def ranking_loss(pred_labels: Sequence[int], true_labels: Sequence[int]) -> float:
    """Mean absolute difference between integer labels."""
    _check_pair(pred_labels, true_labels)
    total = sum(abs(int(p) - int(t)) for p, t in zip(pred_labels, true_labels))
    return total / len(pred_labels)


def accuracy(pred_labels: Sequence[int], true_labels: Sequence[int]) -> float:
    _check_pair(pred_labels, true_labels)
    hits = sum(int(p) == int(t) for p, t in zip(pred_labels, true_labels))
    return hits / len(pred_labels)
