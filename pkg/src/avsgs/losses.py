"""Training objectives and the spectrogram classifier they rely on."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch import nn

from .scenegraph import BACKGROUND

LOG_FLOOR = 1e-12
MAX_BRUTE_FORCE = 6


class LossShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.05
    lambda3: float = 1.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be nonnegative")


def ortho_loss(Y: torch.Tensor, principal_count: int | None = None, include_background: bool = False) -> torch.Tensor:
    """Sum of squared dot products over ordered pairs of distinct rows.

    Rows are y_1 .. y_N followed by the background row; the background row
    is dropped unless ``include_background``.
    """
    if not include_background:
        n = Y.shape[0] - 1 if principal_count is None else principal_count
        Y = Y[:n]
    gram = Y @ Y.T
    off = gram - torch.diag(torch.diagonal(gram))
    return (off**2).sum()


class SpectrogramClassifier(nn.Module):
    """Four stride-2 convolutions, global average pool, linear head."""

    def __init__(self, n_classes: int, channels: Sequence[int] = (32, 64, 128, 256), negative_slope: float = 0.2):
        super().__init__()
        layers, c_in = [], 1
        for c in channels:
            layers += [nn.Conv2d(c_in, c, 4, stride=2, padding=1), nn.LeakyReLU(negative_slope)]
            c_in = c
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(c_in, n_classes)

    def logits(self, s: torch.Tensor) -> torch.Tensor:
        if s.dim() == 2:
            s = s[None]
        h = self.features(torch.log1p(s)[:, None])
        return self.head(h.mean(dim=(2, 3)))

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        """Class probabilities, one row per input spectrogram."""
        return torch.softmax(self.logits(s), dim=-1)


def _cross_entropy_matrix(probs: torch.Tensor, labels: Sequence[int]) -> torch.Tensor:
    # cost[c, i] = -log p_i(l_c)
    return -torch.log(probs[:, list(labels)].T.clamp_min(LOG_FLOOR))


def best_permutation(probs: torch.Tensor, labels: Sequence[int]) -> tuple[int, ...]:
    """sigma with sigma[c] = output index assigned to label c, minimising cross-entropy."""
    if probs.shape[0] != len(labels):
        raise LossShapeError(f"{probs.shape[0]} outputs for {len(labels)} labels")
    cost = _cross_entropy_matrix(probs.detach(), labels).cpu().numpy()
    n = len(labels)
    if n <= MAX_BRUTE_FORCE:
        perms = list(itertools.permutations(range(n)))
        totals = [sum(cost[c, p[c]] for c in range(n)) for p in perms]
        return perms[int(np.argmin(totals))]
    rows, cols = linear_sum_assignment(cost)
    return tuple(int(c) for c in cols[np.argsort(rows)])


def consistency_loss(probs_per_video: Sequence[torch.Tensor], labels_per_video: Sequence[Sequence[int]]) -> torch.Tensor:
    if len(probs_per_video) != len(labels_per_video):
        raise LossShapeError("one label set per video is required")
    total = probs_per_video[0].new_zeros(())
    for probs, labels in zip(probs_per_video, labels_per_video):
        sigma = best_permutation(probs, labels)
        cost = _cross_entropy_matrix(probs, labels)
        total = total + sum(cost[c, sigma[c]] for c in range(len(labels)))
    return total


def ideal_binary_mask(x_u, x_other):
    if tuple(x_u.shape) != tuple(x_other.shape):
        raise LossShapeError(f"shape mismatch {tuple(x_u.shape)} vs {tuple(x_other.shape)}")
    if isinstance(x_u, torch.Tensor):
        return (x_u > x_other).to(x_u.dtype)
    return (np.asarray(x_u) > np.asarray(x_other)).astype(np.float64)


def cosep_loss(masks_per_video: Sequence[torch.Tensor], ibm_per_video: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(masks_per_video) != len(ibm_per_video):
        raise LossShapeError("one ideal mask per video is required")
    total = masks_per_video[0].new_zeros(())
    for masks, ibm in zip(masks_per_video, ibm_per_video):
        if tuple(masks.shape[1:]) != tuple(ibm.shape):
            raise LossShapeError(f"masks {tuple(masks.shape)} vs ideal mask {tuple(ibm.shape)}")
        total = total + (masks.sum(0) - ibm).abs().sum()
    return total


def total_loss(cons, cosep, ortho, w: LossWeights):
    return w.lambda1 * cons + w.lambda2 * cosep + w.lambda3 * ortho


def label_index(catalog: Sequence[str]) -> dict[str, int]:
    """Classifier target indices: catalog classes, then a shared background class."""
    idx = {c: i for i, c in enumerate(catalog)}
    idx[BACKGROUND] = len(catalog)
    return idx
