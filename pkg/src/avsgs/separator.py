"""Conditioned U-Net mask estimator.

The encoder sees only the mixture, so one encoder pass is shared by every
conditioning embedding; the decoder then runs batched over embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

CHANNELS = (32, 64, 128, 256, 512, 512, 512)


class SeparatorContractError(ValueError):
    pass


@dataclass(frozen=True)
class LayerShape:
    name: str
    side: int
    channels: int


def encoder_channel_plan(depth: int = 7, input_side: int = 256) -> list[LayerShape]:
    plan = [LayerShape("input", input_side, 1)]
    for k in range(1, depth + 1):
        plan.append(LayerShape(f"enc{k}", input_side // 2**k, CHANNELS[k - 1]))
    return plan


def apply_mask(mask, x):
    """Elementwise mask * mixture; works on numpy arrays and tensors alike."""
    if tuple(mask.shape) != tuple(x.shape):
        raise SeparatorContractError(f"mask {tuple(mask.shape)} vs spectrogram {tuple(x.shape)}")
    return mask * x


class UNetSeparator(nn.Module):
    def __init__(
        self,
        depth: int = 7,
        input_side: int = 256,
        emb_dim: int = 512,
        skip: bool = True,
        negative_slope: float = 0.2,
    ):
        super().__init__()
        if input_side % 2**depth or input_side // 2**depth < 1:
            raise ValueError(f"input side {input_side} cannot be halved {depth} times")
        self.depth, self.input_side, self.emb_dim, self.skip = depth, input_side, emb_dim, skip
        self.negative_slope = negative_slope
        chans = CHANNELS[:depth]
        self.down = nn.ModuleList()
        self.norms = nn.ModuleList()
        c_in = 1
        for c in chans:
            self.down.append(nn.Conv2d(c_in, c, 4, stride=2, padding=1))
            self.norms.append(nn.BatchNorm2d(c, track_running_stats=False))
            c_in = c
        self.up = nn.ModuleList()
        outs = list(chans[:-1][::-1]) + [1]
        c_in = chans[-1] + emb_dim
        for i, c in enumerate(outs):
            self.up.append(nn.ConvTranspose2d(c_in, c, 4, stride=2, padding=1))
            skip_c = chans[-2 - i] if (skip and i < depth - 1) else 0
            c_in = c + skip_c

    @property
    def bottleneck_side(self) -> int:
        return self.input_side // 2**self.depth

    def encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = torch.log1p(x)
        feats = []
        for conv, norm in zip(self.down, self.norms):
            h = F.leaky_relu(norm(conv(h)), self.negative_slope)
            feats.append(h)
        return feats

    def decode(self, feats: list[torch.Tensor], y: torch.Tensor) -> torch.Tensor:
        k, side = y.shape[0], self.bottleneck_side
        h = feats[-1].expand(k, -1, -1, -1)
        # unit-norm rows have entries ~ 1/sqrt(d); rescale to unit RMS so the
        # tiled embedding is on the same footing as the normalised encoder output
        e = y * self.emb_dim**0.5
        h = torch.cat([h, e[:, :, None, None].expand(-1, -1, side, side)], dim=1)
        for i, up in enumerate(self.up):
            h = up(h)
            if i == self.depth - 1:
                break
            h = F.leaky_relu(h, self.negative_slope)
            if self.skip:
                h = torch.cat([h, feats[-2 - i].expand(k, -1, -1, -1)], dim=1)
        return torch.sigmoid(h[:, 0])

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Masks for one mixture ``x`` (side x side) and embeddings ``y`` (k x emb_dim)."""
        s = self.input_side
        if tuple(x.shape) != (s, s):
            raise SeparatorContractError(f"expected a {s}x{s} spectrogram, got {tuple(x.shape)}")
        if y.dim() == 1:
            y = y[None]
        if y.shape[1] != self.emb_dim:
            raise SeparatorContractError(f"embedding width {y.shape[1]} != {self.emb_dim}")
        norms = y.detach().norm(dim=1)
        if torch.any((norms - 1).abs() > 1e-4):
            raise SeparatorContractError("conditioning embeddings must be unit norm")
        return self.decode(self.encode(x[None, None]), y)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def separate(x: np.ndarray, y: np.ndarray, model: UNetSeparator) -> np.ndarray:
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        m = model(torch.as_tensor(x, dtype=dtype), torch.as_tensor(y, dtype=dtype))
    return m[0].numpy() if np.ndim(y) == 1 else m.numpy()
