"""Waveform <-> spectrogram transforms used throughout the pipeline.

Analysis is a plain framed STFT (no centering, no padding) with a periodic
Hann window.  Synthesis is weighted overlap-add normalised by the summed
squared window, so an unmodified magnitude/phase pair reconstructs the
input everywhere the window sum is non-zero.
"""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

SAMPLE_RATE = 11025
OLA_FLOOR = 0.1
SNAPSHOT_MAGIC = b"AVSGSPEC"


class ShapeError(ValueError):
    pass


class LengthError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class SpectroConfig:
    sample_rate: int = SAMPLE_RATE
    n_fft: int = 1022
    hop: int = 256
    n_frames: int = 256
    n_log_bins: int = 256

    @property
    def n_linear(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def segment_length(self) -> int:
        return self.n_fft + (self.n_frames - 1) * self.hop


DEFAULT_CONFIG = SpectroConfig()


@dataclass(frozen=True)
class ComplexSpectrogram:
    magnitude: np.ndarray
    phase: np.ndarray


@dataclass(frozen=True)
class BinMap:
    """Fixed linear <-> log frequency mapping.

    ``centers`` are the log-bin centre positions in linear-bin units.
    ``hats`` holds triangular interpolation weights on the log ladder; each
    linear bin's column sums to one, so ``hats.T @ log_values`` is plain
    linear interpolation between the two bracketing log centres.
    ``forward`` is row-stochastic and maps linear magnitudes onto log bins.
    """

    centers: np.ndarray
    hats: np.ndarray
    forward: np.ndarray


@dataclass(frozen=True)
class LogSpectrogram:
    values: np.ndarray
    bin_map: BinMap = field(repr=False)


def pad_or_trim(w: np.ndarray, target_len: int) -> np.ndarray:
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    w = np.asarray(w, dtype=np.float64)
    if len(w) >= target_len:
        return w[:target_len].copy()
    out = np.zeros(target_len, dtype=np.float64)
    out[: len(w)] = w
    return out


def mix(ws: Sequence[np.ndarray]) -> np.ndarray:
    if not ws:
        raise ValueError("mix needs at least one waveform")
    lengths = {len(w) for w in ws}
    if len(lengths) != 1:
        raise LengthError(f"cannot mix waveforms of different lengths {sorted(lengths)}")
    out = np.zeros(len(ws[0]), dtype=np.float64)
    for w in ws:
        out = out + np.asarray(w, dtype=np.float64)
    return out


@lru_cache(maxsize=None)
def hann(n: int) -> np.ndarray:
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(w: np.ndarray, cfg: SpectroConfig = DEFAULT_CONFIG) -> ComplexSpectrogram:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ShapeError(f"expected a mono waveform, got shape {w.shape}")
    if len(w) < cfg.segment_length:
        raise LengthError(
            f"waveform has {len(w)} samples; {cfg.segment_length} are needed for "
            f"{cfg.n_frames} frames"
        )
    if not np.all(np.isfinite(w)):
        raise ContractError("waveform contains non-finite samples")
    frames = np.lib.stride_tricks.sliding_window_view(w[: cfg.segment_length], cfg.n_fft)[:: cfg.hop]
    spec = np.fft.rfft(frames * hann(cfg.n_fft), axis=1).T
    return ComplexSpectrogram(magnitude=np.abs(spec), phase=np.angle(spec))


def istft_with_mixture_phase(
    mag: np.ndarray, phase: np.ndarray, cfg: SpectroConfig = DEFAULT_CONFIG
) -> np.ndarray:
    mag = np.asarray(mag, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if mag.shape != phase.shape or mag.shape != (cfg.n_linear, cfg.n_frames):
        raise ShapeError(
            f"magnitude {mag.shape} and phase {phase.shape} must both be "
            f"{(cfg.n_linear, cfg.n_frames)}"
        )
    if np.any(mag < 0):
        raise ContractError("magnitude must be nonnegative")
    win = hann(cfg.n_fft)
    frames = np.fft.irfft((mag * np.exp(1j * phase)).T, n=cfg.n_fft, axis=1) * win
    out = np.zeros(cfg.segment_length)
    norm = np.zeros(cfg.segment_length)
    for t in range(cfg.n_frames):
        start = t * cfg.hop
        out[start : start + cfg.n_fft] += frames[t]
        norm[start : start + cfg.n_fft] += win**2
    # Without centring only one frame covers each end, where sum(w^2) -> 0;
    # dividing a masked (no longer window-consistent) frame by it blows the
    # edges up, so the normaliser is floored and the ends taper instead.
    return out / np.maximum(norm, OLA_FLOOR * norm.max())


@lru_cache(maxsize=None)
def make_bin_map(n_linear: int = 512, n_log: int = 256) -> BinMap:
    top = n_linear - 1
    centers = top ** (np.arange(n_log) / (n_log - 1))
    centers[0], centers[-1] = 1.0, float(top)

    # Triangles on the log ladder, evaluated at integer linear bins.  The DC
    # bin sits left of the first centre and is folded into log bin 0.
    k = np.arange(n_linear, dtype=np.float64)
    pos = np.interp(k, centers, np.arange(n_log, dtype=np.float64))
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_log - 1)
    frac = pos - lo
    hats = np.zeros((n_log, n_linear))
    hats[lo, np.arange(n_linear)] += 1.0 - frac
    hats[hi, np.arange(n_linear)] += frac

    # Forward rows: normalised triangle where it spans at least one linear
    # bin's worth of weight, otherwise two-point interpolation at the centre.
    forward = np.zeros((n_log, n_linear))
    mass = hats.sum(axis=1)
    for j in range(n_log):
        if mass[j] >= 1.0:
            forward[j] = hats[j] / mass[j]
        else:
            c = centers[j]
            a = min(int(np.floor(c)), top - 1)
            t = c - a
            forward[j, a] = 1.0 - t
            forward[j, a + 1] += t
    for arr in (centers, hats, forward):
        arr.setflags(write=False)
    return BinMap(centers=centers, hats=hats, forward=forward)


def log_resample(m: np.ndarray, cfg: SpectroConfig = DEFAULT_CONFIG) -> LogSpectrogram:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (cfg.n_linear, cfg.n_frames):
        raise ShapeError(f"expected linear magnitude {(cfg.n_linear, cfg.n_frames)}, got {m.shape}")
    if np.any(m < 0):
        raise ContractError("linear magnitude must be nonnegative")
    bm = make_bin_map(cfg.n_linear, cfg.n_log_bins)
    return LogSpectrogram(values=bm.forward @ m, bin_map=bm)


def mask_to_linear(mask: np.ndarray, cfg: SpectroConfig = DEFAULT_CONFIG) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (cfg.n_log_bins, cfg.n_frames):
        raise ShapeError(f"expected mask {(cfg.n_log_bins, cfg.n_frames)}, got {mask.shape}")
    if np.any(mask < 0) or np.any(mask > 1) or not np.all(np.isfinite(mask)):
        raise ContractError("mask values must lie in [0, 1]")
    bm = make_bin_map(cfg.n_linear, cfg.n_log_bins)
    return np.clip(bm.hats.T @ mask, 0.0, 1.0)


def log_spectrogram(w: np.ndarray, cfg: SpectroConfig = DEFAULT_CONFIG) -> tuple[np.ndarray, ComplexSpectrogram]:
    """Return (log-grid magnitude, linear complex spectrogram) of ``w``."""
    spec = stft(w, cfg)
    return log_resample(spec.magnitude, cfg).values, spec


def read_wav(path: str | Path) -> np.ndarray:
    with wave.open(str(path), "rb") as fh:
        if fh.getframerate() != SAMPLE_RATE:
            raise ContractError(f"{path}: sample rate {fh.getframerate()} Hz, expected {SAMPLE_RATE}")
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ContractError(f"{path}: expected 16-bit PCM mono")
        raw = fh.readframes(fh.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path: str | Path, w: np.ndarray) -> None:
    pcm = np.clip(np.round(np.asarray(w) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())


def write_snapshot(path: str | Path, grid: np.ndarray) -> None:
    grid = np.ascontiguousarray(grid, dtype="<f4")
    if grid.ndim != 2:
        raise ShapeError("snapshots hold 2-D grids")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC + struct.pack("<II", *grid.shape))
        fh.write(grid.tobytes())


def read_snapshot(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != SNAPSHOT_MAGIC:
        raise ContractError(f"{path}: not a spectrogram snapshot")
    rows, cols = struct.unpack("<II", data[8:16])
    body = np.frombuffer(data[16:], dtype="<f4")
    if body.size != rows * cols:
        raise ContractError(f"{path}: header says {rows}x{cols}, body has {body.size} values")
    return body.reshape(rows, cols).astype(np.float64)
