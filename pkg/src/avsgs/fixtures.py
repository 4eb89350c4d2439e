"""Deterministic synthetic corpus: tone-stack audio, detections, captions.

Class k sounds as odd harmonics of 110 * 2**(k/3) Hz under a slow seeded
amplitude envelope.  Odd harmonics keep octave-related classes (k and k+3)
from sharing partials.  Detector features are drawn around a per-class mean
that depends only on the class label, so separately seeded corpora agree on
what each class looks like.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataprep import default_dictionary_path, load_dictionary
from .scenegraph import Detection, iou, write_detections
from .spectro import DEFAULT_CONFIG, SpectroConfig, log_spectrogram, mix, write_wav

FRAME_W, FRAME_H = 640.0, 480.0
N_FRAMES = 4
RAW_DIM = 2048
HARMONICS = (1, 3, 5, 7)
NOISE_STD = 1e-4
MIN_IBM_SHARE = 0.3
FEATURE_SUPPORT = 64
FEATURE_STRAY = 16
CONTEXT_LABELS = ("person", "hand", "table", "floor", "wall", "grass", "chair", "tree")

_TEMPLATES = (
    "a {noun} {word} in the distance",
    "someone films while a {noun} is {word}",
    "{word} from a {noun} with people talking",
    "the {noun} keeps {word} for a while",
)
_NOUNS = {
    "baby": "baby", "bell": "bell", "birds": "bird", "camera": "camera", "clock": "clock",
    "dogs": "dog", "toilet": "toilet", "horse": "horse", "man": "man", "sheep": "goat",
    "telephone": "telephone", "trains": "train", "vehicle": "car", "water": "stream",
}


@dataclass
class SyntheticVideo:
    video_id: str
    class_label: str
    audio: np.ndarray = field(repr=False)
    detections: list[Detection] = field(repr=False)
    caption: str


def fundamental(k: int) -> float:
    return 110.0 * 2.0 ** (k / 3.0)


def class_audio(k: int, rng: np.random.Generator, length: int, sr: int) -> np.ndarray:
    t = np.arange(length) / sr
    f0 = fundamental(k)
    x = np.zeros(length)
    for h in HARMONICS:
        x += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h**2
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    x = 0.25 * env * x + NOISE_STD * rng.standard_normal(length)
    # 16-bit grid so in-memory audio equals what the WAV file holds
    return np.round(x * 32768.0) / 32768.0


def _class_mean(label: str, kind: str) -> np.ndarray:
    # sparse and nonnegative, like pooled post-ReLU detector activations
    rng = np.random.default_rng(zlib.crc32(f"{kind}:{label}".encode()))
    mean = np.zeros(RAW_DIM)
    mean[rng.choice(RAW_DIM, FEATURE_SUPPORT, replace=False)] = rng.uniform(0.5, 1.5, FEATURE_SUPPORT)
    return mean


def _feature(mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    f = mean * rng.uniform(0.7, 1.3, RAW_DIM)
    stray = rng.choice(RAW_DIM, FEATURE_STRAY, replace=False)
    f[stray] += rng.uniform(0.0, 0.5, FEATURE_STRAY)
    return np.round(f, 4)


def _random_box(rng, wmin=60.0, wmax=200.0) -> tuple[float, float, float, float]:
    w, h = rng.uniform(wmin, wmax), rng.uniform(wmin, wmax)
    x0, y0 = rng.uniform(0, FRAME_W - w), rng.uniform(0, FRAME_H - h)
    return (round(x0, 2), round(y0, 2), round(x0 + w, 2), round(y0 + h, 2))


def _context_box(rng, p) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = p
    w, h = x1 - x0, y1 - y0
    while True:
        cx = (x0 + x1) / 2 + rng.uniform(-0.3, 0.3) * w
        cy = (y0 + y1) / 2 + rng.uniform(-0.3, 0.3) * h
        sw, sh = w * rng.uniform(0.6, 1.2), h * rng.uniform(0.6, 1.2)
        box = (round(cx - sw / 2, 2), round(cy - sh / 2, 2), round(cx + sw / 2, 2), round(cy + sh / 2, 2))
        if iou(p, box) > 0.15:
            return box


def _distractor_box(rng, p) -> tuple[float, float, float, float]:
    while True:
        box = _random_box(rng, 30.0, 120.0)
        if iou(p, box) < 0.05:
            return box


def class_detections(label: str, rng: np.random.Generator) -> list[Detection]:
    dets = []
    key = int(rng.integers(N_FRAMES))
    pbox = _random_box(rng)
    dets.append(Detection(label, pbox, _feature(_class_mean(label, "principal"), rng),
                          round(float(rng.uniform(0.8, 0.99)), 4), key))
    ctx_mean = _class_mean(label, "context")
    for _ in range(int(rng.integers(2, 5))):
        dets.append(Detection(str(rng.choice(CONTEXT_LABELS)), _context_box(rng, pbox),
                              _feature(ctx_mean, rng), round(float(rng.uniform(0.3, 0.9)), 4), key))
    for _ in range(int(rng.integers(2, 4))):
        frame = int(rng.integers(N_FRAMES))
        dets.append(Detection(str(rng.choice(CONTEXT_LABELS)), _distractor_box(rng, pbox),
                              _feature(np.zeros(RAW_DIM), rng), round(float(rng.uniform(0.2, 0.7)), 4), frame))
    return dets


def _caption_words(classes: Sequence[str]) -> dict[str, str]:
    d = load_dictionary(default_dictionary_path())
    out = {}
    for c in classes:
        words = sorted((w for w, e in d.items() if e.principal_class == c),
                       key=lambda w: (-d[w].corpus_frequency, w))
        out[c] = words[0]
    return out


def _make_video(k: int, label: str, i: int, seed: int, attempt: int, cfg: SpectroConfig, word: str) -> SyntheticVideo:
    rng = np.random.default_rng([seed, k, i, attempt])
    audio = class_audio(k, rng, cfg.segment_length, cfg.sample_rate)
    dets = class_detections(label, rng)
    template = _TEMPLATES[int(rng.integers(len(_TEMPLATES)))]
    caption = template.format(noun=_NOUNS.get(label, label), word=word)
    return SyntheticVideo(f"{label}_{seed}_{i:03d}", label, audio, dets, caption)


def ibm_shares(a: np.ndarray, b: np.ndarray, cfg: SpectroConfig) -> tuple[float, float]:
    xa, _ = log_spectrogram(a, cfg)
    xb, _ = log_spectrogram(b, cfg)
    return float(np.mean(xa > xb)), float(np.mean(xb > xa))


def generate(n_per_class: int, classes: Sequence[str], seed: int, cfg: SpectroConfig = DEFAULT_CONFIG,
             max_attempts: int = 20) -> list[SyntheticVideo]:
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    words = _caption_words(classes)
    videos: list[SyntheticVideo] = []
    for k, label in enumerate(classes):
        for i in range(n_per_class):
            for attempt in range(max_attempts):
                v = _make_video(k, label, i, seed, attempt, cfg, words[label])
                ok = all(
                    min(ibm_shares(v.audio, o.audio, cfg)) >= MIN_IBM_SHARE
                    for o in videos if o.class_label != label
                )
                if ok:
                    break
            else:
                raise RuntimeError(f"could not generate a separable video for class {label!r}")
            videos.append(v)
    return videos


def make_corpus(n_per_class: int, classes: Sequence[str], seed: int, out_dir: str | Path,
                cfg: SpectroConfig = DEFAULT_CONFIG) -> list[SyntheticVideo]:
    """Write WAVs, per-video detection files, captions and a dataset index."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "detections").mkdir(exist_ok=True)
    videos = generate(n_per_class, classes, seed, cfg)
    with open(out / "captions.jsonl", "w") as cap, open(out / "index.jsonl", "w") as idx:
        for v in videos:
            write_wav(out / "audio" / f"{v.video_id}.wav", v.audio)
            write_detections(out / "detections" / f"{v.video_id}.jsonl", v.video_id, v.detections)
            cap.write(json.dumps({"video_id": v.video_id, "caption": v.caption}) + "\n")
            idx.write(json.dumps({
                "video_id": v.video_id,
                "wav": f"audio/{v.video_id}.wav",
                "detection_file": f"detections/{v.video_id}.jsonl",
                "principal_classes": [v.class_label],
            }) + "\n")
    (out / "catalog.txt").write_text("".join(f"{c}\n" for c in classes))
    return videos


def held_out_pairs(videos: Sequence[SyntheticVideo], n_pairs: int, seed: int) -> list[tuple[SyntheticVideo, SyntheticVideo]]:
    """Cross-class pairs drawn without repeating an unordered pair."""
    rng = np.random.default_rng(seed)
    candidates = [(i, j) for i in range(len(videos)) for j in range(i + 1, len(videos))
                  if videos[i].class_label != videos[j].class_label]
    if len(candidates) < n_pairs:
        raise ValueError(f"only {len(candidates)} cross-class pairs available")
    pick = rng.choice(len(candidates), size=n_pairs, replace=False)
    return [(videos[candidates[p][0]], videos[candidates[p][1]]) for p in sorted(pick)]


def write_pair_manifest(pairs, out_dir: str | Path, name: str = "manifest.jsonl") -> Path:
    """One manifest entry per (pair, video): that video's graph against the pair mixture."""
    out = Path(out_dir)
    (out / "mixtures").mkdir(parents=True, exist_ok=True)
    (out / "audio").mkdir(exist_ok=True)
    (out / "detections").mkdir(exist_ok=True)
    path = out / name
    with open(path, "w") as fh:
        for n, (a, b) in enumerate(pairs):
            mix_name = f"mixtures/pair{n:03d}.wav"
            write_wav(out / mix_name, mix([a.audio, b.audio]))
            for v, other in ((a, b), (b, a)):
                for x in (v, other):
                    write_wav(out / "audio" / f"{x.video_id}.wav", x.audio)
                    write_detections(out / "detections" / f"{x.video_id}.jsonl", x.video_id, x.detections)
                fh.write(json.dumps({
                    "entry_id": f"pair{n:03d}:{v.video_id}",
                    "mixture_wav": mix_name,
                    "reference_wavs": [f"audio/{v.video_id}.wav"],
                    "interference_wavs": [f"audio/{other.video_id}.wav"],
                    "detection_file": f"detections/{v.video_id}.jsonl",
                    "principal_classes": [v.class_label],
                }) + "\n")
    return path
