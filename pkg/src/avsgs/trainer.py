"""Mix-and-separate training and inference-time separation."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt
from .graphnet import GraphEmbedder
from .losses import (
    LossWeights,
    SpectrogramClassifier,
    consistency_loss,
    cosep_loss,
    ideal_binary_mask,
    label_index,
    ortho_loss,
    total_loss,
)
from .scenegraph import BACKGROUND, PrincipalSpec, SceneGraph, build_graph, read_detections
from .separator import UNetSeparator
from .spectro import (
    SpectroConfig,
    istft_with_mixture_phase,
    log_spectrogram,
    mask_to_linear,
    mix,
    pad_or_trim,
    read_wav,
)

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "l_cons", "l_cosep", "l_ortho", "total")


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str | None = None):
        super().__init__(msg or f"unknown config key {key!r}")
        self.key = key


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    lr_decay_factor: float = 0.1
    lr_decay_interval: int = 15000
    lambda1: float = 1.0
    lambda2: float = 0.05
    lambda3: float = 1.0
    ortho_include_background: bool = False
    max_steps: int = 1000
    seed: int = 0
    context_iou_threshold: float = 0.1
    max_context: int = 20
    accumulate: int = 1
    checkpoint_every: int = 500
    distinct_classes: bool = True
    class_balanced: bool = False
    depth: int = 7
    n_frames: int = 256
    n_log_bins: int = 256
    skip: bool = True
    dataset: str = ""
    out: str = "run"

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)

    @property
    def spectro(self) -> SpectroConfig:
        return SpectroConfig(n_frames=self.n_frames, n_log_bins=self.n_log_bins)

    def lr_at(self, step: int) -> float:
        return self.learning_rate * self.lr_decay_factor ** (step // self.lr_decay_interval)

    def digest(self) -> str:
        items = sorted((k, v) for k, v in asdict(self).items() if k not in ("out", "dataset", "max_steps"))
        return hashlib.sha256(repr(items).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})


def _coerce(key: str, value: str, typ):
    try:
        if typ in (bool, "bool"):
            low = value.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(value)
            return low in ("1", "true", "yes")
        if typ in (int, "int"):
            return int(value)
        if typ in (float, "float"):
            return float(value)
        return value.strip()
    except ValueError:
        raise ConfigError(key, f"bad value {value!r} for config key {key!r}") from None


def parse_config(text: str = "", overrides: dict[str, str] | None = None) -> TrainConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; overrides win."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values: dict[str, object] = {}
    raw: dict[str, str] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"malformed config line {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        raw[k] = v
    raw.update(overrides or {})
    for k, v in raw.items():
        if k not in types:
            raise ConfigError(k)
        values[k] = _coerce(k, str(v), types[k])
    return TrainConfig(**values)


# --- data ------------------------------------------------------------------

@dataclass
class VideoRecord:
    video_id: str
    graph: SceneGraph
    labels: tuple[str, ...]  # principal classes then "background"
    audio: np.ndarray = field(repr=False)

    @property
    def principal_classes(self) -> tuple[str, ...]:
        return self.labels[:-1]


@dataclass
class TrainSample:
    video_a: VideoRecord
    video_b: VideoRecord
    mixture: np.ndarray = field(repr=False)
    mixture_spec: np.ndarray = field(repr=False)
    mixture_phase: np.ndarray = field(repr=False)
    mixture_magnitude: np.ndarray = field(repr=False)
    source_specs: tuple[np.ndarray, np.ndarray] = field(repr=False)

    @property
    def videos(self) -> tuple[VideoRecord, VideoRecord]:
        return (self.video_a, self.video_b)


def data_root(default: str | Path | None = None) -> Path:
    return Path(default or os.environ.get("AVSGS_DATA_DIR", "."))


def make_record(video_id: str, dets, classes: Sequence[str], catalog: Sequence[str],
                audio: np.ndarray, cfg: TrainConfig) -> VideoRecord:
    spec = PrincipalSpec(tuple(classes), tuple(catalog))
    graph = build_graph(dets, spec, cfg.context_iou_threshold, cfg.max_context, rng_seed=cfg.seed)
    return VideoRecord(video_id, graph, spec.classes + (BACKGROUND,), np.asarray(audio, dtype=np.float64))


def load_pool(index_path: str | Path, cfg: TrainConfig, catalog: Sequence[str] | None = None) -> list[VideoRecord]:
    """Read a dataset index (JSON-lines of video_id, wav, detection_file, principal_classes)."""
    index_path = Path(index_path)
    root = index_path.parent
    entries = [json.loads(l) for l in index_path.read_text().splitlines() if l.strip()]
    if catalog is None:
        catalog = sorted({c for e in entries for c in e["principal_classes"]})
    pool = []
    for e in entries:
        dets = read_detections(root / e["detection_file"])[e["video_id"]]
        audio = read_wav(root / e["wav"])
        pool.append(make_record(e["video_id"], dets, e["principal_classes"], catalog, audio, cfg))
    return pool


def pool_catalog(pool: Sequence[VideoRecord]) -> tuple[str, ...]:
    return tuple(sorted({c for v in pool for c in v.principal_classes}))


def make_sample(
    pool: Sequence[VideoRecord],
    rng: np.random.Generator,
    spectro: SpectroConfig,
    distinct_classes: bool = True,
    class_balanced: bool = False,
) -> TrainSample:
    if len(pool) < 2:
        raise ValueError("the pool needs at least two videos")
    if class_balanced:
        by_class: dict[str, list[int]] = {}
        for i, v in enumerate(pool):
            by_class.setdefault(v.principal_classes[0], []).append(i)
        names = sorted(by_class)
        ca, cb = rng.choice(len(names), size=2, replace=False)
        ia = int(rng.choice(by_class[names[ca]]))
        ib = int(rng.choice(by_class[names[cb]]))
    elif distinct_classes:
        ia = int(rng.integers(len(pool)))
        partners = [j for j, v in enumerate(pool)
                    if j != ia and not set(v.principal_classes) & set(pool[ia].principal_classes)]
        if not partners:
            raise ValueError(f"no video with classes disjoint from {pool[ia].video_id}")
        ib = partners[int(rng.integers(len(partners)))]
    else:
        ia, ib = (int(i) for i in rng.choice(len(pool), size=2, replace=False))
    a, b = pool[ia], pool[ib]
    n = spectro.segment_length
    wa, wb = pad_or_trim(a.audio, n), pad_or_trim(b.audio, n)
    mixture = mix([wa, wb])
    mix_log, mix_spec = log_spectrogram(mixture, spectro)
    spec_a, _ = log_spectrogram(wa, spectro)
    spec_b, _ = log_spectrogram(wb, spectro)
    return TrainSample(a, b, mixture, mix_log, mix_spec.phase, mix_spec.magnitude, (spec_a, spec_b))


# --- model -----------------------------------------------------------------

class AVSGSModel(nn.Module):
    def __init__(self, catalog: Sequence[str], depth: int = 7, input_side: int = 256,
                 dim: int = 512, skip: bool = True):
        super().__init__()
        self.catalog = tuple(catalog)
        self.labels = label_index(self.catalog)
        self.arch = {"catalog": list(self.catalog), "depth": depth, "input_side": input_side,
                     "dim": dim, "skip": skip}
        self.embedder = GraphEmbedder(dim)
        self.separator = UNetSeparator(depth, input_side, dim, skip)
        self.classifier = SpectrogramClassifier(len(self.catalog) + 1)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype


def build_model(catalog: Sequence[str], cfg: TrainConfig) -> AVSGSModel:
    if cfg.n_frames != cfg.n_log_bins:
        raise ConfigError("n_frames", "the separator needs a square grid: n_frames must equal n_log_bins")
    torch.manual_seed(cfg.seed)
    return AVSGSModel(catalog, cfg.depth, cfg.n_log_bins, skip=cfg.skip)


@dataclass
class ForwardResult:
    cons: torch.Tensor
    cosep: torch.Tensor
    ortho: torch.Tensor
    total: torch.Tensor
    masks: list[torch.Tensor]
    embeddings: list[torch.Tensor]
    probs: list[torch.Tensor]

    def row(self, step: int) -> list:
        return [step] + [float(t.detach()) for t in (self.cons, self.cosep, self.ortho, self.total)]


def forward(sample: TrainSample, model: AVSGSModel, weights: LossWeights,
            ortho_include_background: bool = False) -> ForwardResult:
    dt = model.dtype
    x = torch.as_tensor(sample.mixture_spec, dtype=dt)
    embs = [model.embedder(v.graph, len(v.labels)) for v in sample.videos]
    Y = torch.cat([e.embeddings for e in embs])
    masks = model.separator(x, Y)
    probs = model.classifier(masks * x)
    counts = [len(v.labels) for v in sample.videos]
    masks_u = list(torch.split(masks, counts))
    probs_u = list(torch.split(probs, counts))
    labels_u = [[model.labels[l] for l in v.labels] for v in sample.videos]
    sa, sb = (torch.as_tensor(s, dtype=dt) for s in sample.source_specs)
    ibms = [ideal_binary_mask(sa, sb), ideal_binary_mask(sb, sa)]
    cons = consistency_loss(probs_u, labels_u)
    cosep = cosep_loss(masks_u, ibms)
    ortho = sum(
        ortho_loss(e.embeddings, v.graph.principal_count, ortho_include_background)
        for e, v in zip(embs, sample.videos)
    )
    total = total_loss(cons, cosep, ortho, weights)
    return ForwardResult(cons, cosep, ortho, total, masks_u, [e.embeddings for e in embs], probs_u)


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(path: str | Path, model: AVSGSModel, step: int, cfg: TrainConfig | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save_tensors(path, model.state_dict())
    ckpt.write_manifest(path, {
        "step": step,
        "config_hash": cfg.digest() if cfg else None,
        "catalog": list(model.catalog),
        "arch": model.arch,
        "spectro": asdict(cfg.spectro) if cfg else None,
    })
    return path


def load_checkpoint(path: str | Path) -> tuple[AVSGSModel, dict]:
    manifest = ckpt.read_manifest(path)
    a = manifest["arch"]
    model = AVSGSModel(a["catalog"], a["depth"], a["input_side"], a["dim"], a["skip"])
    model.load_state_dict(ckpt.load_tensors(path))
    model.eval()
    return model, manifest


def spectro_from_manifest(manifest: dict) -> SpectroConfig:
    return SpectroConfig(**manifest["spectro"]) if manifest.get("spectro") else SpectroConfig()


def identity_mask_(model: AVSGSModel) -> AVSGSModel:
    """Force every mask to 1 (debug checkpoints, pipeline smoke tests)."""
    last = model.separator.up[-1]
    with torch.no_grad():
        last.weight.zero_()
        last.bias.fill_(40.0)
    return model


# --- training --------------------------------------------------------------

@dataclass
class TrainResult:
    model: AVSGSModel
    checkpoint: Path
    rows: list[list]


def train(
    cfg: TrainConfig,
    pool: Sequence[VideoRecord],
    out_dir: str | Path,
    catalog: Sequence[str] | None = None,
    progress: Callable[[str], None] | None = None,
    progress_every: int = 100,
) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    catalog = tuple(catalog) if catalog else pool_catalog(pool)
    model = build_model(catalog, cfg)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2),
                           weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    spectro, weights = cfg.spectro, cfg.weights
    ckpt_path = out / "model.ckpt"
    rows: list[list] = []
    with open(out / "losses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
        for step in range(cfg.max_steps):
            for group in opt.param_groups:
                group["lr"] = cfg.lr_at(step)
            opt.zero_grad()
            sums = np.zeros(4)
            for _ in range(cfg.accumulate):
                sample = make_sample(pool, rng, spectro, cfg.distinct_classes, cfg.class_balanced)
                res = forward(sample, model, weights, cfg.ortho_include_background)
                if not torch.isfinite(res.total):
                    dump = out / f"nonfinite_step{step}.json"
                    dump.write_text(json.dumps({
                        "step": step,
                        "videos": [v.video_id for v in sample.videos],
                        "losses": res.row(step)[1:],
                    }))
                    raise TrainingError(
                        f"non-finite loss at step {step} on sample "
                        f"{sample.video_a.video_id}+{sample.video_b.video_id}; details in {dump}"
                    )
                (res.total / cfg.accumulate).backward()
                sums += res.row(step)[1:]
            opt.step()
            row = [step] + list(sums / cfg.accumulate)
            rows.append(row)
            writer.writerow([step] + [repr(float(v)) for v in row[1:]])
            fh.flush()
            if progress and (step % progress_every == 0 or step == cfg.max_steps - 1):
                progress(f"step {step} lr {cfg.lr_at(step):.1e} total {row[4]:.4f} "
                         f"cons {row[1]:.4f} cosep {row[2]:.2f} ortho {row[3]:.5f}")
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt_path, model, step + 1, cfg)
    save_checkpoint(ckpt_path, model, cfg.max_steps, cfg)
    model.eval()
    return TrainResult(model, ckpt_path, rows)


def read_loss_csv(path: str | Path) -> list[list[str]]:
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- inference -------------------------------------------------------------

@dataclass
class Separation:
    waveforms: list[np.ndarray]
    masks: np.ndarray  # (n_sources + 1, bins, frames) on the log grid
    separated_specs: np.ndarray  # masks * mixture log spectrogram


def infer_separate(
    graph: SceneGraph,
    n_sources: int,
    audio: np.ndarray,
    model: AVSGSModel,
    spectro: SpectroConfig,
) -> Separation:
    if n_sources < 1:
        raise ValueError("n_sources must be >= 1")
    audio = np.asarray(audio, dtype=np.float64)
    w = pad_or_trim(audio, spectro.segment_length)
    x_log, spec = log_spectrogram(w, spectro)
    with torch.no_grad():
        Y = model.embedder(graph, n_sources + 1).embeddings
        masks = model.separator(torch.as_tensor(x_log, dtype=model.dtype), Y).double().numpy()
    waves = []
    for m in masks:
        lin = mask_to_linear(np.clip(m, 0.0, 1.0), spectro)
        est = istft_with_mixture_phase(lin * spec.magnitude, spec.phase, spectro)
        waves.append(pad_or_trim(est, len(audio)))
    return Separation(waves, masks, masks * x_log)
