"""Spatio-temporal scene graphs from per-frame detector output."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .spectro import SNAPSHOT_MAGIC

FEATURE_DIM = 512
RAW_FEATURE_DIMS = (512, 2048)
BACKGROUND = "background"
DEFAULT_IOU_THRESHOLD = 0.1
DEFAULT_MAX_CONTEXT = 20


class PrincipalNotFound(LookupError):
    def __init__(self, class_label: str):
        super().__init__(f"principal not found: no detection of class {class_label!r}")
        self.class_label = class_label


class DetectionError(ValueError):
    pass


Box = tuple[float, float, float, float]


@dataclass(frozen=True, eq=False)
class Detection:
    class_label: str
    box: Box
    feature: np.ndarray = field(repr=False)
    score: float
    frame_index: int

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise DetectionError(f"degenerate box {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise DetectionError(f"score {self.score} outside [0, 1]")
        if len(self.feature) not in RAW_FEATURE_DIMS:
            raise DetectionError(f"feature length {len(self.feature)} not in {RAW_FEATURE_DIMS}")

    def sort_key(self):
        return (-self.score, self.frame_index, self.box, self.class_label)


@dataclass(frozen=True)
class PrincipalSpec:
    classes: tuple[str, ...]
    catalog: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "catalog", tuple(self.catalog))
        if not 1 <= len(self.classes) <= 2:
            raise ValueError(f"a video has 1 or 2 principal classes, got {len(self.classes)}")
        missing = [c for c in self.classes if c not in self.catalog]
        if missing:
            raise ValueError(f"classes {missing} are not in the principal catalog")


@dataclass(frozen=True)
class Node:
    node_id: int
    role: str  # principal | context | background
    class_label: str
    frame_index: int
    feature: np.ndarray = field(repr=False)
    box: Box | None = None
    iou: float | None = None  # context nodes: IoU with their principal


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int], ...]
    principal_count: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def features(self) -> list[np.ndarray]:
        return [n.feature for n in self.nodes]

    def summary(self) -> str:
        lines = [f"nodes={self.n_nodes} edges={len(self.edges)} principals={self.principal_count}"]
        for n in self.nodes:
            extra = f" iou={n.iou:.4f}" if n.iou is not None else ""
            lines.append(f"  [{n.node_id}] {n.role:<10} {n.class_label} frame={n.frame_index}{extra}")
        return "\n".join(lines)


def iou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    ax0, ay0, ax1, ay1 = box_a
    bx0, by0, bx1, by1 = box_b
    if not (ax0 < ax1 and ay0 < ay1 and bx0 < bx1 and by0 < by1):
        raise DetectionError(f"degenerate box in iou({box_a}, {box_b})")
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def select_key_frames(dets: Iterable[Detection], spec: PrincipalSpec) -> dict[str, tuple[int, Detection]]:
    best: dict[str, Detection] = {}
    for d in dets:
        if d.class_label not in spec.classes:
            continue
        cur = best.get(d.class_label)
        if cur is None or d.sort_key() < cur.sort_key():
            best[d.class_label] = d
    for c in spec.classes:
        if c not in best:
            raise PrincipalNotFound(c)
    return {c: (best[c].frame_index, best[c]) for c in spec.classes}


def _crop_feature(crop: Box, frame_dets: list[Detection], dim: int) -> np.ndarray:
    # overlap-area weighted mean of the frame's detector features
    acc = np.zeros(dim)
    total = 0.0
    cx0, cy0, cx1, cy1 = crop
    for d in frame_dets:
        if len(d.feature) != dim:
            continue
        x0, y0, x1, y1 = d.box
        a = max(0.0, min(cx1, x1) - max(cx0, x0)) * max(0.0, min(cy1, y1) - max(cy0, y0))
        if a > 0:
            acc += a * np.asarray(d.feature, dtype=np.float64)
            total += a
    return acc / total if total > 0 else acc


def build_graph(
    dets: Sequence[Detection],
    spec: PrincipalSpec,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    max_context: int = DEFAULT_MAX_CONTEXT,
    rng_seed: int = 0,
) -> SceneGraph:
    dets = sorted(dets, key=Detection.sort_key)
    keys = select_key_frames(dets, spec)
    principal_dets = [keys[c][1] for c in spec.classes]

    nodes: list[Node] = []
    for d in principal_dets:
        nodes.append(Node(len(nodes), "principal", d.class_label, d.frame_index, d.feature, d.box))

    seen: set[int] = {id(d) for d in principal_dets}
    for p in principal_dets:
        candidates = []
        for d in dets:
            if d.frame_index != p.frame_index or d is p:
                continue
            overlap = iou(p.box, d.box)
            if overlap > iou_threshold:
                candidates.append((d, overlap))
        for d, overlap in candidates[:max_context]:
            # a detection shared by two principals' contexts becomes one node
            if id(d) in seen:
                continue
            seen.add(id(d))
            nodes.append(Node(len(nodes), "context", d.class_label, d.frame_index, d.feature, d.box, overlap))

    first = principal_dets[0]
    frame_dets = [d for d in dets if d.frame_index == first.frame_index]
    fx0 = min(d.box[0] for d in frame_dets)
    fy0 = min(d.box[1] for d in frame_dets)
    fx1 = max(d.box[2] for d in frame_dets)
    fy1 = max(d.box[3] for d in frame_dets)
    rng = np.random.default_rng(rng_seed)
    w = (fx1 - fx0) * rng.uniform(0.25, 0.5)
    h = (fy1 - fy0) * rng.uniform(0.25, 0.5)
    x0 = fx0 + rng.uniform(0.0, (fx1 - fx0) - w)
    y0 = fy0 + rng.uniform(0.0, (fy1 - fy0) - h)
    crop = (x0, y0, x0 + w, y0 + h)
    feat = _crop_feature(crop, frame_dets, len(first.feature))
    nodes.append(Node(len(nodes), "background", BACKGROUND, first.frame_index, feat, crop))

    n = len(nodes)
    edges = tuple((j, k) for j in range(n) for k in range(n) if j != k)
    return SceneGraph(nodes=tuple(nodes), edges=edges, principal_count=len(spec.classes))


class FeatureProjector(nn.Module):
    """Map detector features to the common 512-d node width.

    2048-d generic-detector features go through a 2-layer MLP
    (2048 -> 1024 -> 512, LeakyReLU 0.2 in between); 512-d instrument
    features pass through untouched.
    """

    def __init__(self, in_dim: int = 2048, hidden: int = 1024, out_dim: int = FEATURE_DIM):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        width = raw.shape[-1]
        if width == self.out_dim:
            return raw
        if width != self.in_dim:
            raise ValueError(f"feature length {width} not in {(self.out_dim, self.in_dim)}")
        return self.fc2(nn.functional.leaky_relu(self.fc1(raw), 0.2))

    def project_graph(self, graph: SceneGraph) -> torch.Tensor:
        dtype = self.fc1.weight.dtype
        rows = [self(torch.as_tensor(np.asarray(f), dtype=dtype)) for f in graph.features()]
        return torch.stack(rows)


# --- detection files -------------------------------------------------------

def _load_sidecar(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if data[:8] != SNAPSHOT_MAGIC:
        raise DetectionError(f"{path}: bad sidecar header")
    rows, cols = struct.unpack("<II", data[8:16])
    return np.frombuffer(data[16:], dtype="<f4").reshape(rows, cols)


def read_detections(path: str | Path) -> dict[str, list[Detection]]:
    """Parse a detection JSON-lines file into per-video detection lists.

    A record either carries ``feature`` inline or ``feature_offset`` (a row
    index into ``feature_file``, a sidecar resolved relative to ``path``).
    """
    path = Path(path)
    sidecars: dict[str, np.ndarray] = {}
    out: dict[str, list[Detection]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if "feature" in rec:
                    feat = np.asarray(rec["feature"], dtype=np.float64)
                else:
                    side = rec["feature_file"]
                    if side not in sidecars:
                        sidecars[side] = _load_sidecar(path.parent / side)
                    feat = sidecars[side][int(rec["feature_offset"])].astype(np.float64)
                det = Detection(
                    class_label=rec["class_label"],
                    box=tuple(float(v) for v in rec["box"]),
                    feature=feat,
                    score=float(rec["score"]),
                    frame_index=int(rec["frame_index"]),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DetectionError(f"{path}:{lineno}: {exc}") from exc
            out.setdefault(str(rec["video_id"]), []).append(det)
    return out


def write_detections(path: str | Path, video_id: str, dets: Iterable[Detection]) -> None:
    with open(path, "w") as fh:
        for d in dets:
            rec = {
                "video_id": video_id,
                "frame_index": d.frame_index,
                "class_label": d.class_label,
                "box": [float(v) for v in d.box],
                "score": float(d.score),
                "feature": [round(float(v), 6) for v in d.feature],
            }
            fh.write(json.dumps(rec) + "\n")


def read_catalog(path: str | Path) -> tuple[str, ...]:
    return tuple(line.strip() for line in Path(path).read_text().splitlines() if line.strip())
