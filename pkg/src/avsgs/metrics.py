"""Whole-signal BSS-eval style SDR / SIR / SAR and manifest evaluation."""
from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

CAP_DB = 100.0


class MetricsError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class EvalResult:
    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray

    @property
    def means(self) -> tuple[float, float, float]:
        return float(np.mean(self.sdr)), float(np.mean(self.sir)), float(np.mean(self.sar))


def _ratio_db(num: float, den: float) -> float:
    if den <= 0.0:
        return CAP_DB if num > 0 else -CAP_DB
    if num <= 0.0:
        return -CAP_DB
    return float(np.clip(10.0 * np.log10(num / den), -CAP_DB, CAP_DB))


def decompose(estimate: np.ndarray, references: np.ndarray, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split ``estimate`` into target, interference and artifact parts for reference ``j``."""
    s = references[j]
    s_target = (estimate @ s) / (s @ s) * s
    coef, *_ = np.linalg.lstsq(references.T, estimate, rcond=None)
    p_all = references.T @ coef
    return s_target, p_all - s_target, estimate - p_all


def bss_eval(references: Sequence[np.ndarray], estimates: Sequence[np.ndarray]) -> EvalResult:
    """Estimate i is scored against reference i; all references span the interference space."""
    refs = np.asarray(references, dtype=np.float64)
    ests = np.asarray(estimates, dtype=np.float64)
    if refs.ndim != 2 or ests.ndim != 2:
        raise MetricsError("expected lists of equal-length 1-D signals")
    if ests.shape[1] != refs.shape[1]:
        raise MetricsError(f"length mismatch: references {refs.shape[1]}, estimates {ests.shape[1]}")
    if ests.shape[0] > refs.shape[0]:
        raise MetricsError("more estimates than references")
    energies = np.einsum("ij,ij->i", refs, refs)
    if np.any(energies == 0):
        raise MetricsError("zero-energy reference")
    sdr, sir, sar = [], [], []
    for j, e in enumerate(ests):
        t, i, a = decompose(e, refs, j)
        tt = t @ t
        sdr.append(_ratio_db(tt, (i + a) @ (i + a)))
        sir.append(_ratio_db(tt, i @ i))
        sar.append(_ratio_db((t + i) @ (t + i), a @ a))
    return EvalResult(np.array(sdr), np.array(sir), np.array(sar))


def best_assignment(references: Sequence[np.ndarray], estimates: Sequence[np.ndarray],
                    extra_references: Sequence[np.ndarray] = ()) -> tuple[tuple[int, ...], EvalResult]:
    """Pick one distinct estimate per reference, maximising summed SDR.

    ``extra_references`` join the projection space (they count as
    interference) but are not scored.
    """
    n = len(references)
    if len(estimates) < n:
        raise MetricsError(f"{len(estimates)} estimates for {n} references")
    all_refs = list(references) + list(extra_references)
    best, best_res = None, None
    for perm in itertools.permutations(range(len(estimates)), n):
        res = bss_eval(all_refs, [estimates[p] for p in perm])
        if best_res is None or res.sdr.sum() > best_res.sdr.sum():
            best, best_res = perm, res
    return best, best_res


# --- manifest evaluation ----------------------------------------------------

@dataclass
class ManifestEntry:
    entry_id: str
    mixture_wav: Path
    reference_wavs: list[Path]
    detection_file: Path
    principal_classes: list[str]
    interference_wavs: list[Path] = field(default_factory=list)

    def assets(self) -> list[Path]:
        return [self.mixture_wav, self.detection_file, *self.reference_wavs, *self.interference_wavs]


def read_manifest(path: str | Path, root: str | Path | None = None) -> list[ManifestEntry]:
    path = Path(path)
    root = Path(root) if root else path.parent
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                entries.append(ManifestEntry(
                    entry_id=str(rec.get("entry_id", f"entry{lineno}")),
                    mixture_wav=root / rec["mixture_wav"],
                    reference_wavs=[root / p for p in rec["reference_wavs"]],
                    detection_file=root / rec["detection_file"],
                    principal_classes=list(rec["principal_classes"]),
                    interference_wavs=[root / p for p in rec.get("interference_wavs", [])],
                ))
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            except (KeyError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: missing field {exc}") from None
    return entries


@dataclass
class EvalRow:
    entry_id: str
    source: int
    sdr: float
    sir: float
    sar: float


@dataclass
class EvalTable:
    rows: list[EvalRow]
    skipped: list[str]

    @property
    def means(self) -> tuple[float, float, float]:
        if not self.rows:
            return (float("nan"),) * 3
        return tuple(float(np.mean([getattr(r, k) for r in self.rows])) for k in ("sdr", "sir", "sar"))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["entry_id", "source", "sdr", "sir", "sar"])
            for r in self.rows:
                w.writerow([r.entry_id, r.source, f"{r.sdr:.4f}", f"{r.sir:.4f}", f"{r.sar:.4f}"])
            sdr, sir, sar = self.means
            w.writerow(["mean", "", f"{sdr:.4f}", f"{sir:.4f}", f"{sar:.4f}"])
            w.writerow(["skipped", len(self.skipped), "", "", ""])


# estimator(entry, mixture, references) -> list of estimate waveforms
Estimator = Callable[[ManifestEntry, np.ndarray, list[np.ndarray]], list[np.ndarray]]


def mixture_estimator(entry, mixture, references):
    return [mixture.copy() for _ in references]


def oracle_estimator(entry, mixture, references):
    return [r.copy() for r in references]


def evaluate(entries: Sequence[ManifestEntry], estimator: Estimator) -> EvalTable:
    from .spectro import read_wav

    rows, skipped = [], []
    for e in entries:
        missing = [str(p) for p in e.assets() if not p.exists()]
        if missing:
            log.warning("skipping %s: missing %s", e.entry_id, ", ".join(missing))
            skipped.append(e.entry_id)
            continue
        mixture = read_wav(e.mixture_wav)
        refs = [read_wav(p) for p in e.reference_wavs]
        extra = [read_wav(p) for p in e.interference_wavs]
        ests = estimator(e, mixture, refs)
        n = len(mixture)
        refs = [r[:n] for r in refs]
        extra = [r[:n] for r in extra]
        _, res = best_assignment(refs, [x[:n] for x in ests], extra)
        for i in range(len(refs)):
            rows.append(EvalRow(e.entry_id, i, float(res.sdr[i]), float(res.sir[i]), float(res.sar[i])))
    return EvalTable(rows, skipped)


def model_estimator(model, spectro, iou_threshold: float = 0.1, max_context: int = 20, seed: int = 0) -> Estimator:
    """Estimator running ``infer_separate`` with the entry's scene graph."""
    from .scenegraph import PrincipalSpec, build_graph, read_detections
    from .trainer import infer_separate

    def run(entry, mixture, references):
        dets = [d for ds in read_detections(entry.detection_file).values() for d in ds]
        spec = PrincipalSpec(tuple(entry.principal_classes), tuple(model.catalog))
        graph = build_graph(dets, spec, iou_threshold, max_context, rng_seed=seed)
        return infer_separate(graph, len(entry.principal_classes), mixture, model, spectro).waveforms

    return run
