"""Caption-driven dataset assembly: auditory-word dictionary and filtering."""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .scenegraph import BACKGROUND

# canonical class -> aliases that denote it
CLASS_ALIASES: dict[str, tuple[str, ...]] = {
    "baby": ("baby", "child", "little girl"),
    "bell": ("bell",),
    "birds": ("bird", "birds", "duck", "ducks"),
    "camera": ("camera",),
    "clock": ("clock", "clocks", "clock tower", "alarm clocks"),
    "dogs": ("dog", "dogs"),
    "toilet": ("drain", "toilet", "toilet seat", "toilet bowl"),
    "horse": ("horse", "horses"),
    "man": ("man", "woman", "young man", "people"),
    "sheep": ("sheep", "goat", "goats", "chicken"),
    "telephone": ("telephone",),
    "trains": ("train", "trains", "train car", "train cars", "passenger train", "train engine"),
    "vehicle": ("vehicle", "car", "cars", "truck", "trucks"),
    "water": ("water", "water tank", "water bottle"),
    BACKGROUND: (BACKGROUND,),
}
PRINCIPAL_CLASSES = tuple(c for c in CLASS_ALIASES if c != BACKGROUND)
_ALIAS_TO_CLASS = {a: c for c, aliases in CLASS_ALIASES.items() for a in aliases}
MAX_PRINCIPALS = 2

_TOKEN = re.compile(r"[a-z0-9]+")


class DictionaryError(ValueError):
    pass


@dataclass(frozen=True)
class DictEntry:
    principal_class: str
    corpus_frequency: int


AuditoryDictionary = dict[str, DictEntry]


@dataclass(frozen=True)
class CaptionRecord:
    video_id: str
    caption: str


@dataclass(frozen=True)
class FilteredVideo:
    video_id: str
    principal_classes: tuple[str, ...]
    matched_words: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "video_id": self.video_id,
                "principal_classes": list(self.principal_classes),
                "matched_words": list(self.matched_words),
            }
        )


def canonical_class(field: str) -> str:
    """Collapse a slash-separated alias list to its canonical class."""
    found = {_ALIAS_TO_CLASS.get(a.strip().lower()) for a in field.split("/")}
    if None in found or len(found) != 1:
        raise DictionaryError(f"unknown or ambiguous class {field!r}")
    return found.pop()


def load_dictionary(path: str | Path) -> AuditoryDictionary:
    entries: AuditoryDictionary = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DictionaryError(f"{path}:{lineno}: expected word<TAB>class<TAB>frequency")
            word, cls, freq = (p.strip() for p in parts)
            try:
                entry = DictEntry(canonical_class(cls), int(freq))
            except DictionaryError as exc:
                raise DictionaryError(f"{path}:{lineno}: {exc}") from None
            except ValueError:
                raise DictionaryError(f"{path}:{lineno}: bad frequency {freq!r}") from None
            word = word.lower()
            if word in entries:
                raise DictionaryError(f"{path}:{lineno}: duplicate word {word!r}")
            entries[word] = entry
    return entries


def default_dictionary_path() -> Path:
    return Path(str(resources.files("avsgs") / "data" / "auditory_words.tsv"))


def tokenize(caption: str) -> list[str]:
    return _TOKEN.findall(caption.lower())


def filter_captions(records: Iterable[CaptionRecord], dictionary: Mapping[str, DictEntry]) -> list[FilteredVideo]:
    out = []
    for rec in records:
        words: list[str] = []
        for tok in tokenize(rec.caption):
            if tok in dictionary and tok not in words:
                words.append(tok)
        if not words:
            continue
        score: dict[str, int] = {}
        for w in words:
            e = dictionary[w]
            if e.principal_class != BACKGROUND:
                score[e.principal_class] = score.get(e.principal_class, 0) + e.corpus_frequency
        ranked = sorted(score, key=lambda c: (-score[c], c))[:MAX_PRINCIPALS]
        out.append(FilteredVideo(rec.video_id, tuple(ranked), tuple(words)))
    return out


def class_histogram(filtered: Iterable[FilteredVideo]) -> dict[str, int]:
    hist = dict.fromkeys(PRINCIPAL_CLASSES, 0)
    for v in filtered:
        for c in v.principal_classes:
            hist[c] += 1
    return hist


def read_captions(path: str | Path) -> list[CaptionRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                caption = str(rec["caption"])
                video_id = str(rec["video_id"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if not caption.strip():
                raise ValueError(f"{path}:{lineno}: empty caption")
            out.append(CaptionRecord(video_id, caption))
    return out


def write_filtered(path: str | Path, filtered: Iterable[FilteredVideo]) -> None:
    with open(path, "w") as fh:
        for v in filtered:
            fh.write(v.to_json() + "\n")


def write_histogram(path: str | Path, hist: Mapping[str, int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "videos"])
        for c, n in hist.items():
            w.writerow([c, n])
