from __future__ import annotations

import json
from pathlib import Path

import pytest

from avsgs import dataprep
from avsgs.dataprep import CaptionRecord, DictEntry

DATA = Path(__file__).parent / "data"

SPOT = {
    "flush": ("toilet", 824),
    "chirp": ("birds", 2274),
    "laugh": ("man", 3091),
    "click": ("camera", 913),
    "tick": ("clock", 468),
    "bleat": ("sheep", 583),
    "ringing": ("telephone", 218),
    "honk": ("vehicle", 584),
    "giggling": ("baby", 6),
    "splashing": ("water", 211),
}


def test_fixture_dictionary_filter_matches_golden():
    dic = dataprep.load_dictionary(DATA / "dictionary30.tsv")
    assert len(dic) == 30
    got = [v.to_json() for v in dataprep.filter_captions(dataprep.read_captions(DATA / "captions50.jsonl"), dic)]
    want = (DATA / "filtered50.golden.jsonl").read_text().splitlines()
    assert [json.loads(g) for g in got] == [json.loads(w) for w in want]


def test_full_dictionary_shape_and_spot_frequencies():
    dic = dataprep.load_dictionary(dataprep.default_dictionary_path())
    assert len(dic) == 305
    classes = {e.principal_class for e in dic.values()}
    assert classes == set(dataprep.PRINCIPAL_CLASSES) | {"background"}
    assert len(dataprep.PRINCIPAL_CLASSES) == 14
    for word, (cls, freq) in SPOT.items():
        assert dic[word] == DictEntry(cls, freq), word


def test_scoring_ranks_by_summed_frequency_and_caps_at_two():
    dic = {
        "bark": DictEntry("dogs", 10), "yap": DictEntry("dogs", 5),
        "ring": DictEntry("bell", 12), "tick": DictEntry("clock", 1),
        "hiss": DictEntry("background", 999),
    }
    out = dataprep.filter_captions([CaptionRecord("v", "Bark, yap! A ring and a tick; hiss.")], dic)
    assert out[0].principal_classes == ("dogs", "bell")
    assert out[0].matched_words == ("bark", "yap", "ring", "tick", "hiss")


def test_ties_break_alphabetically_and_background_only_is_kept():
    dic = {"a1": DictEntry("water", 3), "b1": DictEntry("bell", 3), "z": DictEntry("background", 4)}
    out = dataprep.filter_captions([CaptionRecord("t", "a1 b1"), CaptionRecord("bg", "z z"),
                                    CaptionRecord("none", "nothing here")], dic)
    assert [v.video_id for v in out] == ["t", "bg"]
    assert out[0].principal_classes == ("bell", "water")
    assert out[1].principal_classes == () and out[1].matched_words == ("z",)


def test_histogram_counts_every_principal_class():
    filtered = [dataprep.FilteredVideo("a", ("dogs", "bell"), ()), dataprep.FilteredVideo("b", ("dogs",), ())]
    hist = dataprep.class_histogram(filtered)
    assert hist["dogs"] == 2 and hist["bell"] == 1 and hist["water"] == 0
    assert len(hist) == 14


@pytest.mark.parametrize("line, msg", [
    ("bark\tdog/dogs\n", "expected word"),
    ("bark\tunicorn\t5\n", "unknown"),
    ("bark\tdog/dogs\tmany\n", "bad frequency"),
    ("bark\tdog/dogs\t5\nbark\tdog/dogs\t6\n", "duplicate"),
])
def test_dictionary_errors(tmp_path, line, msg):
    p = tmp_path / "d.tsv"
    p.write_text(line)
    with pytest.raises(dataprep.DictionaryError, match=msg):
        dataprep.load_dictionary(p)


def test_caption_reader_errors(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"video_id": "a", "caption": "ok"}\n{"video_id": "b"}\n')
    with pytest.raises(ValueError, match="c.jsonl:2"):
        dataprep.read_captions(p)
    p.write_text('{"video_id": "a", "caption": "  "}\n')
    with pytest.raises(ValueError, match="empty caption"):
        dataprep.read_captions(p)
