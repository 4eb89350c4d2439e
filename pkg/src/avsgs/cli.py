"""Command-line entry point: ``avsgs <subcommand> ...``.

Exit codes: 0 success, 1 contract error (bad inputs to a well-formed
command), 2 usage error (bad flags, unknown config key, missing dataset).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataprep, metrics, scenegraph, spectro, trainer
from .checkpoint import CheckpointError

log = logging.getLogger("avsgs")

EXIT_OK, EXIT_CONTRACT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class ContractFailure(Exception):
    pass


def _add_graph_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--context-iou", type=float, default=scenegraph.DEFAULT_IOU_THRESHOLD)
    p.add_argument("--max-context", type=int, default=scenegraph.DEFAULT_MAX_CONTEXT)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avsgs", description="Scene-graph conditioned audio separation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a dataset index")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--dataset", help="dataset index JSONL (default: $AVSGS_DATA_DIR/index.jsonl)")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--out")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="extra config override")
    _add_graph_flags(p)

    p = sub.add_parser("separate", help="separate one audio file with its scene graph")
    p.add_argument("audio")
    p.add_argument("detections")
    p.add_argument("classes", help="comma-separated principal classes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-sources", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--video-id", help="video to use when the detection file holds several")
    _add_graph_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test manifest")
    p.add_argument("manifest")
    p.add_argument("--checkpoint", help="omit with --estimator to run a reference estimator")
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--estimator", choices=("model", "mixture", "oracle"), default="model")
    p.add_argument("--seed", type=int, default=0)
    _add_graph_flags(p)

    p = sub.add_parser("build-dataset", help="filter captions with the auditory-word dictionary")
    p.add_argument("captions")
    p.add_argument("--dictionary", help="TSV dictionary (default: the bundled list)")
    p.add_argument("--out", required=True, help="output JSONL; a histogram CSV is written next to it")

    p = sub.add_parser("inspect-graph", help="print the scene graph summary")
    p.add_argument("detections")
    p.add_argument("classes", help="comma-separated principal classes")
    p.add_argument("--catalog", help="catalog file (default: the principal classes themselves)")
    p.add_argument("--video-id")
    p.add_argument("--seed", type=int, default=0)
    _add_graph_flags(p)

    p = sub.add_parser("plot-spec", help="render a WAV or spectrogram snapshot as an image")
    p.add_argument("source", help=".wav file or .spec snapshot")
    p.add_argument("out_png")

    p = sub.add_parser("make-fixtures", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", default="dogs,birds,telephone,bell")
    p.add_argument("--n-per-class", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-frames", type=int, default=256)
    p.add_argument("--pairs", type=int, default=0, help="also write a held-out pair manifest")
    return parser


def _classes(arg: str) -> tuple[str, ...]:
    out = tuple(c.strip() for c in arg.split(",") if c.strip())
    if not out:
        raise UsageError("no principal classes given")
    return out


def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ContractFailure(f"{what} not found: {p}")
    return p


def _video_detections(path: Path, video_id: str | None) -> list[scenegraph.Detection]:
    by_video = scenegraph.read_detections(path)
    if video_id is not None:
        if video_id not in by_video:
            raise ContractFailure(f"video {video_id!r} not in {path}")
        return by_video[video_id]
    return [d for ds in by_video.values() for d in ds]


def cmd_train(args) -> int:
    text = ""
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise UsageError(f"config file not found: {cfg_path}")
        text = cfg_path.read_text()
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key, val in (("seed", args.seed), ("max_steps", args.max_steps), ("out", args.out),
                     ("dataset", args.dataset)):
        if val is not None:
            overrides[key] = str(val)
    if args.context_iou != scenegraph.DEFAULT_IOU_THRESHOLD:
        overrides["context_iou_threshold"] = str(args.context_iou)
    if args.max_context != scenegraph.DEFAULT_MAX_CONTEXT:
        overrides["max_context"] = str(args.max_context)
    try:
        cfg = trainer.parse_config(text, overrides)
    except trainer.ConfigError as exc:
        raise UsageError(f"{exc} (key: {exc.key})") from None
    index = Path(cfg.dataset) if cfg.dataset else trainer.data_root() / "index.jsonl"
    if not index.exists():
        raise UsageError(f"dataset index not found: {index}")
    catalog_file = index.parent / "catalog.txt"
    catalog = scenegraph.read_catalog(catalog_file) if catalog_file.exists() else None
    pool = trainer.load_pool(index, cfg, catalog)
    result = trainer.train(cfg, pool, cfg.out, catalog=catalog, progress=print)
    print(f"checkpoint {result.checkpoint}")
    return EXIT_OK


def _load_model(path: str):
    try:
        model, manifest = trainer.load_checkpoint(_require(path, "checkpoint"))
    except CheckpointError as exc:
        raise ContractFailure(str(exc)) from None
    return model, trainer.spectro_from_manifest(manifest)


def cmd_separate(args) -> int:
    classes = _classes(args.classes)
    audio = spectro.read_wav(_require(args.audio, "audio"))
    dets = _video_detections(_require(args.detections, "detections"), args.video_id)
    model, spec = _load_model(args.checkpoint)
    principal = scenegraph.PrincipalSpec(classes, model.catalog)
    graph = scenegraph.build_graph(dets, principal, args.context_iou, args.max_context, rng_seed=args.seed)
    n = args.n_sources if args.n_sources is not None else len(classes)
    sep = trainer.infer_separate(graph, n, audio, model, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [f"source{i}" for i in range(n)] + ["background"]
    for name, wave, mask in zip(names, sep.waveforms, sep.masks):
        spectro.write_wav(out / f"{name}.wav", wave)
        spectro.write_snapshot(out / f"{name}_mask.spec", mask)
        print(out / f"{name}.wav")
    return EXIT_OK


def cmd_eval(args) -> int:
    entries = metrics.read_manifest(_require(args.manifest, "manifest"))
    if not entries:
        raise ContractFailure(f"empty manifest: {args.manifest}")
    if args.estimator == "model":
        if not args.checkpoint:
            raise UsageError("--checkpoint is required with the model estimator")
        model, spec = _load_model(args.checkpoint)
        est = metrics.model_estimator(model, spec, args.context_iou, args.max_context, args.seed)
    else:
        est = {"mixture": metrics.mixture_estimator, "oracle": metrics.oracle_estimator}[args.estimator]
    table = metrics.evaluate(entries, est)
    table.write_csv(args.out)
    sdr, sir, sar = table.means
    print(f"entries {len(entries) - len(table.skipped)} skipped {len(table.skipped)} "
          f"SDR {sdr:.2f} SIR {sir:.2f} SAR {sar:.2f}")
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    dict_path = _require(args.dictionary, "dictionary") if args.dictionary else dataprep.default_dictionary_path()
    dictionary = dataprep.load_dictionary(dict_path)
    records = dataprep.read_captions(_require(args.captions, "captions"))
    filtered = dataprep.filter_captions(records, dictionary)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataprep.write_filtered(out, filtered)
    dataprep.write_histogram(out.with_suffix(".histogram.csv"), dataprep.class_histogram(filtered))
    print(f"retained {len(filtered)} of {len(records)} videos")
    return EXIT_OK


def cmd_inspect_graph(args) -> int:
    classes = _classes(args.classes)
    catalog = scenegraph.read_catalog(_require(args.catalog, "catalog")) if args.catalog else classes
    dets = _video_detections(_require(args.detections, "detections"), args.video_id)
    graph = scenegraph.build_graph(dets, scenegraph.PrincipalSpec(classes, catalog),
                                   args.context_iou, args.max_context, rng_seed=args.seed)
    print(graph.summary())
    return EXIT_OK


def cmd_plot_spec(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    src = _require(args.source, "input")
    if src.suffix.lower() == ".wav":
        w = spectro.read_wav(src)
        grid, _ = spectro.log_spectrogram(spectro.pad_or_trim(w, spectro.DEFAULT_CONFIG.segment_length))
    else:
        grid = spectro.read_snapshot(src)
    img = np.log1p(np.abs(grid))
    lo, hi = float(img.min()), float(img.max())
    fig, ax = plt.subplots(figsize=(5, 4))
    # fixed colour limits keep a constant grid rendering as one flat colour
    ax.imshow(img, origin="lower", aspect="auto", cmap="magma", vmin=lo, vmax=hi if hi > lo else lo + 1.0)
    ax.set_xlabel("frame")
    ax.set_ylabel("log-frequency bin")
    fig.tight_layout()
    fig.savefig(args.out_png, dpi=100)
    plt.close(fig)
    print(args.out_png)
    return EXIT_OK


def cmd_make_fixtures(args) -> int:
    from . import fixtures

    cfg = spectro.SpectroConfig(n_frames=args.n_frames)
    videos = fixtures.make_corpus(args.n_per_class, _classes(args.classes), args.seed, args.out, cfg)
    if args.pairs:
        pairs = fixtures.held_out_pairs(videos, args.pairs, args.seed)
        print(fixtures.write_pair_manifest(pairs, args.out))
    print(f"wrote {len(videos)} videos to {args.out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "separate": cmd_separate,
    "eval": cmd_eval,
    "build-dataset": cmd_build_dataset,
    "inspect-graph": cmd_inspect_graph,
    "plot-spec": cmd_plot_spec,
    "make-fixtures": cmd_make_fixtures,
}

_CONTRACT_ERRORS = (
    ContractFailure,
    scenegraph.PrincipalNotFound,
    scenegraph.DetectionError,
    spectro.ShapeError,
    spectro.LengthError,
    spectro.ContractError,
    metrics.ManifestError,
    metrics.MetricsError,
    dataprep.DictionaryError,
    trainer.TrainingError,
    ValueError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"avsgs {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _CONTRACT_ERRORS as exc:
        print(f"avsgs {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
