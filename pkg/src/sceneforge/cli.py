"""Command-line front end: generate, evaluate, sweep, parse, format, timeline.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from . import audio
from .audio import AudioError
from .caption_codec import CaptionParseError, WireOptions, format_caption
from .eval import (
    BackendError,
    BuiltinJudge,
    EvalConfig,
    MetricsReport,
    OracleScorer,
    aggregate,
    evaluate,
)
from .pipeline import dump_json, generate_dataset
from .records import DataError, LoadedDocument, load_documents, write_jsonl
from .scene import LibraryError, SceneConstraintError, TemplateError, load_sources, load_template
from .supervision import CaptionDocument, SupervisionParams
from .timeline import render_timeline

log = logging.getLogger("sceneforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3
SWEEP_COLUMNS = ("Style", "Merge", "Activity", "Resolution", "EvtF1", "SegF1", "Hal%", "Conf", "Spec")
DATA_ERRORS = (
    DataError,
    CaptionParseError,
    TemplateError,
    LibraryError,
    SceneConstraintError,
    AudioError,
    OSError,
    ValueError,
    KeyError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# Backends and evaluation


def build_judge(args):
    if args.judge == "builtin":
        return BuiltinJudge()
    from .backends import HttpJudge

    url = os.environ.get("FORGE_JUDGE_URL") or args.judge_url
    if not url:
        raise UsageError("--judge http needs --judge-url or FORGE_JUDGE_URL")
    return HttpJudge(url, max_concurrency=args.workers)


def build_scorer(args):
    if args.scorer == "oracle":
        return None
    from .backends import HttpScorer

    url = os.environ.get("FORGE_SCORER_URL") or args.scorer_url
    if not url:
        raise UsageError("--scorer http needs --scorer-url or FORGE_SCORER_URL")
    return HttpScorer(url, max_concurrency=args.workers)


def eval_config(args) -> EvalConfig:
    return EvalConfig(collar_s=args.collar, seg_resolution_s=args.seg_resolution, tau=args.tau)


def evaluate_sets(
    refs: Sequence[LoadedDocument],
    preds: Sequence[LoadedDocument],
    judge,
    scorer,
    config: EvalConfig,
    workers: int = 1,
) -> dict:
    """Per-clip and dataset reports. Unparseable predictions score as empty."""
    if len(refs) != len(preds):
        raise DataError(f"clip count mismatch: {len(refs)} references, {len(preds)} predictions")

    def one(pair):
        ref, pred = pair
        pred_doc = pred.document if pred.document is not None else CaptionDocument.from_events([])
        clip_audio = None
        if scorer is not None:
            if ref.audio_path is None:
                raise DataError(f"{ref.name}: remote scorer needs the reference audio")
            clip_audio = audio.load_clip(ref.audio_path)
        clip_scorer = scorer if scorer is not None else OracleScorer(ref.document, ref.document.duration_s)
        return evaluate(pred_doc, ref.document, judge, clip_scorer, config, clip_audio)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        reports: list[MetricsReport] = list(pool.map(one, zip(refs, preds)))
    dataset = aggregate(reports, config.tau)
    clips = []
    for ref, pred, report in zip(refs, preds, reports):
        entry = {"ref": ref.name, "pred": pred.name, "report": report.to_dict()}
        if pred.error:
            entry["parse_error"] = pred.error
        clips.append(entry)
    return {"config": asdict(config), "dataset": dataset.to_dict(), "clips": clips}


def _fmt(value, digits=3) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def _summary_line(dataset: dict) -> str:
    return (
        f"EvtF1 {_fmt(dataset['evt_f1'])}  SegF1 {_fmt(dataset['seg_f1'])}  Hal% {_fmt(dataset['hal_pct'], 1)}  "
        f"Conf {_fmt(dataset['conf'], 2)}  Spec {_fmt(dataset['spec'], 2)}  ({dataset['n_clips']} clips)"
    )


# --------------------------------------------------------------------------
# Commands


def cmd_generate(args) -> int:
    template = load_template(args.template)
    library = load_sources(args.sources)
    manifest = generate_dataset(
        template,
        library,
        count=args.count,
        seed=args.seed,
        out_dir=args.out,
        sample_rate=args.sample_rate,
        workers=args.workers,
        wav_format=args.wav_format,
        template_path=args.template,
        sources_path=args.sources,
    )
    print(f"wrote {len(manifest['scenes'])} scenes to {args.out} ({len(manifest['skipped'])} skipped)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    refs = load_documents(args.refs, strict=True)
    preds = load_documents(args.preds, wire_options(args))
    for p in preds:
        if p.error:
            log.warning("unparseable prediction scored as empty: %s", p.error)
    result = evaluate_sets(refs, preds, build_judge(args), build_scorer(args), eval_config(args), args.workers)
    if args.report:
        dump_json(result, Path(args.report))
    print(_summary_line(result["dataset"]))
    return EXIT_OK


def sweep_key(params: SupervisionParams) -> str:
    return f"{params.style}_merge{params.merge_s:.2f}_act{params.activity:.2f}_res{params.resolution_s:.2f}"


def load_grid(path) -> list[SupervisionParams]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data.get("tuples", [])
    grid, seen = [], set()
    for i, entry in enumerate(data):
        try:
            params = SupervisionParams.from_dict(entry).quantized()
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: grid entry {i} is invalid ({exc})") from exc
        if params in seen:
            raise DataError(f"{path}: duplicate grid tuple {sweep_key(params)}")
        seen.add(params)
        grid.append(params)
    return grid


def find_prediction_set(preds_dir: Path, params: SupervisionParams) -> Path:
    key = sweep_key(params)
    for candidate in (preds_dir / key, *(preds_dir / f"{key}{ext}" for ext in (".txt", ".jsonl", ".json"))):
        if candidate.exists():
            return candidate
    raise DataError(f"no prediction set for {key} in {preds_dir}")


def sweep_row(params: SupervisionParams, dataset: dict) -> dict:
    return {
        "Style": params.style,
        "Merge": params.merge_s,
        "Activity": params.activity,
        "Resolution": params.resolution_s,
        "EvtF1": dataset["evt_f1"],
        "SegF1": dataset["seg_f1"],
        "Hal%": dataset["hal_pct"],
        "Conf": dataset["conf"],
        "Spec": dataset["spec"],
    }


def cmd_sweep(args) -> int:
    grid = load_grid(args.grid)
    refs = load_documents(args.refs, strict=True)
    preds_dir = Path(args.preds)
    sets = [(params, find_prediction_set(preds_dir, params)) for params in grid]
    judge, scorer, config = build_judge(args), build_scorer(args), eval_config(args)
    rows, details = [], []
    for params, path in sets:
        result = evaluate_sets(refs, load_documents(path, wire_options(args)), judge, scorer, config, args.workers)
        rows.append(sweep_row(params, result["dataset"]))
        details.append({"key": sweep_key(params), "predictions": str(path), "dataset": result["dataset"]})
    if args.report:
        report = Path(args.report)
        if report.suffix == ".csv":
            buf = io.StringIO()
            writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
            report.write_text(buf.getvalue(), encoding="utf-8")
        else:
            dump_json({"columns": list(SWEEP_COLUMNS), "rows": rows, "details": details}, report)
    print("  ".join(SWEEP_COLUMNS))
    for row in rows:
        print(
            f"{row['Style']}  {row['Merge']:.2f}  {row['Activity']:.2f}  {row['Resolution']:.2f}  "
            f"{_fmt(row['EvtF1'], 2)}  {_fmt(row['SegF1'], 2)}  {_fmt(row['Hal%'], 1)}  "
            f"{_fmt(row['Conf'], 2)}  {_fmt(row['Spec'], 2)}"
        )
    return EXIT_OK


def wire_options(args) -> WireOptions:
    return WireOptions(
        timestamp_style=getattr(args, "timestamp_style", "tokenized"),
        decimals=getattr(args, "decimals", None),
        include_chat_wrapper=getattr(args, "chat_wrapper", False),
        include_header=not getattr(args, "no_header", False),
    )


def cmd_parse(args) -> int:
    docs = load_documents(args.input, wire_options(args), strict=True)
    write_jsonl([d.document for d in docs], args.out)
    print(f"parsed {len(docs)} records")
    return EXIT_OK


def cmd_format(args) -> int:
    options = wire_options(args)
    docs = load_documents(args.input, options, strict=True)
    texts = [format_caption(d.document, options) for d in docs]
    Path(args.out).write_text("".join(t + "\n\n" for t in texts).rstrip("\n") + ("\n" if texts else ""), encoding="utf-8")
    print(f"formatted {len(texts)} records")
    return EXIT_OK


def cmd_timeline(args) -> int:
    docs = load_documents(args.input, strict=True)
    if docs and not 0 <= args.index < len(docs):
        raise DataError(f"record index {args.index} out of range (found {len(docs)})")
    doc = docs[args.index].document if docs else CaptionDocument.from_events([])
    Path(args.out).write_text(render_timeline(doc, args.duration), encoding="utf-8")
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing


def _add_wire_flags(p):
    p.add_argument("--timestamp-style", choices=("tokenized", "plain"), default="tokenized")
    p.add_argument("--decimals", type=int, default=None, help="plain-style decimals (default: from resolution)")
    p.add_argument("--chat-wrapper", action="store_true", help="wrap captions in assistant turn markers")
    p.add_argument("--no-header", action="store_true", help="omit the summary header")


def _add_eval_flags(p):
    p.add_argument("--refs", required=True, help="dataset directory, JSON/JSONL records or caption text")
    p.add_argument("--judge", choices=("builtin", "http"), default="builtin")
    p.add_argument("--judge-url")
    p.add_argument("--scorer", choices=("oracle", "http"), default="oracle")
    p.add_argument("--scorer-url")
    p.add_argument("--collar", type=float, default=1.0, help="onset collar in seconds")
    p.add_argument("--seg-resolution", type=float, default=0.1, help="segment-F1 bin width in seconds")
    p.add_argument("--tau", type=float, default=0.25, help="hallucination confidence threshold")
    p.add_argument("--report", help="write the full report here")
    p.add_argument("--workers", type=int, default=1)
    _add_wire_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sceneforge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="render a dataset of mixed scenes with captions")
    p.add_argument("--template", required=True)
    p.add_argument("--sources", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-rate", type=int, default=audio.DEFAULT_SAMPLE_RATE)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--wav-format", choices=("pcm16", "float32"), default="pcm16")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score predicted captions against references")
    p.add_argument("--preds", required=True)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate one prediction set per parameter tuple")
    p.add_argument("--grid", required=True)
    p.add_argument("--preds", required=True, help="directory holding one prediction set per tuple")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("parse", help="caption text to JSON-lines records")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    _add_wire_flags(p)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("format", help="records or captions to canonical caption text")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    _add_wire_flags(p)
    p.set_defaults(func=cmd_format)

    p = sub.add_parser("timeline", help="render one document as an SVG of temporal lanes")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--index", type=int, default=0, help="which record to draw")
    p.add_argument("--duration", type=float, default=None, help="time axis length in seconds")
    p.set_defaults(func=cmd_timeline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    if getattr(args, "count", 0) < 0:
        parser.error("--count must be >= 0")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sceneforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        print(f"sceneforge: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except DATA_ERRORS as exc:
        print(f"sceneforge: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
