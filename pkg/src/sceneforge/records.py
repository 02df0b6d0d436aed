"""On-disk schemas for caption documents.

Three input shapes are accepted wherever documents are read:

* a dataset directory: sidecars listed by ``manifest.json`` (or every
  ``scene_*.json`` when no manifest exists);
* JSON-lines of structured records, or one JSON sidecar / list of records;
* caption text, one record per paragraph (records separated by blank lines).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .caption_codec import CaptionParseError, CaptionSyntaxError, WireOptions, parse_caption, parse_prompt
from .supervision import CaptionDocument, CaptionHeader, GroundTruthEvent, SupervisionParams, TimeSegment

MANIFEST_NAME = "manifest.json"


class DataError(ValueError):
    """Input files that cannot be read as caption documents."""


def event_to_dict(event: GroundTruthEvent) -> dict:
    return {
        "type_tag": event.type_tag,
        "description": event.description,
        "segments": [[s.start_s, s.end_s] for s in event.segments],
        "transcript": event.transcript,
        "source_id": event.source_id,
    }


def event_from_dict(d: dict) -> GroundTruthEvent:
    return GroundTruthEvent(
        d["type_tag"],
        d["description"],
        tuple(TimeSegment(float(a), float(b)) for a, b in d["segments"]),
        d.get("transcript"),
        d.get("source_id"),
    )


def header_to_dict(header: CaptionHeader) -> dict:
    return {
        "total_events": header.total_events,
        "max_overlap": header.max_overlap,
        "type_counts": [[tag, n] for tag, n in header.type_counts],
    }


def document_to_dict(doc: CaptionDocument) -> dict:
    return {
        "header": header_to_dict(doc.header),
        "events": [event_to_dict(e) for e in doc.events],
        "params": doc.params.to_dict() if doc.params else None,
        "duration_s": doc.duration_s,
    }


def document_from_dict(d: dict) -> CaptionDocument:
    """Build a document from a structured record or a sidecar.

    A stored header is kept as written; without one the events are put in
    document order and the header is derived.
    """
    params = SupervisionParams.from_dict(d["params"]) if d.get("params") else None
    duration = float(d["duration_s"]) if d.get("duration_s") is not None else None
    events = [event_from_dict(e) for e in d["events"]]
    header = d.get("header")
    if header is None:
        return CaptionDocument.from_events(events, params, duration)
    return CaptionDocument(
        CaptionHeader(int(header["total_events"]), int(header["max_overlap"]), tuple(map(tuple, header["type_counts"]))),
        tuple(events),
        params,
        duration,
    )


@dataclass(frozen=True)
class TextRecord:
    line: int  # 1-based line of the record's first character
    text: str


def split_text_records(text: str) -> list[TextRecord]:
    records, start, buf = [], None, []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip():
            if start is None:
                start = lineno
            buf.append(line)
        elif buf:
            records.append(TextRecord(start, "\n".join(buf)))
            start, buf = None, []
    if buf:
        records.append(TextRecord(start, "\n".join(buf)))
    return records


def locate(record: TextRecord, exc: CaptionSyntaxError) -> tuple[int, int]:
    """File line and column of a syntax error inside a text record."""
    return record.line + exc.line - 1, exc.column


@dataclass
class LoadedDocument:
    """A document plus where it came from; ``error`` is set when parsing failed."""

    name: str
    document: Optional[CaptionDocument]
    audio_path: Optional[Path] = None
    error: Optional[str] = None


_PROMPT_LINE = re.compile(r"^\s*(?:<\|im_start\|>user\s+)?Describe all events", re.IGNORECASE)


def _parse_text_record(record: TextRecord, path: Path, options: WireOptions) -> LoadedDocument:
    name = f"{path.name}:{record.line}"
    text = record.text
    params = None
    first, _, rest = text.partition("\n")
    if _PROMPT_LINE.match(first) and rest.strip():
        # a prompt line may precede the caption and carries the params
        params = parse_prompt(first)
        text = rest
    try:
        return LoadedDocument(name, parse_caption(text, options, params))
    except CaptionSyntaxError as exc:
        offset = 1 if params is not None else 0
        line, col = locate(TextRecord(record.line + offset, text), exc)
        return LoadedDocument(name, None, error=f"{path}:{line}:{col}: {exc.reason}")
    except CaptionParseError as exc:
        return LoadedDocument(name, None, error=f"{path}:{record.line}: {exc}")


def _sidecar(path: Path) -> LoadedDocument:
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
        doc = document_from_dict(d)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: not a readable sidecar ({exc})") from exc
    audio = path.parent / d["audio"] if d.get("audio") else None
    return LoadedDocument(path.stem, doc, audio)


def load_documents(path, options: WireOptions = WireOptions(), strict: bool = False) -> list[LoadedDocument]:
    """Read every document at ``path``.

    Caption text that fails to parse yields an entry with ``error`` set, or
    raises DataError when ``strict``.
    """
    path = Path(path)
    if path.is_dir():
        manifest = path / MANIFEST_NAME
        if manifest.exists():
            scenes = json.loads(manifest.read_text(encoding="utf-8"))["scenes"]
            return [_sidecar(path / s["sidecar_path"]) for s in scenes]
        return [_sidecar(p) for p in sorted(path.glob("*.json"))]
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    if path.suffix == ".json":
        data = json.loads(text)
        if isinstance(data, dict):
            return [_sidecar(path)]
        return [LoadedDocument(f"{path.name}[{i}]", document_from_dict(d)) for i, d in enumerate(data)]
    if path.suffix == ".jsonl":
        docs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if line.strip():
                try:
                    docs.append(LoadedDocument(f"{path.name}:{lineno}", document_from_dict(json.loads(line))))
                except (KeyError, TypeError, ValueError) as exc:
                    raise DataError(f"{path}:{lineno}: bad record ({exc})") from exc
        return docs

    docs = [_parse_text_record(r, path, options) for r in split_text_records(text)]
    if strict:
        errors = [d.error for d in docs if d.error]
        if errors:
            raise DataError("\n".join(errors))
    return docs


def write_jsonl(docs: Sequence[CaptionDocument], path) -> None:
    lines = [json.dumps(document_to_dict(d), sort_keys=True, ensure_ascii=False) for d in docs]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
