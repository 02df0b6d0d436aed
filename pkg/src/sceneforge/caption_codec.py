"""Wire format for timestamped caption documents and conditioning prompts.

A caption body looks like::

    3 events total. 2 events overlap. 2 sound effects, 1 music. [music] Background
    jazz music plays softly from <|0.00|>s to <|10.00|>s. [sfx] A dog barks ...

Timestamps are either atomic tokens (``<|0.50|>s``) or plain decimals
(``0.5s``). The parser accepts both, an optional header and an optional
chat envelope, and reports errors with line/column positions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Mapping, Optional

from .supervision import (
    TYPE_TAGS,
    CaptionDocument,
    CaptionHeader,
    GroundTruthEvent,
    SupervisionParams,
    TimeSegment,
    compute_header,
)

PROMPT_TEXT = "Describe all events in the audio. Give start and end times."
USER_OPEN = "<|im_start|>user "
ASSISTANT_OPEN = "<|im_start|>assistant "
TURN_CLOSE = "<|im_end|>"

MAX_TIME_S = 10_000.0
TOKEN_DECIMALS = 2

TYPE_LABELS = {
    "sfx": ("sound effect", "sound effects"),
    "music": ("music", "music"),
    "speech": ("speech", "speech"),
    "background": ("background", "background"),
}


class CaptionParseError(ValueError):
    pass


class CaptionSyntaxError(CaptionParseError):
    def __init__(self, message: str, text: str, pos: int):
        self.pos = pos
        self.line = text.count("\n", 0, pos) + 1
        self.column = pos - (text.rfind("\n", 0, pos) + 1) + 1
        self.reason = message
        super().__init__(f"line {self.line}, column {self.column}: {message}")


class CaptionSemanticError(CaptionParseError):
    def __init__(self, message: str, event_index: int):
        self.event_index = event_index
        self.reason = message
        super().__init__(f"event {event_index}: {message}")


@dataclass(frozen=True)
class WireOptions:
    timestamp_style: str = "tokenized"
    decimals: Optional[int] = None
    include_chat_wrapper: bool = False
    include_header: bool = True

    def __post_init__(self):
        if self.timestamp_style not in ("tokenized", "plain"):
            raise ValueError(f"unknown timestamp_style {self.timestamp_style!r}")
        if self.decimals is not None and not 0 <= self.decimals <= 3:
            raise ValueError("decimals must lie in [0, 3]")
        if self.timestamp_style == "tokenized" and self.decimals not in (None, TOKEN_DECIMALS):
            raise ValueError("tokenized timestamps always use 2 decimals")


@dataclass(frozen=True)
class CharSpan:
    start: int
    end: int
    kind: str = "timestamp"


# --------------------------------------------------------------------------
# Prompts

_PROMPT_RE = re.compile(
    r"\[style=(?P<style>\w+),\s*merge=(?P<merge>\d+(?:\.\d+)?)s,\s*activity=(?P<activity>\d+(?:\.\d+)?),"
    r"\s*resolution=(?P<resolution>\d+(?:\.\d+)?)s\]"
)


def format_prompt(params: SupervisionParams, include_chat_wrapper: bool = False) -> str:
    body = (
        f"{PROMPT_TEXT} [style={params.style}, merge={params.merge_s:.2f}s, "
        f"activity={params.activity:.2f}, resolution={params.resolution_s:.2f}s]"
    )
    if include_chat_wrapper:
        return f"{USER_OPEN}{body} {TURN_CLOSE}"
    return body


def parse_prompt(text: str) -> SupervisionParams:
    m = _PROMPT_RE.search(text)
    if m is None:
        raise CaptionParseError(f"no parameter block in prompt {text!r}")
    return SupervisionParams(
        m["style"], float(m["merge"]), float(m["activity"]), float(m["resolution"])
    )


# --------------------------------------------------------------------------
# Formatting


def _plural(n: int, singular: str, plural: str) -> str:
    return singular if n == 1 else plural


def format_header(header: CaptionHeader) -> str:
    parts = [f"{header.total_events} {_plural(header.total_events, 'event', 'events')} total."]
    if header.max_overlap >= 2:
        parts.append(f"{header.max_overlap} events overlap.")
    if header.type_counts:
        tally = ", ".join(
            f"{count} {_plural(count, *TYPE_LABELS.get(tag, (tag, tag)))}" for tag, count in header.type_counts
        )
        parts.append(tally + ".")
    return " ".join(parts)


def _decimals_needed(doc: CaptionDocument) -> int:
    times = [t for e in doc.events for s in e.segments for t in (s.start_s, s.end_s)]
    for d in (1, 2, 3):
        if all(round(t, d) == t for t in times):
            return d
    return 3


def plain_decimals(doc: CaptionDocument, options: WireOptions) -> int:
    if options.decimals is not None:
        return options.decimals
    if doc.params is not None:
        return max(0, min(3, math.ceil(-math.log10(doc.params.resolution_s) - 1e-9)))
    return _decimals_needed(doc)


def format_time(t: float, style: str, decimals: int = TOKEN_DECIMALS) -> str:
    if style == "tokenized":
        return f"<|{t:.{TOKEN_DECIMALS}f}|>s"
    return f"{t:.{decimals}f}s"


def format_event(event: GroundTruthEvent, style: str = "tokenized", decimals: int = TOKEN_DECIMALS) -> str:
    ranges = ", ".join(
        f"{format_time(s.start_s, style, decimals)} to {format_time(s.end_s, style, decimals)}" for s in event.segments
    )
    line = f"[{event.type_tag}] {event.description} from {ranges}."
    if event.transcript is not None:
        line += f" <speech>{event.transcript}</speech>"
    return line


def format_caption(doc: CaptionDocument, options: WireOptions = WireOptions()) -> str:
    decimals = plain_decimals(doc, options) if options.timestamp_style == "plain" else TOKEN_DECIMALS
    parts = []
    if options.include_header:
        parts.append(format_header(doc.header))
    parts.extend(format_event(e, options.timestamp_style, decimals) for e in doc.events)
    body = " ".join(parts)
    if options.include_chat_wrapper:
        return f"{ASSISTANT_OPEN}{body}{TURN_CLOSE}"
    return body


# --------------------------------------------------------------------------
# Parsing

_WS = re.compile(r"\s*")
_TAG = re.compile(r"\[([^\[\]\s]*)\]")
_NEXT_TAG = re.compile(r"\[[A-Za-z_]+\]")
_FROM = re.compile(r"(?<=\s)from(?=\s)")
_TOKEN_TIME = re.compile(r"<\|(\d+(?:\.\d+)?)\|>s")
_PLAIN_TIME = re.compile(r"(\d+(?:\.\d+)?)s(?![A-Za-z0-9_])")
_TO = re.compile(r"\s+to\s+")
_COMMA = re.compile(r"\s*,\s*")
_SPEECH = re.compile(r"\s*<speech(?:\s[^>]*)?>(.*?)</speech>", re.DOTALL)
_TOTAL = re.compile(r"(\d+) events? total\.")
_OVERLAP = re.compile(r"\s*(\d+) events? overlaps?\.")

_LABEL_TO_TAG = {}
for _tag, (_one, _many) in TYPE_LABELS.items():
    _LABEL_TO_TAG[_one] = _tag
    _LABEL_TO_TAG[_many] = _tag
_LABEL_ALT = "|".join(sorted((re.escape(k) for k in _LABEL_TO_TAG), key=len, reverse=True))
_COUNT = re.compile(rf"(\d+) ({_LABEL_ALT})")


@dataclass
class _Time:
    value: float
    span: tuple[int, int]  # characters of the number or token, without the trailing "s"


@dataclass
class _RawEvent:
    tag: str
    description: str
    ranges: list  # [(_Time, _Time)]
    transcript: Optional[str]
    pos: int


class _Parser:
    """Recursive-descent parser over text[lo:hi]."""

    def __init__(self, text: str):
        self.text = text
        self.lo, self.hi = self._body_bounds(text)
        self.pos = self.lo

    @staticmethod
    def _body_bounds(text: str) -> tuple[int, int]:
        lo, hi = 0, len(text)
        while lo < hi and text[lo].isspace():
            lo += 1
        while hi > lo and text[hi - 1].isspace():
            hi -= 1
        if text.startswith(ASSISTANT_OPEN.strip(), lo):
            lo += len(ASSISTANT_OPEN.strip())
        if text.endswith(TURN_CLOSE, lo, hi):
            hi -= len(TURN_CLOSE)
        return lo, hi

    def error(self, message: str, pos: Optional[int] = None) -> CaptionSyntaxError:
        return CaptionSyntaxError(message, self.text, self.pos if pos is None else pos)

    def match(self, pattern: re.Pattern, pos: Optional[int] = None):
        return pattern.match(self.text, self.pos if pos is None else pos, self.hi)

    def skip_ws(self, pos: int) -> int:
        return self.match(_WS, pos).end()

    def at_end(self, pos: int) -> bool:
        return pos >= self.hi

    # Document := [Header] EventLine*
    def parse(self) -> tuple[Optional[CaptionHeader], list[_RawEvent]]:
        self.pos = self.skip_ws(self.pos)
        header = None
        if not self.at_end(self.pos) and self.text[self.pos] != "[":
            header = self.parse_header()
        events = []
        while True:
            self.pos = self.skip_ws(self.pos)
            if self.at_end(self.pos):
                break
            events.append(self.parse_event())
        return header, events

    def parse_header(self) -> CaptionHeader:
        m = self.match(_TOTAL)
        if m is None:
            raise self.error("expected a header such as 'N events total.' or an event '[tag]'")
        total = int(m[1])
        self.pos = m.end()
        overlap = None
        m = self.match(_OVERLAP)
        if m is not None:
            overlap = int(m[1])
            self.pos = m.end()
        counts = []
        start = self.skip_ws(self.pos)
        m = self.match(_COUNT, start)
        if m is not None:
            pos = start
            while True:
                m = self.match(_COUNT, pos)
                if m is None:
                    raise self.error("expected '<count> <type>' in header tally", pos)
                counts.append((_LABEL_TO_TAG[m[2]], int(m[1])))
                pos = m.end()
                if self.text.startswith(", ", pos):
                    pos += 2
                    continue
                if self.text.startswith(".", pos):
                    pos += 1
                    break
                raise self.error("expected ',' or '.' in header tally", pos)
            self.pos = pos
        if overlap is None:
            # an omitted overlap clause means no two events overlap
            overlap = min(total, 1)
        return CaptionHeader(total, overlap, tuple(counts))

    # EventLine := "[" tag "]" description "from" RangeList ["."] [SpeechSpan]
    def parse_event(self) -> _RawEvent:
        start = self.pos
        m = self.match(_TAG)
        if m is None:
            raise self.error("expected '[tag]' at start of event")
        tag = m[1]
        if tag not in TYPE_TAGS:
            raise self.error(f"unknown type tag {tag!r}", start + 1)
        desc_start = self.skip_ws(m.end())

        # the description ends at the first " from " whose range list closes the event
        for fm in _FROM.finditer(self.text, desc_start, self.hi):
            description = self.text[desc_start: fm.start()].strip()
            if not description:
                continue
            parsed = self.parse_range_list(self.skip_ws(fm.end()))
            if parsed is None:
                continue
            ranges, pos = parsed
            closing = self.parse_terminal(pos)
            if closing is None:
                continue
            transcript, self.pos = closing
            return _RawEvent(tag, description, ranges, transcript, start)
        raise self.error("event has no closing 'from <time> to <time>' range list", start)

    # RangeList := Range ("," Range)*
    def parse_range_list(self, pos: int):
        first = self.parse_range(pos)
        if first is None:
            return None
        ranges = [first[0]]
        pos = first[1]
        while True:
            m = self.match(_COMMA, pos)
            if m is None:
                break
            nxt = self.parse_range(m.end())
            if nxt is None:
                break
            ranges.append(nxt[0])
            pos = nxt[1]
        return ranges, pos

    # Range := Time "to" Time
    def parse_range(self, pos: int):
        t1 = self.parse_time(pos)
        if t1 is None:
            return None
        m = self.match(_TO, t1[1])
        if m is None:
            return None
        t2 = self.parse_time(m.end())
        if t2 is None:
            return None
        return (t1[0], t2[0]), t2[1]

    # Time := "<|d.dd|>s" | decimal "s"
    def parse_time(self, pos: int):
        m = self.match(_TOKEN_TIME, pos) or self.match(_PLAIN_TIME, pos)
        if m is None:
            return None
        span = (m.start(), m.end() - 1)
        return _Time(float(m[1]), span), m.end()

    def parse_terminal(self, pos: int):
        """After a range list: ["."] [SpeechSpan] ["."], then end of text or the next '[tag]'."""
        transcript = None
        if self.text.startswith(".", pos) and pos < self.hi:
            pos += 1
        m = self.match(_SPEECH, pos)
        if m is not None:
            transcript = m[1]
            pos = m.end()
            if self.text.startswith(".", pos) and pos < self.hi:
                pos += 1
        nxt = self.skip_ws(pos)
        if self.at_end(nxt) or self.match(_NEXT_TAG, nxt) is not None:
            return transcript, pos
        return None


def _parse(text: str):
    parser = _Parser(text)
    header, raw_events = parser.parse()
    return parser, header, raw_events


def _build_events(parser: _Parser, raw_events: list[_RawEvent]) -> list[GroundTruthEvent]:
    events = []
    for index, raw in enumerate(raw_events):
        segments = []
        previous_end = None
        for t1, t2 in raw.ranges:
            for t in (t1, t2):
                if t.value > MAX_TIME_S:
                    raise parser.error(f"time {t.value:g}s exceeds {MAX_TIME_S:g}s", t.span[0])
            if t2.value <= t1.value:
                raise CaptionSemanticError(f"range end {t2.value:g}s is not after start {t1.value:g}s", index)
            if previous_end is not None and t1.value < previous_end:
                raise CaptionSemanticError("time ranges are not in order", index)
            previous_end = t2.value
            segments.append(TimeSegment(t1.value, t2.value))
        events.append(GroundTruthEvent(raw.tag, raw.description, tuple(segments), raw.transcript))
    return events


def parse_caption(
    text: str,
    options: WireOptions = WireOptions(),
    params: Optional[SupervisionParams] = None,
    duration_s: Optional[float] = None,
) -> CaptionDocument:
    """Parse a caption body back into a document.

    Events keep their textual order. A header present in the text is kept
    as written; otherwise it is recomputed from the events. ``params`` and
    ``duration_s`` are not part of the wire format and are attached as given.
    """
    parser, header, raw_events = _parse(text)
    events = _build_events(parser, raw_events)
    if header is None:
        header = compute_header(events)
    return CaptionDocument(header, tuple(events), params, duration_s)


def timestamp_spans(text: str) -> list[CharSpan]:
    """Character spans of every timestamp in a serialized caption, in order.

    Tokenized timestamps cover the whole ``<|d.dd|>`` token; plain ones
    cover the decimal literal.
    """
    try:
        _, _, raw_events = _parse(text)
    except CaptionParseError:
        return [CharSpan(m.start(), m.end() - 1) for m in _TOKEN_TIME.finditer(text)]
    return [CharSpan(*t.span) for raw in raw_events for pair in raw.ranges for t in pair]


def expand_speech(doc: CaptionDocument, transcripts: Mapping[int, str]) -> CaptionDocument:
    """Attach transcripts to speech events, keyed by event index."""
    events = list(doc.events)
    for index, text in transcripts.items():
        if not 0 <= index < len(events):
            raise IndexError(f"no event {index}")
        if events[index].type_tag != "speech":
            raise ValueError(f"event {index} is [{events[index].type_tag}], not [speech]")
        events[index] = replace(events[index], transcript=text)
    return replace(doc, events=tuple(events))
