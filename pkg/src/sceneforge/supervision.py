"""Ground-truth generation: activity maps to merged, rounded, timestamped caption documents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .audio import ActivityMap

if TYPE_CHECKING:
    from .scene import EventPlan

STYLES = ("keywords", "brief", "detailed")
TYPE_TAGS = ("music", "sfx", "speech", "background")

# tie-break for events starting together
EVENT_TAG_ORDER = {"music": 0, "sfx": 1, "speech": 2, "background": 3}
# tie-break for equal counts in the header tally
HEADER_TAG_ORDER = {"sfx": 0, "music": 1, "speech": 2, "background": 3}

HEADER_GRID_S = 0.01
_TIME_DECIMALS = 6


class EmptySceneError(ValueError):
    """Every event was silenced by the supervision thresholds."""


@dataclass(frozen=True)
class SupervisionParams:
    style: str
    merge_s: float
    activity: float
    resolution_s: float

    def __post_init__(self):
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}")
        if not self.merge_s > 0:
            raise ValueError("merge_s must be positive")
        if not 0 < self.activity < 1:
            raise ValueError("activity must lie in (0, 1)")
        if not self.resolution_s > 0:
            raise ValueError("resolution_s must be positive")

    def quantized(self, decimals: int = 2) -> "SupervisionParams":
        """Round merge/activity/resolution to the precision the prompt prints."""
        return replace(
            self,
            merge_s=round(self.merge_s, decimals),
            activity=round(self.activity, decimals),
            resolution_s=round(self.resolution_s, decimals),
        )

    def to_dict(self) -> dict:
        return {
            "style": self.style,
            "merge": self.merge_s,
            "activity": self.activity,
            "resolution": self.resolution_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SupervisionParams":
        return cls(d["style"], float(d["merge"]), float(d["activity"]), float(d["resolution"]))


@dataclass(frozen=True, order=True)
class TimeSegment:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not 0 <= self.start_s < self.end_s:
            raise ValueError(f"invalid segment [{self.start_s}, {self.end_s}]")

    @property
    def length_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class GroundTruthEvent:
    type_tag: str
    description: str
    segments: tuple[TimeSegment, ...]
    transcript: Optional[str] = None
    # provenance only; excluded from equality so parsed documents compare equal
    source_id: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("an event needs at least one segment")
        if not self.description.strip():
            raise ValueError("event description must be non-empty")

    @property
    def onset_s(self) -> float:
        return self.segments[0].start_s

    def sort_key(self):
        return (self.onset_s, EVENT_TAG_ORDER.get(self.type_tag, len(EVENT_TAG_ORDER)), self.description)


@dataclass(frozen=True)
class CaptionHeader:
    total_events: int
    max_overlap: int
    type_counts: tuple[tuple[str, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "type_counts", tuple((t, int(c)) for t, c in self.type_counts))


@dataclass(frozen=True)
class CaptionDocument:
    header: CaptionHeader
    events: tuple[GroundTruthEvent, ...]
    params: Optional[SupervisionParams] = None
    duration_s: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    @classmethod
    def from_events(cls, events, params=None, duration_s=None) -> "CaptionDocument":
        """Sort events into document order and derive the header."""
        ordered = sorted(events, key=GroundTruthEvent.sort_key)
        return cls(compute_header(ordered), tuple(ordered), params, duration_s)

    def is_ordered(self) -> bool:
        keys = [e.sort_key() for e in self.events]
        return all(a <= b for a, b in zip(keys, keys[1:]))

    def header_consistent(self) -> bool:
        return compute_header(self.events) == self.header


# --------------------------------------------------------------------------
# Range extraction


def active_frames(values: np.ndarray, activity: float) -> np.ndarray:
    """Boolean mask of frames at or above ``activity`` times the map maximum."""
    values = np.asarray(values, dtype=np.float64)
    peak = float(values.max()) if len(values) else 0.0
    if peak <= 0.0:
        return np.zeros(len(values), dtype=bool)
    return values >= activity * peak


def get_nonzero_ranges(activity_map: ActivityMap, merge_s: float, activity: float) -> list[TimeSegment]:
    """Runs of active frames as [first * hop, (last + 1) * hop], with short gaps fused.

    The gap between two runs is measured in whole frames times hop, and runs
    separated by less than ``merge_s`` are fused.
    """
    mask = active_frames(activity_map.frame_values, activity)
    if not mask.any():
        return []
    hop = activity_map.hop_s
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    runs = list(zip(edges[0::2].tolist(), edges[1::2].tolist()))  # [first, last + 1)

    fused = [list(runs[0])]
    for first, stop in runs[1:]:
        gap_frames = first - fused[-1][1]
        if gap_frames * hop < merge_s:
            fused[-1][1] = stop
        else:
            fused.append([first, stop])
    return [TimeSegment(first * hop, stop * hop) for first, stop in fused]


def _snap(t: float, resolution_s: float) -> float:
    # half-up rounding to the nearest grid multiple; the epsilon keeps
    # decimal ties such as 0.45 / 0.1 from rounding down
    return round(math.floor(t / resolution_s + 0.5 + 1e-9) * resolution_s, _TIME_DECIMALS)


def round_segments(segments: Sequence[TimeSegment], resolution_s: float, duration_s: float) -> list[TimeSegment]:
    """Snap segment edges to the resolution grid, widening collapsed segments
    by one step and fusing segments that end up touching."""
    duration_s = round(duration_s, _TIME_DECIMALS)
    snapped = []
    for seg in segments:
        start = _snap(min(max(seg.start_s, 0.0), duration_s), resolution_s)
        end = _snap(min(max(seg.end_s, 0.0), duration_s), resolution_s)
        start, end = min(start, duration_s), min(end, duration_s)
        if end <= start:
            end = round(min(start + resolution_s, duration_s), _TIME_DECIMALS)
            if end <= start:
                start = round(max(0.0, end - resolution_s), _TIME_DECIMALS)
        if end <= start:
            continue
        snapped.append([start, end])

    snapped.sort()
    out: list[list[float]] = []
    for start, end in snapped:
        if out and start <= out[-1][1]:
            out[-1][1] = max(out[-1][1], end)
        else:
            out.append([start, end])
    return [TimeSegment(s, e) for s, e in out]


# --------------------------------------------------------------------------
# Header and document


def _grid_index(t: float) -> int:
    return int(round(t / HEADER_GRID_S))


def max_concurrency(events: Sequence[GroundTruthEvent]) -> int:
    """Largest number of events active at one point of the 10 ms grid.

    An event is active on [start, end) of any of its segments.
    """
    if not events:
        return 0
    horizon = max(_grid_index(s.end_s) for e in events for s in e.segments)
    counts = np.zeros(horizon + 1, dtype=np.int64)
    for event in events:
        active = np.zeros(horizon + 1, dtype=bool)
        for seg in event.segments:
            active[_grid_index(seg.start_s): _grid_index(seg.end_s)] = True
        counts += active
    return int(counts.max())


def compute_header(events: Sequence[GroundTruthEvent]) -> CaptionHeader:
    tally: dict[str, int] = {}
    for event in events:
        tally[event.type_tag] = tally.get(event.type_tag, 0) + 1
    ordered = sorted(tally.items(), key=lambda kv: (-kv[1], HEADER_TAG_ORDER.get(kv[0], len(HEADER_TAG_ORDER)), kv[0]))
    return CaptionHeader(len(events), max_concurrency(events), tuple(ordered))


def event_segments(activity_map: ActivityMap, params: SupervisionParams, duration_s: float) -> list[TimeSegment]:
    raw = get_nonzero_ranges(activity_map, params.merge_s, params.activity)
    return round_segments(raw, params.resolution_s, duration_s)


def build_ground_truth(
    plans: Sequence["EventPlan"],
    maps: Sequence[ActivityMap],
    params: SupervisionParams,
    duration_s: float,
    attach_transcripts: bool = False,
) -> CaptionDocument:
    """Assemble the caption document for one scene.

    Each plan's activity map is thresholded, merged and rounded; events left
    without any segment are dropped. Raises EmptySceneError when nothing is
    audible so the caller can resample the scene.

    Transcripts are attached only on request; by default speech spans are
    added afterwards with ``caption_codec.expand_speech``.
    """
    if len(plans) != len(maps):
        raise ValueError(f"{len(plans)} plans but {len(maps)} activity maps")
    events = []
    for plan, activity_map in zip(plans, maps):
        segments = event_segments(activity_map, params, duration_s)
        if not segments:
            continue
        events.append(
            GroundTruthEvent(
                type_tag=plan.type_tag,
                description=plan.source.captions.for_style(params.style),
                segments=tuple(segments),
                transcript=plan.source.transcript if attach_transcripts and plan.type_tag == "speech" else None,
                source_id=plan.source.id,
            )
        )
    if not events:
        raise EmptySceneError("all events fell below the activity threshold")
    return CaptionDocument.from_events(events, params, duration_s)
