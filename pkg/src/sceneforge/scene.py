"""Scene templates, source libraries and stochastic event instantiation."""

from __future__ import annotations

import fnmatch
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .audio import AugmentationSpec, ReverbSpec
from .supervision import STYLES, TYPE_TAGS, SupervisionParams

OFFSET_POLICIES = ("uniform", "front_loaded", "anywhere")
# continuous roles are placed first so they pin the concurrency budget
ROLE_ORDER = ("music", "background", "speech", "sfx")

MAX_RETRIES = 64
TIME_DECIMALS = 3
DURATION_GRID_S = 0.5


class TemplateError(ValueError):
    """The template violates its invariants."""


class LibraryError(ValueError):
    """The source library cannot supply the clips a template asks for."""


class SceneConstraintError(ValueError):
    """Temporal constraints could not be met within the retry budget."""


Interval = tuple[float, float]


def _interval(value, cast=float) -> tuple:
    lo, hi = value
    return (cast(lo), cast(hi))


@dataclass(frozen=True)
class Captions:
    keywords: str
    brief: str
    detailed: str

    def for_style(self, style: str) -> str:
        if style not in STYLES:
            raise ValueError(f"unknown style {style!r}")
        return getattr(self, style)


@dataclass(frozen=True)
class SourceClipMeta:
    id: str
    path: str
    type_tag: str
    captions: Captions
    duration_s: float
    transcript: Optional[str] = None

    def violations(self) -> list[str]:
        problems = []
        if self.type_tag not in TYPE_TAGS:
            problems.append(f"{self.id}: unknown type_tag {self.type_tag!r}")
        for style in STYLES:
            if not getattr(self.captions, style).strip():
                problems.append(f"{self.id}: empty {style} caption")
        if not self.duration_s > 0:
            problems.append(f"{self.id}: duration_s must be positive")
        if self.transcript is not None and self.type_tag != "speech":
            problems.append(f"{self.id}: transcript on a non-speech clip")
        return problems

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["transcript"] is None:
            del d["transcript"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SourceClipMeta":
        return cls(
            id=str(d["id"]),
            path=str(d["path"]),
            type_tag=d["type_tag"],
            captions=Captions(**d["captions"]),
            duration_s=float(d["duration_s"]),
            transcript=d.get("transcript"),
        )


def load_sources(path) -> list[SourceClipMeta]:
    """Read a JSON-lines source manifest. Relative clip paths resolve against the manifest's folder."""
    path = Path(path)
    clips = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            meta = SourceClipMeta.from_dict(json.loads(line))
        except (KeyError, TypeError, ValueError) as exc:
            raise LibraryError(f"{path}:{lineno}: bad source record ({exc})") from exc
        if not Path(meta.path).is_absolute():
            meta = SourceClipMeta(
                meta.id, str(path.parent / meta.path), meta.type_tag, meta.captions, meta.duration_s, meta.transcript
            )
        problems = meta.violations()
        if problems:
            raise LibraryError(f"{path}:{lineno}: " + "; ".join(problems))
        clips.append(meta)
    return clips


@dataclass(frozen=True)
class AugmentationRanges:
    fade_in_s: Interval = (0.0, 0.0)
    fade_out_s: Interval = (0.0, 0.0)
    distortion_drive: Interval = (0.0, 0.0)
    reverb_decay_s: Interval = (0.2, 0.8)
    reverb_wet: Interval = (0.1, 0.4)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationRanges":
        return cls(**{k: _interval(v) for k, v in d.items()})


@dataclass(frozen=True)
class RoleSpec:
    role: str
    count_range: tuple[int, int] = (1, 1)
    continuous: bool = False
    no_self_overlap: bool = False
    repeat_range: tuple[int, int] = (1, 1)
    gain_db_range: Interval = (0.0, 0.0)
    offset_policy: str = "uniform"
    augmentation_ranges: AugmentationRanges = field(default_factory=AugmentationRanges)
    allowed_tags: Optional[tuple[str, ...]] = None

    @classmethod
    def from_dict(cls, role: str, d: dict) -> "RoleSpec":
        d = dict(d)
        d.setdefault("role", role)
        for key in ("count_range", "repeat_range"):
            if key in d:
                d[key] = _interval(d[key], int)
        if "gain_db_range" in d:
            d["gain_db_range"] = _interval(d["gain_db_range"])
        if "augmentation_ranges" in d:
            d["augmentation_ranges"] = AugmentationRanges.from_dict(d["augmentation_ranges"])
        if d.get("allowed_tags") is not None:
            d["allowed_tags"] = tuple(d["allowed_tags"])
        return cls(**d)

    def accepts(self, clip: SourceClipMeta) -> bool:
        if self.allowed_tags is None:
            return True
        return any(fnmatch.fnmatchcase(clip.id, pattern) for pattern in self.allowed_tags)


@dataclass(frozen=True)
class SceneTemplate:
    name: str
    roles: dict
    duration_range_s: Interval = (8.0, 20.0)
    max_concurrent: int = 4
    reverb_prob: float = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "SceneTemplate":
        return cls(
            name=d["name"],
            roles={role: RoleSpec.from_dict(role, spec) for role, spec in d["roles"].items()},
            duration_range_s=_interval(d.get("duration_range_s", (8.0, 20.0))),
            max_concurrent=int(d.get("max_concurrent", 4)),
            reverb_prob=float(d.get("reverb_prob", 0.0)),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d))


def load_template(path) -> SceneTemplate:
    path = Path(path)
    try:
        return SceneTemplate.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (KeyError, TypeError, ValueError) as exc:
        raise TemplateError(f"{path}: bad template ({exc})") from exc


def _bad_interval(value) -> bool:
    lo, hi = value
    return not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi


def validate_template(template: SceneTemplate) -> list[str]:
    """Every invariant violation, each prefixed with its field path."""
    problems = []
    lo, hi = template.duration_range_s
    if _bad_interval(template.duration_range_s) or lo <= 0:
        problems.append(f"duration_range_s: need 0 < lo <= hi, got [{lo}, {hi}]")
    if template.max_concurrent < 1:
        problems.append(f"max_concurrent: must be >= 1, got {template.max_concurrent}")
    if not 0.0 <= template.reverb_prob <= 1.0:
        problems.append(f"reverb_prob: must lie in [0, 1], got {template.reverb_prob}")
    if not template.roles:
        problems.append("roles: template has no roles")

    for key, spec in template.roles.items():
        path = f"roles.{key}"
        if key not in TYPE_TAGS:
            problems.append(f"{path}: unknown role (expected one of {', '.join(TYPE_TAGS)})")
        if spec.role != key:
            problems.append(f"{path}.role: {spec.role!r} does not match its key")
        clo, chi = spec.count_range
        if clo < 0 or clo > chi:
            problems.append(f"{path}.count_range: need 0 <= lo <= hi, got [{clo}, {chi}]")
        rlo, rhi = spec.repeat_range
        if rlo < 1 or rlo > rhi:
            problems.append(f"{path}.repeat_range: need 1 <= lo <= hi, got [{rlo}, {rhi}]")
        if spec.continuous and rhi > 1:
            problems.append(f"{path}.repeat_range: continuous roles repeat at most once")
        if _bad_interval(spec.gain_db_range):
            problems.append(f"{path}.gain_db_range: inverted or non-finite interval")
        if spec.offset_policy not in OFFSET_POLICIES:
            problems.append(f"{path}.offset_policy: unknown policy {spec.offset_policy!r}")
        aug = spec.augmentation_ranges
        for name in ("fade_in_s", "fade_out_s", "distortion_drive", "reverb_decay_s", "reverb_wet"):
            value = getattr(aug, name)
            if _bad_interval(value) or value[0] < 0:
                problems.append(f"{path}.augmentation_ranges.{name}: need 0 <= lo <= hi, got {list(value)}")
        if aug.reverb_decay_s[0] <= 0 and not _bad_interval(aug.reverb_decay_s):
            problems.append(f"{path}.augmentation_ranges.reverb_decay_s: decay must be positive")
        if aug.reverb_wet[1] > 1.0:
            problems.append(f"{path}.augmentation_ranges.reverb_wet: wet mix must lie in [0, 1]")

    if template.roles and not any(spec.count_range[1] >= 1 for spec in template.roles.values()):
        problems.append("roles: at least one role must allow an event (count_range hi >= 1)")
    return problems


# --------------------------------------------------------------------------
# Instantiation


@dataclass(frozen=True)
class Occurrence:
    offset_s: float
    clip_start_s: float
    clip_len_s: float

    @property
    def end_s(self) -> float:
        return self.offset_s + self.clip_len_s


@dataclass(frozen=True)
class EventPlan:
    event_id: int
    source: SourceClipMeta
    role: str
    type_tag: str
    occurrences: tuple[Occurrence, ...]
    augmentation: AugmentationSpec

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "source_id": self.source.id,
            "role": self.role,
            "type_tag": self.type_tag,
            "occurrences": [asdict(o) for o in self.occurrences],
            "augmentation": asdict(self.augmentation),
        }


@dataclass(frozen=True)
class SceneInstance:
    duration_s: float
    plans: tuple[EventPlan, ...]

    def to_dict(self) -> dict:
        return {"duration_s": self.duration_s, "plans": [p.to_dict() for p in self.plans]}


def _uniform(rng: np.random.Generator, interval: Interval) -> float:
    lo, hi = interval
    if lo == hi:
        return float(lo)
    return float(rng.uniform(lo, hi))


def _eligible(spec: RoleSpec, library: Sequence[SourceClipMeta]) -> list[SourceClipMeta]:
    clips = [c for c in library if c.type_tag == spec.role and spec.accepts(c)]
    if not clips and spec.role == "background":
        # a background bed may be any sfx/music clip played quietly
        clips = [c for c in library if c.type_tag in ("sfx", "music") and spec.accepts(c)]
    return clips


def _draw_offset(rng: np.random.Generator, policy: str, duration_s: float, length_s: float) -> float:
    room = max(0.0, duration_s - length_s)
    if policy == "uniform":
        return float(rng.uniform(0.0, room)) if room > 0 else 0.0
    if policy == "front_loaded":
        return float(room * rng.uniform() ** 2)
    # anywhere: the clip may run past the end and gets truncated
    return float(rng.uniform(0.0, duration_s))


def _peak_overlap(intervals: list[tuple[float, float]], start: float, end: float) -> int:
    """Most intervals simultaneously covering a point of [start, end)."""
    points = []
    for a, b in intervals:
        lo, hi = max(a, start), min(b, end)
        if lo < hi:
            points.append((lo, 1))
            points.append((hi, -1))
    points.sort(key=lambda p: (p[0], p[1]))
    best = current = 0
    for _, delta in points:
        current += delta
        best = max(best, current)
    return best


def _draw_augmentation(
    rng: np.random.Generator, spec: RoleSpec, reverb_prob: float, min_len_s: float
) -> AugmentationSpec:
    aug = spec.augmentation_ranges
    gain = round(_uniform(rng, spec.gain_db_range), 2)
    fade_in = _uniform(rng, aug.fade_in_s)
    fade_out = _uniform(rng, aug.fade_out_s)
    if fade_in + fade_out > min_len_s:
        scale = min_len_s / (fade_in + fade_out)
        fade_in, fade_out = fade_in * scale, fade_out * scale
    # floor keeps the rounded fades inside the clip
    fade_in = math.floor(fade_in * 1000) / 1000
    fade_out = math.floor(fade_out * 1000) / 1000
    drive = round(_uniform(rng, aug.distortion_drive), 3)
    reverb = None
    if reverb_prob > 0 and rng.uniform() < reverb_prob:
        reverb = ReverbSpec(round(_uniform(rng, aug.reverb_decay_s), 3), round(_uniform(rng, aug.reverb_wet), 3))
    return AugmentationSpec(gain, fade_in, fade_out, drive, reverb)


def instantiate_events(
    template: SceneTemplate, library: Sequence[SourceClipMeta], rng: np.random.Generator
) -> SceneInstance:
    """Draw a concrete scene from a template.

    Counts, sources (without replacement), repeats, offsets and augmentation
    are drawn from the template ranges. Self-overlap and concurrency limits
    are enforced by rejection sampling offsets up to MAX_RETRIES times; an
    extra repeat that still does not fit is dropped, and a whole event is
    dropped only while its role stays at or above its minimum count.
    """
    problems = validate_template(template)
    if problems:
        raise TemplateError("; ".join(problems))

    lo, hi = template.duration_range_s
    raw = _uniform(rng, (lo, hi))
    # prefer half-second durations so every resolution grid ends on the scene end
    snapped = round(round(raw / DURATION_GRID_S) * DURATION_GRID_S, TIME_DECIMALS)
    duration = snapped if lo <= snapped <= hi else round(raw, TIME_DECIMALS)

    roles = sorted(template.roles.values(), key=lambda s: (not s.continuous, ROLE_ORDER.index(s.role)))

    counts = {}
    for spec in roles:
        clo, chi = spec.count_range
        counts[spec.role] = int(rng.integers(clo, chi + 1))
        if len(_eligible(spec, library)) < spec.count_range[0]:
            raise LibraryError(
                f"role {spec.role!r} needs at least {spec.count_range[0]} clips, library has "
                f"{len(_eligible(spec, library))}"
            )

    used_ids: set[str] = set()
    placed: list[tuple[float, float]] = []
    role_placed: dict[str, list[tuple[float, float]]] = {spec.role: [] for spec in roles}
    drafts = []  # (role spec, source, occurrences, augmentation)

    for spec in roles:
        pool = [c for c in _eligible(spec, library) if c.id not in used_ids]
        want = counts[spec.role]
        if want > len(pool):
            raise LibraryError(f"role {spec.role!r} drew {want} sources but only {len(pool)} are available")
        picks = rng.permutation(len(pool))[:want]
        kept = 0
        for n_done, pick in enumerate(picks):
            source = pool[int(pick)]
            used_ids.add(source.id)
            occurrences = _place_occurrences(rng, spec, source, duration, template, placed, role_placed[spec.role])
            if not occurrences:
                remaining = len(picks) - n_done - 1
                if kept + remaining < spec.count_range[0]:
                    raise SceneConstraintError(
                        f"could not place a {spec.role} event from {source.id!r} within {MAX_RETRIES} retries"
                    )
                continue
            kept += 1
            min_len = min(o.clip_len_s for o in occurrences)
            augmentation = _draw_augmentation(rng, spec, template.reverb_prob, min_len)
            drafts.append((spec, source, occurrences, augmentation))

    plans = []
    for event_id, (spec, source, occurrences, augmentation) in enumerate(drafts):
        type_tag = "background" if spec.role == "background" else source.type_tag
        plans.append(EventPlan(event_id, source, spec.role, type_tag, tuple(occurrences), augmentation))
    return SceneInstance(duration, tuple(plans))


def _place_occurrences(
    rng: np.random.Generator,
    spec: RoleSpec,
    source: SourceClipMeta,
    duration: float,
    template: SceneTemplate,
    placed: list,
    same_role: list,
) -> list[Occurrence]:
    if spec.continuous:
        if _peak_overlap(placed, 0.0, duration) + 1 > template.max_concurrent:
            return []
        placed.append((0.0, duration))
        same_role.append((0.0, duration))
        return [Occurrence(0.0, 0.0, duration)]

    rlo, rhi = spec.repeat_range
    repeats = int(rng.integers(rlo, rhi + 1))
    occurrences = []
    for _ in range(repeats):
        for _attempt in range(MAX_RETRIES):
            offset = round(_draw_offset(rng, spec.offset_policy, duration, source.duration_s), TIME_DECIMALS)
            offset = min(offset, round(duration - 10 ** -TIME_DECIMALS, TIME_DECIMALS))
            length = round(min(source.duration_s, duration - offset), TIME_DECIMALS)
            if length <= 0:
                continue
            end = offset + length
            if spec.no_self_overlap and _peak_overlap(same_role, offset, end) > 0:
                continue
            if _peak_overlap(placed, offset, end) + 1 > template.max_concurrent:
                continue
            placed.append((offset, end))
            same_role.append((offset, end))
            occurrences.append(Occurrence(offset, 0.0, length))
            break
    occurrences.sort(key=lambda o: o.offset_s)
    return occurrences


# --------------------------------------------------------------------------
# Supervision parameter sampling


@dataclass(frozen=True)
class SamplingConfig:
    """Ranges for the per-example supervision parameters.

    ``activity_range`` is sampled log-uniformly; ``resolutions`` is a
    discrete set sampled uniformly.
    """

    styles: tuple[str, ...] = STYLES
    merge_range: Interval = (0.1, 1.0)
    activity_range: Interval = (0.01, 0.20)
    resolutions: tuple[float, ...] = (0.01, 0.10, 0.50)

    def violations(self) -> list[str]:
        problems = []
        if not self.styles or any(s not in STYLES for s in self.styles):
            problems.append("styles: need a non-empty subset of keywords/brief/detailed")
        if _bad_interval(self.merge_range) or self.merge_range[0] <= 0:
            problems.append("merge_range: need 0 < lo <= hi")
        lo, hi = self.activity_range
        if _bad_interval(self.activity_range) or not (0 < lo and hi < 1):
            problems.append("activity_range: need 0 < lo <= hi < 1")
        if not self.resolutions or any(r <= 0 for r in self.resolutions):
            problems.append("resolutions: need positive values")
        return problems


BEST_SWEEP_CONFIG = SamplingConfig(("brief",), (0.25, 0.25), (0.05, 0.05), (0.10,))


def sample_supervision_params(config: SamplingConfig, rng: np.random.Generator) -> SupervisionParams:
    problems = config.violations()
    if problems:
        raise ValueError("; ".join(problems))
    style = config.styles[int(rng.integers(len(config.styles)))]
    merge = _uniform(rng, config.merge_range)
    lo, hi = config.activity_range
    activity = float(lo) if lo == hi else float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    resolution = float(config.resolutions[int(rng.integers(len(config.resolutions)))])
    return SupervisionParams(style, merge, activity, resolution)
