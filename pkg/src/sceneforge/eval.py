"""Caption evaluation: semantic alignment, greedy matching, segment/event F1,
hallucination rate, confidence and specificity."""

from __future__ import annotations

import math
import string
from dataclasses import asdict, dataclass, field
from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .audio import AudioClip
from .supervision import CaptionDocument, GroundTruthEvent, TimeSegment

DEFAULT_COLLAR_S = 1.0
DEFAULT_SEG_RESOLUTION_S = 0.1
DEFAULT_TAU = 0.25
DEFAULT_SCORER_HOP_S = 0.1
ORACLE_MATCH_THRESHOLD = 0.99
_EPS = 1e-9


class BackendError(RuntimeError):
    """A judge or scorer backend failed."""


@runtime_checkable
class SimilarityJudge(Protocol):
    def judge(self, pred_description: str, ref_description: str) -> float: ...


@runtime_checkable
class ConfidenceScorer(Protocol):
    def score_curve(self, audio: Optional[AudioClip], text: str, hop_s: float) -> np.ndarray: ...


# --------------------------------------------------------------------------
# Built-in judge

STOPWORDS = frozenset(
    """a an the and or of in on at to with by for from is are was were be been being it its this that
    these those as into onto over under while then than there here some""".split()
)
_PUNCT = str.maketrans({c: " " for c in string.punctuation})


def _tokens(text: str) -> set[str]:
    return {t for t in text.lower().translate(_PUNCT).split() if t not in STOPWORDS}


def builtin_judge(pred: str, ref: str) -> float:
    """Jaccard overlap of lowercased, punctuation-free, stopword-free token sets."""
    a, b = _tokens(pred), _tokens(ref)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


class BuiltinJudge:
    max_concurrency = None

    def judge(self, pred_description: str, ref_description: str) -> float:
        return builtin_judge(pred_description, ref_description)


def _judge_all(judge, pairs: list[tuple[str, str]]) -> list[float]:
    batch = getattr(judge, "judge_batch", None)
    if batch is not None:
        scores = list(batch(pairs))
        if len(scores) != len(pairs):
            raise BackendError(f"judge returned {len(scores)} scores for {len(pairs)} pairs")
    else:
        scores = []
        for pred, ref in pairs:
            try:
                scores.append(judge.judge(pred, ref))
            except BackendError:
                raise
            except Exception as exc:
                raise BackendError(f"judge failed on pair ({pred!r}, {ref!r}): {exc}") from exc
    for (pred, ref), s in zip(pairs, scores):
        if not (isinstance(s, (int, float)) and 0.0 <= s <= 1.0):
            raise BackendError(f"judge score {s!r} for ({pred!r}, {ref!r}) is outside [0, 1]")
    return [float(s) for s in scores]


# --------------------------------------------------------------------------
# Matching


def _union(segments: Sequence[TimeSegment]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for seg in sorted(segments):
        if out and seg.start_s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], seg.end_s)
        else:
            out.append([seg.start_s, seg.end_s])
    return [(a, b) for a, b in out]


def _measure(intervals) -> float:
    return sum(b - a for a, b in intervals)


def temporal_iou(a: Sequence[TimeSegment], b: Sequence[TimeSegment]) -> float:
    ua, ub = _union(a), _union(b)
    inter = 0.0
    for s1, e1 in ua:
        for s2, e2 in ub:
            inter += max(0.0, min(e1, e2) - max(s1, s2))
    union = _measure(ua) + _measure(ub) - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class MatchedPair:
    pred_index: int
    ref_index: int
    s_sem: float
    t_iou: float
    composite: float


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[MatchedPair, ...]
    unmatched_pred: tuple[int, ...]
    unmatched_ref: tuple[int, ...]


@dataclass(frozen=True)
class MatchWeights:
    w_sem: float = 0.5
    w_t: float = 0.5


def match_events(
    preds: Sequence[GroundTruthEvent],
    refs: Sequence[GroundTruthEvent],
    judge=None,
    weights: MatchWeights = MatchWeights(),
    floor: float = 0.5,
) -> MatchResult:
    """Greedy one-to-one matching on a composite of semantic and temporal scores.

    Pairs whose semantic score is below ``floor`` are never matched. The
    rest are visited by composite descending, then tIoU descending, then
    prediction index ascending, and accepted when both sides are free.
    """
    if not math.isclose(weights.w_sem + weights.w_t, 1.0, abs_tol=1e-9):
        raise ValueError("match weights must sum to 1")
    if not 0.0 <= floor <= 1.0:
        raise ValueError("floor must lie in [0, 1]")
    judge = judge or BuiltinJudge()

    index_pairs = [(i, j) for i in range(len(preds)) for j in range(len(refs))]
    sems = _judge_all(judge, [(preds[i].description, refs[j].description) for i, j in index_pairs])
    candidates = []
    for (i, j), s_sem in zip(index_pairs, sems):
        if s_sem < floor:
            continue
        t_iou = temporal_iou(preds[i].segments, refs[j].segments)
        composite = weights.w_sem * s_sem + weights.w_t * t_iou
        candidates.append(MatchedPair(i, j, s_sem, t_iou, composite))
    # scores equal up to float noise must tie so the index order decides
    candidates.sort(key=lambda p: (-round(p.composite, 9), -round(p.t_iou, 9), p.pred_index, p.ref_index))

    used_pred, used_ref, pairs = set(), set(), []
    for cand in candidates:
        if cand.pred_index in used_pred or cand.ref_index in used_ref:
            continue
        used_pred.add(cand.pred_index)
        used_ref.add(cand.ref_index)
        pairs.append(cand)
    pairs.sort(key=lambda p: p.pred_index)
    return MatchResult(
        tuple(pairs),
        tuple(i for i in range(len(preds)) if i not in used_pred),
        tuple(j for j in range(len(refs)) if j not in used_ref),
    )


# --------------------------------------------------------------------------
# F1 scores


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def f1_from_counts(counts: Counts, both_empty: bool) -> float:
    if both_empty:
        return 1.0
    if counts.tp == 0:
        return 0.0
    return 2 * counts.tp / (2 * counts.tp + counts.fp + counts.fn)


def n_bins(duration_s: float, resolution_s: float) -> int:
    return max(0, int(math.ceil(duration_s / resolution_s - _EPS)))


def activity_bins(segments: Sequence[TimeSegment], resolution_s: float, n: int) -> np.ndarray:
    """Bins of width resolution_s that a segment overlaps with positive length."""
    active = np.zeros(n, dtype=bool)
    for seg in segments:
        first = max(0, int(math.floor(seg.start_s / resolution_s + _EPS)))
        stop = min(n, int(math.ceil(seg.end_s / resolution_s - _EPS)))
        if stop > first:
            active[first:stop] = True
    return active


def segment_f1(
    match: MatchResult,
    preds: Sequence[GroundTruthEvent],
    refs: Sequence[GroundTruthEvent],
    duration_s: float,
    resolution_s: float = DEFAULT_SEG_RESOLUTION_S,
) -> tuple[float, Counts]:
    n = n_bins(duration_s, resolution_s)
    tp = fp = fn = 0
    for pair in match.pairs:
        p = activity_bins(preds[pair.pred_index].segments, resolution_s, n)
        r = activity_bins(refs[pair.ref_index].segments, resolution_s, n)
        tp += int(np.sum(p & r))
        fp += int(np.sum(p & ~r))
        fn += int(np.sum(r & ~p))
    for i in match.unmatched_pred:
        fp += int(activity_bins(preds[i].segments, resolution_s, n).sum())
    for j in match.unmatched_ref:
        fn += int(activity_bins(refs[j].segments, resolution_s, n).sum())
    counts = Counts(tp, fp, fn)
    return f1_from_counts(counts, not preds and not refs), counts


def pair_onsets(pred_onsets: Sequence[float], ref_onsets: Sequence[float], collar_s: float) -> list[tuple[int, int]]:
    """Greedy onset pairing: closest pairs first, only within the collar."""
    candidates = []
    for i, p in enumerate(pred_onsets):
        for j, r in enumerate(ref_onsets):
            d = round(abs(p - r), 9)
            if d <= collar_s + _EPS:
                candidates.append((d, i, j))
    candidates.sort()
    used_p, used_r, pairs = set(), set(), []
    for _, i, j in candidates:
        if i in used_p or j in used_r:
            continue
        used_p.add(i)
        used_r.add(j)
        pairs.append((i, j))
    return pairs


def event_f1(
    match: MatchResult,
    preds: Sequence[GroundTruthEvent],
    refs: Sequence[GroundTruthEvent],
    collar_s: float = DEFAULT_COLLAR_S,
) -> tuple[float, Counts]:
    tp = fp = fn = 0
    for pair in match.pairs:
        p_on = [s.start_s for s in preds[pair.pred_index].segments]
        r_on = [s.start_s for s in refs[pair.ref_index].segments]
        hits = len(pair_onsets(p_on, r_on, collar_s))
        tp += hits
        fp += len(p_on) - hits
        fn += len(r_on) - hits
    for i in match.unmatched_pred:
        fp += len(preds[i].segments)
    for j in match.unmatched_ref:
        fn += len(refs[j].segments)
    counts = Counts(tp, fp, fn)
    return f1_from_counts(counts, not preds and not refs), counts


# --------------------------------------------------------------------------
# Reference-free scores


def _frames_for(segments: Sequence[TimeSegment], hop_s: float, n: int) -> np.ndarray:
    return activity_bins(segments, hop_s, n)


def event_confidence(curve: np.ndarray, segments: Sequence[TimeSegment], hop_s: float) -> tuple[float, float]:
    """(max, min) of the curve over frames touched by the event's segments; (0, 0) if none."""
    curve = np.asarray(curve, dtype=np.float64)
    mask = _frames_for(segments, hop_s, len(curve))
    if not mask.any():
        return 0.0, 0.0
    values = curve[mask]
    return float(values.max()), float(values.min())


def _curve(scorer, audio, text: str, hop_s: float) -> np.ndarray:
    try:
        curve = np.asarray(scorer.score_curve(audio, text, hop_s), dtype=np.float64)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"scorer failed on {text!r}: {exc}") from exc
    if curve.ndim != 1 or np.any((curve < 0) | (curve > 1)) or not np.all(np.isfinite(curve)):
        raise BackendError(f"scorer curve for {text!r} has values outside [0, 1]")
    return curve


def event_scores(
    preds: Sequence[GroundTruthEvent], audio, scorer, hop_s: float = DEFAULT_SCORER_HOP_S
) -> list[tuple[float, float]]:
    return [event_confidence(_curve(scorer, audio, e.description, hop_s), e.segments, hop_s) for e in preds]


def hallucination_rate(
    preds: Sequence[GroundTruthEvent],
    audio,
    scorer,
    tau: float = DEFAULT_TAU,
    hop_s: float = DEFAULT_SCORER_HOP_S,
) -> float:
    """Percent of predicted events whose confidence falls below tau (0 for no events)."""
    if not preds:
        return 0.0
    confs = [conf for conf, _ in event_scores(preds, audio, scorer, hop_s)]
    return 100.0 * sum(c < tau for c in confs) / len(confs)


def confidence_specificity(
    preds: Sequence[GroundTruthEvent], audio, scorer, hop_s: float = DEFAULT_SCORER_HOP_S
) -> tuple[float, float]:
    if not preds:
        raise ValueError("confidence/specificity need at least one predicted event")
    scores = event_scores(preds, audio, scorer, hop_s)
    return float(np.mean([c for c, _ in scores])), float(np.mean([s for _, s in scores]))


class OracleScorer:
    """Stand-in audio-text scorer that reads the reference document instead of audio.

    The curve for a text is 1 on frames where a reference event whose
    description matches it (builtin judge >= 0.99) is active, else 0.
    """

    max_concurrency = None

    def __init__(self, refs: CaptionDocument, duration_s: Optional[float] = None):
        self.refs = refs
        if duration_s is None:
            duration_s = refs.duration_s
        if duration_s is None:
            duration_s = max((s.end_s for e in refs.events for s in e.segments), default=0.0)
        self.duration_s = duration_s

    def score_curve(self, audio, text: str, hop_s: float) -> np.ndarray:
        n = n_bins(self.duration_s, hop_s)
        curve = np.zeros(n)
        for event in self.refs.events:
            if builtin_judge(text, event.description) >= ORACLE_MATCH_THRESHOLD:
                curve[_frames_for(event.segments, hop_s, n)] = 1.0
        return curve


def oracle_scorer(refs: CaptionDocument) -> OracleScorer:
    return OracleScorer(refs)


# --------------------------------------------------------------------------
# Full evaluation


@dataclass(frozen=True)
class EvalConfig:
    collar_s: float = DEFAULT_COLLAR_S
    seg_resolution_s: float = DEFAULT_SEG_RESOLUTION_S
    tau: float = DEFAULT_TAU
    scorer_hop_s: float = DEFAULT_SCORER_HOP_S
    weights: MatchWeights = MatchWeights()
    floor: float = 0.5


@dataclass
class MetricsReport:
    seg_f1: float
    evt_f1: float
    hal_pct: float
    conf: Optional[float]
    spec: Optional[float]
    seg_counts: Counts
    evt_counts: Counts
    n_pred: int
    n_ref: int
    event_conf: list = field(default_factory=list)
    event_spec: list = field(default_factory=list)
    pairs: list = field(default_factory=list)

    def summary(self) -> tuple:
        return (self.seg_f1, self.evt_f1, self.hal_pct, self.conf, self.spec)

    def to_dict(self, diagnostics: bool = True) -> dict:
        d = {
            "seg_f1": self.seg_f1,
            "evt_f1": self.evt_f1,
            "hal_pct": self.hal_pct,
            "conf": self.conf,
            "spec": self.spec,
            "seg_counts": asdict(self.seg_counts),
            "evt_counts": asdict(self.evt_counts),
            "n_pred": self.n_pred,
            "n_ref": self.n_ref,
        }
        if diagnostics:
            d["event_conf"] = list(self.event_conf)
            d["event_spec"] = list(self.event_spec)
            d["pairs"] = [asdict(p) if isinstance(p, MatchedPair) else p for p in self.pairs]
        return d


def evaluate(
    preds: CaptionDocument,
    refs: CaptionDocument,
    judge=None,
    scorer=None,
    config: EvalConfig = EvalConfig(),
    audio: Optional[AudioClip] = None,
) -> MetricsReport:
    """Score one clip's predicted captions against its reference document."""
    duration = refs.duration_s
    if duration is None:
        duration = max((s.end_s for e in refs.events for s in e.segments), default=0.0)
    if preds.duration_s is not None and refs.duration_s is not None and not math.isclose(
        preds.duration_s, refs.duration_s, abs_tol=1e-6
    ):
        raise ValueError(f"clip durations differ: {preds.duration_s} vs {refs.duration_s}")
    scorer = scorer if scorer is not None else OracleScorer(refs, duration)

    p_events, r_events = list(preds.events), list(refs.events)
    match = match_events(p_events, r_events, judge, config.weights, config.floor)
    seg, seg_counts = segment_f1(match, p_events, r_events, duration, config.seg_resolution_s)
    evt, evt_counts = event_f1(match, p_events, r_events, config.collar_s)
    scores = event_scores(p_events, audio, scorer, config.scorer_hop_s)
    confs = [c for c, _ in scores]
    specs = [s for _, s in scores]
    hal = 100.0 * sum(c < config.tau for c in confs) / len(confs) if confs else 0.0
    return MetricsReport(
        seg_f1=seg,
        evt_f1=evt,
        hal_pct=hal,
        conf=float(np.mean(confs)) if confs else None,
        spec=float(np.mean(specs)) if specs else None,
        seg_counts=seg_counts,
        evt_counts=evt_counts,
        n_pred=len(p_events),
        n_ref=len(r_events),
        event_conf=confs,
        event_spec=specs,
        pairs=list(match.pairs),
    )


@dataclass
class DatasetReport:
    """Micro-averaged report over clips.

    F1 uses summed counts. Hal%, conf and spec are pooled over all predicted
    events; the ``*_clip_mean`` fields average the per-clip values instead.
    """

    seg_f1: float
    evt_f1: float
    hal_pct: float
    conf: Optional[float]
    spec: Optional[float]
    seg_counts: Counts
    evt_counts: Counts
    n_clips: int
    conf_clip_mean: Optional[float]
    spec_clip_mean: Optional[float]
    hal_pct_clip_mean: float

    def summary(self) -> tuple:
        return (self.seg_f1, self.evt_f1, self.hal_pct, self.conf, self.spec)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def aggregate(reports: Sequence[MetricsReport], tau: float = DEFAULT_TAU) -> DatasetReport:
    seg_counts = sum((r.seg_counts for r in reports), Counts())
    evt_counts = sum((r.evt_counts for r in reports), Counts())
    all_empty = all(r.n_pred == 0 and r.n_ref == 0 for r in reports)
    confs = [c for r in reports for c in r.event_conf]
    specs = [s for r in reports for s in r.event_spec]
    clip_conf = [r.conf for r in reports if r.conf is not None]
    clip_spec = [r.spec for r in reports if r.spec is not None]
    return DatasetReport(
        seg_f1=f1_from_counts(seg_counts, all_empty),
        evt_f1=f1_from_counts(evt_counts, all_empty),
        hal_pct=100.0 * sum(c < tau for c in confs) / len(confs) if confs else 0.0,
        conf=float(np.mean(confs)) if confs else None,
        spec=float(np.mean(specs)) if specs else None,
        seg_counts=seg_counts,
        evt_counts=evt_counts,
        n_clips=len(reports),
        conf_clip_mean=float(np.mean(clip_conf)) if clip_conf else None,
        spec_clip_mean=float(np.mean(clip_spec)) if clip_spec else None,
        hal_pct_clip_mean=float(np.mean([r.hal_pct for r in reports])) if reports else 0.0,
    )
