import numpy as np
import pytest

from oracles import ranges_oracle
from sceneforge.audio import ActivityMap
from sceneforge.fixtures import golden_scene
from sceneforge.supervision import (
    CaptionDocument,
    CaptionHeader,
    EmptySceneError,
    GroundTruthEvent,
    SupervisionParams,
    TimeSegment,
    active_frames,
    build_ground_truth,
    compute_header,
    get_nonzero_ranges,
    max_concurrency,
    round_segments,
)


def amap(values, hop=0.01):
    return ActivityMap(np.asarray(values, dtype=float), hop, max(hop, 0.05))


def spans(segments):
    return [(s.start_s, s.end_s) for s in segments]


def ev(tag, desc, *ranges):
    return GroundTruthEvent(tag, desc, tuple(TimeSegment(a, b) for a, b in ranges))


def test_silent_map_has_no_ranges():
    assert get_nonzero_ranges(amap([0.0] * 20), 0.1, 0.05) == []


def test_single_run():
    values = [0] * 10 + [1] * 5 + [0] * 10
    assert spans(get_nonzero_ranges(amap(values), 0.1, 0.5)) == [(0.1, 0.15)]


def test_short_gap_fuses_long_gap_splits():
    values = [1] * 5 + [0] * 3 + [1] * 5 + [0] * 30 + [1] * 2
    got = spans(get_nonzero_ranges(amap(values), 0.1, 0.5))
    assert got == [(0.0, 0.13), (0.43, 0.45)]


def test_threshold_is_relative_to_peak():
    values = [0.04, 0.06, 1.0, 0.06, 0.04]
    assert active_frames(np.array(values), 0.05).tolist() == [False, True, True, True, False]


def test_ranges_match_oracle_on_random_maps():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(1, 120))
        hop = float(rng.choice([0.01, 0.02, 0.05]))
        values = rng.uniform(0, 1, n) * (rng.uniform(0, 1, n) < 0.6)
        merge, act = float(rng.uniform(0.0, 0.6)), float(rng.uniform(0.01, 0.9))
        assert spans(get_nonzero_ranges(amap(values, hop), merge, act)) == ranges_oracle(values, hop, merge, act)


@pytest.mark.parametrize(
    "raw, res, expected",
    [
        ([(0.46, 2.30)], 0.1, [(0.5, 2.3)]),
        ([(0.44, 0.46)], 0.1, [(0.4, 0.5)]),  # collapsed segment widened by one step
        ([(0.45, 0.95)], 0.1, [(0.5, 1.0)]),  # ties round half-up
        ([(0.1, 0.42), (0.58, 1.2)], 0.5, [(0.0, 1.0)]),  # touching after rounding fuses
        ([(9.97, 10.0)], 0.1, [(9.9, 10.0)]),  # widened backwards at the scene end
        ([(0.123, 0.456)], 0.01, [(0.12, 0.46)]),
    ],
)
def test_round_segments(raw, res, expected):
    got = round_segments([TimeSegment(a, b) for a, b in raw], res, 10.0)
    assert spans(got) == expected


def test_round_segments_clamps_then_snaps():
    assert spans(round_segments([TimeSegment(4.0, 5.3)], 0.5, 5.2)) == [(4.0, 5.0)]
    assert spans(round_segments([TimeSegment(4.0, 5.3)], 0.1, 5.2)) == [(4.0, 5.2)]


def test_golden_header():
    events = [
        ev("music", "Background jazz music plays softly", (0.0, 10.0)),
        ev("sfx", "A dog barks aggressively", (0.5, 2.3)),
        ev("sfx", "A car horn honks briefly", (5.0, 5.5)),
    ]
    assert compute_header(events) == CaptionHeader(3, 2, (("sfx", 2), ("music", 1)))


def test_header_tie_order_and_overlap():
    events = [ev("speech", "a", (0, 1)), ev("music", "b", (1, 2)), ev("background", "c", (2, 3)), ev("sfx", "d", (3, 4))]
    header = compute_header(events)
    assert header.max_overlap == 1
    assert [t for t, _ in header.type_counts] == ["sfx", "music", "speech", "background"]


def test_touching_segments_do_not_overlap():
    assert max_concurrency([ev("sfx", "a", (0, 1)), ev("sfx", "b", (1, 2))]) == 1
    assert max_concurrency([ev("sfx", "a", (0, 1.01)), ev("sfx", "b", (1, 2))]) == 2


def test_document_order():
    doc = CaptionDocument.from_events(
        [ev("sfx", "z", (1, 2)), ev("speech", "a", (0, 1)), ev("sfx", "b", (0, 1)), ev("music", "m", (0, 3))]
    )
    assert [(e.type_tag, e.description) for e in doc.events] == [("music", "m"), ("sfx", "b"), ("speech", "a"), ("sfx", "z")]
    assert doc.is_ordered() and doc.header_consistent()


def test_golden_ground_truth():
    instance, clips, params = golden_scene()
    from sceneforge.audio import compute_rms
    from sceneforge.pipeline import render_event

    maps = [compute_rms(render_event(p, clips[p.source.id], 10.0, np.random.default_rng(0))) for p in instance.plans]
    doc = build_ground_truth(instance.plans, maps, params, 10.0)
    assert [spans(e.segments) for e in doc.events] == [[(0.0, 10.0)], [(0.5, 2.3)], [(5.0, 5.5)]]
    assert doc.header == CaptionHeader(3, 2, (("sfx", 2), ("music", 1)))


def test_all_silent_scene_raises():
    instance, _, params = golden_scene()
    maps = [amap([0.0] * 1000) for _ in instance.plans]
    with pytest.raises(EmptySceneError):
        build_ground_truth(instance.plans, maps, params, 10.0)


def test_params_validation_and_quantize():
    with pytest.raises(ValueError):
        SupervisionParams("verbose", 0.25, 0.05, 0.1)
    with pytest.raises(ValueError):
        SupervisionParams("brief", 0.25, 1.5, 0.1)
    q = SupervisionParams("brief", 0.2549, 0.0512, 0.1).quantized()
    assert (q.merge_s, q.activity) == (0.25, 0.05)
    assert SupervisionParams.from_dict(q.to_dict()) == q


def test_segment_validation():
    with pytest.raises(ValueError):
        TimeSegment(2.0, 1.0)
    with pytest.raises(ValueError):
        GroundTruthEvent("sfx", "x", ())
