import json
import math

import numpy as np
import pytest

from sceneforge.fixtures import REFERENCE_TEMPLATE, reference_template
from sceneforge.scene import (
    BEST_SWEEP_CONFIG,
    LibraryError,
    SamplingConfig,
    SceneConstraintError,
    SceneTemplate,
    SourceClipMeta,
    TemplateError,
    instantiate_events,
    load_sources,
    sample_supervision_params,
    validate_template,
)
from sceneforge.supervision import SupervisionParams


def template_with(**role_overrides):
    d = json.loads(json.dumps(REFERENCE_TEMPLATE))
    for role, patch in role_overrides.items():
        if patch is None:
            del d["roles"][role]
        else:
            d["roles"].setdefault(role, {}).update(patch)
    return SceneTemplate.from_dict(d)


def peak_concurrency(intervals):
    points = sorted([(a, 1) for a, _ in intervals] + [(b, -1) for _, b in intervals], key=lambda p: (p[0], p[1]))
    best = cur = 0
    for _, d in points:
        cur += d
        best = max(best, cur)
    return best


def test_reference_template_is_valid():
    assert validate_template(reference_template()) == []


def test_validation_reports_field_paths():
    bad = template_with(sfx={"count_range": [3, 1], "offset_policy": "sideways"})
    problems = validate_template(bad)
    assert any(p.startswith("roles.sfx.count_range") for p in problems)
    assert any(p.startswith("roles.sfx.offset_policy") for p in problems)


def test_invalid_template_raises(library):
    with pytest.raises(TemplateError):
        instantiate_events(template_with(music={"repeat_range": [0, 1]}), library, np.random.default_rng(0))


def test_instantiation_is_deterministic(template, library):
    a = instantiate_events(template, library, np.random.default_rng(42))
    b = instantiate_events(template, library, np.random.default_rng(42))
    assert a.to_dict() == b.to_dict()


def test_instances_respect_template(template, library):
    for seed in range(60):
        inst = instantiate_events(template, library, np.random.default_rng(seed))
        lo, hi = template.duration_range_s
        assert lo <= inst.duration_s <= hi
        ids = [p.source.id for p in inst.plans]
        assert len(ids) == len(set(ids))
        by_role = {}
        intervals = []
        for plan in inst.plans:
            spec = template.roles[plan.role]
            by_role[plan.role] = by_role.get(plan.role, 0) + 1
            occ = [(o.offset_s, o.end_s) for o in plan.occurrences]
            intervals += occ
            assert all(0 <= a < b <= inst.duration_s + 1e-9 for a, b in occ)
            if spec.continuous:
                assert occ == [(0.0, inst.duration_s)]
            gain = plan.augmentation.gain_db
            assert spec.gain_db_range[0] - 1e-9 <= gain <= spec.gain_db_range[1] + 1e-9
        for role, spec in template.roles.items():
            assert spec.count_range[0] <= by_role.get(role, 0) <= spec.count_range[1]
        speech = [(o.offset_s, o.end_s) for p in inst.plans if p.role == "speech" for o in p.occurrences]
        assert peak_concurrency(speech) <= 1
        assert peak_concurrency(intervals) <= template.max_concurrent


def test_background_falls_back_to_quiet_sfx_or_music(library):
    no_bg = [c for c in library if c.type_tag != "background"]
    template = template_with(background={"count_range": [1, 1]})
    inst = instantiate_events(template, no_bg, np.random.default_rng(0))
    bg = [p for p in inst.plans if p.role == "background"]
    assert len(bg) == 1 and bg[0].type_tag == "background"
    assert bg[0].source.type_tag in ("sfx", "music")


def test_missing_mandatory_role_raises(library):
    no_speech = [c for c in library if c.type_tag != "speech"]
    with pytest.raises(LibraryError):
        instantiate_events(reference_template(), no_speech, np.random.default_rng(0))


def test_over_draw_raises(library):
    with pytest.raises(LibraryError):
        instantiate_events(template_with(speech={"count_range": [4, 4]}), library, np.random.default_rng(0))


def test_allowed_tags_filter(library):
    template = template_with(music={"allowed_tags": ["music_piano"]})
    for seed in range(5):
        inst = instantiate_events(template, library, np.random.default_rng(seed))
        assert [p.source.id for p in inst.plans if p.role == "music"] == ["music_piano"]


def test_concurrency_cap_enforced(library):
    template = template_with(sfx={"count_range": [3, 3], "repeat_range": [3, 3]})
    d = template.to_dict()
    d["max_concurrent"] = 3
    template = SceneTemplate.from_dict(d)
    built = 0
    for seed in range(20):
        try:
            inst = instantiate_events(template, library, np.random.default_rng(seed))
        except SceneConstraintError:
            continue
        built += 1
        intervals = [(o.offset_s, o.end_s) for p in inst.plans for o in p.occurrences]
        assert peak_concurrency(intervals) <= 3
    assert built >= 10


def test_load_sources_resolves_relative_paths(library_dir):
    clips = load_sources(library_dir / "sources.jsonl")
    assert all((library_dir / f"{c.id}.wav").samefile(c.path) for c in clips)


def test_load_sources_rejects_bad_records(tmp_path):
    bad = SourceClipMeta.from_dict(
        {"id": "x", "path": "x.wav", "type_tag": "noise", "duration_s": 1, "captions": {"keywords": "a", "brief": "b", "detailed": "c"}}
    )
    (tmp_path / "s.jsonl").write_text(json.dumps(bad.to_dict()) + "\n")
    with pytest.raises(LibraryError, match="type_tag"):
        load_sources(tmp_path / "s.jsonl")


def test_best_sweep_config_is_constant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_supervision_params(BEST_SWEEP_CONFIG, rng) == SupervisionParams("brief", 0.25, 0.05, 0.10)


def test_sampling_covers_all_choices():
    rng = np.random.default_rng(1)
    draws = [sample_supervision_params(SamplingConfig(), rng) for _ in range(3000)]
    assert {d.style for d in draws} == {"keywords", "brief", "detailed"}
    assert {d.resolution_s for d in draws} == {0.01, 0.10, 0.50}
    acts = np.array([d.activity for d in draws])
    assert acts.min() >= 0.01 and acts.max() <= 0.20
    # log-uniform: the geometric midpoint splits the mass evenly
    mid = math.sqrt(0.01 * 0.20)
    assert abs(np.mean(acts < mid) - 0.5) < 0.05
