from __future__ import annotations

import itertools
import random

import pytest

from sceneforge.caption_codec import WireOptions
from sceneforge.fixtures import write_reference_template, write_synthetic_library
from sceneforge.pipeline import generate_dataset
from sceneforge.scene import load_sources, load_template
from sceneforge.supervision import STYLES, TYPE_TAGS, CaptionDocument, GroundTruthEvent, SupervisionParams, TimeSegment

WORDS = (
    "dog barks loudly door slams shut soft jazz music plays woman speaks quietly car horn honks "
    "glass breaks rain falls steadily footsteps echo crowd cheers bell rings wind howls engine idles "
    "piano melody from afar bird chirps"
).split()


@pytest.fixture(scope="session")
def library_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("library")
    write_synthetic_library(root)
    write_reference_template(root / "template.json")
    return root


@pytest.fixture(scope="session")
def library(library_dir):
    return load_sources(library_dir / "sources.jsonl")


@pytest.fixture(scope="session")
def template(library_dir):
    return load_template(library_dir / "template.json")


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, library_dir, template, library):
    out = tmp_path_factory.mktemp("dataset")
    generate_dataset(
        template,
        library,
        count=50,
        seed=2024,
        out_dir=out,
        template_path=library_dir / "template.json",
        sources_path=library_dir / "sources.jsonl",
    )
    return out


def random_description(rng: random.Random, lo: int = 2, hi: int = 6) -> str:
    words = [rng.choice(WORDS) for _ in range(rng.randint(lo, hi))]
    words[0] = words[0].capitalize()
    return " ".join(words)


def random_segments(rng: random.Random, duration: float, resolution: float, max_segments: int = 4):
    """Disjoint, non-touching segments on the resolution grid inside [0, duration]."""
    steps = int(round(duration / resolution))
    cuts = sorted(rng.sample(range(steps + 1), 2 * rng.randint(1, min(max_segments, steps // 2))))
    segments = []
    for a, b in zip(cuts[0::2], cuts[1::2]):
        if segments and round(a * resolution, 6) <= segments[-1].end_s:
            continue
        segments.append(TimeSegment(round(a * resolution, 6), round(b * resolution, 6)))
    return tuple(segments)


def random_event(rng: random.Random, duration: float, resolution: float, transcripts: bool = True) -> GroundTruthEvent:
    tag = rng.choice(TYPE_TAGS)
    transcript = None
    if transcripts and tag == "speech" and rng.random() < 0.5:
        transcript = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 5)))
    return GroundTruthEvent(tag, random_description(rng), random_segments(rng, duration, resolution), transcript)


def random_params(rng: random.Random) -> SupervisionParams:
    return SupervisionParams(
        rng.choice(STYLES),
        round(rng.uniform(0.1, 1.0), 2),
        round(rng.uniform(0.01, 0.2), 2),
        rng.choice((0.01, 0.1, 0.5)),
    )


def random_document(rng: random.Random, max_events: int = 6, duration: float = None, params=None) -> CaptionDocument:
    params = params or random_params(rng)
    duration = duration or rng.choice((5.0, 10.0, 12.5, 20.0))
    events = [random_event(rng, duration, params.resolution_s) for _ in range(rng.randint(0, max_events))]
    return CaptionDocument.from_events(events, params, duration)


def perturb_document(rng: random.Random, refs: CaptionDocument, resolution: float = 0.1) -> CaptionDocument:
    """Plausible predictions: jittered, dropped, reworded and fabricated events."""
    duration = refs.duration_s
    steps = int(round(duration / resolution))
    events = []
    for event in refs.events:
        roll = rng.random()
        if roll < 0.15:
            continue
        desc = event.description
        if roll < 0.35:
            words = desc.split()
            words[rng.randrange(len(words))] = rng.choice(WORDS)
            desc = " ".join(words)
        segments = []
        for seg in event.segments:
            a = int(round(seg.start_s / resolution)) + rng.randint(-15, 15)
            b = int(round(seg.end_s / resolution)) + rng.randint(-15, 15)
            a, b = max(0, min(a, steps - 1)), max(0, min(b, steps))
            if b <= a or (segments and round(a * resolution, 6) <= segments[-1].end_s):
                continue
            segments.append(TimeSegment(round(a * resolution, 6), round(b * resolution, 6)))
        if segments:
            events.append(GroundTruthEvent(event.type_tag, desc, tuple(segments)))
    for _ in range(rng.randint(0, 2)):
        events.append(random_event(rng, duration, resolution, transcripts=False))
    return CaptionDocument.from_events(events, refs.params, duration)


def all_wire_options():
    for style, wrap, header in itertools.product(("tokenized", "plain"), (False, True), (False, True)):
        for decimals in ((None,) if style == "tokenized" else (None, 2, 3)):
            yield WireOptions(style, decimals, wrap, header)
