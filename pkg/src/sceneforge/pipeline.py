"""Scene compilation and dataset generation.

One scene: instantiate a template, render every event onto its own
scene-length track, sum the tracks into the mixture, and derive the caption
document from each track's activity map. Datasets derive one seed per scene
so scenes can be rendered in any order, by any number of workers.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import audio
from .audio import AudioClip, MixResult, Placement, compute_rms, place_and_mix, process_audio
from .caption_codec import WireOptions, format_caption, format_prompt
from .records import MANIFEST_NAME, event_from_dict, event_to_dict
from .scene import (
    EventPlan,
    SamplingConfig,
    SceneConstraintError,
    SceneInstance,
    SceneTemplate,
    SourceClipMeta,
    instantiate_events,
    sample_supervision_params,
)
from .supervision import (
    CaptionDocument,
    EmptySceneError,
    SupervisionParams,
    build_ground_truth,
)

log = logging.getLogger(__name__)

MAX_SCENE_RETRIES = 8
PARTIAL_MARKER = ".partial"


def scene_seed(dataset_seed: int, scene_index: int, retry: int = 0) -> int:
    """Stable 64-bit seed for one scene (and one retry of it)."""
    key = f"{dataset_seed}:{scene_index}" if retry == 0 else f"{dataset_seed}:{scene_index}:retry{retry}"
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


def scene_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent streams for instantiation, supervision params and signal processing."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def excerpt(clip: AudioClip, start_s: float, length_s: float) -> AudioClip:
    """Cut [start, start + length) from a clip, looping it when it is too short."""
    sr = clip.sample_rate
    n = int(round(length_s * sr))
    first = int(round(start_s * sr))
    idx = (first + np.arange(n)) % len(clip.samples)
    return AudioClip(clip.samples[idx], sr, clip.source_id)


class ClipCache:
    """Loads library clips on demand at one sample rate."""

    def __init__(self, library: Sequence[SourceClipMeta], sample_rate: int):
        self.by_id = {meta.id: meta for meta in library}
        self.sample_rate = sample_rate
        self._clips: dict[str, AudioClip] = {}

    def __getitem__(self, source_id: str) -> AudioClip:
        clip = self._clips.get(source_id)
        if clip is None:
            meta = self.by_id[source_id]
            clip = audio.load_clip(meta.path, self.sample_rate, source_id)
            self._clips[source_id] = clip
        return clip


@dataclass
class CompiledScene:
    instance: SceneInstance
    params: SupervisionParams
    mix: AudioClip
    normalization_gain: float
    document: CaptionDocument
    prompt: str
    target: str
    maps: list = field(default_factory=list)


def render_event(
    plan: EventPlan, source: AudioClip, duration_s: float, rng: np.random.Generator
) -> AudioClip:
    """Processed occurrences of one event on a scene-length track (reverb tails truncated)."""
    placements = []
    for occ in plan.occurrences:
        seg = excerpt(source, occ.clip_start_s, occ.clip_len_s)
        placements.append(Placement(process_audio(seg, plan.augmentation, rng), occ.offset_s))
    return place_and_mix(placements, duration_s, source.sample_rate, normalize=False).mix


def compile_scene(
    instance: SceneInstance,
    params: SupervisionParams,
    clips: Mapping[str, AudioClip],
    rng: np.random.Generator,
    sample_rate: int = audio.DEFAULT_SAMPLE_RATE,
    wire: WireOptions = WireOptions(),
) -> CompiledScene:
    """Mix a scene and build its prompt and target caption."""
    tracks, maps = [], []
    for plan in instance.plans:
        track = render_event(plan, clips[plan.source.id], instance.duration_s, rng)
        tracks.append(track)
        maps.append(compute_rms(track))
    result: MixResult = place_and_mix(
        [Placement(t, 0.0) for t in tracks], instance.duration_s, sample_rate
    )
    document = build_ground_truth(instance.plans, maps, params, instance.duration_s)
    return CompiledScene(
        instance=instance,
        params=params,
        mix=result.mix,
        normalization_gain=result.normalization_gain,
        document=document,
        prompt=format_prompt(params),
        target=format_caption(document, wire),
        maps=maps,
    )


def generate_scene(
    template: SceneTemplate,
    library: Sequence[SourceClipMeta],
    clips: Mapping[str, AudioClip],
    seed: int,
    sampling: SamplingConfig = SamplingConfig(),
    sample_rate: int = audio.DEFAULT_SAMPLE_RATE,
) -> CompiledScene:
    inst_rng, param_rng, proc_rng = scene_rngs(seed)
    instance = instantiate_events(template, library, inst_rng)
    # the prompt prints 2 decimals, so supervision uses exactly those values
    params = sample_supervision_params(sampling, param_rng).quantized()
    return compile_scene(instance, params, clips, proc_rng, sample_rate)


# --------------------------------------------------------------------------
# Sidecars


def sidecar_record(scene: CompiledScene, audio_name: str, seed: int) -> dict:
    return {
        "audio": audio_name,
        "duration_s": scene.instance.duration_s,
        "normalization_gain": scene.normalization_gain,
        "scene_seed": seed,
        "params": scene.params.to_dict(),
        "events": [event_to_dict(e) for e in scene.document.events],
        "plans": [p.to_dict() for p in scene.instance.plans],
        "prompt": scene.prompt,
        "target": scene.target,
    }


def sidecar_document(record: dict) -> CaptionDocument:
    params = SupervisionParams.from_dict(record["params"])
    events = [event_from_dict(e) for e in record["events"]]
    return CaptionDocument.from_events(events, params, float(record["duration_s"]))


def verify_sidecar(record: dict, wire: WireOptions = WireOptions()) -> bool:
    """True when the stored target re-renders from the stored events and params."""
    doc = sidecar_document(record)
    return format_caption(doc, wire) == record["target"] and format_prompt(doc.params) == record["prompt"]


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class GenerateJob:
    template: SceneTemplate
    library: tuple
    dataset_seed: int
    out_dir: str
    sample_rate: int
    sampling: SamplingConfig
    wav_format: str


_worker_cache: Optional[ClipCache] = None


def _cache_for(job: GenerateJob) -> ClipCache:
    global _worker_cache
    if _worker_cache is None or _worker_cache.sample_rate != job.sample_rate or set(_worker_cache.by_id) != {
        m.id for m in job.library
    }:
        _worker_cache = ClipCache(job.library, job.sample_rate)
    return _worker_cache


def scene_name(index: int) -> str:
    return f"scene_{index:06d}"


def _generate_one(job: GenerateJob, index: int) -> dict:
    clips = _cache_for(job)
    out = Path(job.out_dir)
    name = scene_name(index)
    failures = []
    for retry in range(MAX_SCENE_RETRIES + 1):
        seed = scene_seed(job.dataset_seed, index, retry)
        try:
            scene = generate_scene(job.template, job.library, clips, seed, job.sampling, job.sample_rate)
        except (EmptySceneError, SceneConstraintError) as exc:
            failures.append(f"retry {retry}: {exc}")
            continue
        audio.save_clip(scene.mix, out / f"{name}.wav", job.wav_format)
        dump_json(sidecar_record(scene, f"{name}.wav", seed), out / f"{name}.json")
        return {
            "scene_index": index,
            "audio_path": f"{name}.wav",
            "sidecar_path": f"{name}.json",
            "scene_seed": seed,
            "retries": retry,
        }
    return {"scene_index": index, "skipped": True, "reasons": failures}


def _file_ref(path) -> dict:
    path = Path(path)
    return {"name": path.name, "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}


def generate_dataset(
    template: SceneTemplate,
    library: Sequence[SourceClipMeta],
    count: int,
    seed: int,
    out_dir,
    sample_rate: int = audio.DEFAULT_SAMPLE_RATE,
    workers: int = 1,
    sampling: SamplingConfig = SamplingConfig(),
    wav_format: str = "pcm16",
    template_path=None,
    sources_path=None,
) -> dict:
    """Render ``count`` scenes into ``out_dir`` and write the manifest last.

    A ``.partial`` marker sits in ``out_dir`` until the manifest is written,
    so an interrupted run is recognisable.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / PARTIAL_MARKER
    marker.write_text("generation in progress\n", encoding="utf-8")

    job = GenerateJob(template, tuple(library), seed, str(out), sample_rate, sampling, wav_format)
    indices = range(count)
    if workers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_one, [job] * count, indices))
    else:
        results = [_generate_one(job, i) for i in indices]

    scenes = [r for r in results if not r.get("skipped")]
    skipped = [r for r in results if r.get("skipped")]
    for r in skipped:
        log.warning("scene %d skipped after %d attempts", r["scene_index"], MAX_SCENE_RETRIES + 1)
    manifest = {
        "dataset_seed": seed,
        "template": _file_ref(template_path) if template_path else {"name": template.name},
        "sources": _file_ref(sources_path) if sources_path else None,
        "count": count,
        "sample_rate": sample_rate,
        "scenes": scenes,
        "skipped": skipped,
    }
    dump_json(manifest, out / MANIFEST_NAME)
    marker.unlink()
    return manifest
