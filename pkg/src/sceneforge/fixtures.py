"""Synthetic source library and reference template for demos and tests.

The clips are procedurally generated stand-ins for real recordings: tonal
beds for music, syllable-rate noise bursts for speech, short transients for
sound effects and shaped noise for room tone. Each has silence where a real
clip would, so the activity maps have structure worth segmenting.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio import DEFAULT_SAMPLE_RATE, AudioClip, save_clip
from .scene import Captions, SceneTemplate, SourceClipMeta

REFERENCE_TEMPLATE = {
    "name": "speech over music indoor",
    "duration_range_s": [8.0, 20.0],
    "max_concurrent": 4,
    "reverb_prob": 0.3,
    "roles": {
        "music": {
            "count_range": [1, 1],
            "continuous": True,
            "gain_db_range": [-14.0, -8.0],
            "augmentation_ranges": {"fade_in_s": [0.0, 1.0], "fade_out_s": [0.0, 1.0]},
        },
        "background": {
            "count_range": [0, 1],
            "continuous": True,
            "gain_db_range": [-30.0, -24.0],
        },
        "speech": {
            "count_range": [1, 2],
            "repeat_range": [1, 2],
            "no_self_overlap": True,
            "gain_db_range": [-3.0, 0.0],
            "offset_policy": "uniform",
        },
        "sfx": {
            "count_range": [0, 3],
            "repeat_range": [1, 3],
            "gain_db_range": [-9.0, 0.0],
            "offset_policy": "anywhere",
            "augmentation_ranges": {"fade_out_s": [0.0, 0.05], "distortion_drive": [0.0, 2.0]},
        },
    },
}


def reference_template() -> SceneTemplate:
    return SceneTemplate.from_dict(REFERENCE_TEMPLATE)


def _t(seconds: float, sr: int) -> np.ndarray:
    return np.arange(int(round(seconds * sr))) / sr


def _music(sr: int, seconds: float, root_hz: float, beat_hz: float) -> np.ndarray:
    t = _t(seconds, sr)
    chord = sum(np.sin(2 * np.pi * root_hz * r * t) for r in (1.0, 1.25, 1.5))
    pulse = 0.6 + 0.4 * np.cos(2 * np.pi * beat_hz * t) ** 2
    return 0.25 * chord * pulse


def _speech(sr: int, seconds: float, rng: np.random.Generator, pauses: list[tuple[float, float]]) -> np.ndarray:
    t = _t(seconds, sr)
    syllables = np.clip(np.sin(2 * np.pi * 4.0 * t), 0, None) ** 2
    voiced = np.sin(2 * np.pi * 140 * t) + 0.5 * np.sin(2 * np.pi * 280 * t)
    x = 0.5 * syllables * (0.7 * voiced + 0.3 * rng.standard_normal(len(t)))
    for a, b in pauses:
        x[int(a * sr) : int(b * sr)] = 0.0
    return x


def _bursts(sr: int, seconds: float, rng: np.random.Generator, onsets, length_s: float, tone_hz=None) -> np.ndarray:
    x = np.zeros(int(round(seconds * sr)))
    n = int(length_s * sr)
    env = np.exp(-np.arange(n) / (0.3 * n))
    for onset in onsets:
        i = int(onset * sr)
        body = rng.standard_normal(n) if tone_hz is None else np.sin(2 * np.pi * tone_hz * np.arange(n) / sr)
        x[i : i + n] += 0.8 * env * body
    return x


def _tone(sr: int, seconds: float, on: tuple[float, float], hz: float) -> np.ndarray:
    x = np.zeros(int(round(seconds * sr)))
    t = _t(on[1] - on[0], sr)
    x[int(on[0] * sr) : int(on[0] * sr) + len(t)] = 0.6 * np.sign(np.sin(2 * np.pi * hz * t))
    return x


def _room_tone(sr: int, seconds: float, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal(int(round(seconds * sr)))
    # one-pole lowpass gives a dull hum-like bed
    out = lfilter([0.02], [1.0, -0.98], white)
    return 0.5 * out / np.max(np.abs(out))


def _library_specs(sr: int, rng: np.random.Generator):
    return [
        ("music_jazz", "music", _music(sr, 10.0, 220.0, 1.0),
         Captions("jazz, music", "Background jazz music plays softly", "Smooth background jazz with brushed drums and a warm upright bass plays softly"), None),
        ("music_piano", "music", _music(sr, 8.0, 261.6, 0.5),
         Captions("piano, music", "A gentle piano melody", "A gentle solo piano melody with slow sustained chords"), None),
        ("music_strings", "music", _music(sr, 12.0, 196.0, 0.25),
         Captions("strings, orchestra", "Orchestral strings swell", "An orchestral string section swells and recedes in long phrases"), None),
        ("speech_greeting", "speech", _speech(sr, 3.0, rng, [(1.2, 1.6)]),
         Captions("speech, man", "A man greets someone", "A man speaks in a calm voice, greeting someone across the room"),
         "hello there, come on in"),
        ("speech_question", "speech", _speech(sr, 4.0, rng, [(0.9, 1.5), (2.6, 2.8)]),
         Captions("speech, woman", "A woman asks a question", "A woman asks a short question in a curious tone"),
         "did you hear that sound"),
        ("speech_announce", "speech", _speech(sr, 5.0, rng, [(2.0, 3.0)]),
         Captions("speech, announcement", "A person makes an announcement", "A person makes a brief announcement over a quiet room"),
         "dinner will be served shortly"),
        ("sfx_dog", "sfx", _bursts(sr, 1.8, rng, [0.0, 0.45, 1.1], 0.3),
         Captions("dog, bark", "A dog barks aggressively", "A large dog barks aggressively several times in a row"), None),
        ("sfx_horn", "sfx", _tone(sr, 0.5, (0.0, 0.5), 420.0),
         Captions("car horn", "A car horn honks briefly", "A car horn honks once, briefly and loudly"), None),
        ("sfx_knock", "sfx", _bursts(sr, 1.2, rng, [0.0, 0.25, 0.5], 0.08),
         Captions("knock, door", "Someone knocks on a door", "Someone knocks three times on a wooden door"), None),
        ("sfx_glass", "sfx", _bursts(sr, 0.8, rng, [0.0], 0.5, tone_hz=2400.0),
         Captions("glass, clink", "Glasses clink together", "Two glasses clink together with a bright ringing tone"), None),
        ("sfx_steps", "sfx", _bursts(sr, 2.5, rng, [0.0, 0.6, 1.2, 1.8], 0.12),
         Captions("footsteps", "Footsteps cross the room", "Slow footsteps cross a hard wooden floor"), None),
        ("bg_room", "background", _room_tone(sr, 6.0, rng),
         Captions("room tone", "A quiet room hums", "The low steady hum of a quiet indoor room"), None),
    ]


def write_synthetic_library(out_dir, sample_rate: int = DEFAULT_SAMPLE_RATE, seed: int = 0) -> Path:
    """Write WAV clips plus a ``sources.jsonl`` manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for clip_id, tag, samples, captions, transcript in _library_specs(sample_rate, rng):
        clip = AudioClip(np.clip(samples, -1.0, 1.0), sample_rate, clip_id)
        save_clip(clip, out / f"{clip_id}.wav")
        meta = SourceClipMeta(clip_id, f"{clip_id}.wav", tag, captions, round(clip.duration_s, 6), transcript)
        lines.append(json.dumps(meta.to_dict(), sort_keys=True))
    manifest = out / "sources.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def write_reference_template(path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(REFERENCE_TEMPLATE, indent=2) + "\n", encoding="utf-8")
    return path


# the default tuple followed by one-factor-at-a-time variations of it
SWEEP_GRID = (
    ("brief", 0.25, 0.05, 0.10),
    ("detailed", 0.25, 0.05, 0.10),
    ("keywords", 0.25, 0.05, 0.10),
    ("brief", 0.10, 0.05, 0.10),
    ("brief", 0.50, 0.05, 0.10),
    ("brief", 1.00, 0.05, 0.10),
    ("brief", 0.25, 0.01, 0.10),
    ("brief", 0.25, 0.10, 0.10),
    ("brief", 0.25, 0.20, 0.10),
    ("brief", 0.25, 0.05, 0.01),
    ("brief", 0.25, 0.05, 0.50),
)


def write_sweep_grid(path) -> Path:
    keys = ("style", "merge", "activity", "resolution")
    path = Path(path)
    path.write_text(json.dumps({"tuples": [dict(zip(keys, t)) for t in SWEEP_GRID]}, indent=2) + "\n", encoding="utf-8")
    return path


GOLDEN_BODY = (
    "3 events total. 2 events overlap. 2 sound effects, 1 music. "
    "[music] Background jazz music plays softly from <|0.00|>s to <|10.00|>s. "
    "[sfx] A dog barks aggressively from <|0.50|>s to <|2.30|>s. "
    "[sfx] A car horn honks briefly from <|5.00|>s to <|5.50|>s."
)


def golden_scene(sample_rate: int = DEFAULT_SAMPLE_RATE):
    """Jazz bed over 0-10 s, dog barks at 0.5-2.3 s, horn at 5.0-5.5 s.

    Every source is a steady tone so its activity is an ideal rectangle.
    Returns ``(instance, clips, params)`` ready for ``compile_scene``.
    """
    from .audio import AugmentationSpec
    from .scene import EventPlan, Occurrence, SceneInstance
    from .supervision import SupervisionParams

    captions = {
        "music_jazz": Captions("jazz, music", "Background jazz music plays softly", "Smooth jazz plays softly"),
        "sfx_dog": Captions("dog, bark", "A dog barks aggressively", "A large dog barks aggressively"),
        "sfx_horn": Captions("car horn", "A car horn honks briefly", "A car horn honks once, briefly"),
    }
    layout = [("music_jazz", "music", 0.0, 10.0, 220.0), ("sfx_dog", "sfx", 0.5, 1.8, 500.0), ("sfx_horn", "sfx", 5.0, 0.5, 420.0)]
    clips, plans = {}, []
    for event_id, (clip_id, tag, offset, length, hz) in enumerate(layout):
        samples = 0.3 * np.sin(2 * np.pi * hz * _t(length, sample_rate))
        clips[clip_id] = AudioClip(samples, sample_rate, clip_id)
        meta = SourceClipMeta(clip_id, f"{clip_id}.wav", tag, captions[clip_id], length)
        occurrence = Occurrence(offset, 0.0, length)
        plans.append(EventPlan(event_id, meta, tag, tag, (occurrence,), AugmentationSpec()))
    params = SupervisionParams("brief", 0.25, 0.05, 0.10)
    return SceneInstance(10.0, tuple(plans)), clips, params
