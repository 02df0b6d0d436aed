"""Signal-level primitives: WAV I/O, augmentation, placement mixing and RMS activity maps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_WINDOW_S = 0.05
DEFAULT_HOP_S = 0.01

# RT60-style envelope: exp(-6.91 t / decay) falls by 60 dB at t = decay.
_RT60_RATE = 6.91
_IR_LENGTH_DECAYS = 3.0


class AudioError(ValueError):
    """Unreadable, unsupported or empty audio."""


class AugmentationError(ValueError):
    """An AugmentationSpec violates its invariants."""


def _freeze(samples) -> np.ndarray:
    arr = np.array(samples, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_id: Optional[str] = None

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = self.samples
        if not (isinstance(samples, np.ndarray) and samples.dtype == np.float64 and not samples.flags.writeable):
            samples = _freeze(samples)
        if samples.ndim != 1:
            raise AudioError("AudioClip holds mono samples only")
        if not np.all(np.isfinite(samples)):
            raise AudioError("samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate, self.source_id)


@dataclass(frozen=True)
class ReverbSpec:
    decay_s: float
    wet_mix: float


@dataclass(frozen=True)
class AugmentationSpec:
    gain_db: float = 0.0
    fade_in_s: float = 0.0
    fade_out_s: float = 0.0
    distortion_drive: float = 0.0
    reverb: Optional[ReverbSpec] = None

    def violations(self, duration_s: Optional[float] = None, tolerance_s: float = 1e-9) -> list[str]:
        problems = []
        if not math.isfinite(self.gain_db):
            problems.append("gain_db must be finite")
        if self.fade_in_s < 0 or self.fade_out_s < 0:
            problems.append("fades must be non-negative")
        if duration_s is not None and self.fade_in_s + self.fade_out_s > duration_s + tolerance_s:
            problems.append(
                f"fade_in_s + fade_out_s = {self.fade_in_s + self.fade_out_s:g} exceeds clip duration {duration_s:g}"
            )
        if self.distortion_drive < 0:
            problems.append("distortion_drive must be >= 0")
        if self.reverb is not None:
            if not 0.0 <= self.reverb.wet_mix <= 1.0:
                problems.append("reverb.wet_mix must lie in [0, 1]")
            if self.reverb.decay_s <= 0:
                problems.append("reverb.decay_s must be positive")
        return problems


@dataclass(frozen=True, eq=False)
class ActivityMap:
    """Frame-level RMS envelope. Frame k starts at k * hop_s and spans window_s."""

    frame_values: np.ndarray
    hop_s: float
    window_s: float

    def __post_init__(self):
        if not self.hop_s > 0 or self.window_s < self.hop_s:
            raise ValueError(f"need window_s >= hop_s > 0, got window={self.window_s} hop={self.hop_s}")
        values = _freeze(self.frame_values)
        if values.ndim != 1 or np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("frame values must be a 1-D array of finite non-negative numbers")
        object.__setattr__(self, "frame_values", values)

    def __len__(self) -> int:
        return len(self.frame_values)


# --------------------------------------------------------------------------
# WAV I/O


def _to_float(data: np.ndarray) -> np.ndarray:
    kind = data.dtype
    if kind == np.int16:
        return data.astype(np.float64) / 32768.0
    if kind == np.int32:
        # scipy returns 24-bit PCM left-justified in int32
        return data.astype(np.float64) / 2147483648.0
    if kind == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if kind in (np.float32, np.float64):
        return data.astype(np.float64)
    raise AudioError(f"unsupported sample format {kind}")


def resample_linear(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    if src_rate == dst_rate:
        return np.asarray(samples, dtype=np.float64)
    n_out = max(1, int(round(len(samples) * dst_rate / src_rate)))
    t_out = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(t_out, np.arange(len(samples)), samples)


def load_clip(path, sample_rate: Optional[int] = None, source_id: Optional[str] = None) -> AudioClip:
    """Read a PCM WAV file as a mono clip.

    Multichannel audio is averaged to mono. When ``sample_rate`` is given
    and differs from the file rate, the clip is linearly resampled.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as exc:
        raise AudioError(f"{path}: no such file") from exc
    except (ValueError, OSError) as exc:
        raise AudioError(f"{path}: cannot read WAV ({exc})") from exc
    if data.size == 0:
        raise AudioError(f"{path}: zero-length audio")
    samples = _to_float(data)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if sample_rate is not None and sample_rate != rate:
        samples = resample_linear(samples, rate, sample_rate)
        rate = sample_rate
    return AudioClip(samples, int(rate), source_id)


def save_clip(clip: AudioClip, path, fmt: str = "pcm16") -> None:
    """Write a mono WAV. ``fmt`` is ``"pcm16"`` or ``"float32"``."""
    x = np.clip(clip.samples, -1.0, 1.0)
    if fmt == "pcm16":
        data = np.round(x * 32767.0).astype("<i2")
    elif fmt == "float32":
        data = x.astype("<f4")
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(Path(path), clip.sample_rate, data)


# --------------------------------------------------------------------------
# Augmentation


def db_to_linear(gain_db: float) -> float:
    return 10.0 ** (gain_db / 20.0)


def noise_impulse_response(decay_s: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Exponentially decaying white noise, 3 decay times long, unit energy."""
    n = max(1, int(round(_IR_LENGTH_DECAYS * decay_s * sample_rate)))
    t = np.arange(n) / sample_rate
    ir = rng.standard_normal(n) * np.exp(-_RT60_RATE * t / decay_s)
    norm = np.sqrt(np.sum(ir * ir))
    return ir / norm if norm > 0 else ir


def process_audio(clip: AudioClip, spec: AugmentationSpec, rng: np.random.Generator) -> AudioClip:
    """Apply gain, fades, tanh distortion and noise-IR reverb, in that order.

    The reverb tail makes the output longer than the input. Identity
    settings return the input samples unchanged.
    """
    # clip lengths are whole samples, so allow one sample of slack
    problems = spec.violations(clip.duration_s, 1.0 / clip.sample_rate)
    if problems:
        raise AugmentationError("; ".join(problems))

    x = clip.samples
    if spec.gain_db != 0.0:
        x = x * db_to_linear(spec.gain_db)

    sr = clip.sample_rate
    n_in = int(round(spec.fade_in_s * sr))
    n_out = int(round(spec.fade_out_s * sr))
    if n_in > 0 or n_out > 0:
        env = np.ones(len(x))
        n_in, n_out = min(n_in, len(x)), min(n_out, len(x))
        if n_in:
            env[:n_in] = np.arange(n_in) / n_in
        if n_out:
            env[len(x) - n_out:] *= np.arange(n_out, 0, -1) / n_out
        x = x * env

    drive = spec.distortion_drive
    if drive > 0:
        x = np.tanh(drive * x) / np.tanh(drive)

    if spec.reverb is not None:
        ir = noise_impulse_response(spec.reverb.decay_s, sr, rng)
        wet = fftconvolve(x, ir)
        dry = np.zeros(len(wet))
        dry[: len(x)] = x
        mix = spec.reverb.wet_mix
        x = (1.0 - mix) * dry + mix * wet

    if x is clip.samples:
        return clip
    return clip.with_samples(x)


# --------------------------------------------------------------------------
# Mixing


@dataclass(frozen=True)
class Placement:
    clip: AudioClip
    offset_s: float
    gain_db: float = 0.0


@dataclass(frozen=True)
class MixResult:
    mix: AudioClip
    normalization_gain: float


def place_and_mix(
    placements: Sequence[Placement],
    duration_s: float,
    sample_rate: Optional[int] = None,
    normalize: bool = True,
) -> MixResult:
    """Sum gained, offset clips over a zero buffer of ``duration_s``.

    Content past the end of the buffer is truncated. With ``normalize``,
    a mixture whose peak exceeds 1.0 is scaled by 1/peak.
    """
    rates = {p.clip.sample_rate for p in placements}
    if sample_rate is not None:
        rates.add(sample_rate)
    if len(rates) > 1:
        raise AudioError(f"mismatched sample rates: {sorted(rates)}")
    if not rates:
        raise AudioError("sample_rate required when there are no placements")
    sr = rates.pop()

    n_total = int(round(duration_s * sr))
    buf = np.zeros(n_total)
    for p in placements:
        if p.offset_s < 0:
            raise AudioError(f"negative offset {p.offset_s}")
        start = int(round(p.offset_s * sr))
        if start >= n_total:
            continue
        seg = p.clip.samples[: n_total - start]
        if p.gain_db != 0.0:
            seg = seg * db_to_linear(p.gain_db)
        buf[start: start + len(seg)] += seg

    gain = 1.0
    if normalize:
        peak = float(np.max(np.abs(buf))) if n_total else 0.0
        if peak > 1.0:
            gain = 1.0 / peak
            buf *= gain
            # guard against 1/peak * peak rounding a hair above 1
            np.clip(buf, -1.0, 1.0, out=buf)
    return MixResult(AudioClip(buf, sr), gain)


# --------------------------------------------------------------------------
# Activity


def compute_rms(clip: AudioClip, window_s: float = DEFAULT_WINDOW_S, hop_s: float = DEFAULT_HOP_S) -> ActivityMap:
    """Frame RMS with frames at k * hop_s spanning window_s, zero-padded at the tail.

    Frame count is ceil(duration / hop) so the map covers the whole clip.
    """
    if not (hop_s > 0 and window_s >= hop_s):
        raise ValueError(f"need window_s >= hop_s > 0, got window={window_s} hop={hop_s}")
    n = len(clip.samples)
    if n == 0:
        raise AudioError("cannot compute RMS of an empty clip")
    sr = clip.sample_rate
    hop_n = hop_s * sr
    win_n = max(1, int(round(window_s * sr)))
    n_frames = int(math.ceil(n / hop_n - 1e-9))
    starts = np.round(np.arange(n_frames) * hop_n).astype(np.int64)

    sq = np.zeros(int(starts[-1]) + win_n)
    sq[:n] = clip.samples * clip.samples
    windows = np.lib.stride_tricks.sliding_window_view(sq, win_n)[starts]
    values = np.sqrt(windows.mean(axis=1))
    return ActivityMap(values, hop_s, window_s)
