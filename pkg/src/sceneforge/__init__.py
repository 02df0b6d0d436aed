"""Soundscape compiler and timestamped-caption evaluation toolkit."""

from .audio import AudioClip, AugmentationSpec, ReverbSpec, compute_rms, load_clip, place_and_mix, process_audio, save_clip
from .caption_codec import WireOptions, format_caption, format_prompt, parse_caption, parse_prompt
from .eval import EvalConfig, MetricsReport, aggregate, evaluate, match_events
from .pipeline import compile_scene, generate_dataset, generate_scene, scene_seed
from .scene import SamplingConfig, SceneTemplate, instantiate_events, load_sources, load_template, sample_supervision_params
from .supervision import CaptionDocument, GroundTruthEvent, SupervisionParams, TimeSegment, build_ground_truth, get_nonzero_ranges

__version__ = "0.1.0"
