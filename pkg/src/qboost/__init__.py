"""Zero-shot image and video quality scores from multimodal LLM tone-word logits."""

from .backend import BackendConfig, LogitQuery, WordLogitRecord, fetch_logits, prompt_digest
from .dataset import MediaItem, MediaManifest, load_manifest, normalize_mos, plan_frames
from .metrics import CorrelationReport, average_ranks, compute_relative_index, plcc, plcc_logistic, srcc
from .prompts import PromptTemplate, ScoringMode, TonePromptSet, active_words, build_prompt, validate_prompt_set
from .scoring import (
    FrameLogitSeries,
    QualityScore,
    ScoreWeights,
    ToneLogits,
    ToneProbabilities,
    aggregate_video_logits,
    average_tone_logits,
    binary_quality_score,
    score_item,
    triadic_probabilities,
    weighted_quality_score,
)

__version__ = "0.1.0"
