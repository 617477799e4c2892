"""Tone-logit pooling, triadic softmax and weighted quality scores.

Everything here is a pure function of its arguments. Means use ``math.fsum``
so the result does not depend on summation order, which keeps frame
permutations and repeated runs bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import EmptyInputError, IncompleteRecordError, InvalidLogitError
from .prompts import TONES, ScoringMode, TonePromptSet, active_words


def _check_finite(value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidLogitError(f"invalid logit: {value!r}")
    return value


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class ToneLogits:
    pos: float
    neu: float
    neg: float

    def __post_init__(self) -> None:
        for tone in TONES:
            object.__setattr__(self, tone, _check_finite(getattr(self, tone)))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.pos, self.neu, self.neg)


@dataclass(frozen=True)
class ToneProbabilities:
    q_pos: float
    q_neu: float
    q_neg: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.q_pos, self.q_neu, self.q_neg)


@dataclass(frozen=True)
class ScoreWeights:
    w1: float = 1.0
    w2: float = 0.5

    def __post_init__(self) -> None:
        for name in ("w1", "w2"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"weight {name} must be finite and >= 0, got {value!r}")
            object.__setattr__(self, name, value)
        if self.w1 == 0 and self.w2 == 0:
            raise ValueError("score weights (0, 0) are degenerate")


@dataclass(frozen=True)
class QualityScore:
    value: float
    weights: ScoreWeights
    mode: ScoringMode


@dataclass(frozen=True)
class FrameLogitSeries:
    frames: tuple[ToneLogits, ...]
    interval_seconds: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise EmptyInputError("empty video")
        if not self.interval_seconds > 0:
            raise ValueError("interval_seconds must be positive")


@dataclass(frozen=True)
class ScoreBreakdown:
    """Intermediate values behind a score, for verbose output."""

    score: QualityScore
    logits: ToneLogits
    probabilities: ToneProbabilities | None
    frame_count: int
    words: dict[str, list[str]] = field(default_factory=dict)


def average_tone_logits(word_logits: Sequence[float]) -> float:
    values = [_check_finite(v) for v in word_logits]
    if not values:
        raise EmptyInputError("empty tone group")
    return _mean(values)


def triadic_probabilities(logits: ToneLogits) -> ToneProbabilities:
    values = [_check_finite(v) for v in logits.as_tuple()]
    top = max(values)
    exps = [math.exp(v - top) for v in values]
    total = math.fsum(exps)
    return ToneProbabilities(*(e / total for e in exps))


def weighted_quality_score(
    probs: ToneProbabilities,
    weights: ScoreWeights = ScoreWeights(),
    mode: ScoringMode = ScoringMode.TTI,
) -> QualityScore:
    value = weights.w1 * probs.q_pos + weights.w2 * probs.q_neu
    return QualityScore(value=value, weights=weights, mode=ScoringMode.parse(mode))


def binary_quality_score(
    pos_logit: float, neg_logit: float, weights: ScoreWeights = ScoreWeights()
) -> QualityScore:
    """Positive-class probability of a two-way softmax over (pos, neg).

    ``weights`` is carried on the result for bookkeeping only.
    """
    diff = _check_finite(pos_logit) - _check_finite(neg_logit)
    # logistic(diff), written to avoid overflow for large |diff|
    if diff >= 0:
        prob = 1.0 / (1.0 + math.exp(-diff))
    else:
        e = math.exp(diff)
        prob = e / (1.0 + e)
    return QualityScore(value=prob, weights=weights, mode=ScoringMode.BINARY)


def aggregate_video_logits(series: FrameLogitSeries | Iterable[ToneLogits]) -> ToneLogits:
    frames = series.frames if isinstance(series, FrameLogitSeries) else tuple(series)
    if not frames:
        raise EmptyInputError("empty video")
    return ToneLogits(
        pos=_mean([f.pos for f in frames]),
        neu=_mean([f.neu for f in frames]),
        neg=_mean([f.neg for f in frames]),
    )


def _record_parts(record: object, position: int) -> tuple[Mapping[str, float], int, str | None]:
    if isinstance(record, Mapping):
        return record, position, None
    return record.word_logits, record.frame_index, getattr(record, "item_id", None)


def frame_tone_logits(
    record: object, prompts: TonePromptSet, mode: ScoringMode, position: int = 0
) -> ToneLogits:
    """Average one frame's word logits into tone logits for ``mode``.

    ``record`` is a WordLogitRecord or a plain ``word -> logit`` mapping. In
    binary mode the neutral slot is filled with 0.0 and never used.
    """
    logits, frame_index, item_id = _record_parts(record, position)
    grouped: dict[str, list[float]] = {tone: [] for tone in TONES}
    for word, tone in active_words(prompts, mode):
        if word not in logits:
            raise IncompleteRecordError(word, frame_index, item_id)
        grouped[tone].append(logits[word])
    return ToneLogits(
        pos=average_tone_logits(grouped["pos"]),
        neu=average_tone_logits(grouped["neu"]) if grouped["neu"] else 0.0,
        neg=average_tone_logits(grouped["neg"]),
    )


def score_breakdown(
    word_logits_per_frame: Sequence[object],
    prompts: TonePromptSet = TonePromptSet(),
    weights: ScoreWeights = ScoreWeights(),
    mode: ScoringMode = ScoringMode.TTI,
    interval_seconds: float = 1.0,
) -> ScoreBreakdown:
    mode = ScoringMode.parse(mode)
    if not word_logits_per_frame:
        raise EmptyInputError("empty video")
    # Word means first, then frame means; both are plain averages so the
    # order does not change the result.
    frames = [
        frame_tone_logits(record, prompts, mode, position=i)
        for i, record in enumerate(word_logits_per_frame)
    ]
    video = aggregate_video_logits(FrameLogitSeries(tuple(frames), interval_seconds))
    words: dict[str, list[str]] = {tone: [] for tone in TONES}
    for word, tone in active_words(prompts, mode):
        words[tone].append(word)
    if mode is ScoringMode.BINARY:
        score = binary_quality_score(video.pos, video.neg, weights)
        return ScoreBreakdown(score, video, None, len(frames), words)
    probs = triadic_probabilities(video)
    score = weighted_quality_score(probs, weights, mode)
    return ScoreBreakdown(score, video, probs, len(frames), words)


def score_item(
    word_logits_per_frame: Sequence[object],
    prompts: TonePromptSet = TonePromptSet(),
    weights: ScoreWeights = ScoreWeights(),
    mode: ScoringMode = ScoringMode.TTI,
) -> QualityScore:
    return score_breakdown(word_logits_per_frame, prompts, weights, mode).score
