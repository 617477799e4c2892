"""Prompt template and tone word groups.

Words are surface strings only. Mapping them to tokenizer ids is left to the
serving side, which scores each candidate as ``" " + word`` at the position
right after the prompt prefix.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any

DEFAULT_PREFIX = "Rate the quality of the image. The quality of this image is"

DEFAULT_POSITIVE = ("good", "high", "fine")
DEFAULT_NEUTRAL = ("average", "medium", "acceptable")
DEFAULT_NEGATIVE = ("poor", "low", "bad")

TONES = ("pos", "neu", "neg")
_GROUP_NAMES = {"pos": "positive", "neu": "neutral", "neg": "negative"}


class ScoringMode(str, enum.Enum):
    BINARY = "binary"
    TTI = "tti"
    TTI_MPE = "tti_mpe"

    @classmethod
    def parse(cls, value: "str | ScoringMode") -> "ScoringMode":
        if isinstance(value, ScoringMode):
            return value
        normalized = value.strip().lower().replace("+", "_").replace("-", "_")
        try:
            return cls(normalized)
        except ValueError:
            raise ValueError(f"unknown scoring mode: {value!r}") from None

    @property
    def cli_name(self) -> str:
        return "tti+mpe" if self is ScoringMode.TTI_MPE else self.value


# Row order used by ablation reports.
ABLATION_ORDER = (ScoringMode.BINARY, ScoringMode.TTI, ScoringMode.TTI_MPE)


@dataclass(frozen=True)
class PromptTemplate:
    prefix: str = DEFAULT_PREFIX

    def __post_init__(self) -> None:
        if not isinstance(self.prefix, str) or not self.prefix.strip():
            raise ValueError("prompt template prefix must be a nonempty string")

    def to_dict(self) -> dict[str, Any]:
        return {"prefix": self.prefix}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PromptTemplate":
        return cls(prefix=data.get("prefix", DEFAULT_PREFIX))


def build_prompt(template: PromptTemplate) -> str:
    """Return the text whose next-token distribution gets queried.

    Trailing whitespace is stripped; the leading space of each candidate word
    belongs to the candidate, not the prompt.
    """
    return template.prefix.rstrip()


@dataclass(frozen=True)
class TonePromptSet:
    positive: tuple[str, ...] = DEFAULT_POSITIVE
    neutral: tuple[str, ...] = DEFAULT_NEUTRAL
    negative: tuple[str, ...] = DEFAULT_NEGATIVE

    def __post_init__(self) -> None:
        for name in ("positive", "neutral", "negative"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def group(self, tone: str) -> tuple[str, ...]:
        return getattr(self, _GROUP_NAMES[tone])

    def groups(self) -> dict[str, tuple[str, ...]]:
        return {tone: self.group(tone) for tone in TONES}

    def all_words(self) -> list[str]:
        return [word for word, _ in active_words(self, ScoringMode.TTI_MPE)]

    def tone_of(self, word: str) -> str | None:
        for tone in TONES:
            if word in self.group(tone):
                return tone
        return None

    def to_dict(self) -> dict[str, list[str]]:
        return {
            "positive": list(self.positive),
            "neutral": list(self.neutral),
            "negative": list(self.negative),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TonePromptSet":
        return cls(
            positive=tuple(data.get("positive", DEFAULT_POSITIVE)),
            neutral=tuple(data.get("neutral", DEFAULT_NEUTRAL)),
            negative=tuple(data.get("negative", DEFAULT_NEGATIVE)),
        )


def validate_prompt_set(prompts: TonePromptSet) -> list[str]:
    """Return a list of invariant violations; empty when the set is valid."""
    problems: list[str] = []
    seen: dict[str, str] = {}
    reported_multi: set[str] = set()
    for tone in TONES:
        name = _GROUP_NAMES[tone]
        words = prompts.group(tone)
        if not words:
            problems.append(f"empty group: {name}")
            continue
        within: set[str] = set()
        for word in words:
            if not isinstance(word, str) or not word:
                problems.append(f"empty word in group: {name}")
                continue
            if word != word.lower():
                problems.append(f"word not lowercase: {word}")
            if any(ch.isspace() for ch in word):
                problems.append(f"word contains whitespace: {word!r}")
            if word in within:
                problems.append(f"duplicate word in group {name}: {word}")
                continue
            within.add(word)
            if word in seen and word not in reported_multi:
                problems.append(f"word in multiple groups: {word}")
                reported_multi.add(word)
            seen.setdefault(word, name)
    return problems


def active_words(prompts: TonePromptSet, mode: ScoringMode) -> list[tuple[str, str]]:
    """Words queried by ``mode`` as ``(word, tone)`` pairs, group-major."""
    mode = ScoringMode.parse(mode)
    if mode is ScoringMode.BINARY:
        return [(prompts.positive[0], "pos"), (prompts.negative[0], "neg")]
    if mode is ScoringMode.TTI:
        return [(prompts.group(tone)[0], tone) for tone in TONES]
    return [(word, tone) for tone in TONES for word in prompts.group(tone)]

