"""Exception hierarchy shared by every qboost module."""

from __future__ import annotations


class QBoostError(Exception):
    """Base class for all errors raised by qboost."""


class InvalidLogitError(QBoostError, ValueError):
    pass


class EmptyInputError(QBoostError, ValueError):
    pass


class IncompleteRecordError(QBoostError, KeyError):
    """A logit record lacks a word the scoring mode needs."""

    def __init__(self, word: str, frame_index: int, item_id: str | None = None):
        self.word = word
        self.frame_index = frame_index
        self.item_id = item_id
        where = f"frame {frame_index}" if item_id is None else f"item {item_id!r} frame {frame_index}"
        super().__init__(f"incomplete logit record: missing word {word!r} at {where}")

    def __str__(self) -> str:
        return self.args[0]


class ConfigError(QBoostError, ValueError):
    pass


class BackendError(QBoostError):
    pass


class BackendUnreachable(BackendError):
    pass


class BackendRejected(BackendError):
    def __init__(self, status: int, detail: str = ""):
        self.status = status
        msg = f"backend rejected request (HTTP {status})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class IncompleteBackendResponse(BackendError):
    pass


class InvalidBackendLogit(BackendError):
    pass


class CacheMiss(BackendError):
    def __init__(self, item_id: str, frame_index: int, digest: str):
        self.key = (item_id, frame_index, digest)
        super().__init__(f"cache miss: item={item_id!r} frame={frame_index} prompt_sha256={digest}")


class CacheWriteError(BackendError):
    pass


class ManifestError(QBoostError, ValueError):
    pass


class FrameExtractionError(QBoostError):
    pass


class MetricError(QBoostError, ValueError):
    pass
