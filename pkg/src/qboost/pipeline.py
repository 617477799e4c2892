"""End-to-end runs: score one item, evaluate a manifest, ablate modes, record a cache.

All runs fetch logits for the full word superset once per frame and apply the
scoring mode afterwards, so switching modes never costs another model call.
"""

from __future__ import annotations

import hashlib
import json
import logging
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import report as reportlib
from .backend import (
    BackendConfig,
    LogitQuery,
    RecordingBackend,
    WordLogitRecord,
    fetch_many,
    make_backend,
)
from .dataset import (
    ExtractorConfig,
    MediaItem,
    MediaManifest,
    infer_kind,
    load_manifest,
    normalize_mos,
    plan_frames,
)
from .errors import ConfigError, MetricError, QBoostError
from .metrics import CorrelationReport, compute_relative_index, correlate, mean_report
from .prompts import (
    ABLATION_ORDER,
    PromptTemplate,
    ScoringMode,
    TonePromptSet,
    build_prompt,
    validate_prompt_set,
)
from .scoring import ScoreBreakdown, ScoreWeights, score_breakdown

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    prompts: TonePromptSet = field(default_factory=TonePromptSet)
    template: PromptTemplate = field(default_factory=PromptTemplate)
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    # None picks tti for image-only manifests and tti_mpe once any video is present
    mode: ScoringMode | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)
    frame_interval: float = 1.0
    plcc_logistic: bool = False
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)

    def __post_init__(self) -> None:
        problems = validate_prompt_set(self.prompts)
        if problems:
            raise ConfigError("invalid prompt set: " + "; ".join(problems))
        if self.mode is not None:
            object.__setattr__(self, "mode", ScoringMode.parse(self.mode))
        if not self.frame_interval > 0:
            raise ConfigError("frame_interval must be positive")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        unknown = set(data) - {"prompts", "template", "weights", "mode", "backend", "frame_interval", "metrics", "extractor"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            weights = data.get("weights", {})
            extractor = data.get("extractor", {})
            return cls(
                prompts=TonePromptSet.from_dict(data.get("prompts", {})),
                template=PromptTemplate.from_dict(data.get("template", {})),
                weights=ScoreWeights(weights.get("w1", 1.0), weights.get("w2", 0.5)),
                mode=data.get("mode"),
                backend=BackendConfig.from_dict(data.get("backend", {})),
                frame_interval=float(data.get("frame_interval", 1.0)),
                plcc_logistic=bool(data.get("metrics", {}).get("plcc_logistic", False)),
                extractor=ExtractorConfig(extractor.get("command"), extractor.get("ext", "png")),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompts": self.prompts.to_dict(),
            "template": self.template.to_dict(),
            "weights": {"w1": self.weights.w1, "w2": self.weights.w2},
            "mode": None if self.mode is None else self.mode.value,
            "backend": self.backend.to_dict(),
            "frame_interval": self.frame_interval,
            "metrics": {"plcc_logistic": self.plcc_logistic},
            "extractor": {"command": self.extractor.command, "ext": self.extractor.ext},
        }

    def resolved_mode(self, items: Sequence[MediaItem] = ()) -> ScoringMode:
        if self.mode is not None:
            return self.mode
        return ScoringMode.TTI_MPE if any(i.kind == "video" for i in items) else ScoringMode.TTI


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(data)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def config_digest(config: RunConfig, mode: ScoringMode) -> str:
    """Hash of everything that can change a score, excluding the provider."""
    relevant = {
        "prompts": config.prompts.to_dict(),
        "template": build_prompt(config.template),
        "weights": [config.weights.w1, config.weights.w2],
        "mode": ScoringMode.parse(mode).value,
        "frame_interval": config.frame_interval,
        "metrics": {"plcc_logistic": config.plcc_logistic},
        "extractor": [config.extractor.command, config.extractor.ext],
    }
    blob = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --- fetching ----------------------------------------------------------------


@dataclass
class ItemRecords:
    item: MediaItem
    records: list[WordLogitRecord] = field(default_factory=list)
    error: str | None = None


def _latent_for(config: RunConfig, items: Sequence[MediaItem]) -> dict[str, float] | None:
    if config.backend.kind == "stub" and config.backend.latent_from_mos:
        return {item.id: normalize_mos(item) for item in items}
    return None


def _describe(exc: BaseException) -> str:
    return str(exc) or type(exc).__name__


def collect_records(
    config: RunConfig,
    items: Sequence[MediaItem],
    backend: Any | None = None,
    work_dir: Path | None = None,
) -> dict[str, ItemRecords]:
    """Plan frames and fetch one superset record per frame for every item."""
    owned = backend is None
    if owned:
        backend = make_backend(config.backend, config.prompts, _latent_for(config, items))
    try:
        return _collect(config, items, backend, work_dir)
    finally:
        if owned and hasattr(backend, "close"):
            backend.close()


def _collect(config: RunConfig, items: Sequence[MediaItem], backend: Any, work_dir: Path | None) -> dict[str, ItemRecords]:
    prompt_text = build_prompt(config.template)
    candidates = tuple(config.prompts.all_words())
    out = {item.id: ItemRecords(item) for item in items}

    def plan(item: MediaItem):
        try:
            return item, plan_frames(item, config.frame_interval, config.extractor, work_dir), None
        except (QBoostError, OSError) as exc:
            return item, None, exc

    workers = max(1, config.backend.max_in_flight)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        plans = list(pool.map(plan, items))

    queries: list[LogitQuery] = []
    for item, frame_plan, exc in plans:
        if exc is not None:
            out[item.id].error = _describe(exc)
            continue
        for index, ref in enumerate(frame_plan.frame_refs):
            queries.append(LogitQuery(item.id, index, ref, prompt_text, candidates))

    for result in fetch_many(backend, queries, config.backend.max_in_flight):
        entry = out[result.query.item_id]
        if entry.error is not None:
            continue
        if result.error is not None:
            entry.error = _describe(result.error)
            entry.records = []
        else:
            entry.records.append(result.record)
    return out


# --- scoring and reports -----------------------------------------------------


@dataclass(frozen=True)
class ModeResult:
    mode: ScoringMode
    scores: dict[str, float]
    errors: dict[str, str]
    correlations: CorrelationReport | None
    correlation_error: str | None
    providers: tuple[str, ...]


def score_records(
    config: RunConfig, collected: Mapping[str, ItemRecords], mode: ScoringMode
) -> ModeResult:
    scores: dict[str, float] = {}
    errors: dict[str, str] = {}
    providers: set[str] = set()
    for item_id in sorted(collected):
        entry = collected[item_id]
        if entry.error is not None:
            errors[item_id] = entry.error
            continue
        try:
            breakdown = score_breakdown(entry.records, config.prompts, config.weights, mode, config.frame_interval)
        except QBoostError as exc:
            errors[item_id] = _describe(exc)
            continue
        scores[item_id] = breakdown.score.value
        providers.update(r.provider_id for r in entry.records)

    correlations = None
    correlation_error = None
    if not scores:
        correlation_error = "no scorable items"
    else:
        ids = sorted(scores)
        try:
            correlations = correlate(
                [scores[i] for i in ids],
                [collected[i].item.mos for i in ids],
                logistic=config.plcc_logistic,
            )
        except MetricError as exc:
            correlation_error = str(exc)
    return ModeResult(mode, scores, errors, correlations, correlation_error, tuple(sorted(providers)))


def _mode_payload(config: RunConfig, collected: Mapping[str, ItemRecords], result: ModeResult) -> dict[str, Any]:
    return {
        "mode": result.mode.value,
        "config_digest": config_digest(config, result.mode),
        "provider_id": ",".join(result.providers),
        "per_item": [
            {"id": item_id, "score": result.scores[item_id], "mos": collected[item_id].item.mos}
            for item_id in sorted(result.scores)
        ],
        "errors": [{"id": item_id, "error": result.errors[item_id]} for item_id in sorted(result.errors)],
        "correlations": reportlib.correlation_dict(result.correlations),
        "correlation_error": result.correlation_error,
    }


@dataclass
class RunOutcome:
    payload: dict[str, Any]
    exit_code: int


def _exit_code(results: Sequence[ModeResult]) -> int:
    return 1 if any(r.errors or r.correlation_error for r in results) else 0


def run_evaluate(
    config: RunConfig,
    manifest: str | Path | MediaManifest,
    out: str | Path | None = None,
    backend: Any | None = None,
) -> RunOutcome:
    if not isinstance(manifest, MediaManifest):
        manifest = load_manifest(manifest)
    mode = config.resolved_mode(manifest.items)
    with tempfile.TemporaryDirectory(prefix="qboost-frames-") as work:
        collected = collect_records(config, manifest.items, backend, Path(work))
    result = score_records(config, collected, mode)
    payload = {"dataset": manifest.name, **_mode_payload(config, collected, result)}
    if out is not None:
        reportlib.write_json(out, payload)
    return RunOutcome(payload, _exit_code([result]))


def run_ablate(
    config: RunConfig,
    manifests: Sequence[str | Path | MediaManifest],
    out: str | Path | None = None,
    backend: Any | None = None,
    csv_out: str | Path | None = None,
) -> RunOutcome:
    """Score every manifest under binary, tti and tti_mpe from one fetch."""
    loaded = [m if isinstance(m, MediaManifest) else load_manifest(m) for m in manifests]
    rows: list[dict[str, Any]] = []
    results: list[ModeResult] = []
    indices: dict[str, Any] = {}
    per_mode: dict[ScoringMode, list[CorrelationReport]] = {m: [] for m in ABLATION_ORDER}
    for manifest in loaded:
        with tempfile.TemporaryDirectory(prefix="qboost-frames-") as work:
            collected = collect_records(config, manifest.items, backend, Path(work))
        mode_results = [score_records(config, collected, mode) for mode in ABLATION_ORDER]
        results.extend(mode_results)
        for result in mode_results:
            rows.append({"dataset": manifest.name, **_mode_payload(config, collected, result)})
            if result.correlations is not None:
                per_mode[result.mode].append(result.correlations)
        indices[manifest.name] = _relative_indices([r.correlations for r in mode_results])

    payload: dict[str, Any] = {
        "modes": [m.value for m in ABLATION_ORDER],
        "rows": rows,
        "relative_index": indices,
    }
    if len(loaded) > 1:
        payload["mean"] = [
            {
                "mode": mode.value,
                "correlations": reportlib.correlation_dict(mean_report(per_mode[mode]))
                if len(per_mode[mode]) == len(loaded)
                else None,
            }
            for mode in ABLATION_ORDER
        ]
    if out is not None:
        reportlib.write_json(out, payload)
    if csv_out is not None:
        Path(csv_out).write_text(reportlib.summary_csv(rows), encoding="utf-8")
    return RunOutcome(payload, _exit_code(results))


def _relative_indices(reports: Sequence[CorrelationReport | None]) -> dict[str, Any]:
    present = [r if r is not None else CorrelationReport(None, None, 0) for r in reports]
    out: dict[str, Any] = {}
    for metric in ("srcc", "plcc"):
        try:
            out[metric] = compute_relative_index(present, metric)
        except MetricError:
            out[metric] = None
    return out


def run_record(
    config: RunConfig,
    manifest: str | Path | MediaManifest,
    cache: str | Path,
    backend: Any | None = None,
) -> RunOutcome:
    """Fetch the full word superset for every frame and append it to ``cache``."""
    if not isinstance(manifest, MediaManifest):
        manifest = load_manifest(manifest)
    if config.backend.kind == "replay" and backend is None:
        raise ConfigError("record needs a live backend (stub or http), not replay")
    inner = backend or make_backend(config.backend, config.prompts, _latent_for(config, manifest.items))
    recorder = RecordingBackend(inner, cache)
    try:
        with tempfile.TemporaryDirectory(prefix="qboost-frames-") as work:
            collected = collect_records(config, manifest.items, recorder, Path(work))
    finally:
        if backend is None and hasattr(inner, "close"):
            inner.close()
    errors = {item_id: e.error for item_id, e in sorted(collected.items()) if e.error is not None}
    frames = sum(len(e.records) for e in collected.values() if e.error is None)
    payload = {
        "cache": str(cache),
        "dataset": manifest.name,
        "frames_recorded": frames,
        "errors": [{"id": k, "error": v} for k, v in errors.items()],
    }
    return RunOutcome(payload, 1 if errors else 0)


def run_score(
    config: RunConfig,
    media: str | Path,
    item_id: str | None = None,
    backend: Any | None = None,
) -> ScoreBreakdown:
    """Score a single image, frame directory or video file.

    Raises the underlying backend or dataset error when the item cannot be
    scored.
    """
    media = Path(media)
    if not media.exists():
        raise FileNotFoundError(f"media not found: {media}")
    item = MediaItem(item_id or media.name, infer_kind(media), media, 1.0)
    mode = config.resolved_mode([item])
    with tempfile.TemporaryDirectory(prefix="qboost-frames-") as work:
        collected = collect_records(config, [item], backend, Path(work))
    entry = collected[item.id]
    if entry.error is not None:
        raise QBoostError(entry.error)
    return score_breakdown(entry.records, config.prompts, config.weights, mode, config.frame_interval)
