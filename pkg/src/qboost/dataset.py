"""Dataset manifests with MOS labels and per-second frame planning."""

from __future__ import annotations

import csv
import math
import re
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import FrameExtractionError, ManifestError

KINDS = ("image", "video")
VIDEO_SUFFIXES = {".mp4", ".avi", ".mov", ".mkv", ".webm", ".m4v", ".mpg", ".mpeg", ".wmv", ".flv", ".yuv"}

_SCALE_RE = re.compile(r"^\s*(-?\d+(?:\.\d+)?)\s*-\s*(-?\d+(?:\.\d+)?)\s*$")


@dataclass(frozen=True)
class MediaItem:
    id: str
    kind: str
    path: Path
    mos: float
    mos_scale: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ManifestError(f"invalid kind: {self.kind!r}")
        lo, hi = self.mos_scale
        if not lo < hi:
            raise ManifestError(f"invalid mos scale: {lo}-{hi}")
        if not math.isfinite(self.mos) or not lo <= self.mos <= hi:
            raise ManifestError(f"mos out of range: {self.mos} not in [{lo}, {hi}] for item {self.id!r}")


@dataclass(frozen=True)
class MediaManifest:
    items: tuple[MediaItem, ...]
    source_path: Path

    def __len__(self) -> int:
        return len(self.items)

    @property
    def name(self) -> str:
        return self.source_path.stem

    @property
    def has_video(self) -> bool:
        return any(item.kind == "video" for item in self.items)


@dataclass(frozen=True)
class FramePlan:
    item_id: str
    frame_refs: tuple[Path, ...]
    interval_seconds: float = 1.0


def parse_scale(text: str) -> tuple[float, float]:
    match = _SCALE_RE.match(text)
    if not match:
        raise ManifestError(f"invalid mos_scale {text!r}, expected 'lo-hi'")
    return float(match.group(1)), float(match.group(2))


def load_manifest(path: str | Path) -> MediaManifest:
    """Parse a CSV manifest with header ``id,kind,path,mos[,mos_scale]``.

    Relative media paths resolve against the manifest's directory. Media
    existence is not checked here.
    """
    path = Path(path)
    base = path.parent
    items: list[MediaItem] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = {"id", "kind", "path", "mos"} - set(header)
        if missing:
            raise ManifestError(f"manifest header missing columns: {sorted(missing)}")
        for lineno, raw in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
            item_id = row["id"]
            if not item_id:
                raise ManifestError(f"line {lineno}: empty item id")
            if item_id in seen:
                raise ManifestError(f"duplicate item id: {item_id!r}")
            seen.add(item_id)
            kind = row["kind"].lower()
            if kind not in KINDS:
                raise ManifestError(f"invalid kind: {row['kind']!r} (line {lineno})")
            try:
                mos = float(row["mos"])
            except ValueError:
                raise ManifestError(f"line {lineno}: mos is not a number: {row['mos']!r}") from None
            scale = parse_scale(row["mos_scale"]) if row.get("mos_scale") else (1.0, 5.0)
            media = Path(row["path"])
            if not media.is_absolute():
                media = base / media
            items.append(MediaItem(item_id, kind, media, mos, scale))
    if not items:
        raise ManifestError("empty manifest")
    return MediaManifest(tuple(items), path)


def normalize_mos(item: MediaItem) -> float:
    lo, hi = item.mos_scale
    return (item.mos - lo) / (hi - lo)


def infer_kind(path: str | Path) -> str:
    path = Path(path)
    if path.is_dir() or path.suffix.lower() in VIDEO_SUFFIXES:
        return "video"
    return "image"


# --- frame extraction --------------------------------------------------------


def sample_frame_indices(frame_count: int, fps: float, interval: float = 1.0) -> list[int]:
    """Index of the first frame at or after each boundary t = 0, interval, 2*interval, ...

    Boundaries at or past the clip duration are dropped, as is any boundary
    whose first frame would fall past the last frame.
    """
    if frame_count <= 0 or fps <= 0:
        return []
    duration = frame_count / fps
    indices = []
    k = 0
    while True:
        t = k * interval
        if t >= duration - 1e-9:
            break
        index = math.ceil(t * fps - 1e-9)
        if index >= frame_count:
            break
        indices.append(index)
        k += 1
    return indices


def opencv_extract(video: Path, output_dir: Path, interval: float = 1.0, ext: str = "png") -> list[Path]:
    """Write one frame per ``interval`` seconds as ``frame_%06d.<ext>``."""
    import cv2

    capture = cv2.VideoCapture(str(video))
    if not capture.isOpened():
        raise FrameExtractionError(f"frame extraction failed: cannot open {video}")
    # CAP_PROP_FRAME_COUNT is only an estimate for some containers, so count by grabbing.
    try:
        fps = capture.get(cv2.CAP_PROP_FPS)
        frame_count = 0
        while capture.grab():
            frame_count += 1
    finally:
        capture.release()
    if frame_count == 0 or not fps or fps <= 0:
        raise FrameExtractionError(f"frame extraction failed: no decodable frames in {video}")

    wanted = sample_frame_indices(frame_count, fps, interval)
    output_dir.mkdir(parents=True, exist_ok=True)
    frames: list[Path] = []
    capture = cv2.VideoCapture(str(video))
    try:
        index = 0
        for target_index in wanted:
            while index < target_index:
                if not capture.grab():
                    raise FrameExtractionError(f"frame extraction failed: {video} ended early")
                index += 1
            ok, frame = capture.read()
            index += 1
            if not ok:
                raise FrameExtractionError(f"frame extraction failed: cannot decode frame {target_index}")
            target = output_dir / f"frame_{len(frames):06d}.{ext}"
            if not cv2.imwrite(str(target), frame):
                raise FrameExtractionError(f"frame extraction failed: cannot write {target}")
            frames.append(target)
    finally:
        capture.release()
    return frames


def run_extractor(
    command: str, video: Path, output_dir: Path, interval: float = 1.0, ext: str = "png"
) -> list[Path]:
    """Run an external extractor command template and collect its frames.

    The template may use ``{input}``, ``{output_dir}`` and ``{interval}``; it
    must write files named ``frame_%06d.<ext>`` into the output directory.
    """
    output_dir.mkdir(parents=True, exist_ok=True)
    argv = [
        part.format(input=str(video), output_dir=str(output_dir), interval=interval)
        for part in shlex.split(command)
    ]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, check=False)
    except OSError as exc:
        raise FrameExtractionError(f"frame extraction failed: {exc}") from exc
    if proc.returncode != 0:
        output = (proc.stdout + proc.stderr).strip()
        raise FrameExtractionError(f"frame extraction failed (exit {proc.returncode}): {output}")
    return sorted(output_dir.glob(f"frame_*.{ext}"))


@dataclass(frozen=True)
class ExtractorConfig:
    command: str | None = None
    ext: str = "png"


def plan_frames(
    item: MediaItem,
    interval: float = 1.0,
    extractor: ExtractorConfig | None = None,
    work_dir: Path | None = None,
) -> FramePlan:
    """Resolve an item into its ordered frame references.

    Images give one frame. A video directory gives its files in lexicographic
    order, one per interval. A video file is sampled by the configured
    extractor into ``work_dir``.
    """
    path = Path(item.path)
    if not path.exists():
        raise FileNotFoundError(f"media not found: {path}")
    if item.kind == "image":
        if path.is_dir():
            raise FrameExtractionError(f"image item {item.id!r} points at a directory")
        return FramePlan(item.id, (path,), interval)
    if path.is_dir():
        refs = tuple(sorted((p for p in path.iterdir() if p.is_file() and not p.name.startswith(".")), key=lambda p: p.name))
        if not refs:
            raise FrameExtractionError(f"no frames found in {path}")
        return FramePlan(item.id, refs, interval)
    if work_dir is None:
        raise FrameExtractionError("frame extraction failed: no work directory for extracted frames")
    extractor = extractor or ExtractorConfig()
    out_dir = Path(work_dir) / _safe_name(item.id)
    if extractor.command:
        frames = run_extractor(extractor.command, path, out_dir, interval, extractor.ext)
    else:
        frames = opencv_extract(path, out_dir, interval, extractor.ext)
    if not frames:
        raise FrameExtractionError(f"no frames found for video {path}")
    return FramePlan(item.id, tuple(frames), interval)


def _safe_name(item_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", item_id) or "item"


def items_by_id(items: Sequence[MediaItem]) -> dict[str, MediaItem]:
    return {item.id: item for item in items}
