from __future__ import annotations

import os
import sys
from pathlib import Path

import numpy as np
import pytest

from conftest import write_manifest
from qboost.dataset import (
    ExtractorConfig,
    MediaItem,
    load_manifest,
    normalize_mos,
    plan_frames,
    sample_frame_indices,
)
from qboost.errors import FrameExtractionError, ManifestError


def test_single_row(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("id,kind,path,mos,mos_scale\nimg1,image,a.png,4.12,1-5\n")
    manifest = load_manifest(path)
    assert len(manifest) == 1
    item = manifest.items[0]
    assert item.id == "img1" and item.kind == "image" and item.mos == 4.12
    assert item.mos_scale == (1.0, 5.0)
    assert item.path == tmp_path / "a.png"


def test_header_only(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("id,kind,path,mos,mos_scale\n")
    with pytest.raises(ManifestError, match="empty manifest"):
        load_manifest(path)


def test_duplicate_id(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("id,kind,path,mos\na,image,a.png,3\na,image,b.png,4\n")
    with pytest.raises(ManifestError, match="duplicate item id"):
        load_manifest(path)


def test_mos_out_of_range(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("id,kind,path,mos,mos_scale\na,image,a.png,7,1-5\n")
    with pytest.raises(ManifestError, match="mos out of range"):
        load_manifest(path)


def test_invalid_kind(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("id,kind,path,mos\na,audio,a.wav,3\n")
    with pytest.raises(ManifestError, match="invalid kind"):
        load_manifest(path)


def test_optional_scale_quoted_fields_and_order(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text('id,kind,path,mos,mos_scale\nz,image,"dir, with comma/z.png",50,0-100\na,video,clips/a,2.5,\n')
    manifest = load_manifest(path)
    assert [i.id for i in manifest.items] == ["z", "a"]
    assert manifest.items[0].mos_scale == (0.0, 100.0)
    assert manifest.items[0].path.name == "z.png"
    assert manifest.items[1].mos_scale == (1.0, 5.0)
    assert manifest.has_video


def test_load_is_pure(tmp_path):
    path = write_manifest(tmp_path / "m.csv", [("a", "image", "a.png", 2.0), ("b", "image", "b.png", 3.0)])
    assert load_manifest(path) == load_manifest(path)


@pytest.mark.parametrize("mos, expected", [(4.12, 0.78), (1.0, 0.0), (5.0, 1.0)])
def test_normalize_mos(mos, expected):
    item = MediaItem("x", "image", Path("x.png"), mos, (1.0, 5.0))
    assert normalize_mos(item) == pytest.approx(expected, abs=1e-12)


def test_plan_image(tmp_path):
    img = tmp_path / "a.png"
    img.write_bytes(b"x")
    plan = plan_frames(MediaItem("a", "image", img, 3.0))
    assert plan.frame_refs == (img,)


def test_plan_directory_sorted(tmp_path):
    frames = tmp_path / "clip"
    frames.mkdir()
    names = ["f3.png", "f1.png", "f10.png", "f0.png", "f2.png"]
    for name in names:
        (frames / name).write_bytes(b"x")
    plan = plan_frames(MediaItem("clip", "video", frames, 3.0))
    assert [p.name for p in plan.frame_refs] == sorted(names)
    assert len(plan.frame_refs) == 5


def test_plan_empty_directory(tmp_path):
    (tmp_path / "clip").mkdir()
    with pytest.raises(FrameExtractionError, match="no frames found"):
        plan_frames(MediaItem("clip", "video", tmp_path / "clip", 3.0))


def test_plan_missing_media(tmp_path):
    with pytest.raises(FileNotFoundError):
        plan_frames(MediaItem("a", "image", tmp_path / "nope.png", 3.0))


def _count_oracle(duration: float, fps: float) -> int:
    # boundaries t = 0, 1, 2, ... strictly before the clip ends, each needing a frame at or after t
    n_frames = round(duration * fps)
    return sum(1 for t in range(int(duration) + 2) if t < duration and int(np.ceil(t * fps - 1e-9)) < n_frames)


@pytest.mark.parametrize("fps", [5, 7.5, 10, 24, 25, 29.97, 30, 60])
def test_sample_indices_four_seconds(fps):
    n = round(4.0 * fps)
    indices = sample_frame_indices(n, fps)
    assert len(indices) == 4 == _count_oracle(4.0, fps)
    assert indices[0] == 0
    assert all(i / fps >= t - 1e-9 for t, i in enumerate(indices))


def test_sample_indices_partial_second():
    # 4.5 s at 10 fps: boundaries 0..4 all land on a frame
    assert sample_frame_indices(45, 10) == [0, 10, 20, 30, 40]
    # 0.5 s clip still yields the t = 0 frame
    assert sample_frame_indices(5, 10) == [0]


def _write_video(path: Path, seconds: float, fps: float) -> None:
    import cv2

    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, (32, 24))
    assert writer.isOpened()
    for i in range(round(seconds * fps)):
        frame = np.full((24, 32, 3), i % 256, dtype=np.uint8)
        writer.write(frame)
    writer.release()


@pytest.mark.parametrize("fps", [7, 10, 25])
def test_opencv_extraction_four_seconds(tmp_path, fps):
    video = tmp_path / "clip.avi"
    _write_video(video, 4.0, fps)
    plan = plan_frames(MediaItem("clip", "video", video, 3.0), work_dir=tmp_path / "work")
    assert len(plan.frame_refs) == 4
    assert [p.name for p in plan.frame_refs] == [f"frame_{i:06d}.png" for i in range(4)]


def test_external_extractor(tmp_path):
    script = tmp_path / "extract.py"
    script.write_text(
        "import sys, pathlib\n"
        "out = pathlib.Path(sys.argv[2])\n"
        "for i in range(3):\n"
        "    (out / f'frame_{i:06d}.jpg').write_bytes(b'x')\n"
    )
    video = tmp_path / "v.mp4"
    video.write_bytes(b"not really a video")
    extractor = ExtractorConfig(command=f"{sys.executable} {script} {{input}} {{output_dir}} {{interval}}", ext="jpg")
    plan = plan_frames(MediaItem("v", "video", video, 3.0), extractor=extractor, work_dir=tmp_path / "work")
    assert [p.name for p in plan.frame_refs] == ["frame_000000.jpg", "frame_000001.jpg", "frame_000002.jpg"]


def test_external_extractor_failure(tmp_path):
    video = tmp_path / "v.mp4"
    video.write_bytes(b"x")
    extractor = ExtractorConfig(command=f"{sys.executable} -c \"import sys; print('boom'); sys.exit(3)\"")
    with pytest.raises(FrameExtractionError, match="frame extraction failed.*boom"):
        plan_frames(MediaItem("v", "video", video, 3.0), extractor=extractor, work_dir=tmp_path)


def test_directory_plan_ignores_enumeration_order(tmp_path, monkeypatch):
    frames = tmp_path / "clip"
    frames.mkdir()
    for name in ["b.png", "a.png", "c.png"]:
        (frames / name).write_bytes(b"x")
    expected = plan_frames(MediaItem("clip", "video", frames, 3.0)).frame_refs
    original = Path.iterdir
    monkeypatch.setattr(Path, "iterdir", lambda self: iter(reversed(list(original(self)))))
    assert plan_frames(MediaItem("clip", "video", frames, 3.0)).frame_refs == expected
    assert os.path.basename(expected[0]) == "a.png"
