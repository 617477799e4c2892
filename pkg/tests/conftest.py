from __future__ import annotations

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qboost.backend import prompt_digest  # noqa: E402
from qboost.prompts import PromptTemplate, TonePromptSet, build_prompt  # noqa: E402

# (good, average, poor) logits and GT MOS of the four example images
REFERENCE_ITEMS = [
    ("img1", (11.14, 8.68, 7.96), 4.12),
    ("img2", (10.02, 10.71, 9.07), 3.11),
    ("img3", (8.92, 10.75, 9.59), 2.51),
    ("img4", (6.46, 8.62, 10.70), 1.10),
]

# 50-digit softmax + pooling oracle (tests/oracles.py), frozen
REFERENCE_TTI_SCORES = [
    0.92519823493075135,
    0.59070653124212906,
    0.44807224397492784,
    0.067471383526206914,
]


def default_digest() -> str:
    prompts = TonePromptSet()
    return prompt_digest(build_prompt(PromptTemplate()), prompts.all_words())


def write_cache_lines(path: Path, item: str, frame: int, logits: dict[str, float], provider: str = "fixture") -> None:
    digest = default_digest()
    with path.open("a", encoding="utf-8") as fh:
        for word, value in logits.items():
            fh.write(json.dumps({"item": item, "frame": frame, "word": word, "logit": value,
                                 "provider": provider, "prompt_sha256": digest}) + "\n")


def write_manifest(path: Path, rows: list[tuple[str, str, str, float]], scale: str | None = "1-5") -> Path:
    lines = ["id,kind,path,mos,mos_scale"]
    for item_id, kind, media, mos in rows:
        lines.append(f"{item_id},{kind},{media},{mos!r},{scale or ''}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def reference_workspace(tmp_path):
    """Manifest of the four example images plus a replay cache of their logits."""
    cache = tmp_path / "cache.jsonl"
    rows = []
    for item_id, (good, average, poor), mos in REFERENCE_ITEMS:
        (tmp_path / f"{item_id}.png").write_bytes(b"\x89PNG fixture")
        write_cache_lines(cache, item_id, 0, {"good": good, "average": average, "poor": poor})
        rows.append((item_id, "image", f"{item_id}.png", mos))
    manifest = write_manifest(tmp_path / "reference.csv", rows)
    return manifest, cache


@pytest.fixture
def image_manifest(tmp_path):
    """Factory for an image-only manifest with ``n`` items and distinct MOS."""

    def make(n: int, name: str = "synthetic.csv", mos=None):
        media_dir = tmp_path / "media"
        media_dir.mkdir(exist_ok=True)
        rows = []
        for i in range(n):
            item_id = f"item{i:04d}"
            (media_dir / f"{item_id}.png").write_bytes(b"png")
            value = mos[i] if mos is not None else 1.0 + 4.0 * (i + 0.5) / n
            rows.append((item_id, "image", f"media/{item_id}.png", value))
        return write_manifest(tmp_path / name, rows)

    return make


class MockLogitServer:
    """Scripted stand-in for an inference server's /v1/logits endpoint."""

    def __init__(self):
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self.script: list[tuple[int, object]] = []
        self.default_logits: dict[str, float] = {}
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def _handler(self):
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                outer.requests.append({"path": self.path, "body": body})
                outer.headers.append(dict(self.headers))
                if outer.script:
                    status, payload = outer.script.pop(0)
                else:
                    logits = {w: outer.default_logits.get(w, 5.0) for w in body.get("candidates", [])}
                    status, payload = 200, {"logits": logits, "model": "mock-mllm"}
                data = json.dumps(payload).encode() if not isinstance(payload, bytes) else payload
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        return Handler

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def mock_server():
    server = MockLogitServer().start()
    yield server
    server.stop()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS:
        terminalreporter.write_line(line)
