"""Python side of the render harness.

Drives headless renderer worker processes over their JSON-lines stdio
protocol. The bundled worker implements a documented static subset
(canvas fillRect, svg rects, local-only fetch, export harvesting); the
worker command is configurable so a real browser backend can be swapped
in without touching callers.

The controlling side owns the hard wall clock: a worker that blows past
its deadline is killed and replaced, and the job reports a timeout.
"""

from __future__ import annotations

import base64
import json
import queue
import subprocess
import sys
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import RenderError
from .util import parallel_map

DEFAULT_VIEWPORT = (1200, 800)
DEFAULT_TIMEOUT_MS = 20000
KILL_GRACE_MS = 2000  # extra wall time before the worker is killed


def worker_script_path() -> str:
    return str(resources.files("viscritic") / "render_worker.mjs")


def default_worker_command() -> list[str]:
    return ["node", worker_script_path()]


@dataclass(frozen=True)
class RenderSettings:
    viewport_width: int = DEFAULT_VIEWPORT[0]
    viewport_height: int = DEFAULT_VIEWPORT[1]
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    device_scale: int = 1
    animations_disabled: bool = True

    def as_dict(self) -> dict:
        return {
            "viewport_width": self.viewport_width,
            "viewport_height": self.viewport_height,
            "timeout_ms": self.timeout_ms,
            "device_scale": self.device_scale,
            "animations_disabled": self.animations_disabled,
        }


@dataclass
class RenderOutcome:
    image: bytes | None
    console_errors: list[str]
    runtime_exceptions: list[str]
    wall_time_ms: int
    timed_out: bool = False
    exported_data: list[dict] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.image is None and not (
            self.runtime_exceptions or self.timed_out or self.console_errors
        ):
            raise RenderError("absent image without any recorded error or timeout")

    @property
    def ok(self) -> bool:
        return self.image is not None


class RenderWorker:
    """One renderer process; restarted on kill or crash."""

    def __init__(self, command: list[str] | None = None):
        self._command = list(command) if command else default_worker_command()
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def _ensure_process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self._command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.DEVNULL,
                    text=True,
                )
            except OSError as exc:
                raise RenderError(f"renderer backend unreachable: {exc}") from exc
        return self._proc

    def _kill(self):
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None

    def close(self):
        with self._lock:
            self._kill()

    def render(
        self,
        html: str,
        files: dict[str, bytes] | None = None,
        settings: RenderSettings | None = None,
    ) -> RenderOutcome:
        settings = settings or RenderSettings()
        request = {
            "op": "render",
            "job_id": "job",
            "html": html,
            "files": {
                name: base64.b64encode(data).decode("ascii")
                for name, data in (files or {}).items()
            },
            "viewport": {
                "width": settings.viewport_width * settings.device_scale,
                "height": settings.viewport_height * settings.device_scale,
            },
            "timeout_ms": settings.timeout_ms,
        }
        wall_budget = (settings.timeout_ms + KILL_GRACE_MS) / 1000.0
        with self._lock:
            proc = self._ensure_process()
            try:
                proc.stdin.write(json.dumps(request) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self._kill()
                raise RenderError(f"renderer process lost: {exc}") from exc
            line = self._read_line_with_deadline(proc, wall_budget)
            if line is None:
                # worker wedged past its deadline: kill and report timeout
                self._kill()
                return RenderOutcome(
                    image=None,
                    console_errors=[],
                    runtime_exceptions=[],
                    wall_time_ms=settings.timeout_ms + KILL_GRACE_MS,
                    timed_out=True,
                    settings=settings.as_dict(),
                )
        reply = json.loads(line)
        if "error" in reply:
            raise RenderError(f"renderer failure: {reply['error']}")
        image = base64.b64decode(reply["image"]) if reply.get("image") else None
        return RenderOutcome(
            image=image,
            console_errors=list(reply.get("console_errors", [])),
            runtime_exceptions=list(reply.get("runtime_exceptions", [])),
            wall_time_ms=int(reply.get("wall_time_ms", 0)),
            timed_out=bool(reply.get("timed_out", False)),
            exported_data=list(reply.get("exported_data", [])),
            settings=settings.as_dict(),
        )

    @staticmethod
    def _read_line_with_deadline(proc: subprocess.Popen, budget_s: float) -> str | None:
        result: list[str | None] = [None]

        def read():
            result[0] = proc.stdout.readline()

        reader = threading.Thread(target=read, daemon=True)
        reader.start()
        reader.join(budget_s)
        if reader.is_alive() or not result[0]:
            return None
        return result[0]


class RenderPool:
    """Fixed pool of renderer workers; jobs check a worker out per render."""

    def __init__(self, workers: int = 4, command: list[str] | None = None):
        self._workers: queue.Queue[RenderWorker] = queue.Queue()
        self._all = [RenderWorker(command) for _ in range(max(workers, 1))]
        for worker in self._all:
            self._workers.put(worker)

    def render(self, html, files=None, settings=None) -> RenderOutcome:
        worker = self._workers.get()
        try:
            return worker.render(html, files=files, settings=settings)
        finally:
            self._workers.put(worker)

    def render_many(self, jobs, settings=None):
        """jobs: iterable of (html, files); returns (job, outcome, error) triples."""
        jobs = list(jobs)

        def run(job):
            html, files = job
            return self.render(html, files=files, settings=settings)

        return parallel_map(run, jobs, max_workers=len(self._all))

    def close(self):
        for worker in self._all:
            worker.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ------------------------------------------------------------ image diffing


def decode_png(data: bytes):
    """PNG bytes -> (width, height, RGB rows as a flat list of tuples)."""
    from PIL import Image
    import io

    with Image.open(io.BytesIO(data)) as img:
        rgb = img.convert("RGB")
        return rgb.size[0], rgb.size[1], list(rgb.get_flattened_data())


def visual_similarity(png_a: bytes, png_b: bytes) -> float:
    """Similarity in [0, 1] over the informative (non-white) pixel mask.

    The mask is every pixel where either image deviates from pure white;
    per-pixel difference is the max channel delta / 255. Two blank images
    (empty mask) are identical by definition: 1.0.
    """
    import numpy as np
    from PIL import Image
    import io

    def load(data):
        with Image.open(io.BytesIO(data)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.int16)

    def pad_to(img, height, width):
        padded = np.full((height, width, 3), 255, dtype=np.int16)
        padded[: img.shape[0], : img.shape[1]] = img
        return padded

    a = load(png_a)
    b = load(png_b)
    if a.shape != b.shape:
        # sizes differ: compare on the union canvas, missing area is white
        height = max(a.shape[0], b.shape[0])
        width = max(a.shape[1], b.shape[1])
        a = pad_to(a, height, width)
        b = pad_to(b, height, width)
    mask = ((a != 255).any(axis=2)) | ((b != 255).any(axis=2))
    if not mask.any():
        return 1.0
    diff = np.abs(a - b).max(axis=2) / 255.0
    return 1.0 - float(diff[mask].mean())
