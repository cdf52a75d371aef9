"""Run manifests: what a command read, how it was seeded and what it wrote."""

from __future__ import annotations

import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_digest: str | None = None
    seed_schedule: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    code_version: str = __version__

    @contextmanager
    def timed(self, label: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[label] = round(time.perf_counter() - start, 3)

    def add_output(self, path) -> Path:
        path = Path(path)
        self.outputs.append({"path": path.name, "sha256": sha256_file(path)})
        return path

    def add_input(self, path) -> None:
        path = Path(path)
        self.inputs.append({"path": str(path), "sha256": sha256_file(path)})

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "code_version": self.code_version,
            "config_digest": self.config_digest,
            "seed_schedule": self.seed_schedule,
            "timings_s": self.timings,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / f"manifest_{self.command}.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path
