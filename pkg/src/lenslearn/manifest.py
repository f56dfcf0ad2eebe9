"""Run manifests: the provenance chain linking every output to its inputs.

A manifest is written for every subcommand invocation, success or failure,
and lists the config echo, seeds, input content hashes, every file the run
wrote, and headline metrics. Timestamps and wall times live here (and only
here); the data artifacts themselves are rerun-stable.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .data import file_hash

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    run_id: str
    timestamp: str
    subcommand: str
    config: dict
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)     # label -> {path, sha256}
    outputs: list = field(default_factory=list)    # paths (relative to run dir)
    metrics: dict = field(default_factory=dict)
    wall_time: float = 0.0
    error: str | None = None

    @classmethod
    def start(cls, subcommand: str, config: dict) -> "RunManifest":
        now = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
        return cls(
            run_id=f"{subcommand}-{uuid.uuid4().hex[:12]}",
            timestamp=now,
            subcommand=subcommand,
            config=config,
        )

    def add_input(self, label: str, path) -> None:
        self.inputs[label] = {"path": str(path), "sha256": file_hash(path)}

    def add_output(self, path) -> None:
        self.outputs.append(str(path))

    def write(self, run_dir) -> Path:
        path = Path(run_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def read_manifest(run_dir) -> dict:
    with open(Path(run_dir) / MANIFEST_NAME, encoding="utf-8") as f:
        return json.load(f)
