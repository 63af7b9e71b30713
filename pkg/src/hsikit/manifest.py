"""Run manifests: config snapshot, input hashes, outputs and timings.

A manifest is written atomically when a command finishes and contains
everything needed to replay the run bit-identically: the fully resolved
config (seeds included) and the hashes of every input file.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def stable_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=1)


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


class RunManifest:
    def __init__(self, command: str, config: dict, toolkit_version: str):
        self.command = command
        self.config = config
        self.toolkit_version = toolkit_version
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.timings_s: dict[str, float] = {}
        self.started_utc = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        self._t0 = time.perf_counter()

    def add_input(self, path: str | Path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, name: str, path: str | Path) -> None:
        self.outputs[name] = str(path)

    def record_timing(self, stage: str) -> None:
        self.timings_s[stage] = round(time.perf_counter() - self._t0, 6)
        self._t0 = time.perf_counter()

    def payload(self) -> dict:
        return {
            "command": self.command,
            "toolkit_version": self.toolkit_version,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings_s": self.timings_s,
            "started_utc": self.started_utc,
            "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }

    def write(self, path: str | Path) -> None:
        atomic_write_text(path, stable_json(self.payload()))


def load_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def cache_key(config_section: dict, input_hashes: dict) -> str:
    h = hashlib.sha256()
    h.update(stable_json(config_section).encode())
    h.update(stable_json(input_hashes).encode())
    return h.hexdigest()
