"""Solve reports and their persistence contract.

One solve = one JSON line in the canonical report file (solutions,
per-solution re-simulation errors, mode labels, seed, config hash).
Wall-clock timings are inherently non-reproducible, so they live in a
``<report>.timings.json`` sidecar and the canonical file stays
byte-identical across reruns of the same configuration.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np


def config_hash(config: dict) -> str:
    """Stable hash of a JSON-able configuration mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class SolveReport:
    task: str
    method: str
    sampler: str
    seed: int
    target: list
    solutions: np.ndarray
    resim_sq_errors: np.ndarray
    mode_labels: list | None = None
    timings: dict = field(default_factory=lambda: {"inference": 0.0, "localization": 0.0})
    config_hash: str = ""
    n_dropped: int = 0
    n_clamped: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.solutions = np.atleast_2d(np.asarray(self.solutions, dtype=np.float64))
        self.resim_sq_errors = np.asarray(self.resim_sq_errors, dtype=np.float64)
        if self.resim_sq_errors.shape[0] != self.solutions.shape[0]:
            raise ValueError("one re-simulation error per solution required")
        if np.any(self.resim_sq_errors < 0):
            raise ValueError("squared errors cannot be negative")

    @property
    def m(self) -> int:
        return self.solutions.shape[0]

    def mean_error(self) -> float:
        return float(self.resim_sq_errors.mean())

    def record(self) -> dict:
        return {
            "task": self.task,
            "method": self.method,
            "sampler": self.sampler,
            "seed": self.seed,
            "target": [float(v) for v in self.target],
            "solutions": [[float(v) for v in row] for row in self.solutions],
            "resim_sq_errors": [float(v) for v in self.resim_sq_errors],
            "mode_labels": None if self.mode_labels is None else [int(v) for v in self.mode_labels],
            "config_hash": self.config_hash,
            "n_dropped": self.n_dropped,
            "n_clamped": self.n_clamped,
            "extra": self.extra,
        }


def timings_path(path) -> str:
    return str(path) + ".timings.json"


def save_reports(reports: list[SolveReport], path) -> None:
    """Canonical JSONL (deterministic bytes) plus the timing sidecar."""
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="\n") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.record(), sort_keys=True, separators=(",", ":")) + "\n")
    os.replace(tmp, path)
    with open(timings_path(path), "w", newline="\n") as fh:
        json.dump([rep.timings for rep in reports], fh)
        fh.write("\n")


def load_reports(path) -> list[SolveReport]:
    reports = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            reports.append(SolveReport(
                task=rec["task"], method=rec["method"], sampler=rec["sampler"],
                seed=rec["seed"], target=rec["target"],
                solutions=np.asarray(rec["solutions"]),
                resim_sq_errors=np.asarray(rec["resim_sq_errors"]),
                mode_labels=rec["mode_labels"], config_hash=rec["config_hash"],
                n_dropped=rec["n_dropped"], n_clamped=rec["n_clamped"],
                extra=rec.get("extra", {}),
            ))
    tpath = timings_path(path)
    if os.path.exists(tpath):
        with open(tpath) as fh:
            timings = json.load(fh)
        for rep, t in zip(reports, timings):
            rep.timings = t
    return reports
