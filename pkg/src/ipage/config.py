"""Per-task default settings and plain-text config file handling.

Defaults mirror the benchmark hyperparameter table (architecture, batch
size, epochs, learning-rate decay, localization rate).  Desk scale keeps
the architecture but shortens training and scenario sizes so everything
runs in minutes on one CPU; ``paper_scale=True`` restores the full sizes.
Config files are INI: any key below may be overridden in its section.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .benchmarks import BallisticsParams, TaskSpec, make_task
from .flows import FlowConfig
from .localization import LocalizeConfig, NAConfig
from .losses import KernelSpec
from .reports import config_hash
from .sampling import SamplerKind
from .training import TrainConfig

TASK_DEFAULTS = {
    "sinewave": dict(n_blocks=4, subnet_layers=3, subnet_width=128, activation="relu",
                     batch_size=1024, epochs=1000, desk_epochs=300,
                     lr_start=1e-3, lr_end=1e-5, localize_lr=1e-3),
    "robotic-arm": dict(n_blocks=6, subnet_layers=3, subnet_width=256, activation="leaky_relu",
                        batch_size=512, epochs=500, desk_epochs=200,
                        lr_start=1e-2, lr_end=1e-4, localize_lr=5e-3),
    "ballistics": dict(n_blocks=6, subnet_layers=3, subnet_width=256, activation="leaky_relu",
                       batch_size=512, epochs=500, desk_epochs=200,
                       lr_start=1e-2, lr_end=1e-4, localize_lr=5e-3),
}

SCENARIO_SCALES = {
    "desk": dict(single_m=200, single_repeats=5, many_targets=100, many_repeats=10, many_m=1),
    "paper": dict(single_m=1000, single_repeats=50, many_targets=1000, many_repeats=50, many_m=1),
}


@dataclass
class RunSettings:
    """Fully resolved settings for one experiment run."""

    task: TaskSpec
    flow: FlowConfig
    train: TrainConfig
    localize: LocalizeConfig
    na: NAConfig
    na_epochs: int = 100
    na_reuse: bool = False
    scenario: dict = field(default_factory=dict)
    dataset_size: int = 10_000
    paper_scale: bool = False

    def canonical(self) -> dict:
        from dataclasses import asdict

        blob = {
            "task": self.task.name,
            "ballistics": None if self.task.ballistics is None else asdict(self.task.ballistics),
            "flow": asdict(self.flow),
            "train": asdict(self.train),
            "localize": asdict(self.localize),
            "na": asdict(self.na),
            "na_epochs": self.na_epochs,
            "na_reuse": self.na_reuse,
            "scenario": self.scenario,
            "dataset_size": self.dataset_size,
        }
        blob["train"]["kernel"] = list(self.train.kernel.bandwidths)
        blob["localize"]["sampler"] = [self.localize.sampler.kind, self.localize.sampler.pool]
        if blob["train"]["lambda_override"] is not None:
            blob["train"]["lambda_override"] = list(blob["train"]["lambda_override"])
        return blob

    def run_hash(self) -> str:
        return config_hash(self.canonical())


def load_config_file(path) -> dict:
    """Flatten an INI file into override keys (sections are cosmetic)."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    overrides: dict = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in overrides:
                raise ValueError(f"duplicate config key '{key}'")
            overrides[key] = value
    return overrides


_INT_KEYS = {"epochs", "batch_size", "n_blocks", "subnet_layers", "subnet_width",
             "perm_seed", "localize_steps", "m", "mlhs_pool", "na_restarts", "na_steps",
             "na_epochs", "na_top_k", "single_m", "single_repeats", "many_targets",
             "many_repeats", "many_m", "dataset_size"}
_FLOAT_KEYS = {"lr_start", "lr_end", "localize_lr", "weight_ceiling", "ml_sigma",
               "scale_clamp", "val_fraction", "clamp_factor", "na_lr",
               "gravity", "mass", "drag"}
_STR_KEYS = {"activation", "objective", "sampler", "ramp"}
_BOOL_KEYS = {"na_reuse"}


def _coerce(key: str, value):
    if isinstance(value, str):
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _BOOL_KEYS:
            return value.strip().lower() in ("1", "true", "yes", "on")
        if key == "kernel_bandwidths":
            return tuple(float(v) for v in value.split(","))
    return value


def resolve(task_name: str, overrides: dict | None = None, paper_scale: bool = False,
            seed: int = 0) -> RunSettings:
    """Merge task defaults, scale, and overrides into concrete configs."""
    overrides = {k: _coerce(k, v) for k, v in (overrides or {}).items()}
    unknown = set(overrides) - _INT_KEYS - _FLOAT_KEYS - _STR_KEYS - _BOOL_KEYS - {"kernel_bandwidths"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    base = dict(TASK_DEFAULTS[task_name]) if task_name in TASK_DEFAULTS else None
    if base is None:
        raise ValueError(f"unknown task '{task_name}'")

    ballistics = None
    if task_name == "ballistics":
        ballistics = BallisticsParams(
            gravity=overrides.get("gravity", 9.81),
            mass=overrides.get("mass", 0.2),
            drag=overrides.get("drag", 0.25),
        )
    task = make_task(task_name, ballistics=ballistics)

    def pick(key, default):
        return overrides.get(key, default)

    flow = FlowConfig(
        dim_x=task.dim_x, dim_y=task.dim_y, dim_z=task.dim_z,
        n_blocks=pick("n_blocks", base["n_blocks"]),
        subnet_layers=pick("subnet_layers", base["subnet_layers"]),
        subnet_width=pick("subnet_width", base["subnet_width"]),
        activation=pick("activation", base["activation"]),
        scale_clamp=pick("scale_clamp", 2.0),
        perm_seed=pick("perm_seed", 0),
    )
    epochs_default = base["epochs"] if paper_scale else base["desk_epochs"]
    train = TrainConfig(
        epochs=pick("epochs", epochs_default),
        batch_size=pick("batch_size", base["batch_size"]),
        lr_start=pick("lr_start", base["lr_start"]),
        lr_end=pick("lr_end", base["lr_end"]),
        weight_ceiling=pick("weight_ceiling", 10.0),
        kernel=KernelSpec(bandwidths=overrides.get("kernel_bandwidths", (0.05, 0.2, 0.9))),
        ml_sigma=pick("ml_sigma", 0.1),
        objective=pick("objective", "bidirectional-mmd"),
        seed=seed,
        val_fraction=pick("val_fraction", 0.1),
        ramp=pick("ramp", "linear"),
    )
    scale = SCENARIO_SCALES["paper" if paper_scale else "desk"]
    localize = LocalizeConfig(
        steps=pick("localize_steps", 300),
        lr=pick("localize_lr", base["localize_lr"]),
        m=pick("m", scale["single_m"]),
        sampler=SamplerKind(kind=pick("sampler", "mlhs"), pool=pick("mlhs_pool", 100)),
        clamp_factor=pick("clamp_factor", 10.0),
    )
    na = NAConfig(
        restarts=pick("na_restarts", localize.m),
        steps=pick("na_steps", 1000),
        lr=pick("na_lr", 5e-3),
        top_k=overrides.get("na_top_k"),
        reuse_forward_snapshot=pick("na_reuse", False),
    )
    scenario = {k: pick(k, v) for k, v in scale.items()}
    return RunSettings(
        task=task, flow=flow, train=train, localize=localize, na=na,
        na_epochs=pick("na_epochs", 100), na_reuse=pick("na_reuse", False),
        scenario=scenario,
        dataset_size=pick("dataset_size", task.default_size),
        paper_scale=paper_scale,
    )
