"""Shared constructors for small test fixtures."""

from __future__ import annotations

import numpy as np

from ipage.benchmarks import NormStats
from ipage.flows import FlowConfig, InvertibleNet
from ipage.training import TrainConfig, TrainedModel


def unit_stats(dim_x: int, dim_y: int, box: float = 3.0) -> NormStats:
    return NormStats(
        x_mean=np.zeros(dim_x), x_std=np.ones(dim_x),
        y_mean=np.zeros(dim_y), y_std=np.ones(dim_y),
        x_min=-box * np.ones(dim_x), x_max=box * np.ones(dim_x),
    )


def identity_model(dim_x: int, dim_y: int, task: str = "sinewave") -> TrainedModel:
    """TrainedModel whose bijection and normalization are both the identity."""
    cfg = FlowConfig(dim_x, dim_y, dim_x - dim_y, n_blocks=1, subnet_layers=2,
                     subnet_width=4, activation="tanh")
    net = InvertibleNet.identity(cfg)
    return TrainedModel(
        flow_config=cfg,
        permutations=net.permutations,
        phi_final=net.params.copy(),
        phi_star=net.params.copy(),
        stats=unit_stats(dim_x, dim_y),
        train_config=TrainConfig(epochs=0, batch_size=2, lr_start=1e-3, lr_end=1e-3),
        task=task,
    )


def tiny_train_setup(n: int = 512, seed: int = 0):
    """Small sinewave dataset plus flow/train configs sized for fast unit tests."""
    from ipage.benchmarks import gen_dataset, make_task

    task = make_task("sinewave")
    data = gen_dataset(task, n, seed=seed)
    flow_cfg = FlowConfig(2, 1, 1, n_blocks=2, subnet_layers=3, subnet_width=16,
                          activation="relu", perm_seed=3)
    train_cfg = TrainConfig(epochs=16, batch_size=128, lr_start=5e-3, lr_end=1e-3, seed=seed)
    return task, data, flow_cfg, train_cfg
