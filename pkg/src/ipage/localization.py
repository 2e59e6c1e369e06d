"""Posterior sampling and gradient localization of inverse solutions.

The pipeline: draw space-filling latents, push them through the trained
inverse map conditioned on the target observation (the "intelligent
prior"), then run per-sample Adam descent on the squared prediction error
of the best forward snapshot.  The neural-adjoint baseline does the same
descent from random in-domain starts against a separately trained plain
MLP surrogate, with a hinge boundary penalty.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .benchmarks import (
    NormStats,
    PairedDataset,
    TaskSpec,
    forward_batch,
    sinewave_mode_labels,
)
from .flows import InvertibleNet
from .gradcore import EvalError, Gradient, Var
from .losses import boundary_loss
from .reports import SolveReport
from .sampling import SamplerKind, draw_latents
from .training import AdamState, TrainedModel, adam_step


@dataclass(frozen=True)
class LocalizeConfig:
    steps: int = 300
    lr: float = 1e-3
    m: int = 200
    sampler: SamplerKind = SamplerKind("mlhs", 100)
    clamp_factor: float = 10.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 0 or self.lr <= 0 or self.m < 1:
            raise ValueError("need steps >= 0, lr > 0 and m >= 1")


@dataclass(frozen=True)
class NAConfig:
    restarts: int = 200
    steps: int = 1000
    lr: float = 5e-3
    top_k: int | None = None
    reuse_forward_snapshot: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.restarts < 1 or self.steps < 0 or self.lr <= 0:
            raise ValueError("need restarts >= 1, steps >= 0 and lr > 0")
        if self.top_k is not None and not 1 <= self.top_k <= self.restarts:
            raise ValueError("top_k must lie in 1..restarts")


# ---------------------------------------------------------------------------
# posterior sampling

def sample_posterior(model: TrainedModel, y_star: np.ndarray, m: int,
                     sampler: SamplerKind, seed: int) -> tuple[np.ndarray, int]:
    """Backward-map m space-filling latents conditioned on the target.

    Returns raw-space samples and the count of dropped (non-finite) rows.
    """
    net = model.net_final()
    y_norm = model.stats.norm_y(np.asarray(y_star, dtype=np.float64))
    z = draw_latents(sampler, m, net.config.dim_z, seed)
    y_tile = np.tile(y_norm, (m, 1))
    yz = np.concatenate([y_tile, z], axis=1)
    dropped = 0
    try:
        x_norm, _ = net.inverse_graph(Var(yz), Var(net.params))
        rows = x_norm.value
    except EvalError:
        kept = []
        for row in yz:
            try:
                out, _ = net.inverse_graph(Var(row[None, :]), Var(net.params))
                kept.append(out.value[0])
            except EvalError:
                dropped += 1
        if not kept:
            raise
        rows = np.asarray(kept)
    return model.stats.denorm_x(rows), dropped


# ---------------------------------------------------------------------------
# surrogate gradient and descent

def _prediction_graph(net: InvertibleNet, xv: Var, phi: Var) -> Var:
    out, _ = net.forward_graph(xv, phi)
    return gc.col_slice(out, 0, net.config.dim_y)


def surrogate_grad(model: TrainedModel, x_hat: np.ndarray, y_star: np.ndarray) -> Gradient:
    """Gradient of the squared surrogate residual at x_hat (raw coordinates).

    Uses the minimal-validation-loss parameter snapshot, not the final one.
    """
    net = model.net_star()
    x_hat = np.asarray(x_hat, dtype=np.float64)
    single = x_hat.ndim == 1
    xn = np.atleast_2d(model.stats.norm_x(x_hat))
    y_norm = np.tile(model.stats.norm_y(np.asarray(y_star, dtype=np.float64)), (xn.shape[0], 1))
    xv = Var(xn, requires_grad=True)
    loss = gc.vsum(gc.square_norm(_prediction_graph(net, xv, Var(net.params)) - y_norm, axis=1))
    gc.backward(loss)
    grad = xv.grad / model.stats.x_std  # chain rule through standardization
    return Gradient(value=float(loss.value), grad=grad[0] if single else grad)


def _adam_descent(build_loss, x0: np.ndarray, steps: int, lr: float,
                  beta1: float, beta2: float, eps: float, post_step=None) -> np.ndarray:
    x = x0.copy()
    state = AdamState(np.zeros_like(x), np.zeros_like(x))
    for _ in range(steps):
        xv = Var(x, requires_grad=True)
        loss = build_loss(xv)
        gc.backward(loss)
        grad = xv.grad if xv.grad is not None else np.zeros_like(x)
        x, state = adam_step(x, grad, state, lr, beta1, beta2, eps)
        if post_step is not None:
            x = post_step(x)
    return x


def localize(model: TrainedModel, x_hat: np.ndarray, y_star: np.ndarray,
             cfg: LocalizeConfig) -> tuple[np.ndarray, int]:
    """Independently descend every sample on the surrogate residual.

    Returns raw-space solutions and the count of clamped (runaway) points.
    Points are clamped to ten times the training-data range around its
    midpoint; well-started descents never touch the guard.
    """
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=np.float64))
    if cfg.steps == 0:
        return x_hat.copy(), 0
    net = model.net_star()
    stats = model.stats
    xn = stats.norm_x(x_hat)
    y_star = np.asarray(y_star, dtype=np.float64)
    y_norm = stats.norm_y(y_star)
    y_norm = np.tile(y_norm, (xn.shape[0], 1)) if y_star.ndim == 1 else y_norm
    if y_norm.shape[0] != xn.shape[0]:
        raise ValueError("per-row targets must align with the sample batch")
    phi = Var(net.params)

    mid_norm = stats.norm_x(0.5 * (stats.x_min + stats.x_max))
    half_span = cfg.clamp_factor * np.maximum((stats.x_max - stats.x_min) / stats.x_std, 1.0)
    flagged: set[int] = set()

    def guard(x):
        lo, hi = mid_norm - half_span, mid_norm + half_span
        outside = np.any((x < lo) | (x > hi), axis=1)
        if np.any(outside):
            flagged.update(np.nonzero(outside)[0].tolist())
            x = np.clip(x, lo, hi)
        return x

    def build(xv):
        return gc.vsum(gc.square_norm(_prediction_graph(net, xv, phi) - y_norm, axis=1))

    final = _adam_descent(build, xn, cfg.steps, cfg.lr,
                          cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, post_step=guard)
    return stats.denorm_x(final), len(flagged)


# ---------------------------------------------------------------------------
# end-to-end solvers

def _finish_report(task: TaskSpec, method: str, sampler: str, seed: int,
                   y_star, solutions, t_inference, t_localization,
                   n_dropped=0, n_clamped=0, extra=None, config_hash="") -> SolveReport:
    y_star = np.asarray(y_star, dtype=np.float64)
    resim = forward_batch(task, solutions)
    errors = ((resim - y_star) ** 2).sum(axis=1)
    labels = None
    if task.name == "sinewave":
        labels = sinewave_mode_labels(solutions, y_target=float(np.ravel(y_star)[0])).tolist()
    return SolveReport(
        task=task.name, method=method, sampler=sampler, seed=seed,
        target=list(map(float, np.ravel(y_star)[: task.dim_y])), solutions=solutions,
        resim_sq_errors=errors, mode_labels=labels,
        timings={"inference": t_inference, "localization": t_localization},
        config_hash=config_hash, n_dropped=n_dropped, n_clamped=n_clamped,
        extra=extra or {},
    )


def ipage_solve(model: TrainedModel, y_star, cfg: LocalizeConfig, task: TaskSpec,
                seed: int, config_hash: str = "") -> SolveReport:
    """Posterior exploration followed by localization; reports true errors."""
    t0 = time.perf_counter()
    x_hat, n_dropped = sample_posterior(model, y_star, cfg.m, cfg.sampler, seed)
    t1 = time.perf_counter()
    solutions, n_clamped = localize(model, x_hat, y_star, cfg)
    t2 = time.perf_counter()
    return _finish_report(task, "ipage", cfg.sampler.kind, seed, y_star, solutions,
                          t1 - t0, t2 - t1, n_dropped, n_clamped, config_hash=config_hash)


def inn_raw_solve(model: TrainedModel, y_star, cfg: LocalizeConfig, task: TaskSpec,
                  seed: int, config_hash: str = "") -> SolveReport:
    """Baseline: raw posterior samples without any localization."""
    t0 = time.perf_counter()
    x_hat, n_dropped = sample_posterior(model, y_star, cfg.m, cfg.sampler, seed)
    t1 = time.perf_counter()
    return _finish_report(task, "inn-raw", cfg.sampler.kind, seed, y_star, x_hat,
                          t1 - t0, 0.0, n_dropped, config_hash=config_hash)


# ---------------------------------------------------------------------------
# neural-adjoint baseline

class FeedForwardNet:
    """Plain MLP regression surrogate on one flat parameter vector."""

    def __init__(self, sizes: list[int], params: np.ndarray, activation: str = "relu"):
        self.sizes = list(sizes)
        self.activation = activation
        self._layout = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self._layout.append((offset, (fan_in, fan_out)))
            offset += fan_in * fan_out
            self._layout.append((offset, (fan_out,)))
            offset += fan_out
        self.n_params = offset
        self.params = np.asarray(params, dtype=np.float64)
        if self.params.shape != (offset,):
            raise ValueError(f"expected {offset} parameters, got {self.params.shape}")

    @classmethod
    def create(cls, sizes: list[int], seed: int, activation: str = "relu") -> "FeedForwardNet":
        net = cls(sizes, np.zeros(sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))),
                  activation)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        for offset, shape in net._layout:
            if len(shape) == 2:
                bound = np.sqrt(6.0 / shape[0])
                size = shape[0] * shape[1]
                net.params[offset : offset + size] = rng.uniform(-bound, bound, size=size)
        return net

    def forward_graph(self, xv: Var, phi: Var) -> Var:
        act = {"relu": gc.relu, "leaky_relu": gc.leaky_relu, "tanh": gc.tanh}[self.activation]
        h = xv
        n_layers = len(self.sizes) - 1
        for layer in range(n_layers):
            off_w, shape_w = self._layout[2 * layer]
            off_b, shape_b = self._layout[2 * layer + 1]
            w = gc.reshape(gc.segment(phi, off_w, shape_w[0] * shape_w[1]), shape_w)
            b = gc.segment(phi, off_b, shape_b[0])
            h = gc.matmul(h, w) + b
            if layer != n_layers - 1:
                h = act(h)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward_graph(Var(np.atleast_2d(x)), Var(self.params)).value


def matched_width(n_params: int, dim_in: int, dim_out: int, depth: int = 3) -> int:
    """Hidden width of a depth-layer MLP with roughly the given parameter count."""
    best, best_gap = 1, float("inf")
    for w in range(1, 4096):
        sizes = [dim_in] + [w] * (depth - 1) + [dim_out]
        count = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        gap = abs(count - n_params)
        if gap < best_gap:
            best, best_gap = w, gap
        if count > 2 * n_params:
            break
    return best


def train_na_surrogate(data: PairedDataset, n_params_target: int, seed: int,
                       epochs: int = 100, batch_size: int = 512,
                       lr_start: float = 1e-3, lr_end: float = 1e-5,
                       depth: int = 3, activation: str = "relu",
                       val_fraction: float = 0.1) -> tuple[FeedForwardNet, NormStats]:
    """Plain Adam regression fit of an MLP with matched parameter count."""
    dim_x, dim_y = data.x.shape[1], data.y.shape[1]
    width = matched_width(n_params_target, dim_x, dim_y, depth)
    sizes = [dim_x] + [width] * (depth - 1) + [dim_y]

    root = np.random.SeedSequence(seed)
    init_ss, split_ss, loop_ss = root.spawn(3)
    n_val = max(1, round(val_fraction * data.n))
    order = np.random.default_rng(split_ss).permutation(data.n)
    val_idx, train_idx = order[:n_val], order[n_val:]
    stats = NormStats.fit(data.x[train_idx], data.y[train_idx])
    xn, yn = stats.norm_x(data.x), stats.norm_y(data.y)
    x_train, y_train = xn[train_idx], yn[train_idx]

    net = FeedForwardNet.create(sizes, seed=int(init_ss.generate_state(1, np.uint64)[0]),
                                activation=activation)
    params = net.params.copy()
    state = AdamState.zeros(params.size)
    rng = np.random.default_rng(loop_ss)
    n_train = x_train.shape[0]
    batch = min(batch_size, n_train)
    decay = (lr_end / lr_start) ** (1.0 / max(epochs - 1, 1))
    for epoch in range(epochs):
        lr = lr_start * decay**epoch
        perm = rng.permutation(n_train)
        for lo in range(0, n_train - batch + 1, batch):
            idx = perm[lo : lo + batch]
            phi = Var(params, requires_grad=True)
            pred = net.forward_graph(Var(x_train[idx]), phi)
            loss = gc.mean(gc.square_norm(pred - y_train[idx], axis=1))
            gc.backward(loss)
            params, state = adam_step(params, phi.grad, state, lr)
    net.params = params
    return net, stats


def na_solve(surrogate: FeedForwardNet, stats: NormStats, y_star, cfg: NAConfig,
             task: TaskSpec, seed: int, config_hash: str = "",
             predict_graph=None) -> SolveReport:
    """Descent from random in-domain starts with a boundary hinge penalty.

    ``predict_graph`` may override the surrogate evaluation (used to reuse
    the invertible network's forward snapshot instead of the plain MLP).
    Reports the running minimum of the final true losses over restarts.
    """
    y_star = np.asarray(y_star, dtype=np.float64)
    rng = np.random.default_rng(seed)

    t0 = time.perf_counter()
    # uniform starts over the training-data box
    x0 = rng.uniform(stats.x_min, stats.x_max, size=(cfg.restarts, stats.x_min.size))
    xn = stats.norm_x(x0)
    t1 = time.perf_counter()

    y_norm = np.tile(stats.norm_y(y_star), (cfg.restarts, 1))
    center_norm = np.zeros_like(stats.x_mean)  # boundary box center is the data mean
    range_norm = (stats.x_max - stats.x_min) / stats.x_std

    if predict_graph is None:
        phi = Var(surrogate.params)

        def predict_graph(xv):
            return surrogate.forward_graph(xv, phi)

    def build(xv):
        residual = gc.square_norm(predict_graph(xv) - y_norm, axis=1)
        penalty = boundary_loss(xv, center_norm, range_norm)
        return gc.vsum(residual + penalty)

    final = _adam_descent(build, xn, cfg.steps, cfg.lr,
                          cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    t2 = time.perf_counter()

    surrogate_losses = ((predict_graph(Var(final)).value - y_norm) ** 2).sum(axis=1)
    solutions_all = stats.denorm_x(final)
    true_losses = ((forward_batch(task, solutions_all) - y_star) ** 2).sum(axis=1)
    r_min = float(np.minimum.accumulate(true_losses)[-1])

    keep = np.argsort(surrogate_losses, kind="stable")
    if cfg.top_k is not None:
        keep = keep[: cfg.top_k]
    report = _finish_report(task, "na", "uniform", seed, y_star, solutions_all[keep],
                            t1 - t0, t2 - t1, config_hash=config_hash,
                            extra={"r_min_true_loss": r_min,
                                   "prefix_min_true_loss": list(np.minimum.accumulate(true_losses))})
    return report
