"""Dynamic bi-directional training of the invertible network.

First half of the schedule: pure supervised regression of the forward map
(large weight on the prediction loss).  Second half: the supervised weight
ramps linearly to zero while the two distribution-matching MMD weights ramp
up to the ceiling.  Gradients from the forward pass (prediction + latent
losses) and the backward pass (design-space prior loss) are accumulated
before every parameter update.  The parameter snapshot with minimal
validation L2 is kept separately from the end-of-training parameters: the
former drives localization gradients, the latter posterior sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import gradcore as gc
from .benchmarks import NormStats, PairedDataset
from .flows import FlowConfig, InvertibleNet, load_checkpoint, save_checkpoint
from .gradcore import Var
from .losses import DEFAULT_KERNEL, KernelSpec, l2_forward_loss, latent_loss, ml_loss, x_prior_loss

OBJECTIVES = ("bidirectional-mmd", "max-likelihood")

HISTORY_FIELDS = ("epoch", "lambda_x", "lambda_y", "lambda_z",
                  "loss_x", "loss_y", "loss_z", "val_l2")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr_start: float
    lr_end: float
    weight_ceiling: float = 10.0
    kernel: KernelSpec = DEFAULT_KERNEL
    ml_sigma: float = 0.1
    objective: str = "bidirectional-mmd"
    seed: int = 0
    val_fraction: float = 0.1
    ramp: str = "linear"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_override: tuple | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("need epochs >= 0 and batch_size >= 2")
        if not (self.lr_start >= self.lr_end > 0):
            raise ValueError("need lr_start >= lr_end > 0")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective '{self.objective}'")
        if self.ramp != "linear":
            raise ValueError("only the linear ramp is implemented")
        if not 0 < self.val_fraction < 1:
            raise ValueError("validation fraction must be in (0, 1)")


def _learning_rate(epoch: int, n_epochs: int, lr_start: float, lr_end: float) -> float:
    """Hold lr_start through the supervised plateau, then decay exponentially.

    The high-frequency benchmark surfaces need the full rate for the whole
    regression phase; the decay happens while the distribution losses ramp
    in, which also keeps that phase stable.
    """
    half = n_epochs / 2.0
    if epoch <= half or lr_start == lr_end:
        return lr_start
    frac = (epoch - half) / (n_epochs - half)
    return lr_start * (lr_end / lr_start) ** frac


def weight_schedule(epoch: int, n_epochs: int, ceiling: float) -> tuple[float, float, float]:
    """Loss weights (w_x, w_y, w_z) for one epoch of the adaptive schedule.

    Plateau through the first half (0, ceiling, 0), then a linear exchange
    that ends at (ceiling, 0, ceiling).
    """
    if not 1 <= epoch <= n_epochs:
        raise ValueError(f"epoch {epoch} outside 1..{n_epochs}")
    half = n_epochs / 2.0
    if epoch <= half:
        return (0.0, ceiling, 0.0)
    rising = ceiling * (epoch - half) / half
    return (rising, ceiling * (n_epochs - epoch) / half, rising)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns (new_params, state)."""
    if params.shape != grad.shape:
        raise ValueError("parameter/gradient shape mismatch")
    if not np.all(np.isfinite(grad)):
        raise gc.EvalError("non-finite gradient passed to adam_step")
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grad
    state.v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = state.m / (1 - beta1**state.t)
    v_hat = state.v / (1 - beta2**state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), state


@dataclass
class TrainedModel:
    """Both parameter roles plus everything needed to reuse them."""

    flow_config: FlowConfig
    permutations: list
    phi_final: np.ndarray
    phi_star: np.ndarray
    stats: NormStats
    train_config: TrainConfig
    task: str = "unknown"
    history: list = field(default_factory=list, repr=False)
    best_val_l2: float = np.inf
    final_val_l2: float = np.inf
    diverged: bool = False

    def net_final(self) -> InvertibleNet:
        return InvertibleNet(self.flow_config, self.permutations, self.phi_final)

    def net_star(self) -> InvertibleNet:
        return InvertibleNet(self.flow_config, self.permutations, self.phi_star)

    def predict_y(self, x_raw: np.ndarray) -> np.ndarray:
        """Raw-space surrogate prediction through the best forward snapshot."""
        net = self.net_star()
        xn = np.atleast_2d(self.stats.norm_x(np.asarray(x_raw, dtype=np.float64)))
        out, _ = net.forward_graph(Var(xn), Var(net.params))
        y = self.stats.denorm_y(out.value[:, : net.config.dim_y])
        return y[0] if np.asarray(x_raw).ndim == 1 else y

    def save(self, path) -> None:
        cfg = asdict(self.train_config)
        cfg["kernel"] = list(self.train_config.kernel.bandwidths)
        meta = {
            "task": self.task,
            "train_config": cfg,
            "best_val_l2": self.best_val_l2,
            "final_val_l2": self.final_val_l2,
            "diverged": self.diverged,
            "history": [list(row) for row in self.history],
        }
        save_checkpoint(path, self.flow_config,
                        {"phi_final": self.phi_final, "phi_star": self.phi_star},
                        norm_stats=self.stats.to_dict(), meta=meta,
                        permutations=self.permutations)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        raw = load_checkpoint(path)
        meta = raw["meta"]
        cfg = dict(meta["train_config"])
        cfg["kernel"] = KernelSpec(bandwidths=tuple(cfg["kernel"]))
        if cfg.get("lambda_override") is not None:
            cfg["lambda_override"] = tuple(cfg["lambda_override"])
        return cls(
            flow_config=raw["config"],
            permutations=raw["permutations"],
            phi_final=raw["arrays"]["phi_final"],
            phi_star=raw["arrays"]["phi_star"],
            stats=NormStats.from_dict(raw["norm_stats"]),
            train_config=TrainConfig(**cfg),
            task=meta["task"],
            history=[tuple(row) for row in meta["history"]],
            best_val_l2=meta["best_val_l2"],
            final_val_l2=meta["final_val_l2"],
            diverged=meta["diverged"],
        )


def _forward_direction(net: InvertibleNet, phi: Var, xb, yb, lam_y, lam_z,
                       kernel, y_shuffled, z_product):
    """Weighted forward-pass loss graph; returns (loss Var, L_y, L_z)."""
    out, _ = net.forward_graph(Var(xb), phi)
    loss = None
    val_y = val_z = float("nan")
    if lam_y > 0:
        y_hat = gc.col_slice(out, 0, net.config.dim_y)
        term_y = l2_forward_loss(y_hat, yb)
        val_y = term_y.item()
        loss = lam_y * term_y
    if lam_z > 0:
        term_z = latent_loss(out, y_shuffled, z_product, kernel)
        val_z = term_z.item()
        loss = lam_z * term_z if loss is None else loss + lam_z * term_z
    return loss, val_y, val_z


def _backward_direction(net: InvertibleNet, phi: Var, xb, yb, lam_x, kernel, z_fresh):
    """Weighted backward-pass loss graph; returns (loss Var, L_x)."""
    yz = np.concatenate([yb, z_fresh], axis=1)
    x_back, _ = net.inverse_graph(Var(yz), phi)
    term_x = x_prior_loss(x_back, xb, kernel)
    return lam_x * term_x, term_x.item()


def _grad_of(net, params, build):
    phi = Var(params, requires_grad=True)
    loss = build(phi)
    if loss is None:
        return np.zeros_like(params)
    gc.backward(loss)
    return phi.grad if phi.grad is not None else np.zeros_like(params)


def _validation_l2(net: InvertibleNet, params, x_val, y_val) -> float:
    out, _ = net.forward_graph(Var(x_val), Var(params))
    y_hat = out.value[:, : net.config.dim_y]
    return float(np.mean(((y_hat - y_val) ** 2).sum(axis=1)))


def train(data: PairedDataset, cfg: TrainConfig, flow_cfg: FlowConfig) -> TrainedModel:
    """Run the schedule over seeded minibatches; see the module docstring."""
    if data.x.shape[1] != flow_cfg.dim_x or data.y.shape[1] != flow_cfg.dim_y:
        raise ValueError("dataset dimensions do not match the flow configuration")
    root = np.random.SeedSequence(cfg.seed)
    init_ss, split_ss, loop_ss = root.spawn(3)

    n_val = max(1, round(cfg.val_fraction * data.n))
    order = np.random.default_rng(split_ss).permutation(data.n)
    val_idx, train_idx = order[:n_val], order[n_val:]
    stats = NormStats.fit(data.x[train_idx], data.y[train_idx])
    xn, yn = stats.norm_x(data.x), stats.norm_y(data.y)
    x_train, y_train = xn[train_idx], yn[train_idx]
    x_val, y_val = xn[val_idx], yn[val_idx]

    net = InvertibleNet.create(flow_cfg, seed=int(init_ss.generate_state(1, np.uint64)[0]))
    params = net.params.copy()
    dim_y, dim_z = flow_cfg.dim_y, flow_cfg.dim_z
    state = AdamState.zeros(params.size)
    rng = np.random.default_rng(loop_ss)

    best_val = _validation_l2(net, params, x_val, y_val)
    phi_star = params.copy()
    history = []
    diverged = False

    n_train = x_train.shape[0]
    batch = min(cfg.batch_size, n_train)

    for epoch in range(1, cfg.epochs + 1):
        if cfg.lambda_override is not None:
            lam = cfg.lambda_override
        else:
            lam = weight_schedule(epoch, cfg.epochs, cfg.weight_ceiling)
        lr = _learning_rate(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end)
        perm = rng.permutation(n_train)
        epoch_losses = []
        try:
            for lo in range(0, n_train - batch + 1, batch):
                idx = perm[lo : lo + batch]
                xb, yb = x_train[idx], y_train[idx]
                if cfg.objective == "max-likelihood":
                    vals = [float("nan")] * 3
                    loss_holder = {}

                    def build_ml(phi):
                        term = ml_loss(net, xb, yb, cfg.ml_sigma, phi=phi)
                        loss_holder["v"] = term.item()
                        return term

                    grad = _grad_of(net, params, build_ml)
                    vals[1] = loss_holder["v"]
                else:
                    y_shuffled = rng.permutation(yb) if lam[2] > 0 else None
                    z_product = rng.normal(size=(batch, dim_z)) if lam[2] > 0 else None
                    z_fresh = rng.normal(size=(batch, dim_z)) if lam[0] > 0 else None
                    vals = [float("nan")] * 3

                    def build_fwd(phi):
                        loss, vals[1], vals[2] = _forward_direction(
                            net, phi, xb, yb, lam[1], lam[2], cfg.kernel,
                            y_shuffled, z_product)
                        return loss

                    grad = _grad_of(net, params, build_fwd)
                    if lam[0] > 0:
                        def build_bwd(phi):
                            loss, vals[0] = _backward_direction(
                                net, phi, xb, yb, lam[0], cfg.kernel, z_fresh)
                            return loss

                        grad = grad + _grad_of(net, params, build_bwd)
                params, state = adam_step(params, grad, state, lr,
                                          cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
                epoch_losses.append(vals)
        except gc.EvalError:
            diverged = True

        net.params = params
        val_l2 = _validation_l2(net, params, x_val, y_val)
        mean_losses = []
        arr = np.array(epoch_losses) if epoch_losses else np.full((1, 3), np.nan)
        for j in range(3):
            col = arr[:, j][~np.isnan(arr[:, j])]
            mean_losses.append(float(col.mean()) if col.size else float("nan"))
        history.append((epoch, lam[0], lam[1], lam[2],
                        mean_losses[0], mean_losses[1], mean_losses[2], val_l2))
        if val_l2 < best_val:
            best_val = val_l2
            phi_star = params.copy()
        if diverged:
            break

    return TrainedModel(
        flow_config=flow_cfg,
        permutations=net.permutations,
        phi_final=params,
        phi_star=phi_star,
        stats=stats,
        train_config=cfg,
        task=data.task,
        history=history,
        best_val_l2=best_val,
        final_val_l2=_validation_l2(net, params, x_val, y_val),
        diverged=diverged,
    )


def write_training_log(model: TrainedModel, path) -> None:
    """Per-epoch CSV: schedule weights, mean losses, validation L2."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(HISTORY_FIELDS) + "\n")
        for row in model.history:
            fh.write(f"{int(row[0])}," + ",".join(f"{v:.17g}" for v in row[1:]) + "\n")
