"""Invertible network: affine coupling blocks with fixed seeded permutations.

One flat float64 parameter vector drives both directions of the bijection
between design space (dim D) and the concatenation of observation space
(dim M) and latent space (dim K = D - M).  The forward direction doubles
as the learned surrogate of the physical forward process; the inverse
direction is the conditional sampler.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import gradcore as gc
from .gradcore import Var

_ACTIVATIONS = {"relu": gc.relu, "leaky_relu": gc.leaky_relu, "tanh": gc.tanh}

CHECKPOINT_MAGIC = b"IPAGE-CKPT v1\n"


@dataclass(frozen=True)
class FlowConfig:
    dim_x: int
    dim_y: int
    dim_z: int
    n_blocks: int = 4
    subnet_layers: int = 3
    subnet_width: int = 128
    activation: str = "relu"
    scale_clamp: float = 2.0
    perm_seed: int = 0

    def __post_init__(self):
        if self.dim_z != self.dim_x - self.dim_y or self.dim_z <= 0:
            raise ValueError(
                f"latent dim must equal dim_x - dim_y > 0, got "
                f"({self.dim_x}, {self.dim_y}, {self.dim_z})"
            )
        if self.n_blocks < 1 or self.subnet_layers < 1 or self.subnet_width < 1:
            raise ValueError("block count, subnet depth and width must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")
        if self.scale_clamp <= 0:
            raise ValueError("scale clamp must be positive")


@dataclass
class CouplingBlock:
    """Introspection view of one block: its permutation and parameter slices."""

    index: int
    permutation: np.ndarray
    slices: dict = field(default_factory=dict)  # (subnet, layer, kind) -> (offset, shape)


def _mixing_permutation(rng: np.random.Generator, dim: int, split_at: int) -> np.ndarray:
    # reject permutations that map the passive lane set onto itself, otherwise
    # a block would feed nothing new to the next one (for dim 2 this forces a swap)
    while True:
        perm = rng.permutation(dim)
        if set(perm[:split_at]) != set(range(split_at)):
            return perm


def _subnet_shapes(cfg: FlowConfig) -> list[tuple[int, int]]:
    d_in = cfg.dim_x // 2
    d_out = cfg.dim_x - d_in
    widths = [d_in] + [cfg.subnet_width] * (cfg.subnet_layers - 1) + [d_out]
    return list(zip(widths[:-1], widths[1:]))


class InvertibleNet:
    """Stack of affine coupling blocks sharing one flat parameter vector."""

    def __init__(self, config: FlowConfig, permutations: list[np.ndarray], params: np.ndarray):
        self.config = config
        self.split_at = config.dim_x // 2
        self.permutations = [np.asarray(p, dtype=np.intp) for p in permutations]
        self.inverse_permutations = [np.argsort(p) for p in self.permutations]
        self.blocks: list[CouplingBlock] = []
        self._layout: dict = {}
        offset = 0
        for b in range(config.n_blocks):
            block = CouplingBlock(index=b, permutation=self.permutations[b])
            for subnet in ("scale", "shift"):
                for layer, (fan_in, fan_out) in enumerate(_subnet_shapes(config)):
                    for kind, shape in (("w", (fan_in, fan_out)), ("b", (fan_out,))):
                        size = int(np.prod(shape))
                        self._layout[(b, subnet, layer, kind)] = (offset, shape)
                        block.slices[(subnet, layer, kind)] = (offset, shape)
                        offset += size
            self.blocks.append(block)
        self.n_params = offset
        self.params = np.asarray(params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {self.params.shape}")

    # -- constructors ------------------------------------------------------

    @classmethod
    def create(cls, config: FlowConfig, seed: int = 0) -> "InvertibleNet":
        """He-uniform hidden layers, zero-initialized final layers (identity start)."""
        perm_rng = np.random.default_rng(np.random.SeedSequence(config.perm_seed))
        perms = [_mixing_permutation(perm_rng, config.dim_x, config.dim_x // 2)
                 for _ in range(config.n_blocks)]
        net = cls(config, perms, np.zeros(_param_count(config)))
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        last = config.subnet_layers - 1
        for (b, subnet, layer, kind), (offset, shape) in net._layout.items():
            if kind == "w" and layer != last:
                bound = np.sqrt(6.0 / shape[0])
                size = int(np.prod(shape))
                net.params[offset : offset + size] = rng.uniform(-bound, bound, size=size)
        return net

    @classmethod
    def identity(cls, config: FlowConfig) -> "InvertibleNet":
        """Zero subnets and identity permutations: the exact identity map."""
        perms = [np.arange(config.dim_x) for _ in range(config.n_blocks)]
        return cls(config, perms, np.zeros(_param_count(config)))

    def with_params(self, params: np.ndarray) -> "InvertibleNet":
        return InvertibleNet(self.config, self.permutations, params)

    def param_slice(self, block: int, subnet: str, layer: int, kind: str) -> slice:
        offset, shape = self._layout[(block, subnet, layer, kind)]
        return slice(offset, offset + int(np.prod(shape)))

    # -- graph builders (shared by inference and training) -----------------

    def _subnet(self, phi: Var, block: int, subnet: str, h: Var) -> Var:
        act = _ACTIVATIONS[self.config.activation]
        last = self.config.subnet_layers - 1
        for layer in range(self.config.subnet_layers):
            off_w, shape_w = self._layout[(block, subnet, layer, "w")]
            off_b, shape_b = self._layout[(block, subnet, layer, "b")]
            w = gc.reshape(gc.segment(phi, off_w, int(np.prod(shape_w))), shape_w)
            b = gc.segment(phi, off_b, shape_b[0])
            h = gc.matmul(h, w) + b
            if layer != last:
                h = act(h)
        return h

    def _clamped_scale(self, phi: Var, block: int, passive: Var) -> Var:
        a = self.config.scale_clamp
        raw = self._subnet(phi, block, "scale", passive)
        return gc.tanh(raw * (1.0 / a)) * a

    def forward_graph(self, x: Var, phi: Var, with_logdet: bool = False):
        """Map x -> concat(y, z); optionally also the per-sample log|det J|."""
        u = x
        logdet = None
        for block in range(self.config.n_blocks):
            passive, active = gc.split(u, self.split_at)
            s = self._clamped_scale(phi, block, passive)
            t = self._subnet(phi, block, "shift", passive)
            active = active * gc.exp(s) + t
            u = gc.permute_cols(gc.concat([passive, active]), self.permutations[block])
            if with_logdet:
                term = gc.vsum(s, axis=-1)
                logdet = term if logdet is None else logdet + term
        return u, logdet

    def inverse_graph(self, yz: Var, phi: Var, with_logdet: bool = False):
        """Exact inverse of forward_graph (log-det is of the inverse map)."""
        u = yz
        logdet = None
        for block in reversed(range(self.config.n_blocks)):
            u = gc.permute_cols(u, self.inverse_permutations[block])
            passive, active = gc.split(u, self.split_at)
            s = self._clamped_scale(phi, block, passive)
            t = self._subnet(phi, block, "shift", passive)
            active = (active - t) * gc.exp(-s)
            u = gc.concat([passive, active])
            if with_logdet:
                term = gc.vsum(s, axis=-1)
                logdet = term if logdet is None else logdet + term
        return u, (None if logdet is None else -logdet)


# -- array-level operations ------------------------------------------------

def _param_count(config: FlowConfig) -> int:
    per_subnet = sum(fi * fo + fo for fi, fo in _subnet_shapes(config))
    return config.n_blocks * 2 * per_subnet


def net_forward(net: InvertibleNet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split the bijection output into (observation prediction, latent code)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.config.dim_x:
        raise ValueError(f"expected input dim {net.config.dim_x}, got {x.shape[-1]}")
    out, _ = net.forward_graph(Var(x), Var(net.params))
    m = net.config.dim_y
    return out.value[..., :m], out.value[..., m:]


def net_inverse(net: InvertibleNet, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if y.shape[-1] != net.config.dim_y or z.shape[-1] != net.config.dim_z or y.ndim != z.ndim:
        raise ValueError(
            f"expected aligned batches of dims ({net.config.dim_y}, {net.config.dim_z}), "
            f"got shapes {y.shape} and {z.shape}"
        )
    yz = np.concatenate((y, z), axis=-1)
    out, _ = net.inverse_graph(Var(yz), Var(net.params))
    return out.value


def log_det_jacobian(net: InvertibleNet, x: np.ndarray) -> np.ndarray | float:
    """log |det d(y,z)/dx|: the sum of clamped scale outputs over all blocks."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.config.dim_x:
        raise ValueError(f"expected input dim {net.config.dim_x}, got {x.shape[-1]}")
    _, logdet = net.forward_graph(Var(x), Var(net.params), with_logdet=True)
    return logdet.value if x.ndim > 1 else float(logdet.value)


def log_det_jacobian_inverse(net: InvertibleNet, y: np.ndarray, z: np.ndarray):
    yz = np.concatenate((np.asarray(y, dtype=np.float64), np.asarray(z, dtype=np.float64)), axis=-1)
    _, logdet = net.inverse_graph(Var(yz), Var(net.params), with_logdet=True)
    return logdet.value if yz.ndim > 1 else float(logdet.value)


def log_posterior_density(net: InvertibleNet, x: np.ndarray):
    """Log density of x under the model, conditioned on the y it maps to.

    Change of variables toward the latent side: standard-normal density of
    the latent image plus log |det d(y,z)/dx|.
    """
    x = np.asarray(x, dtype=np.float64)
    out, logdet = net.forward_graph(Var(x), Var(net.params), with_logdet=True)
    z = out.value[..., net.config.dim_y :]
    k = net.config.dim_z
    logp = -0.5 * (z * z).sum(axis=-1) - 0.5 * k * np.log(2 * np.pi) + logdet.value
    return logp if x.ndim > 1 else float(logp)


# -- checkpoint container ----------------------------------------------------

def save_checkpoint(path, config: FlowConfig, arrays: dict[str, np.ndarray],
                    norm_stats: dict | None = None, meta: dict | None = None,
                    permutations: list[np.ndarray] | None = None) -> None:
    """Versioned, byte-reproducible container for configs + flat float64 arrays.

    Layout: magic line, one JSON header line (sorted keys, permutations and
    normalization statistics inline), then the raw little-endian float64
    payload of each array in header order.
    """
    header = {
        "format_version": 1,
        "config": asdict(config),
        "permutations": None if permutations is None else [[int(i) for i in p] for p in permutations],
        "norm_stats": norm_stats,
        "meta": meta or {},
        "arrays": [{"name": name, "len": int(arr.size)} for name, arr in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode() + b"\n"
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline().decode())
        arrays = {}
        for spec in header["arrays"]:
            raw = fh.read(8 * spec["len"])
            if len(raw) != 8 * spec["len"]:
                raise ValueError(f"{path}: truncated array '{spec['name']}'")
            arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return {
        "config": FlowConfig(**header["config"]),
        "permutations": None if header["permutations"] is None
        else [np.asarray(p, dtype=np.intp) for p in header["permutations"]],
        "norm_stats": header["norm_stats"],
        "meta": header["meta"],
        "arrays": arrays,
    }
