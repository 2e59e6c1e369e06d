"""Ground-truth forward operators, priors, and paired-dataset generation.

Three analytic tasks: a 2-D sinewave surface with nine disconnected
solution islands, a planar three-segment robotic arm, and a projectile
with linear air drag whose observable is the landing point.  Forward
operators are pure; dataset rows are generated with per-row counter-based
seeding so results do not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ARM_LENGTHS = (0.5, 0.5, 1.0)


class NoRootError(ValueError):
    """The trajectory never returns to ground level within the search horizon."""


@dataclass(frozen=True)
class BallisticsParams:
    gravity: float = 9.81
    mass: float = 0.2
    drag: float = 0.25

    def __post_init__(self):
        if min(self.gravity, self.mass, self.drag) <= 0:
            raise ValueError("gravity, mass and drag must all be positive")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    dim_x: int
    dim_y: int
    default_target: tuple
    default_size: int = 10_000
    ballistics: BallisticsParams | None = None

    @property
    def dim_z(self) -> int:
        return self.dim_x - self.dim_y


def make_task(name: str, ballistics: BallisticsParams | None = None) -> TaskSpec:
    if name == "sinewave":
        return TaskSpec("sinewave", 2, 1, (1.2,))
    if name == "robotic-arm":
        return TaskSpec("robotic-arm", 4, 2, (1.5, 0.0))
    if name == "ballistics":
        return TaskSpec("ballistics", 4, 1, (5.0,),
                        ballistics=ballistics or BallisticsParams())
    raise ValueError(f"unknown task '{name}' (expected sinewave, robotic-arm or ballistics)")


TASK_NAMES = ("sinewave", "robotic-arm", "ballistics")


# ---------------------------------------------------------------------------
# forward operators

def sinewave_forward(x: np.ndarray) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    y = np.sin(3 * np.pi * x[..., 0]) + np.cos(3 * np.pi * x[..., 1])
    return float(y) if x.ndim == 1 else y


def arm_forward(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    l1, l2, l3 = ARM_LENGTHS
    a1 = x[..., 1]
    a2 = x[..., 2] - x[..., 1]
    a3 = x[..., 3] - x[..., 1] - x[..., 2]
    y1 = l1 * np.sin(a1) + l2 * np.sin(a2) + l3 * np.sin(a3) + x[..., 0]
    y2 = l1 * np.cos(a1) + l2 * np.cos(a2) + l3 * np.cos(a3)
    return np.stack([y1, y2], axis=-1)


def ballistics_trajectory(x: np.ndarray, t, params: BallisticsParams):
    """Closed-form drag trajectory (horizontal, vertical) at time t."""
    x = np.asarray(x, dtype=np.float64)
    g, m, k = params.gravity, params.mass, params.drag
    v1 = x[..., 3] * np.cos(x[..., 2])
    v2 = x[..., 3] * np.sin(x[..., 2])
    decay = np.expm1(-k * np.asarray(t, dtype=np.float64) / m)  # exp(-kt/m) - 1
    horiz = x[..., 0] - v1 * m / k * decay
    vert = x[..., 1] - m / k**2 * ((g * m + v2 * k) * decay + g * np.asarray(t) * k)
    return horiz, vert


def ballistics_landing_time(x: np.ndarray, params: BallisticsParams,
                            horizon: float = 1e3) -> float:
    """Smallest t > 0 with zero height: doubling bracket scan plus bisection."""
    def height(t):
        return float(ballistics_trajectory(x, t, params)[1])

    t_prev, f_prev = 0.0, height(0.0)
    t = 1e-3
    while t <= horizon:
        f = height(t)
        if f == 0.0:
            return t
        if f_prev * f < 0 or (f_prev == 0.0 and f < 0):
            lo, hi = t_prev, t
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                fm = height(mid)
                if abs(fm) < 1e-10:
                    return mid
                if (fm > 0) == (f_prev > 0 or f_prev == 0.0):
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
        t_prev, f_prev = t, f
        t *= 2.0
    raise NoRootError(f"no landing within t <= {horizon}")


def ballistics_forward(x: np.ndarray, params: BallisticsParams) -> float:
    """Horizontal landing coordinate: T1 at the first ground crossing."""
    t_star = ballistics_landing_time(x, params)
    return float(ballistics_trajectory(x, t_star, params)[0])


def forward_batch(task: TaskSpec, xs: np.ndarray) -> np.ndarray:
    """Evaluate the true forward operator on a batch, output shape (n, dim_y)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[1] != task.dim_x:
        raise ValueError(f"{task.name} expects dim {task.dim_x}, got {xs.shape[1]}")
    if task.name == "sinewave":
        return sinewave_forward(xs).reshape(-1, 1)
    if task.name == "robotic-arm":
        return arm_forward(xs)
    return np.array([[ballistics_forward(row, task.ballistics)] for row in xs])


# ---------------------------------------------------------------------------
# priors and datasets

BALLISTICS_ANGLE_RANGE = (np.deg2rad(9.0), np.deg2rad(72.0))
ARM_PRIOR_STD = np.sqrt(np.array([1 / 16, 1 / 4, 1 / 4, 1 / 4]))


def _draw_prior(task: TaskSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    if task.name == "sinewave":
        return rng.uniform(-1.0, 1.0, size=(n, 2))
    if task.name == "robotic-arm":
        return rng.normal(size=(n, 4)) * ARM_PRIOR_STD
    lo, hi = BALLISTICS_ANGLE_RANGE
    return np.column_stack([
        rng.normal(0.0, 0.5, size=n),
        rng.normal(1.5, 0.5, size=n),
        rng.uniform(lo, hi, size=n),
        rng.poisson(15.0, size=n).astype(np.float64),
    ])


def sample_prior(task: TaskSpec, n: int, seed: int) -> np.ndarray:
    """IID draws from the task prior (ballistics angles in radians, counts as reals)."""
    if n < 1:
        raise ValueError("need at least one sample")
    return _draw_prior(task, np.random.default_rng(seed), n)


@dataclass
class NormStats:
    """Per-dimension training-split statistics: standardization plus x-range.

    The range fields feed the divergence guard during localization and the
    boundary box of the neural-adjoint baseline.
    """

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> "NormStats":
        def _std(a):
            s = a.std(axis=0)
            return np.where(s < 1e-12, 1.0, s)

        return cls(x.mean(axis=0), _std(x), y.mean(axis=0), _std(y),
                   x.min(axis=0), x.max(axis=0))

    def norm_x(self, x):
        return (x - self.x_mean) / self.x_std

    def denorm_x(self, x):
        return x * self.x_std + self.x_mean

    def norm_y(self, y):
        return (y - self.y_mean) / self.y_std

    def denorm_y(self, y):
        return y * self.y_std + self.y_mean

    _FIELDS = ("x_mean", "x_std", "y_mean", "y_std", "x_min", "x_max")

    def to_dict(self) -> dict:
        return {k: [float(v) for v in getattr(self, k)] for k in self._FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in cls._FIELDS})


@dataclass
class PairedDataset:
    x: np.ndarray
    y: np.ndarray
    task: str
    seed: int | None = None
    stats: NormStats | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y row counts differ")

    @property
    def n(self) -> int:
        return self.x.shape[0]


def gen_dataset(task: TaskSpec, n: int, seed: int) -> PairedDataset:
    """Prior draws pushed through the true forward operator.

    Each row gets its own counter-based substream (seed, row), so the result
    is independent of generation order.  Ballistics draws without a landing
    are resampled within the row's stream.
    """
    if n < 1:
        raise ValueError("need at least one row")
    xs = np.empty((n, task.dim_x))
    ys = np.empty((n, task.dim_y))
    rejected = 0
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        for _ in range(1000):
            x = _draw_prior(task, rng, 1)[0]
            try:
                y = forward_batch(task, x[None, :])[0]
            except NoRootError:
                rejected += 1
                continue
            xs[i], ys[i] = x, y
            break
        else:
            raise RuntimeError(f"row {i}: could not draw a valid sample in 1000 tries")
    if rejected > n:
        raise RuntimeError(
            f"rejection rate {rejected / (rejected + n):.0%} exceeds 50%: check task parameters"
        )
    return PairedDataset(xs, ys, task.name, seed)


def save_dataset_csv(ds: PairedDataset, path) -> None:
    """Interchange format: header x1..xD,y1..yM, 17 significant digits."""
    cols = [f"x{i + 1}" for i in range(ds.x.shape[1])] + [f"y{i + 1}" for i in range(ds.y.shape[1])]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for xr, yr in zip(ds.x, ds.y):
            fh.write(",".join(f"{v:.17g}" for v in (*xr, *yr)) + "\n")


def load_dataset_csv(path, task: TaskSpec | None = None) -> PairedDataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    dim_x = sum(c.startswith("x") for c in header)
    dim_y = len(header) - dim_x
    if dim_y < 1 or header != [f"x{i+1}" for i in range(dim_x)] + [f"y{i+1}" for i in range(dim_y)]:
        raise ValueError(f"{path}: unexpected dataset header {header}")
    if task is not None and (dim_x, dim_y) != (task.dim_x, task.dim_y):
        raise ValueError(f"{path}: dims {(dim_x, dim_y)} do not match task {task.name}")
    return PairedDataset(rows[:, :dim_x], rows[:, dim_x:], task.name if task else "unknown")


def verify_dataset(ds: PairedDataset, task: TaskSpec) -> float:
    """Max forward-operator residual over all stored rows."""
    return float(np.max(np.abs(forward_batch(task, ds.x) - ds.y)))


# ---------------------------------------------------------------------------
# sinewave mode geometry

def sinewave_modes() -> np.ndarray:
    """Centers of the nine solution islands: global maxima of the surface in [-1,1]^2."""
    firsts = np.array([-0.5, 1 / 6, 5 / 6])   # sin(3 pi a) = 1
    seconds = np.array([-2 / 3, 0.0, 2 / 3])  # cos(3 pi b) = 1
    return np.array([(a, b) for a in firsts for b in seconds])


def sinewave_mode_labels(xs: np.ndarray, y_target: float = 1.2, radius: float = 0.25,
                         y_tol: float = 0.05) -> np.ndarray:
    """Island membership per point: 1..9 (nearest center), 0 if unassigned.

    A point belongs to an island when its nearest center is within ``radius``
    and its true forward value is within ``y_tol`` of the target.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    centers = sinewave_modes()
    dists = np.linalg.norm(xs[:, None, :] - centers[None, :, :], axis=2)
    nearest = np.argmin(dists, axis=1)
    near_enough = dists[np.arange(len(xs)), nearest] <= radius
    on_level_set = np.abs(sinewave_forward(xs) - y_target) <= y_tol
    return np.where(near_enough & on_level_set, nearest + 1, 0)
