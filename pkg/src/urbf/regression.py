"""Synthetic 2-D regression targets and the mini-batch training protocol.

Two families sit on the plane x + y: Gaussian bumps of height 3, and
piecewise-constant elevations over disjoint rectangles.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Network
from .optim import Adam

logger = logging.getLogger(__name__)

DOMAIN = (-5.0, 5.0)
BUMP_HEIGHT = 3.0
SIGMA_RANGE = (0.4, 0.8)
HEIGHT_RANGE = (1.0, 10.0)
SIDE_RANGE = (1.0, 3.0)
REJECTION_BUDGET = 10_000
N_TRAIN = 7500
N_TEST = 1000
NNPI_GRID = (5, 7, 10, 13, 15, 20, 25, 30, 40)
COMPLEXITIES = (0, 1, 3, 5)


@dataclass(frozen=True)
class Bump:
    mu_x: float
    mu_y: float
    sigma: float


@dataclass(frozen=True)
class GaussianTarget:
    components: tuple[Bump, ...] = ()

    kind = "gauss"

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = x + y
        for b in self.components:
            two_var = 2.0 * b.sigma * b.sigma
            out = out + BUMP_HEIGHT * (
                np.exp(-((x - b.mu_x) ** 2) / two_var) * np.exp(-((y - b.mu_y) ** 2) / two_var)
            )
        return out


@dataclass(frozen=True)
class Rect:
    """Half-open box [x0, x1) x [y0, y1)."""

    x0: float
    x1: float
    y0: float
    y1: float

    def contains(self, x, y):
        return (x >= self.x0) & (x < self.x1) & (y >= self.y0) & (y < self.y1)

    def overlaps(self, other: "Rect") -> bool:
        return self.x0 < other.x1 and other.x0 < self.x1 and self.y0 < other.y1 and other.y0 < self.y1


@dataclass(frozen=True)
class Plateau:
    region: Rect
    height: float


@dataclass(frozen=True)
class DiscontinuousTarget:
    components: tuple[Plateau, ...] = ()

    kind = "disc"

    def __post_init__(self):
        regions = [p.region for p in self.components]
        for i, a in enumerate(regions):
            for b in regions[i + 1 :]:
                if a.overlaps(b):
                    raise ValueError(f"rectangles {a} and {b} overlap")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = x + y
        for p in self.components:
            out = out + np.where(p.region.contains(x, y), p.height, 0.0)
        return out


def eval_gauss_target(t: GaussianTarget, x, y):
    return t(x, y)


def eval_disc_target(t: DiscontinuousTarget, x, y):
    return t(x, y)


def _sample_rect(rng: np.random.Generator) -> Rect:
    lo, hi = DOMAIN
    cx, cy = rng.uniform(lo, hi, size=2)
    wx, wy = rng.uniform(*SIDE_RANGE, size=2)
    return Rect(
        max(cx - wx / 2, lo), min(cx + wx / 2, hi),
        max(cy - wy / 2, lo), min(cy + wy / 2, hi),
    )


def sample_target(kind: str, m: int, seed) -> GaussianTarget | DiscontinuousTarget:
    """Draw a random target of ``kind`` ("gauss" or "disc") with ``m`` components."""
    if m < 0:
        raise ValueError("number of components must be non-negative")
    rng = np.random.default_rng(seed)
    if kind == "gauss":
        bumps = []
        for _ in range(m):
            mx, my = rng.uniform(*DOMAIN, size=2)
            bumps.append(Bump(float(mx), float(my), float(rng.uniform(*SIGMA_RANGE))))
        return GaussianTarget(tuple(bumps))
    if kind == "disc":
        rects: list[Rect] = []
        attempts = 0
        while len(rects) < m:
            attempts += 1
            if attempts > REJECTION_BUDGET:
                raise RuntimeError(f"could not place {m} disjoint rectangles in {REJECTION_BUDGET} attempts")
            r = _sample_rect(rng)
            if not any(r.overlaps(o) for o in rects):
                rects.append(r)
        heights = rng.uniform(*HEIGHT_RANGE, size=m)
        return DiscontinuousTarget(tuple(Plateau(r, float(h)) for r, h in zip(rects, heights)))
    raise ValueError(f"unknown target kind {kind!r}")


@dataclass
class RegressionDataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def sample_dataset(target, seed, n_train: int = N_TRAIN, n_test: int = N_TEST) -> RegressionDataset:
    """Uniform inputs on the square domain, noise-free targets."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(*DOMAIN, size=(n_train + n_test, 2))
    y = target(x[:, 0], x[:, 1])
    return RegressionDataset(x[:n_train], y[:n_train], x[n_train:], y[n_train:])


def save_csv(path, inputs: np.ndarray, targets: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "target"])
        for (a, b), t in zip(inputs, targets):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(t))])


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["x", "y", "target"]:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = np.array([[float(v) for v in row] for row in reader], dtype=np.float64).reshape(-1, 3)
    return rows[:, :2], rows[:, 2]


def export_dataset(data: RegressionDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_csv(directory / "train.csv", data.x_train, data.y_train)
    save_csv(directory / "test.csv", data.x_test, data.y_test)


def import_dataset(directory) -> RegressionDataset:
    directory = Path(directory)
    xtr, ytr = load_csv(directory / "train.csv")
    xte, yte = load_csv(directory / "test.csv")
    return RegressionDataset(xtr, ytr, xte, yte)


@dataclass
class RegressionRun:
    net: Network
    train_mse: list[float] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)

    @property
    def final_test_mse(self) -> float:
        return self.test_mse[-1]


def mse(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    pred = net.predict(x)[:, 0]
    return float(np.mean((pred - y) ** 2))


def train_regression(
    net: Network,
    data: RegressionDataset,
    epochs: int = 300,
    batch_size: int = 256,
    lr: float = 1e-4,
    seed=0,
) -> RegressionRun:
    """Mini-batch Adam on the MSE loss, reshuffling each epoch.

    The per-epoch train entry is the sample-weighted mean of the batch
    losses seen during that epoch; the test entry is the MSE on the full
    held-out set after the epoch.
    """
    rng = np.random.default_rng(seed)
    opt = Adam(net.parameters(), lr=lr)
    run = RegressionRun(net)
    n = len(data.x_train)
    y_train = data.y_train.reshape(-1, 1)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            opt.zero_grad()
            pred = net.forward(Tensor(data.x_train[idx]))
            loss = ad.mean(ad.square(ad.subtract(pred, Tensor(y_train[idx]))))
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            ad.backward(loss)
            opt.step()
            net.project()
            total += value * len(idx)
        run.train_mse.append(total / n)
        run.test_mse.append(mse(net, data.x_test, data.y_test))
    logger.debug("final test mse %.6g after %d epochs", run.final_test_mse, epochs)
    return run
