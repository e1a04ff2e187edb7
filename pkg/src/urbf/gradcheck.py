"""Randomized comparison of autodiff gradients against central differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_difference_gradient
from .layers import MrbfLayer, UrbfLayer

REL_TOL = 1e-4
FD_STEP = 1e-5


@dataclass
class CaseResult:
    kind: str
    index: int
    rel_error: float

    @property
    def passed(self) -> bool:
        return self.rel_error < REL_TOL


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute deviation scaled by the larger gradient magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _shape(rng) -> tuple[int, int]:
    return int(rng.integers(1, 5)), int(rng.integers(1, 5))


def _leaf(rng, shape, lo=-2.0, hi=2.0, name=None) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True, name=name)


def _away_from_zero(rng, shape) -> Tensor:
    mag = rng.uniform(0.5, 2.0, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    return Tensor(mag * sign, requires_grad=True)


def _build_case(kind: str, rng):
    """Return (leaves, fn) where fn() builds the op output from the leaves."""
    n, m = _shape(rng)
    broadcast = rng.random() < 0.3
    if kind in ("add", "subtract", "multiply", "divide"):
        a = _leaf(rng, (n, m))
        b_shape = (m,) if broadcast else (n, m)
        b = _away_from_zero(rng, b_shape) if kind == "divide" else _leaf(rng, b_shape)
        if kind != "divide" and rng.random() < 0.5:
            a, b = b, a
        return [a, b], lambda: ad.forward_op(kind, [a, b])
    if kind in ("negate", "exponential", "square"):
        a = _leaf(rng, (n, m))
        return [a], lambda: ad.forward_op(kind, [a])
    if kind == "relu":
        # keep entries clear of the kink at 0 so central differences are valid
        a = _away_from_zero(rng, (n, m))
        return [a], lambda: ad.relu(a)
    if kind == "matrix_multiply":
        k = int(rng.integers(1, 5))
        a, b = _leaf(rng, (n, k)), _leaf(rng, (k, m))
        return [a, b], lambda: ad.matrix_multiply(a, b)
    if kind in ("sum", "mean"):
        a = _leaf(rng, (n, m))
        axis = [None, 0, 1][int(rng.integers(0, 3))]
        return [a], lambda: ad.forward_op(kind, [a], axis=axis)
    if kind == "broadcast_to":
        a = _leaf(rng, (m,))
        return [a], lambda: ad.broadcast_to(a, (n, m))
    if kind == "concatenate":
        a, b = _leaf(rng, (n, m)), _leaf(rng, (n, int(rng.integers(1, 4))))
        return [a, b], lambda: ad.concatenate([a, b], axis=1)
    if kind == "urbf":
        d, k = int(rng.integers(1, 4)), int(rng.integers(2, 6))
        layer = UrbfLayer(d, k, (-2.0, 2.0))
        layer.c.data += rng.uniform(-0.3, 0.3, size=layer.c.shape)
        layer.sigma.data *= rng.uniform(0.7, 1.5, size=layer.sigma.shape)
        x = _leaf(rng, (n, d))
        return [x, layer.c, layer.sigma], lambda: layer.forward(x)
    if kind == "mrbf":
        d, k, j = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
        layer = MrbfLayer(d, k, j, (-2.0, 2.0), rng)
        x = _leaf(rng, (n, d))
        return [x, *layer.parameters()], lambda: layer.forward(x)
    raise ValueError(kind)


CASE_KINDS = ad.OP_KINDS + ("urbf", "mrbf")


def check_case(kind: str, rng, index: int = 0) -> CaseResult:
    leaves, fn = _build_case(kind, rng)
    out_shape = fn().shape
    weights = Tensor(rng.uniform(-1.0, 1.0, size=out_shape))

    def loss() -> Tensor:
        return ad.sum(ad.multiply(fn(), weights))

    ad.zero_grad(leaves)
    ad.backward(loss())
    analytic = [leaf.grad.copy() for leaf in leaves]
    numeric = finite_difference_gradient(lambda: loss().item(), leaves, FD_STEP)
    err = max(relative_error(a, n) for a, n in zip(analytic, numeric))
    return CaseResult(kind, index, err)


def run_gradcheck(cases_per_kind: int = 20, seed: int = 0) -> list[CaseResult]:
    """``cases_per_kind`` random cases for every op kind and both RBF layers."""
    rng = np.random.default_rng(seed)
    return [check_case(kind, rng, i) for kind in CASE_KINDS for i in range(cases_per_kind)]
