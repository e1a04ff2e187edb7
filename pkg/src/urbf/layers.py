"""Network building blocks: affine layers, the multivariate RBF layer and the
univariate RBF (U-RBF) layer, plus the network container that chains them.

Every layer has two evaluation paths.  ``forward`` builds an autodiff graph
and is used for training.  ``predict`` runs on plain arrays and is used for
action selection, frozen target networks and evaluation.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

SIGMA_MIN = 1e-3
LAYER_KINDS = ("affine", "urbf", "mrbf")
ACTIVATIONS = ("relu", "none")


def gaussian_kernel(u, v):
    """exp(-u^2 / (2 v^2)); ``v`` must be at least ``SIGMA_MIN``."""
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < SIGMA_MIN):
        raise ValueError(f"kernel spread below floor {SIGMA_MIN}: {v.min()}")
    u = np.asarray(u, dtype=np.float64)
    out = np.exp(-(u * u) / (2.0 * v * v))
    return float(out) if out.ndim == 0 else out


def init_urbf_centers(lo: float, hi: float, k: int) -> np.ndarray:
    """``k`` equidistant centers from ``lo`` to ``hi`` inclusive."""
    if k < 2:
        raise ValueError("a U-RBF unit needs at least 2 kernels")
    if not lo < hi:
        raise ValueError(f"degenerate init range [{lo}, {hi}]")
    return np.linspace(lo, hi, k)


def _uniform_weights(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _check_width(x_shape, expected: int, what: str) -> None:
    if len(x_shape) != 2 or x_shape[1] != expected:
        raise ShapeError(f"{what}: expected input of shape (batch, {expected}), got {tuple(x_shape)}")


class AffineLayer:
    """y = act(x W + b).

    ``W`` is stored input-major, shape (in, out), so the forward pass is a
    single matrix product; :attr:`weights` exposes the (out, in) view.
    """

    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(rng)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.W = Tensor(_uniform_weights(rng, in_dim, (in_dim, out_dim)), requires_grad=True, name="affine.W")
        self.b = Tensor(np.zeros(out_dim), requires_grad=True, name="affine.b")

    @property
    def weights(self) -> np.ndarray:
        return self.W.data.T

    @property
    def bias(self) -> np.ndarray:
        return self.b.data

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]

    def forward(self, x: Tensor) -> Tensor:
        _check_width(x.shape, self.in_dim, "affine")
        y = ad.add(ad.matrix_multiply(x, self.W), self.b)
        return ad.relu(y) if self.activation == "relu" else y

    def predict(self, x: np.ndarray) -> np.ndarray:
        _check_width(x.shape, self.in_dim, "affine")
        y = x @ self.W.data + self.b.data
        return np.maximum(y, 0.0) if self.activation == "relu" else y

    @property
    def output_dim(self) -> int:
        return self.out_dim


class UrbfLayer:
    """Each input dimension d is expanded by K one-dimensional Gaussians.

    Output column ``d*K + k`` is ``G(x_d - c[d, k], sigma[d, k])``.  Centers
    start equidistant over ``init_range`` and spreads at one center spacing.
    Parameters are kept flat (length D*K, d-major) so the layer can be written
    with bias-style broadcasting only.
    """

    def __init__(
        self,
        input_dim: int,
        kernels_per_input: int,
        init_range: tuple[float, float] = (-5.0, 5.0),
        spreads_learnable: bool = True,
    ):
        lo, hi = init_range
        row = init_urbf_centers(lo, hi, kernels_per_input)
        self.input_dim = input_dim
        self.kernels_per_input = kernels_per_input
        self.init_range = (float(lo), float(hi))
        self.spreads_learnable = spreads_learnable
        spacing = (hi - lo) / (kernels_per_input - 1)
        self.c = Tensor(np.tile(row, input_dim), requires_grad=True, name="urbf.c")
        self.sigma = Tensor(
            np.full(input_dim * kernels_per_input, max(spacing, SIGMA_MIN)),
            requires_grad=spreads_learnable,
            name="urbf.sigma",
        )
        # E[d, d*K + k] = 1 replicates x_d across its K kernels
        self._expand = np.kron(np.eye(input_dim), np.ones((1, kernels_per_input)))

    @property
    def output_dim(self) -> int:
        return self.input_dim * self.kernels_per_input

    @property
    def centers(self) -> np.ndarray:
        return self.c.data.reshape(self.input_dim, self.kernels_per_input)

    @property
    def spreads(self) -> np.ndarray:
        return self.sigma.data.reshape(self.input_dim, self.kernels_per_input)

    def parameters(self) -> list[Tensor]:
        return [self.c, self.sigma] if self.spreads_learnable else [self.c]

    def forward(self, x: Tensor) -> Tensor:
        _check_width(x.shape, self.input_dim, "urbf")
        diff = ad.subtract(ad.matrix_multiply(x, Tensor(self._expand)), self.c)
        denom = ad.multiply(2.0, ad.square(self.sigma))
        return ad.exponential(ad.negate(ad.divide(ad.square(diff), denom)))

    def predict(self, x: np.ndarray) -> np.ndarray:
        _check_width(x.shape, self.input_dim, "urbf")
        diff = np.repeat(x, self.kernels_per_input, axis=1) - self.c.data
        return np.exp(-(diff * diff) / (2.0 * self.sigma.data * self.sigma.data))

    def project(self) -> None:
        np.maximum(self.sigma.data, SIGMA_MIN, out=self.sigma.data)


def urbf_forward(layer: UrbfLayer, x: Tensor) -> Tensor:
    return layer.forward(x)


class MrbfLayer:
    """Classical RBF layer: out_j = sum_k w[j, k] G(||x - c_k||, sigma_k).

    Centers are drawn uniformly from ``init_range`` in every dimension;
    spreads start at ``(hi - lo) / K**(1/D)``, the side of a cell when K
    centers tile the input box.
    """

    def __init__(
        self,
        input_dim: int,
        num_kernels: int,
        out_dim: int,
        init_range: tuple[float, float] = (-5.0, 5.0),
        rng=None,
    ):
        rng = np.random.default_rng(rng)
        lo, hi = init_range
        self.input_dim = input_dim
        self.num_kernels = num_kernels
        self.out_dim = out_dim
        self.init_range = (float(lo), float(hi))
        centers = rng.uniform(lo, hi, size=(num_kernels, input_dim))
        # flat storage, d-major: c[d*K + k] is coordinate d of center k
        self.c = Tensor(centers.T.reshape(-1), requires_grad=True, name="mrbf.c")
        sigma0 = max((hi - lo) / num_kernels ** (1.0 / input_dim), SIGMA_MIN)
        self.sigma = Tensor(np.full(num_kernels, sigma0), requires_grad=True, name="mrbf.sigma")
        self.W = Tensor(_uniform_weights(rng, num_kernels, (num_kernels, out_dim)), requires_grad=True, name="mrbf.W")
        self._expand = np.kron(np.eye(input_dim), np.ones((1, num_kernels)))
        self._gather = np.tile(np.eye(num_kernels), (input_dim, 1))

    @property
    def output_dim(self) -> int:
        return self.out_dim

    @property
    def centers(self) -> np.ndarray:
        """Centers as a (K, D) matrix."""
        return self.c.data.reshape(self.input_dim, self.num_kernels).T

    @property
    def weights(self) -> np.ndarray:
        """Output weights as a (J, K) matrix."""
        return self.W.data.T

    def parameters(self) -> list[Tensor]:
        return [self.c, self.sigma, self.W]

    def forward(self, x: Tensor) -> Tensor:
        _check_width(x.shape, self.input_dim, "mrbf")
        diff = ad.subtract(ad.matrix_multiply(x, Tensor(self._expand)), self.c)
        dist2 = ad.matrix_multiply(ad.square(diff), Tensor(self._gather))
        denom = ad.multiply(2.0, ad.square(self.sigma))
        z = ad.exponential(ad.negate(ad.divide(dist2, denom)))
        return ad.matrix_multiply(z, self.W)

    def predict(self, x: np.ndarray) -> np.ndarray:
        _check_width(x.shape, self.input_dim, "mrbf")
        diff = np.repeat(x, self.num_kernels, axis=1) - self.c.data
        dist2 = (diff * diff) @ self._gather
        z = np.exp(-dist2 / (2.0 * self.sigma.data * self.sigma.data))
        return z @ self.W.data

    def project(self) -> None:
        np.maximum(self.sigma.data, SIGMA_MIN, out=self.sigma.data)


def mrbf_forward(layer: MrbfLayer, x: Tensor) -> Tensor:
    return layer.forward(x)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network description.

    ``width`` means output features for ``affine``, kernels per input (NNPI)
    for ``urbf`` and number of kernels for ``mrbf``; an M-RBF layer emits as
    many outputs as it has kernels.
    """

    kind: str
    width: int
    activation: str = "none"
    init_range: tuple[float, float] = (-5.0, 5.0)
    learn_spreads: bool = True


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.kind not in LAYER_KINDS:
                raise ValueError(f"layer {i}: unknown kind {layer.kind!r}")
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.width < 1:
                raise ValueError(f"layer {i}: width must be positive")
            if layer.kind in ("urbf", "mrbf"):
                if layer.activation != "none":
                    raise ValueError(f"layer {i}: no activation may follow an RBF layer")
                if i + 1 >= len(self.layers) or self.layers[i + 1].kind != "affine":
                    raise ValueError(f"layer {i}: an RBF layer must feed an affine layer")
                lo, hi = layer.init_range
                if not lo < hi:
                    raise ValueError(f"layer {i}: degenerate init range {layer.init_range}")
            if layer.kind == "urbf" and layer.width < 2:
                raise ValueError(f"layer {i}: a U-RBF layer needs at least 2 kernels per input")

    @property
    def output_dim(self) -> int:
        return self.widths()[-1]

    def widths(self) -> list[int]:
        """Feature width after each layer, starting with the input."""
        dims = [self.input_dim]
        for layer in self.layers:
            dims.append(dims[-1] * layer.width if layer.kind == "urbf" else layer.width)
        return dims

    def describe(self) -> str:
        """Hidden layers in the style "2*20, 32, 64, 128" (head omitted)."""
        parts, dims = [], self.widths()
        for layer, dim in zip(self.layers[:-1], dims):
            if layer.kind == "urbf":
                parts.append(f"{dim}*{layer.width}")
            elif layer.kind == "mrbf":
                parts.append(f"mrbf{layer.width}")
            else:
                parts.append(str(layer.width))
        return ", ".join(parts)


def mlp_spec(input_dim: int, hidden: Sequence[int], output_dim: int = 1) -> NetworkSpec:
    layers = [LayerSpec("affine", h, "relu") for h in hidden]
    layers.append(LayerSpec("affine", output_dim, "none"))
    return NetworkSpec(input_dim, tuple(layers))


def urbf_spec(
    input_dim: int,
    nnpi: int,
    hidden: Sequence[int],
    output_dim: int = 1,
    init_range: tuple[float, float] = (-5.0, 5.0),
    learn_spreads: bool = True,
) -> NetworkSpec:
    """U-RBF expansion of the raw input followed by an MLP (regression rows)."""
    layers = [LayerSpec("urbf", nnpi, "none", tuple(init_range), learn_spreads)]
    layers += [LayerSpec("affine", h, "relu") for h in hidden]
    layers.append(LayerSpec("affine", output_dim, "none"))
    return NetworkSpec(input_dim, tuple(layers))


def mrbf_spec(
    input_dim: int,
    hidden: Sequence[int],
    output_dim: int = 1,
    init_range: tuple[float, float] = (-5.0, 5.0),
) -> NetworkSpec:
    """First hidden layer is an M-RBF layer, the rest are affine."""
    if not hidden:
        raise ValueError("an M-RBF network needs at least one hidden width")
    layers = [LayerSpec("mrbf", hidden[0], "none", tuple(init_range))]
    layers += [LayerSpec("affine", h, "relu") for h in hidden[1:]]
    layers.append(LayerSpec("affine", output_dim, "none"))
    return NetworkSpec(input_dim, tuple(layers))


def q_network_spec(
    kind: str,
    input_dim: int,
    latent: int,
    n_actions: int = 4,
    nnpi: int = 20,
    init_range: tuple[float, float] = (0.0, 8.0),
    outer: int = 128,
    learn_spreads: bool = True,
) -> NetworkSpec:
    """Q-network for the maze task.

    mlp:  outer -> latent -> outer -> actions, ReLU after every hidden layer.
    mrbf: the latent affine layer is replaced by an M-RBF layer of ``latent`` kernels.
    urbf: outer -> latent, then a U-RBF layer on the latent, then outer -> actions.
    """
    head = [LayerSpec("affine", outer, "relu"), LayerSpec("affine", n_actions, "none")]
    first = LayerSpec("affine", outer, "relu")
    if kind == "mlp":
        layers = [first, LayerSpec("affine", latent, "relu"), *head]
    elif kind == "mrbf":
        layers = [first, LayerSpec("mrbf", latent, "none", tuple(init_range)), *head]
    elif kind == "urbf":
        layers = [
            first,
            LayerSpec("affine", latent, "relu"),
            LayerSpec("urbf", nnpi, "none", tuple(init_range), learn_spreads),
            *head,
        ]
    else:
        raise ValueError(f"unknown architecture kind {kind!r}")
    return NetworkSpec(input_dim, tuple(layers))


class Network:
    """Layers built from a :class:`NetworkSpec` and chained in order."""

    def __init__(self, spec: NetworkSpec, rng=None):
        rng = np.random.default_rng(rng)
        self.spec = spec
        self.layers: list = []
        dim = spec.input_dim
        for ls in spec.layers:
            if ls.kind == "affine":
                layer = AffineLayer(dim, ls.width, ls.activation, rng)
            elif ls.kind == "urbf":
                layer = UrbfLayer(dim, ls.width, ls.init_range, ls.learn_spreads)
            else:
                layer = MrbfLayer(dim, ls.width, ls.width, ls.init_range, rng)
            self.layers.append(layer)
            dim = layer.output_dim

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def param_count(self) -> int:
        return int(np.sum([p.data.size for p in self.parameters()]))

    def forward(self, x) -> Tensor:
        h = ad.as_tensor(x)
        for layer in self.layers:
            h = layer.forward(h)
        return h

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        if h.ndim == 1:
            h = h[None, :]
        for layer in self.layers:
            h = layer.predict(h)
        return h

    def project(self) -> None:
        """Clamp every RBF spread to ``SIGMA_MIN``."""
        for layer in self.layers:
            if hasattr(layer, "project"):
                layer.project()

    def spreads(self) -> list[np.ndarray]:
        return [layer.sigma.data for layer in self.layers if hasattr(layer, "sigma")]

    def state(self) -> list[np.ndarray]:
        """Copies of every parameter array, including frozen spreads."""
        return [t.data.copy() for t in self._all_tensors()]

    def load_state(self, arrays: Sequence[np.ndarray]) -> None:
        tensors = self._all_tensors()
        if len(arrays) != len(tensors):
            raise ValueError("state does not match this network")
        for t, a in zip(tensors, arrays):
            t.data[...] = a

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def _all_tensors(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out += layer.parameters()
            if isinstance(layer, UrbfLayer) and not layer.spreads_learnable:
                out.append(layer.sigma)
        return out


def network_forward(net: Network, x) -> Tensor:
    return net.forward(x)


def count_parameters(spec: NetworkSpec) -> int:
    """Trainable parameter count of ``spec`` without building it."""
    total = 0
    dim = spec.input_dim
    for ls in spec.layers:
        if ls.kind == "affine":
            total += dim * ls.width + ls.width
            dim = ls.width
        elif ls.kind == "urbf":
            n = dim * ls.width
            total += 2 * n if ls.learn_spreads else n
            dim = n
        else:
            total += dim * ls.width + ls.width + ls.width * ls.width
            dim = ls.width
    return total


# -- Universal-approximation sanity checks ---------------------------------


def kernel_map(centers: np.ndarray, spreads: np.ndarray, u) -> np.ndarray:
    """h(u) = (G(u - c_1, s_1), ..., G(u - c_K, s_K)) for scalar or vector u."""
    u = np.asarray(u, dtype=np.float64)[..., None]
    return np.exp(-((u - centers) ** 2) / (2.0 * spreads**2))


def check_injectivity(layer: UrbfLayer, samples: int = 1000, seed=0, pairs=None) -> bool:
    """True iff every sampled pair u != v maps to different kernel vectors.

    Each input dimension's unit is checked separately with ``samples`` pairs
    drawn uniformly from the layer's init range; ``pairs`` overrides the
    draw with explicit (u, v) values.
    """
    rng = np.random.default_rng(seed)
    lo, hi = layer.init_range
    for d in range(layer.input_dim):
        c, s = layer.centers[d], layer.spreads[d]
        if pairs is not None:
            u, v = np.asarray(pairs, dtype=np.float64).T
        else:
            u = rng.uniform(lo, hi, samples)
            v = rng.uniform(lo, hi, samples)
        keep = u != v
        diff = np.abs(kernel_map(c, s, u[keep]) - kernel_map(c, s, v[keep]))
        if not np.all(diff.max(axis=1) > 1e-12):
            return False
    return True


def check_interpolation(
    n_points: int,
    seed=0,
    budget: int = 5000,
    input_dim: int = 2,
    nnpi: int = 10,
    hidden: int = 64,
    lr: float = 1e-2,
    targets=None,
    tol: float = 0.0,
) -> float:
    """Fit a U-RBF + one-hidden-layer network to ``n_points`` random points.

    Points are distinct draws from [-5, 5]^D with targets uniform in [-1, 1]
    (or the given ``targets``).  Trains full-batch with Adam for at most
    ``budget`` epochs, stopping early once the MSE is at or below ``tol``,
    and returns the final training MSE.
    """
    from .optim import Adam

    if n_points > 20:
        raise ValueError("interpolation check is limited to N <= 20 points")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-5.0, 5.0, size=(n_points, input_dim))
    y = rng.uniform(-1.0, 1.0, size=(n_points, 1)) if targets is None else np.asarray(targets, float).reshape(-1, 1)
    net = Network(urbf_spec(input_dim, nnpi, [hidden]), rng)
    opt = Adam(net.parameters(), lr=lr)
    xt, yt = Tensor(x), Tensor(y)
    mse = float(np.mean((net.predict(x) - y) ** 2))
    for _ in range(budget):
        if mse <= tol:
            break
        opt.zero_grad()
        loss = ad.mean(ad.square(ad.subtract(net.forward(xt), yt)))
        ad.backward(loss)
        opt.step()
        net.project()
        mse = float(np.mean((net.predict(x) - y) ** 2))
    return mse


def run_verify(seed: int = 0, pairs: int = 1000, n_points: int = 10, budget: int = 5000, fits_required: int = 4) -> dict:
    """Injectivity for K in {2, 5, 20} and interpolation of N points over 5 seeds."""
    injective = {
        k: check_injectivity(UrbfLayer(1, k, (-5.0, 5.0)), pairs, seed + k) for k in (2, 5, 20)
    }
    interp = {seed + i: check_interpolation(n_points, seed + i, budget, tol=1e-12) for i in range(5)}
    fits = int(np.sum([v < 1e-3 for v in interp.values()]))
    return {
        "injectivity": injective,
        "interpolation": interp,
        "fits": fits,
        "passed": all(injective.values()) and fits >= fits_required,
    }
