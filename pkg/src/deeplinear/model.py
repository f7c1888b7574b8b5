"""Deep linear networks, their losses, risk and analytic gradients.

A network of depth ``L`` is a tuple of weight matrices ``W_1, ..., W_L`` with
``W_k`` of shape ``(d_k, d_{k-1})`` and ``d_L = 1``; its linear predictor is
``w_prod = (W_L ... W_1)^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInputError
from .linalg import as_matrix, frobenius_norm

__all__ = [
    "AssumptionCheck",
    "Dataset",
    "EXP_LOSS",
    "LOG_LOSS",
    "LossSpec",
    "NetworkParams",
    "check_assumption2",
    "custom_loss",
    "full_gradient",
    "get_loss",
    "grad_layer",
    "grad_linear",
    "init_balanced",
    "init_random",
    "init_zero_first_layer",
    "product",
    "risk",
    "risk_linear",
]

# slack on ||x_i|| <= 1 so that data written with 17 significant digits reloads
NORM_SLACK = 1e-12


@dataclass(frozen=True)
class NetworkParams:
    """Weight matrices ``(W_1, ..., W_L)``, input layer first."""

    layers: tuple[np.ndarray, ...]

    def __post_init__(self):
        layers = tuple(as_matrix(w).copy() for w in self.layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].shape[1] != layers[k - 1].shape[0]:
                raise ValueError(
                    f"layer {k + 1} has shape {layers[k].shape}, incompatible with "
                    f"layer {k} of shape {layers[k - 1].shape}"
                )
        if layers[-1].shape[0] != 1:
            raise ValueError("the last layer must have a single output row")
        for w in layers:
            w.setflags(write=False)
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.layers[0].shape[1],) + tuple(w.shape[0] for w in self.layers)

    def __getitem__(self, k: int) -> np.ndarray:
        """``W_k`` with the 1-based layer index used throughout."""
        if not 1 <= k <= self.depth:
            raise IndexError(f"layer index {k} outside 1..{self.depth}")
        return self.layers[k - 1]

    def fro_norms(self) -> np.ndarray:
        return np.array([frobenius_norm(w) for w in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.layers])

    @classmethod
    def from_flat(cls, theta: np.ndarray, dims: Sequence[int]) -> "NetworkParams":
        layers = []
        off = 0
        for k in range(1, len(dims)):
            size = dims[k] * dims[k - 1]
            layers.append(np.asarray(theta[off : off + size]).reshape(dims[k], dims[k - 1]))
            off += size
        if off != len(theta):
            raise ValueError(f"flat vector has {len(theta)} entries, dims need {off}")
        return cls(tuple(layers))

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "NetworkParams":
        return NetworkParams(tuple(fn(w) for w in self.layers))


def _exp_value(x):
    return np.exp(-np.asarray(x, dtype=np.float64))


def _exp_deriv(x):
    return -np.exp(-np.asarray(x, dtype=np.float64))


def _log_value(x):
    return np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def _log_deriv(x):
    x = np.asarray(x, dtype=np.float64)
    # -1 / (1 + e^x), evaluated without overflow on either side
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, -e / (1.0 + e), -1.0 / (1.0 + e))


@dataclass(frozen=True)
class LossSpec:
    """A strictly decreasing loss with its derivative.

    ``beta`` bounds the Lipschitz constant of the derivative and ``g`` bounds
    its magnitude; both are required by the gradient descent step schedule and
    absent for losses without global constants (the exponential loss).
    """

    kind: str
    value: Callable = field(repr=False)
    derivative: Callable = field(repr=False)
    beta: float | None = None
    g: float | None = None

    @property
    def code(self) -> int:
        """Integer tag understood by the compiled kernels (-1: custom)."""
        return {"exp": 0, "log": 1}.get(self.kind, -1)

    @property
    def smooth(self) -> bool:
        return self.beta is not None and self.g is not None

    def at_zero(self) -> float:
        return float(self.value(0.0))


EXP_LOSS = LossSpec("exp", _exp_value, _exp_deriv)
# l'' = e^x / (1+e^x)^2 <= 1/4 and |l'| < 1
LOG_LOSS = LossSpec("log", _log_value, _log_deriv, beta=0.25, g=1.0)

_ALIASES = {"exp": EXP_LOSS, "exponential": EXP_LOSS, "log": LOG_LOSS, "logistic": LOG_LOSS}


def get_loss(kind: str) -> LossSpec:
    try:
        return _ALIASES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}; expected one of {sorted(_ALIASES)}") from None


def custom_loss(
    value: Callable,
    derivative: Callable,
    beta: float | None = None,
    g: float | None = None,
    probe: np.ndarray | None = None,
) -> LossSpec:
    """Wrap a user-supplied loss after probing its declared properties."""
    xs = np.linspace(-20.0, 20.0, 2001) if probe is None else np.asarray(probe, dtype=float)
    d = np.asarray(derivative(xs), dtype=float)
    if not np.all(d < 0):
        raise ValueError("loss derivative must be strictly negative on the probe grid")
    if g is not None and np.max(np.abs(d)) > g * (1 + 1e-12):
        raise ValueError("declared bound g is smaller than |l'| on the probe grid")
    if beta is not None:
        slopes = np.abs(np.diff(d)) / np.diff(xs)
        if np.max(slopes) > beta * (1 + 1e-9):
            raise ValueError("declared smoothness beta is violated on the probe grid")
    return LossSpec("custom", value, derivative, beta=beta, g=g)


@dataclass(frozen=True)
class Dataset:
    """Points ``x`` of shape ``(n, d)`` with labels ``y`` in ``{-1, +1}``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64).ravel()
        if x.ndim == 1:
            x = x.reshape(-1, 1) if y.size > 1 else x.reshape(1, -1)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("need at least one data point")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} points but {y.shape[0]} labels")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset has non-finite values")
        bad = np.flatnonzero((y != 1.0) & (y != -1.0))
        if bad.size:
            raise ValueError(f"label at row {bad[0]} is {y[bad[0]]}, expected -1 or +1")
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms > 1.0 + NORM_SLACK):
            i = int(np.argmax(norms))
            raise ValueError(f"point {i} has norm {norms[i]:.6g} > 1")
        if np.any(norms == 0.0):
            raise ValueError(f"point {int(np.argmin(norms))} is the zero vector")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def z(self) -> np.ndarray:
        """Signed points ``y_i x_i``."""
        return self.y[:, None] * self.x


def product(w: NetworkParams) -> np.ndarray:
    """``w_prod = (W_L ... W_1)^T`` as a vector of length ``d_0``."""
    p = w.layers[0]
    for layer in w.layers[1:]:
        p = layer @ p
    return p.ravel().copy()


def risk_linear(w: np.ndarray, data: Dataset, loss: LossSpec) -> float:
    margins = data.z @ np.asarray(w, dtype=np.float64)
    return float(np.mean(loss.value(margins)))


def risk(w: NetworkParams, data: Dataset, loss: LossSpec) -> float:
    return risk_linear(product(w), data, loss)


def grad_linear(w: np.ndarray, data: Dataset, loss: LossSpec) -> np.ndarray:
    z = data.z
    coef = loss.derivative(z @ np.asarray(w, dtype=np.float64))
    return coef @ z / data.n


def _prefix_suffix(w: NetworkParams):
    # prefix[k] = W_k ... W_1 (prefix[0] = I), suffix[k] = W_L ... W_{k+1} (suffix[L] = [[1]])
    L = w.depth
    prefix = [np.eye(w.dims[0])]
    for layer in w.layers:
        prefix.append(layer @ prefix[-1])
    suffix = [None] * (L + 1)
    suffix[L] = np.ones((1, 1))
    for k in range(L - 1, -1, -1):
        suffix[k] = suffix[k + 1] @ w.layers[k]
    return prefix, suffix


def grad_layer(w: NetworkParams, k: int, data: Dataset, loss: LossSpec) -> np.ndarray:
    """``dR/dW_k = W_{k+1}^T ... W_L^T grad(w_prod)^T W_1^T ... W_{k-1}^T``."""
    if not 1 <= k <= w.depth:
        raise IndexError(f"layer index {k} outside 1..{w.depth}")
    prefix, suffix = _prefix_suffix(w)
    g = grad_linear(prefix[-1].ravel(), data, loss)
    return np.outer(suffix[k].ravel(), prefix[k - 1] @ g)


def full_gradient(w: NetworkParams, data: Dataset, loss: LossSpec) -> tuple[NetworkParams, float]:
    """All layer gradients and their total squared norm ``sum_k ||dR/dW_k||_F^2``."""
    prefix, suffix = _prefix_suffix(w)
    g = grad_linear(prefix[-1].ravel(), data, loss)
    grads = [np.outer(suffix[k].ravel(), prefix[k - 1] @ g) for k in range(1, w.depth + 1)]
    sq = float(sum(np.sum(gk * gk) for gk in grads))
    return NetworkParams(tuple(grads)), sq


def _check_dims(dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 1 for d in dims) or dims[-1] != 1:
        raise ValueError(f"invalid dims {dims}: need d_0..d_L >= 1 with d_L = 1")
    return dims


def init_random(dims: Sequence[int], rng: np.random.Generator, scale: float = 1.0) -> NetworkParams:
    """Gaussian layers, each rescaled to Frobenius norm ``scale``."""
    dims = _check_dims(dims)
    layers = []
    for k in range(1, len(dims)):
        a = rng.standard_normal((dims[k], dims[k - 1]))
        layers.append(scale * a / frobenius_norm(a))
    return NetworkParams(tuple(layers))


def init_zero_first_layer(
    dims: Sequence[int], rng: np.random.Generator, scale: float = 1.0
) -> NetworkParams:
    """``W_1 = 0`` and random upper layers with a nonzero product.

    The risk then equals ``l(0)`` while ``dR/dW_1`` is nonzero on separable
    data, so the initialization is never a critical point.
    """
    dims = _check_dims(dims)
    while True:
        upper = init_random(dims[1:], rng, scale) if len(dims) > 2 else None
        if upper is None:
            break
        top = upper.layers[0]
        for layer in upper.layers[1:]:
            top = layer @ top
        if np.any(top != 0.0):
            break
    first = np.zeros((dims[1], dims[0]))
    return NetworkParams((first,) + (upper.layers if upper is not None else ()))


def init_balanced(dims: Sequence[int], scale: float, rng: np.random.Generator) -> NetworkParams:
    """Rank-1 layers ``W_k = s u_k u_{k-1}^T`` sharing singular factors.

    Each adjacent pair satisfies ``W_k W_k^T = W_{k+1}^T W_{k+1}`` exactly, so
    the initialization constant D vanishes and every layer has Frobenius norm
    ``scale``.
    """
    dims = _check_dims(dims)
    if scale <= 0:
        raise ValueError("scale must be positive")
    units = []
    for d in dims[:-1]:
        v = rng.standard_normal(d)
        units.append(v / np.linalg.norm(v))
    units.append(np.ones(1))
    layers = tuple(scale * np.outer(units[k], units[k - 1]) for k in range(1, len(dims)))
    return NetworkParams(layers)


@dataclass(frozen=True)
class AssumptionCheck:
    passed: bool
    reason: str = ""
    risk: float = math.nan
    grad_sq: float = math.nan

    def __bool__(self) -> bool:
        return self.passed


def check_assumption2(w0: NetworkParams, data: Dataset, loss: LossSpec) -> AssumptionCheck:
    """Initialization must not be critical and must not beat ``l(0)`` from above."""
    r0 = risk(w0, data, loss)
    _, gsq = full_gradient(w0, data, loss)
    l0 = loss.at_zero()
    if not np.isfinite(r0):
        return AssumptionCheck(False, "initial risk is not finite", r0, gsq)
    if gsq == 0.0:
        return AssumptionCheck(False, "initialization is a critical point (zero gradient)", r0, gsq)
    if r0 > l0 + 1e-12:
        return AssumptionCheck(False, f"initial risk {r0:.6g} exceeds l(0) = {l0:.6g}", r0, gsq)
    return AssumptionCheck(True, "", r0, gsq)


def orient_init(w0: NetworkParams, data: Dataset, loss: LossSpec) -> NetworkParams:
    """Negate ``W_L`` when that lowers the initial risk.

    Flipping the last layer negates the predictor but leaves every layer
    norm and every ``W_{k+1}^T W_{k+1} - W_k W_k^T`` unchanged, so it keeps a
    small random initialization's constants while making ``R(W(0)) <= l(0)``
    hold whenever either sign does.
    """
    flipped = NetworkParams(w0.layers[:-1] + (-w0.layers[-1],))
    if risk(flipped, data, loss) < risk(w0, data, loss):
        return flipped
    return w0


def require_nonzero(m: np.ndarray, what: str) -> None:
    if not np.any(m):
        raise DegenerateInputError(f"{what} is zero")
