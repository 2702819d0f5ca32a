"""Float64 parameter tensors with manual backprop, Adam, and a finite-difference checker.

Everything downstream (embedding tables, the ranker and noise MLPs) is built
from ParameterTensor: a named dense array carrying its own gradient buffer and
Adam moment state. MLPs record taped activations on forward and replay them on
backward; tapes are invalidated as soon as any owning tensor is stepped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ParameterTensor",
    "Mlp",
    "MlpTape",
    "GradCheckReport",
    "NonFiniteGradientError",
    "StaleTapeError",
    "adam_step",
    "finite_diff_check",
    "xavier_init",
]


class NonFiniteGradientError(RuntimeError):
    """A gradient buffer contains NaN or infinity; the optimizer step was aborted."""


class StaleTapeError(RuntimeError):
    """A backward pass was attempted through a tape recorded before a parameter update."""


class ParameterTensor:
    """Named float64 array with gradient and Adam moment buffers.

    ``step_count`` counts optimizer steps applied to this tensor; tapes use the
    summed step counts of a module's tensors to detect staleness.
    """

    __slots__ = ("name", "values", "grad", "adam_m", "adam_v", "step_count")

    def __init__(self, name: str, shape: tuple[int, ...]):
        if not name:
            raise ValueError("parameter tensor needs a non-empty name")
        self.name = name
        self.values = np.zeros(shape, dtype=np.float64)
        self.grad = np.zeros(shape, dtype=np.float64)
        self.adam_m = np.zeros(shape, dtype=np.float64)
        self.adam_v = np.zeros(shape, dtype=np.float64)
        self.step_count = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:  # pragma: no cover
        return f"ParameterTensor({self.name!r}, shape={self.shape}, steps={self.step_count})"


def xavier_init(tensor: ParameterTensor, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
    """Fill ``tensor`` uniformly on [-b, b] with b = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"xavier_init needs fan_in, fan_out >= 1, got ({fan_in}, {fan_out})")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    tensor.values[...] = rng.uniform(-bound, bound, size=tensor.shape)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _relu_grad_from_pre(z: np.ndarray) -> np.ndarray:
    # subgradient 0 at z == 0
    return (z > 0.0).astype(np.float64)


_ACTIVATIONS = {
    "relu": (_relu, _relu_grad_from_pre),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


@dataclass
class MlpTape:
    """Activations recorded by one forward pass, replayed by backward."""

    x: np.ndarray
    z1: np.ndarray
    h: np.ndarray
    version: int


class Mlp:
    """One-hidden-layer perceptron with explicit forward/backward.

    Layout: y = W2 @ act(W1 @ x + b1) + b2, applied row-wise to a 2-D input
    batch. Parameter names are prefixed with the module name so checkpoints
    and diagnostics can address them (``<name>.w1`` etc).
    """

    def __init__(self, name: str, in_dim: int, hidden_dim: int, out_dim: int, activation: str = "relu"):
        if min(in_dim, hidden_dim, out_dim) < 1:
            raise ValueError("all Mlp dimensions must be >= 1")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; choose from {sorted(_ACTIVATIONS)}")
        self.name = name
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.activation = activation
        self.w1 = ParameterTensor(f"{name}.w1", (hidden_dim, in_dim))
        self.b1 = ParameterTensor(f"{name}.b1", (hidden_dim,))
        self.w2 = ParameterTensor(f"{name}.w2", (out_dim, hidden_dim))
        self.b2 = ParameterTensor(f"{name}.b2", (out_dim,))

    @property
    def params(self) -> list[ParameterTensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def init_params(self, rng: np.random.Generator) -> None:
        """Xavier-uniform weights, zero biases."""
        xavier_init(self.w1, self.in_dim, self.hidden_dim, rng)
        xavier_init(self.w2, self.hidden_dim, self.out_dim, rng)
        self.b1.values[...] = 0.0
        self.b2.values[...] = 0.0

    def _version(self) -> int:
        return sum(p.step_count for p in self.params)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, MlpTape]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"{self.name}: expected input of shape (n, {self.in_dim}), got {x.shape}"
            )
        act, _ = _ACTIVATIONS[self.activation]
        z1 = x @ self.w1.values.T + self.b1.values
        h = act(z1)
        y = h @ self.w2.values.T + self.b2.values
        return y, MlpTape(x=x, z1=z1, h=h, version=self._version())

    def backward(self, tape: MlpTape, output_grad: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients for d(loss)/d(output) and return d(loss)/d(input)."""
        if tape.version != self._version():
            raise StaleTapeError(
                f"{self.name}: tape recorded at version {tape.version}, "
                f"parameters now at {self._version()}"
            )
        output_grad = np.asarray(output_grad, dtype=np.float64)
        if output_grad.shape != (tape.x.shape[0], self.out_dim):
            raise ValueError(
                f"{self.name}: output_grad shape {output_grad.shape} does not match "
                f"({tape.x.shape[0]}, {self.out_dim})"
            )
        _, act_grad = _ACTIVATIONS[self.activation]
        self.w2.grad += output_grad.T @ tape.h
        self.b2.grad += output_grad.sum(axis=0)
        dh = output_grad @ self.w2.values
        dz1 = dh * act_grad(tape.z1)
        self.w1.grad += dz1.T @ tape.x
        self.b1.grad += dz1.sum(axis=0)
        return dz1 @ self.w1.values


def adam_step(
    params: list[ParameterTensor],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    l2: float = 0.0,
) -> None:
    """One Adam update over ``params`` with L2 coupled into the gradient.

    All gradient buffers are checked for finiteness before any tensor is
    touched, so a failed step leaves every parameter unchanged. Gradients are
    zeroed after a successful step.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(f"non-finite gradient in tensor {p.name!r}")
    for p in params:
        g = p.grad + l2 * p.values
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.values -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad[...] = 0.0


@dataclass
class GradCheckReport:
    """Result of comparing analytic gradients against central differences."""

    n_checked: int
    max_rel_err: float
    worst_tensor: str
    worst_index: tuple[int, ...]
    tol: float
    failures: list[tuple[str, tuple[int, ...], float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def finite_diff_check(
    loss_fn,
    params: list[ParameterTensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    n_coords: int = 200,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Check ``p.grad`` against central finite differences of ``loss_fn``.

    ``loss_fn()`` must return the scalar loss as a pure function of the current
    parameter values (any stochastic inputs frozen by the caller). The analytic
    gradients to verify must already sit in each tensor's ``grad`` buffer; this
    function only reads them and perturbs ``values`` in place, restoring them
    exactly. At least one coordinate per tensor is always checked so every
    parameter group is covered.

    Relative error uses an absolute floor of 1e-5 in the denominator so that
    coordinates with near-zero true gradient do not amplify rounding noise in
    the difference quotient.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    if not params:
        raise ValueError("finite_diff_check needs at least one tensor")
    rng = rng if rng is not None else np.random.default_rng(0)

    coords: list[tuple[int, int]] = []  # (tensor idx, flat idx)
    for ti, p in enumerate(params):
        coords.append((ti, int(rng.integers(0, p.size))))
    total = sum(p.size for p in params)
    sizes = np.array([p.size for p in params])
    offsets = np.cumsum(sizes) - sizes
    extra = max(0, n_coords - len(coords))
    for flat in rng.choice(total, size=min(extra, total), replace=False):
        ti = int(np.searchsorted(offsets, flat, side="right") - 1)
        coords.append((ti, int(flat - offsets[ti])))

    max_rel = 0.0
    worst = (params[0].name, (0,))
    failures: list[tuple[str, tuple[int, ...], float]] = []
    for ti, flat in coords:
        p = params[ti]
        idx = np.unravel_index(flat, p.shape)
        analytic = float(p.grad[idx])
        orig = float(p.values[idx])
        p.values[idx] = orig + h
        up = float(loss_fn())
        p.values[idx] = orig - h
        down = float(loss_fn())
        p.values[idx] = orig
        numeric = (up - down) / (2.0 * h)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)
        if rel > max_rel:
            max_rel = rel
            worst = (p.name, idx)
        if rel >= tol:
            failures.append((p.name, idx, rel))
    return GradCheckReport(
        n_checked=len(coords),
        max_rel_err=max_rel,
        worst_tensor=worst[0],
        worst_index=worst[1],
        tol=tol,
        failures=failures,
    )
