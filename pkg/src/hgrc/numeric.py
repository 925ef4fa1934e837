"""Dense float64 numerics shared by every layer.

Activations, softmax, Adam, inverted dropout, Glorot initialization, a
splittable deterministic RNG, and a central-difference gradient checker that
every hand-derived backward pass in this package is verified against.

All arrays are ``numpy.float64``.  Reductions are delegated to numpy/BLAS,
which is deterministic for a fixed platform and thread count; all randomness
flows through :class:`Rng`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, GradientCheckError, ShapeError

Array = np.ndarray


# --------------------------------------------------------------------- rng


class Rng:
    """Deterministic splittable random stream (Philox keyed by SeedSequence).

    The same seed always yields the same stream.  Child streams come from
    ``SeedSequence.spawn`` (key-splitting), never from shared mutable state,
    so siblings are independent and the whole tree is reproducible as long
    as splits happen in a fixed order.
    """

    def __init__(self, seed):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def split(self, n: int) -> list["Rng"]:
        """Derive ``n`` independent child streams."""
        return [Rng(s) for s in self._seq.spawn(n)]

    def random(self, size=None) -> Array:
        return self._gen.random(size)

    def uniform(self, low: float, high: float, size=None) -> Array:
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> Array:
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None) -> Array:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> Array:
        return self._gen.permutation(n)


# -------------------------------------------------------------- linear ops


def matmul(a: Array, b: Array) -> Array:
    """Matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    return a @ b


# ------------------------------------------------------------- activations


def relu(x: Array) -> Array:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_grad(x: Array) -> Array:
    # subgradient 0 at the kink
    return (np.asarray(x) > 0.0).astype(np.float64)


def sigmoid(x: Array) -> Array:
    """Logistic function, overflow-free for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    pos = 1.0 / (1.0 + np.exp(-np.clip(x, 0.0, None)))
    e = np.exp(np.clip(x, None, 0.0))
    neg = e / (1.0 + e)
    return np.where(x >= 0.0, pos, neg)


def sigmoid_grad(x: Array) -> Array:
    s = sigmoid(x)
    return s * (1.0 - s)


def tanh(x: Array) -> Array:
    return np.tanh(np.asarray(x, dtype=np.float64))


def tanh_grad(x: Array) -> Array:
    t = np.tanh(x)
    return 1.0 - t * t


_ACTIVATIONS = {
    "relu": (relu, relu_grad),
    "sigmoid": (sigmoid, sigmoid_grad),
    "tanh": (tanh, tanh_grad),
}


def activation(x: Array, kind: str) -> Array:
    """Elementwise activation by name (relu | sigmoid | tanh)."""
    try:
        fn, _ = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")
    return fn(x)


def activation_grad(x: Array, kind: str) -> Array:
    """Derivative of :func:`activation` evaluated at the pre-activation x."""
    try:
        _, grad = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")
    return grad(x)


def softmax(x: Array, axis: int = -1) -> Array:
    """Max-subtracted softmax along ``axis``; rows sum to 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] == 0:
        raise ShapeError("softmax: empty input")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


# -------------------------------------------------------------------- adam


@dataclass(frozen=True)
class AdamState:
    """Per-parameter Adam accumulator; ``step`` counts completed updates."""

    first_moment: Array
    second_moment: Array
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 0.00039

    @classmethod
    def zeros(cls, shape, learning_rate: float = 0.00039, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            first_moment=np.zeros(shape),
            second_moment=np.zeros(shape),
            step=0,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
            learning_rate=learning_rate,
        )


def adam_step(param: Array, grad: Array, state: AdamState) -> tuple[Array, AdamState]:
    """One bias-corrected Adam update; returns the new parameter and state."""
    if param.shape != grad.shape:
        raise ShapeError(f"adam_step: parameter {param.shape} vs gradient {grad.shape}")
    if param.shape != state.first_moment.shape:
        raise ShapeError(f"adam_step: parameter {param.shape} vs state {state.first_moment.shape}")
    t = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_param = param - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_param, replace(state, first_moment=m, second_moment=v, step=t)


# ------------------------------------------------------- dropout and init


def dropout_mask(shape, rate: float, rng: Rng) -> Array:
    """Inverted-dropout mask: entries are 0 or 1/(1-rate), expected value 1.

    Evaluation mode is a pass-through and never calls this; callers simply
    skip the mask.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def glorot_init(fan_in: int, fan_out: int, rng: Rng) -> Array:
    """Uniform Glorot matrix of shape (fan_in, fan_out) on +-sqrt(6/(fan_in+fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise ConfigError(f"glorot_init needs positive dims, got ({fan_in}, {fan_out})")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


# --------------------------------------------------------- gradient check


def finite_diff_check(loss_fn, params: dict[str, Array], analytic: dict[str, Array],
                      h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn(params) -> float`` must be pure and deterministic in the arrays
    of ``params`` (dropout and any other stochasticity disabled).  Every
    scalar entry of every array is perturbed by +-h in place and restored;
    the relative error per entry is |a - n| / max(|a|, |n|, 1e-8) and the
    maximum over all entries is returned.
    """
    if h <= 0.0:
        raise ConfigError(f"finite_diff_check: h must be positive, got {h}")
    worst = 0.0
    for name, p in params.items():
        g = analytic[name]
        if np.shape(g) != np.shape(p):
            raise ShapeError(f"gradient {name}: shape {np.shape(g)} vs parameter {np.shape(p)}")
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            loss_plus = float(loss_fn(params))
            p[idx] = orig - h
            loss_minus = float(loss_fn(params))
            p[idx] = orig
            if not (math.isfinite(loss_plus) and math.isfinite(loss_minus)):
                raise GradientCheckError(f"non-finite loss while perturbing {name}[{idx}]")
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            a = float(g[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
