"""
Dense neural-network substrate

float64 tensors, tanh MLP conditioners with hand-written reverse-mode
gradients, and the Adam optimizer. Everything here is a plain function over
explicit state; the flows build on it.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, InternalError, NumericError, TrainingError

logger = logging.getLogger(__name__)

DTYPE = np.float64


def as_tensor(values, width=None, name='input'):
    """
    Convert to a finite float64 batch of shape (n, width).

    A 1-D input is taken as a single row.
    """
    x = np.array(values, dtype=DTYPE, copy=True)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ConfigurationError(f'{name} must be a 2-D batch, got shape {x.shape}')
    if width is not None and x.shape[1] != width:
        raise ConfigurationError(f'{name} has width {x.shape[1]}, expected {width}')
    if not np.all(np.isfinite(x)):
        bad = int(np.argwhere(~np.isfinite(x))[0][0])
        raise NumericError(f'{name} contains non-finite values', sample_index=bad)
    return x


# ============================================
# MLP CONDITIONERS
# ============================================

@dataclass
class MlpParams:
    """Weights (n_in, n_out) and biases per layer; tanh hidden, identity output"""
    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError('MLP needs one bias per weight matrix')
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigurationError(f'MLP layer {i}: bias shape {b.shape} does not fit weight {w.shape}')
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ConfigurationError(f'MLP layer {i}: width {w.shape[0]} does not follow {self.weights[i - 1].shape[1]}')

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self):
        """Parameter arrays in optimizer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def zeros_like(cls, other):
        return cls([np.zeros_like(w) for w in other.weights], [np.zeros_like(b) for b in other.biases])


@dataclass
class MlpCache:
    """Activation record of one forward call"""
    params: MlpParams
    inputs: list
    shapes: tuple
    output_shape: tuple


def init_mlp(widths, rng, zero_last=True):
    """
    Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.

    With zero_last the output layer starts at zero, so a coupling layer
    built on this conditioner starts as the identity.
    """
    if len(widths) < 2 or min(widths) < 1:
        raise ConfigurationError(f'invalid MLP widths {widths}')
    weights, biases = [], []
    n_layers = len(widths) - 1
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        if zero_last and i == n_layers - 1:
            weights.append(np.zeros((n_in, n_out), dtype=DTYPE))
            biases.append(np.zeros(n_out, dtype=DTYPE))
            continue
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(rng.uniform(-bound, bound, size=n_out))
    return MlpParams(weights, biases)


def mlp_forward(params, x):
    """Return (y, cache); the cache is enough for an exact backward pass"""
    if x.ndim != 2 or x.shape[1] != params.widths[0]:
        raise ConfigurationError(f'MLP input shape {x.shape} does not match width {params.widths[0]}')
    inputs = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ w + b
        h = np.tanh(a) if i < last else a
    shapes = tuple(w.shape for w in params.weights)
    return h, MlpCache(params=params, inputs=inputs, shapes=shapes, output_shape=h.shape)


def mlp_backward(cache, dy):
    """Return (dx, grads) where grads is an MlpParams of parameter gradients"""
    params = cache.params
    if dy.shape != cache.output_shape or tuple(w.shape for w in params.weights) != cache.shapes:
        raise InternalError('MLP cache does not match this backward call')
    n = len(params.weights)
    d_weights = [None] * n
    d_biases = [None] * n
    g = dy
    for i in reversed(range(n)):
        d_weights[i] = cache.inputs[i].T @ g
        d_biases[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0:
            # inputs[i] is the tanh output of layer i-1
            g = g * (1.0 - cache.inputs[i] ** 2)
    return g, MlpParams(d_weights, d_biases)


# ============================================
# ADAM
# ============================================

@dataclass
class AdamState:
    """Bias-corrected Adam moments for a fixed list of parameter arrays"""
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(state, params, grads, batch_index=None):
    """
    Apply one Adam update in place and return (params, state).

    Raises TrainingError, tagged with batch_index, on a non-finite gradient;
    nothing is modified in that case.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise InternalError('Adam state, parameters and gradients differ in length')
    for i, (p, g, m) in enumerate(zip(params, grads, state.m)):
        if p.shape != g.shape or p.shape != m.shape:
            raise InternalError(f'Adam shape mismatch at parameter {i}: {p.shape} vs {g.shape}')
        if not np.all(np.isfinite(g)):
            raise TrainingError(f'non-finite gradient in parameter {i}', batch_index=batch_index)

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state
