"""
Invertible flows over R^D

Every layer exposes the same four passes:

    forward(x)                     -> (z, logdet, cache)
    inverse(z)                     -> (x, cache)
    backward(cache, dz, dlogdet)   -> (dx, grads)     reverse mode through forward
    inverse_backward(cache, dx)    -> (dz, grads)     reverse mode through inverse

grads is a list aligned with layer.parameters(). FlowModel chains them and
keeps the per-layer log-determinants summed. The latent prior is N(0, I_D).
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .exceptions import ConfigurationError, FormatError, NumericError
from .nn_core import DTYPE, MlpParams, as_tensor, init_mlp, mlp_backward, mlp_forward

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


def standard_normal_logpdf(z):
    """Row-wise log N(z; 0, I)"""
    return -0.5 * np.sum(z * z, axis=1) - 0.5 * z.shape[1] * LOG_2PI


# ============================================
# LAYERS
# ============================================

class ActNormLayer:
    """
    Per-dimension affine map z = x * exp(log_scale) + bias.

    Starts as the identity; initialize() sets it from a batch so the output
    has zero mean and unit variance per dimension.
    """
    kind = 'actnorm'

    def __init__(self, dim, initialized=False):
        self.dim = dim
        self.log_scale = np.zeros(dim, dtype=DTYPE)
        self.bias = np.zeros(dim, dtype=DTYPE)
        self.initialized = initialized

    @property
    def scale(self):
        return np.exp(self.log_scale)

    def parameters(self):
        return [self.log_scale, self.bias]

    def describe(self):
        return {'type': self.kind, 'dim': self.dim, 'initialized': self.initialized}

    def initialize(self, x):
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        # constant columns keep unit scale
        std = np.where(std > 1e-12, std, 1.0)
        self.log_scale[...] = -np.log(std)
        self.bias[...] = -mean / std
        self.initialized = True
        logger.debug('actnorm initialized from %d rows', len(x))

    def forward(self, x):
        scale = self.scale
        z = x * scale + self.bias
        logdet = np.full(len(x), self.log_scale.sum())
        return z, logdet, (x, scale)

    def inverse(self, z):
        scale = self.scale
        x = (z - self.bias) / scale
        return x, (x, scale)

    def backward(self, cache, dz, dlogdet):
        x, scale = cache
        d_log_scale = np.sum(dz * x * scale, axis=0) + dlogdet.sum()
        return dz * scale, [d_log_scale, dz.sum(axis=0)]

    def inverse_backward(self, cache, dx):
        x, scale = cache
        dz = dx / scale
        return dz, [-np.sum(dx * x, axis=0), -dz.sum(axis=0)]


class InvLinearLayer:
    """
    Dense invertible map z = x @ W with W = P L U.

    P is a fixed permutation, L unit lower triangular and U upper triangular
    with diagonal sign * exp(log_s); sign and P are frozen at creation.
    Starts as W = P.
    """
    kind = 'invlinear'

    def __init__(self, dim, perm=None, sign=None):
        self.dim = dim
        self.perm = np.arange(dim) if perm is None else np.asarray(perm, dtype=int)
        self.sign = np.ones(dim, dtype=DTYPE) if sign is None else np.asarray(sign, dtype=DTYPE)
        if sorted(self.perm.tolist()) != list(range(dim)):
            raise ConfigurationError(f'invalid permutation {self.perm.tolist()}')
        self.lower = np.zeros((dim, dim), dtype=DTYPE)
        self.upper = np.zeros((dim, dim), dtype=DTYPE)
        self.log_s = np.zeros(dim, dtype=DTYPE)
        self._lower_mask = np.tril(np.ones((dim, dim)), -1)
        self._upper_mask = np.triu(np.ones((dim, dim)), 1)
        self._p = np.eye(dim)[self.perm]

    def parameters(self):
        return [self.lower, self.upper, self.log_s]

    def describe(self):
        return {
            'type': self.kind,
            'dim': self.dim,
            'perm': [int(i) for i in self.perm],
            'sign': [int(s) for s in self.sign],
        }

    def factors(self):
        lower = self.lower * self._lower_mask + np.eye(self.dim)
        upper = self.upper * self._upper_mask + np.diag(self.sign * np.exp(self.log_s))
        return lower, upper

    def weight(self):
        lower, upper = self.factors()
        return self._p @ lower @ upper

    def inverse_weight(self):
        lower, upper = self.factors()
        l_inv_pt = linalg.solve_triangular(lower, self._p.T, lower=True, unit_diagonal=True)
        return linalg.solve_triangular(upper, l_inv_pt, lower=False)

    def _param_grads(self, d_weight, dlogdet_total):
        lower, upper = self.factors()
        d_lower = (self._p.T @ d_weight @ upper.T) * self._lower_mask
        d_upper_full = (self._p @ lower).T @ d_weight
        d_log_s = np.diag(d_upper_full) * self.sign * np.exp(self.log_s) + dlogdet_total
        return [d_lower, d_upper_full * self._upper_mask, d_log_s]

    def forward(self, x):
        w = self.weight()
        logdet = np.full(len(x), self.log_s.sum())
        return x @ w, logdet, (x, w)

    def inverse(self, z):
        w_inv = self.inverse_weight()
        return z @ w_inv, (z, w_inv)

    def backward(self, cache, dz, dlogdet):
        x, w = cache
        return dz @ w.T, self._param_grads(x.T @ dz, dlogdet.sum())

    def inverse_backward(self, cache, dx):
        z, w_inv = cache
        d_w_inv = z.T @ dx
        d_weight = -w_inv.T @ d_w_inv @ w_inv.T
        return dx @ w_inv.T, self._param_grads(d_weight, 0.0)


class CouplingLayer:
    """
    Affine coupling: coordinates with mask 1 pass through and condition an
    MLP that outputs (log-scale s, shift t) for the mask-0 coordinates.

    s is soft-clamped as c * tanh(s / c).
    """
    kind = 'coupling'

    def __init__(self, mask, hidden=32, rng=None, clamp=5.0, conditioner=None):
        self.mask = np.asarray(mask, dtype=int)
        if self.mask.ndim != 1 or set(self.mask.tolist()) != {0, 1}:
            raise ConfigurationError(f'coupling mask needs both 0 and 1 entries, got {self.mask.tolist()}')
        self.dim = len(self.mask)
        self.cond_idx = np.flatnonzero(self.mask == 1)
        self.trans_idx = np.flatnonzero(self.mask == 0)
        self.clamp = float(clamp)
        if conditioner is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            widths = [len(self.cond_idx), hidden, hidden, 2 * len(self.trans_idx)]
            conditioner = init_mlp(widths, rng, zero_last=True)
        self.net = conditioner

    def parameters(self):
        return self.net.arrays()

    def describe(self):
        return {
            'type': self.kind,
            'mask': [int(b) for b in self.mask],
            'widths': [int(w) for w in self.net.widths],
            'clamp': self.clamp,
        }

    def _scale_shift(self, h):
        out, net_cache = mlp_forward(self.net, h)
        n = len(self.trans_idx)
        squashed = np.tanh(out[:, :n] / self.clamp)
        return self.clamp * squashed, out[:, n:], squashed, net_cache

    def _net_backward(self, net_cache, ds, dt, squashed):
        d_raw = ds * (1.0 - squashed ** 2)
        dh, grads = mlp_backward(net_cache, np.concatenate([d_raw, dt], axis=1))
        return dh, grads.arrays()

    def forward(self, x):
        s, t, squashed, net_cache = self._scale_shift(x[:, self.cond_idx])
        x_t = x[:, self.trans_idx]
        exp_s = np.exp(s)
        z = x.copy()
        z[:, self.trans_idx] = x_t * exp_s + t
        return z, s.sum(axis=1), (x_t, exp_s, squashed, net_cache)

    def inverse(self, z):
        s, t, squashed, net_cache = self._scale_shift(z[:, self.cond_idx])
        exp_neg_s = np.exp(-s)
        x_t = (z[:, self.trans_idx] - t) * exp_neg_s
        x = z.copy()
        x[:, self.trans_idx] = x_t
        return x, (x_t, exp_neg_s, squashed, net_cache)

    def backward(self, cache, dz, dlogdet):
        x_t, exp_s, squashed, net_cache = cache
        dz_t = dz[:, self.trans_idx]
        ds = dz_t * x_t * exp_s + dlogdet[:, None]
        dh, grads = self._net_backward(net_cache, ds, dz_t, squashed)
        dx = np.empty_like(dz)
        dx[:, self.trans_idx] = dz_t * exp_s
        dx[:, self.cond_idx] = dz[:, self.cond_idx] + dh
        return dx, grads

    def inverse_backward(self, cache, dx):
        x_t, exp_neg_s, squashed, net_cache = cache
        dx_t = dx[:, self.trans_idx]
        dh, grads = self._net_backward(net_cache, -dx_t * x_t, -dx_t * exp_neg_s, squashed)
        dz = np.empty_like(dx)
        dz[:, self.trans_idx] = dx_t * exp_neg_s
        dz[:, self.cond_idx] = dx[:, self.cond_idx] + dh
        return dz, grads


LAYER_TYPES = {cls.kind: cls for cls in (ActNormLayer, InvLinearLayer, CouplingLayer)}


def layer_from_descriptor(desc):
    """Rebuild a layer with zeroed parameters from its describe() output"""
    kind = desc.get('type')
    if kind == ActNormLayer.kind:
        return ActNormLayer(desc['dim'], initialized=desc['initialized'])
    if kind == InvLinearLayer.kind:
        return InvLinearLayer(desc['dim'], perm=desc['perm'], sign=desc['sign'])
    if kind == CouplingLayer.kind:
        widths = desc['widths']
        net = MlpParams(
            [np.zeros((a, b), dtype=DTYPE) for a, b in zip(widths[:-1], widths[1:])],
            [np.zeros(b, dtype=DTYPE) for b in widths[1:]],
        )
        return CouplingLayer(desc['mask'], clamp=desc['clamp'], conditioner=net)
    raise FormatError(f'unknown layer type {kind!r}')


# ============================================
# MODEL
# ============================================

class FlowModel:
    """Ordered stack of invertible layers over R^D with a N(0, I_D) prior"""

    def __init__(self, dim, layers):
        if dim < 1:
            raise ConfigurationError(f'flow dimension must be positive, got {dim}')
        for i, layer in enumerate(layers):
            if layer.dim != dim:
                raise ConfigurationError(f'layer {i} ({layer.kind}) has dimension {layer.dim}, flow has {dim}')
        self.dim = dim
        self.layers = list(layers)

    def __repr__(self):
        kinds = ', '.join(layer.kind for layer in self.layers)
        return f'FlowModel(dim={self.dim}, layers=[{kinds}])'

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    @property
    def initialized(self):
        return all(layer.initialized for layer in self.layers if isinstance(layer, ActNormLayer))

    def initialize(self, x):
        """Data-dependent ActNorm init, layer by layer on the running activations"""
        h = x
        for layer in self.layers:
            if isinstance(layer, ActNormLayer) and not layer.initialized:
                layer.initialize(h)
            h = layer.forward(h)[0]

    def forward(self, x, check=True):
        h = x
        logdet = np.zeros(len(x))
        caches = []
        for i, layer in enumerate(self.layers):
            h, layer_logdet, cache = layer.forward(h)
            if check:
                _check_finite(h, layer_logdet, i, layer)
            logdet = logdet + layer_logdet
            caches.append(cache)
        return h, logdet, caches

    def inverse(self, z, check=True):
        h = z
        caches = [None] * len(self.layers)
        for i in reversed(range(len(self.layers))):
            h, caches[i] = self.layers[i].inverse(h)
            if check:
                _check_finite(h, None, i, self.layers[i])
        return h, caches

    def backward(self, caches, dz, dlogdet):
        """Reverse mode through forward(); grads aligned with parameters()"""
        grads = [None] * len(self.layers)
        g = dz
        for i in reversed(range(len(self.layers))):
            g, grads[i] = self.layers[i].backward(caches[i], g, dlogdet)
        return g, [a for layer_grads in grads for a in layer_grads]

    def inverse_backward(self, caches, dx):
        """Reverse mode through inverse(); grads aligned with parameters()"""
        grads = [None] * len(self.layers)
        g = dx
        for i in range(len(self.layers)):
            g, grads[i] = self.layers[i].inverse_backward(caches[i], g)
        return g, [a for layer_grads in grads for a in layer_grads]


def _check_finite(h, logdet, index, layer):
    bad = ~np.all(np.isfinite(h), axis=1)
    if logdet is not None:
        bad |= ~np.isfinite(logdet)
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise NumericError(f'non-finite output from layer {index} ({layer.kind})', layer_index=index, sample_index=row)


def alternating_mask(dim, parity):
    return (np.arange(dim) + parity) % 2


def build_flow(dim, blocks=8, hidden=32, seed=0, clamp=5.0, permute=True):
    """
    Glow-style stack: blocks x [ActNorm -> InvLinear -> Coupling].

    Couplings alternate mask parity. With dim == 1 there is nothing to
    couple, so each block is ActNorm -> InvLinear.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(blocks):
        layers.append(ActNormLayer(dim))
        perm = rng.permutation(dim) if permute else None
        layers.append(InvLinearLayer(dim, perm=perm))
        if dim > 1:
            layers.append(CouplingLayer(alternating_mask(dim, k % 2), hidden=hidden, rng=rng, clamp=clamp))
    return FlowModel(dim, layers)


def build_realnvp(dim, blocks=6, hidden=32, seed=0, clamp=5.0):
    """RealNVP-style stack of alternating-mask couplings (the manifold flow)"""
    rng = np.random.default_rng(seed)
    if dim == 1:
        return FlowModel(1, [ActNormLayer(1) for _ in range(blocks)])
    layers = [
        CouplingLayer(alternating_mask(dim, k % 2), hidden=hidden, rng=rng, clamp=clamp)
        for k in range(blocks)
    ]
    return FlowModel(dim, layers)


# ============================================
# OPERATIONS
# ============================================

def flow_forward(model, x):
    """z = f(x) and log|det Df(x)| per row"""
    z, logdet, _ = model.forward(as_tensor(x, model.dim))
    return z, logdet


def flow_inverse(model, z):
    x, _ = model.inverse(as_tensor(z, model.dim, name='latent'))
    return x


def log_prob(model, x):
    """log p_X(x) = log N(f(x); 0, I) + log|det Df(x)|"""
    z, logdet = flow_forward(model, x)
    return standard_normal_logpdf(z) + logdet


def sample(model, n, mode='full', d=None, seed=0, manifold_flow=None):
    """
    Draw n points.

    full:     x = f^-1(z), z ~ N(0, I_D)
    manifold: x = f^-1((u, 0)), u ~ N(0, I_d); with a manifold flow h,
              u = h^-1(u'), u' ~ N(0, I_d)
    """
    rng = np.random.default_rng(seed)
    if mode == 'full':
        z = rng.standard_normal((n, model.dim))
    elif mode == 'manifold':
        if d is None or not 1 <= d <= model.dim:
            raise ConfigurationError(f'manifold sampling needs 1 <= d <= {model.dim}, got {d}')
        u = rng.standard_normal((n, d))
        if manifold_flow is not None:
            if manifold_flow.dim != d:
                raise ConfigurationError(f'manifold flow has dimension {manifold_flow.dim}, expected {d}')
            u = manifold_flow.inverse(u)[0]
        z = np.zeros((n, model.dim))
        z[:, :d] = u
    else:
        raise ConfigurationError(f"unknown sampling mode {mode!r}; use 'full' or 'manifold'")
    return model.inverse(z)[0]


def backprop_logprob(model, x):
    """
    Gradients of sum(-log p_X(x)) for every parameter.

    Returns (grads aligned with model.parameters(), per-row NLL).
    """
    x = as_tensor(x, model.dim)
    z, logdet, caches = model.forward(x)
    nll = -(standard_normal_logpdf(z) + logdet)
    _, grads = model.backward(caches, z, -np.ones(len(x)))
    return grads, nll


# ============================================
# CHECKPOINTS
# ============================================

CHECKPOINT_MAGIC = b'MFLOWCKP'
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct('<IQQQ')


@dataclass
class Checkpoint:
    flow: FlowModel
    d: int
    manifold_flow: FlowModel = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, flow, d, manifold_flow=None, meta=None):
    """
    Magic, version, D, d, JSON layer descriptors, then every parameter
    array as little-endian float64 in parameters() order.
    """
    descriptor = {
        'flow': [layer.describe() for layer in flow.layers],
        'manifold_flow': [layer.describe() for layer in manifold_flow.layers] if manifold_flow else None,
        'meta': meta or {},
    }
    blob = json.dumps(descriptor, sort_keys=True, separators=(',', ':')).encode('utf-8')
    arrays = flow.parameters() + (manifold_flow.parameters() if manifold_flow else [])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_HEADER.pack(CHECKPOINT_VERSION, flow.dim, d, len(blob)))
        fh.write(blob)
        for array in arrays:
            fh.write(np.ascontiguousarray(array, dtype='<f8').tobytes())
    return path


def load_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise ConfigurationError(f'checkpoint not found: {path}') from exc
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f'{path}: not a flow checkpoint', offset=0)
    offset = len(CHECKPOINT_MAGIC)
    if len(data) < offset + _HEADER.size:
        raise FormatError(f'{path}: truncated header', offset=len(data))
    version, dim, d, blob_len = _HEADER.unpack_from(data, offset)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f'{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}', offset=offset)
    offset += _HEADER.size
    if len(data) < offset + blob_len:
        raise FormatError(f'{path}: truncated layer descriptors', offset=len(data))
    try:
        descriptor = json.loads(data[offset:offset + blob_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f'{path}: unreadable layer descriptors ({exc})', offset=offset) from exc
    offset += blob_len

    flow = FlowModel(dim, [layer_from_descriptor(desc) for desc in descriptor['flow']])
    manifold_flow = None
    if descriptor.get('manifold_flow'):
        manifold_flow = FlowModel(d, [layer_from_descriptor(desc) for desc in descriptor['manifold_flow']])
    arrays = flow.parameters() + (manifold_flow.parameters() if manifold_flow else [])

    expected = 8 * sum(a.size for a in arrays)
    if len(data) - offset != expected:
        raise FormatError(f'{path}: expected {expected} parameter bytes, found {len(data) - offset}', offset=offset)
    values = np.frombuffer(data, dtype='<f8', offset=offset)
    start = 0
    for array in arrays:
        array[...] = values[start:start + array.size].reshape(array.shape)
        start += array.size
    return Checkpoint(flow=flow, d=d, manifold_flow=manifold_flow, meta=descriptor.get('meta', {}))
