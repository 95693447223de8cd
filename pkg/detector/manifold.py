"""
Manifold learning with a normalizing flow

The first d latent coordinates u are the manifold chart, the remaining D-d
coordinates v are the normal directions. Projection zeroes v, the inverse
flow maps the projection back to data space, and the element-wise distance
between x and that reconstruction is the off-manifold penalty. The training
loss is the flow NLL plus lambda times that penalty, with gradients through
both the forward flow and the inverse flow of the reconstruction.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, NumericError, TrainingError
from .flow import (
    FlowModel, build_flow, build_realnvp, load_checkpoint, save_checkpoint,
    standard_normal_logpdf,
)
from .nn_core import AdamState, adam_step, as_tensor

logger = logging.getLogger(__name__)

PENALTY_KINDS = ('mse', 'huber')


# ============================================
# TYPES
# ============================================

@dataclass(frozen=True)
class LatentSplit:
    d: int
    D: int

    def __post_init__(self):
        if not 1 <= self.d <= self.D:
            raise ConfigurationError(f'latent split needs 1 <= d <= D, got d={self.d}, D={self.D}')

    @property
    def degenerate(self):
        return self.d == self.D


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty kind, Huber threshold delta and training weight lambda"""
    kind: str = 'huber'
    delta: float = 0.1
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ConfigurationError(f'unknown penalty kind {self.kind!r}; use one of {PENALTY_KINDS}')
        if self.kind == 'huber' and not self.delta > 0:
            raise ConfigurationError(f'Huber threshold must be positive, got {self.delta}')
        if not self.weight >= 0:
            raise ConfigurationError(f'penalty weight must be non-negative, got {self.weight}')

    def as_meta(self):
        return {'kind': self.kind, 'delta': self.delta, 'lambda': self.weight}


@dataclass
class ManifoldFlowModel:
    """Base flow f over R^D, its latent split, and an optional flow h over R^d"""
    flow: FlowModel
    split: LatentSplit
    manifold_flow: FlowModel = None

    def __post_init__(self):
        if self.flow.dim != self.split.D:
            raise ConfigurationError(f'flow dimension {self.flow.dim} does not match D={self.split.D}')
        if self.manifold_flow is not None and self.manifold_flow.dim != self.split.d:
            raise ConfigurationError(f'manifold flow dimension {self.manifold_flow.dim} does not match d={self.split.d}')

    def parameters(self):
        extra = self.manifold_flow.parameters() if self.manifold_flow is not None else []
        return self.flow.parameters() + extra

    @property
    def initialized(self):
        return self.flow.initialized and (self.manifold_flow is None or self.manifold_flow.initialized)

    def initialize(self, x):
        self.flow.initialize(x)
        if self.manifold_flow is not None:
            z = self.flow.forward(x)[0]
            self.manifold_flow.initialize(z[:, :self.split.d])


def build_model(config):
    """Fresh model for an ExperimentConfig; h gets its own seed stream"""
    split_ = LatentSplit(d=config.d, D=config.D)
    flow = build_flow(config.D, blocks=config.flow_blocks, hidden=config.flow_hidden,
                      seed=config.seed, clamp=config.flow_clamp)
    manifold_flow = None
    if config.manifold_flow_enabled:
        manifold_flow = build_realnvp(config.d, blocks=config.manifold_flow_blocks,
                                      hidden=config.flow_hidden, seed=config.seed + 1,
                                      clamp=config.flow_clamp)
    return ManifoldFlowModel(flow=flow, split=split_, manifold_flow=manifold_flow)


def save_model(path, model, spec, meta=None):
    meta = dict(meta or {})
    meta['penalty'] = spec.as_meta()
    return save_checkpoint(path, model.flow, model.split.d, manifold_flow=model.manifold_flow, meta=meta)


def load_model(path):
    """Return (ManifoldFlowModel, PenaltySpec, meta) from a checkpoint"""
    ckpt = load_checkpoint(path)
    penalty = ckpt.meta.get('penalty', {})
    spec = PenaltySpec(kind=penalty.get('kind', 'huber'), delta=penalty.get('delta', 0.1),
                       weight=penalty.get('lambda', 1.0))
    model = ManifoldFlowModel(flow=ckpt.flow, split=LatentSplit(d=ckpt.d, D=ckpt.flow.dim),
                              manifold_flow=ckpt.manifold_flow)
    return model, spec, ckpt.meta


# ============================================
# SPLIT, PROJECTION, RECONSTRUCTION
# ============================================

def split(z, latent_split):
    """(u, v): first d coordinates and the remaining D-d"""
    if z.shape[1] != latent_split.D:
        raise ConfigurationError(f'latent width {z.shape[1]} does not match D={latent_split.D}')
    return z[:, :latent_split.d].copy(), z[:, latent_split.d:].copy()


def project(z, latent_split):
    """(u, v) -> (u, 0)"""
    u, v = split(z, latent_split)
    return np.concatenate([u, np.zeros_like(v)], axis=1)


def reconstruct(model, x):
    """x~ = f^-1(proj(f(x)))"""
    x = as_tensor(x, model.split.D)
    if model.split.degenerate:
        return x
    z = model.flow.forward(x)[0]
    return model.flow.inverse(project(z, model.split))[0]


# ============================================
# PENALTIES
# ============================================

def huber_fn(e, delta):
    """
    H_delta(e) = e^2/2 for e < delta, delta * (e - delta/2) otherwise.

    Element-wise on non-negative e.
    """
    if not delta > 0:
        raise ConfigurationError(f'Huber threshold must be positive, got {delta}')
    e = np.asarray(e, dtype=float)
    if np.any(e < 0):
        raise ConfigurationError('Huber function takes non-negative errors')
    return np.where(e < delta, 0.5 * e * e, delta * (e - 0.5 * delta))


def elementwise_penalty(residual, spec):
    if spec.kind == 'mse':
        return residual * residual
    return huber_fn(np.abs(residual), spec.delta)


def penalty(x, x_tilde, spec):
    """Per-row mean of the element-wise penalty of x - x~"""
    x = np.asarray(x, dtype=float)
    x_tilde = np.asarray(x_tilde, dtype=float)
    if x.shape != x_tilde.shape:
        raise ConfigurationError(f'penalty shapes differ: {x.shape} vs {x_tilde.shape}')
    return elementwise_penalty(x - x_tilde, spec).mean(axis=-1)


def penalty_residual_grad(residual, spec):
    """d penalty / d residual, element-wise (includes the 1/D)"""
    dim = residual.shape[1]
    if spec.kind == 'mse':
        return 2.0 * residual / dim
    return np.clip(residual, -spec.delta, spec.delta) / dim


# ============================================
# TRAINING LOSS
# ============================================

def forward_terms(model, x, spec, check=True):
    """Per-row loss terms plus the caches the backward pass needs"""
    latent_split = model.split
    z, logdet, flow_cache = model.flow.forward(x, check=check)
    u, v = split(z, latent_split)

    manifold_cache = None
    u_prime = u
    if model.manifold_flow is not None:
        u_prime, logdet_h, manifold_cache = model.manifold_flow.forward(u, check=check)
        nll_u = -(standard_normal_logpdf(u_prime) + logdet_h)
    else:
        nll_u = -standard_normal_logpdf(u)
    nll_v = -standard_normal_logpdf(v)

    inverse_cache = None
    if latent_split.degenerate:
        x_tilde = x
        pen = np.zeros(len(x))
    else:
        x_tilde, inverse_cache = model.flow.inverse(project(z, latent_split), check=check)
        pen = penalty(x, x_tilde, spec)

    return {
        'z': z, 'u': u, 'v': v, 'u_prime': u_prime, 'x_tilde': x_tilde,
        'nll_u': nll_u, 'nll_v': nll_v, 'logdet': logdet, 'penalty': pen,
        'loss': nll_u + nll_v - logdet + spec.weight * pen,
        'flow_cache': flow_cache, 'manifold_cache': manifold_cache, 'inverse_cache': inverse_cache,
    }


DECOMPOSITION_KEYS = ('nll_u', 'nll_v', 'logdet', 'penalty')


def training_loss(model, x, spec):
    """
    Per-row loss -log p_U(u) - log p_V(v) - log|det Df(x)| + lambda * C(x, x~)
    and its decomposition {nll_u, nll_v, logdet, penalty}.
    """
    x = as_tensor(x, model.split.D)
    terms = forward_terms(model, x, spec)
    decomposition = {key: terms[key] for key in DECOMPOSITION_KEYS}
    if not np.all(np.isfinite(terms['loss'])):
        raise TrainingError('non-finite training loss', decomposition=_means(decomposition))
    return terms['loss'], decomposition


def loss_and_grads(model, x, spec):
    """
    Mean loss over the batch, mean decomposition, and gradients aligned
    with model.parameters().
    """
    x = as_tensor(x, model.split.D)
    terms = forward_terms(model, x, spec)
    decomposition = _means({key: terms[key] for key in DECOMPOSITION_KEYS})
    loss = float(np.mean(terms['loss']))
    if not np.isfinite(loss):
        raise TrainingError('non-finite training loss', decomposition=decomposition)

    n = len(x)
    d = model.split.d
    scale = 1.0 / n
    ones = np.full(n, scale)

    du = np.zeros_like(terms['u'])
    inverse_grads = None
    if terms['inverse_cache'] is not None and spec.weight > 0:
        residual = x - terms['x_tilde']
        dx_tilde = -spec.weight * scale * penalty_residual_grad(residual, spec)
        dz_proj, inverse_grads = model.flow.inverse_backward(terms['inverse_cache'], dx_tilde)
        # the v half of the projection is a constant zero
        du += dz_proj[:, :d]

    manifold_grads = []
    if model.manifold_flow is not None:
        du_nll, manifold_grads = model.manifold_flow.backward(
            terms['manifold_cache'], terms['u_prime'] * scale, -ones)
        du += du_nll
    else:
        du += terms['u'] * scale

    dz = np.concatenate([du, terms['v'] * scale], axis=1)
    _, flow_grads = model.flow.backward(terms['flow_cache'], dz, -ones)
    if inverse_grads is not None:
        flow_grads = [a + b for a, b in zip(flow_grads, inverse_grads)]
    return loss, decomposition, flow_grads + manifold_grads


def _means(decomposition):
    return {key: float(np.mean(value)) for key, value in decomposition.items()}


# ============================================
# TRAINING
# ============================================

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    nll: float
    penalty: float


def train(model, data, config, checkpoint_path=None):
    """
    Adam on the training loss with seeded shuffling.

    ActNorm layers are initialized from the first shuffled batch. A
    checkpoint is written after every epoch when checkpoint_path is set. On
    divergence the parameters are rolled back to the last completed epoch,
    that state is checkpointed, and TrainingError is raised.

    Returns (model, list of EpochRecord).
    """
    values = getattr(data, 'values', data)
    x_all = as_tensor(values, model.split.D, name='training data')
    n = len(x_all)
    if n == 0:
        raise ConfigurationError('training data is empty')
    spec = config.penalty_spec()
    history = []
    if config.epochs == 0:
        return model, history

    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state = AdamState.for_params(params, lr=config.lr)
    last_good = [p.copy() for p in params]

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        if not model.initialized:
            model.initialize(x_all[order[:config.batch]])
            last_good = [p.copy() for p in params]
        totals = np.zeros(3)
        for batch_index, start in enumerate(range(0, n, config.batch)):
            batch = x_all[order[start:start + config.batch]]
            try:
                loss, parts, grads = loss_and_grads(model, batch, spec)
                adam_step(state, params, grads, batch_index=batch_index)
            except (NumericError, TrainingError) as exc:
                _roll_back(model, params, last_good, spec, checkpoint_path)
                decomposition = getattr(exc, 'decomposition', {})
                logger.error('training diverged at epoch %d batch %d: %s', epoch, batch_index, exc)
                raise TrainingError(f'training diverged at epoch {epoch}, batch {batch_index}: {exc}',
                                    epoch=epoch, batch_index=batch_index, decomposition=decomposition) from exc
            nll = parts['nll_u'] + parts['nll_v'] - parts['logdet']
            totals += len(batch) * np.array([loss, nll, parts['penalty']])

        record = EpochRecord(epoch, *(float(t) for t in totals / n))
        history.append(record)
        last_good = [p.copy() for p in params]
        logger.info('epoch %d loss=%.6f nll=%.6f penalty=%.6g', epoch, record.loss, record.nll, record.penalty)
        if checkpoint_path:
            save_model(checkpoint_path, model, spec)
    return model, history


def _roll_back(model, params, last_good, spec, checkpoint_path):
    for p, good in zip(params, last_good):
        p[...] = good
    if checkpoint_path:
        save_model(checkpoint_path, model, spec)
