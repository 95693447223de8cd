"""
Datasets

Seeded synthetic generators (the semicircle toy set and randomly embedded
linear/smooth manifolds), IDX image ingestion, and the binary tensor
container with its JSON metadata sidecar.
"""

import gzip
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .exceptions import ConfigurationError, FormatError

logger = logging.getLogger(__name__)

SEMICIRCLE_PROFILES = ('uniform', 'concentrated')
NONLINEARITIES = ('none', 'smooth')


@dataclass
class Dataset:
    """Rows of float64 data plus the metadata needed to regenerate them"""
    values: np.ndarray
    generator: str
    seed: int = None
    params: dict = field(default_factory=dict)
    image_shape: tuple = None

    def __len__(self):
        return len(self.values)

    @property
    def dim(self):
        return self.values.shape[1]

    def metadata(self):
        return {
            'generator': self.generator,
            'seed': self.seed,
            'params': self.params,
            'shape': list(self.values.shape),
            'image_shape': list(self.image_shape) if self.image_shape else None,
        }


# ============================================
# GENERATORS
# ============================================

def gen_semicircle(n, noise_sigma=0.05, profile='uniform', seed=0):
    """
    Points on the upper unit semicircle with radial noise.

    theta is uniform on [0, pi] or, for 'concentrated', follows the raised
    cosine density (1 - cos 2 theta) / pi peaked at pi/2, which leaves the
    ends of the arc sparsely populated. Each point is
    (cos theta, sin theta) * (1 + eps), eps ~ N(0, noise_sigma^2).
    """
    if n < 1:
        raise ConfigurationError(f'n must be positive, got {n}')
    if noise_sigma < 0:
        raise ConfigurationError(f'noise_sigma must be non-negative, got {noise_sigma}')
    if profile not in SEMICIRCLE_PROFILES:
        raise ConfigurationError(f'unknown density profile {profile!r}; use one of {SEMICIRCLE_PROFILES}')
    rng = np.random.default_rng(seed)
    if profile == 'uniform':
        theta = rng.uniform(0.0, np.pi, size=n)
    else:
        theta = stats.cosine.rvs(loc=np.pi / 2, scale=0.5, size=n, random_state=rng)
    radius = 1.0 + noise_sigma * rng.standard_normal(n)
    values = np.stack([np.cos(theta) * radius, np.sin(theta) * radius], axis=1)
    return Dataset(values, 'semicircle', seed,
                   {'n': n, 'noise_sigma': noise_sigma, 'profile': profile})


def gen_embedded_manifold(n, d, D, nonlinearity='none', noise_sigma=0.0, seed=0, embedding_seed=None):
    """
    x = E(g) + eps with g ~ N(0, I_d) and eps ~ N(0, noise_sigma^2 I_D).

    E is a random linear map R^d -> R^D drawn from embedding_seed (defaults
    to seed), followed by tanh per coordinate when nonlinearity is
    'smooth'. Sets that share embedding_seed lie on the same manifold.
    """
    if not 1 <= d < D:
        raise ConfigurationError(f'embedded manifold needs 1 <= d < D, got d={d}, D={D}')
    if nonlinearity not in NONLINEARITIES:
        raise ConfigurationError(f'unknown nonlinearity {nonlinearity!r}; use one of {NONLINEARITIES}')
    if noise_sigma < 0:
        raise ConfigurationError(f'noise_sigma must be non-negative, got {noise_sigma}')
    embedding_seed = seed if embedding_seed is None else embedding_seed
    embedding = np.random.default_rng([embedding_seed, 1]).standard_normal((d, D)) / np.sqrt(d)
    rng = np.random.default_rng([seed, 0])
    values = rng.standard_normal((n, d)) @ embedding
    if nonlinearity == 'smooth':
        values = np.tanh(values)
    if noise_sigma > 0:
        values = values + noise_sigma * rng.standard_normal((n, D))
    return Dataset(values, 'embedded_manifold', seed, {
        'n': n, 'd': d, 'D': D, 'nonlinearity': nonlinearity,
        'noise_sigma': noise_sigma, 'embedding_seed': embedding_seed,
    })


def add_dequantization_noise(dataset, seed=0, levels=256):
    """Uniform noise of one quantization step; only for ablations"""
    rng = np.random.default_rng(seed)
    values = dataset.values + rng.uniform(0.0, 1.0 / levels, size=dataset.values.shape)
    params = dict(dataset.params, dequantized=True, dequantize_seed=seed)
    return Dataset(values, dataset.generator, dataset.seed, params, dataset.image_shape)


def shuffle_pixels(dataset, seed=0):
    """Permute the coordinates of every row independently (an OOD set with ID pixel statistics)"""
    rng = np.random.default_rng(seed)
    values = rng.permuted(dataset.values, axis=1)
    params = dict(dataset.params, source=dataset.generator, shuffle_seed=seed)
    return Dataset(values, 'shuffled_pixels', seed, params, dataset.image_shape)


# ============================================
# IDX FILES
# ============================================

IDX_UBYTE = 0x08


def load_idx(path, pool=1):
    """
    Read an IDX file of unsigned bytes (optionally gzipped).

    Each item is scaled to [0, 1] by /255 and flattened; with pool > 1
    images are average-pooled by that factor first.
    """
    path = Path(path)
    opener = gzip.open if path.suffix == '.gz' else open
    try:
        with opener(path, 'rb') as fh:
            raw = fh.read()
    except FileNotFoundError as exc:
        raise ConfigurationError(f'IDX file not found: {path}') from exc

    if len(raw) < 4:
        raise FormatError(f'{path}: truncated IDX magic', offset=len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError(f'{path}: bad IDX magic', offset=0)
    if raw[2] != IDX_UBYTE:
        raise FormatError(f'{path}: unsupported IDX data type 0x{raw[2]:02x}', offset=2)
    ndim = raw[3]
    if ndim < 1:
        raise FormatError(f'{path}: IDX file declares no dimensions', offset=3)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f'{path}: truncated IDX dimensions', offset=len(raw))
    dims = struct.unpack(f'>{ndim}I', raw[4:header_end])
    expected = int(np.prod(dims, dtype=np.int64))
    available = len(raw) - header_end
    if available < expected:
        raise FormatError(f'{path}: IDX payload has {available} bytes, expected {expected}', offset=len(raw))
    if available > expected:
        raise FormatError(f'{path}: {available - expected} trailing bytes after IDX payload', offset=header_end + expected)

    pixels = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_end).reshape(dims)
    images = pixels.astype(np.float64) / 255.0
    image_shape = tuple(dims[1:]) or (1,)
    if pool > 1:
        images = pool_images(images, pool)
        image_shape = images.shape[1:]
    values = images.reshape(dims[0], -1)
    logger.info('loaded %d items of shape %s from %s', dims[0], image_shape, path)
    return Dataset(values, 'idx', None, {'path': str(path), 'pool': pool}, image_shape)


def pool_images(images, factor):
    """Average-pool (n, rows, cols) images by an integer factor"""
    if images.ndim != 3:
        raise ConfigurationError(f'pooling needs (n, rows, cols) images, got shape {images.shape}')
    n, rows, cols = images.shape
    if rows % factor or cols % factor:
        raise ConfigurationError(f'pool factor {factor} does not divide image shape {rows}x{cols}')
    return images.reshape(n, rows // factor, factor, cols // factor, factor).mean(axis=(2, 4))


# ============================================
# TENSOR CONTAINER
# ============================================

TENSOR_MAGIC = b'MFTENSOR'
TENSOR_VERSION = 1
_TENSOR_HEADER = struct.Struct('<II')


def save_tensor(path, array):
    """Magic, version, rank, dims as u64, then little-endian float64 payload"""
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 0:
        raise FormatError('rank-0 tensors cannot be stored')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(_TENSOR_HEADER.pack(TENSOR_VERSION, array.ndim))
        fh.write(struct.pack(f'<{array.ndim}Q', *array.shape))
        fh.write(np.ascontiguousarray(array, dtype='<f8').tobytes())
    return path


def load_tensor(path):
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise ConfigurationError(f'tensor file not found: {path}') from exc
    if raw[:len(TENSOR_MAGIC)] != TENSOR_MAGIC:
        raise FormatError(f'{path}: not a tensor file', offset=0)
    offset = len(TENSOR_MAGIC)
    if len(raw) < offset + _TENSOR_HEADER.size:
        raise FormatError(f'{path}: truncated tensor header', offset=len(raw))
    version, rank = _TENSOR_HEADER.unpack_from(raw, offset)
    if version != TENSOR_VERSION:
        raise FormatError(f'{path}: tensor version {version}, expected {TENSOR_VERSION}', offset=offset)
    if rank == 0:
        raise FormatError(f'{path}: rank-0 tensor', offset=offset + 4)
    offset += _TENSOR_HEADER.size
    if len(raw) < offset + 8 * rank:
        raise FormatError(f'{path}: truncated tensor dimensions', offset=len(raw))
    shape = struct.unpack_from(f'<{rank}Q', raw, offset)
    offset += 8 * rank
    expected = 8 * int(np.prod(shape, dtype=np.int64))
    if len(raw) - offset != expected:
        raise FormatError(f'{path}: expected {expected} payload bytes, found {len(raw) - offset}', offset=offset)
    return np.frombuffer(raw, dtype='<f8', offset=offset).astype(np.float64).reshape(shape)


def sidecar_path(path):
    return Path(f'{path}.meta.json')


def save_dataset(path, dataset, extra=None):
    """Tensor file plus a one-line JSON metadata sidecar"""
    path = save_tensor(path, dataset.values)
    meta = dataset.metadata()
    meta.update(extra or {})
    sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + '\n', encoding='utf-8')
    return path


def load_dataset(path):
    """Tensor plus sidecar metadata when present; the data must be 2-D"""
    values = load_tensor(path)
    if values.ndim != 2:
        raise FormatError(f'{path}: dataset tensors are 2-D, got shape {values.shape}')
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding='utf-8'))
    image_shape = tuple(meta['image_shape']) if meta.get('image_shape') else None
    return Dataset(values, meta.get('generator', 'file'), meta.get('seed'), meta.get('params', {}), image_shape)
