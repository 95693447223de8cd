"""
Input complexity

Samples are quantized to one byte per coordinate and compressed with a
lossless codec; the compressed length in bits corrects the likelihood's
bias toward simple inputs.
"""

import io
import logging
import math
import zlib
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .exceptions import ConfigurationError, DomainError, ScoringError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuantizedSample:
    data: bytes
    shape: tuple
    clamped: bool = False

    def __len__(self):
        return len(self.data)


def quantize(x, shape=None):
    """round(clamp(x, 0, 1) * 255) per coordinate"""
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise DomainError('cannot quantize non-finite values')
    clamped = bool(np.any((x < 0) | (x > 1)))
    data = np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8).tobytes()
    return QuantizedSample(data=data, shape=tuple(shape) if shape else (x.size,), clamped=clamped)


def dequantize(sample):
    return np.frombuffer(sample.data, dtype=np.uint8).astype(float) / 255.0


# ============================================
# CODECS
# ============================================

class Codec:
    """Lossless byte compressor; subclasses set name and level"""
    name = None
    level = None

    def compress(self, sample):
        raise NotImplementedError

    def describe(self):
        return f'{self.name}:{self.level}'


class DeflateCodec(Codec):
    """Raw DEFLATE stream of the quantized bytes"""
    name = 'deflate'

    def __init__(self, level=9):
        self.level = level

    def compress(self, sample):
        compressor = zlib.compressobj(self.level, zlib.DEFLATED, -15)
        return compressor.compress(sample.data) + compressor.flush()


class PngCodec(Codec):
    """
    Grayscale PNG of the quantized bytes.

    2-D shapes keep their rows; anything else is a single row.
    """
    name = 'png'

    def __init__(self, level=9):
        self.level = level

    def compress(self, sample):
        rows, cols = sample.shape if len(sample.shape) == 2 else (1, len(sample.data))
        image = Image.frombytes('L', (cols, rows), sample.data)
        buffer = io.BytesIO()
        image.save(buffer, format='PNG', compress_level=self.level)
        return buffer.getvalue()


CODECS = {
    DeflateCodec.name: DeflateCodec,
    PngCodec.name: PngCodec,
}


def get_codec(name, level=9):
    try:
        return CODECS[name](level=level)
    except KeyError:
        raise ConfigurationError(f'unknown codec {name!r}; use one of {sorted(CODECS)}') from None


def complexity_bits(sample, codec, sample_index=None):
    """8 x compressed length in bytes"""
    if not len(sample):
        raise DomainError('cannot measure the complexity of an empty sample')
    try:
        return 8 * len(codec.compress(sample))
    except (zlib.error, OSError, ValueError) as exc:
        raise ScoringError(f'codec {codec.describe()} failed: {exc}', sample_index=sample_index) from exc


def ic_adjusted_nll(nll_nats, bits, dim):
    """NLL in bits per dimension minus compressed bits per dimension"""
    if not dim > 0:
        raise DomainError(f'dimension must be positive, got {dim}')
    return nll_nats / (dim * math.log(2.0)) - bits / dim
