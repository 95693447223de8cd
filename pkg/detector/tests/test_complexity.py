import math
import zlib

import numpy as np
from django.test import SimpleTestCase

from detector.complexity import (
    DeflateCodec, PngCodec, complexity_bits, dequantize, get_codec, ic_adjusted_nll, quantize,
)
from detector.exceptions import ConfigurationError, DomainError


class QuantizeTests(SimpleTestCase):

    def test_clamps_and_rounds(self):
        sample = quantize([-0.1, 0.0, 0.5, 1.0, 1.2])
        self.assertEqual(list(sample.data), [0, 0, 128, 255, 255])
        self.assertTrue(sample.clamped)
        self.assertEqual(sample.shape, (5,))

    def test_in_range_not_clamped(self):
        self.assertFalse(quantize([0.0, 0.25, 1.0]).clamped)

    def test_dequantize_inverts_grid_values(self):
        values = np.arange(256) / 255.0
        np.testing.assert_array_equal(dequantize(quantize(values)), values)

    def test_non_finite_rejected(self):
        with self.assertRaises(DomainError):
            quantize([0.1, np.nan])


class CodecTests(SimpleTestCase):

    def test_constant_compresses_far_better_than_noise(self):
        rng = np.random.default_rng(0)
        constant = quantize(np.full(1024, 0.5))
        noise = quantize(rng.uniform(size=1024))
        for codec in (DeflateCodec(), PngCodec()):
            self.assertLess(complexity_bits(constant, codec), complexity_bits(noise, codec) / 4, codec.name)

    def test_deflate_is_lossless(self):
        sample = quantize(np.random.default_rng(1).uniform(size=64))
        self.assertEqual(zlib.decompress(DeflateCodec().compress(sample), -15), sample.data)

    def test_png_keeps_image_rows(self):
        sample = quantize(np.zeros(16), shape=(4, 4))
        self.assertEqual(PngCodec().compress(sample)[:8], b'\x89PNG\r\n\x1a\n')

    def test_bits_are_eight_per_byte(self):
        sample = quantize(np.zeros(10))
        codec = DeflateCodec(level=6)
        self.assertEqual(complexity_bits(sample, codec), 8 * len(codec.compress(sample)))
        self.assertEqual(codec.describe(), 'deflate:6')

    def test_registry(self):
        self.assertIsInstance(get_codec('png'), PngCodec)
        with self.assertRaises(ConfigurationError):
            get_codec('jpeg')

    def test_empty_sample_rejected(self):
        with self.assertRaises(DomainError):
            complexity_bits(quantize([]), DeflateCodec())


class AdjustedNllTests(SimpleTestCase):

    def test_unit_check(self):
        dim = 1024
        self.assertEqual(ic_adjusted_nll(dim * math.log(2.0), dim, dim), 0.0)

    def test_fewer_bits_raise_the_score(self):
        self.assertGreater(ic_adjusted_nll(100.0, 80, 64), ic_adjusted_nll(100.0, 800, 64))
