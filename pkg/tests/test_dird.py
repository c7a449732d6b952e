import numpy as np
import pytest
from pydantic import ValidationError

from app.error_handling import DescriptorError, ImageError
from vision.dird import (
    KERNEL_WEIGHTS,
    DirdConfig,
    DirdDescriptor,
    compute_descriptor,
    descriptor_distance,
    extract_descriptor,
    filter_bank_response,
    normalized_distance,
    quantize,
    similarity,
)
from vision.image import GrayImage, resample

SHAPES = list(KERNEL_WEIGHTS)


def step_edge(column=128, dark=50.0, bright=200.0):
    pixels = np.full((256, 256), dark)
    pixels[:, column:] = bright
    return GrayImage(pixels)


def raw(values, block_size=None):
    values = np.asarray(values, dtype=float)
    return DirdDescriptor(raw=values, block_size=block_size or values.size)


class TestConfig:
    def test_default_dimension(self):
        cfg = DirdConfig()
        assert cfg.sample_count == 64
        assert cfg.dimension == 3456

    def test_kernels_are_zero_sum(self):
        for weights in KERNEL_WEIGHTS.values():
            assert np.sum(weights) == 0

    def test_filter_count_must_match_bank(self):
        with pytest.raises(ValidationError):
            DirdConfig(filter_count=50)

    def test_scales_must_divide_into_segments(self):
        with pytest.raises(ValidationError):
            DirdConfig(kernel_scales=[8, 16, 30])


class TestFilterBankResponse:
    def test_constant_image_is_annihilated(self):
        response = filter_bank_response(GrayImage(np.full((256, 256), 128.0)), (128, 128), DirdConfig())
        assert response.shape == (54,)
        assert np.all(response == 0.0)

    def test_linear_in_gain(self, textured_image):
        cfg = DirdConfig()
        base = filter_bank_response(textured_image, (100, 140), cfg)
        scaled = filter_bank_response(GrayImage(0.5 * textured_image.pixels), (100, 140), cfg)
        np.testing.assert_allclose(scaled, 0.5 * base, rtol=1e-9, atol=1e-9)

    def test_vertical_edge(self):
        response = filter_bank_response(step_edge(), (128, 128), DirdConfig()).reshape(len(SHAPES), -1)
        assert np.any(response[SHAPES.index("edge_x")] != 0.0)
        assert np.all(response[SHAPES.index("edge_y")] == 0.0)
        assert np.all(response[SHAPES.index("line_y")] == 0.0)

    def test_border_pixel_names_margin(self, textured_image):
        with pytest.raises(ImageError, match="border"):
            filter_bank_response(textured_image, (3, 3), DirdConfig())


class TestComputeDescriptor:
    def test_shape(self, textured_image):
        descriptor = compute_descriptor(textured_image, DirdConfig())
        assert descriptor.raw.shape == (3456,)
        assert descriptor.quantized is None

    def test_constant_image_gives_zero_descriptor(self):
        descriptor = compute_descriptor(GrayImage(np.full((256, 256), 90.0)), DirdConfig())
        assert np.all(descriptor.raw == 0.0)

    def test_gain_invariance(self, textured_image):
        cfg = DirdConfig()
        base = extract_descriptor(textured_image, cfg)
        dimmed = extract_descriptor(GrayImage(0.5 * textured_image.pixels), cfg)
        np.testing.assert_allclose(dimmed.raw, base.raw, atol=1e-9)
        difference = np.abs(dimmed.quantized.astype(int) - base.quantized.astype(int))
        assert difference.max() <= 1

    @pytest.mark.parametrize("bias", [-20.0, 7.5, 20.0])
    def test_bias_invariance(self, textured_image, bias):
        cfg = DirdConfig()
        base = compute_descriptor(textured_image, cfg)
        shifted = compute_descriptor(GrayImage(textured_image.pixels + bias), cfg)
        np.testing.assert_allclose(shifted.raw, base.raw, atol=1e-12)

    def test_block_norms(self, textured_image):
        cfg = DirdConfig()
        blocks = compute_descriptor(textured_image, cfg).raw.reshape(cfg.sample_count, cfg.filter_count)
        norms = np.linalg.norm(blocks, axis=1)
        assert np.all((norms == 0.0) | ((norms > 0.0) & (norms <= 1.0 + 1e-12)))

    def test_deterministic(self, textured_image):
        cfg = DirdConfig()
        assert np.array_equal(compute_descriptor(textured_image, cfg).raw, compute_descriptor(textured_image, cfg).raw)

    def test_small_images_are_resampled(self, rng):
        small = GrayImage(rng.uniform(0.0, 255.0, (64, 96)))
        assert resample(small, 256).pixels.shape == (256, 256)
        assert compute_descriptor(small, DirdConfig()).dimension == 3456


class TestQuantize:
    def test_byte_mapping(self):
        quantized = quantize(raw([0.0, -1.0, 1.0]), "byte").quantized
        assert quantized.tolist() == [129, 1, 256]

    def test_bit_mapping(self):
        assert quantize(raw([0.2, -0.2, 0.0]), "bit").quantized.tolist() == [1, 0, 0]

    def test_needs_raw_part(self):
        quantized = DirdDescriptor(quantized=[1, 2, 3], mode="byte", block_size=3)
        with pytest.raises(DescriptorError):
            quantize(quantized, "byte")

    def test_byte_values_must_be_in_range(self):
        with pytest.raises(DescriptorError):
            DirdDescriptor(quantized=[0, 5], mode="byte", block_size=2)

    def test_bit_dequantization_keeps_unit_blocks(self, rng):
        bits = rng.integers(0, 2, 54 * 4)
        blocks = DirdDescriptor(quantized=bits, mode="bit", block_size=54).dequantized().reshape(4, 54)
        np.testing.assert_allclose(np.linalg.norm(blocks, axis=1), 1.0, atol=1e-12)


class TestDistanceAndSimilarity:
    def test_identity(self, rng):
        x = raw(rng.normal(size=64))
        assert descriptor_distance(x, x) == 0.0

    def test_orthonormal_pair(self):
        a, b = np.zeros(10), np.zeros(10)
        a[0], b[1] = 1.0, 1.0
        assert descriptor_distance(raw(a), raw(b)) == pytest.approx(np.sqrt(2.0), abs=1e-15)

    def test_matches_naive_loop(self, rng):
        a, b = rng.normal(size=3456), rng.normal(size=3456)
        total = 0.0
        for x, y in zip(a, b):
            total += (x - y) * (x - y)
        assert descriptor_distance(raw(a), raw(b)) == pytest.approx(np.sqrt(total), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DescriptorError):
            descriptor_distance(raw(np.zeros(4)), raw(np.zeros(5)))

    def test_mode_mismatch_on_quantized(self):
        a = DirdDescriptor(quantized=[1, 0], mode="bit", block_size=2)
        b = DirdDescriptor(quantized=[1, 2], mode="byte", block_size=2)
        with pytest.raises(DescriptorError):
            descriptor_distance(a, b)

    def test_metric_properties(self, rng):
        for _ in range(1000):
            a, b, c = (raw(rng.normal(size=16)) for _ in range(3))
            ab = descriptor_distance(a, b)
            assert ab == pytest.approx(descriptor_distance(b, a), abs=1e-12)
            assert ab <= descriptor_distance(a, c) + descriptor_distance(c, b) + 1e-12

    def test_logistic_midpoint(self):
        assert similarity(0.5, DirdConfig()) == pytest.approx(0.5, abs=1e-15)

    def test_zero_distance(self):
        assert similarity(0.0, DirdConfig()) == pytest.approx(1.0 / (1.0 + np.exp(-5.0)), abs=1e-12)
        assert similarity(0.0, DirdConfig()) == pytest.approx(0.99331, abs=1e-5)

    def test_tail_bound(self):
        cfg = DirdConfig()
        assert similarity(cfg.logistic_midpoint + 10.0 / cfg.logistic_steepness, cfg) < 4.6e-5

    def test_strictly_decreasing(self):
        values = similarity(np.linspace(0.0, 3.0, 50), DirdConfig())
        assert np.all(np.diff(values) < 0)

    def test_normalization_is_rms_block_distance(self):
        cfg = DirdConfig()
        # Every one of the 64 blocks differs by a unit vector: RMS block distance 1
        assert float(normalized_distance(np.sqrt(cfg.sample_count), cfg)) == pytest.approx(1.0)
