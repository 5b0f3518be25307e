"""Tests for counter-based random streams."""

import numpy as np

from chuk_gmm_sce.seeding import make_rng, open_uniforms, seed_sequence


class TestStreams:
    """Test stream addressing."""

    def test_same_key_same_stream(self):
        """Test a seed and key always give the same draws."""
        a = make_rng(3, 1, 2).standard_normal(5)
        b = make_rng(3, 1, 2).standard_normal(5)

        np.testing.assert_array_equal(a, b)

    def test_keys_are_independent(self):
        """Test different keys and seeds give different draws."""
        base = make_rng(3, 0).standard_normal(5)

        assert not np.array_equal(base, make_rng(3, 1).standard_normal(5))
        assert not np.array_equal(base, make_rng(4, 0).standard_normal(5))

    def test_nested_keys(self):
        """Test keying a seed sequence extends its spawn key."""
        parent = seed_sequence(9, 2)
        child = make_rng(parent, 5).standard_normal(3)

        np.testing.assert_array_equal(child, make_rng(9, 2, 5).standard_normal(3))

    def test_philox(self):
        """Test generators use the Philox bit generator."""
        assert isinstance(make_rng(0).bit_generator, np.random.Philox)


class TestOpenUniforms:
    """Test uniforms on the open interval."""

    def test_strictly_inside(self):
        """Test no draw touches 0 or 1."""
        u = open_uniforms(make_rng(1), 100_000)

        assert u.min() > 0.0
        assert u.max() < 1.0
        assert abs(u.mean() - 0.5) < 0.01

    def test_shape(self):
        """Test tuple sizes are honoured."""
        assert open_uniforms(make_rng(1), (3, 4)).shape == (3, 4)
