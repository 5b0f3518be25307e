"""Tests for chuk-gmm-sce."""
