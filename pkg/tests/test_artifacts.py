"""Tests for JSON and CSV artifacts."""

import hashlib
import json

import numpy as np
import pandas as pd

from chuk_gmm_sce import __version__
from chuk_gmm_sce.artifacts import (
    load_dgp,
    meta_path,
    provenance,
    read_json,
    save_dgp,
    write_draws,
    write_gap_series,
    write_json,
)
from chuk_gmm_sce.estimators import gmm_sce
from chuk_gmm_sce.inference import SubsamplingConfig, subsampling_ci


class TestProvenance:
    """Test provenance blocks."""

    def test_fields(self, exact_panel):
        """Test version, config and panel hash are recorded."""
        panel, _ = exact_panel
        prov = provenance({"seed": 1}, panel, rank=2)

        assert prov["package"] == "chuk-gmm-sce"
        assert prov["version"] == __version__
        assert prov["config"] == {"seed": 1}
        assert prov["panel_sha256"] == panel.content_hash()
        assert prov["rank"] == 2

    def test_without_panel(self):
        """Test the hash is null without a panel."""
        assert provenance({})["panel_sha256"] is None


class TestWriters:
    """Test file writers."""

    def test_json_numpy_values(self, tmp_path):
        """Test numpy scalars and arrays serialise."""
        path = write_json(
            tmp_path / "sub" / "out.json",
            {"a": np.int64(3), "b": np.float64(0.5), "c": np.arange(3), "d": np.bool_(True)},
        )

        assert read_json(path) == {"a": 3, "b": 0.5, "c": [0, 1, 2], "d": True}
        assert path.read_text().endswith("\n")

    def test_json_is_deterministic(self, tmp_path):
        """Test equal payloads give byte-identical files."""
        payload = {"x": [1.0, 2.0], "y": {"z": None}}
        first = write_json(tmp_path / "a.json", payload).read_bytes()
        second = write_json(tmp_path / "b.json", payload).read_bytes()

        assert first == second

    def test_gap_series(self, exact_panel, tmp_path):
        """Test the gap CSV has one row per period and full precision."""
        panel, roles = exact_panel
        result = gmm_sce(panel, roles)
        frame = pd.read_csv(write_gap_series(tmp_path / "gap.csv", result, panel))

        assert list(frame.columns) == ["period", "actual", "synthetic", "gap"]
        assert len(frame) == panel.n_periods
        np.testing.assert_allclose(frame["actual"], panel.outcomes[0], rtol=1e-15)
        np.testing.assert_allclose(frame["gap"], result.gap_series, rtol=0, atol=1e-15)

    def test_draws(self, exact_panel, tmp_path):
        """Test every draw is written."""
        panel, roles = exact_panel
        interval = subsampling_ci(
            panel, roles, gmm_sce(panel, roles), SubsamplingConfig(n_draws=100)
        )
        frame = pd.read_csv(write_draws(tmp_path / "draws.csv", interval))

        assert len(frame) == 100

    def test_csv_sidecar(self, exact_panel, tmp_path):
        """Test a CSV written with provenance gets a matching meta sidecar."""
        panel, roles = exact_panel
        prov = provenance({"seed": 4}, panel)
        path = write_gap_series(tmp_path / "gap_series.csv", gmm_sce(panel, roles), panel, prov)
        meta = read_json(tmp_path / "gap_series.meta.json")

        assert meta_path(path) == tmp_path / "gap_series.meta.json"
        assert meta["artifact"] == "gap_series.csv"
        assert meta["sha256"] == hashlib.sha256(path.read_bytes()).hexdigest()
        assert meta["provenance"]["config"] == {"seed": 4}
        assert meta["provenance"]["panel_sha256"] == panel.content_hash()

    def test_no_sidecar_without_provenance(self, exact_panel, tmp_path):
        """Test plain CSV writes leave no sidecar."""
        panel, roles = exact_panel
        write_gap_series(tmp_path / "gap.csv", gmm_sce(panel, roles), panel)

        assert not (tmp_path / "gap.meta.json").exists()


class TestDgpFiles:
    """Test fitted DGP files."""

    def test_round_trip(self, static_dgp, tmp_path):
        """Test a saved DGP loads back unchanged."""
        path = save_dgp(tmp_path / "dgp.json", static_dgp, provenance({}))
        loaded = load_dgp(path)

        np.testing.assert_array_equal(loaded.loadings, static_dgp.loadings)
        np.testing.assert_array_equal(loaded.shock_variances, static_dgp.shock_variances)
        assert loaded.factor_processes == static_dgp.factor_processes

    def test_bare_dict(self, static_dgp, tmp_path):
        """Test a DGP dict without the envelope is accepted."""
        path = tmp_path / "bare.json"
        path.write_text(json.dumps(static_dgp.to_dict()))

        assert load_dgp(path).unit_ids == static_dgp.unit_ids
