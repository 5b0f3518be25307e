"""Tests for configuration functionality."""

import json

import pytest
import yaml
from pydantic import ValidationError

from chuk_gmm_sce import RunConfig, StudyDesign
from chuk_gmm_sce.config import load_configuration_from_sources
from chuk_gmm_sce.study_config import load_study_design_from_sources


class TestRunConfig:
    """Test basic run configuration."""

    def test_default_config(self):
        """Test default configuration values."""
        config = RunConfig()

        assert config.method == "gmm"
        assert config.weighting == "identity"
        assert config.constrained
        assert config.alpha == 0.05
        assert config.n_draws == 1000
        assert config.level == 0.10
        assert config.bandwidth == "auto"
        assert config.seed == 0
        assert config.threads >= 1
        assert config.log_level == "INFO"

    def test_custom_config(self):
        """Test custom configuration values."""
        config = RunConfig(method="ols", seed=7, bandwidth=3, controls=["a", "b"])

        assert config.method == "ols"
        assert config.seed == 7
        assert config.bandwidth == 3
        assert config.controls == ["a", "b"]

    def test_hyphenated_choices(self):
        """Test command-line spellings normalise to underscores."""
        config = RunConfig(weighting="two-step", select="two-step")

        assert config.weighting == "two_step"
        assert config.select == "two_step"

    def test_treatment_start_as_string(self):
        """Test numeric period labels are kept as strings."""
        assert RunConfig(treatment_start=2001).treatment_start == "2001"

    def test_validation(self):
        """Test out-of-range values are rejected."""
        with pytest.raises(ValidationError):
            RunConfig(alpha=1.5)
        with pytest.raises(ValidationError):
            RunConfig(n_draws=50)
        with pytest.raises(ValidationError):
            RunConfig(method="lasso")

    def test_effective_log_level(self):
        """Test verbose and quiet override the log level."""
        assert RunConfig(verbose=True).effective_log_level() == "DEBUG"
        assert RunConfig(quiet=True).effective_log_level() == "WARNING"
        assert RunConfig(log_level="ERROR").effective_log_level() == "ERROR"

    def test_provenance_excludes_execution_fields(self):
        """Test threads and output paths stay out of provenance."""
        data = RunConfig(threads=8, out_dir="/tmp/x").provenance_dict()

        assert "threads" not in data
        assert "out_dir" not in data
        assert "log_level" not in data
        assert data["seed"] == 0

    def test_subsampling_config(self):
        """Test inference settings carry over."""
        cfg = RunConfig(subsample_m=8, n_draws=200, level=0.05, select="two_step")
        sub = cfg.subsampling_config()

        assert sub.m == 8
        assert sub.n_draws == 200
        assert sub.level == 0.05
        assert sub.selection_method == "two_step"


class TestConfigurationLoading:
    """Test configuration file loading."""

    def test_load_from_json_file(self, tmp_path):
        """Test loading configuration from JSON file."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"method": "uniform", "unit": "u0", "seed": 3}))

        config = load_configuration_from_sources(config_file=path, env_overrides=False)

        assert config.method == "uniform"
        assert config.unit == "u0"
        assert config.seed == 3

    def test_load_from_yaml_file(self, tmp_path):
        """Test loading configuration from YAML file."""
        path = tmp_path / "run.yaml"
        path.write_text(yaml.dump({"weighting": "two-step", "instruments": ["k1", "k2"]}))

        config = load_configuration_from_sources(config_file=path, env_overrides=False)

        assert config.weighting == "two_step"
        assert config.instruments == ["k1", "k2"]

    def test_save_and_load_config(self, tmp_path):
        """Test saving and loading configuration."""
        for name in ("run.yaml", "run.json"):
            path = tmp_path / name
            RunConfig(method="factor", factor_rank=2, v=[0.5, 0.5]).save_to_file(path)
            loaded = RunConfig.from_file(path)

            assert loaded.method == "factor"
            assert loaded.factor_rank == 2
            assert loaded.v == [0.5, 0.5]

    def test_config_from_nonexistent_file(self):
        """Test loading from nonexistent file raises error."""
        with pytest.raises(FileNotFoundError):
            RunConfig.from_file("/nonexistent/path/config.yaml")

    def test_unsupported_format(self, tmp_path):
        """Test loading or saving an unsupported format raises error."""
        path = tmp_path / "config.txt"
        path.write_text("seed: 1")

        with pytest.raises(ValueError, match="Unsupported config file format"):
            RunConfig.from_file(path)
        with pytest.raises(ValueError, match="Unsupported config file format"):
            RunConfig().save_to_file(tmp_path / "out.txt")


class TestConfigEnvironment:
    """Test GMM_SCE_* environment variable handling."""

    def test_config_from_env(self, monkeypatch):
        """Test loading configuration from environment variables."""
        monkeypatch.setenv("GMM_SCE_METHOD", "powell")
        monkeypatch.setenv("GMM_SCE_SEED", "11")
        monkeypatch.setenv("GMM_SCE_CONTROLS", "a, b,c")
        monkeypatch.setenv("GMM_SCE_CONSTRAINED", "false")
        monkeypatch.setenv("GMM_SCE_BANDWIDTH", "2")

        config = RunConfig.from_env()

        assert config.method == "powell"
        assert config.seed == 11
        assert config.controls == ["a", "b", "c"]
        assert config.constrained is False
        assert config.bandwidth == 2

    def test_invalid_env_value_ignored(self, monkeypatch):
        """Test values that fail conversion fall back to defaults."""
        monkeypatch.setenv("GMM_SCE_SEED", "not-a-number")

        assert RunConfig.from_env().seed == 0

    def test_priority(self, tmp_path, monkeypatch):
        """Test CLI > environment > file > defaults."""
        path = tmp_path / "run.yaml"
        path.write_text(yaml.dump({"seed": 1, "alpha": 0.1, "method": "ols"}))
        monkeypatch.setenv("GMM_SCE_SEED", "2")
        monkeypatch.setenv("GMM_SCE_ALPHA", "0.2")

        config = load_configuration_from_sources(
            config_file=path, cli_overrides={"seed": 3}
        )

        assert config.seed == 3
        assert config.alpha == 0.2
        assert config.method == "ols"
        assert config.n_draws == 1000

    def test_env_disabled(self, monkeypatch):
        """Test environment overrides can be switched off."""
        monkeypatch.setenv("GMM_SCE_SEED", "5")

        assert load_configuration_from_sources(env_overrides=False).seed == 0


class TestStudyDesign:
    """Test simulation study designs."""

    def test_defaults(self):
        """Test the default design grid."""
        design = StudyDesign()

        assert design.pre_periods == [25, 50, 100]
        assert design.n_never_treated == [10, 50]
        assert design.post_periods == 50
        assert design.path_length == 150
        assert design.estimators[0] == "ols"

    def test_sizes_sorted_and_unique(self):
        """Test design sizes are sorted and de-duplicated."""
        design = StudyDesign(pre_periods=[50, 25, 50], n_never_treated=[5])

        assert design.pre_periods == [25, 50]

    def test_invalid_sizes(self):
        """Test non-positive sizes and empty estimator lists are rejected."""
        with pytest.raises(ValidationError):
            StudyDesign(pre_periods=[0])
        with pytest.raises(ValidationError):
            StudyDesign(estimators=[])

    def test_check_against(self):
        """Test the design is checked against the DGP size."""
        design = StudyDesign(n_never_treated=[10], n_other_treated=5)

        design.check_against(16)
        with pytest.raises(ValueError, match="16 units"):
            design.check_against(15)

    def test_logistic_needs_labels(self):
        """Test logistic assignment without a labels file is rejected."""
        with pytest.raises(ValueError, match="labels"):
            StudyDesign(assignment="logistic").check_against(100)

    def test_env_and_file(self, tmp_path, monkeypatch):
        """Test GMM_SCE_STUDY_* variables override the design file."""
        path = tmp_path / "design.json"
        path.write_text(json.dumps({"replications": 10, "pre_periods": [20]}))
        monkeypatch.setenv("GMM_SCE_STUDY_REPLICATIONS", "20")
        monkeypatch.setenv("GMM_SCE_STUDY_N_NEVER_TREATED", "5,15")
        monkeypatch.setenv("GMM_SCE_STUDY_SELECTION_METHOD", "two-step")

        design = load_study_design_from_sources(design_file=path)

        assert design.replications == 20
        assert design.pre_periods == [20]
        assert design.n_never_treated == [5, 15]
        assert design.selection_method == "two_step"
