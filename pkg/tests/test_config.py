from pathlib import Path

import pytest

from hartree_rf.config import LabSettings, get_settings, load_run_config, parse_override
from hartree_rf.errors import ConfigError
from hartree_rf.lab import HartreeLab

CONFIGS = Path(__file__).parent.parent / "configs"


def test_defaults_without_file():
    """No config file gives the built-in defaults."""
    config = load_run_config(None)
    assert config.grid.dim == 2
    assert config.grid.n == 32
    assert config.ensemble.N == 256
    assert config.profile.kind == "fermi"


def test_shipped_configs_validate():
    """Every example configuration loads."""
    for path in sorted(CONFIGS.glob("*.toml")):
        config = load_run_config(path)
        assert config.grid.n >= 4


def test_overrides_and_seed():
    """Dotted overrides are TOML literals, bare words fall back to strings."""
    config = load_run_config(
        CONFIGS / "equilibrium.toml",
        ["grid.n=16", "profile.kind=gaussian", "diagnostics.eps_sweep=[0.2, 0.4]"],
        seed=2**64 - 1,
    )
    assert config.grid.n == 16
    assert config.profile.kind == "gaussian"
    assert config.diagnostics.eps_sweep == [0.2, 0.4]
    assert config.ensemble.seed == 2**64 - 1


def test_parse_override():
    """Keys split on dots; malformed items are refused."""
    assert parse_override("evolution.dt=0.5") == (["evolution", "dt"], 0.5)
    with pytest.raises(ConfigError):
        parse_override("evolution.dt")
    with pytest.raises(ConfigError):
        parse_override("=3")


def test_missing_file(tmp_path):
    """A missing config is a configuration error naming the path."""
    missing = tmp_path / "nope.toml"
    with pytest.raises(ConfigError, match="nope.toml"):
        load_run_config(missing)


def test_unreadable_toml(tmp_path):
    """Broken TOML is a configuration error."""
    path = tmp_path / "broken.toml"
    path.write_text("[grid\nn = 4\n")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_schema_errors(tmp_path):
    """Unknown keys and invalid values are refused."""
    with pytest.raises(ConfigError):
        load_run_config(None, ["grid.size=16"])
    with pytest.raises(ConfigError):
        load_run_config(None, ["grid.n=12"])
    with pytest.raises(ConfigError):
        load_run_config(None, ["ensemble.N=0"])
    with pytest.raises(ConfigError):
        load_run_config(None, ["grid.n.x=1"])


def test_file_and_override_precedence(tmp_path):
    """Overrides win over the file."""
    path = tmp_path / "run.toml"
    path.write_text('[grid]\nn = 8\nL = 4.0\n\n[profile]\nkind = "gaussian"\n')
    config = load_run_config(path, ["grid.L=6.0"])
    assert config.grid.n == 8
    assert config.grid.L == 6.0
    assert config.profile.kind == "gaussian"


def test_settings_from_environment(monkeypatch):
    """Process settings read HARTREE_* variables."""
    monkeypatch.setenv("HARTREE_WORKERS", "3")
    monkeypatch.setenv("HARTREE_LOG_LEVEL", "DEBUG")
    settings = get_settings()
    assert settings.workers == 3
    assert settings.log_level == "DEBUG"


def test_lab_wraps_invalid_profile():
    """Values that pass the schema but not the model surface as configuration errors."""
    config = load_run_config(None, ["profile.kind=bose", "profile.mu=0.0"])
    lab = HartreeLab(config, LabSettings())
    with pytest.raises(ConfigError):
        lab.distribution


def test_lab_equilibrium_run_has_no_perturbation():
    """With perturbation kind none, X0 is the paired equilibrium."""
    config = load_run_config(CONFIGS / "equilibrium.toml", ["ensemble.N=8"])
    lab = HartreeLab(config, LabSettings())
    assert not lab.perturbation.values.any()
    assert (lab.initial.values == lab.equilibrium.values).all()
    assert lab.initial.provenance is lab.wiener
