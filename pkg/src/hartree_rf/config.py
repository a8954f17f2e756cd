import logging
import math
import tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings

from .errors import ConfigError

logger = logging.getLogger(__name__)


class LabSettings(BaseSettings):
    # Process-wide settings (environment / .env)
    log_level: str = "INFO"
    log_file: Optional[str] = None
    workers: int = 1  # scipy.fft worker threads
    output_root: str = "runs"
    history_dtype: Literal["complex128", "complex64"] = "complex128"
    flop_budget: float = 2e8  # Q2 Fourier oracle refusal threshold

    model_config = {
        "env_file": [
            ".env",  # Current directory
            str(Path(__file__).parent.parent.parent / ".env"),  # Project root
        ],
        "env_prefix": "HARTREE_",
        "case_sensitive": False,
        "extra": "ignore",
    }


def get_settings() -> LabSettings:
    return LabSettings()


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProfileBlock(_Block):
    kind: Literal["fermi", "bose", "bessel", "gaussian", "tabulated"] = "fermi"
    T: float = Field(1.0, gt=0)
    mu: float = 0.0
    alpha: float = 6.0
    table_r: Optional[List[float]] = None
    table_f2: Optional[List[float]] = None
    r_cap: float = Field(200.0, gt=0)
    nodes: int = Field(4096, ge=64)
    r_min: float = Field(1e-3, gt=0)
    r_hmax: float = Field(64.0, gt=0)


class PotentialBlock(_Block):
    atom_weight: float = 1.0
    density_kind: Literal["none", "gaussian", "exponential"] = "none"
    density_params: Dict[str, float] = Field(default_factory=dict)


class GridBlock(_Block):
    dim: Literal[2, 3] = 2
    n: int = 32
    L: float = Field(16.0, gt=0)

    @field_validator("n")
    @classmethod
    def _power_of_two(cls, v: int) -> int:
        if v < 4 or v & (v - 1):
            raise ValueError(f"grid.n must be a power of two >= 4, got {v}")
        return v


class EnsembleBlock(_Block):
    N: int = Field(256, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)


class EvolutionBlock(_Block):
    dt: float = Field(0.01, gt=0)
    steps: int = Field(100, ge=1)
    mode: Literal["frozen", "midpoint"] = "midpoint"
    box_guard_factor: float = 4.0
    enforce_box_guard: bool = True
    phase_budget: float = math.pi
    checkpoint_every: int = 0


class FixedPointBlock(_Block):
    T: float = Field(1.0, gt=0)
    steps: int = Field(32, ge=2)
    tol: float = 1e-8
    max_iter: int = Field(20, ge=1)
    cubic: bool = False
    linear_only: bool = False
    override_hypotheses: bool = False
    c_min: float = 1e-3


class DiagnosticsBlock(_Block):
    xi_cut: Optional[float] = None
    schatten_p: float = 4.1
    schatten_s: float = 0.5
    eps_sweep: List[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0])
    sample_times: int = Field(4, ge=2)
    ladder: List[int] = Field(default_factory=lambda: [16, 32])
    strichartz_p: float = 4.0
    strichartz_q: float = 4.0
    strichartz_s: float = 0.0
    strichartz_T: float = 1.0
    strichartz_steps: int = 16


class PerturbationBlock(_Block):
    kind: Literal["none", "correlated", "independent"] = "correlated"
    amplitude: float = 1e-2
    width: float = 1.0
    center: Optional[List[float]] = None


class VerificationBlock(_Block):
    amplitude: float = 0.1
    modes: List[List[int]] = Field(default_factory=lambda: [[1, 0]])
    T: float = Field(0.5, gt=0)
    steps: int = Field(16, ge=2)
    eta: List[float] = Field(default_factory=lambda: [3.0, 0.0, 0.0])
    eta2: List[float] = Field(default_factory=lambda: [0.0, 1.0, 0.0])
    lambdas: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    p: Literal[1, 2] = 2
    omega_max: float = 8.0
    n_omega: int = 65
    xi_max: float = 4.0
    n_xi: int = 64


class OutputBlock(_Block):
    directory: Optional[str] = None
    field_dtype: Literal["complex128", "complex64"] = "complex128"


class RunConfig(_Block):
    profile: ProfileBlock = Field(default_factory=ProfileBlock)
    potential: PotentialBlock = Field(default_factory=PotentialBlock)
    grid: GridBlock = Field(default_factory=GridBlock)
    ensemble: EnsembleBlock = Field(default_factory=EnsembleBlock)
    evolution: EvolutionBlock = Field(default_factory=EvolutionBlock)
    fixed_point: FixedPointBlock = Field(default_factory=FixedPointBlock)
    diagnostics: DiagnosticsBlock = Field(default_factory=DiagnosticsBlock)
    perturbation: PerturbationBlock = Field(default_factory=PerturbationBlock)
    verification: VerificationBlock = Field(default_factory=VerificationBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)


def parse_override(item: str) -> tuple[List[str], Any]:
    """Split a KEY=VALUE override; VALUE is read as a TOML literal when possible."""
    if "=" not in item:
        raise ConfigError(f"Override '{item}' is not of the form KEY=VALUE")
    key, raw = item.split("=", 1)
    path = [part for part in key.strip().split(".") if part]
    if not path:
        raise ConfigError(f"Override '{item}' has an empty key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return path, value


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    for item in overrides:
        path, value = parse_override(item)
        node = data
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"Override '{item}': '{part}' is not a table")
            node = child
        node[path[-1]] = value
    return data


def load_run_config(
    path: Optional[Path], overrides: Sequence[str] = (), seed: Optional[int] = None
) -> RunConfig:
    """Read, override and validate a run configuration."""
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"Could not read config {path}: {e}") from e

    apply_overrides(data, overrides)
    if seed is not None:
        data.setdefault("ensemble", {})["seed"] = seed

    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration ({path}): {e}") from e

    logger.debug(f"📋 Resolved config: {config.model_dump()}")
    return config
