import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from .. import __version__
from ..config import RunConfig
from ..core.diagnostics import DENSITY_NORMALIZATION
from ..core.field_core import COUNTER_CONTRACT, Grid, WienerSample

logger = logging.getLogger(__name__)

_DTYPES = {"complex128": "<c16", "complex64": "<c8", "float64": "<f8"}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def to_jsonable(payload: Any) -> Any:
    if isinstance(payload, BaseModel):
        return payload.model_dump(mode="json")
    if isinstance(payload, dict):
        return {str(k): to_jsonable(v) for k, v in payload.items()}
    if isinstance(payload, (list, tuple)):
        return [to_jsonable(v) for v in payload]
    if isinstance(payload, np.ndarray):
        return payload.tolist()
    if isinstance(payload, np.generic):
        return payload.item()
    return payload


def config_hash(config: RunConfig, overrides: Sequence[str] = ()) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    digest = hashlib.sha256(canonical)
    for item in overrides:
        digest.update(b"\0" + item.encode("utf-8"))
    return digest.hexdigest()


class RunWriter:
    """Writes the artifacts of one run and the manifest listing them."""

    def __init__(
        self,
        command: str,
        config: RunConfig,
        root: Path,
        out: Optional[Path] = None,
        overrides: Sequence[str] = (),
    ):
        self.command = command
        self.config = config
        self.overrides = list(overrides)
        self.digest = config_hash(config, overrides)
        self.directory = Path(out) if out is not None else Path(root) / f"{command}-{self.digest[:10]}"
        self.directory.mkdir(parents=True, exist_ok=True)
        self.artifacts: Dict[str, str] = {}

    @property
    def log_path(self) -> Path:
        return self.directory / "hartree_rf.log"

    def register_log(self) -> Optional[Path]:
        """Hash the run log once its handler is closed."""
        if not self.log_path.is_file():
            return None
        return self._register(self.log_path)

    def _register(self, path: Path) -> Path:
        self.artifacts[path.name] = _sha256(path)
        logger.debug(f"📋 Wrote {path}")
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.directory / name
        path.write_text(json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return self._register(path)

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self.directory / name
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return self._register(path)

    def write_field(
        self,
        name: str,
        values: np.ndarray,
        grid: Grid,
        t: Any = 0.0,
        wiener: Optional[WienerSample] = None,
        dtype: str = "complex128",
    ) -> Path:
        """Raw little-endian row-major array plus a JSON sidecar describing it."""
        if dtype not in _DTYPES:
            raise ValueError(f"Unsupported field dtype {dtype}")
        array = np.ascontiguousarray(values, dtype=_DTYPES[dtype])
        path = self.directory / f"{name}.bin"
        array.tofile(path)
        self._register(path)
        sidecar = {
            "dtype": dtype,
            "byte_order": "little",
            "layout": "row-major",
            "shape": list(array.shape),
            "grid": {"dim": grid.dim, "n": grid.n, "L": grid.L},
            "t": to_jsonable(t),
            "seed": None if wiener is None else str(wiener.seed),
            "N": None if wiener is None else wiener.N,
            "counter_contract": COUNTER_CONTRACT,
        }
        self.write_json(f"{name}.json", sidecar)
        return path

    def write_manifest(self, summary: Dict[str, Any]) -> Path:
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.config.model_dump(mode="json"),
            "overrides": self.overrides,
            "config_sha256": self.digest,
            "counter_contract": COUNTER_CONTRACT,
            "density_normalization": DENSITY_NORMALIZATION,
            "summary": to_jsonable(summary),
            "artifacts": dict(sorted(self.artifacts.items())),
        }
        path = self.directory / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"✅ Manifest written with {len(self.artifacts)} artifacts to {path}")
        return path
