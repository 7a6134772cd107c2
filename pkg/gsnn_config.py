# -*- coding: utf-8 -*-
"""
gsnn_config.py — Graph SNN • experiment configuration
-----------------------------------------------------
One JSON file per experiment, validated by pydantic.

Precedence, highest first:
    CLI flag  >  environment (GSNN_OUT_DIR, GSNN_THREADS, GSNN_DATA_DIR,
    GSNN_LOG_LEVEL; `.env` is loaded)  >  config file  >  model defaults

Path resolution:
- out_dir from --out or GSNN_OUT_DIR resolves against the working directory,
  out_dir from the config file against the config file's folder;
- the manifest path resolves against the config file's folder;
- dataset files resolve against GSNN_DATA_DIR when set, otherwise against the
  config file's folder (direct paths) or the manifest's folder (catalogued).
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import shutil
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from gsnn_data import Dataset, DatasetError, load_citation_dataset, load_from_manifest, load_manifest
from gsnn_training import RunConfig

load_dotenv()

logger = logging.getLogger("gsnn.config")

LOG_FORMAT = "%(asctime)s [%(levelname)s] GSNN: %(message)s"
EFFECTIVE_CONFIG_NAME = "effective_config.json"


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration, or a referenced path that does not exist."""


class OutputExistsError(RuntimeError):
    """Output directory already holds a run and --force was not given."""


# =========================
#  1. Logging
# =========================

def setup_logging(level: Optional[str] = None, verbose: bool = False) -> None:
    if verbose:
        level = "DEBUG"
    level = (level or os.getenv("GSNN_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT, force=True)


# =========================
#  2. Models
# =========================

class DatasetRef(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    manifest: Optional[str] = None
    content: Optional[str] = None
    cites: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self) -> "DatasetRef":
        if self.manifest is None and (self.content is None or self.cites is None):
            raise ValueError("dataset needs either 'manifest' or both 'content' and 'cites'")
        return self


class SweepGrid(BaseModel):
    model_config = ConfigDict(extra="forbid")

    time_windows: List[int] = Field(default_factory=list)
    stfn: List[bool] = Field(default_factory=list)

    def is_empty(self) -> bool:
        return not self.time_windows and not self.stfn

    def cells(self) -> List[Dict[str, Any]]:
        """Cartesian product of the listed axes as RunConfig overrides."""
        axes = []
        if self.time_windows:
            axes.append([("time_window", t) for t in self.time_windows])
        if self.stfn:
            axes.append([("use_stfn", s) for s in self.stfn])
        if not axes:
            return []
        return [dict(combo) for combo in itertools.product(*axes)]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: DatasetRef
    run: RunConfig = Field(default_factory=RunConfig)
    out_dir: str = "runs/default"
    threads: int = 1
    sweep: SweepGrid = Field(default_factory=SweepGrid)
    profile_accounting: Literal["dense", "sparse_input"] = "dense"
    data_dir: Optional[str] = None


# =========================
#  3. Loading
# =========================

def _env_overrides() -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    if os.getenv("GSNN_OUT_DIR"):
        out["out_dir"] = str(_resolve(Path.cwd(), os.getenv("GSNN_OUT_DIR")))
    if os.getenv("GSNN_THREADS"):
        try:
            out["threads"] = int(os.getenv("GSNN_THREADS"))
        except ValueError as exc:
            raise ConfigError(f"GSNN_THREADS must be an integer, got {os.getenv('GSNN_THREADS')!r}") from exc
    if os.getenv("GSNN_DATA_DIR"):
        out["data_dir"] = str(_resolve(Path.cwd(), os.getenv("GSNN_DATA_DIR")))
    return out


def _resolve(base: Path, value: str) -> Path:
    p = Path(value).expanduser()
    return p if p.is_absolute() else (base / p).resolve()


def load_experiment_config(
    path: Union[str, Path],
    out_dir: Optional[str] = None,
    threads: Optional[int] = None,
    seed: Optional[int] = None,
) -> ExperimentConfig:
    """Read, merge overrides, validate and resolve paths; every failure is a ConfigError."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a JSON object")

    raw.update(_env_overrides())
    if out_dir is not None:
        raw["out_dir"] = str(_resolve(Path.cwd(), out_dir))
    if threads is not None:
        raw["threads"] = threads
    if seed is not None:
        raw.setdefault("run", {})
        raw["run"] = {**raw["run"], "seeds": [seed]}

    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if cfg.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {cfg.threads}")
    return resolve_paths(cfg, path.resolve().parent)


def resolve_paths(cfg: ExperimentConfig, config_dir: Path) -> ExperimentConfig:
    """Absolute paths everywhere, so the echoed config reproduces the run from any folder."""
    ref = cfg.dataset
    data_dir = _resolve(config_dir, cfg.data_dir) if cfg.data_dir else None
    if data_dir is not None and not data_dir.is_dir():
        raise ConfigError(f"data directory not found: {data_dir}")

    if ref.manifest is not None:
        manifest = _resolve(config_dir, ref.manifest)
        if not manifest.exists():
            raise ConfigError(f"dataset manifest not found: {manifest}")
        try:
            entry = load_manifest(manifest).entry(ref.name)
        except DatasetError as exc:
            raise ConfigError(str(exc)) from exc
        base = data_dir or manifest.parent
        content, cites = base / entry.content, base / entry.cites
        ref = ref.model_copy(update={"manifest": str(manifest)})
    else:
        base = data_dir or config_dir
        content, cites = _resolve(base, ref.content), _resolve(base, ref.cites)
        ref = ref.model_copy(update={"content": str(content), "cites": str(cites)})

    for p in (content, cites):
        if not Path(p).exists():
            raise ConfigError(f"dataset file not found: {p}")

    return cfg.model_copy(update={
        "dataset": ref,
        "out_dir": str(_resolve(config_dir, cfg.out_dir)),
        "data_dir": str(data_dir) if data_dir is not None else None,
    })


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    ref = cfg.dataset
    if ref.manifest is not None:
        return load_from_manifest(ref.manifest, ref.name, data_dir=cfg.data_dir)
    return load_citation_dataset(ref.content, ref.cites, name=ref.name)


# =========================
#  4. Output directory
# =========================

def prepare_out_dir(path: Union[str, Path], force: bool = False) -> Path:
    """Fresh directory or refusal; --force clears what was there."""
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if not force:
            raise OutputExistsError(f"output directory {path} is not empty (use --force to replace it)")
        logger.warning("Replacing existing output directory %s", path)
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_effective_config(cfg: ExperimentConfig, out_dir: Union[str, Path]) -> Path:
    target = Path(out_dir) / EFFECTIVE_CONFIG_NAME
    with target.open("w", encoding="utf-8") as f:
        json.dump(cfg.model_dump(mode="json"), f, indent=2, sort_keys=True)
    return target
