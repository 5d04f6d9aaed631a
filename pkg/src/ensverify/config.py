"""Run configuration: an INI file with a ``[run]`` section, overridable by flags.

Keys (all optional, defaults in ``RunConfig``)::

    [run]
    digits = true                 ; use the bundled 8x8 digits instead of IDX paths
    train_images = path           ; IDX training images (validation is carved from these)
    train_labels = path
    test_images = path
    test_labels = path
    val_fraction = 0.2
    downscale = 1
    hidden = 12                   ; comma separated hidden widths
    epochs = 60
    batch_size = 32
    learning_rate = 0.3
    pool_size = 6                 ; n
    ensemble_size = 3             ; k
    m = 30
    label_filter =                ; empty means any label
    eps_list = 0.01,0.02,0.03,0.04,0.05,0.06
    mode = runner_up              ; or full
    backend = verifier            ; or ga1 / ga2 / ga3
    timeout = 60
    workers = 1
    seed = 0
    eval_points = 20
    max_iters = 10
    steps = 10
    clip_domain = false
    out_dir = run
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

from .scoring import BACKENDS
from .verifier import DEFAULT_TIMEOUT
from .verifier.query import MODES


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    digits: bool = True
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    val_fraction: float = 0.2
    downscale: int = 1
    hidden: Tuple[int, ...] = (12,)
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.3
    pool_size: int = 6
    ensemble_size: int = 3
    m: int = 30
    label_filter: Optional[int] = None
    eps_list: Tuple[float, ...] = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06)
    mode: str = "runner_up"
    backend: str = "verifier"
    timeout: float = DEFAULT_TIMEOUT
    workers: int = 1
    seed: int = 0
    eval_points: int = 20
    max_iters: int = 10
    steps: int = 10
    clip_domain: bool = False
    out_dir: str = "run"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.pool_size > self.ensemble_size >= 2:
            raise ConfigError(f"need pool_size > ensemble_size >= 2, got n={self.pool_size} k={self.ensemble_size}")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if not self.eps_list or any(not e > 0 for e in self.eps_list):
            raise ConfigError("eps_list must be non-empty and strictly positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.timeout <= 0 or self.workers < 1 or self.eval_points < 1 or self.max_iters < 0:
            raise ConfigError("timeout, workers and eval_points must be positive, max_iters >= 0")
        if not self.digits and not (self.train_images and self.train_labels):
            raise ConfigError("either digits = true or train_images/train_labels must be set")

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _convert(name: str, raw: str):
    raw = raw.strip()
    default = RunConfig.__dataclass_fields__[name].default
    if name == "hidden":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if name == "eps_list":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if name == "label_filter":
        return int(raw) if raw else None
    if name == "mode":
        return raw.replace("-", "_")
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw or None


def load_config(path=None, **overrides) -> RunConfig:
    """Read ``path`` (if any), then apply non-None ``overrides``."""
    values = {}
    if path is not None:
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise ConfigError(f"cannot read config file {path}")
        if "run" not in cp:
            raise ConfigError(f"{path}: missing [run] section")
        known = set(RunConfig.__dataclass_fields__) - {"extra"}
        for key, raw in cp["run"].items():
            if key not in known:
                raise ConfigError(f"{path}: unknown key {key!r}")
            try:
                values[key] = _convert(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {key}: {exc}") from exc
        base = Path(path).resolve().parent
        for key in ("train_images", "train_labels", "test_images", "test_labels", "out_dir"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str(base / values[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    if values.get("train_images") and "digits" not in values:
        values["digits"] = False
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser()
    out = {}
    for f in dataclasses.fields(cfg):
        if f.name == "extra":
            continue
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif v is None:
            v = ""
        elif isinstance(v, float):
            v = repr(v)
        out[f.name] = str(v).lower() if isinstance(getattr(cfg, f.name), bool) else str(v)
    cp["run"] = out
    import io

    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
