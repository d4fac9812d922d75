"""Flat key-value run configuration.

A config file is a YAML mapping with scalar or short-list values.  Keys
are the :class:`~irpatch.optim.OptimConfig` field names plus the scene,
detector and experiment keys in :data:`DEFAULTS`.  Unknown keys are
rejected; missing keys take their default and the fallback is logged.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from ..errors import ConfigError, IRPatchError
from ..optim import OptimConfig
from ..pnm import read_pgm
from ..victim import (
    CommandScorer,
    FiniteDifferenceModel,
    SceneSpec,
    TemplateDetector,
)
from . import fixture

log = logging.getLogger(__name__)

_OPTIM_DEFAULTS = {f.name: f.default for f in dataclasses.fields(OptimConfig)}
_SCENE = SceneSpec()

#: Non-optimizer keys and their defaults.
DEFAULTS: dict[str, Any] = {
    # scene
    "height": _SCENE.height,
    "width": _SCENE.width,
    "background": _SCENE.background,
    "blob_center": list(_SCENE.blob_center),
    "blob_axes": list(_SCENE.blob_axes),
    "blob_intensity": _SCENE.blob_intensity,
    "noise_amplitude": _SCENE.noise_amplitude,
    "cover": fixture.COVER_VALUE,
    # victim
    "template": "silhouette",
    "template_range": [-1.0, 1.0],
    "bias": fixture.DETECTOR_BIAS,
    "stride": fixture.DETECTOR_STRIDE,
    "scorer_command": None,
    "fd_step": 1e-4,
    # experiments
    "n_scenes": 50,
    "n_random": 5,
    "max_retries": 200,
    "jitter_center": 4,
    "jitter_step": 2,
    "jitter_intensity": 0.05,
    "binarize_threshold": None,  # None: use v_thre
    "smooth_kernel": 3,
    "iou_threshold": 0.5,
    "snapshots": 0,
}

ALL_DEFAULTS = {**_OPTIM_DEFAULTS, **DEFAULTS}

_PAIRS = ("blob_center", "blob_axes", "template_range")
_INTS = {"T", "gauss_size", "seed", "height", "width", "stride", "n_scenes", "n_random",
         "max_retries", "jitter_center", "jitter_step", "smooth_kernel", "snapshots"}
_OPTIONAL = {"epsilon_max", "scorer_command", "binarize_threshold"}
_STRINGS = {"template", "scorer_command"}


def _coerce(key: str, value):
    if value is None:
        if key in _OPTIONAL:
            return None
        raise ConfigError(key, "must not be empty")
    if key in _PAIRS:
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError(key, "expected a two-element list")
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(key, "expected numbers") from None
    if key in _STRINGS:
        if not isinstance(value, str):
            raise ConfigError(key, "expected a string")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if key in _INTS:
        if int(value) != value:
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


@dataclass(frozen=True)
class RunConfig:
    values: dict
    source: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    @property
    def optim(self) -> OptimConfig:
        return OptimConfig(**{k: self.values[k] for k in _OPTIM_DEFAULTS})

    @property
    def scene(self) -> SceneSpec:
        v = self.values
        return SceneSpec(
            height=v["height"],
            width=v["width"],
            background=v["background"],
            blob_center=tuple(v["blob_center"]),
            blob_axes=tuple(v["blob_axes"]),
            blob_intensity=v["blob_intensity"],
            noise_amplitude=v["noise_amplitude"],
            seed=v["seed"],
        )

    @property
    def jitter(self) -> dict:
        v = self.values
        return {"center": v["jitter_center"], "step": v["jitter_step"], "intensity": v["jitter_intensity"]}

    @property
    def threshold(self) -> float:
        t = self.values["binarize_threshold"]
        return self.values["v_thre"] if t is None else t

    def model(self, support=None):
        """The victim described by the config.

        With ``scorer_command`` set, the external program is wrapped in a
        finite-difference adapter over ``support``.
        """
        v = self.values
        if v["scorer_command"]:
            return FiniteDifferenceModel(CommandScorer(v["scorer_command"]), v["fd_step"], support)
        if v["template"] == "silhouette":
            det = fixture.default_detector()
            return TemplateDetector(det.template, v["bias"], v["stride"], det.box)
        else:
            lo, hi = v["template_range"]
            path = Path(v["template"])
            if self.source and not path.is_absolute():
                path = Path(self.source).parent / path
            template = lo + (hi - lo) * read_pgm(path)
        return TemplateDetector(template, v["bias"], v["stride"])

    def replace(self, **changes) -> RunConfig:
        return build_config({**self.values, **changes}, self.source, quiet=True)


def build_config(raw: dict, source=None, quiet: bool = False) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a key-value mapping")
    values = {}
    for key in raw:
        if key not in ALL_DEFAULTS:
            raise ConfigError(key, "unknown key")
    for key, default in ALL_DEFAULTS.items():
        if key in raw:
            values[key] = _coerce(key, raw[key])
        else:
            values[key] = default
            if not quiet:
                log.info("config key %r not set, using default %r", key, default)
    cfg = RunConfig(values, None if source is None else str(source))
    # surface range errors from the typed objects under the right key
    for probe in ("optim", "scene"):
        try:
            getattr(cfg, probe)
        except IRPatchError as exc:
            raise ConfigError(_guess_key(str(exc), values), str(exc)) from None
    for key in ("n_scenes", "n_random", "max_retries"):
        if values[key] < 1:
            raise ConfigError(key, "must be at least 1")
    if values["smooth_kernel"] < 3 or values["smooth_kernel"] % 2 == 0:
        raise ConfigError("smooth_kernel", "must be odd and at least 3")
    if not 0.0 < values["iou_threshold"] <= 1.0:
        raise ConfigError("iou_threshold", "must lie in (0, 1]")
    if values["snapshots"] < 0:
        raise ConfigError("snapshots", "must be non-negative")
    if values["binarize_threshold"] is not None and not 0.0 < values["binarize_threshold"] < 1.0:
        raise ConfigError("binarize_threshold", "must lie in (0, 1)")
    if not 0.0 <= values["cover"] <= 1.0:
        raise ConfigError("cover", "must lie in [0, 1]")
    return cfg


def _guess_key(message: str, values: dict) -> str:
    hits = [k for k in values if k in message]
    return max(hits, key=len) if hits else "<config>"


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from None
    return build_config(raw or {}, path)
