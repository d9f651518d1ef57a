"""Flat ``key = value`` run configuration.

Keys are dotted (``grid.b``, ``stlm.variant``, ``train.lr`` ...). Blank lines
and ``#`` comments are ignored; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..errors import ConfigurationError
from ..geometry import GridConfig
from ..head import LossWeights
from ..model import FramePattern, ModelConfig
from ..stlm import STLMConfig
from .synth import SceneSpec


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    batch: int = 4
    jitter: float = 0.25
    clip: float = 5.0
    sequences: int = 4


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    param_seed: int = 0

    def validate(self) -> None:
        self.model.validate()


# key -> (section, field, parser)
def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("none", "") else float(text)


_GRID = {f.name: f.type for f in dataclasses.fields(GridConfig)}
_STLM_KEYS = {"patch_r": int, "heads": int, "samples": int, "variant": str, "c2": int, "c3": int, "c4": int}
_MODEL_KEYS = {"cp": int, "c1": int}
_HEAD_KEYS = {"hidden": int, "assignment": str, "gaussian_sigma": float, "w_offset": float,
              "w_height": float, "w_orientation": float, "focal_alpha": float, "focal_beta": float}
_TRAIN_KEYS = {f.name: type(f.default) for f in dataclasses.fields(TrainConfig)}
_SCENE_KEYS = {f.name: type(f.default) for f in dataclasses.fields(SceneSpec)}
_TRACK_KEYS = {"pattern": str}
_PARAM_KEYS = {"seed": int}


def known_keys() -> list[str]:
    keys = [f"grid.{k}" for k in _GRID]
    keys += [f"stlm.{k}" for k in _STLM_KEYS] + [f"model.{k}" for k in _MODEL_KEYS]
    keys += [f"head.{k}" for k in _HEAD_KEYS] + [f"train.{k}" for k in _TRAIN_KEYS]
    keys += [f"scene.{k}" for k in _SCENE_KEYS] + [f"track.{k}" for k in _TRACK_KEYS]
    keys += [f"params.{k}" for k in _PARAM_KEYS]
    return keys


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    entries: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known_keys():
            raise ConfigurationError(f"{source}:{n}: unknown key {key!r}")
        if key in entries:
            raise ConfigurationError(f"{source}:{n}: duplicate key {key!r}")
        entries[key] = value
    return entries


def _convert(key: str, value: str, kind) -> Any:
    try:
        if kind in (int, "int"):
            return int(value)
        if kind in (float, "float"):
            return float(value)
        if kind in (bool, "bool"):
            return _bool(value)
        return value
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {value!r} as {getattr(kind, '__name__', kind)}") from None


def _section(entries: dict[str, str], prefix: str, kinds: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for key, value in entries.items():
        sec, _, name = key.partition(".")
        if sec == prefix:
            out[name] = _convert(key, value, kinds[name])
    return out


def build_run_config(entries: dict[str, str]) -> RunConfig:
    grid = GridConfig(**_section(entries, "grid", _GRID))
    stlm = STLMConfig(**_section(entries, "stlm", _STLM_KEYS))
    head = _section(entries, "head", _HEAD_KEYS)
    assignment = head.pop("assignment", "foreground")
    if assignment not in ("foreground", "gaussian"):
        raise ConfigurationError(f"head.assignment must be 'foreground' or 'gaussian', got {assignment!r}")
    sigma = head.pop("gaussian_sigma", 1.0) if assignment == "gaussian" else None
    head.pop("gaussian_sigma", None)
    hidden = head.pop("hidden", 32)
    loss = LossWeights(
        offset=head.get("w_offset", 1.0),
        height=head.get("w_height", 1.0),
        orientation=head.get("w_orientation", 1.0),
        focal_alpha=head.get("focal_alpha", 2.0),
        focal_beta=head.get("focal_beta", 4.0),
    )
    track = _section(entries, "track", _TRACK_KEYS)
    pattern = FramePattern.parse(track["pattern"]) if "pattern" in track else FramePattern()
    model = ModelConfig(grid=grid, pattern=pattern, head_hidden=hidden, stlm=stlm,
                        gaussian_sigma=sigma, **_section(entries, "model", _MODEL_KEYS))
    train = TrainConfig(**_section(entries, "train", _TRAIN_KEYS))
    seed = _section(entries, "params", _PARAM_KEYS).get("seed", 0)
    cfg = RunConfig(model=model, loss=loss, train=train, param_seed=seed)
    cfg.validate()
    return cfg


def build_scene(entries: dict[str, str]) -> SceneSpec:
    return SceneSpec(**_section(entries, "scene", _SCENE_KEYS))


def load_config(path: str | Path | None) -> tuple[RunConfig, SceneSpec]:
    entries = {} if path is None else parse_text(Path(path).read_text(), str(path))
    return build_run_config(entries), build_scene(entries)


def dump_config(cfg: RunConfig, scene: SceneSpec | None = None) -> str:
    """Render a config back to the flat text format."""
    m = cfg.model
    lines = [f"grid.{k} = {getattr(m.grid, k)}" for k in _GRID]
    lines += [f"stlm.{k} = {getattr(m.stlm, k)}" for k in _STLM_KEYS]
    lines += [f"model.cp = {m.cp}", f"model.c1 = {m.c1}", f"head.hidden = {m.head_hidden}"]
    if m.gaussian_sigma is None:
        lines.append("head.assignment = foreground")
    else:
        lines += ["head.assignment = gaussian", f"head.gaussian_sigma = {m.gaussian_sigma}"]
    lines += [f"head.w_offset = {cfg.loss.offset}", f"head.w_height = {cfg.loss.height}",
              f"head.w_orientation = {cfg.loss.orientation}", f"head.focal_alpha = {cfg.loss.focal_alpha}",
              f"head.focal_beta = {cfg.loss.focal_beta}"]
    lines.append(f"track.pattern = {m.pattern}")
    lines += [f"train.{k} = {getattr(cfg.train, k)}" for k in _TRAIN_KEYS]
    lines.append(f"params.seed = {cfg.param_seed}")
    if scene is not None:
        lines += [f"scene.{k} = {getattr(scene, k)}" for k in _SCENE_KEYS]
    return "\n".join(lines) + "\n"
