"""Experiment configuration: YAML schema, validation, and stock scenes.

A config file is a nested mapping with an ``experiment`` section (kind,
seed, budget, output directory) plus ``scene``, ``agent``,
``propagation``, ``blending``, ``plane``, and kind-specific ``options``.
All randomness derives from the experiment seed; there is no ambient
entropy.  Key names carry units (``_m``, ``_hz``, ``_deg``) where a unit
applies.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .beams import ReferencePlane
from .channel import ChannelConfig, ChannelMatrix, channel_matrix
from .geometry import ApertureConfig, ConfigError, RoomConfig, as_point
from .td3 import AgentConfig
from .transfer import BlendingConfig, PropagationConfig, QllSchedule

EXPERIMENT_KINDS = (
    "train-baseline",
    "train-pp",
    "blend",
    "similarity-map",
    "power-map",
    "monte-carlo-blend",
    "orthogonality-probe",
)

_TUPLE_FIELDS = {"corner_m", "dimensions_m", "surfaces"}


def _build(cls, data: dict | None, where: str):
    """Instantiate a config dataclass from a mapping, strictly."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown} (allowed: {sorted(names)})")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class SceneConfig:
    """Panel, room, channel, and measurement setup for one focal point."""

    aperture: ApertureConfig = field(default_factory=ApertureConfig)
    room: RoomConfig | None = field(default_factory=RoomConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    focal_point_m: tuple[float, float, float] = (1.0, 1.5, 1.4)
    signal_variance: float = 1.0
    noise_variance: float = 0.0

    def __post_init__(self):
        as_point(self.focal_point_m)
        if self.signal_variance <= 0:
            raise ConfigError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be >= 0")

    @property
    def focal_point(self) -> np.ndarray:
        return as_point(self.focal_point_m)


def scene_channel(scene: SceneConfig, focal_point=None) -> ChannelMatrix:
    """Channel matrix of the scene, optionally at an alternate point."""
    fp = scene.focal_point if focal_point is None else as_point(focal_point)
    return channel_matrix(scene.aperture, fp, scene.channel, scene.room)


def _build_scene(data: dict | None, where: str = "scene") -> SceneConfig:
    data = dict(data or {})
    aperture = _build(ApertureConfig, data.pop("aperture", None), f"{where}.aperture")
    room_data = data.pop("room", {})
    room = None if room_data is None else _build(RoomConfig, room_data, f"{where}.room")
    chan = _build(ChannelConfig, data.pop("channel", None), f"{where}.channel")
    if "focal_point_m" in data and isinstance(data["focal_point_m"], list):
        data["focal_point_m"] = tuple(data["focal_point_m"])
    extra = {"aperture": aperture, "room": room, "channel": chan, **data}
    return _build(SceneConfig, extra, where)


def _build_propagation(data: dict | None, where: str = "propagation") -> PropagationConfig:
    data = dict(data or {})
    qll = _build(QllSchedule, data.pop("qll", None), f"{where}.qll")
    return _build(PropagationConfig, {"qll": qll, **data}, where)


@dataclass(frozen=True)
class ExperimentConfig:
    """One runnable experiment."""

    kind: str
    seed: int
    scene: SceneConfig = field(default_factory=SceneConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    blending: BlendingConfig = field(default_factory=BlendingConfig)
    plane: ReferencePlane = field(default_factory=ReferencePlane)
    budget_iterations: int = 20_000
    output_dir: str | None = None
    figures: bool = True
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; "
                              f"expected one of {list(EXPERIMENT_KINDS)}")
        if self.budget_iterations < 0:
            raise ConfigError("budget_iterations must be >= 0")

    def resolved_output_dir(self) -> Path:
        if self.output_dir is not None:
            return Path(self.output_dir)
        return Path("runs") / f"{self.kind}-seed{self.seed}"


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    known = {"experiment", "scene", "agent", "propagation", "blending", "plane", "options"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level sections {unknown} (allowed: {sorted(known)})")
    exp = data.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigError("missing required 'experiment' section")
    exp = dict(exp)
    if "kind" not in exp:
        raise ConfigError("experiment.kind is required")
    if "seed" not in exp:
        raise ConfigError("experiment.seed is required; runs must be reproducible")
    allowed = {"kind", "seed", "budget_iterations", "output_dir", "figures"}
    unknown = sorted(set(exp) - allowed)
    if unknown:
        raise ConfigError(f"experiment: unknown keys {unknown} (allowed: {sorted(allowed)})")
    options = data.get("options") or {}
    if not isinstance(options, dict):
        raise ConfigError("options must be a mapping")
    return ExperimentConfig(
        kind=exp["kind"],
        seed=int(exp["seed"]),
        budget_iterations=int(exp.get("budget_iterations", 20_000)),
        output_dir=exp.get("output_dir"),
        figures=bool(exp.get("figures", True)),
        scene=_build_scene(data.get("scene")),
        agent=_build(AgentConfig, data.get("agent"), "agent"),
        propagation=_build_propagation(data.get("propagation")),
        blending=_build(BlendingConfig, data.get("blending"), "blending"),
        plane=_build(ReferencePlane, data.get("plane"), "plane"),
        options=dict(options),
    )


def _load_yaml(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        raise ConfigError(f"{path}: empty config")
    return data


def load_config(path) -> ExperimentConfig:
    return config_from_dict(_load_yaml(path))


def load_scene(path) -> tuple[SceneConfig, ReferencePlane]:
    """Scene and reference plane from a config file.

    Reads only the ``scene`` and ``plane`` sections, so a full experiment
    config doubles as input for one-off spot checks.
    """
    data = _load_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    scene = _build_scene(data.get("scene"))
    plane = _build(ReferencePlane, data.get("plane"), "plane")
    return scene, plane


def plain(obj):
    """Recursively convert configs and arrays to YAML-safe builtins."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Full config snapshot, defaults included, for run manifests."""
    return {
        "experiment": {
            "kind": cfg.kind,
            "seed": cfg.seed,
            "budget_iterations": cfg.budget_iterations,
            "output_dir": cfg.output_dir,
            "figures": cfg.figures,
        },
        "scene": plain(cfg.scene),
        "agent": plain(cfg.agent),
        "propagation": plain(cfg.propagation),
        "blending": plain(cfg.blending),
        "plane": plain(cfg.plane),
        "options": plain(cfg.options),
    }


def paper_aperture() -> ApertureConfig:
    """Full-scale panel: 10x10 modules of 6x6 elements at 28 GHz."""
    return ApertureConfig(
        sub_rows=6, sub_cols=6, modules_rows=10, modules_cols=10,
        frequency_hz=28e9, corner_m=(1.0, 0.0, 1.5), plane_normal="y", phase_bits=3,
    )


def desk_aperture() -> ApertureConfig:
    """Reduced panel for fast runs: 3x3 modules of 4x4 elements, centered
    on the room wall at (2, 0, 1.5)."""
    probe = ApertureConfig(sub_rows=4, sub_cols=4, modules_rows=3, modules_cols=3,
                           frequency_hz=28e9, plane_normal="y", phase_bits=3)
    half = (probe.rows - 1) / 2.0 * probe.spacing
    return ApertureConfig(
        sub_rows=4, sub_cols=4, modules_rows=3, modules_cols=3,
        frequency_hz=28e9, corner_m=(2.0 - half, 0.0, 1.5 - half),
        plane_normal="y", phase_bits=3,
    )


def paper_scene() -> SceneConfig:
    return SceneConfig(
        aperture=paper_aperture(),
        room=RoomConfig(),
        channel=ChannelConfig(),
        focal_point_m=(1.0, 1.5, 1.4),
    )


def desk_scene(focal_point_m=(2.0, 0.35, 1.5), reflection_phase_seed: int = 0) -> SceneConfig:
    return SceneConfig(
        aperture=desk_aperture(),
        room=RoomConfig(reflection_phase_seed=reflection_phase_seed),
        channel=ChannelConfig(),
        focal_point_m=tuple(focal_point_m),
    )


def desk_agent() -> AgentConfig:
    """Agent defaults rescaled to desk budgets: faster exploration decay
    so tens-of-thousands-step runs actually plateau."""
    return AgentConfig(exploration_noise_decay=2e-4)
