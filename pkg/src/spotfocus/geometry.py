"""Panel geometry, room layout, and radiating-zone classification.

The panel is a rectangular grid of radiating elements mounted flat against
one wall of a box-shaped room, partitioned into equal rectangular
subarrays.  Distances here are meters, frequencies Hz, angles radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# Box surfaces in canonical order: low/high wall along each axis.
SURFACES = ("x0", "x1", "y0", "y1", "z0", "z1")

# In-plane unit axes (u = column direction, v = row direction) for a panel
# whose plane is orthogonal to the named axis.
_PLANE_AXES = {
    "x": (np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])),
    "y": (np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])),
    "z": (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
}


class ConfigError(ValueError):
    """Invalid scene or experiment configuration."""


def as_point(p) -> np.ndarray:
    """Coerce a 3-sequence to a float64 xyz array."""
    arr = np.asarray(p, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ConfigError(f"expected an xyz triple, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ApertureConfig:
    """Element grid of the panel and its placement.

    The grid is ``modules_rows x modules_cols`` subarrays of
    ``sub_rows x sub_cols`` elements each; the full grid is their product.
    ``corner_m`` is the position of element (0, 0); rows advance along the
    in-plane v axis and columns along the in-plane u axis of
    ``plane_normal``.  ``element_spacing_m`` defaults to half a wavelength.
    ``phase_bits`` is the phase-shifter resolution: each element picks one
    of ``2**phase_bits`` evenly spaced phases.
    """

    sub_rows: int = 6
    sub_cols: int = 6
    modules_rows: int = 10
    modules_cols: int = 10
    frequency_hz: float = 28e9
    element_spacing_m: float | None = None
    corner_m: tuple[float, float, float] = (1.0, 0.0, 1.5)
    plane_normal: str = "y"
    phase_bits: int = 3

    def __post_init__(self):
        for name in ("sub_rows", "sub_cols", "modules_rows", "modules_cols"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive count")
        if self.frequency_hz <= 0:
            raise ConfigError("frequency_hz must be positive")
        if self.element_spacing_m is not None and self.element_spacing_m <= 0:
            raise ConfigError("element_spacing_m must be positive")
        if self.plane_normal not in _PLANE_AXES:
            raise ConfigError(f"plane_normal must be one of {sorted(_PLANE_AXES)}")
        if int(self.phase_bits) < 1:
            raise ConfigError("phase_bits must be >= 1")

    @property
    def rows(self) -> int:
        return self.modules_rows * self.sub_rows

    @property
    def cols(self) -> int:
        return self.modules_cols * self.sub_cols

    @property
    def num_elements(self) -> int:
        return self.rows * self.cols

    @property
    def num_subarrays(self) -> int:
        return self.modules_rows * self.modules_cols

    @property
    def subarray_elements(self) -> int:
        return self.sub_rows * self.sub_cols

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.frequency_hz

    @property
    def spacing(self) -> float:
        if self.element_spacing_m is not None:
            return self.element_spacing_m
        return self.wavelength / 2.0

    @property
    def plane_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """(u, v) in-plane unit vectors: u along columns, v along rows."""
        u, v = _PLANE_AXES[self.plane_normal]
        return u.copy(), v.copy()

    @property
    def diagonal(self) -> float:
        """Aperture diagonal, corner element to corner element."""
        side_u = (self.cols - 1) * self.spacing
        side_v = (self.rows - 1) * self.spacing
        return math.hypot(side_u, side_v)


def element_positions(aperture: ApertureConfig) -> np.ndarray:
    """Positions of every element, shape (rows, cols, 3)."""
    u, v = aperture.plane_axes
    corner = as_point(aperture.corner_m)
    i = np.arange(aperture.rows, dtype=np.float64)
    j = np.arange(aperture.cols, dtype=np.float64)
    s = aperture.spacing
    return (
        corner[None, None, :]
        + i[:, None, None] * s * v[None, None, :]
        + j[None, :, None] * s * u[None, None, :]
    )


def aperture_center(aperture: ApertureConfig) -> np.ndarray:
    """Geometric center of the element grid."""
    u, v = aperture.plane_axes
    corner = as_point(aperture.corner_m)
    s = aperture.spacing
    return corner + (aperture.cols - 1) / 2.0 * s * u + (aperture.rows - 1) / 2.0 * s * v


def subarray_slices(aperture: ApertureConfig, m: int) -> tuple[slice, slice]:
    """Row/col slices of subarray ``m`` in the full grid.

    Subarrays are numbered row-major over the module grid, 0-based:
    m = module_row * modules_cols + module_col.
    """
    if not 0 <= m < aperture.num_subarrays:
        raise ValueError(f"subarray index {m} out of range 0..{aperture.num_subarrays - 1}")
    mr, mc = divmod(m, aperture.modules_cols)
    return (
        slice(mr * aperture.sub_rows, (mr + 1) * aperture.sub_rows),
        slice(mc * aperture.sub_cols, (mc + 1) * aperture.sub_cols),
    )


def subarray_center(aperture: ApertureConfig, m: int) -> np.ndarray:
    """Geometric center of subarray ``m``."""
    rs, cs = subarray_slices(aperture, m)
    pos = element_positions(aperture)
    block = pos[rs, cs]
    return block.reshape(-1, 3).mean(axis=0)


def fresnel_bounds(aperture: ApertureConfig) -> tuple[float, float]:
    """(lower, upper) radial bounds of the radiating near-field zone.

    Upper bound 2 D^2 / lambda separates near field from far field; lower
    bound 0.62 sqrt(D^3 / lambda) separates it from the reactive zone,
    with D the aperture diagonal.
    """
    d = aperture.diagonal
    lam = aperture.wavelength
    upper = 2.0 * d * d / lam
    lower = 0.62 * math.sqrt(d**3 / lam)
    return lower, upper


class ZoneCheck(NamedTuple):
    zone: str  # "reactive" | "radiating-near-field" | "far-field"
    distance: float
    lower: float
    upper: float


def classify_zone(aperture: ApertureConfig, focal_point) -> ZoneCheck:
    """Classify a focal point by its distance from the aperture center.

    Spot focusing needs the radiating near field; points outside it are
    still simulatable, so callers warn rather than reject.
    """
    p = as_point(focal_point)
    dist = float(np.linalg.norm(p - aperture_center(aperture)))
    lower, upper = fresnel_bounds(aperture)
    if dist < lower:
        zone = "reactive"
    elif dist <= upper:
        zone = "radiating-near-field"
    else:
        zone = "far-field"
    return ZoneCheck(zone, dist, lower, upper)


def panel_normal(aperture: ApertureConfig, room: "RoomConfig | None" = None) -> np.ndarray:
    """Unit normal of the panel plane, oriented into the room when one is
    given (toward the room center), else along the positive axis."""
    n = np.zeros(3)
    n["xyz".index(aperture.plane_normal)] = 1.0
    if room is not None:
        center = np.asarray(room.dimensions_m, dtype=np.float64) / 2.0
        if float(np.dot(center - aperture_center(aperture), n)) < 0.0:
            n = -n
    return n


@dataclass(frozen=True)
class RoomConfig:
    """Box room with flat reflecting surfaces.

    ``reflection_coefficient`` is the shared amplitude attenuation of a
    single bounce.  Each enabled surface carries one random reflection
    phase per scenario, drawn uniformly from [0, 2*pi) under
    ``reflection_phase_seed``.
    """

    dimensions_m: tuple[float, float, float] = (4.0, 4.0, 3.0)
    reflection_coefficient: float = 0.1
    reflection_phase_seed: int = 0
    surfaces: tuple[str, ...] = SURFACES

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dimensions_m)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ConfigError(f"degenerate room dimensions {self.dimensions_m}")
        if not 0.0 <= self.reflection_coefficient <= 1.0:
            raise ConfigError("reflection_coefficient must lie in [0, 1]")
        unknown = set(self.surfaces) - set(SURFACES)
        if unknown:
            raise ConfigError(f"unknown surfaces {sorted(unknown)}")
        if len(set(self.surfaces)) != len(self.surfaces):
            raise ConfigError("duplicate surfaces")


def mirror_point(point, surface: str, room: RoomConfig) -> np.ndarray:
    """First-order image of ``point`` across one room surface."""
    p = as_point(point).copy()
    axis = "xyz".index(surface[0])
    if surface[1] == "0":
        p[axis] = -p[axis]
    else:
        p[axis] = 2.0 * room.dimensions_m[axis] - p[axis]
    return p
