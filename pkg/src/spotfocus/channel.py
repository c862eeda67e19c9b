"""Multipath channel between panel elements and a focal point.

Each element sees a line-of-sight path plus one first-order reflection
per enabled room surface (image-source construction).  A path of length d
contributes amplitude gamma * d^(-alpha/2) and phase -(k d + dtheta) with
k = 2*pi/lambda; reflected paths are further attenuated by the surface
reflection coefficient and pick up that surface's random phase.  Element
and receiver gains are unity.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    SURFACES,
    ApertureConfig,
    RoomConfig,
    as_point,
    element_positions,
    mirror_point,
)
from .seeding import spawn


@dataclass(frozen=True)
class ChannelConfig:
    """Propagation constants and hardware imperfection model.

    ``hardware_phase_mismatch_std`` is the standard deviation (radians) of
    a per-element Gaussian phase error added to the line-of-sight term,
    drawn once per scenario under ``phase_mismatch_seed``.
    """

    attenuation_coefficient: float = 1.0
    path_loss_exponent: float = 2.7
    hardware_phase_mismatch_std: float = 0.0
    phase_mismatch_seed: int = 0

    def __post_init__(self):
        if self.attenuation_coefficient <= 0:
            raise ValueError("attenuation_coefficient must be positive")
        if self.path_loss_exponent <= 0:
            raise ValueError("path_loss_exponent must be positive")
        if self.hardware_phase_mismatch_std < 0:
            raise ValueError("hardware_phase_mismatch_std must be >= 0")


def reflection_phases(room: RoomConfig) -> dict[str, float]:
    """Random reflection phase per enabled surface, fixed per scenario.

    All six surfaces are drawn in canonical order so that enabling or
    disabling one never changes the phases of the others.
    """
    rng = spawn(room.reflection_phase_seed, "surface-phases")
    draws = rng.uniform(0.0, 2.0 * np.pi, size=len(SURFACES))
    table = dict(zip(SURFACES, draws))
    return {s: float(table[s]) for s in room.surfaces}


def hardware_phase_mismatch(aperture: ApertureConfig, chan: ChannelConfig) -> np.ndarray:
    """Per-element LOS phase error grid, shape (rows, cols)."""
    if chan.hardware_phase_mismatch_std == 0.0:
        return np.zeros((aperture.rows, aperture.cols))
    rng = spawn(chan.phase_mismatch_seed, "hardware-phase-mismatch")
    return rng.normal(0.0, chan.hardware_phase_mismatch_std, size=(aperture.rows, aperture.cols))


def num_reflections(room: RoomConfig | None) -> int:
    return 0 if room is None else len(room.surfaces)


@dataclass(frozen=True)
class ChannelMatrix:
    """Complex element-to-focal-point gains for one scenario.

    ``entries`` has shape (rows, cols) matching the element grid.
    ``provenance`` records the scenario fingerprint (aperture/channel hash
    and the seeds involved) so downstream artifacts can be traced back.
    """

    entries: np.ndarray
    focal_point: np.ndarray
    provenance: tuple = ()

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]


def _scenario_fingerprint(aperture: ApertureConfig, chan: ChannelConfig, room: RoomConfig | None) -> str:
    text = repr((aperture, chan, room))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def channel_at_points(
    aperture: ApertureConfig,
    points: np.ndarray,
    chan: ChannelConfig,
    room: RoomConfig | None = None,
) -> np.ndarray:
    """Channel gains from every element to each receiver point.

    ``points`` has shape (P, 3); the result has shape (P, rows, cols).
    Reflection phases and hardware mismatch are scenario-level draws, so
    every point shares them.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (P, 3), got {pts.shape}")
    pos = element_positions(aperture)  # (rows, cols, 3)
    k = 2.0 * np.pi / aperture.wavelength
    gamma = chan.attenuation_coefficient
    half_alpha = chan.path_loss_exponent / 2.0

    diff = pts[:, None, None, :] - pos[None, :, :, :]
    d_los = np.sqrt(np.sum(diff * diff, axis=-1))  # (P, rows, cols)
    if np.any(d_los == 0.0):
        raise ValueError("receiver point coincides with a panel element")

    mismatch = hardware_phase_mismatch(aperture, chan)
    h = gamma * d_los**-half_alpha * np.exp(-1j * (k * d_los + mismatch[None, :, :]))

    if room is not None and room.reflection_coefficient > 0.0 and room.surfaces:
        phases = reflection_phases(room)
        beta = room.reflection_coefficient
        for surface in room.surfaces:
            images = np.stack([mirror_point(p, surface, room) for p in pts])
            rdiff = images[:, None, None, :] - pos[None, :, :, :]
            d_ref = np.sqrt(np.sum(rdiff * rdiff, axis=-1))
            if np.any(d_ref == 0.0):
                raise ValueError(f"image of receiver across {surface} coincides with an element")
            h = h + gamma * beta * d_ref**-half_alpha * np.exp(-1j * (k * d_ref + phases[surface]))
    return h


def channel_matrix(
    aperture: ApertureConfig,
    focal_point,
    chan: ChannelConfig | None = None,
    room: RoomConfig | None = None,
) -> ChannelMatrix:
    """Scenario channel from the whole panel to one focal point."""
    chan = chan or ChannelConfig()
    fp = as_point(focal_point)
    entries = channel_at_points(aperture, fp[None, :], chan, room)[0]
    seeds = (
        room.reflection_phase_seed if room is not None else None,
        chan.phase_mismatch_seed,
    )
    return ChannelMatrix(
        entries=entries,
        focal_point=fp,
        provenance=(_scenario_fingerprint(aperture, chan, room), seeds),
    )
