"""Quantized beamfocusing matrices and derived power quantities.

A beamfocusing matrix holds one phase index per element; element (i, j)
applies weight exp(j * 2*pi * idx / 2**phase_bits) / sqrt(N) with N the
element count of the matrix, so splitting a full-panel matrix into
subarray blocks only rescales amplitudes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .channel import ChannelConfig, ChannelMatrix, channel_at_points
from .geometry import ApertureConfig, RoomConfig, as_point, subarray_slices

TWO_PI = 2.0 * np.pi


def quantize_phases(phases: np.ndarray, phase_bits: int) -> np.ndarray:
    """Nearest quantized phase index, ties resolved to the lower index.

    Levels are 2*pi*k/2**phase_bits for k = 0..2**phase_bits-1; input
    phases may be any real radians and are wrapped.
    """
    levels = 1 << int(phase_bits)
    step = TWO_PI / levels
    idx = np.ceil(np.asarray(phases, dtype=np.float64) / step - 0.5).astype(np.int64)
    return np.mod(idx, levels)


def wrap_signed(phases: np.ndarray) -> np.ndarray:
    """Wrap radians to [-pi, pi)."""
    return np.mod(np.asarray(phases, dtype=np.float64) + np.pi, TWO_PI) - np.pi


@dataclass(frozen=True)
class BeamMatrix:
    """Phase-index grid of a panel or one of its subarrays.

    ``idx`` holds integers in [0, 2**phase_bits); ``subarray`` optionally
    tags which block of the full panel this matrix belongs to.
    """

    idx: np.ndarray
    phase_bits: int
    subarray: int | None = None

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=np.int64)
        if idx.ndim != 2:
            raise ValueError("idx must be a 2-D grid")
        levels = 1 << int(self.phase_bits)
        if idx.min(initial=0) < 0 or idx.max(initial=0) >= levels:
            raise ValueError(f"phase indices out of range for {self.phase_bits} bits")
        object.__setattr__(self, "idx", idx)

    @property
    def levels(self) -> int:
        return 1 << self.phase_bits

    @property
    def num_elements(self) -> int:
        return int(self.idx.size)

    def phases(self) -> np.ndarray:
        """Element phases in [0, 2*pi)."""
        return self.idx * (TWO_PI / self.levels)

    def signed_phases(self) -> np.ndarray:
        return wrap_signed(self.phases())

    def weights(self) -> np.ndarray:
        """Complex element weights, amplitude 1/sqrt(N)."""
        return np.exp(1j * self.phases()) / np.sqrt(self.num_elements)

    @classmethod
    def from_phases(cls, phases: np.ndarray, phase_bits: int, subarray: int | None = None) -> "BeamMatrix":
        return cls(quantize_phases(phases, phase_bits), phase_bits, subarray)

    @classmethod
    def zeros(cls, rows: int, cols: int, phase_bits: int, subarray: int | None = None) -> "BeamMatrix":
        return cls(np.zeros((rows, cols), dtype=np.int64), phase_bits, subarray)


class PowerMeasurement(NamedTuple):
    power: float
    signal_variance: float
    noise_variance: float


def received_power(
    w: BeamMatrix,
    h: ChannelMatrix | np.ndarray,
    signal_variance: float = 1.0,
    noise_variance: float = 0.0,
) -> PowerMeasurement:
    """Mean received power |sum conj(w) * h|^2 * sigma_s^2 + sigma_nu^2."""
    entries = h.entries if isinstance(h, ChannelMatrix) else np.asarray(h)
    if entries.shape != w.idx.shape:
        raise ValueError(f"shape mismatch: channel {entries.shape} vs matrix {w.idx.shape}")
    amp = np.vdot(w.weights(), entries)  # sum of conj(w) * h
    power = float(np.abs(amp) ** 2) * signal_variance + noise_variance
    return PowerMeasurement(power, signal_variance, noise_variance)


def csi_oracle(h: ChannelMatrix | np.ndarray, phase_bits: int) -> BeamMatrix:
    """Best per-element phase match to the channel, quantized.

    Each element's phase is set to the quantized argument of its channel
    gain so all terms of the power sum align (up to quantization).
    """
    entries = h.entries if isinstance(h, ChannelMatrix) else np.asarray(h)
    return BeamMatrix.from_phases(np.mod(np.angle(entries), TWO_PI), phase_bits)


def oracle_power(h: ChannelMatrix | np.ndarray, signal_variance: float = 1.0) -> float:
    """Power of the continuous-phase alignment, (sum |h| / sqrt(N))^2 * sigma_s^2.

    Upper-bounds every quantized matrix; used to normalize power traces.
    """
    entries = h.entries if isinstance(h, ChannelMatrix) else np.asarray(h)
    total = float(np.abs(entries).sum())
    return total * total / entries.size * signal_variance


def assemble_matrix(subs: Sequence[BeamMatrix], modules_rows: int, modules_cols: int) -> BeamMatrix:
    """Tile subarray matrices into the full-panel matrix.

    Tagged inputs are placed by their ``subarray`` index (row-major over
    the module grid); untagged inputs are placed in the given order.
    """
    if len(subs) != modules_rows * modules_cols:
        raise ValueError(f"expected {modules_rows * modules_cols} submatrices, got {len(subs)}")
    tags = [s.subarray for s in subs]
    if any(t is not None for t in tags):
        if sorted(tags) != list(range(len(subs))):
            raise ValueError(f"subarray tags must be exactly 0..{len(subs) - 1}, got {tags}")
        subs = sorted(subs, key=lambda s: s.subarray)
    bits = subs[0].phase_bits
    sr, sc = subs[0].idx.shape
    for s in subs:
        if s.phase_bits != bits:
            raise ValueError("mixed phase_bits in submatrices")
        if s.idx.shape != (sr, sc):
            raise ValueError("mixed submatrix shapes")
    full = np.empty((modules_rows * sr, modules_cols * sc), dtype=np.int64)
    for m, s in enumerate(subs):
        mr, mc = divmod(m, modules_cols)
        full[mr * sr:(mr + 1) * sr, mc * sc:(mc + 1) * sc] = s.idx
    return BeamMatrix(full, bits)


def disassemble_matrix(w: BeamMatrix, modules_rows: int, modules_cols: int) -> list[BeamMatrix]:
    """Split a full-panel matrix into tagged subarray blocks (row-major)."""
    rows, cols = w.idx.shape
    if rows % modules_rows or cols % modules_cols:
        raise ValueError(f"grid {rows}x{cols} not divisible into {modules_rows}x{modules_cols} modules")
    sr, sc = rows // modules_rows, cols // modules_cols
    out = []
    for m in range(modules_rows * modules_cols):
        mr, mc = divmod(m, modules_cols)
        block = w.idx[mr * sr:(mr + 1) * sr, mc * sc:(mc + 1) * sc].copy()
        out.append(BeamMatrix(block, w.phase_bits, subarray=m))
    return out


def subarray_channel(h: ChannelMatrix, aperture: ApertureConfig, m: int) -> np.ndarray:
    """Channel block seen by subarray ``m``."""
    rs, cs = subarray_slices(aperture, m)
    return h.entries[rs, cs]


@dataclass(frozen=True)
class ReferencePlane:
    """Square sampling grid on the plane through the focal point parallel
    to the panel, used for power maps and spot-size measurements."""

    half_extent_m: float = 0.5
    resolution: int = 101

    def __post_init__(self):
        if self.half_extent_m <= 0:
            raise ValueError("half_extent_m must be positive")
        if self.resolution < 3 or self.resolution % 2 == 0:
            raise ValueError("resolution must be an odd integer >= 3")

    def offsets(self) -> np.ndarray:
        return np.linspace(-self.half_extent_m, self.half_extent_m, self.resolution)


class PowerMap(NamedTuple):
    values: np.ndarray  # (resolution, resolution), power at each node
    u_offsets: np.ndarray  # in-plane offsets along the column axis
    v_offsets: np.ndarray  # in-plane offsets along the row axis
    focal_point: np.ndarray


def power_density_map(
    w: BeamMatrix,
    focal_point,
    aperture: ApertureConfig,
    chan: ChannelConfig | None = None,
    room: RoomConfig | None = None,
    plane: ReferencePlane | None = None,
    signal_variance: float = 1.0,
    chunk: int = 512,
) -> PowerMap:
    """Received power over the reference plane for a fixed matrix.

    The grid node at offset (u, v) sits at focal_point + u*u_axis +
    v*v_axis; the center node is the focal point itself.
    """
    chan = chan or ChannelConfig()
    plane = plane or ReferencePlane()
    fp = as_point(focal_point)
    if w.idx.shape != (aperture.rows, aperture.cols):
        raise ValueError("matrix shape does not match the aperture grid")
    u_axis, v_axis = aperture.plane_axes
    offs = plane.offsets()
    uu, vv = np.meshgrid(offs, offs, indexing="xy")  # vv varies down rows
    nodes = fp[None, :] + uu.reshape(-1, 1) * u_axis[None, :] + vv.reshape(-1, 1) * v_axis[None, :]

    wbar = np.conj(w.weights()).reshape(-1)
    values = np.empty(nodes.shape[0])
    for start in range(0, nodes.shape[0], chunk):
        block = nodes[start:start + chunk]
        hb = channel_at_points(aperture, block, chan, room).reshape(block.shape[0], -1)
        amp = hb @ wbar
        values[start:start + chunk] = np.abs(amp) ** 2 * signal_variance
    return PowerMap(values.reshape(uu.shape), offs.copy(), offs.copy(), fp)


def bfr_from_map(power_map: PowerMap, fraction: float) -> float:
    """Smallest grid radius around the focal point capturing ``fraction``
    of the map's total power.

    Nodes are grouped into shells of equal radius; the radius of the first
    shell whose cumulative power reaches the target is returned.  A zero
    map yields the maximum grid radius.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    uu, vv = np.meshgrid(power_map.u_offsets, power_map.v_offsets, indexing="xy")
    radii = np.hypot(uu, vv).reshape(-1)
    powers = power_map.values.reshape(-1)
    total = powers.sum()
    order = np.argsort(radii, kind="stable")
    radii = radii[order]
    powers = powers[order]
    if total <= 0.0:
        return float(radii[-1])
    cumulative = np.cumsum(powers)
    # extend each crossing to the end of its equal-radius shell
    target = fraction * total
    hit = int(np.searchsorted(cumulative, target - 1e-12 * total))
    hit = min(hit, len(radii) - 1)
    shell_radius = radii[hit]
    return float(shell_radius)


def beamfocusing_radius(
    w: BeamMatrix,
    focal_point,
    fraction: float,
    aperture: ApertureConfig,
    chan: ChannelConfig | None = None,
    room: RoomConfig | None = None,
    plane: ReferencePlane | None = None,
) -> float:
    """Spot size: radius on the reference plane containing ``fraction`` of
    the radiated power of ``w`` around the focal point."""
    pm = power_density_map(w, focal_point, aperture, chan, room, plane)
    return bfr_from_map(pm, fraction)


def response_correlation(
    point_a,
    point_b,
    w: BeamMatrix,
    aperture: ApertureConfig,
    chan: ChannelConfig | None = None,
    room: RoomConfig | None = None,
) -> float:
    """Normalized inner product of the weighted channel responses at two
    receiver points; near-field responses decorrelate as the panel grows."""
    chan = chan or ChannelConfig()
    pts = np.stack([as_point(point_a), as_point(point_b)])
    h = channel_at_points(aperture, pts, chan, room).reshape(2, -1)
    wv = np.conj(w.weights()).reshape(-1)
    a = wv * h[0]
    b = wv * h[1]
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero response norm; correlation undefined")
    return float(np.abs(np.vdot(a, b)) / (na * nb))
