"""Phase-distribution images and rotation-aware circular similarity.

A phase image is a 2-D array of radians in [0, 2*pi), the per-element
phase pattern of a trained subarray.  Similarity between two images is
the circular (sine-residual) correlation maximized over a grid of image
rotations, so geometrically related subarrays score high even when their
patterns are turned relative to each other.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .beams import BeamMatrix

TWO_PI = 2.0 * np.pi

# |resultant| below this times the pixel count counts as undefined.
DEGENERATE_EPS = 1e-12


def wrap_phases(values: np.ndarray) -> np.ndarray:
    """Wrap radians to [0, 2*pi)."""
    return np.mod(np.asarray(values, dtype=np.float64), TWO_PI)


def phase_image(matrix: BeamMatrix) -> np.ndarray:
    """Lossless phase image of a beamfocusing matrix."""
    return matrix.phases()


def circular_resultant(image: np.ndarray) -> complex:
    """Mean resultant vector of the phases."""
    img = np.asarray(image, dtype=np.float64)
    return complex(np.exp(1j * img).mean())


def circular_mean(image: np.ndarray) -> float:
    """Circular mean direction in [0, 2*pi); 0 when undefined.

    The mean is the argument of the resultant vector; a vanishing
    resultant (balanced phases) has no preferred direction and reports 0.
    See also ``circular_mean_detail``.
    """
    return circular_mean_detail(image)[0]


def circular_mean_detail(image: np.ndarray) -> tuple[float, bool]:
    """(circular mean, degenerate flag)."""
    r = circular_resultant(image)
    if abs(r) <= DEGENERATE_EPS:
        return 0.0, True
    return float(np.mod(np.angle(r), TWO_PI)), False


class CorrelationDetail(NamedTuple):
    value: float
    degenerate: bool


def circular_pearson_detail(a: np.ndarray, b: np.ndarray) -> CorrelationDetail:
    """Circular correlation of two equal-shape phase images.

    Pearson form over sine residuals about each image's circular mean.
    When either image has no angular spread the coefficient is undefined
    and reported as 0 with the degenerate flag set.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mean_a, dega = circular_mean_detail(a)
    mean_b, degb = circular_mean_detail(b)
    sa = np.sin(a - mean_a)
    sb = np.sin(b - mean_b)
    denom_a = float(np.sum(sa * sa))
    denom_b = float(np.sum(sb * sb))
    if dega or degb or denom_a <= DEGENERATE_EPS or denom_b <= DEGENERATE_EPS:
        return CorrelationDetail(0.0, True)
    value = float(np.sum(sa * sb) / np.sqrt(denom_a * denom_b))
    return CorrelationDetail(value, False)


def circular_pearson(a: np.ndarray, b: np.ndarray) -> float:
    return circular_pearson_detail(a, b).value


def rotation_grid(step_deg: float = 10.0) -> np.ndarray:
    """Rotation angles [0, 2*pi) in steps of ``step_deg`` degrees."""
    if step_deg <= 0 or step_deg > 360:
        raise ValueError("step_deg must lie in (0, 360]")
    count = int(round(360.0 / step_deg))
    if abs(count * step_deg - 360.0) > 1e-9:
        raise ValueError("step_deg must divide 360")
    return np.arange(count) * (np.deg2rad(step_deg))


def rotate_phase_image(image: np.ndarray, theta: float) -> np.ndarray:
    """Rotate a phase image about its center by ``theta`` radians.

    Square images rotate by exact index permutation at multiples of 90
    degrees.  Otherwise phases are resampled bilinearly in (cos, sin)
    space on the inverse-mapped grid; samples falling outside the support
    clamp to the nearest in-support coordinate.
    """
    img = wrap_phases(image)
    rows, cols = img.shape
    quarter = theta / (np.pi / 2.0)
    k = int(round(quarter))
    if rows == cols and abs(quarter - k) < 1e-9:
        return np.rot90(img, k % 4).copy()

    cy = (rows - 1) / 2.0
    cx = (cols - 1) / 2.0
    r = np.arange(rows, dtype=np.float64)[:, None] - cy
    c = np.arange(cols, dtype=np.float64)[None, :] - cx
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    src_c = np.clip(cx + c * cos_t - r * sin_t, 0.0, cols - 1.0)
    src_r = np.clip(cy + c * sin_t + r * cos_t, 0.0, rows - 1.0)

    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    r1 = np.minimum(r0 + 1, rows - 1)
    c1 = np.minimum(c0 + 1, cols - 1)
    fr = src_r - r0
    fc = src_c - c0

    cos_f = np.cos(img)
    sin_f = np.sin(img)

    def sample(field):
        top = field[r0, c0] * (1.0 - fc) + field[r0, c1] * fc
        bottom = field[r1, c0] * (1.0 - fc) + field[r1, c1] * fc
        return top * (1.0 - fr) + bottom * fr

    return wrap_phases(np.arctan2(sample(sin_f), sample(cos_f)))


class EccResult(NamedTuple):
    value: float
    angle: float  # radians, the maximizing rotation
    degenerate: bool


def ecc(a: np.ndarray, b: np.ndarray, angles: Sequence[float] | None = None) -> EccResult:
    """Rotation-maximized circular correlation of two phase images.

    Rotates ``b`` through the angle grid and reports the best circular
    correlation with ``a`` and the angle achieving it.  Degenerate only
    if every angle is degenerate.
    """
    grid = rotation_grid() if angles is None else np.asarray(angles, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty rotation grid")
    best = -np.inf
    best_angle = float(grid[0])
    all_degenerate = True
    for theta in grid:
        detail = circular_pearson_detail(a, rotate_phase_image(b, float(theta)))
        all_degenerate = all_degenerate and detail.degenerate
        if detail.value > best:
            best = detail.value
            best_angle = float(theta)
    return EccResult(float(best), best_angle, all_degenerate)


def similarity_map(reference: np.ndarray, images: Sequence[np.ndarray], theta: float) -> np.ndarray:
    """Circular correlation of a reference image against each image in
    ``images`` after rotating them by a single fixed angle."""
    return np.array([
        circular_pearson(reference, rotate_phase_image(img, theta)) for img in images
    ])


def save_phase_csv(image: np.ndarray, path) -> None:
    """Headerless CSV grid of radians."""
    img = wrap_phases(image)
    with open(path, "w", encoding="ascii") as fh:
        for row in img:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_phase_csv(path) -> np.ndarray:
    img = np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))
    return wrap_phases(img)


def save_phase_pgm(image: np.ndarray, path) -> None:
    """8-bit binary PGM rendering: gray level = round(256 * phi / 2pi) mod 256."""
    img = wrap_phases(image)
    levels = np.mod(np.rint(img * (256.0 / TWO_PI)).astype(np.int64), 256).astype(np.uint8)
    rows, cols = levels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())
