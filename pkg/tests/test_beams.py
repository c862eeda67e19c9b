"""Beamfocusing matrices, power accounting, and spot-size measurement."""

import numpy as np
import pytest

from spotfocus.beams import (
    BeamMatrix,
    PowerMap,
    ReferencePlane,
    assemble_matrix,
    bfr_from_map,
    beamfocusing_radius,
    csi_oracle,
    disassemble_matrix,
    oracle_power,
    power_density_map,
    quantize_phases,
    received_power,
    response_correlation,
    wrap_signed,
)
from spotfocus.channel import ChannelConfig, channel_matrix
from spotfocus.geometry import ApertureConfig
from spotfocus.seeding import spawn

TWO_PI = 2.0 * np.pi


def test_quantizer_nearest_level_with_exact_ties_to_lower():
    step = TWO_PI / 8  # 3 bits
    # dead center between levels resolves to the level just below
    assert quantize_phases(np.array([step / 2]), 3)[0] == 0
    assert quantize_phases(np.array([3 * step / 2]), 3)[0] == 1
    assert quantize_phases(np.array([TWO_PI - step / 2]), 3)[0] == 7
    assert quantize_phases(np.array([step / 2 + 1e-9]), 3)[0] == 1
    assert quantize_phases(np.array([step / 2 - 1e-9]), 3)[0] == 0
    # wrapping: just below 2*pi is nearest to level 0
    assert quantize_phases(np.array([TWO_PI - step / 4]), 3)[0] == 0
    assert quantize_phases(np.array([-step / 4]), 3)[0] == 0
    assert quantize_phases(np.array([7 * step]), 3)[0] == 7


def test_quantizer_exhaustive_against_linear_scan():
    """Nearest level under circular distance, for random wrapped inputs."""
    rng = spawn(0, "quantizer")
    for bits in (1, 2, 3, 4):
        levels = 1 << bits
        grid = np.arange(levels) * (TWO_PI / levels)
        phases = rng.uniform(-3 * TWO_PI, 3 * TWO_PI, size=200)
        got = quantize_phases(phases, bits)
        for phi, g in zip(phases, got):
            dist = np.abs(np.angle(np.exp(1j * (grid - phi))))
            nearest = np.nonzero(dist <= dist.min() + 1e-9)[0]
            assert g in nearest


def test_wrap_signed_range():
    x = np.linspace(-10.0, 10.0, 1001)
    w = wrap_signed(x)
    assert np.all(w >= -np.pi) and np.all(w < np.pi)
    np.testing.assert_allclose(np.exp(1j * w), np.exp(1j * x), atol=1e-12)


def test_beam_matrix_weights_and_validation():
    m = BeamMatrix(np.array([[0, 2], [4, 6]]), 3)
    assert m.levels == 8 and m.num_elements == 4
    np.testing.assert_allclose(m.phases(), [[0, np.pi / 2], [np.pi, 3 * np.pi / 2]])
    np.testing.assert_allclose(np.abs(m.weights()), 0.5)
    with pytest.raises(ValueError):
        BeamMatrix(np.array([[8]]), 3)  # index out of range
    with pytest.raises(ValueError):
        BeamMatrix(np.array([1, 2]), 3)  # not 2-D


def test_received_power_hand_example():
    """Two elements, known gains: p = |sum conj(w) h|^2 s + n."""
    h = np.array([[1.0 + 0.0j, 0.0 + 1.0j]])
    w = BeamMatrix(np.array([[0, 2]]), 3)  # phases 0 and pi/2
    # conj(w) h = (1/sqrt2)(1*1 + e^{-j pi/2} * j) = (1/sqrt2)(1 + 1) = sqrt2
    p = received_power(w, h, signal_variance=2.0, noise_variance=0.25)
    assert p.power == pytest.approx(2.0 * 2.0 + 0.25, rel=1e-12)
    with pytest.raises(ValueError):
        received_power(w, np.ones((2, 2)))


def test_csi_oracle_dominates_random_matrices():
    """The quantized channel-phase match beats every random matrix."""
    ap = ApertureConfig(sub_rows=3, sub_cols=3, modules_rows=1, modules_cols=1,
                        element_spacing_m=0.006, corner_m=(1.0, 0.0, 1.5),
                        plane_normal="y")
    rng = spawn(1, "oracle-dominance")
    for trial in range(20):
        fp = np.array([rng.uniform(0.6, 3.4), rng.uniform(0.2, 3.0), rng.uniform(0.6, 2.4)])
        h = channel_matrix(ap, fp, ChannelConfig(), None)
        best = csi_oracle(h, 3)
        p_best = received_power(best, h).power
        bound = oracle_power(h)
        assert p_best <= bound * (1 + 1e-12)
        for _ in range(20):
            w = BeamMatrix(rng.integers(0, 8, size=(3, 3)), 3)
            assert received_power(w, h).power <= p_best * (1 + 1e-12)


def test_oracle_power_equals_aligned_sum():
    h = np.array([[3.0, 4.0j], [-2.0, 1.0 - 1.0j]])
    total = 3.0 + 4.0 + 2.0 + np.sqrt(2.0)
    assert oracle_power(h, 1.5) == pytest.approx(total**2 / 4 * 1.5, rel=1e-12)


def test_assemble_disassemble_round_trip():
    rng = spawn(2, "assemble")
    full = BeamMatrix(rng.integers(0, 8, size=(6, 4)), 3)
    parts = disassemble_matrix(full, 3, 2)
    assert [p.subarray for p in parts] == list(range(6))
    back = assemble_matrix(parts, 3, 2)
    np.testing.assert_array_equal(back.idx, full.idx)
    # order independence through tags
    shuffled = [parts[i] for i in (5, 0, 3, 1, 4, 2)]
    np.testing.assert_array_equal(assemble_matrix(shuffled, 3, 2).idx, full.idx)


def test_assemble_rejects_bad_inputs():
    subs = [BeamMatrix(np.zeros((2, 2), dtype=int), 3, subarray=m) for m in range(4)]
    with pytest.raises(ValueError):
        assemble_matrix(subs[:3], 2, 2)
    dup = [subs[0], subs[1], subs[2], BeamMatrix(np.zeros((2, 2), dtype=int), 3, subarray=2)]
    with pytest.raises(ValueError):
        assemble_matrix(dup, 2, 2)
    mixed_bits = subs[:3] + [BeamMatrix(np.zeros((2, 2), dtype=int), 2, subarray=3)]
    with pytest.raises(ValueError):
        assemble_matrix(mixed_bits, 2, 2)


def _delta_map(res=21, extent=1.0, hot=(10, 10), value=5.0):
    offs = np.linspace(-extent, extent, res)
    values = np.zeros((res, res))
    values[hot] = value
    return PowerMap(values, offs, offs, np.zeros(3))


def test_bfr_delta_at_center_is_zero_radius():
    pm = _delta_map()
    assert bfr_from_map(pm, 0.9) == 0.0
    assert bfr_from_map(pm, 1.0) == 0.0


def test_bfr_two_spots_needs_outer_shell():
    pm = _delta_map()
    pm.values[10, 14] = 5.0  # second spot 0.4 to the right
    assert bfr_from_map(pm, 0.5) == pytest.approx(0.0, abs=1e-15)
    assert bfr_from_map(pm, 0.51) == pytest.approx(0.4, rel=1e-12)
    assert bfr_from_map(pm, 1.0) == pytest.approx(0.4, rel=1e-12)


def test_bfr_fraction_monotone_and_validated():
    rng = spawn(3, "bfr")
    offs = np.linspace(-1, 1, 31)
    pm = PowerMap(rng.uniform(0.0, 1.0, size=(31, 31)), offs, offs, np.zeros(3))
    fractions = np.linspace(0.05, 1.0, 20)
    radii = [bfr_from_map(pm, f) for f in fractions]
    assert all(r1 >= r0 for r0, r1 in zip(radii, radii[1:]))
    # eta = 1 needs every lit node
    lit = pm.values > 0
    uu, vv = np.meshgrid(offs, offs, indexing="xy")
    assert radii[-1] == pytest.approx(np.hypot(uu, vv)[lit].max(), rel=1e-12)
    with pytest.raises(ValueError):
        bfr_from_map(pm, 0.0)
    with pytest.raises(ValueError):
        bfr_from_map(pm, 1.2)
    # an all-dark map degenerates to the full grid radius
    dark = PowerMap(np.zeros((31, 31)), offs, offs, np.zeros(3))
    assert bfr_from_map(dark, 0.9) == pytest.approx(np.hypot(offs[0], offs[0]), rel=1e-12)


def test_bfr_captured_energy_bookkeeping():
    """The disk at the returned radius really holds >= the target fraction."""
    rng = spawn(4, "bfr-energy")
    offs = np.linspace(-1, 1, 41)
    uu, vv = np.meshgrid(offs, offs, indexing="xy")
    radii_grid = np.hypot(uu, vv)
    for trial in range(10):
        pm = PowerMap(rng.uniform(0.0, 1.0, size=(41, 41)), offs, offs, np.zeros(3))
        total = pm.values.sum()
        for frac in (0.3, 0.7, 0.9, 0.99):
            r = bfr_from_map(pm, frac)
            captured = pm.values[radii_grid <= r + 1e-12].sum()
            assert captured >= frac * total * (1 - 1e-12)


def test_power_map_center_matches_received_power():
    ap = ApertureConfig(sub_rows=3, sub_cols=3, modules_rows=1, modules_cols=1,
                        element_spacing_m=0.006, corner_m=(1.0, 0.0, 1.5),
                        plane_normal="y")
    fp = np.array([1.01, 0.25, 1.51])
    h = channel_matrix(ap, fp, ChannelConfig(), None)
    w = csi_oracle(h, 3)
    plane = ReferencePlane(half_extent_m=0.05, resolution=5)
    pm = power_density_map(w, fp, ap, ChannelConfig(), None, plane, signal_variance=1.5)
    center = received_power(w, h, signal_variance=1.5).power
    assert pm.values[2, 2] == pytest.approx(center, rel=1e-12)
    assert pm.values.shape == (5, 5)
    # the focused matrix peaks at its focal point
    assert pm.values[2, 2] == pytest.approx(pm.values.max(), rel=1e-9)


def test_reference_plane_validation():
    with pytest.raises(ValueError):
        ReferencePlane(half_extent_m=0.0)
    with pytest.raises(ValueError):
        ReferencePlane(resolution=10)
    with pytest.raises(ValueError):
        ReferencePlane(resolution=1)


def test_beamfocusing_radius_shrinks_with_aperture():
    """A larger panel focuses a tighter spot at the same distance."""
    plane = ReferencePlane(half_extent_m=0.2, resolution=41)
    radii = []
    for n in (4, 10):
        half = (n - 1) / 2.0 * 0.005
        ap = ApertureConfig(sub_rows=n, sub_cols=n, modules_rows=1, modules_cols=1,
                            element_spacing_m=0.005,
                            corner_m=(2.0 - half, 0.0, 1.5 - half), plane_normal="y")
        fp = (2.0, 0.3, 1.5)
        h = channel_matrix(ap, fp, ChannelConfig(), None)
        radii.append(beamfocusing_radius(csi_oracle(h, 3), fp, 0.9, ap,
                                         ChannelConfig(), None, plane))
    assert radii[1] < radii[0]


def test_response_correlation_bounds_and_self():
    ap = ApertureConfig(sub_rows=4, sub_cols=4, modules_rows=1, modules_cols=1,
                        element_spacing_m=0.005, corner_m=(1.0, 0.0, 1.5),
                        plane_normal="y")
    rng = spawn(5, "respcorr")
    a = np.array([1.2, 0.4, 1.5])
    b = np.array([1.2, 0.5, 1.5])
    for _ in range(10):
        w = BeamMatrix(rng.integers(0, 8, size=(4, 4)), 3)
        r = response_correlation(a, b, w, ap, ChannelConfig(), None)
        assert 0.0 <= r <= 1.0 + 1e-12
        assert response_correlation(a, a, w, ap, ChannelConfig(), None) == pytest.approx(1.0, rel=1e-12)
