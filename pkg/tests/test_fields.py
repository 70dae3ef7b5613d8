"""Lattice, domain, sampling, quadrature and persistence checks."""

import numpy as np
import pytest

from wavemoment.fields import (
    FieldDimensionError,
    FieldFormatError,
    FieldTruncationError,
    ball_domain,
    box_domain,
    build_lattice,
    export_field_csv,
    load_field,
    persist_field,
    sample_field,
    sample_speed,
    volume_integral,
)

BOX = ((-2, 2), (-2, 2), (-2, 2))


def test_build_lattice_spacing():
    lat = build_lattice(BOX, (33, 33, 33))
    assert lat.spacing == pytest.approx(0.125, abs=0)


def test_build_lattice_rejects_small_dims():
    with pytest.raises(ValueError, match=">= 8"):
        build_lattice(BOX, (4, 4, 4))


def test_build_lattice_rejects_anisotropic():
    with pytest.raises(ValueError, match="anisotropic"):
        build_lattice(((-2, 2), (-2, 2), (-1, 1)), (33, 33, 33))


def test_constant_preset():
    lat = build_lattice(BOX, (33, 33, 33))
    f = sample_field("constant", lat, value=1.0)
    assert np.all(f.values == 1.0)


def test_gaussian_preset_values():
    lat = build_lattice(BOX, (33, 33, 33))
    f = sample_field("gaussian", lat, amplitude=1.0, sigma=0.3)
    i0 = (16, 16, 16)  # origin
    assert f.values[i0] == pytest.approx(1.0)
    # |x| = 0.3 is not a lattice point at h = 0.125; evaluate the formula off-grid
    val = f.interpolate(np.array([[0.3, 0.0, 0.0]]))[0]
    assert val == pytest.approx(np.exp(-0.5), rel=2e-2)  # trilinear is approximate
    # direct formula check at an exact lattice point
    x = 0.125 * 2
    assert f.values[18, 16, 16] == pytest.approx(np.exp(-x**2 / (2 * 0.3**2)), rel=1e-12)


def test_ball_indicator_mask_count_matches_enumeration():
    lat = build_lattice(BOX, (33, 33, 33))  # h = 0.125
    f = sample_field("ball", lat, radius=0.5)
    X, Y, Z = lat.meshgrid()
    oracle = int(np.count_nonzero(X**2 + Y**2 + Z**2 <= 0.5**2))
    assert int(f.mask.sum()) == oracle


def test_expression_rejects_nonfinite():
    lat = build_lattice(BOX, (33, 33, 33))
    with pytest.raises(ValueError, match="NaN|inf|evaluate"):
        sample_field("expression", lat, expr="1.0/ (x - x)")


def test_volume_integral_zero_field():
    lat = build_lattice(BOX, (33, 33, 33))
    dom = ball_domain(lat, radius=1.0)
    z = sample_field("constant", lat, value=0.0)
    assert volume_integral(z, dom) == 0.0


def test_volume_integral_ball_volume():
    lat = build_lattice(BOX, (48, 48, 48))
    dom = ball_domain(lat, radius=1.0)
    one = sample_field("constant", lat, value=1.0)
    exact = 4 * np.pi / 3
    err = abs(volume_integral(one, dom) - exact) / exact
    # cut-cell midpoint rule: well within O(h) of the exact ball volume
    assert err <= lat.spacing
    assert err <= 2e-3  # achieved level at 48^3, recorded


def test_volume_integral_odd_symmetry():
    lat = build_lattice(BOX, (48, 48, 48))
    dom = ball_domain(lat, radius=1.0)
    f = sample_field("expression", lat, expr="x")
    assert abs(volume_integral(f, dom)) <= 1e-12 * volume_integral(
        sample_field("expression", lat, expr="abs(x)"), dom
    )


def test_volume_integral_linearity():
    lat = build_lattice(BOX, (24, 24, 24))
    dom = ball_domain(lat, radius=1.0)
    rng = np.random.default_rng(7)
    g1 = sample_field("gaussian", lat, sigma=0.4)
    g2 = sample_field("expression", lat, expr="cos(x)*y")
    a, b = rng.normal(size=2)
    lhs = volume_integral(g1.like(a * g1.values + b * g2.values), dom)
    rhs = a * volume_integral(g1, dom) + b * volume_integral(g2, dom)
    assert lhs == pytest.approx(rhs, rel=1e-13, abs=1e-13)


def test_volume_integral_refinement_order():
    exact = 4 * np.pi / 3
    errs = []
    for n in (24, 48):
        lat = build_lattice(BOX, (n, n, n))
        dom = ball_domain(lat, radius=1.0)
        errs.append(abs(volume_integral(sample_field("constant", lat), dom) - exact) / exact)
    assert np.log2(errs[0] / errs[1]) >= 1.0


def test_boundary_weights_sum_to_surface_area():
    lat = build_lattice(BOX, (48, 48, 48))
    dom = ball_domain(lat, radius=1.5)
    assert dom.boundary_weights.sum() == pytest.approx(4 * np.pi * 1.5**2, rel=1e-2)
    assert np.allclose(np.linalg.norm(dom.boundary_points, axis=1), 1.5)
    box = box_domain(lat, ((-1.2, 1.2),) * 3)
    assert box.boundary_weights.sum() == pytest.approx(6 * 2.4**2, rel=1e-2)


def test_domain_margin_enforced():
    lat = build_lattice(BOX, (48, 48, 48))
    with pytest.raises(ValueError, match="margin"):
        ball_domain(lat, radius=1.9)


def test_persist_round_trip_real(tmp_path):
    lat = build_lattice(BOX, (24, 24, 24))
    f = sample_field("gaussian", lat, sigma=0.4)
    p = tmp_path / "f.wmlf"
    persist_field(f, p)
    g = load_field(p)
    assert g.lattice == f.lattice
    assert np.array_equal(g.values, f.values)
    assert np.array_equal(g.mask, f.mask)


def test_persist_round_trip_complex(tmp_path):
    lat = build_lattice(BOX, (24, 24, 24))
    rng = np.random.default_rng(3)
    v = rng.normal(size=lat.dims) + 1j * rng.normal(size=lat.dims)
    f = sample_field("constant", lat).like(v)
    p = tmp_path / "c.wmlf"
    persist_field(f, p)
    g = load_field(p)
    assert np.array_equal(g.values, f.values)


def test_load_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.wmlf"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FieldFormatError, match="magic"):
        load_field(p)


def test_load_rejects_truncated_payload(tmp_path):
    lat = build_lattice(BOX, (33, 33, 33))
    f = sample_field("constant", lat)
    p = tmp_path / "t.wmlf"
    persist_field(f, p)
    raw = p.read_bytes()
    # keep the header but only a 17^3-sized slice of the 33^3 payload
    short = raw[: 4 + 45 + 8 * 17**3]
    q = tmp_path / "short.wmlf"
    q.write_bytes(short)
    with pytest.raises(FieldTruncationError, match="truncated"):
        load_field(q)


def test_load_rejects_lattice_mismatch(tmp_path):
    lat = build_lattice(BOX, (24, 24, 24))
    other = build_lattice(BOX, (33, 33, 33))
    f = sample_field("constant", lat)
    p = tmp_path / "m.wmlf"
    persist_field(f, p)
    with pytest.raises(FieldDimensionError, match="match"):
        load_field(p, expect_lattice=other)


def test_csv_export(tmp_path):
    lat = build_lattice(((-1, 1),) * 3, (8, 8, 8))
    f = sample_field("expression", lat, expr="x + 2*y")
    p = tmp_path / "f.csv"
    export_field_csv(f, p)
    lines = p.read_text().strip().splitlines()
    assert lines[0].startswith("#")
    assert len(lines) == 1 + 8**3
    x, y, z, v = (float(t) for t in lines[1].split(","))
    assert v == pytest.approx(x + 2 * y)


def test_speed_model_validation():
    lat = build_lattice(BOX, (25, 25, 25))  # odd n: origin is a lattice point
    c = sample_speed("bump", lat, amplitude=0.2, radius=0.8)
    assert c.max() == pytest.approx(1.2, rel=1e-6)
    dom = ball_domain(lat, radius=1.2)
    c.check_unit_outside(dom)
    with pytest.raises(ValueError, match="below c0"):
        sample_speed("bump", lat, amplitude=-0.9, radius=0.8, c0=0.5)


def test_harmonic_perturbation_speed():
    lat = build_lattice(BOX, (25, 25, 25))
    c = sample_speed("harmonic_perturbation", lat, epsilon=0.05, phi="x", radius=0.6)
    inv = c.inv_sq()
    # at the bump center the window is 1 and phi = x = 0 there
    assert inv[12, 12, 12] == pytest.approx(1.0)
    assert inv.max() <= 1.0 + 0.05 * 0.6 + 1e-9
