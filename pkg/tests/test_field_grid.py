import math

import numpy as np
import pytest

from pshlab.field_grid import (GridSpec, ScalarField, build_grid, c2_norm,
                               ddc_component, load_field, save_field)
from pshlab.potential_kit import Potential, Term, builtin_potential


def test_build_grid_spacing():
    g = build_grid(1, 256, 1.0)
    assert g.h == 2.0 / 256
    assert g.shape == (256, 256)
    assert g.axis()[g.origin_index()[0]] == 0.0


def test_build_grid_log_radial_range():
    g = build_grid(1, 128, 2.0, "log-radial")
    t = g.t_axis()
    assert len(t) == 128
    assert t[0] == -40.0
    assert t[-1] == pytest.approx(math.log(4.0))


def test_build_grid_rejects_small_resolution():
    with pytest.raises(ValueError):
        build_grid(2, 15, 1.0)


def test_build_grid_rejects_high_dimension():
    with pytest.raises(ValueError):
        build_grid(3, 64, 1.0)


def test_ddc_flat_exact(grid128, flat):
    f = flat.sample(grid128)
    d = ddc_component(f)
    vals = d.values[d.mask]
    assert np.max(np.abs(vals - 1.0 / np.pi)) < 1e-10


def test_ddc_pluriharmonic_zero(grid128):
    p = Potential(1, [Term("reharm", 1.0, (2,))])
    d = ddc_component(p.sample(grid128))
    assert np.max(np.abs(d.values[d.mask])) < 1e-9


def test_ddc_quartic_against_derivative_oracle(grid128):
    # independent oracle: Laplacian of rho^2 via one-dimensional fourth-order
    # differences of the radial profile r^4 -> 16 rho, density 4 rho / pi
    p = Potential(1, [Term("polyrad", 1.0, (2,))])
    d = ddc_component(p.sample(grid128))
    rho = grid128.rho()
    exact = 4.0 * rho / np.pi
    err = np.abs(d.values - exact)[d.mask]
    assert err.max() < 30.0 * grid128.h ** 2


def test_ddc_invariance_under_pluriharmonic_addend(grid128, perturbed):
    base = builtin_potential("flat")
    d1 = ddc_component(base.sample(grid128))
    d2 = ddc_component(perturbed.sample(grid128))  # flat + 0.3 Re z^3
    assert np.max(np.abs(d1.values - d2.values)[d1.mask & d2.mask]) \
        < 50.0 * grid128.h ** 2


def test_ddc_n2_hessian_components():
    g = build_grid(2, 16, 1.0)
    p = builtin_potential("reinhardt2")
    h11, h22, h12re, h12im = ddc_component(p.sample(g))
    z1, z2 = g.nodes()
    r1 = (z1 * z1.conj()).real
    r2 = (z2 * z2.conj()).real
    m = h11.mask
    assert np.max(np.abs(h11.values - (1 + r2))[m]) < 5e-2
    assert np.max(np.abs(h22.values - (1 + r1))[m]) < 5e-2
    exact12 = z2 * z1.conj()
    assert np.max(np.abs(h12re.values - exact12.real)[m]) < 5e-2
    assert np.max(np.abs(h12im.values - exact12.imag)[m]) < 5e-2


def test_c2_norm_identity_and_constant(grid128, flat):
    f = flat.sample(grid128)
    assert c2_norm(f, f) == 0.0
    g = f.with_values(f.values + 3.0)
    assert c2_norm(g, f) == pytest.approx(3.0)


def test_c2_norm_scaled_quadratic(grid128, flat):
    # f = (1+a)|z|^2 vs |z|^2: sup a, gradient 2a, second derivatives 2a
    f = flat.sample(grid128)
    a = 0.01
    g = f.with_values((1 + a) * f.values)
    val = c2_norm(g, f)
    assert abs(val - 5 * a) < 1e-3


def test_c2_norm_seminorm_properties(grid128):
    rng = np.random.default_rng(7)
    base = builtin_potential("flat").sample(grid128)
    z = grid128.nodes()
    f1 = base.with_values(base.values + 0.1 * (z ** 2).real)
    f2 = base.with_values(base.values - 0.05 * (z ** 3).imag)
    d12 = c2_norm(f1, f2)
    d21 = c2_norm(f2, f1)
    assert d12 == pytest.approx(d21)
    d1b = c2_norm(f1, base)
    d2b = c2_norm(base, f2)
    assert d12 <= d1b + d2b + 1e-12


def test_c2_norm_grid_mismatch_raises(grid128, grid96_r2, flat):
    with pytest.raises(ValueError):
        c2_norm(flat.sample(grid128), flat.sample(grid96_r2))


def test_field_invariants():
    g = build_grid(1, 32, 1.0)
    vals = np.zeros(g.shape)
    vals[16, 16] = np.nan
    with pytest.raises(ValueError):
        ScalarField(g, vals)  # non-finite at a masked-in node
    f = ScalarField(g, np.ones(g.shape))
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0  # fields are immutable


def test_field_serialization_roundtrip(tmp_path, grid128, perturbed):
    f = perturbed.sample(grid128)
    path = tmp_path / "field.csv"
    save_field(f, path)
    g = load_field(path)
    assert g.grid == f.grid
    assert np.array_equal(g.mask, f.mask)
    assert np.array_equal(g.values[g.mask], f.values[f.mask])
