import math

import numpy as np
import pytest
from scipy.optimize import brentq

from pshlab.field_grid import build_grid
from pshlab.potential_kit import Potential, Term, builtin_potential
from pshlab.envelope_solver import (SolverError, build_obstacle,
                                    convex_minorant_1d, extract_equilibrium,
                                    grid_envelope, lelong_check,
                                    maximality_residual, radial_envelope)
from pshlab.geometry import polyline_is_simple


# ---------------------------------------------------------------------------
# radial oracle
# ---------------------------------------------------------------------------

def test_flat_closed_form(grid128, flat):
    lam = 0.25
    res = radial_envelope(flat, lam, grid128)
    rho = grid128.rho()
    inside = grid128.inside_mask()
    with np.errstate(divide="ignore"):
        logrho = np.where(rho > 0, np.log(np.where(rho > 0, rho, 1.0)), 0.0)
    exact = np.where(rho <= lam, lam * (1 - math.log(lam)),
                     rho - lam * logrho)
    exact[grid128.origin_index()] = lam * (1 - math.log(lam))
    assert np.max(np.abs(res.envelope.values - exact)[inside]) < 1e-13
    assert np.all(res.coincidence[inside] == (rho >= lam)[inside])


def test_flat_lam_zero(grid128, flat):
    res = radial_envelope(flat, 0.0, grid128)
    inside = grid128.inside_mask()
    assert np.array_equal(res.envelope.values[inside],
                          flat.sample(grid128).values[inside])
    assert np.all(res.coincidence[inside])
    assert len(res.boundary) == 0


def test_quartic_boundary_radius(grid128, quartic):
    # coincidence boundary where the enclosed mass r^2 + r^4 reaches lam
    lam = 0.5
    res = radial_envelope(quartic, lam, grid128)
    r_exact = math.sqrt(brentq(lambda r2: r2 + r2 ** 2 - lam, 0.0, 1.0))
    r_bd = np.hypot(res.boundary[:, 0], res.boundary[:, 1])
    assert np.max(np.abs(r_bd - r_exact)) < 1e-12


def test_radial_requires_symmetry(grid128, perturbed):
    with pytest.raises(ValueError, match="grid_envelope"):
        radial_envelope(perturbed, 0.2, grid128)


def test_radial_degenerate_weight_warns(grid128, flat):
    with pytest.warns(UserWarning):
        res = radial_envelope(flat, 1.5, grid128)  # mass of the disc is 1
    assert res.degenerate


def test_convex_minorant_helper_matches_closed_form():
    # hull of samples of e^t - lam*t, flattened left of its minimum
    lam = 0.25
    t = np.linspace(-6.0, 0.0, 4001)
    g = np.exp(t) - lam * t
    m = convex_minorant_1d(t, g)
    exact = np.where(t >= math.log(lam), g, lam * (1 - math.log(lam)))
    # the hull flattens at the sampled argmin: O(dt^2) from the true level
    assert np.max(np.abs(m - exact)) < 5e-6


# ---------------------------------------------------------------------------
# reinhardt backend (n = 2)
# ---------------------------------------------------------------------------

def test_reinhardt_flat_matches_radial_reduction():
    p = Potential(2, [Term("ball", 1.0, (1,))])
    g = build_grid(2, 64, 1.0, "log-radial")
    lam = 0.25
    res = radial_envelope(p, lam, g)
    t = g.t_axis()
    T1, T2 = np.meshgrid(t, t, indexing="ij")
    s = np.logaddexp(T1, T2)
    exact = np.where(s <= math.log(lam), lam * (1 - math.log(lam)),
                     np.exp(s) - lam * s)
    # sampled-hull discretization is O(dt^2) with dt = 41/64 here
    err = np.abs(res.envelope.values - exact)[res.envelope.mask]
    assert err.max() < 3e-3
    # the discrete hull minorizes the samples but majorizes the continuum
    assert np.min((res.envelope.values - exact)[res.envelope.mask]) > -1e-9


def test_reinhardt2_monotone_and_bounded():
    p = builtin_potential("reinhardt2")
    g = build_grid(2, 48, 1.0, "log-radial")
    r1 = radial_envelope(p, 0.3, g)
    r2 = radial_envelope(p, 0.5, g)
    m = r1.envelope.mask
    assert np.max(r1.deficit.values[m]) <= 1e-9
    assert np.all(r1.deficit.values[m] >= r2.deficit.values[m] - 1e-9)
    assert np.all(~r2.coincidence | r1.coincidence)


# ---------------------------------------------------------------------------
# grid solver
# ---------------------------------------------------------------------------

def test_grid_matches_oracle_flat(grid128, flat):
    oracle = radial_envelope(flat, 0.25, grid128)
    num = grid_envelope(flat, 0.25, grid128, tol=1e-10)
    assert oracle.envelope.sup_diff(num.envelope) < 5e-3


def test_grid_lam_zero_single_sweep(grid128, flat):
    res = grid_envelope(flat, 0.0, grid128, tol=1e-10)
    assert res.iterations <= 2
    inside = grid128.inside_mask()
    assert np.array_equal(res.envelope.values[inside],
                          flat.sample(grid128).values[inside])


def test_grid_jacobi_and_psor_agree(flat):
    # same unique fixed point; the gap scales like tol over the contraction
    # gap of the iteration (the stop rule bounds the update, not the error)
    g = build_grid(1, 64, 1.0)
    a = grid_envelope(flat, 0.25, g, tol=1e-11, scheme="psor")
    b = grid_envelope(flat, 0.25, g, tol=1e-11, scheme="jacobi")
    assert a.envelope.sup_diff(b.envelope) < 1e-7


def test_grid_fixed_point_property(grid128, perturbed):
    from pshlab.envelope_solver import _jacobi_target
    res = grid_envelope(perturbed, 0.2, grid128, tol=1e-10)
    obs = build_obstacle(perturbed, 0.2, grid128)
    g = np.where(np.isfinite(obs.values), obs.values, np.inf)
    inside = grid128.inside_mask()
    from pshlab.field_grid import erode_mask
    active = erode_mask(inside)
    tgt = _jacobi_target(res.envelope.values, g, active, grid128.origin_index())
    assert np.max(np.abs((tgt - res.envelope.values)[active])) < 1e-10


def test_grid_harmonic_off_contact(grid128, perturbed):
    res = grid_envelope(perturbed, 0.2, grid128, tol=1e-10)
    assert maximality_residual(res) <= 10.0 * grid128.h


def test_grid_max_iters_error(grid128, flat):
    with pytest.raises(SolverError) as err:
        grid_envelope(flat, 0.25, grid128, tol=1e-12, max_iters=3)
    assert err.value.residual is not None


def test_grid_rejects_non_psh(grid128):
    p = Potential(1, [Term("reharm", 1.0, (2,))])
    with pytest.raises(ValueError, match="not strictly psh"):
        grid_envelope(p, 0.1, grid128)


def test_monotonicity_in_lam(grid128, flat):
    prev = None
    warm = None
    for lam in (0.1, 0.2, 0.3, 0.4):
        res = grid_envelope(flat, lam, grid128, tol=1e-9, warm_start=warm)
        warm = np.array(res.envelope.values)
        if prev is not None:
            m = prev.deficit.mask & res.deficit.mask
            assert np.all(prev.deficit.values[m] >= res.deficit.values[m]
                          - 1e-9)
            assert np.all(~res.coincidence | prev.coincidence)
        prev = res


def test_concavity_in_lam(grid128, flat):
    lams = np.linspace(0.05, 0.6, 12)
    warm = None
    vals = []
    for lam in lams:
        res = grid_envelope(flat, float(lam), grid128, tol=1e-9,
                            warm_start=warm)
        warm = np.array(res.envelope.values)
        vals.append(res.deficit.masked_fill(np.nan))
    stack = np.stack(vals)
    second = stack[2:] - 2 * stack[1:-1] + stack[:-2]
    finite = np.isfinite(second)
    assert np.nanmax(second[finite]) < 1e-6


# ---------------------------------------------------------------------------
# extraction and the pole-weight fit
# ---------------------------------------------------------------------------

def test_extract_circle(grid128, flat):
    res = grid_envelope(flat, 0.25, grid128, tol=1e-10)
    mask, poly = extract_equilibrium(res)
    r = np.hypot(poly[:, 0], poly[:, 1])
    assert np.max(np.abs(r - 0.5)) < 2.0 * grid128.h
    assert polyline_is_simple(poly)


def test_extract_lam_zero_empty(grid128, flat):
    res = radial_envelope(flat, 0.0, grid128)
    mask, poly = extract_equilibrium(res)
    assert len(poly) == 0
    assert mask[grid128.inside_mask()].all()


def test_extract_refined_flat_radius(grid128, flat):
    res = radial_envelope(flat, 0.25, grid128)
    _, poly = extract_equilibrium(res, refine=True)
    r = np.hypot(poly[:, 0], poly[:, 1])
    assert np.max(np.abs(r - 0.5)) < 0.25 * grid128.h


def test_extract_perturbed_simple_closed(grid128, perturbed):
    res = grid_envelope(perturbed, 0.2, grid128, tol=1e-9)
    _, poly = extract_equilibrium(res)
    assert len(poly) >= 32
    assert polyline_is_simple(poly)
    from pshlab.geometry import points_in_polygon
    assert points_in_polygon(np.zeros(1), np.zeros(1), poly)[0]


def test_lelong_flat(grid128, flat):
    res = grid_envelope(flat, 0.25, grid128, tol=1e-10)
    rep = lelong_check(res)
    assert rep.passed
    assert rep.slope == pytest.approx(0.25, abs=5e-3)


def test_lelong_lam_zero_passes(grid128, flat):
    res = radial_envelope(flat, 0.0, grid128)
    rep = lelong_check(res)
    assert rep.passed and rep.slope == 0.0


def test_lelong_perturbed(grid128, perturbed):
    res = grid_envelope(perturbed, 0.2, grid128, tol=1e-10)
    rep = lelong_check(res)
    assert rep.slope >= 0.2 - 1e-2


def test_lelong_too_coarse_raises(flat):
    g = build_grid(1, 16, 1.0)
    res = grid_envelope(flat, 0.25, g, tol=1e-8)
    with pytest.raises(ValueError, match="annulus"):
        lelong_check(res, annulus=(0.1, 0.4))


def test_obstacle_sentinel(grid128, flat):
    obs = build_obstacle(flat, 0.25, grid128)
    i0 = grid128.origin_index()
    assert obs.values[i0] == np.inf
    assert not obs.field.mask[i0]
    assert np.isfinite(obs.values[obs.field.mask]).all()
