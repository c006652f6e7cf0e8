import math

import numpy as np
import pytest
from scipy.optimize import brentq

from pshlab.field_grid import build_grid
from pshlab.envelope_solver import extract_equilibrium, grid_envelope
from pshlab.geodesic_legendre import assemble_geodesic, oracle_slices
from pshlab.foliation_tube import (LeafExit, build_tubular_map, check_pullback,
                                   disc_area, leaf_boundary, polar_anchor_net,
                                   trace_leaf)


@pytest.fixture(scope="module")
def quartic_ray(quartic):
    grid = build_grid(1, 192, 1.0)
    return assemble_geodesic(oracle_slices(quartic, 0.45, 36, grid), c=0.45)


def _anchor(quartic, lam):
    t_s = brentq(lambda t: quartic.chi_prime(t) - lam, -80.0, 0.0)
    return math.exp(0.5 * t_s) + 0j


def test_flat_leaves_constant(flat_ray_small, flat):
    _, ray = flat_ray_small
    leaf = trace_leaf(ray, flat, 0.35 + 0.2j, n_steps=512)
    assert np.max(np.abs(leaf.curve - leaf.anchor)) < 1e-9
    assert abs(leaf.u_limit - leaf.anchor) < 1e-9


def test_leaf_through_origin_trivial(flat_ray_small, flat):
    _, ray = flat_ray_small
    leaf = trace_leaf(ray, flat, 0j)
    assert np.all(leaf.curve == 0)
    assert leaf.lam_leaf == 0.0
    assert disc_area(leaf, flat) == 0.0


def test_quartic_leaf_constant_chart_and_drift(quartic_ray, quartic):
    leaf = trace_leaf(quartic_ray, quartic, _anchor(quartic, 0.3),
                      n_steps=1024)
    assert np.max(np.abs(leaf.curve - leaf.anchor)) < 1e-8
    assert leaf.h_drift / leaf.lam_leaf < 1e-3
    assert abs(leaf.lam_leaf - 0.3) < 5e-3


def test_anchor_outside_ray_raises(quartic_ray, quartic):
    with pytest.raises(ValueError, match="outside"):
        trace_leaf(quartic_ray, quartic, 0.95 + 0j)


def test_radial_ambient_modulus_decreases(quartic_ray, quartic):
    leaf = trace_leaf(quartic_ray, quartic, _anchor(quartic, 0.2),
                      n_steps=1024)
    r = np.abs(leaf.ambient)
    assert np.all(np.diff(r) < 0)


def test_disc_area_radial(quartic_ray, quartic):
    leaf = trace_leaf(quartic_ray, quartic, _anchor(quartic, 0.25),
                      n_steps=1024)
    area = disc_area(leaf, quartic)
    assert abs(area - 0.25) < 5e-3
    assert abs(area - leaf.lam_leaf) < 1e-3


def test_leaf_boundary_on_equilibrium(quartic_ray, quartic):
    grid = quartic_ray.spatial_grid
    leaf = trace_leaf(quartic_ray, quartic, _anchor(quartic, 0.2),
                      n_steps=1024)
    bd = leaf_boundary(leaf, quartic)
    from pshlab.envelope_solver import radial_envelope
    res = radial_envelope(quartic, leaf.lam_leaf, grid)
    poly = res.boundary
    worst = 0.0
    for pt in bd[::32]:
        worst = max(worst, float(np.min(np.hypot(poly[:, 0] - pt[0],
                                                 poly[:, 1] - pt[1]))))
    assert worst <= 2.0 * grid.h


def test_leaves_disjoint(quartic_ray, quartic):
    leaves = [trace_leaf(quartic_ray, quartic, _anchor(quartic, lam) * ph,
                         n_steps=512)
              for lam in (0.15, 0.3) for ph in (1.0, np.exp(1j))]
    n = len(leaves)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = leaves[i], leaves[j]
            k = min(len(a.t_samples), len(b.t_samples))
            gap = np.min(np.abs(a.ambient[:k] - b.ambient[:k]))
            if abs(a.lam_leaf - b.lam_leaf) > 1e-6:
                assert gap > 0.0
            else:
                # same level, different phase: disjoint rays of one disc
                assert gap > 0.0


def test_perturbed_leaf(perturbed_ray_small, perturbed):
    grid = perturbed_ray_small.spatial_grid
    lams = [l for l, _ in zip(perturbed_ray_small.lam_grid,
                              perturbed_ray_small.slices)]
    res = None
    for lam, fld in zip(perturbed_ray_small.lam_grid,
                        perturbed_ray_small.slices):
        if abs(lam - 0.2) < 1e-9:
            break
    res = grid_envelope(perturbed, 0.2, grid, tol=1e-9)
    _, poly = extract_equilibrium(res)
    i = int(np.argmin(np.abs(np.arctan2(poly[:, 1], poly[:, 0]))))
    anchor = poly[i, 0] + 1j * poly[i, 1]
    leaf = trace_leaf(perturbed_ray_small, perturbed, anchor, n_steps=512)
    area = disc_area(leaf, perturbed)
    # coarse ray (128^2, 24 slices): machinery-level tolerances
    assert abs(area - leaf.lam_leaf) < 2e-2
    assert leaf.h_drift / leaf.lam_leaf < 2e-2


def test_tubular_map_flat_identity(flat_ray_small, flat):
    _, ray = flat_ray_small
    net = polar_anchor_net([0.3, 0.45], 6)
    tmap = build_tubular_map(ray, flat, net)
    assert np.max(np.abs(tmap.u_points - tmap.anchors)) < 1e-8
    assert tmap.u_points.shape == (2, 6)


def test_tubular_map_origin(flat_ray_small, flat):
    _, ray = flat_ray_small
    tmap = build_tubular_map(ray, flat, [0j, 0.3 + 0j])
    assert tmap.u_points[0] == 0j


def test_tubular_map_radial_rings(quartic_ray, quartic):
    radii = [abs(_anchor(quartic, l)) for l in (0.1, 0.2, 0.3)]
    tmap = build_tubular_map(ray=quartic_ray, p=quartic,
                             anchors=polar_anchor_net(radii, 6))
    r_u = np.abs(tmap.u_points)
    assert np.max(np.std(r_u, axis=1)) < 1e-9      # circles to circles
    assert np.all(np.diff(np.mean(r_u, axis=1)) > 0)   # monotone radius


def test_check_pullback_flat(flat_ray_small, flat):
    _, ray = flat_ray_small
    tmap = build_tubular_map(ray, flat, polar_anchor_net([0.3, 0.45, 0.6], 8))
    assert check_pullback(tmap, ray, flat) < 1e-6


def test_check_pullback_quartic(quartic_ray, quartic):
    radii = [abs(_anchor(quartic, l)) for l in (0.08, 0.16, 0.24, 0.32)]
    tmap = build_tubular_map(quartic_ray, quartic, polar_anchor_net(radii, 8))
    assert check_pullback(tmap, quartic_ray, quartic) <= 5e-2


def test_check_pullback_single_anchor_raises(flat_ray_small, flat):
    _, ray = flat_ray_small
    tmap = build_tubular_map(ray, flat, [0.3 + 0j])
    with pytest.raises(ValueError, match="coarse"):
        check_pullback(tmap, ray, flat)
