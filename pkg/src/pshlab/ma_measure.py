"""Monge-Ampere masses, boundary circulations, and the mean-value moment
check on equilibrium complements.

With dd^c normalised so that dd^c ln|z|^2 is the unit Dirac mass, the
measure of a weight phi on a region of the plane is the integral of the
density phi_{z zbar} / pi.  Masses are integrated cell by cell: cells cut
by the region's boundary polyline contribute the exact clipped fraction
of their area, evaluated at the clipped centroid, otherwise moment errors
at the free boundary would dominate the targets.  Sums run through
math.fsum in a fixed raster order: exact rounding makes symmetric
contributions cancel to machine precision and keeps outputs bitwise
deterministic.

The mean-value check integrates the holomorphic monomials z^k over the
equilibrium complement: the zeroth moment is the enclosed mass (equal to
the pole weight), and the normalised higher moments must vanish -- the
moment characterization of the equilibrium family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envelope_solver import EnvelopeResult, extract_equilibrium
from .geometry import (clip_polygon_to_rect, points_in_polygon, polygon_area,
                       polygon_centroid)


@dataclass
class MeasureReport:
    """Region moments of the Monge-Ampere measure of a weight.

    moments[k] = integral of z^k over the region; mass = moments[0];
    lebesgue_area recorded alongside to keep the two volume notions
    (measure volume vs area) unambiguous.  Normalization: dd^c ln|z|^2
    has unit mass."""

    lam: float
    mass: float
    moments: np.ndarray
    lebesgue_area: float
    k_max: int

    def normalized_moments(self) -> np.ndarray:
        return np.abs(self.moments[1:]) / self.mass


def _cells_near_polyline(grid, poly):
    """Raster indices of cells within one cell of a polyline segment."""
    ax = grid.axis()
    h = grid.h
    n = grid.resolution
    hot = np.zeros((n, n), dtype=bool)
    pts = np.asarray(poly)
    nxt = np.roll(pts, -1, axis=0)
    for (x0, y0), (x1, y1) in zip(pts, nxt):
        steps = max(2, int(np.hypot(x1 - x0, y1 - y0) / (0.5 * h)) + 2)
        ts = np.linspace(0.0, 1.0, steps)
        xs = x0 + ts * (x1 - x0)
        ys = y0 + ts * (y1 - y0)
        ii = np.clip(np.round((xs - ax[0]) / h).astype(int), 0, n - 1)
        jj = np.clip(np.round((ys - ax[0]) / h).astype(int), 0, n - 1)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                hot[np.clip(ii + di, 0, n - 1), np.clip(jj + dj, 0, n - 1)] = True
    return hot


def _region_cells(p, grid, mask, poly, k_max):
    """Per-cell contributions (area-weighted densities times z^k)."""
    ax = grid.axis()
    h = grid.h
    cell_area = h * h
    if poly is not None and len(poly) >= 3:
        hot = _cells_near_polyline(grid, poly)
        x, y = np.meshgrid(ax, ax, indexing="ij")
        inside = points_in_polygon(x, y, poly)
        full = inside & ~hot
        if mask is not None:
            full &= mask
    else:
        hot = np.zeros((grid.resolution,) * 2, dtype=bool)
        full = mask.copy()
        inside = mask

    rim = grid.inside_mask() & ~grid.interior_mask()
    if (full & rim).any() or (hot & rim & inside).any():
        raise ValueError("region touches the masked-out boundary layer of "
                         "the grid")

    zs = []
    areas = []
    # full cells: centre evaluation, exact cell area
    xi, yi = np.nonzero(full)
    zs.append(ax[xi] + 1j * ax[yi])
    areas.append(np.full(len(xi), cell_area))
    # cut cells: exact polygon clipping, centroid evaluation
    if poly is not None and len(poly) >= 3:
        for i, j in zip(*np.nonzero(hot)):
            x0, y0 = ax[i] - 0.5 * h, ax[j] - 0.5 * h
            clipped = clip_polygon_to_rect(np.asarray(poly), x0, x0 + h,
                                           y0, y0 + h)
            if len(clipped) < 3:
                continue
            a = abs(polygon_area(clipped))
            if a <= 0.0:
                continue
            cx, cy = polygon_centroid(clipped)
            zs.append(np.array([cx + 1j * cy]))
            areas.append(np.array([a]))
    z = np.concatenate(zs) if zs else np.zeros(0, complex)
    w = np.concatenate(areas) if areas else np.zeros(0)
    return z, w


def ma_mass(p, region_mask=None, grid=None, polyline=None,
            radius: float | None = None) -> float:
    """Monge-Ampere mass of p over a region.

    Radial weights with a disc region {|z| <= radius}: exact, the
    enclosed mass is chi'(ln radius^2).  Otherwise (n=1): cell sums of
    the closed-form density with polygon clipping along `polyline`; the
    region is `region_mask` or the polyline interior.  Regions touching
    the grid's masked-out rim are an error.
    """
    if radius is not None:
        if getattr(p, "symmetry", "general") != "radial":
            raise ValueError("radius shortcut requires a radial weight")
        return float(p.chi_prime(math.log(radius ** 2)))
    if p.n != 1:
        raise ValueError("grid masses are n=1 only")
    if grid is None:
        raise ValueError("grid required for sampled regions")
    z, w = _region_cells(p, grid, region_mask, polyline, 0)
    dens = p.density(z)
    return float(math.fsum((dens * w).tolist()))


def region_moments(p, grid, region_mask, polyline, k_max: int):
    """Moments M_k = integral of z^k against the MA measure, k = 0..k_max,
    compensated fixed-order summation."""
    z, w = _region_cells(p, grid, region_mask, polyline, k_max)
    dens = p.density(z)
    base = dens * w
    moments = np.empty(k_max + 1, dtype=complex)
    area = math.fsum(w.tolist())
    for k in range(k_max + 1):
        vals = base * (z ** k if k else 1.0)
        moments[k] = complex(math.fsum(vals.real.tolist()),
                             math.fsum(vals.imag.tolist()))
    return moments, area


def reproducing_check(p, e: EnvelopeResult, k_max: int = 4,
                      refine: bool = True) -> MeasureReport:
    """Moment report over the equilibrium complement B = {deficit < 0}.

    M_0 is the enclosed mass (should equal the pole weight: the measure
    grows at the injection rate); |M_k|/M_0 for k >= 1 should vanish by
    the mean-value property of the complement.  Raises on an empty
    complement."""
    if e.grid.n != 1 or e.grid.style != "cartesian":
        raise ValueError("reproducing check runs on n=1 cartesian results")
    if e.lam == 0:
        raise ValueError("empty equilibrium complement at lam = 0")
    mask, poly = extract_equilibrium(e, refine=refine)
    if len(poly) < 3:
        raise ValueError("empty or unresolved equilibrium complement")
    comp = ~mask & e.envelope.mask
    moments, area = region_moments(p, e.grid, comp, poly, k_max)
    return MeasureReport(lam=e.lam, mass=float(moments[0].real),
                         moments=moments, lebesgue_area=float(area),
                         k_max=k_max)


def boundary_mass(p, polyline: np.ndarray, closed: bool = True) -> float:
    """Circulation of d^c p along a closed polyline: the enclosed dd^c
    mass by the divergence identity; a cross-check for ma_mass.

    Polylines are implicitly closed (no repeated endpoint); callers
    holding an open arc must not pass closed=False -- that is an error.
    Degenerate (zero-length) polylines integrate to 0.
    """
    if not closed:
        raise ValueError("open polyline: boundary circulation undefined")
    poly = np.asarray(polyline, dtype=float)
    if len(poly) < 3:
        return 0.0
    if np.allclose(poly[0], poly[-1]):
        poly = poly[:-1]
    nxt = np.roll(poly, -1, axis=0)
    mid = 0.5 * (poly + nxt)
    dx = nxt[:, 0] - poly[:, 0]
    dy = nxt[:, 1] - poly[:, 1]
    zmid = mid[:, 0] + 1j * mid[:, 1]
    gz = p.grad(zmid)
    fx, fy = 2.0 * gz.real, -2.0 * gz.imag
    terms = (fx * dy - fy * dx) / (4.0 * math.pi)
    return float(math.fsum(terms.tolist()))
