"""S^1-invariant weak geodesic rays assembled from envelope slices by
Legendre duality, with the Hamiltonian and degenerate-Monge-Ampere
diagnostics.

The invariance kills the disc variable: with t = -ln|tau|^2 the geodesic
potential is

    u(x, t) = sup_lam { a_lam(x) + lam * t },        t in [0, T_max],

the convex conjugate (in t) of the slice family a_lam = deficit of the
envelope at pole weight lam.  Conversely

    alpha_lam(x) = inf_t { u(x, t) - lam * t }

must reproduce the slices (involution of convex conjugation).  Both
directions are computed exactly on the piecewise-linear-in-lam model:
the conjugate minimizes over the breakpoints of u(x, .), not over a
sampled t-grid, so the round trip is limited only by concavity defects
of the input family.

The Hamiltonian is the t-slope H(x,t) = argmax lam (ties broken upward,
the right slope of the convex function u(x, .)); it is nondecreasing in
t, vanishes exactly where the maximizer is the zero slice (the pole
locus), and satisfies {a_lam < 0} = {H_0 < lam} on the lam-grid by
construction of the argmax.  A refined crossing solve on the slope
differences gives a smooth Hamiltonian field off the lam-grid, used by
the foliation tracer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .field_grid import GridSpec, ScalarField
from .envelope_solver import EnvelopeResult, grid_envelope, radial_envelope

_NEG_FILL = -1e300


@dataclass
class GeodesicRay:
    """Slice family {a_lam}, its conjugate potential u(x,t), and grids.

    slices[k] is the deficit field at lam_grid[k]; u and argmax are
    materialized lazily as (n_t, ny, nx) arrays; cutoff c bounds the
    lam-grid from above.
    """

    spatial_grid: GridSpec
    lam_grid: np.ndarray
    t_grid: np.ndarray
    slices: list
    cutoff: float
    backend: str = ""
    _stack: np.ndarray = field(default=None, repr=False)
    _u: np.ndarray = field(default=None, repr=False)
    _argmax: np.ndarray = field(default=None, repr=False)

    @property
    def t_max(self) -> float:
        return float(self.t_grid[-1])

    @property
    def d_lam(self) -> float:
        return float(self.lam_grid[1] - self.lam_grid[0])

    def slice_stack(self) -> np.ndarray:
        """(m, ny, nx) array of slice values, masked nodes at a large
        negative fill (the pole column)."""
        if self._stack is None:
            self._stack = np.stack([s.masked_fill(_NEG_FILL) for s in self.slices])
            self._stack.setflags(write=False)
        return self._stack

    def u_values(self) -> np.ndarray:
        self._materialize()
        return self._u

    def argmax_index(self) -> np.ndarray:
        self._materialize()
        return self._argmax

    def _materialize(self):
        if self._u is not None:
            return
        A = self.slice_stack()
        m = len(self.lam_grid)
        nt = len(self.t_grid)
        u = np.empty((nt,) + A.shape[1:], dtype=float)
        arg = np.empty((nt,) + A.shape[1:], dtype=np.uint16)
        for i, t in enumerate(self.t_grid):
            vals = A + self.lam_grid[:, None, None] * t
            rev = vals[::-1]
            idx_rev = np.argmax(rev, axis=0)
            arg[i] = (m - 1 - idx_rev).astype(np.uint16)
            u[i] = np.take_along_axis(vals, arg[i][None, ...].astype(int),
                                      axis=0)[0]
        self._u = u
        self._argmax = arg

    def eval_u(self, t):
        """u(., t) for scalar t, exact sup over the slice family."""
        A = self.slice_stack()
        vals = A + self.lam_grid[:, None, None] * float(t)
        return vals.max(axis=0)

    def mask(self) -> np.ndarray:
        return self.slices[0].mask


def default_t_grid(c: float, m: int, grid: GridSpec | None = None,
                   n_t: int = 96, pad: float = 2.0) -> np.ndarray:
    """[0, T_max] long enough that every conjugating infimum is attained
    interiorly: beyond ln(c/lam_1) (lam_1 the first positive node), the
    range must also cover the pole-adjacent nodes, whose minimizing t
    grows like ln(lam/|z|^2); the closest masked-in node sits at |z| = h."""
    lam1 = c / m
    t_max = math.log(c / lam1) + pad
    if grid is not None:
        t_max = max(t_max, math.log(c / grid.h ** 2) + pad)
    return np.linspace(0.0, t_max, n_t)


def assemble_geodesic(slices, t_grid=None, c: float | None = None,
                      n_t: int = 96, mono_tol: float = 1e-7) -> GeodesicRay:
    """Assemble the ray u(x,t) = max_k (a_k(x) + lam_k t) from envelope slices.

    `slices` is a list of (lam, EnvelopeResult-or-ScalarField) with strictly
    increasing lam in [0, c); the family must be pointwise nonincreasing in
    lam (monotonicity of the envelopes); a violation beyond mono_tol raises,
    naming the offending pair.
    """
    lam_list = []
    fields = []
    backend = ""
    for lam, item in slices:
        lam_list.append(float(lam))
        if isinstance(item, EnvelopeResult):
            fields.append(item.deficit)
            backend = item.backend
        else:
            fields.append(item)
    lam_arr = np.asarray(lam_list)
    if len(lam_arr) < 1 or np.any(np.diff(lam_arr) <= 0):
        raise ValueError("lam grid must be strictly increasing")
    if c is None:
        c = float(lam_arr[-1] + (lam_arr[1] - lam_arr[0] if len(lam_arr) > 1 else 0.1))
    if lam_arr[-1] >= c or lam_arr[0] != 0.0:
        raise ValueError("lam grid must start at 0 and stay below the cutoff c")

    grid = fields[0].grid
    for k in range(len(fields) - 1):
        lo, hi = fields[k], fields[k + 1]
        if hi.grid != grid:
            raise ValueError("slices live on different grids")
        m = lo.mask & hi.mask
        gap = float(np.max(hi.values[m] - lo.values[m])) if m.any() else 0.0
        if gap > mono_tol:
            raise ValueError(
                f"slice family is not monotone: a[lam={lam_arr[k]:.6g}] < "
                f"a[lam={lam_arr[k + 1]:.6g}] by {gap:.3g} somewhere")

    if t_grid is None:
        t_grid = default_t_grid(c, len(lam_arr), grid=grid, n_t=n_t)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t grid must start at 0 and increase")
    return GeodesicRay(spatial_grid=grid, lam_grid=lam_arr, t_grid=t_grid,
                       slices=fields, cutoff=float(c), backend=backend)


def oracle_slices(p, c: float, m: int, grid: GridSpec):
    """Closed-form slice family for a radial weight: list of
    (lam, deficit ScalarField) on the lam-grid {k c / m}."""
    out = []
    for k in range(m):
        lam = c * k / m
        res = radial_envelope(p, lam, grid)
        out.append((lam, res))
    return out


def grid_slices(p, c: float, m: int, grid: GridSpec, tol: float = 1e-9,
                **kwargs):
    """Solver slice family with warm starts along the lam sweep."""
    out = []
    warm = None
    for k in range(m):
        lam = c * k / m
        res = grid_envelope(p, lam, grid, tol=tol, warm_start=warm,
                            require_psh=(k == 0), **kwargs)
        warm = np.array(res.envelope.values)
        out.append((lam, res))
    return out


# ---------------------------------------------------------------------------
# exact conjugation
# ---------------------------------------------------------------------------

def legendre_slices(ray: GeodesicRay, lams) -> list:
    """alpha_lam(x) = min over t in [0, T_max] of (u(x,t) - lam t), exact on
    the piecewise-linear model: the minimum is scanned over the breakpoint
    set of u(x, .) plus the endpoints, with u evaluated by its defining max.
    Returns a list of ScalarFields matching `lams`."""
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    if np.any(lams < 0) or np.any(lams >= ray.cutoff):
        raise ValueError(f"lam outside [0, {ray.cutoff}): {lams}")
    A = ray.slice_stack()
    m, ny, nx = A.shape
    lam = ray.lam_grid
    t_lo, t_hi = 0.0, ray.t_max

    # breakpoints between consecutive slices: t_k = (a_k - a_{k+1}) / dlam_k
    dl = lam[1:] - lam[:-1]
    with np.errstate(invalid="ignore", over="ignore"):
        t_br = (A[:-1] - A[1:]) / dl[:, None, None]
    t_br = np.clip(np.nan_to_num(t_br, nan=t_lo, posinf=t_hi, neginf=t_lo),
                   t_lo, t_hi)

    n_cand = m + 1
    U = np.empty((n_cand, ny, nx))
    T = np.empty((n_cand, ny, nx))
    T[0] = t_lo
    T[1:m] = t_br
    T[m] = t_hi
    for j in range(n_cand):
        tj = T[j]
        vals = A + lam[:, None, None] * tj[None, ...]
        U[j] = vals.max(axis=0)

    out = []
    base_mask = ray.mask()
    for lq in lams:
        conj = (U - lq * T).min(axis=0)
        vals = np.where(base_mask, conj, 0.0)
        out.append(ScalarField(ray.spatial_grid, vals, base_mask))
    return out


# ---------------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------------

@dataclass
class HamiltonianField:
    """t-slope of the ray: values[i] = H(., t_i), h0 = H(., 0).

    H >= 0; H = 0 exactly where the argmax slice index is 0 (the pole
    locus in the zero-slice coincidence region)."""

    t_grid: np.ndarray
    values: np.ndarray
    h0: ScalarField
    max_fd_gap: float = float("nan")


def hamiltonian(ray: GeodesicRay, fd_check: bool = True,
                fd_delta: float = 1e-3) -> HamiltonianField:
    """H = lam_grid[argmax], the right slope of u(x, .), plus an optional
    cross-check against small-step finite differences of the exact u.

    The reported gap max |du/dt - H| uses one-sided steps at the ends of
    the t-grid and centered steps inside; for a convex piecewise-linear
    u the gap is bounded by the local slope spread, at most one lam bin
    away from a breakpoint."""
    arg = ray.argmax_index()
    H = ray.lam_grid[arg.astype(int)]
    h0 = ScalarField(ray.spatial_grid,
                     np.where(ray.mask(), H[0], 0.0), ray.mask())
    gap = float("nan")
    if fd_check:
        delta = min(fd_delta, 0.25 * float(np.min(np.diff(ray.t_grid))))
        gap = 0.0
        msk = ray.mask()
        for i, t in enumerate(ray.t_grid):
            if i == 0:
                du = (ray.eval_u(t + delta) - ray.eval_u(t)) / delta
            elif i == len(ray.t_grid) - 1:
                du = (ray.eval_u(t) - ray.eval_u(t - delta)) / delta
            else:
                du = (ray.eval_u(t + delta) - ray.eval_u(t - delta)) / (2 * delta)
            gap = max(gap, float(np.max(np.abs(du - H[i])[msk])))
    return HamiltonianField(t_grid=ray.t_grid, values=H, h0=h0,
                            max_fd_gap=gap)


def smooth_hamiltonian(ray: GeodesicRay, t: float = 0.0) -> ScalarField:
    """Off-grid Hamiltonian by solving  d/dlam a_lam(x) + t = 0  on the
    midpoint slope grid of the slice family.

    The slope differences D_k = (a_{k+1} - a_k)/dlam sit at midpoints
    lam_{k+1/2} and decrease in k (concavity).  The crossing of D = -t is
    located by linear interpolation through the first two points past the
    plateau, which recovers the square-root touch of the deficit at the
    free boundary without the half-bin bias of a floor argmax.  Values
    clamp to [0, lam_top]."""
    cache = getattr(ray, "_smooth_h_cache", None)
    if cache is not None and cache[0] == float(t):
        return cache[1]
    if len(ray.lam_grid) < 2:
        msk = ray.mask()
        out = ScalarField(ray.spatial_grid, np.zeros(ray.spatial_grid.shape), msk)
        ray._smooth_h_cache = (float(t), out)
        return out
    A = ray.slice_stack()
    lam = ray.lam_grid
    D = (A[1:] - A[:-1]) / (lam[1:] - lam[:-1])[:, None, None]
    vals = _slope_crossing(D, lam, float(t))
    msk = ray.mask()
    out = ScalarField(ray.spatial_grid, np.where(msk, vals, 0.0), msk)
    ray._smooth_h_cache = (float(t), out)
    return out


def _slope_crossing(D, lam, t, plateau_eps=1e-7):
    """Solve D(mu) = -t along axis 0 by a two-point secant, vectorized
    over trailing axes; D[k] is the forward difference of the family over
    the bin [lam_k, lam_{k+1}].

    The secant runs in ln(mu) with each difference pinned at the exact
    log-mean of its bin, which makes the flat-weight slope curve (linear
    in ln mu) solve exactly.  When the first sub-threshold difference
    sits right past the zero plateau of the family it straddles the free-
    boundary kink; the root is then read off the next two smooth-branch
    differences and clipped to the kink bin, removing the O(dlam) bias."""
    lam = np.asarray(lam, dtype=float)
    lam_top = lam[-1]
    mids = 0.5 * (lam[1:] + lam[:-1])
    nm = D.shape[0]
    neg = D + t < -plateau_eps
    first = np.where(neg.any(axis=0), neg.argmax(axis=0), nm)
    flat = first.ravel()
    Df = D.reshape(nm, -1)
    res = np.full(flat.shape, lam_top)
    lo_bin, hi_bin = lam[:-1], lam[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = (hi_bin * (np.log(hi_bin) - 1.0)
              - np.where(lo_bin > 0, lo_bin * (np.log(lo_bin) - 1.0), 0.0)) \
            / (hi_bin - lo_bin)

    def secant(ja, jb, sel, lo, hi):
        da = Df[ja, sel] + t
        db = Df[jb, sel] + t
        denom = db - da
        good = np.abs(denom) > 1e-30
        est = np.exp(np.where(good, nu[ja] - da * (nu[jb] - nu[ja])
                              / np.where(good, denom, 1.0),
                              np.log(0.5 * (lo + hi))))
        return np.clip(est, lo, hi)

    for j0 in range(nm):
        sel = np.nonzero(flat == j0)[0]
        if sel.size == 0:
            continue
        if j0 == 0:
            plateau = np.ones(sel.shape, dtype=bool)
        else:
            plateau = Df[j0 - 1, sel] >= -plateau_eps
        if j0 + 2 < nm:
            ks = sel[plateau]
            if ks.size:
                res[ks] = secant(j0 + 1, j0 + 2, ks,
                                 max(lam[j0], 1e-300), lam[j0 + 1])
            sm = sel[~plateau]
            if sm.size:
                res[sm] = secant(max(j0 - 1, 0), j0, sm,
                                 mids[max(j0 - 1, 0)], mids[j0])
        else:
            ja = max(j0 - 1, 0)
            res[sel] = secant(ja, min(ja + 1, nm - 1), sel,
                              mids[max(j0 - 1, 0)], lam_top)
    return res.reshape(D.shape[1:])


# ---------------------------------------------------------------------------
# weak solution and residual diagnostics
# ---------------------------------------------------------------------------

@dataclass
class WeakSolution:
    t_grid: np.ndarray
    values: np.ndarray          # NaN where not claimed
    claimed: np.ndarray
    cutoff: float


def weak_solution(ray: GeodesicRay, c: float | None = None) -> WeakSolution:
    """Phi_w(x,t) = u(x,t) - c t on the region where the maximizing slope
    stays below the top lam node; outside that region the sup formula is
    not claimed and the field carries NaN."""
    if c is None:
        c = ray.cutoff
    if abs(c - ray.cutoff) > 1e-12:
        raise ValueError("cutoff must match the ray")
    u = ray.u_values()
    arg = ray.argmax_index()
    m = len(ray.lam_grid)
    claimed = arg.astype(int) < (m - 1)
    claimed = claimed & ray.mask()[None, ...]
    vals = u - c * ray.t_grid[:, None, None]
    vals = np.where(claimed, vals, np.nan)
    return WeakSolution(t_grid=ray.t_grid, values=vals, claimed=claimed,
                        cutoff=float(c))


def hmae_residual(ray: GeodesicRay, p, band_tol: float | None = None) -> dict:
    """Degeneracy diagnostics of the ray.

    (i) convexity defect: most negative second difference of u in t
    (nonnegative up to rounding, u being a max of affine functions);
    (ii) per slice, the sup of |discrete Laplacian of (phi + a_lam)| over
    the strict region {a_lam < -band_tol}, excluding the neighbourhood of
    the pole where the log stencil is unresolved.  Slice harmonicity off
    the coincidence set is the fiberwise degeneracy of the ray.
    """
    grid = ray.spatial_grid
    if grid.n != 1 or grid.style != "cartesian":
        raise ValueError("residual diagnostics run on n=1 cartesian rays")
    h = grid.h
    if band_tol is None:
        band_tol = 50.0 * h * h

    u = ray.u_values()
    d2 = u[2:] - 2.0 * u[1:-1] + u[:-2]
    msk = ray.mask()
    defect = float(max(0.0, -np.min(d2[:, msk]))) if d2.size else 0.0

    z = grid.nodes()
    phi_vals = p.value(z)
    rho = grid.rho()
    residuals = []
    for lam, fld in zip(ray.lam_grid, ray.slices):
        if lam == 0:
            residuals.append(0.0)
            continue
        w = phi_vals + fld.masked_fill(np.nan)
        lap = np.full_like(w, np.nan)
        lap[1:-1, 1:-1] = (w[2:, 1:-1] + w[:-2, 1:-1] + w[1:-1, 2:]
                           + w[1:-1, :-2] - 4.0 * w[1:-1, 1:-1]) / (h * h)
        # pole exclusion: radius where the sampled-log stencil error
        # lam * 2/(m^4 h^2) stays under the 10h budget
        m_excl = max(2.0, (2.0 * lam / (10.0 * h ** 3)) ** 0.25 * 1.3)
        strict = fld.mask & (fld.values < -band_tol) & (rho > (m_excl * h) ** 2)
        strict &= np.isfinite(lap)
        residuals.append(float(np.max(np.abs(lap[strict]))) if strict.any()
                         else 0.0)
    return {"convexity_defect": defect,
            "slice_residuals": np.asarray(residuals),
            "max_slice_residual": float(np.max(residuals)) if residuals else 0.0,
            "band_tol": band_tol}


def certified_lambda(results) -> float:
    """Largest pole weight among the results whose equilibrium boundary is
    a simple closed interior curve and whose pole-weight fit passes; a
    working proxy for the validity radius of the structural claims (never
    more than that)."""
    from .envelope_solver import lelong_check
    from .geometry import polyline_is_simple
    best = 0.0
    for res in results or []:
        if res.lam == 0 or res.grid.n != 1 or res.grid.style != "cartesian":
            continue
        grid = res.grid
        try:
            ok = lelong_check(res).passed
        except ValueError:
            ok = False
        poly = res.boundary
        interior = len(poly) >= 8 and np.all(
            np.hypot(poly[:, 0], poly[:, 1]) < grid.radius - 2 * grid.h)
        if ok and interior and polyline_is_simple(poly):
            best = max(best, res.lam)
    return best
