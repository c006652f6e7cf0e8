"""Strictly plurisubharmonic weights as closed-form term lists, plus the
three constructions the rest of the toolkit leans on:

* chart normalization  -- split off the pluriharmonic part and apply a
  linear change of coordinates so the weight reads |z|^2 + O(|z|^3);
* regularized maximum  -- the bump-convolved max of two weights, smooth,
  strictly psh, equal to either input off a prescribed transition band,
  with the quantitative C2 bound
      ||u - b||_C2  <=  width + ||a - b||_C2 + ||d(a-b)||_C0^2 / width;
* gluing to the ball   -- blend a normalized weight near 0 into |z|^2 on
  the unit disc through the barrier (1+s)|z|^2 - 2w, transition radius
  sigma = 3 sqrt(w/s).

Potentials are term lists, not just samples, so transition radii, scale
factors and equality regions are exact.  All evaluators are vectorized
over complex coordinate arrays and pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .field_grid import GridSpec, ScalarField

_KINDS = ("const", "polyrad", "ball", "reharm", "perturb", "herm")


@dataclass(frozen=True)
class Term:
    """One closed-form building block of a potential.

    kind      meaning (n = 1 or 2 complex variables)
    -------   ----------------------------------------------
    const     c
    polyrad   c * |z1|^(2 e1) * |z2|^(2 e2)          (radial monomial)
    ball      c * (|z1|^2 + |z2|^2)^k                (power of the norm)
    reharm    Re(c * z1^m1 * z2^m2)                  (pluriharmonic)
    perturb   Re(c * z^m) * |z|^(2k)
    herm      c * Re(z_i * conj(z_j)), i != j        (hermitian cross)
    """

    kind: str
    coeff: complex
    exps: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")


def _rho(Z):
    if isinstance(Z, tuple):
        return sum((z * z.conj()).real for z in Z)
    return (Z * Z.conj()).real


def _zpow(z, m):
    if m == 0:
        return np.ones_like(z)
    return z ** m


class Potential:
    """A strictly psh weight given as a term list over C^n (n = 1 or 2).

    Provides exact values, Wirtinger gradients, the complex Hessian and
    the holomorphic second derivatives, a radial profile chi with
    phi(z) = chi(ln|z|^2) when all terms are radial, and sampling onto
    grids.  Symmetry is inferred from the terms: 'radial' (function of
    |z|^2), 'reinhardt' (function of (|z_1|^2, |z_2|^2)), else 'general'.
    """

    def __init__(self, n: int, terms, name: str = ""):
        if n not in (1, 2):
            raise ValueError("n must be 1 or 2")
        self.n = n
        self.terms = [t if isinstance(t, Term) else Term(*t) for t in terms]
        self.name = name
        for t in self.terms:
            self._check_term(t)

    def _check_term(self, t: Term):
        if t.kind == "polyrad":
            exps = t.exps if len(t.exps) == self.n else t.exps + (0,)
            if len(exps) != self.n or any(e < 0 for e in exps):
                raise ValueError(f"bad polyrad exponents {t.exps}")
            if abs(t.coeff.imag) > 0:
                raise ValueError("radial term needs a real coefficient")
        elif t.kind == "ball":
            if len(t.exps) != 1 or t.exps[0] < 1:
                raise ValueError(f"bad ball exponent {t.exps}")
        elif t.kind == "reharm":
            if len(t.exps) != self.n or any(m < 0 for m in t.exps):
                raise ValueError(f"bad reharm exponents {t.exps}")
        elif t.kind == "perturb":
            if len(t.exps) != self.n + 1:
                raise ValueError("perturb needs monomial exponents plus a radial power")
        elif t.kind == "herm":
            if self.n != 2 or tuple(sorted(t.exps)) != (0, 1):
                raise ValueError("herm term requires n=2 and indices (0,1)")

    # -- symmetry ------------------------------------------------------

    @property
    def symmetry(self) -> str:
        kinds = {t.kind for t in self.terms}
        if self.n == 1:
            return "radial" if kinds <= {"const", "polyrad", "ball"} else "general"
        if kinds <= {"const", "ball"}:
            return "radial"
        if kinds <= {"const", "ball", "polyrad"}:
            return "reinhardt"
        return "general"

    # -- radial profile chi(t), phi = chi(ln rho) ----------------------

    def _radial_powers(self):
        out = {}
        for t in self.terms:
            if t.kind == "const":
                out[0] = out.get(0, 0.0) + t.coeff.real
            elif t.kind == "ball" or (t.kind == "polyrad" and self.n == 1):
                k = t.exps[0]
                out[k] = out.get(k, 0.0) + t.coeff.real
            else:
                raise ValueError("potential is not radial; no chi profile")
        return sorted(out.items())

    def chi(self, t):
        t = np.asarray(t, dtype=float)
        return sum(c * np.exp(k * t) for k, c in self._radial_powers())

    def chi_prime(self, t):
        t = np.asarray(t, dtype=float)
        return sum(c * k * np.exp(k * t) for k, c in self._radial_powers())

    def chi_second(self, t):
        t = np.asarray(t, dtype=float)
        return sum(c * k * k * np.exp(k * t) for k, c in self._radial_powers())

    def log_profile(self, t1, t2):
        """Reinhardt profile chi(t1, t2) with phi = chi(ln|z1|^2, ln|z2|^2)."""
        if self.symmetry not in ("radial", "reinhardt") or self.n != 2:
            raise ValueError("log_profile requires an n=2 reinhardt potential")
        t1 = np.asarray(t1, dtype=float)
        t2 = np.asarray(t2, dtype=float)
        out = np.zeros(np.broadcast(t1, t2).shape)
        for t in self.terms:
            if t.kind == "const":
                out = out + t.coeff.real
            elif t.kind == "ball":
                out = out + t.coeff.real * (np.exp(t1) + np.exp(t2)) ** t.exps[0]
            else:
                e1, e2 = (t.exps if len(t.exps) == 2 else (t.exps[0], 0))
                out = out + t.coeff.real * np.exp(e1 * t1 + e2 * t2)
        return out

    # -- pointwise calculus --------------------------------------------

    def _as_tuple(self, Z):
        if self.n == 1:
            return (np.asarray(Z, dtype=complex),)
        z1, z2 = Z
        return (np.asarray(z1, dtype=complex), np.asarray(z2, dtype=complex))

    def value(self, Z):
        Zt = self._as_tuple(Z)
        rho = _rho(Zt if self.n == 2 else Zt[0])
        out = np.zeros(rho.shape if rho.ndim else ())
        for t in self.terms:
            out = out + self._term_value(t, Zt, rho)
        return out

    def __call__(self, Z):
        return self.value(Z)

    def _term_value(self, t, Zt, rho):
        c = t.coeff
        if t.kind == "const":
            return np.full_like(rho, c.real)
        if t.kind == "ball":
            return c.real * rho ** t.exps[0]
        if t.kind == "polyrad":
            exps = t.exps if len(t.exps) == self.n else t.exps + (0,)
            out = c.real
            for z, e in zip(Zt, exps):
                if e:
                    out = out * ((z * z.conj()).real ** e)
            return out * np.ones_like(rho)
        if t.kind == "reharm":
            mono = np.ones_like(Zt[0])
            for z, m in zip(Zt, t.exps):
                mono = mono * _zpow(z, m)
            return (c * mono).real
        if t.kind == "perturb":
            *ms, k = t.exps
            mono = np.ones_like(Zt[0])
            for z, m in zip(Zt, ms):
                mono = mono * _zpow(z, m)
            return (c * mono).real * rho ** k
        if t.kind == "herm":
            i, j = t.exps
            return c.real * (Zt[i] * Zt[j].conj()).real
        raise AssertionError

    def grad(self, Z):
        """Wirtinger gradient (d/dz_1, ..., d/dz_n); f real so f_zbar = conj."""
        Zt = self._as_tuple(Z)
        rho = _rho(Zt if self.n == 2 else Zt[0])
        out = [np.zeros_like(Zt[0]) for _ in range(self.n)]
        for t in self.terms:
            for i in range(self.n):
                out[i] = out[i] + self._term_dz(t, Zt, rho, i)
        return out[0] if self.n == 1 else tuple(out)

    def _term_dz(self, t, Zt, rho, i):
        c = t.coeff
        z = Zt[i]
        if t.kind == "const":
            return np.zeros_like(z)
        if t.kind == "ball":
            k = t.exps[0]
            return c.real * k * rho ** (k - 1) * z.conj()
        if t.kind == "polyrad":
            exps = t.exps if len(t.exps) == self.n else t.exps + (0,)
            e = exps[i]
            if e == 0:
                return np.zeros_like(z)
            out = c.real * e * ((z * z.conj()).real ** (e - 1)) * z.conj()
            for jj, (zj, ej) in enumerate(zip(Zt, exps)):
                if jj != i and ej:
                    out = out * ((zj * zj.conj()).real ** ej)
            return out
        if t.kind == "reharm":
            m = t.exps[i]
            if m == 0:
                return np.zeros_like(z)
            out = 0.5 * c * m * _zpow(z, m - 1)
            for jj, (zj, mj) in enumerate(zip(Zt, t.exps)):
                if jj != i:
                    out = out * _zpow(zj, mj)
            return out
        if t.kind == "perturb":
            *ms, k = t.exps
            mono = np.ones_like(Zt[0])
            for zj, mj in zip(Zt, ms):
                mono = mono * _zpow(zj, mj)
            u = 0.5 * (c * mono)          # u + conj(u) = Re part
            uz = np.zeros_like(z)
            if ms[i]:
                uz = 0.5 * c * ms[i] * _zpow(z, ms[i] - 1)
                for jj, (zj, mj) in enumerate(zip(Zt, ms)):
                    if jj != i:
                        uz = uz * _zpow(zj, mj)
            v = rho ** k
            vz = k * rho ** (k - 1) * z.conj() if k else np.zeros_like(z)
            return uz * v + 2.0 * u.real * vz
        if t.kind == "herm":
            a, bidx = t.exps
            if i == a:
                return 0.5 * c.real * Zt[bidx].conj()
            if i == bidx:
                return 0.5 * c.real * Zt[a].conj()
            return np.zeros_like(z)
        raise AssertionError

    def hessian(self, Z):
        """Complex Hessian d^2 f / dz_i dzbar_j.

        n=1: one real array.  n=2: (h11, h12, h22) with h12 complex.
        """
        Zt = self._as_tuple(Z)
        rho = _rho(Zt if self.n == 2 else Zt[0])
        if self.n == 1:
            out = np.zeros_like(rho)
            for t in self.terms:
                out = out + self._term_hess(t, Zt, rho, 0, 0).real
            return out
        h11 = np.zeros_like(rho)
        h22 = np.zeros_like(rho)
        h12 = np.zeros_like(Zt[0])
        for t in self.terms:
            h11 = h11 + self._term_hess(t, Zt, rho, 0, 0).real
            h22 = h22 + self._term_hess(t, Zt, rho, 1, 1).real
            h12 = h12 + self._term_hess(t, Zt, rho, 0, 1)
        return h11, h12, h22

    def _term_hess(self, t, Zt, rho, i, j):
        """d^2 term / dz_i dzbar_j."""
        c = t.coeff
        zi, zj = Zt[i], Zt[j]
        zeros = np.zeros_like(zi)
        if t.kind in ("const", "reharm"):
            return zeros
        if t.kind == "ball":
            k = t.exps[0]
            out = (k * rho ** (k - 1)) if i == j else zeros
            if k >= 2:
                out = out + k * (k - 1) * rho ** (k - 2) * zj * zi.conj()
            return out + 0j
        if t.kind == "polyrad":
            exps = t.exps if len(t.exps) == self.n else t.exps + (0,)
            if i == j:
                e = exps[i]
                if e == 0:
                    return zeros
                out = c.real * e * e * ((zi * zi.conj()).real ** (e - 1))
                for kk, (zk, ek) in enumerate(zip(Zt, exps)):
                    if kk != i and ek:
                        out = out * ((zk * zk.conj()).real ** ek)
                return out + 0j
            ei, ej = exps[i], exps[j]
            if ei == 0 or ej == 0:
                return zeros
            out = c.real * ei * ej \
                * ((zi * zi.conj()).real ** (ei - 1)) * zi.conj() \
                * ((zj * zj.conj()).real ** (ej - 1)) * zj
            return out
        if t.kind == "perturb":
            *ms, k = t.exps
            mono = np.ones_like(Zt[0])
            for zk, mk in zip(Zt, ms):
                mono = mono * _zpow(zk, mk)
            hol = c * mono                       # f = Re(hol) * rho^k
            # u = Re(hol): u_{z_i} = (c/2) d mono/dz_i ; u_{zbar_j} = conj at j
            def dmono(idx):
                if ms[idx] == 0:
                    return zeros
                out = ms[idx] * _zpow(Zt[idx], ms[idx] - 1)
                for kk, (zk, mk) in enumerate(zip(Zt, ms)):
                    if kk != idx:
                        out = out * _zpow(zk, mk)
                return out
            u_zi = 0.5 * c * dmono(i)
            u_zbarj = (0.5 * c * dmono(j)).conj()
            v = rho ** k
            v_zi = k * rho ** (k - 1) * zi.conj() if k else zeros
            v_zbarj = k * rho ** (k - 1) * zj if k else zeros
            v_hess = (k * rho ** (k - 1) if (i == j and k) else zeros)
            if k >= 2:
                v_hess = v_hess + k * (k - 1) * rho ** (k - 2) * zj * zi.conj()
            return u_zi * v_zbarj + u_zbarj * v_zi + hol.real * v_hess
        if t.kind == "herm":
            a, bidx = t.exps
            if (i, j) == (a, bidx) or (i, j) == (bidx, a):
                return 0.5 * c.real + zeros
            return zeros
        raise AssertionError

    def holo2(self, Z):
        """Holomorphic second derivatives d^2 f / dz_i dz_j.

        n=1: one complex array; n=2: (f_11, f_12, f_22).
        """
        Zt = self._as_tuple(Z)
        rho = _rho(Zt if self.n == 2 else Zt[0])
        if self.n == 1:
            out = np.zeros_like(Zt[0])
            for t in self.terms:
                out = out + self._term_holo2(t, Zt, rho, 0, 0)
            return out
        pairs = [(0, 0), (0, 1), (1, 1)]
        outs = [np.zeros_like(Zt[0]) for _ in pairs]
        for t in self.terms:
            for kk, (i, j) in enumerate(pairs):
                outs[kk] = outs[kk] + self._term_holo2(t, Zt, rho, i, j)
        return tuple(outs)

    def _term_holo2(self, t, Zt, rho, i, j):
        c = t.coeff
        zi, zj = Zt[i], Zt[j]
        zeros = np.zeros_like(zi)
        if t.kind in ("const", "herm"):
            return zeros
        if t.kind == "ball":
            k = t.exps[0]
            if k < 2:
                return zeros
            return c.real * k * (k - 1) * rho ** (k - 2) * zi.conj() * zj.conj()
        if t.kind == "polyrad":
            exps = t.exps if len(t.exps) == self.n else t.exps + (0,)
            if i == j:
                e = exps[i]
                if e < 2:
                    return zeros
                out = c.real * e * (e - 1) * ((zi * zi.conj()).real ** (e - 2)) \
                    * zi.conj() ** 2
            else:
                ei, ej = exps[i], exps[j]
                if ei == 0 or ej == 0:
                    return zeros
                out = c.real * ei * ej \
                    * ((zi * zi.conj()).real ** (ei - 1)) * zi.conj() \
                    * ((zj * zj.conj()).real ** (ej - 1)) * zj.conj()
            for kk, (zk, ek) in enumerate(zip(Zt, exps)):
                if kk not in (i, j) and ek:
                    out = out * ((zk * zk.conj()).real ** ek)
            return out
        if t.kind == "reharm":
            ms = t.exps
            if i == j:
                if ms[i] < 2:
                    return zeros
                out = 0.5 * c * ms[i] * (ms[i] - 1) * _zpow(zi, ms[i] - 2)
                for kk, (zk, mk) in enumerate(zip(Zt, ms)):
                    if kk != i:
                        out = out * _zpow(zk, mk)
                return out
            if ms[i] == 0 or ms[j] == 0:
                return zeros
            out = 0.5 * c * ms[i] * ms[j] * _zpow(zi, ms[i] - 1) * _zpow(zj, ms[j] - 1)
            for kk, (zk, mk) in enumerate(zip(Zt, ms)):
                if kk not in (i, j):
                    out = out * _zpow(zk, mk)
            return out
        if t.kind == "perturb":
            *ms, k = t.exps
            mono = np.ones_like(Zt[0])
            for zk, mk in zip(Zt, ms):
                mono = mono * _zpow(zk, mk)
            def dmono(idx):
                if ms[idx] == 0:
                    return zeros
                out = ms[idx] * _zpow(Zt[idx], ms[idx] - 1)
                for kk, (zk, mk) in enumerate(zip(Zt, ms)):
                    if kk != idx:
                        out = out * _zpow(zk, mk)
                return out
            def d2mono(ii, jj):
                mss = list(ms)
                if ii == jj:
                    if mss[ii] < 2:
                        return zeros
                    out = mss[ii] * (mss[ii] - 1) * _zpow(Zt[ii], mss[ii] - 2)
                else:
                    if mss[ii] == 0 or mss[jj] == 0:
                        return zeros
                    out = mss[ii] * mss[jj] * _zpow(Zt[ii], mss[ii] - 1) \
                        * _zpow(Zt[jj], mss[jj] - 1)
                for kk in range(len(mss)):
                    if kk not in (ii, jj):
                        out = out * _zpow(Zt[kk], mss[kk])
                return out
            u = 0.5 * c * mono                    # holomorphic half; Re部 = u+conj
            u_i, u_j = 0.5 * c * dmono(i), 0.5 * c * dmono(j)
            u_ij = 0.5 * c * d2mono(i, j)
            v = rho ** k
            v_i = k * rho ** (k - 1) * zi.conj() if k else zeros
            v_j = k * rho ** (k - 1) * zj.conj() if k else zeros
            v_ij = (k * (k - 1) * rho ** (k - 2) * zi.conj() * zj.conj()
                    if k >= 2 else zeros)
            re_u = (u + u.conj()).real
            return u_ij * v + u_i * v_j + u_j * v_i + re_u * v_ij
        raise AssertionError

    # -- real-coordinate derivatives (n=1 convenience) ------------------

    def grad_real(self, Z):
        """(f_x, f_y) for n=1: f_x = 2 Re f_z, f_y = -2 Im f_z."""
        if self.n != 1:
            raise ValueError("grad_real is n=1 only")
        fz = self.grad(Z)
        return 2.0 * fz.real, -2.0 * fz.imag

    def density(self, Z):
        """dd^c density w.r.t. Lebesgue area (n=1): f_{z zbar} / pi."""
        if self.n != 1:
            raise ValueError("density is n=1 only")
        return self.hessian(Z) / np.pi

    # -- sampling -------------------------------------------------------

    def sample(self, grid: GridSpec) -> ScalarField:
        if grid.style == "cartesian":
            if grid.n != self.n:
                raise ValueError("grid dimension mismatch")
            vals = self.value(grid.nodes())
            if not np.all(np.isfinite(vals[grid.inside_mask()])):
                raise ValueError("potential overflows on this grid")
            return ScalarField(grid, vals)
        if grid.n == 1:
            vals = self.chi(grid.t_axis())
        else:
            t1, t2 = np.meshgrid(grid.t_axis(), grid.t_axis(), indexing="ij")
            vals = self.log_profile(t1, t2)
        return ScalarField(grid, vals, np.ones(grid.shape, dtype=bool)
                           & grid.inside_mask())

    # -- serialization ----------------------------------------------------

    def to_lines(self):
        out = []
        for t in self.terms:
            if t.coeff.imag == 0:
                cs = f"{t.coeff.real:.17g}"
            else:
                cs = f"{t.coeff.real:.17g}{t.coeff.imag:+.17g}j"
            out.append(" ".join([t.kind, cs] + [str(e) for e in t.exps]))
        return out

    @classmethod
    def from_lines(cls, n: int, lines, name: str = "") -> "Potential":
        terms = []
        for lineno, raw in enumerate(lines, start=1):
            s = raw.split("#", 1)[0].strip()
            if not s:
                continue
            toks = s.split()
            kind = toks[0]
            if kind == "builtin":
                if len(toks) != 2:
                    raise ValueError(f"term line {lineno}: builtin takes one name")
                return builtin_potential(toks[1])
            if kind not in _KINDS:
                raise ValueError(f"term line {lineno}: unknown kind {kind!r}")
            try:
                coeff = complex(toks[1])
                exps = tuple(int(t) for t in toks[2:])
            except ValueError as exc:
                raise ValueError(f"term line {lineno}: {exc}") from None
            terms.append(Term(kind, coeff, exps))
        if not terms:
            raise ValueError("empty potential term list")
        return cls(n, terms, name=name)


BUILTIN_POTENTIALS = ("flat", "quartic", "perturbed", "reinhardt2")


def builtin_potential(name: str) -> Potential:
    """The standing test corpus: flat, quartic, perturbed, reinhardt2."""
    if name == "flat":
        return Potential(1, [Term("polyrad", 1.0, (1,))], name="flat")
    if name == "quartic":
        return Potential(1, [Term("polyrad", 1.0, (1,)),
                             Term("polyrad", 0.5, (2,))], name="quartic")
    if name == "perturbed":
        return Potential(1, [Term("polyrad", 1.0, (1,)),
                             Term("reharm", 0.3, (3,))], name="perturbed")
    if name == "reinhardt2":
        return Potential(2, [Term("polyrad", 1.0, (1, 0)),
                             Term("polyrad", 1.0, (0, 1)),
                             Term("polyrad", 1.0, (1, 1))], name="reinhardt2")
    raise ValueError(f"unknown builtin potential {name!r}")


# ---------------------------------------------------------------------------
# strict plurisubharmonicity certificate
# ---------------------------------------------------------------------------

@dataclass
class PshCertificate:
    min_eig: float
    location: tuple
    valid: bool


def validate_strict_psh(p, grid: GridSpec) -> PshCertificate:
    """Minimum complex-Hessian eigenvalue of p over the masked-in nodes.

    The certificate is valid iff the minimum is strictly positive.  A
    non-positive minimum is reported, not raised; non-finite samples are
    an error.
    """
    if grid.style != "cartesian":
        raise ValueError("strict-psh validation needs a cartesian grid")
    Z = grid.nodes()
    mask = grid.inside_mask()
    if p.n == 1:
        eig = p.hessian(Z)
    else:
        h11, h12, h22 = p.hessian(Z)
        mean = 0.5 * (h11 + h22)
        disc = np.sqrt(0.25 * (h11 - h22) ** 2 + (h12 * h12.conj()).real)
        eig = mean - disc
    if not np.all(np.isfinite(eig[mask])):
        raise ValueError("non-finite Hessian samples")
    eig_masked = np.where(mask, eig, np.inf)
    idx = np.unravel_index(int(np.argmin(eig_masked)), eig_masked.shape)
    mn = float(eig_masked[idx])
    if p.n == 1:
        loc = (complex(Z[idx]),)
    else:
        loc = (complex(Z[0][idx]), complex(Z[1][idx]))
    return PshCertificate(min_eig=mn, location=loc, valid=mn > 0.0)


def field_min_density(f: ScalarField):
    """FD strict-subharmonicity certificate for a sampled n=1 field."""
    from .field_grid import ddc_component
    dens = ddc_component(f)
    vals = np.where(dens.mask, dens.values, np.inf)
    idx = np.unravel_index(int(np.argmin(vals)), vals.shape)
    return float(vals[idx]), idx


# ---------------------------------------------------------------------------
# chart normalization
# ---------------------------------------------------------------------------

class TransformedPotential:
    """q(z) = base(Pz) - h(Pz) for an n=2 linear change of coordinates.

    The chain rule for a holomorphic linear map w = Pz:
    q_z = P^T g_w,  q_{z zbar} = P^T H_g conj(P),  q_{zz} = P^T (g_ww) P.
    """

    def __init__(self, base: Potential, h: Potential, P: np.ndarray):
        self.base = base
        self.h = h
        self.P = np.asarray(P, dtype=complex)
        self.n = base.n
        self.name = base.name + "~normalized"

    @property
    def symmetry(self):
        return "general"

    def _map(self, Z):
        z1 = np.asarray(Z[0], dtype=complex)
        z2 = np.asarray(Z[1], dtype=complex)
        w1 = self.P[0, 0] * z1 + self.P[0, 1] * z2
        w2 = self.P[1, 0] * z1 + self.P[1, 1] * z2
        return (w1, w2)

    def value(self, Z):
        W = self._map(Z)
        return self.base.value(W) - self.h.value(W)

    def __call__(self, Z):
        return self.value(Z)

    def grad(self, Z):
        W = self._map(Z)
        g1, g2 = self.base.grad(W)
        e1, e2 = self.h.grad(W)
        g1, g2 = g1 - e1, g2 - e2
        return (self.P[0, 0] * g1 + self.P[1, 0] * g2,
                self.P[0, 1] * g1 + self.P[1, 1] * g2)

    def hessian(self, Z):
        W = self._map(Z)
        b11, b12, b22 = self.base.hessian(W)
        c11, c12, c22 = self.h.hessian(W)
        H = [[b11 - c11, b12 - c12], [(b12 - c12).conj(), b22 - c22]]
        P = self.P
        out = {}
        for a in range(2):
            for b in range(2):
                acc = 0
                for i in range(2):
                    for j in range(2):
                        acc = acc + P[i, a] * np.conj(P[j, b]) * H[i][j]
                out[(a, b)] = acc
        return out[(0, 0)].real, out[(0, 1)], out[(1, 1)].real

    def sample(self, grid: GridSpec) -> ScalarField:
        if grid.style != "cartesian" or grid.n != 2:
            raise ValueError("transformed potentials sample on cartesian n=2 grids")
        vals = self.value(grid.nodes())
        return ScalarField(grid, vals)


@dataclass
class NormalizedChart:
    """Admissible coordinates for a weight: original = h + (normalized o P^-1)
    with h pluriharmonic through order two, P^* Gamma P = I block-lower-
    triangular preserving the tail subspace, and normalized(z) = |z|^2 + O(|z|^3).
    """

    original: Potential
    h: Potential
    P: np.ndarray
    normalized: object
    normal_dims: int
    chart_radius: float = 1.0

    def hessian_at_zero(self):
        zero = (np.zeros(()) + 0j,) * self.original.n
        q = self.normalized
        if self.original.n == 1:
            return np.atleast_2d(q.hessian(zero[0]))
        h11, h12, h22 = q.hessian(zero)
        return np.array([[complex(h11), complex(h12)],
                         [complex(np.conj(h12)), complex(h22)]])


def _gamma_gram_schmidt(Gamma: np.ndarray, r: int) -> np.ndarray:
    """Columns = Gamma-orthonormal basis; seeds e_{r+1}..e_n processed first
    so the result has the (* 0; * *) block form preserving {z' = 0}."""
    n = Gamma.shape[0]
    order = list(range(r, n)) + list(range(r))
    cols = []
    P = np.zeros((n, n), dtype=complex)
    for j in order:
        v = np.zeros(n, dtype=complex)
        v[j] = 1.0
        for u in cols:
            v = v - (u.conj() @ (Gamma @ v)) * u
        nrm = math.sqrt(float((v.conj() @ (Gamma @ v)).real))
        if nrm <= 0:
            raise ValueError("degenerate Hessian: not strictly psh at the origin")
        v = v / nrm
        cols.append(v)
        P[:, j] = v
    return P


def normalize_chart(p: Potential, normal_dims: int | None = None,
                    chart_radius: float = 1.0) -> NormalizedChart:
    """Split p into a pluriharmonic part h (constant + Re-linear + Re-holo-
    quadratic) plus a weight with identity complex Hessian at the origin.

    Returns the change of coordinates P with P^* Gamma P = I (Gamma the
    complex Hessian of p at 0), chosen block-lower-triangular so the
    subspace spanned by the last n - normal_dims coordinates is preserved.
    The normalized weight is p(Pz) - h(Pz) = |z|^2 + O(|z|^3).
    """
    n = p.n
    r = n if normal_dims is None else normal_dims
    if not (1 <= r <= n):
        raise ValueError("normal_dims out of range")
    zero = np.zeros((), dtype=complex) if n == 1 else (np.zeros((), complex),) * 2

    alpha = float(p.value(zero))
    g = p.grad(zero)
    grads = [complex(g)] if n == 1 else [complex(g[0]), complex(g[1])]
    h2 = p.holo2(zero)
    if n == 1:
        Gamma = np.array([[complex(p.hessian(zero))]])
        betas = {(0, 0): complex(h2)}
    else:
        h11, h12, h22 = p.hessian(zero)
        Gamma = np.array([[complex(h11), complex(h12)],
                          [complex(np.conj(h12)), complex(h22)]])
        b11, b12, b22 = h2
        betas = {(0, 0): complex(b11), (0, 1): complex(b12), (1, 1): complex(b22)}

    eigs = np.linalg.eigvalsh(Gamma)
    if eigs.min() <= 0:
        raise ValueError("not strictly psh at origin (degenerate Hessian)")

    # pluriharmonic part through order two
    h_terms = []
    if alpha != 0.0:
        h_terms.append(Term("const", alpha))
    for i, gi in enumerate(grads):
        if gi != 0:
            m = tuple(1 if k == i else 0 for k in range(n))
            h_terms.append(Term("reharm", 2.0 * gi, m))
    for (i, j), b in betas.items():
        if b != 0:
            m = tuple((2 if k == i else 0) if i == j else (1 if k in (i, j) else 0)
                      for k in range(n))
            coeff = b if i == j else 2.0 * b
            h_terms.append(Term("reharm", coeff, m))
    h_pot = Potential(n, h_terms) if h_terms else Potential(n, [Term("const", 0.0)])

    if n == 1:
        P = np.array([[1.0 / math.sqrt(Gamma[0, 0].real)]], dtype=complex)
        scale = P[0, 0]
        new_terms = []
        for t in p.terms + [Term(t.kind, -t.coeff, t.exps) for t in h_pot.terms]:
            if t.kind == "const":
                c = t.coeff
            elif t.kind == "polyrad" or t.kind == "ball":
                c = t.coeff * abs(scale) ** (2 * t.exps[0])
            elif t.kind == "reharm":
                c = t.coeff * scale ** t.exps[0]
            elif t.kind == "perturb":
                m, k = t.exps
                c = t.coeff * scale ** m * abs(scale) ** (2 * k)
            else:
                raise AssertionError
            new_terms.append(Term(t.kind, c, t.exps))
        merged = {}
        for t in new_terms:
            key = (t.kind, t.exps)
            merged[key] = merged.get(key, 0.0) + t.coeff
        terms = [Term(k[0], c, k[1]) for k, c in merged.items()
                 if abs(c) > 1e-300]
        normalized = Potential(1, terms or [Term("const", 0.0)],
                               name=p.name + "~normalized")
    else:
        P = _gamma_gram_schmidt(Gamma, r)
        normalized = TransformedPotential(p, h_pot, P)

    chart = NormalizedChart(original=p, h=h_pot, P=P, normalized=normalized,
                            normal_dims=r, chart_radius=chart_radius)
    H0 = chart.hessian_at_zero()
    if np.max(np.abs(H0 - np.eye(n))) > 1e-10:
        raise AssertionError("normalization failed to reach identity Hessian")
    return chart


# ---------------------------------------------------------------------------
# regularized maximum
# ---------------------------------------------------------------------------

@lru_cache(maxsize=1)
def _gl64():
    x, w = leggauss(64)
    return x, w


@lru_cache(maxsize=1)
def _bump_norm() -> float:
    """Normalizer C with integral of C*exp(-1/(1-x^2)) over (-1,1) equal 1."""
    x, w = _gl64()
    vals = np.exp(-1.0 / (1.0 - x ** 2))
    return float(1.0 / np.sum(w * vals))


def bump_profile(x):
    """Unit-integral even bump on (-1, 1): C * exp(-1/(1-x^2))."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = _bump_norm() * np.exp(-1.0 / (1.0 - xi ** 2))
    return out


def bump_f(s, width: float):
    """Scaled bump f(s) = eta(s/width)/width, support (-width, width)."""
    return bump_profile(np.asarray(s, dtype=float) / width) / width


def _blend_m(d, width: float):
    """M(d) = integral over s of max(d + s, 0) f(s) ds, 64-pt Gauss-Legendre.

    M(d) = d for d >= width, 0 for d <= -width, smooth monotone in between;
    u = b + M(a - b) realises the regularized max of a and b.
    """
    d = np.asarray(d, dtype=float)
    out = np.where(d >= width, d, 0.0)
    band = np.abs(d) < width
    if band.any():
        db = d[band]
        lo, hi = -db, width          # integrate (d+s) f(s) over s in [-d, w]
        x, w = _gl64()
        mid = 0.5 * (lo[:, None] + hi) + 0.5 * (hi - lo[:, None]) * x[None, :]
        jac = 0.5 * (hi - lo)
        vals = (db[:, None] + mid) * bump_f(mid, width)
        out_band = jac * np.sum(w[None, :] * vals, axis=1)
        out = out.astype(float)
        out[band] = out_band
    return out


def _blend_m_prime(d, width: float):
    """M'(d) = integral of f over [-d, width]; a smooth 0-to-1 switch."""
    d = np.asarray(d, dtype=float)
    out = np.where(d >= width, 1.0, 0.0)
    band = np.abs(d) < width
    if band.any():
        db = d[band]
        lo, hi = -db, width
        x, w = _gl64()
        mid = 0.5 * (lo[:, None] + hi) + 0.5 * (hi - lo[:, None]) * x[None, :]
        jac = 0.5 * (hi - lo)
        vals = bump_f(mid, width)
        out = out.astype(float)
        out[band] = jac * np.sum(w[None, :] * vals, axis=1)
    return out


def blend_coefficients(d, width: float):
    """(M(d), M'(d), M''(d)) with M''(d) = f(d) by evenness of the bump."""
    return _blend_m(d, width), _blend_m_prime(d, width), bump_f(d, width)


def regularized_max(a: ScalarField, b: ScalarField, bump_width: float) -> ScalarField:
    """Smooth strictly-psh interpolation between two weights.

    Returns u with u = a where a - b >= bump_width, u = b where
    b - a >= bump_width, and the bump-convolved max in between.  Requires
    a(0) > b(0) + bump_width and a < b - bump_width on the rim of the
    masked-in region; violations raise with the failing inequality named.
    """
    if a.grid != b.grid:
        raise ValueError("regularized_max requires a common grid")
    if not (bump_width > 0):
        raise ValueError("bump_width must be positive")
    grid = a.grid
    i0 = grid.origin_index()
    if i0 is None or not a.mask[i0]:
        raise ValueError("origin node not available on this grid")
    a0, b0 = float(a.values[i0]), float(b.values[i0])
    if not (a0 > b0 + bump_width):
        raise ValueError(
            f"hypothesis a(0) > b(0) + bump_width fails at the origin: "
            f"{a0:.6g} <= {b0:.6g} + {bump_width:.6g}")
    mask = a.mask & b.mask
    rim = mask & ~erode_rim(mask)
    d = a.values - b.values
    if rim.any():
        worst = float(np.max(d[rim]))
        if not (worst < -bump_width):
            raise ValueError(
                f"hypothesis a < b - bump_width fails on the domain boundary "
                f"(max a-b = {worst:.6g}, need < {-bump_width:.6g})")
    u = b.values + _blend_m(np.where(mask, d, 0.0), bump_width)
    # exact branches: u = a where a - b >= width, u = b where b - a >= width
    u = np.where(d >= bump_width, a.values, np.where(d <= -bump_width,
                                                     b.values, u))
    return ScalarField(grid, np.where(mask, u, 0.0), mask)


def erode_rim(mask):
    from .field_grid import erode_mask
    return erode_mask(mask)


# ---------------------------------------------------------------------------
# gluing to the ball
# ---------------------------------------------------------------------------

class GluedBallPotential:
    """Closed-form weight on the unit disc: the normalized chart weight,
    rescaled and blended through (1+s)|z|^2 - 2w, equal to |z|^2 outside
    the transition radius sigma = 3 sqrt(w/s).

    All derivatives are exact (bump CDF and density in the band), so C2
    deviations from |z|^2 can be measured by dense closed-form sampling
    as well as by grid differencing.
    """

    def __init__(self, chart: NormalizedChart, s: float, w: float):
        if chart.original.n != 1:
            raise ValueError("ball gluing implemented for n=1 charts")
        self.phi = chart.normalized
        self.s = float(s)          # barrier slope excess, beta = (1+s)rho - 2w
        self.w = float(w)          # bump half-width and barrier offset
        self.sigma = 3.0 * math.sqrt(w / s)
        self.n = 1
        self.name = "glued"

    # d = phi - beta controls the blend; the spatial gate is rho <= sigma^2.
    def _pieces(self, z):
        z = np.asarray(z, dtype=complex)
        rho = (z * z.conj()).real
        beta = (1.0 + self.s) * rho - 2.0 * self.w
        d = self.phi.value(z) - beta
        return z, rho, beta, d

    def value(self, z):
        z, rho, beta, d = self._pieces(z)
        M, _, _ = blend_coefficients(d, self.w)
        inner = (beta + M + 2.0 * self.w) / (1.0 + self.s)
        return np.where(rho <= self.sigma ** 2, inner, rho)

    def __call__(self, z):
        return self.value(z)

    def grad(self, z):
        z, rho, beta, d = self._pieces(z)
        _, F, _ = blend_coefficients(d, self.w)
        beta_z = (1.0 + self.s) * z.conj()
        d_z = self.phi.grad(z) - beta_z
        inner = (beta_z + F * d_z) / (1.0 + self.s)
        return np.where(rho <= self.sigma ** 2, inner, z.conj())

    def hessian(self, z):
        z, rho, beta, d = self._pieces(z)
        _, F, fd = blend_coefficients(d, self.w)
        d_z = self.phi.grad(z) - (1.0 + self.s) * z.conj()
        d_h = self.phi.hessian(z) - (1.0 + self.s)
        inner = ((1.0 + self.s) + fd * (d_z * d_z.conj()).real + F * d_h) \
            / (1.0 + self.s)
        return np.where(rho <= self.sigma ** 2, inner, 1.0)

    def holo2(self, z):
        z, rho, beta, d = self._pieces(z)
        _, F, fd = blend_coefficients(d, self.w)
        d_z = self.phi.grad(z) - (1.0 + self.s) * z.conj()
        d_zz = self.phi.holo2(z)
        inner = (fd * d_z * d_z + F * d_zz) / (1.0 + self.s)
        return np.where(rho <= self.sigma ** 2, inner, 0.0 + 0.0j)

    def density(self, z):
        return self.hessian(z) / np.pi

    def sample(self, grid: GridSpec) -> ScalarField:
        rho = grid.rho()
        z = grid.nodes()
        vals = np.where(rho <= self.sigma ** 2, self.value(z), rho)
        return ScalarField(grid, vals)


@dataclass
class GlueReport:
    sigma: float
    scale_c: float
    achieved_c2: float
    bound_chain: float
    bound_terms: dict


def _polar_samples(r_max: float, extra_band=None, n_r=1024, n_theta=64):
    radii = np.linspace(0.0, r_max, n_r + 1)[1:]
    if extra_band is not None:
        lo, hi = extra_band
        radii = np.unique(np.concatenate([radii, np.linspace(lo, hi, 2048)]))
    th = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    return radii[:, None] * np.exp(1j * th[None, :])


def _c2_closed_form(diff_value, diff_grad, diff_hess, diff_holo2, pts):
    """Three-term C2 sup of a closed-form n=1 function over sample points."""
    v = diff_value(pts)
    gz = diff_grad(pts)
    fx, fy = 2.0 * gz.real, -2.0 * gz.imag
    hz = diff_hess(pts)
    q = diff_holo2(pts)
    fxx = 2.0 * q.real + 2.0 * hz
    fyy = -2.0 * q.real + 2.0 * hz
    fxy = -2.0 * q.imag
    t0 = float(np.max(np.abs(v)))
    t1 = float(np.max(np.maximum(np.abs(fx), np.abs(fy))))
    t2 = float(np.max(np.max(np.abs(np.stack([fxx, fxy, fyy])), axis=0)))
    return t0, t1, t2


def glue_to_ball(chart: NormalizedChart, s: float, w: float,
                 target_eps: float | None = None):
    """Blend the chart weight into |z|^2 on the unit disc.

    Parameters s (slope excess of the barrier (1+s)|z|^2 - 2w) and w
    (barrier offset = bump width) must satisfy sigma = 3 sqrt(w/s) <
    chart radius; too large a chart remainder at the transition circle
    raises "shrink w".  Returns (glued weight, report) where the report
    carries the transition radius, the curvature scale c with
    dd^c(original chart weight) = c * dd^c(glued) near 0, the achieved
    C2 distance to |z|^2, and the evaluated bound chain
    (w + ||phi - beta||_C2 + ||d(phi-beta)||_C0^2 / w) / (1+s).
    """
    if not (0 < w < s):
        raise ValueError("need 0 < w << s for the gluing regime")
    sigma = 3.0 * math.sqrt(w / s)
    if sigma >= chart.chart_radius:
        raise ValueError(
            f"shrink w: transition radius {sigma:.4g} >= chart radius "
            f"{chart.chart_radius:.4g}")
    glued = GluedBallPotential(chart, s, w)
    phi = glued.phi

    # seam admissibility: phi < beta - w on |z| = sigma
    seam = sigma * np.exp(1j * np.linspace(0, 2 * np.pi, 512, endpoint=False))
    d_seam = phi.value(seam) - ((1 + s) * sigma ** 2 - 2 * w)
    if float(np.max(d_seam)) >= -w:
        raise ValueError("shrink w: chart remainder too large at the "
                         "transition circle")

    # bound chain, measured with the closed-form derivatives on |z| <= sigma
    band = (math.sqrt(max(w / s, 1e-300)) * 0.5, min(sigma, 2.2 * math.sqrt(3 * w / s)))
    pts_sig = _polar_samples(sigma, extra_band=band)
    beta_val = lambda z: (1 + s) * (z * z.conj()).real - 2 * w
    t0, t1, t2 = _c2_closed_form(
        lambda z: phi.value(z) - beta_val(z),
        lambda z: phi.grad(z) - (1 + s) * z.conj(),
        lambda z: phi.hessian(z) - (1 + s),
        lambda z: phi.holo2(z),
        pts_sig)
    c2_phi_beta = t0 + t1 + t2
    grad_c0 = t1
    bound_u = w + c2_phi_beta + grad_c0 ** 2 / w
    bound = bound_u / (1.0 + s)

    pts_one = _polar_samples(1.0, extra_band=band)
    a0, a1, a2 = _c2_closed_form(
        lambda z: glued.value(z) - (z * z.conj()).real,
        lambda z: glued.grad(z) - z.conj(),
        lambda z: glued.hessian(z) - 1.0,
        lambda z: glued.holo2(z),
        pts_one)
    achieved = a0 + a1 + a2

    if target_eps is not None and achieved >= target_eps:
        raise ValueError(
            f"achieved C2 norm {achieved:.6g} >= requested {target_eps:.6g}")
    report = GlueReport(sigma=sigma, scale_c=1.0 + s, achieved_c2=achieved,
                        bound_chain=bound,
                        bound_terms={"w": w, "c2_phi_beta": c2_phi_beta,
                                     "grad_c0": grad_c0,
                                     "bound_u": bound_u})
    return glued, report


def suggest_glue_parameters(target_eps: float, chart_radius: float = 1.0):
    """(s, w) from the asymptotic heuristic: 38 s < eps/2, sigma well inside
    the chart."""
    s = target_eps / (2.0 * 38.0) * 0.9
    w = s * min((chart_radius / 6.0) ** 2, 1e-3)
    return s, w
