"""Inversion, resolvents, order-shifting weights and functional calculus for symbols."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np
import scipy.linalg as sla
import sympy as sp
from scipy.sparse.linalg import eigsh

from .errors import MeshTooCoarse, NotInvertible, NotPositive, SearchFailed, SpectrumHit
from .quantize import OperatorMatrix, dequantize, quantize
from .symbols import constant_field, p_ma, sample_symbol

COND_MAX = 1e12
SPECTRUM_TOL = 1e-6


def _is_hermitian(M, tol=1e-10):
    return np.max(np.abs(M - M.conj().T)) <= tol * max(1.0, np.max(np.abs(M)))


def min_eigenvalue(M):
    """Smallest eigenvalue of a Hermitian matrix (ARPACK above 1024 rows)."""
    M = np.asarray(M)
    if M.shape[0] <= 1024:
        return float(sla.eigvalsh(M, subset_by_index=[0, 0])[0])
    v0 = np.random.default_rng(0).standard_normal(M.shape[0])
    return float(eigsh(M, k=1, which="SA", return_eigenvectors=False, tol=1e-10, v0=v0)[0])


def _inverse(T):
    try:
        inv = np.linalg.inv(T)
    except np.linalg.LinAlgError as exc:
        raise NotInvertible(f"singular matrix: {exc}") from None
    cond = np.linalg.norm(T, 1) * np.linalg.norm(inv, 1)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise NotInvertible(f"condition number {cond:.3e} exceeds {COND_MAX:.0e}")
    return inv


def sharp_inverse(f, A=None):
    """Symbol of ``Op^A(f)^{-1}``.

    Raises :class:`NotInvertible` when the matrix is singular or its
    1-norm condition number exceeds ``1e12``.
    """
    T = quantize(f, A)
    return dequantize(OperatorMatrix(f.grid, _inverse(T.entries), T.gauge_tag), A)


def find_weight_shift(m, g, A=None, a0=1.0, threshold=0.5, a_max=2.0**16):
    """Smallest ``a = a0 * 2^k`` with ``min spec Op^A(a + <xi>^|m|) >= threshold``."""
    a = a0
    while a <= a_max:
        T = quantize(sample_symbol(p_ma(abs(m), a, g.n), g), A).entries
        if min_eigenvalue(0.5 * (T + T.conj().T)) >= threshold:
            return a
        a *= 2
    raise SearchFailed(f"no admissible shift a <= {a_max:g} for m={m}")


def make_s_m(m, g, A=None):
    """Order-``m`` weight ``s_m``: ``a + <xi>^m`` for ``m > 0``, its inverse for ``m < 0``, 1 at ``m = 0``."""
    if m == 0:
        return constant_field(g, 1.0)
    a = find_weight_shift(m, g, A)
    p = sample_symbol(p_ma(abs(m), a, g.n), g)
    if m > 0:
        return p
    s = sharp_inverse(p, A)
    s.order = float(m)
    return s


def _check_spectrum(T, z):
    if _is_hermitian(T):
        ev = sla.eigvalsh(T)
    else:
        ev = sla.eigvals(T)
    dist = float(np.min(np.abs(ev - z)))
    if dist < SPECTRUM_TOL:
        raise SpectrumHit(f"z={z} lies within {dist:.2e} of the spectrum")


def resolvent_symbol(f, z, A=None, check=True):
    """Symbol of ``(Op^A(f) - z)^{-1}``."""
    T = quantize(f, A).entries
    if check:
        _check_spectrum(T, z)
    R = _inverse(T - z * np.eye(T.shape[0]))
    return dequantize(OperatorMatrix(f.grid, R), A)


# ---------------------------------------------------------------------------
# Helffer-Sjostrand
# ---------------------------------------------------------------------------
def _plateau_cutoff(t):
    """Smooth even cutoff: 1 on ``|t| <= 1``, 0 on ``|t| >= 2``; returns value and derivative."""
    t = np.abs(np.asarray(t, dtype=float))
    u = np.clip(t - 1.0, 0.0, 1.0)

    def psi(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    def dpsi(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos]) / s[pos] ** 2
        return out

    a, b = psi(1.0 - u), psi(u)
    da, db = -dpsi(1.0 - u), dpsi(u)
    val = a / (a + b)
    dval = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    inside = (t > 1.0) & (t < 2.0)
    return val, np.where(inside, dval, 0.0)


@dataclass
class QuasiAnalyticExtension:
    """Almost-analytic extension ``chi(y/(c<x>)) sum_{k<=k_max} Phi^(k)(x) (iy)^k / k!``.

    ``expr`` is a sympy expression (or string) in the variable ``t``; the
    function is taken as zero outside ``support``.
    """

    expr: object
    support: tuple
    order: int = 3
    cutoff: float | None = None

    def __post_init__(self):
        t = sp.Symbol("t", real=True)
        self.expr = sp.sympify(self.expr, locals={"t": t})
        self._t = t
        lo, hi = map(float, self.support)
        if not hi > lo:
            raise ValueError("support must be an interval (lo, hi) with hi > lo")
        self.support = (lo, hi)
        if self.cutoff is None:
            jx = np.sqrt(1.0 + max(lo * lo, hi * hi))
            self.cutoff = self.height / (2.0 * jx)

    @property
    def height(self):
        return self.support[1] - self.support[0]

    @cached_property
    def _derivs(self):
        return [sp.lambdify(self._t, sp.diff(self.expr, self._t, k), "numpy") for k in range(self.order + 2)]

    def derivative(self, k, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        inside = (x >= lo) & (x <= hi)
        val = np.broadcast_to(np.asarray(self._derivs[k](x), dtype=float), x.shape)
        return np.where(inside, val, 0.0)

    def __call__(self, x):
        return self.derivative(0, x)

    def _taylor(self, x, y):
        out = np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)), dtype=complex)
        term = np.ones_like(out)
        for k in range(self.order + 1):
            out += self.derivative(k, x) * term
            term = term * (1j * y) / (k + 1)
        return out

    def extension(self, x, y):
        """``Phi~(x + iy)``."""
        jx = np.sqrt(1.0 + np.asarray(x) ** 2)
        chi, _ = _plateau_cutoff(np.asarray(y) / (self.cutoff * jx))
        return chi * self._taylor(x, y)

    def dbar(self, x, y):
        """``d/dz-bar Phi~ = (1/2)(d_x + i d_y) Phi~`` in closed form."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        jx = np.sqrt(1.0 + x**2)
        t = y / (self.cutoff * jx)
        chi, dchi = _plateau_cutoff(t)
        dchi = dchi * np.sign(t)
        k = self.order
        top = 0.5 * self.derivative(k + 1, x) * (1j * y) ** k / factorial(k)
        dt = (1j / jx - y * x / jx**3) / self.cutoff
        return chi * top + 0.5 * dchi * dt * self._taylor(x, y)

    def decay_ratio(self, y1):
        """``max_x|dbar(x+2i y1)| / max_x|dbar(x+i y1)|`` (``~2^order`` near the axis)."""
        lo, hi = self.support
        xs = np.linspace(lo, hi, 513)
        m1 = np.max(np.abs(self.dbar(xs, np.full_like(xs, y1))))
        m2 = np.max(np.abs(self.dbar(xs, np.full_like(xs, 2 * y1))))
        return m2 / m1 if m1 > 0 else float(2**self.order)


def _hs_weights(Phi, lam, nx, ny):
    """Midpoint HS quadrature of ``(1/pi) int dbar Phi~(z) / (lam - z)`` for each ``lam``."""
    lo, hi = Phi.support
    Y = Phi.height
    dx, dy = (hi - lo) / nx, 2 * Y / ny
    xs = lo + (np.arange(nx) + 0.5) * dx
    ys = -Y + (np.arange(ny) + 0.5) * dy
    X, Yg = np.meshgrid(xs, ys, indexing="ij")
    D = Phi.dbar(X, Yg).ravel() * (dx * dy / np.pi)
    Z = (X + 1j * Yg).ravel()
    keep = D != 0
    D, Z = D[keep], Z[keep]
    lam = np.asarray(lam)
    out = np.zeros(lam.shape, dtype=complex)
    for s in range(0, Z.size, 4096):
        out += (D[None, s:s + 4096] / (lam[:, None] - Z[None, s:s + 4096])).sum(axis=1)
    return out


@dataclass
class HSResult:
    symbol: object
    mesh: int
    change: float


def hs_functional_calculus(Phi, f, A=None, mesh=64, tol=1e-4, max_mesh=1024, method="eig", full=False):
    """``Phi^B(f) = (1/pi) int dbar Phi~(z) (f - z)^{(-1)_B} dz`` by complex-plane quadrature.

    The resolvent at each mesh node is applied through the eigendecomposition
    of ``Op^A(f)`` (``method="eig"``) or by direct linear solves
    (``method="solve"``, cost one factorization per node).  The mesh doubles
    until the operator-norm change is ``<= tol``.
    """
    if Phi.decay_ratio((2 * Phi.height / mesh) / 2) < 0.5 * 2**Phi.order:
        raise MeshTooCoarse("d-bar decay not in the asymptotic regime at the first mesh height")
    T = quantize(f, A).entries
    if method == "eig":
        herm = _is_hermitian(T)
        if herm:
            lam, U = sla.eigh(0.5 * (T + T.conj().T))
            Uinv = U.conj().T
        else:
            lam, U = sla.eig(T)
            Uinv = np.linalg.inv(U)

        def matrix(nm):
            w = _hs_weights(Phi, lam, nm, nm)
            return w, (U * w) @ Uinv

        def diff(a, b):
            return float(np.max(np.abs(a[0] - b[0]))) if herm else float(np.linalg.norm(a[1] - b[1], 2))
    elif method == "solve":
        def matrix(nm):
            lo, hi = Phi.support
            Y = Phi.height
            dx, dy = (hi - lo) / nm, 2 * Y / nm
            xs = lo + (np.arange(nm) + 0.5) * dx
            ys = -Y + (np.arange(nm) + 0.5) * dy
            M = np.zeros_like(T, dtype=complex)
            I = np.eye(T.shape[0])
            for x in xs:
                for y in ys:
                    d = complex(Phi.dbar(np.array(x), np.array(y)))
                    if d != 0:
                        M += d * (dx * dy / np.pi) * np.linalg.solve(T - (x + 1j * y) * I, I)
            return None, M

        def diff(a, b):
            return float(np.linalg.norm(a[1] - b[1], 2))
    else:
        raise ValueError(f"unknown method {method!r}")
    nm, prev = mesh, matrix(mesh)
    change = np.inf
    while nm < max_mesh:
        cur = matrix(2 * nm)
        change = diff(cur, prev)
        nm, prev = 2 * nm, cur
        if change <= tol:
            break
    sym = dequantize(OperatorMatrix(f.grid, prev[1]), A)
    return HSResult(sym, nm, change) if full else sym


def spectral_function(Phi, f, A=None):
    """Spectral-theorem oracle: ``Phi(Op^A(f))`` via eigendecomposition (Hermitian ``f``)."""
    T = quantize(f, A).entries
    lam, U = sla.eigh(0.5 * (T + T.conj().T))
    return (U * Phi(lam)) @ U.conj().T


# ---------------------------------------------------------------------------
# fractional powers
# ---------------------------------------------------------------------------
def default_t0(f, A=None):
    """``1 + max(0, -lambda_min)`` for the Hermitian matrix ``Op^A(f)``."""
    T = quantize(f, A).entries
    return 1.0 + max(0.0, -min_eigenvalue(0.5 * (T + T.conj().T)))


def fractional_power(f, s, t0=None, A=None):
    """Symbol of ``(Op^A(f) + t0)^s`` via eigendecomposition."""
    T = quantize(f, A).entries
    H = 0.5 * (T + T.conj().T)
    lam, U = sla.eigh(H)
    if t0 is None:
        t0 = 1.0 + max(0.0, -lam[0])
    lam = lam + t0
    if lam[0] <= 0:
        raise NotPositive(f"min eigenvalue of Op(f)+t0 is {lam[0]:.3e}")
    P = (U * lam**s) @ U.conj().T
    return dequantize(OperatorMatrix(f.grid, P), A)
