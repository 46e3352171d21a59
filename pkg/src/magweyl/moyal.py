"""Magnetic composition of symbols, its asymptotic expansion and derivations.

Three routes to ``f #^B g``:

* operator route (canonical): ``dequantize(Op^A(f) Op^A(g))``;
* integral route (pointwise oracle): quadrature of the phase-space double
  integral with the magnetic flux phase;
* expansion: the finite sum of the terms ``h_l``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import factorial

import numpy as np
import sympy as sp

from ._backend import kernels
from .errors import DerivativeOrderExceeded, NonDecaying
from .field import flux_triangle
from .quantize import dequantize, operator_norm, quantize
from .symbols import (SymbolField, exact_or_spectral_derivative, exponential, linear, mfact, multi_indices,
                      sample_symbol, xsyms)

MAX_LEVEL = 6

# Sign of the canonical flux term: the integral kernel is exp(-i (SIGMA_SIGN*2*sigma(Y,Z) + Gamma_B)).
# Fixed by x#xi = x xi + i/2 and checked against the operator route in the test suite.
SIGMA_SIGN = +1


# ---------------------------------------------------------------------------
# operator route
# ---------------------------------------------------------------------------
def compose_operator_route(f, g, A=None):
    """``f #^B g = dequantize(Op^A(f) Op^A(g))``."""
    f.grid.check_same(g.grid)
    return dequantize(quantize(f, A) @ quantize(g, A), A)


def commutator(f, g, A=None):
    """``f # g - g # f`` via the operator route."""
    F, G = quantize(f, A), quantize(g, A)
    return dequantize(F @ G - G @ F, A)


# ---------------------------------------------------------------------------
# integral route
# ---------------------------------------------------------------------------
class IntegralRoute:
    """Pointwise quadrature of the magnetic composition integral.

    The xi-integrals are done exactly on the dual grid by partial Fourier
    transforms; the remaining spatial double sum over ``(y, z)`` on the
    half-period lattice ``|y_i|, |z_i| < L/4`` carries the flux phase
    ``exp(-i Gamma_B(x, y, z))``.  ``f`` and ``g`` must decay towards the
    box edges.
    """

    def __init__(self, f, g, B, decay_tol=1e-6):
        f.grid.check_same(g.grid)
        self.grid = gr = f.grid
        for name, s in (("f", f), ("g", g)):
            edge = _edge_max(s.values, gr.n)
            if edge > decay_tol * max(np.max(np.abs(s.values)), 1e-300):
                raise NonDecaying(f"|{name}| at the box edge is {edge:.3e} relative to its max")
        self.B = B
        n, N = gr.n, gr.N
        self.j = np.arange(-N // 4, N // 4)
        jj = np.stack(np.meshgrid(*([self.j] * n), indexing="ij"), -1).reshape(-1, n)
        self.shifts = jj
        self.disp = jj * gr.h
        dk = (2 * np.pi / gr.L) ** n
        self.Sf = self._partial(f.values, +SIGMA_SIGN) * dk
        self.Sg = self._partial(g.values, -SIGMA_SIGN) * dk

    def _partial(self, vals, sign):
        gr = self.grid
        n, N = gr.n, gr.N
        ax = tuple(range(n, 2 * n))
        v = np.fft.ifftshift(vals, axes=ax)
        T = np.fft.ifftn(v, axes=ax) * N**n if sign > 0 else np.fft.fftn(v, axes=ax)
        idx = tuple((2 * self.shifts[:, i]) % N for i in range(n))
        T = T.reshape((N**n,) + (N,) * n)
        return T[(slice(None),) + idx]  # (N**n spatial, M displacements)

    def __call__(self, X):
        gr = self.grid
        n, N, h = gr.n, gr.N, gr.h
        X = np.asarray(X, dtype=float).ravel()
        ix = np.rint((X[:n] + gr.L / 2) / h).astype(int)
        x = -gr.L / 2 + ix * h
        xi = X[n:]
        D = self.disp
        s = SIGMA_SIGN
        uy = np.ravel_multi_index(tuple(((ix - self.shifts) % N).T), (N,) * n)
        Fm = self.Sf[uy, :] * np.exp(-2j * s * (D @ xi))[None, :]
        Gm = self.Sg[uy, :] * np.exp(2j * s * (D @ xi))[None, :]
        # Fm[iy, iz] = F(x - y; z), Gm[iz, iy] = G(x - z; y)
        if self.B.is_affine:
            B0, Bg = _affine_arrays(self.B)
            tot = kernels.flux_sum(np.ascontiguousarray(D), np.ascontiguousarray(D), np.ascontiguousarray(x),
                                   B0, Bg, np.ascontiguousarray(Fm), np.ascontiguousarray(Gm))
        else:
            tot = 0.0
            for iy in range(D.shape[0]):
                y = D[iy][None, :]
                gam = flux_triangle(self.B, x - y - D, x + y - D, x - y + D)
                tot += np.sum(np.exp(-1j * gam) * Fm[iy] * Gm[:, iy])
        return complex(tot * (h**n / np.pi**n) ** 2)


def _affine_arrays(B):
    n = B.dim
    if B.is_constant and B.kind != "grid_sampled":
        B0 = np.asarray(B(np.zeros((1, n)))[0], dtype=float)
        return np.ascontiguousarray(B0), np.zeros((n, n, n))
    B0, G = B.affine_coefficients
    return np.ascontiguousarray(B0), np.ascontiguousarray(G)


def _edge_max(vals, n):
    out = 0.0
    for i in range(n):
        out = max(out, float(np.max(np.abs(np.take(vals, 0, axis=i)))))
    return out


def compose_integral(f, g, B, X):
    """Integral-route value of ``(f #^B g)(X)``.

    ``X`` is one phase-space point ``(x, xi)`` or an array of them; the
    ``x`` part is snapped to the nearest grid node.
    """
    route = IntegralRoute(f, g, B)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return route(X)
    return np.array([route(p) for p in X])


# ---------------------------------------------------------------------------
# expansion
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Contribution:
    a: tuple
    alpha: tuple
    b: tuple
    beta: tuple
    coefficient: complex
    max_abs: float


@dataclass
class ExpansionTerm:
    level: int
    value: SymbolField
    breakdown: list = field(default_factory=list)

    def to_csv_rows(self):
        for c in self.breakdown:
            yield (self.level, c.a, c.alpha, c.b, c.beta, c.coefficient.real, c.coefficient.imag, c.max_abs)


def coefficient(a, alpha, b, beta):
    """``C_ab = (i/2)^l (-1)^(|a|+|b|+|beta|) / (a! b! (alpha-b)! (beta-a)!)``."""
    l = sum(alpha) + sum(beta)
    am = tuple(x - y for x, y in zip(alpha, b))
    bm = tuple(x - y for x, y in zip(beta, a))
    sgn = (-1) ** (sum(a) + sum(b) + sum(beta))
    return (0.5j) ** l * sgn / (mfact(a) * mfact(b) * mfact(am) * mfact(bm))


def index_tuples(n, l):
    """All ``(a, alpha, b, beta)`` with ``|alpha|+|beta| = l``, ``a <= beta``, ``b <= alpha``."""
    for la in range(l + 1):
        for alpha in multi_indices(n, la):
            for beta in multi_indices(n, l - la):
                for a in product(*[range(v + 1) for v in beta]):
                    for b in product(*[range(v + 1) for v in alpha]):
                        yield tuple(a), tuple(alpha), tuple(b), tuple(beta)


def _ysyms(n):
    return tuple(sp.Symbol(f"y_{j + 1}", real=True) for j in range(n))


def _zsyms(n):
    return tuple(sp.Symbol(f"z_{j + 1}", real=True) for j in range(n))


def _truncate(poly_expr, gens, degree):
    p = sp.Poly(sp.expand(poly_expr), *gens)
    return sum((c * sp.Mul(*[g**e for g, e in zip(gens, mon)]) for mon, c in p.terms() if sum(mon) <= degree),
               sp.Integer(0))


_OMEGA_CACHE = {}


def _omega_taylor(B, degree):
    """Taylor coefficients of ``omega_B(x, y, z)`` in ``(y, z)`` at 0 up to ``degree``.

    Returns ``{(p, q): sympy expr in x}`` with the derivative values
    ``d_y^p d_z^q omega_B(x, 0, 0)``.
    """
    key = (B.dim, B.tag(), degree)
    if key not in _OMEGA_CACHE:
        if len(_OMEGA_CACHE) > 16:
            _OMEGA_CACHE.clear()
        _OMEGA_CACHE[key] = _omega_taylor_uncached(B, degree)
    return _OMEGA_CACHE[key]


def _omega_taylor_uncached(B, degree):
    n = B.dim
    xs, ys, zs = xsyms(n), _ysyms(n), _zsyms(n)
    s, t = sp.symbols("s t", real=True)
    M = B.sym_matrix
    w = [-ys[i] - zs[i] + 2 * s * ys[i] + 2 * t * zs[i] for i in range(n)]
    gam = sp.Integer(0)
    for j in range(n):
        for k in range(j + 1, n):
            if M[j, k] == 0:
                continue
            term, taylor = M[j, k], sp.Integer(0)
            for r in range(max(degree - 1, 1)):
                taylor += term / factorial(r)
                term = sum(w[i] * sp.diff(term, xs[i]) for i in range(n))
            integrand = sp.expand(4 * (ys[j] * zs[k] - ys[k] * zs[j]) * taylor)
            gam += sp.integrate(sp.integrate(integrand, (t, 0, 1 - s)), (s, 0, 1))
    gens = ys + zs
    gam = _truncate(gam, gens, degree) if gam != 0 else gam
    om, power = sp.Integer(1), sp.Integer(1)
    for m in range(1, degree // 2 + 1):
        power = _truncate(power * (-sp.I * gam), gens, degree)
        om += power / factorial(m)
    om = sp.expand(om)
    out = {}
    if om == 1:
        return {((0,) * n, (0,) * n): sp.Integer(1)}
    for mon, c in sp.Poly(om, *gens).terms():
        p, q = tuple(mon[:n]), tuple(mon[n:])
        out[(p, q)] = sp.simplify(c * mfact(p) * mfact(q))
    return out


def _omega_fd(B, grid, p, q, step=None):
    """Nested central differences (Richardson h^2 -> h^4) of omega_B at ``(x, 0, 0)``."""
    n = grid.n
    pts = grid.points
    step = step or 0.25 * grid.h
    orders = list(p) + list(q)

    def stencil(o):
        if o == 0:
            return np.array([0]), np.array([1.0])
        m = (o + 1) // 2
        off = np.arange(-m, m + 1)
        V = np.vander(off, increasing=True).T.astype(float)
        rhs = np.zeros(len(off))
        rhs[o] = factorial(o)
        return off, np.linalg.solve(V, rhs)

    def approx(hs):
        st = [stencil(o) for o in orders]
        tot = np.zeros(len(pts), dtype=complex)
        for combo in product(*[range(len(s[0])) for s in st]):
            coef = np.prod([st[i][1][c] for i, c in enumerate(combo)])
            if coef == 0:
                continue
            off = np.array([st[i][0][c] for i, c in enumerate(combo)], dtype=float) * hs
            y, z = off[:n], off[n:]
            Y = np.broadcast_to(y, pts.shape)
            Z = np.broadcast_to(z, pts.shape)
            tot += coef * np.exp(-1j * flux_triangle(B, pts - Y - Z, pts + Y - Z, pts - Y + Z))
        return tot / hs ** sum(orders)

    d1, d2 = approx(step), approx(step / 2)
    return (4 * d2 - d1) / 3


class OmegaDerivatives:
    """``d_y^p d_z^q omega_B(x, 0, 0)`` sampled on the spatial grid."""

    def __init__(self, B, grid, degree):
        self.B, self.grid, self.degree = B, grid, degree
        self._cache = {}
        self.table = None if B.kind == "grid_sampled" else _omega_taylor(B, degree)

    def __call__(self, p, q):
        key = (tuple(p), tuple(q))
        if key in self._cache:
            return self._cache[key]
        n = self.grid.n
        if sum(p) + sum(q) == 0:
            val = np.ones(self.grid.size, dtype=complex)
        elif self.table is not None:
            e = self.table.get(key, sp.Integer(0))
            fn = sp.lambdify(xsyms(n), e, modules="numpy")
            cols = [self.grid.points[:, j] for j in range(n)]
            val = np.broadcast_to(np.asarray(fn(*cols), dtype=complex), (self.grid.size,)).copy()
        else:
            val = _omega_fd(self.B, self.grid, p, q)
        self._cache[key] = val
        return val

    def as_field_factor(self, p, q):
        n, N = self.grid.n, self.grid.N
        return self(p, q).reshape((N,) * n + (1,) * n)


def expansion(f, g, B, N, tol_zero=0.0):
    """Terms ``h_0 .. h_{N-1}`` of the asymptotic development of ``f #^B g``.

    Symbol derivatives are exact when the fields carry descriptors and
    spectral otherwise; omega-derivatives are exact (symbolic Taylor
    expansion of the flux) for analytic fields and Richardson-extrapolated
    central differences for grid-sampled ones.
    """
    f.grid.check_same(g.grid)
    if N < 1:
        raise ValueError("N must be >= 1")
    if N - 1 > MAX_LEVEL:
        raise DerivativeOrderExceeded(f"levels up to {MAX_LEVEL} supported, requested {N - 1}")
    gr = f.grid
    n = gr.n
    om = OmegaDerivatives(B, gr, N - 1)
    plan = []
    for l in range(N):
        for a, alpha, b, beta in index_tuples(n, l):
            p = tuple(x - y for x, y in zip(beta, a))
            q = tuple(x - y for x, y in zip(alpha, b))
            w = om.as_field_factor(p, q)
            if np.any(w):
                plan.append((l, a, alpha, b, beta, w, coefficient(a, alpha, b, beta)))
    vals = [np.zeros(gr.field_shape, dtype=complex) for _ in range(N)]
    maxes = np.zeros(len(plan))
    if f.descriptor is not None and g.descriptor is not None:
        # pointwise in x: evaluate slab by slab to bound memory
        dsc = {}

        def desc(tag, s, a, al):
            if (tag, a, al) not in dsc:
                dsc[(tag, a, al)] = s.descriptor.diff(a, al)
            return dsc[(tag, a, al)]

        mesh = gr.mesh()
        chunk = max(1, 2**18 // gr.N ** (2 * n - 1))
        for i0 in range(0, gr.N, chunk):
            sl = slice(i0, i0 + chunk)
            coords = [mesh[0][sl]] + mesh[1:]
            shape = (min(chunk, gr.N - i0),) + gr.field_shape[1:]
            local = {}

            def d(tag, s, a, al):
                if (tag, a, al) not in local:
                    local[(tag, a, al)] = np.broadcast_to(desc(tag, s, a, al)(*coords), shape)
                return local[(tag, a, al)]

            for k, (l, a, alpha, b, beta, w, C) in enumerate(plan):
                contrib = C * w[sl] * d("f", f, a, alpha) * d("g", g, b, beta)
                maxes[k] = max(maxes[k], float(np.max(np.abs(contrib))))
                vals[l][sl] += contrib
    else:
        for k, (l, a, alpha, b, beta, w, C) in enumerate(plan):
            contrib = C * w * exact_or_spectral_derivative(f, a, alpha).values
            contrib *= exact_or_spectral_derivative(g, b, beta).values
            maxes[k] = float(np.max(np.abs(contrib)))
            vals[l] += contrib
    terms = []
    for l in range(N):
        parts = [Contribution(a, alpha, b, beta, complex(C), float(maxes[k]))
                 for k, (ll, a, alpha, b, beta, w, C) in enumerate(plan)
                 if ll == l and not (tol_zero > 0 and maxes[k] <= tol_zero)]
        terms.append(ExpansionTerm(l, SymbolField(gr, vals[l]), parts))
    return terms


def h2_printed(f, g, B):
    """Second-order term in its printed closed form (with ``1/eps_jk`` weights).

    Kept separately from :func:`expansion` for cross-checking: the weights
    ``eps_jj = 1``, ``eps_jk = 2`` (``j != k``) over ordered pairs give the
    diagonal ``x_j x_j / xi_j xi_j`` contributions twice the weight produced
    by the general coefficient formula.
    """
    gr = f.grid
    n = gr.n
    out = np.zeros(gr.field_shape, dtype=complex)

    def e(j):
        v = [0] * n
        v[j] += 1
        return v

    def ee(j, k):
        v = [0] * n
        v[j] += 1
        v[k] += 1
        return tuple(v)

    z = (0,) * n
    dd = exact_or_spectral_derivative
    for j in range(n):
        for k in range(n):
            eps = 1.0 if j == k else 2.0
            out += (0.5j) ** 2 / eps * (dd(f, ee(j, k), z).values * dd(g, z, ee(j, k)).values
                                        + dd(f, z, ee(j, k)).values * dd(g, ee(j, k), z).values)
            out -= (0.5j) ** 2 * dd(f, tuple(e(j)), tuple(e(k))).values * dd(g, tuple(e(k)), tuple(e(j))).values
            Bjk = B(gr.points)[:, j, k].reshape((gr.N,) * n + (1,) * n)
            out -= 0.5j * Bjk * dd(f, z, tuple(e(k))).values * dd(g, z, tuple(e(j))).values
    return SymbolField(gr, out)


# ---------------------------------------------------------------------------
# derivations
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DerivationSpec:
    """Direction of a magnetic derivation.

    ``kind="linear"`` uses ``l_X`` for the phase-space point ``X``;
    ``kind="general"`` uses a user symbol ``phi`` (descriptor or field).
    """

    kind: str = "linear"
    X: tuple | None = None
    phi: object = None

    def symbol(self, grid):
        if self.kind == "linear":
            return sample_symbol(linear(self.X, grid.n), grid)
        if isinstance(self.phi, SymbolField):
            return self.phi
        return sample_symbol(self.phi, grid)


def ad_B(spec, f, A=None):
    """``ad_phi[f] = phi # f - f # phi`` via the operator route."""
    return commutator(spec.symbol(f.grid), f, A)


def _ad_matrix(spec, F, grid, A):
    L = quantize(spec.symbol(grid), A).entries
    return L @ F - F @ L


def twisted_translation(X, t, f, A=None):
    """``T_{tX}[f] = e_{-tX} # f # e_{tX}`` via the operator route."""
    g = f.grid
    X = np.asarray(X, dtype=float).ravel()
    Ep = quantize(sample_symbol(exponential(t * X, g.n), g), A)
    Em = quantize(sample_symbol(exponential(-t * X, g.n), g), A)
    return dequantize(Em @ quantize(f, A) @ Ep, A)


def beals_bony_seminorm(f, specs, m=0.0, rho=0.0, A=None):
    """``|| Op^A(s_{-m+q rho} # ad_{phi_1} ... ad_{phi_q}[f]) ||``."""
    g = f.grid
    F = quantize(f, A).entries
    for spec in specs:
        F = _ad_matrix(spec, F, g, A)
    expo = -m + len(specs) * rho
    if expo != 0:
        from .funcalc import make_s_m

        S = quantize(make_s_m(expo, g, A), A).entries
        F = S @ F
    return operator_norm(F)
