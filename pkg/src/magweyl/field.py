"""Magnetic 2-forms, vector potentials, gauges and flux/circulation integrals.

Component indices of a 2-form are 1-based, ``B[(1, 2)]`` is ``B_12``; only
one of ``(j, k)``/``(k, j)`` needs to be supplied, the other is filled in by
antisymmetry.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp
from scipy.interpolate import RegularGridInterpolator

from .errors import DimensionMismatch, InconsistentPair, NotClosed
from .symbols import xsyms

KINDS = ("constant", "affine", "closed_form", "grid_sampled")

_GL16 = np.polynomial.legendre.leggauss(16)
_GL8 = np.polynomial.legendre.leggauss(8)


def _gauss01(order):
    t, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (t + 1), 0.5 * w


def as_expr(v, n):
    """Sympify ``v`` with ``x_1..x_n`` bound to the canonical real symbols."""
    xs = xsyms(n)
    e = sp.sympify(v, locals={str(x): x for x in xs})
    return e.subs({sp.Symbol(str(x)): x for x in xs})


def _lambdify(exprs, n):
    xs = xsyms(n)
    fns = [sp.lambdify(xs, e, modules="numpy") for e in exprs]

    def f(p):
        p = np.asarray(p, dtype=float)
        cols = [p[..., j] for j in range(n)]
        # removable singularities (e.g. at the origin) are resolved by Piecewise branches
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.stack([np.broadcast_to(np.asarray(fn(*cols), dtype=float), p.shape[:-1]) for fn in fns],
                            axis=-1)

    return f


def _degree(expr, xs):
    if not expr.free_symbols & set(xs):
        return 0
    if not expr.is_polynomial(*xs):
        return np.inf
    try:
        return sp.Poly(expr, *xs).total_degree()
    except sp.PolynomialError:
        return np.inf


# ---------------------------------------------------------------------------
# magnetic fields
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MagneticField:
    """Antisymmetric 2-form ``B_jk(x)``.

    Parameters
    ----------
    dim : int
    kind : {"constant", "affine", "closed_form", "grid_sampled"}
    components : dict
        ``{(j, k): value}`` with 1-based indices.  Values are numbers or
        sympy expressions in ``x_1..x_n``; for ``grid_sampled`` they are
        arrays of shape ``(N,)*n`` on ``grid``.
    grid : SpatialGrid, optional
        Required for ``grid_sampled``.
    """

    dim: int
    kind: str
    components: dict
    grid: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind == "grid_sampled" and self.grid is None:
            raise ValueError("grid_sampled fields need a grid")

    def check_indices(self):
        for j, k in self.components:
            if not (1 <= j <= self.dim and 1 <= k <= self.dim):
                raise DimensionMismatch(f"component B_{j}{k} exceeds dimension {self.dim}")

    @cached_property
    def sym_matrix(self):
        """Full antisymmetrized sympy matrix (analytic kinds only)."""
        if self.kind == "grid_sampled":
            raise TypeError("grid_sampled fields have no symbolic form")
        self.check_indices()
        n = self.dim
        M = sp.zeros(n, n)
        given = set()
        for (j, k), v in self.components.items():
            M[j - 1, k - 1] = as_expr(v, n)
            given.add((j - 1, k - 1))
        for j, k in list(given):
            if (k, j) not in given:
                M[k, j] = -M[j, k]
        return M

    @property
    def is_constant(self):
        if self.kind == "constant":
            return True
        if self.kind == "grid_sampled":
            return False
        return all(_degree(e, xsyms(self.dim)) == 0 for e in self.sym_matrix)

    @property
    def is_affine(self):
        if self.kind in ("constant", "affine"):
            return True
        if self.kind == "grid_sampled":
            return False
        return all(_degree(e, xsyms(self.dim)) <= 1 for e in self.sym_matrix)

    @cached_property
    def _func(self):
        n = self.dim
        if self.kind == "grid_sampled":
            self.check_indices()
            g = self.grid
            ax = np.append(g.x, g.L / 2)
            interps = {}
            for (j, k), arr in self.components.items():
                a = np.asarray(arr, dtype=float)
                a = np.pad(a, [(0, 1)] * n, mode="wrap")
                interps[(j - 1, k - 1)] = RegularGridInterpolator([ax] * n, a)

            def f(p):
                p = np.asarray(p, dtype=float)
                q = (p + g.L / 2) % g.L - g.L / 2
                out = np.zeros(p.shape[:-1] + (n, n))
                for (j, k), ip in interps.items():
                    v = ip(q.reshape(-1, n)).reshape(p.shape[:-1])
                    out[..., j, k] += v
                    if (k, j) not in interps:
                        out[..., k, j] -= v
                return out

            return f
        flat = _lambdify(list(self.sym_matrix), n)

        def f(p):
            p = np.asarray(p, dtype=float)
            return flat(p).reshape(p.shape[:-1] + (n, n))

        return f

    def __call__(self, p):
        """Matrix ``B(p)`` of shape ``p.shape[:-1] + (n, n)``."""
        return self._func(p)

    @cached_property
    def affine_coefficients(self):
        """``(B0, G)`` with ``B_jk(x) = B0_jk + sum_l G_jkl x_l`` (affine kinds)."""
        if not self.is_affine:
            raise TypeError("field is not affine")
        n, xs = self.dim, xsyms(self.dim)
        M = self.sym_matrix
        zero = {s: 0 for s in xs}
        B0 = np.array([[float(M[j, k].subs(zero)) for k in range(n)] for j in range(n)])
        G = np.array([[[float(sp.diff(M[j, k], xs[l])) for l in range(n)] for k in range(n)] for j in range(n)])
        return B0, G

    def tag(self):
        if self.kind == "grid_sampled":
            return f"B[grid_sampled,{self.grid.tag()}]"
        items = ",".join(f"B{j}{k}={sp.sstr(v)}" for (j, k), v in sorted(self.components.items()))
        return f"B[{self.kind}:{items}]"


def constant_field(n, components):
    return MagneticField(n, "constant", dict(components))


def uniform_2d(b):
    """Constant field ``B_12 = b`` in two dimensions."""
    return MagneticField(2, "constant", {(1, 2): b})


@dataclass(frozen=True)
class ValidationReport:
    antisymmetry_residual: float
    closedness_residual: float
    tolerance: float

    @property
    def valid(self):
        return self.antisymmetry_residual <= self.tolerance and self.closedness_residual <= self.tolerance


def validate_field(B, n_samples=50, seed=0, tol=1e-10, scale=1.0):
    """Antisymmetry and closedness (``dB = 0``) residuals at sample points."""
    B.check_indices()
    n = B.dim
    rng = np.random.default_rng(seed)
    pts = scale * rng.uniform(-1, 1, size=(n_samples, n))
    if B.kind == "grid_sampled":
        pts = pts * B.grid.L / 4
    M = B(pts)
    # antisymmetry of the data as supplied
    anti = 0.0
    if B.kind != "grid_sampled":
        for (j, k), v in B.components.items():
            if (k, j) in B.components:
                e = as_expr(v, n) + as_expr(B.components[(k, j)], n)
                anti = max(anti, float(np.max(np.abs(_lambdify([e], n)(pts)))))
            if j == k:
                anti = max(anti, float(np.max(np.abs(_lambdify([as_expr(v, n)], n)(pts)))))
    anti = max(anti, float(np.max(np.abs(M + np.swapaxes(M, -1, -2)))))
    closed = 0.0
    if n >= 3:
        triples = [(j, k, l) for j in range(n) for k in range(j + 1, n) for l in range(k + 1, n)]
        if B.kind == "grid_sampled":
            d = 1e-4 * B.grid.h

            def dB(l):
                e = np.zeros(n)
                e[l] = d
                return (B(pts + e) - B(pts - e)) / (2 * d)

            grads = [dB(l) for l in range(n)]
            for j, k, l in triples:
                r = grads[j][:, k, l] + grads[k][:, l, j] + grads[l][:, j, k]
                closed = max(closed, float(np.max(np.abs(r))))
        else:
            xs, S = xsyms(n), B.sym_matrix
            for j, k, l in triples:
                e = sp.diff(S[k, l], xs[j]) + sp.diff(S[l, j], xs[k]) + sp.diff(S[j, k], xs[l])
                closed = max(closed, float(np.max(np.abs(_lambdify([e], n)(pts)))))
    return ValidationReport(anti, closed, tol)


# ---------------------------------------------------------------------------
# vector potentials and gauges
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class VectorPotential:
    """Real 1-form ``A_j(x)``.

    ``exprs`` holds sympy expressions (closed form); ``func`` a callable
    ``(..., n) -> (..., n)`` when no closed form is known.
    """

    dim: int
    kind: str
    exprs: tuple | None = None
    func: object = field(default=None, repr=False, compare=False)
    tag: str = "A"
    source: MagneticField | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.exprs is not None:
            object.__setattr__(self, "exprs", tuple(as_expr(e, self.dim) for e in self.exprs))

    @cached_property
    def _f(self):
        if self.exprs is not None:
            return _lambdify(list(self.exprs), self.dim)
        return self.func

    def __call__(self, p):
        return self._f(p)

    @property
    def is_affine(self):
        if self.exprs is None:
            return False
        return all(_degree(sp.sympify(e), xsyms(self.dim)) <= 1 for e in self.exprs)

    @property
    def is_zero(self):
        return self.exprs is not None and all(sp.sympify(e) == 0 for e in self.exprs)

    @cached_property
    def affine_coefficients(self):
        """``(a0, G)`` with ``A(x) = a0 + G @ x``."""
        if not self.is_affine:
            raise TypeError("vector potential is not affine")
        xs = xsyms(self.dim)
        zero = {s: 0 for s in xs}
        a0 = np.array([float(sp.sympify(e).subs(zero)) for e in self.exprs])
        G = np.array([[float(sp.diff(sp.sympify(e), s)) for s in xs] for e in self.exprs])
        return a0, G

    def curl(self, p, step=1e-5):
        """Central-difference ``dA_jk = d_j A_k - d_k A_j`` at points ``p``."""
        n = self.dim
        p = np.asarray(p, dtype=float)
        J = np.zeros(p.shape[:-1] + (n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = step
            J[..., j, :] = (self(p + e) - self(p - e)) / (2 * step)
        return J - np.swapaxes(J, -1, -2)

    def curl_residual(self, B, p):
        return float(np.max(np.abs(self.curl(p) - B(p))))


def zero_potential(n):
    return VectorPotential(n, "closed_form", tuple(sp.Integer(0) for _ in range(n)), tag="A=0",
                           source=MagneticField(n, "constant", {}))


def symmetric_gauge(b):
    x1, x2 = xsyms(2)
    b = sp.nsimplify(b)
    return VectorPotential(2, "closed_form", (-b / 2 * x2, b / 2 * x1), tag=f"symmetric(b={b})",
                           source=uniform_2d(b))


def landau_gauge(b):
    x1, x2 = xsyms(2)
    b = sp.nsimplify(b)
    return VectorPotential(2, "closed_form", (sp.Integer(0), b * x1), tag=f"landau(b={b})", source=uniform_2d(b))


@dataclass(frozen=True)
class GaugeFunction:
    """Real scalar ``phi(x)`` given as a sympy expression."""

    expr: sp.Expr
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "expr", as_expr(self.expr, self.dim))

    @classmethod
    def parse(cls, text, n):
        from .symbols import expression

        d = expression(text, n)
        return cls(d.expr, n)

    @cached_property
    def _f(self):
        return _lambdify([self.expr], self.dim)

    def __call__(self, p):
        return self._f(p)[..., 0]

    def gradient(self):
        return tuple(sp.diff(self.expr, s) for s in xsyms(self.dim))


def transversal_gauge(B, check=True):
    """Poincaré gauge ``A_j(x) = -sum_k int_0^1 B_jk(s x) s x_k ds``."""
    n = B.dim
    if check:
        rep = validate_field(B)
        if not rep.valid:
            raise NotClosed(f"field fails validation: {rep}")
    if B.kind == "grid_sampled":
        s_nodes, s_w = _gauss01(16)

        def func(p):
            p = np.asarray(p, dtype=float)
            out = np.zeros(p.shape)
            for s, w in zip(s_nodes, s_w):
                M = B(s * p)
                out -= w * s * np.einsum("...jk,...k->...j", M, p)
            return out

        return VectorPotential(n, "grid_sampled", None, func, tag=f"transversal({B.tag()})", source=B)
    xs = xsyms(n)
    s = sp.Symbol("s", positive=True)
    M = B.sym_matrix
    exprs = []
    closed = True
    for j in range(n):
        integrand = -sum(M[j, k].subs({xs[i]: s * xs[i] for i in range(n)}) * s * xs[k] for k in range(n))
        integrand = sp.expand(integrand)
        val = sp.integrate(integrand, (s, 0, 1))
        if val.has(sp.Integral):
            closed = False
            break
        exprs.append(sp.simplify(val))
    if closed:
        return VectorPotential(n, "closed_form", tuple(exprs), tag=f"transversal({B.tag()})", source=B)
    s_nodes, s_w = _gauss01(32)

    def func(p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape)
        for sv, w in zip(s_nodes, s_w):
            out -= w * sv * np.einsum("...jk,...k->...j", B(sv * p), p)
        return out

    return VectorPotential(n, "closed_form", None, func, tag=f"transversal({B.tag()})", source=B)


def gauge_transform(A, phi):
    """``A + d phi`` with the gradient taken symbolically."""
    if phi.dim != A.dim:
        raise DimensionMismatch("gauge function and potential dimensions differ")
    grad = phi.gradient()
    tag = f"{A.tag}+d({sp.sstr(phi.expr)})"
    if A.exprs is not None:
        return VectorPotential(A.dim, "closed_form", tuple(sp.sympify(a) + g for a, g in zip(A.exprs, grad)),
                               tag=tag, source=A.source)
    gfun = _lambdify(list(grad), A.dim)
    return VectorPotential(A.dim, A.kind, None, lambda p: A(p) + gfun(p), tag=tag, source=A.source)


# ---------------------------------------------------------------------------
# line and surface integrals
# ---------------------------------------------------------------------------
def circulation(A, x, y, order=16):
    """Line integral of ``A`` along the straight segment ``[x, y]``.

    Gauss-Legendre of the given order (exact for polynomial ``A`` of degree
    ``<= 2*order - 1``); affine potentials use the exact midpoint rule.
    Broadcasts over leading dimensions.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = y - x
    if A.is_affine:
        return np.einsum("...j,...j->...", A(0.5 * (x + y)), d)
    t, w = _gauss01(order)
    out = np.zeros(np.broadcast_shapes(x.shape, y.shape)[:-1])
    for tv, wv in zip(t, w):
        out += wv * np.einsum("...j,...j->...", A(x + tv * d), d)
    return out


def _bilinear(M, u, v):
    return np.einsum("...j,...jk,...k->...", u, M, v)


def _triangle_quadrature(order=8, levels=1):
    """Nodes ``(s, t)`` and weights on the reference simplex (area 1/2)."""
    g, w = _gauss01(order)
    U, V = np.meshgrid(g, g, indexing="ij")
    W = np.outer(w, w)
    s = U * (1 - V)
    t = U * V
    wt = W * U
    s, t, wt = s.ravel(), t.ravel(), wt.ravel()
    # one subdivision: split into 4 similar triangles
    for _ in range(levels):
        subs = [((0, 0), (0.5, 0), (0, 0.5)), ((0.5, 0), (1, 0), (0.5, 0.5)),
                ((0, 0.5), (0.5, 0.5), (0, 1)), ((0.5, 0.5), (0, 0.5), (0.5, 0))]
        S, T, Wt = [], [], []
        for p0, p1, p2 in subs:
            p0, p1, p2 = map(np.array, (p0, p1, p2))
            e1, e2 = p1 - p0, p2 - p0
            jac = abs(e1[0] * e2[1] - e1[1] * e2[0])
            S.append(p0[0] + s * e1[0] + t * e2[0])
            T.append(p0[1] + s * e1[1] + t * e2[1])
            Wt.append(wt * jac)
        s, t, wt = np.concatenate(S), np.concatenate(T), np.concatenate(Wt)
    return s, t, wt


_TRI = _triangle_quadrature()


def flux_triangle(B, a, b, c):
    """Oriented flux of ``B`` through the affine triangle ``<a, b, c>``.

    Orientation: ``B(b - a, c - a)`` positive for counterclockwise order in
    the ``(x_j, x_k)``, ``j < k`` planes.  Exact for constant and affine
    fields; tensor Gauss-Legendre (order 8, one subdivision) otherwise.
    Broadcasts over leading dimensions.
    """
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    u, v = b - a, c - a
    if B.is_affine:
        cen = (a + b + c) / 3.0
        return 0.5 * _bilinear(B(cen), u, v)
    s, t, w = _TRI
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape, c.shape)[:-1])
    for sv, tv, wv in zip(s, t, w):
        out += wv * _bilinear(B(a + sv * u + tv * v), u, v)
    return out


def cocycle(B, z, x, y, convention="translation"):
    """Unit phase of the magnetic 2-cocycle.

    ``convention="translation"``: ``omega(z; x, y) = exp(-i Gamma(<z, z+x, z+x+y>))``.
    ``convention="corner"``: ``omega_B(z, x, y) = exp(-i Gamma)`` over the
    triangle with corners ``z-x-y, z+x-y, z-x+y``.
    """
    z, x, y = (np.asarray(v, dtype=float) for v in (z, x, y))
    if convention == "translation":
        G = flux_triangle(B, z, z + x, z + x + y)
    elif convention == "corner":
        G = flux_triangle(B, z - x - y, z + x - y, z - x + y)
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return np.exp(-1j * G)


def cocycle_residual(B, q, x, y, w):
    """``|omega(x+y, w) omega(x, y) - theta_x[omega(y, w)] omega(x, y+w)|`` at base ``q``."""
    q, x, y, w = (np.asarray(v, dtype=float) for v in (q, x, y, w))
    lhs = cocycle(B, q, x + y, w) * cocycle(B, q, x, y)
    rhs = cocycle(B, q + x, y, w) * cocycle(B, q, x, y + w)
    return np.abs(lhs - rhs)


def check_pair(A, B, tol=1e-6, n_samples=20, seed=0, scale=1.0):
    """Raise :class:`InconsistentPair` unless ``dA = B`` at sample points."""
    rng = np.random.default_rng(seed)
    pts = scale * rng.uniform(-1, 1, size=(n_samples, A.dim))
    r = A.curl_residual(B, pts)
    if r > tol:
        raise InconsistentPair(f"curl residual {r:.3e} exceeds {tol:g}")
    return r
