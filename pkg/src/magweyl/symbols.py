"""Phase-space grids, symbol descriptors and sampled symbol fields.

A phase-space point is ``(x, xi)`` with ``x`` in the periodic box
``[-L/2, L/2)^n`` and ``xi`` on the dual grid ``2*pi/L * m``,
``m = -N/2, ..., N/2 - 1``.  Sampled symbols are stored with all ``x`` axes
first and all ``xi`` axes last, ``xi`` in centred (ascending) order.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from math import factorial

import numpy as np
import sympy as sp

from .errors import DimensionMismatch, EvaluationOverflow, GridMismatch, GridTooCoarse

MAX_POINTS = 2**20


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SpatialGrid:
    """Periodic grid on ``[-L/2, L/2)^n`` with ``N`` points per dimension."""

    dim: int
    points_per_dim: int
    box_length: float
    max_points: int = MAX_POINTS

    def __post_init__(self):
        n, N, L = self.dim, self.points_per_dim, self.box_length
        if n < 1:
            raise ValueError("dim must be >= 1")
        if N < 4 or N % 4:
            # the Nyquist split of the kernel encoding needs N/4 to be an integer
            raise ValueError(f"points_per_dim must be a multiple of 4, got {N}")
        if not L > 0:
            raise ValueError("box_length must be positive")
        if N**n > self.max_points:
            raise ValueError(f"{N}**{n} grid points exceed the configured maximum {self.max_points}")

    @property
    def n(self):
        return self.dim

    @property
    def N(self):
        return self.points_per_dim

    @property
    def L(self):
        return self.box_length

    @property
    def h(self):
        return self.box_length / self.points_per_dim

    @property
    def size(self):
        """Number of spatial points, i.e. the matrix dimension."""
        return self.N**self.n

    @property
    def xi_max(self):
        """Truncation radius of the dual grid, ``pi*N/L``."""
        return np.pi * self.N / self.L

    @cached_property
    def x(self):
        return -self.L / 2 + self.h * np.arange(self.N)

    @cached_property
    def k(self):
        return 2 * np.pi / self.L * np.arange(-self.N // 2, self.N // 2)

    @cached_property
    def points(self):
        """Spatial points as an ``(N**n, n)`` array in C (row-major) order."""
        mesh = np.meshgrid(*([self.x] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def frequencies(self):
        """Dual-grid points as an ``(N**n, n)`` array in C order."""
        mesh = np.meshgrid(*([self.k] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def mesh(self):
        """Broadcastable coordinate arrays ``(x_1..x_n, xi_1..xi_n)``."""
        n = self.n
        out = []
        for i in range(2 * n):
            shape = [1] * (2 * n)
            shape[i] = self.N
            out.append((self.x if i < n else self.k).reshape(shape))
        return out

    @property
    def field_shape(self):
        return (self.N,) * (2 * self.n)

    def tag(self):
        return f"n={self.n},N={self.N},L={self.L:g}"

    def check_same(self, other):
        if (self.n, self.N, self.L) != (other.n, other.N, other.L):
            raise GridMismatch(f"grids differ: {self.tag()} vs {other.tag()}")


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------
def xsyms(n):
    return tuple(sp.Symbol(f"x_{j + 1}", real=True) for j in range(n))


def xisyms(n):
    return tuple(sp.Symbol(f"xi_{j + 1}", real=True) for j in range(n))


_MODULES = [{"erf": __import__("scipy.special", fromlist=["erf"]).erf}, "numpy"]


@dataclass(frozen=True)
class SymbolDescriptor:
    """Closed-form symbol ``f(x, xi)`` backed by a sympy expression.

    Parameters
    ----------
    expr : sympy.Expr
        Expression in the real symbols ``x_1..x_n`` and ``xi_1..xi_n``.
    dim : int
    order : float, optional
        Claimed Hörmander order ``m`` (advisory).
    rho, delta : float, optional
        Claimed type ``(rho, delta)`` (advisory).
    label : str
    """

    expr: sp.Expr
    dim: int
    order: float | None = None
    rho: float | None = None
    delta: float | None = None
    label: str = ""

    @property
    def variables(self):
        return tuple(xsyms(self.dim)) + tuple(xisyms(self.dim))

    @cached_property
    def _func(self):
        return sp.lambdify(self.variables, self.expr, modules=_MODULES)

    def __call__(self, *coords):
        """Evaluate at broadcastable arrays ``x_1..x_n, xi_1..xi_n``."""
        if len(coords) != 2 * self.dim:
            raise DimensionMismatch(f"expected {2 * self.dim} coordinates, got {len(coords)}")
        shape = np.broadcast_shapes(*[np.shape(c) for c in coords])
        val = np.asarray(self._func(*coords), dtype=complex)
        return np.broadcast_to(val, shape).copy()

    def diff(self, a, alpha):
        """Exact derivative ``d_x^a d_xi^alpha``."""
        a, alpha = tuple(a), tuple(alpha)
        if len(a) != self.dim or len(alpha) != self.dim:
            raise DimensionMismatch("multi-index length must equal dim")
        e = self.expr
        for s, k in zip(self.variables, a + alpha):
            if k:
                e = sp.diff(e, s, k)
        return SymbolDescriptor(e, self.dim, label=f"d{a}{alpha}({self.label})")

    def conj(self):
        return SymbolDescriptor(sp.conjugate(self.expr), self.dim, self.order, self.rho,
                                self.delta, f"conj({self.label})")

    def is_xi_only(self):
        return not (self.expr.free_symbols & set(xsyms(self.dim)))

    def _combine(self, other, op, name):
        if isinstance(other, SymbolDescriptor):
            if other.dim != self.dim:
                raise DimensionMismatch("descriptor dimensions differ")
            return SymbolDescriptor(op(self.expr, other.expr), self.dim, label=f"{self.label}{name}{other.label}")
        return SymbolDescriptor(op(self.expr, sp.sympify(other)), self.dim, self.order, self.rho,
                                self.delta, f"{self.label}{name}{other}")

    def __add__(self, other):
        return self._combine(other, lambda u, v: u + v, "+")

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, lambda u, v: u - v, "-")

    def __rsub__(self, other):
        return SymbolDescriptor(sp.sympify(other) - self.expr, self.dim, label=f"{other}-{self.label}")

    def __mul__(self, other):
        return self._combine(other, lambda u, v: u * v, "*")

    __rmul__ = __mul__

    def __neg__(self):
        return SymbolDescriptor(-self.expr, self.dim, self.order, self.rho, self.delta, f"-{self.label}")

    def __str__(self):
        return self.label or str(self.expr)


def constant(c, n):
    return SymbolDescriptor(sp.sympify(c), n, 0.0, 1.0, 0.0, f"{c}")


def kinetic(n):
    """``|xi|^2``."""
    xi = xisyms(n)
    return SymbolDescriptor(sum(s**2 for s in xi), n, 2.0, 1.0, 0.0, "|xi|^2")


def japanese_xi(n):
    xi = xisyms(n)
    return sp.sqrt(1 + sum(s**2 for s in xi))


def p_m(m, n):
    """``<xi>^m = (1 + |xi|^2)^(m/2)``, order ``m``, type ``(1, 0)``."""
    xi = xisyms(n)
    base = 1 + sum(s**2 for s in xi)
    m = sp.nsimplify(m)
    expr = base ** (m / 2)
    if m >= 0 and (m / 2).is_integer:
        expr = sp.expand(expr)
    return SymbolDescriptor(expr, n, float(m), 1.0, 0.0, f"p_{m}")


def p_ma(m, a, n):
    """``a + p_m``."""
    d = p_m(m, n)
    return SymbolDescriptor(sp.sympify(a) + d.expr, n, float(m), 1.0, 0.0, f"p_({m},{a})")


def weight(m, delta, n):
    """``M_{m,delta}(x, xi) = <x>^(-delta) <xi>^m``."""
    x, xi = xsyms(n), xisyms(n)
    expr = (1 + sum(s**2 for s in x)) ** (-sp.nsimplify(delta) / 2) * (1 + sum(s**2 for s in xi)) ** (sp.nsimplify(m) / 2)
    return SymbolDescriptor(expr, n, float(m), 1.0, float(delta), f"M_({m},{delta})")


def _split_point(X, n):
    X = np.asarray(X, dtype=float).ravel()
    if X.size != 2 * n:
        raise DimensionMismatch(f"phase-space point must have {2 * n} components")
    return X[:n], X[n:]


def linear(X, n):
    """Linear monomial ``l_X(Y) = sigma(X, Y) = y.xi0 - x0.eta``."""
    x0, xi0 = _split_point(X, n)
    y, eta = xsyms(n), xisyms(n)
    expr = sum(sp.Float(xi0[j]) * y[j] - sp.Float(x0[j]) * eta[j] for j in range(n))
    return SymbolDescriptor(sp.sympify(expr), n, 1.0, 1.0, 0.0, f"l_{tuple(np.round(X, 6))}")


def exponential(X, n):
    """``e_X = exp(-i l_X)``, unimodular, order 0."""
    return SymbolDescriptor(sp.exp(-sp.I * linear(X, n).expr), n, 0.0, 0.0, 0.0,
                            f"e_{tuple(np.round(np.ravel(X), 6))}")


_TOKEN = re.compile(r"\s*(xi_\d+|x_\d+|exp|sin|cos|sqrt|tanh|erf|pi|I|\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+|\*\*|[-+*/^(),])")


def expression(text, n):
    """Parse a symbol expression.

    The grammar allows ``x_j``, ``xi_j`` (1-based), numeric constants,
    ``pi``, ``I``, the functions ``exp, sin, cos, sqrt, tanh, erf``,
    ``+ - * /`` and powers (``**`` or ``^``).
    """
    pos, text = 0, text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"unexpected input at {text[pos:pos + 12]!r}")
        tok = m.group(1)
        if tok.startswith("x"):
            j = int(tok.split("_")[1])
            if not 1 <= j <= n:
                raise DimensionMismatch(f"{tok} exceeds dimension {n}")
        pos = m.end()
    local = {f"x_{j + 1}": s for j, s in enumerate(xsyms(n))}
    local.update({f"xi_{j + 1}": s for j, s in enumerate(xisyms(n))})
    local.update(exp=sp.exp, sin=sp.sin, cos=sp.cos, sqrt=sp.sqrt, tanh=sp.tanh, erf=sp.erf, pi=sp.pi, I=sp.I)
    glob = {"Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational, "Symbol": sp.Symbol}
    from sympy.parsing.sympy_parser import parse_expr, standard_transformations
    from tokenize import TokenError

    try:
        expr = parse_expr(text.replace("^", "**"), local_dict=local, global_dict=glob,
                          transformations=standard_transformations, evaluate=True)
    except (SyntaxError, TypeError, sp.SympifyError, TokenError) as exc:
        raise ValueError(f"cannot parse {text!r}: {exc}") from None
    return SymbolDescriptor(sp.sympify(expr), n, label=text)


# ---------------------------------------------------------------------------
# plateau windows
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Plateau:
    """Erf plateau ``0.5*(erf((t+R)/s) - erf((t-R)/s))`` along selected axes.

    The window equals 1 up to ``erfc(margin)`` on ``|t| <= core`` and
    vanishes to the same order at the grid edges.  Its Fourier transform
    decays like a Gaussian, which keeps the quantized kernels short-ranged.
    The product of the two widths ``sx*sk`` (in units of the reduced Planck
    constant) controls how fast the nonlocal part of a composition of
    windowed symbols dies off inside the core; the defaults balance that
    against the size of the core at ``N = 64``.
    """

    grid: SpatialGrid
    x_frac: float = 0.06
    xi_frac: float = 0.12
    margin: float = 4.0

    @property
    def sx(self):
        return self.x_frac * self.grid.L

    @property
    def sk(self):
        return self.xi_frac * self.grid.xi_max

    @property
    def rx(self):
        return self.grid.L / 2 - self.margin * self.sx

    @property
    def rk(self):
        return self.grid.xi_max - self.margin * self.sk

    @property
    def x_core(self):
        return self.rx - self.margin * self.sx

    @property
    def xi_core(self):
        return self.rk - self.margin * self.sk

    def descriptor(self, x=True, xi=True):
        n = self.grid.n
        expr = sp.Integer(1)
        half = sp.Rational(1, 2)

        def win(t, R, s):
            R, s = sp.Float(R), sp.Float(s)
            return half * (sp.erf((t + R) / s) - sp.erf((t - R) / s))

        if x:
            for s in xsyms(n):
                expr *= win(s, self.rx, self.sx)
        if xi:
            for s in xisyms(n):
                expr *= win(s, self.rk, self.sk)
        return SymbolDescriptor(expr, n, 0.0, 1.0, 0.0, "plateau")

    def core_mask(self, x_fraction=1.0, xi_fraction=1.0):
        """Boolean mask of phase-space grid points inside the flat core."""
        n = self.grid.n
        mask = np.ones(self.grid.field_shape, dtype=bool)
        for i, c in enumerate(self.grid.mesh()):
            lim = (self.x_core * x_fraction) if i < n else (self.xi_core * xi_fraction)
            mask &= np.abs(c) <= lim
        return mask


# ---------------------------------------------------------------------------
# sampled fields
# ---------------------------------------------------------------------------
@dataclass
class SymbolField:
    """Complex symbol sampled on the phase-space grid.

    ``values`` has shape ``(N,)*2n``; ``order``/``rho``/``delta`` are advisory
    and ``descriptor`` (when known) enables exact derivatives.
    """

    grid: SpatialGrid
    values: np.ndarray
    order: float | None = None
    rho: float | None = None
    delta: float | None = None
    descriptor: SymbolDescriptor | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.field_shape:
            raise GridMismatch(f"values shape {self.values.shape} != {self.grid.field_shape}")

    def _other(self, other):
        if isinstance(other, SymbolField):
            self.grid.check_same(other.grid)
            return other.values, other.descriptor
        return other, (other if np.isscalar(other) else None)

    def __add__(self, other):
        v, d = self._other(other)
        desc = self.descriptor + d if (self.descriptor is not None and d is not None) else None
        return SymbolField(self.grid, self.values + v, descriptor=desc)

    __radd__ = __add__

    def __sub__(self, other):
        v, d = self._other(other)
        desc = self.descriptor - d if (self.descriptor is not None and d is not None) else None
        return SymbolField(self.grid, self.values - v, descriptor=desc)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        desc = -self.descriptor if self.descriptor is not None else None
        return SymbolField(self.grid, -self.values, self.order, self.rho, self.delta, desc)

    def __mul__(self, other):
        """Pointwise product (not the magnetic composition)."""
        v, d = self._other(other)
        desc = self.descriptor * d if (self.descriptor is not None and d is not None) else None
        return SymbolField(self.grid, self.values * v, descriptor=desc)

    __rmul__ = __mul__

    def conj(self):
        desc = self.descriptor.conj() if self.descriptor is not None else None
        return SymbolField(self.grid, self.values.conj(), self.order, self.rho, self.delta, desc)

    def max_abs(self, mask=None):
        v = self.values if mask is None else self.values[mask]
        return float(np.max(np.abs(v)))

    def copy(self):
        return SymbolField(self.grid, self.values.copy(), self.order, self.rho, self.delta, self.descriptor)


def constant_field(grid, c=1.0):
    return SymbolField(grid, np.full(grid.field_shape, c, dtype=complex), 0.0, 1.0, 0.0, constant(c, grid.n))


def sample_symbol(d, g):
    """Evaluate a descriptor on the phase-space grid of ``g``."""
    if d.dim != g.n:
        raise DimensionMismatch(f"descriptor dim {d.dim} != grid dim {g.n}")
    vals = np.broadcast_to(d(*g.mesh()), g.field_shape).astype(complex)
    if not np.all(np.isfinite(vals)):
        raise EvaluationOverflow(f"non-finite values sampling {d}")
    return SymbolField(g, vals, d.order, d.rho, d.delta, d)


def derivative(f, a, alpha):
    """Spectral derivative ``d_x^a d_xi^alpha`` of a sampled field.

    Both directions are treated as periodic: along ``x`` with period ``L``,
    along ``xi`` with period ``2*xi_max`` (conjugate variable = kernel
    displacement ``z`` on the spatial grid).  Accurate for symbols whose
    quantized kernels are short-ranged; for exact derivatives use
    :meth:`SymbolDescriptor.diff`.
    """
    g = f.grid
    n, N = g.n, g.N
    p = np.fft.fftfreq(N, 1.0 / N)
    vals = f.values
    for axis, order in enumerate(tuple(a) + tuple(alpha)):
        if not order:
            continue
        scale = 2 * np.pi / g.L if axis < n else g.h
        mult = (1j * scale * p) ** order
        if order % 2:
            mult[N // 2] = 0.0
        shape = [1] * (2 * n)
        shape[axis] = N
        vals = np.fft.ifft(np.fft.fft(vals, axis=axis) * mult.reshape(shape), axis=axis)
    return SymbolField(g, vals)


def exact_or_spectral_derivative(f, a, alpha):
    """Use the descriptor when present, otherwise spectral differentiation."""
    if f.descriptor is not None:
        return sample_symbol(f.descriptor.diff(a, alpha), f.grid)
    return derivative(f, a, alpha)


_FD4 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def _fd4(vals, axis, step):
    out = np.zeros_like(vals)
    for c, s in zip(_FD4, (2, 1, 0, -1, -2)):
        if c:
            out += c * np.roll(vals, s, axis=axis)
    return out / step


def seminorm(f, m, rho, delta, a, alpha, max_order=4):
    """Grid estimate of ``sup <xi>^(-m + rho|alpha| - delta|a|) |d_x^a d_xi^alpha f|``.

    Derivatives use fourth-order periodic central differences, so the value
    is an estimate from below of the true supremum.
    """
    g = f.grid
    a, alpha = tuple(int(v) for v in a), tuple(int(v) for v in alpha)
    if len(a) != g.n or len(alpha) != g.n:
        raise DimensionMismatch("multi-index length must equal dim")
    total = sum(a) + sum(alpha)
    if total > max_order:
        raise ValueError(f"derivative order {total} exceeds {max_order}")
    if g.N < 2 * total + 2:
        raise GridTooCoarse(f"N={g.N} too small for derivative order {total}")
    vals = f.values
    dk = 2 * np.pi / g.L
    for axis, order in enumerate(a + alpha):
        for _ in range(order):
            vals = _fd4(vals, axis, g.h if axis < g.n else dk)
    xi2 = sum(c**2 for c in g.mesh()[g.n:])
    w = (1 + xi2) ** ((-m + rho * sum(alpha) - delta * sum(a)) / 2)
    return float(np.max(np.abs(w * vals)))


@dataclass(frozen=True)
class EllipticityMargin:
    R: float
    C: float


@dataclass(frozen=True)
class Failure:
    reason: str

    def __bool__(self):
        return False


def ellipticity_margin(f, m, radii=None):
    """Best ``(R, C)`` with ``|f| >= C <xi>^m`` at all grid points with ``|xi| >= R``.

    Candidate radii are the distinct dual-grid norms up to ``xi_max/2`` (the
    trusted, alias-free part of the dual grid).
    """
    if not m > 0:
        raise ValueError("m must be positive")
    g = f.grid
    xi2 = sum(c**2 for c in g.mesh()[g.n:])
    xin = np.broadcast_to(np.sqrt(xi2), g.field_shape)
    ratio = np.abs(f.values) / (1 + xin**2) ** (m / 2)
    if radii is None:
        norms = np.unique(np.round(np.sqrt(sum(c**2 for c in np.meshgrid(*([g.k] * g.n)))), 12))
        radii = norms[norms <= g.xi_max / 2]
    best = None
    for R in radii:
        sel = xin >= R - 1e-12
        if not sel.any():
            continue
        C = float(ratio[sel].min())
        if C > 0 and (best is None or C > best.C):
            best = EllipticityMargin(float(R), C)
    if best is None:
        return Failure("no radius with a positive ellipticity constant")
    return best


def ellipticity_constant(f, m, R):
    """``min |f|/<xi>^m`` over grid points with ``|xi| >= R``."""
    g = f.grid
    xi2 = sum(c**2 for c in g.mesh()[g.n:])
    xin = np.broadcast_to(np.sqrt(xi2), g.field_shape)
    sel = xin >= R - 1e-12
    return float((np.abs(f.values) / (1 + xin**2) ** (m / 2))[sel].min())


def multi_indices(n, total):
    """All multi-indices of length ``n`` with ``|a| = total``."""
    for c in product(range(total + 1), repeat=n):
        if sum(c) == total:
            yield c


def mfact(a):
    out = 1
    for v in a:
        out *= factorial(v)
    return out
