"""Invariant suite run by ``verify``: one row per identity, all modules.

Each check returns the worst residual it saw; a row passes when the
residual is at most its tolerance.  Test symbols are drawn from the seed,
so a fixed seed gives identical rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .field import (GaugeFunction, circulation, cocycle_residual, flux_triangle, gauge_transform, validate_field,
                    zero_potential)
from .funcalc import fractional_power, resolvent_symbol, sharp_inverse
from .moyal import DerivationSpec, _ad_matrix, compose_operator_route, expansion
from .quantize import (covariance_residuals, dequantize, gauge_covariance_residual, operator_norm, quantize,
                       weyl_system)
from .spectral import eigensolve
from .symbols import SymbolDescriptor, kinetic, p_ma, sample_symbol, seminorm, p_m, xisyms, xsyms


@dataclass(frozen=True)
class CheckResult:
    module: str
    name: str
    value: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)


def _random_symbol(n, rng, width=None):
    """Gaussian envelope times a random polynomial of degree <= 2 in ``(x, xi)``."""
    v = list(xsyms(n)) + list(xisyms(n))
    c = rng.normal(size=(2 * n,)) + 1j * rng.normal(size=(2 * n,))
    q = rng.normal(size=(2 * n,))
    poly = sp.Float(rng.normal()) + sum((sp.Float(a.real) + sp.I * sp.Float(a.imag)) * s for a, s in zip(c, v))
    poly += sum(sp.Float(b) * s * t for b, s, t in zip(q, v, v[1:] + v[:1]))
    w = width or 1.0
    env = sp.exp(-sum(s**2 for s in v) / (2 * w**2))
    return SymbolDescriptor(sp.expand(poly) * env, n, label="random")


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def _opnorm_rel(A, B):
    return operator_norm(A - B) / max(1.0, operator_norm(B))


class Suite:
    """Invariants of all modules on one grid, field and gauge."""

    def __init__(self, grid, B=None, A=None, seed=42):
        self.grid, self.B, self.seed = grid, B, seed
        self.A = A if A is not None else zero_potential(grid.n)
        n = grid.n
        rng = np.random.default_rng(seed)
        self.f = sample_symbol(_random_symbol(n, rng), grid)
        self.g = sample_symbol(_random_symbol(n, rng), grid)
        self.h = sample_symbol(_random_symbol(n, rng), grid)
        self.rng = rng
        # gauge change by a polynomial phase (exact along segments)
        xs = xsyms(n)
        self.phi = GaugeFunction(sp.Rational(1, 3) * xs[0] * xs[-1] + sp.Rational(1, 5) * xs[0] ** 2, n)

    # -- field ---------------------------------------------------------------
    def field_checks(self):
        out = []
        if self.B is None:
            return out
        rep = validate_field(self.B, seed=self.seed)
        out.append(CheckResult("field", "antisymmetry", rep.antisymmetry_residual, 1e-10))
        out.append(CheckResult("field", "closedness", rep.closedness_residual, 1e-10))
        rng = np.random.default_rng(self.seed)
        s = self.grid.L / 8
        pts = rng.uniform(-s, s, size=(50, self.grid.n))
        out.append(CheckResult("field", "curl(A) = B", self.A.curl_residual(self.B, pts), 1e-6))
        q, x, y, w = (rng.uniform(-s, s, size=(1000, self.grid.n)) for _ in range(4))
        tol = 1e-10 if self.B.is_affine else 1e-8
        out.append(CheckResult("field", "cocycle identity", float(np.max(cocycle_residual(self.B, q, x, y, w))), tol))
        a, b, c = (rng.uniform(-s, s, size=(50, self.grid.n)) for _ in range(3))
        loop = circulation(self.A, a, b) + circulation(self.A, b, c) + circulation(self.A, c, a)
        out.append(CheckResult("field", "Stokes (circulation = flux)",
                               float(np.max(np.abs(loop - flux_triangle(self.B, a, b, c)))), 1e-8))
        A2 = gauge_transform(self.A, self.phi)
        loop2 = circulation(A2, a, b) + circulation(A2, b, c) + circulation(A2, c, a)
        out.append(CheckResult("field", "gauge invariance of flux", float(np.max(np.abs(loop2 - loop))), 1e-10))
        return out

    # -- symbols -------------------------------------------------------------
    def symbol_checks(self):
        g, n = self.grid, self.grid.n
        a, b = 0.7 - 0.2j, -1.3
        lhs = sample_symbol(self.f.descriptor * a + self.g.descriptor * b, g).values
        rhs = a * self.f.values + b * self.g.values
        out = [CheckResult("symbols", "sampling is linear", _rel(lhs, rhs), 1e-12)]
        p = sample_symbol(p_m(2, n), g)
        out.append(CheckResult("symbols", "seminorm of <xi>^2 in S^2 is 1",
                               abs(seminorm(p, 2, 1, 0, (0,) * n, (0,) * n) - 1.0), 1e-12))
        return out

    # -- quantize ------------------------------------------------------------
    def quantize_checks(self):
        A = self.A
        F = quantize(self.f, A).entries
        out = [CheckResult("quantize", "dequantize o quantize = id", _rel(dequantize(quantize(self.f, A), A).values,
                                                                         self.f.values), 1e-12)]
        out.append(CheckResult("quantize", "Op(conj f) = Op(f)^*",
                               _rel(quantize(self.f.conj(), A).entries, F.conj().T), 1e-12))
        real = self.f + self.f.conj()
        out.append(CheckResult("quantize", "real symbol -> Hermitian", quantize(real, A).hermiticity(), 1e-12))
        lin = quantize(self.f * 2.0 + self.g, A).entries
        out.append(CheckResult("quantize", "quantization is linear",
                               _rel(lin, 2.0 * F + quantize(self.g, A).entries), 1e-12))
        X = self.rng.uniform(-1, 1, size=2 * self.grid.n)
        W = weyl_system(X, A, self.grid).entries
        out.append(CheckResult("quantize", "W^A(X) unitary", _rel(W @ W.conj().T, np.eye(W.shape[0])), 1e-10))
        if self.B is not None:
            cov = covariance_residuals(A, self.B, self.grid, n_pairs=10, seed=self.seed)
            out.append(CheckResult("quantize", "T(x)T(y) = omega T(x+y)", cov.composition, 1e-10))
            out.append(CheckResult("quantize", "T(x) r(phi) T(x)^* = r(phi(.+x))", cov.intertwining, 1e-10))
        res = gauge_covariance_residual(self.f, A, self.phi) / max(1.0, operator_norm(F))
        out.append(CheckResult("quantize", "gauge covariance", res, 1e-8))
        return out

    # -- moyal ---------------------------------------------------------------
    def moyal_checks(self):
        A, g = self.A, self.grid
        f, gg, h = self.f, self.g, self.h
        one = sample_symbol(SymbolDescriptor(sp.Integer(1), g.n), g)
        out = []
        unit = max(_rel(compose_operator_route(f, one, A).values, f.values),
                   _rel(compose_operator_route(one, f, A).values, f.values))
        out.append(CheckResult("moyal", "unit", unit, 1e-10))
        fg = compose_operator_route(f, gg, A)
        left = compose_operator_route(fg, h, A)
        right = compose_operator_route(f, compose_operator_route(gg, h, A), A)
        out.append(CheckResult("moyal", "associativity", _rel(left.values, right.values), 1e-10))
        inv = compose_operator_route(gg.conj(), f.conj(), A)
        out.append(CheckResult("moyal", "involution", _rel(fg.conj().values, inv.values), 1e-10))
        spec = DerivationSpec(X=tuple(self.rng.uniform(-1, 1, size=2 * g.n)))
        F, G = quantize(f, A).entries, quantize(gg, A).entries
        lhs = _ad_matrix(spec, F @ G, g, A)
        rhs = _ad_matrix(spec, F, g, A) @ G + F @ _ad_matrix(spec, G, g, A)
        out.append(CheckResult("moyal", "derivation rule", _opnorm_rel(lhs, rhs), 1e-8))
        A2 = gauge_transform(A, self.phi)
        out.append(CheckResult("moyal", "gauge independence of #^B",
                               _rel(compose_operator_route(f, gg, A2).values, fg.values), 1e-8))
        if self.B is not None and self.B.is_constant:
            # the development terminates for polynomial symbols of degree <= 1 in xi
            xs, ks = xsyms(g.n), xisyms(g.n)
            lin = [sample_symbol(SymbolDescriptor(ks[j], g.n), g) for j in range(g.n)]
            if g.n >= 2:
                terms = expansion(lin[0], lin[1], self.B, 3)
                terms2 = expansion(lin[1], lin[0], self.B, 3)
                comm = sum(t.value.values for t in terms) - sum(t.value.values for t in terms2)
                b12 = float(self.B(np.zeros((1, g.n)))[0, 0, 1])
                out.append(CheckResult("moyal", "xi_1 # xi_2 - xi_2 # xi_1 = i B_12",
                                       float(np.max(np.abs(comm - 1j * b12))), 1e-12))
        xs, ks = xsyms(g.n), xisyms(g.n)
        x1 = sample_symbol(SymbolDescriptor(xs[0], g.n), g)
        k1 = sample_symbol(SymbolDescriptor(ks[0], g.n), g)
        B = self.B if self.B is not None else zero_potential(g.n).source
        terms = expansion(x1, k1, B, 3)
        val = sum(t.value.values for t in terms) - x1.values * k1.values
        out.append(CheckResult("moyal", "x_1 # xi_1 = x_1 xi_1 + i/2 (expansion)",
                               float(np.max(np.abs(val - 0.5j))), 1e-12))
        return out

    # -- funcalc -------------------------------------------------------------
    def funcalc_checks(self):
        A, g = self.A, self.grid
        p = sample_symbol(p_ma(2, 1, g.n), g)
        inv = sharp_inverse(p, A)
        P, Pi = quantize(p, A).entries, quantize(inv, A).entries
        I = np.eye(P.shape[0])
        out = [CheckResult("funcalc", "p_{2,a} # inverse = 1", operator_norm(P @ Pi - I), 1e-8)]
        k = sample_symbol(kinetic(g.n), g)
        z1, z2 = -1.0 + 0.5j, 2.0 + 1.0j
        R1 = quantize(resolvent_symbol(k, z1, A), A).entries
        R2 = quantize(resolvent_symbol(k, z2, A), A).entries
        out.append(CheckResult("funcalc", "resolvent identity",
                               _opnorm_rel(R1 - R2, (z1 - z2) * R1 @ R2), 1e-8))
        t0 = 1.0
        half = quantize(fractional_power(k, 0.5, t0, A), A).entries
        third = quantize(fractional_power(k, 1 / 3, t0, A), A).entries
        two3 = quantize(fractional_power(k, 2 / 3, t0, A), A).entries
        full = quantize(fractional_power(k, 1.0, t0, A), A).entries
        err = max(_opnorm_rel(half @ half, full), _opnorm_rel(third @ two3, full))
        out.append(CheckResult("funcalc", "power law of fractional powers", err, 1e-8))
        return out

    # -- spectral ------------------------------------------------------------
    def spectral_checks(self):
        A, g = self.A, self.grid
        k = sample_symbol(kinetic(g.n), g)
        T = quantize(k, A)
        out = [CheckResult("spectral", "Op^A(|xi|^2) Hermitian", T.hermiticity(), 1e-10)]
        rep = eigensolve(T)
        rep2 = eigensolve(quantize(k, gauge_transform(A, self.phi)), vectors=False)
        out.append(CheckResult("spectral", "spectrum gauge invariant",
                               _rel(rep.eigenvalues, rep2.eigenvalues), 1e-8))
        pr = rep.localization
        out.append(CheckResult("spectral", "participation ratio in [1/M, 1]",
                               float(max(0.0, pr.max() - 1.0, 1.0 / g.size - pr.min())), 1e-12))
        free = np.sort(sample_symbol(kinetic(g.n), g).values[(0,) * g.n].real.ravel())
        ev = eigensolve(quantize(k, None), vectors=False).eigenvalues
        out.append(CheckResult("spectral", "free spectrum = range of |xi|^2 on the dual grid", _rel(ev, free), 1e-10))
        return out

    def run(self):
        return (self.field_checks() + self.symbol_checks() + self.quantize_checks() + self.moyal_checks()
                + self.funcalc_checks() + self.spectral_checks())


def run_suite(grid, B=None, A=None, seed=42):
    return Suite(grid, B, A, seed).run()


def format_table(results):
    w = max(len(f"{r.module}.{r.name}") for r in results)
    lines = [f"{'check':<{w}}  {'value':>10}  {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.module + '.' + r.name:<{w}}  {r.value:10.3e}  {r.tolerance:8.1e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


__all__ = ["CheckResult", "Suite", "run_suite", "format_table"]
