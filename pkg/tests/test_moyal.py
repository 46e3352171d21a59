import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magweyl.errors import DerivativeOrderExceeded, NonDecaying
from magweyl.field import MagneticField, symmetric_gauge, uniform_2d
from magweyl.moyal import (DerivationSpec, OmegaDerivatives, ad_B, beals_bony_seminorm, coefficient, commutator,
                           compose_integral, compose_operator_route, expansion, h2_printed, index_tuples,
                           twisted_translation)
from magweyl.symbols import Plateau, SpatialGrid, constant, expression, sample_symbol

B0_1 = MagneticField(1, "constant", {})
G1 = SpatialGrid(1, 64, 16.0)
G2 = SpatialGrid(2, 16, 8.0)
A1 = symmetric_gauge(1.0)


def _gauss(a, n=1, g=G1):
    r = "+".join(f"x_{j}**2+xi_{j}**2" for j in range(1, n + 1))
    return sample_symbol(expression(f"exp(-{a}*({r}))", n), g)


def _rand(g, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=g.field_shape) + 1j * rng.normal(size=g.field_shape)
    return sample_symbol(constant(0, g.n), g) + v


def test_unit():
    one = sample_symbol(constant(1, 2), G2)
    f = _rand(G2, 0)
    assert np.max(np.abs(compose_operator_route(one, f, A1).values - f.values)) <= 1e-10
    assert np.max(np.abs(compose_operator_route(f, one, A1).values - f.values)) <= 1e-10
    assert np.max(np.abs(compose_operator_route(one, one, A1).values - 1)) <= 1e-12


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**31))
def test_associativity_and_involution(seed):
    f, g, h = (_rand(G2, seed + i) for i in range(3))
    fg_h = compose_operator_route(compose_operator_route(f, g, A1), h, A1).values
    f_gh = compose_operator_route(f, compose_operator_route(g, h, A1), A1).values
    assert np.max(np.abs(fg_h - f_gh)) <= 1e-8 * np.max(np.abs(fg_h))
    lhs = compose_operator_route(f, g, A1).conj().values
    rhs = compose_operator_route(g.conj(), f.conj(), A1).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * np.max(np.abs(lhs))


def test_gaussian_closed_form_integral():
    # at B = 0: e^{-a r^2} # e^{-b r^2} = exp(-(a+b)/(1+ab) r^2) / (1+ab)
    a, b = 0.5, 0.8
    f, g = _gauss(a), _gauss(b)
    for i, k in [(32, 32), (34, 36), (28, 33)]:
        X = np.array([G1.x[i], G1.k[k]])
        ref = np.exp(-(a + b) / (1 + a * b) * (X**2).sum()) / (1 + a * b)
        assert abs(compose_integral(f, g, B0_1, X) - ref) <= 1e-10


def test_gaussian_closed_form_operator():
    a, b = 0.5, 0.8
    op = compose_operator_route(_gauss(a), _gauss(b)).values
    x, k = np.meshgrid(G1.x, G1.k, indexing="ij")
    ref = np.exp(-(a + b) / (1 + a * b) * (x**2 + k**2)) / (1 + a * b)
    assert np.max(np.abs(op - ref)) <= 1e-8


@pytest.mark.parametrize("n", [1, 2])
def test_integral_matches_operator_route(n):
    if n == 1:
        g, B, A = G1, B0_1, None
        f = sample_symbol(expression("exp(-x_1**2/2-xi_1**2/2)", 1), g)
        h = sample_symbol(expression("(x_1+xi_1)*exp(-x_1**2/3-xi_1**2/4)", 1), g)
    else:
        g, B, A = SpatialGrid(2, 32, 12.0), uniform_2d(1.0), A1
        f = sample_symbol(expression("exp(-(x_1**2+x_2**2)/2-(xi_1**2+xi_2**2)/2)", 2), g)
        h = sample_symbol(expression("(1+x_1*xi_2)*exp(-(x_1**2+x_2**2)/2-(xi_1**2+xi_2**2)/3)", 2), g)
    op = compose_operator_route(f, h, A).values
    N = g.N
    idx = np.random.default_rng(n).integers(3 * N // 8, 5 * N // 8, size=(10, 2 * n))
    pts = np.array([[g.x[i] for i in row[:n]] + [g.k[i] for i in row[n:]] for row in idx])
    vals = compose_integral(f, h, B, pts)
    ref = np.array([op[tuple(row)] for row in idx])
    assert np.max(np.abs(vals - ref)) <= 1e-5


def test_integral_unit_windowed():
    P = Plateau(G1)
    one = sample_symbol(P.descriptor(), G1)
    h = sample_symbol(expression("exp(-x_1**2/2-xi_1**2/2)*(1+x_1)", 1), G1)
    for X in [(0.0, 0.0), (0.5, G1.k[33])]:
        ref = complex(h.descriptor(np.array(X[0]), np.array(X[1])))
        assert abs(compose_integral(one, h, B0_1, np.array(X)) - ref) <= 1e-3


def test_integral_rejects_non_decaying():
    with pytest.raises(NonDecaying):
        compose_integral(sample_symbol(constant(1, 1), G1), _gauss(0.5), B0_1, np.zeros(2))


def test_coefficients():
    assert coefficient((0,), (1,), (0,), (1,)) == pytest.approx(0.25)
    assert coefficient((0,), (0,), (0,), (1,)) == pytest.approx(-0.5j)
    assert coefficient((0,), (1,), (0,), (0,)) == pytest.approx(0.5j)
    assert coefficient((1,), (0,), (0,), (1,)) == pytest.approx(0.5j)
    for a, alpha, b, beta in index_tuples(2, 3):
        assert sum(alpha) + sum(beta) == 3
        assert all(x <= y for x, y in zip(a, beta)) and all(x <= y for x, y in zip(b, alpha))


def test_expansion_low_levels():
    g = SpatialGrid(1, 32, 8.0)
    f = sample_symbol(expression("exp(-x_1**2)*xi_1", 1), g)
    h = sample_symbol(expression("x_1**2 + exp(-xi_1**2)", 1), g)
    t = expansion(f, h, B0_1, 2)
    x, k = np.broadcast_arrays(*g.mesh())
    assert np.max(np.abs(t[0].value.values - f.values * h.values)) <= 1e-13
    fx, fk = -2 * x * np.exp(-x**2) * k, np.exp(-x**2)
    hx, hk = 2 * x, -2 * k * np.exp(-k**2)
    assert np.max(np.abs(t[1].value.values - 0.5j * (fx * hk - fk * hx))) <= 1e-12


def test_expansion_monomials_at_zero_field():
    # x^2 # xi^2 = x^2 xi^2 + 2i x xi - 1/2
    g = SpatialGrid(1, 16, 4.0)
    f = sample_symbol(expression("x_1**2", 1), g)
    h = sample_symbol(expression("xi_1**2", 1), g)
    t = expansion(f, h, B0_1, 4)
    x, k = np.broadcast_arrays(*g.mesh())
    assert np.max(np.abs(t[1].value.values - 2j * x * k)) <= 1e-12
    assert np.max(np.abs(t[2].value.values + 0.5)) <= 1e-12
    assert np.max(np.abs(t[3].value.values)) == 0
    # the printed closed form doubles the diagonal weight
    assert np.max(np.abs(h2_printed(f, h, B0_1).values + 1.0)) <= 1e-12


def test_expansion_momentum_commutator():
    # xi_1 # xi_2 - xi_2 # xi_1 = i B_12 for a constant field
    g = SpatialGrid(2, 8, 4.0)
    for b in (0.5, 1.0, 2.0):
        B = uniform_2d(b)
        k1, k2 = (sample_symbol(expression(s, 2), g) for s in ("xi_1", "xi_2"))
        s12 = sum(t.value.values for t in expansion(k1, k2, B, 3))
        s21 = sum(t.value.values for t in expansion(k2, k1, B, 3))
        assert np.max(np.abs(s12 - s21 - 1j * b)) <= 1e-12
        assert np.max(np.abs(h2_printed(k1, k2, B).values - 0.5j * b)) <= 1e-12


def test_expansion_terminates_for_momentum_polynomials():
    g = SpatialGrid(2, 8, 4.0)
    f = sample_symbol(expression("xi_1**2+xi_2", 2), g)
    h = sample_symbol(expression("xi_1*xi_2", 2), g)
    t = expansion(f, h, uniform_2d(1.0), 7)
    assert all(np.max(np.abs(tt.value.values)) == 0 for tt in t[5:])
    rows = list(t[2].to_csv_rows())
    assert rows and all(r[0] == 2 for r in rows)


def test_expansion_errors():
    f = _gauss(0.5)
    with pytest.raises(DerivativeOrderExceeded):
        expansion(f, f, B0_1, 8)
    with pytest.raises(ValueError):
        expansion(f, f, B0_1, 0)


def test_expansion_converges_for_gaussians():
    a, b = 0.3, 0.2
    f, g = _gauss(a), _gauss(b)
    x, k = np.broadcast_arrays(*G1.mesh())
    ref = np.exp(-(a + b) / (1 + a * b) * (x**2 + k**2)) / (1 + a * b)
    t = expansion(f, g, B0_1, 6)
    errs = [np.max(np.abs(sum(tt.value.values for tt in t[:m]) - ref)) for m in (1, 3, 5)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 1e-3


def test_omega_grid_sampled_matches_analytic():
    from magweyl.symbols import xsyms

    g = SpatialGrid(2, 16, 8.0)
    y1, y2 = xsyms(2)
    B = MagneticField(2, "affine", {(1, 2): 0.7 + 0.3 * y1 - 0.2 * y2})
    X1, X2 = np.meshgrid(g.x, g.x, indexing="ij")
    Bs = MagneticField(2, "grid_sampled", {(1, 2): 0.7 + 0.3 * X1 - 0.2 * X2}, grid=g)
    exact, approx = OmegaDerivatives(B, g, 3), OmegaDerivatives(Bs, g, 3)
    # sampled fields are periodic, so stencils in the outer cells see the wrapped field
    inner = np.all(np.abs(g.points) < g.L / 2 - g.h, axis=1)
    for p, q in [((1, 0), (0, 1)), ((1, 1), (0, 1)), ((0, 1), (1, 1))]:
        assert np.max(np.abs(exact(p, q) - approx(p, q))[inner]) <= 2e-3


def test_ad_constant_and_poisson_bracket():
    one = sample_symbol(constant(1, 2), G2)
    assert np.max(np.abs(ad_B(DerivationSpec(X=(1.0, 0.5, -0.3, 0.2)), one, A1).values)) <= 1e-10
    # at B = 0 the derivation along X is i times the Poisson bracket with l_X
    g = SpatialGrid(1, 128, 16.0)
    P = Plateau(g, 0.05, 0.10, 4.5)
    f = sample_symbol(expression("x_1**2*xi_1+xi_1**3", 1) * P.descriptor(), g)
    x, k = np.broadcast_arrays(*g.mesh())
    fx, fk = 2 * x * k, x**2 + 3 * k**2
    for x0, k0 in [(1.0, 0.0), (0.0, 1.0), (0.5, -0.7)]:
        ad = ad_B(DerivationSpec(X=(x0, k0)), f).values
        pb = k0 * fk + x0 * fx
        assert np.max(np.abs(ad - 1j * pb)[P.core_mask()]) <= 1e-5


def test_derivation_rule():
    spec = DerivationSpec(X=(0.4, -0.2, 0.3, 0.1))
    f, g = _rand(G2, 10), _rand(G2, 11)
    lhs = ad_B(spec, compose_operator_route(f, g, A1), A1).values
    rhs = (compose_operator_route(ad_B(spec, f, A1), g, A1) + compose_operator_route(f, ad_B(spec, g, A1), A1)).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-8 * np.max(np.abs(lhs))


def test_general_derivation():
    phi = expression("x_1*x_2/3", 2)
    f = _rand(G2, 12)
    a = ad_B(DerivationSpec(kind="general", phi=phi), f, A1).values
    b = commutator(sample_symbol(phi, G2), f, A1).values
    assert np.array_equal(a, b)


def test_twisted_translation_shifts():
    f = sample_symbol(expression("exp(-x_1**2/2-xi_1**2/2)*(1+x_1*xi_1)", 1), G1)
    assert np.max(np.abs(twisted_translation((1.0, 0.3), 0.0, f).values - f.values)) <= 1e-13
    T = twisted_translation((3 * G1.h, 0.0), 1.0, f).values
    assert np.max(np.abs(T - np.roll(f.values, 3, axis=0))) <= 1e-13
    dk = 2 * np.pi / G1.L
    T = twisted_translation((0.0, 3 * dk), 1.0, f).values
    assert np.max(np.abs(T - np.roll(f.values, 3, axis=1))) <= 1e-13


def test_twisted_translation_generator():
    # (T_t - T_{-t}) / (2t) -> i ad_X f with second-order error
    f = sample_symbol(expression("exp(-x_1**2/2-xi_1**2/2)*(1+x_1*xi_1)", 1), G1)
    X = (0.5, 0.3)
    gen = 1j * ad_B(DerivationSpec(X=X), f).values
    errs = []
    for t in (0.1, 0.05):
        d = (twisted_translation(X, t, f).values - twisted_translation(X, -t, f).values) / (2 * t)
        errs.append(np.max(np.abs(d - gen)))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)


def test_beals_seminorms():
    spec = DerivationSpec(X=(1.0, 0.0))
    assert beals_bony_seminorm(sample_symbol(constant(1, 1), G1), [spec]) <= 1e-10
    smooth, step = [], []
    for N in (32, 64):
        g = SpatialGrid(1, N, 16.0)
        smooth.append(beals_bony_seminorm(_gauss(0.5, 1, g), [spec]))
        step.append(beals_bony_seminorm(sample_symbol(expression("(1+tanh(x_1/0.01))/2", 1), g), [spec, spec]))
    assert smooth[1] / smooth[0] == pytest.approx(1.0, abs=0.05)
    assert step[1] / step[0] >= 4.0
