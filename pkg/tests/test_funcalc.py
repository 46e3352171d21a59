import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from magweyl.errors import MeshTooCoarse, NotInvertible, NotPositive, SpectrumHit
from magweyl.field import symmetric_gauge
from magweyl.funcalc import (QuasiAnalyticExtension, default_t0, find_weight_shift, fractional_power,
                             hs_functional_calculus, make_s_m, resolvent_symbol, sharp_inverse, spectral_function)
from magweyl.moyal import compose_operator_route
from magweyl.quantize import quantize
from magweyl.symbols import SpatialGrid, constant, expression, kinetic, p_m, p_ma, sample_symbol

G1 = SpatialGrid(1, 64, 16.0)
G2 = SpatialGrid(2, 16, 8.0)
A1 = symmetric_gauge(1.0)
BUMP = QuasiAnalyticExtension("exp(-(t-1)**2/0.18)", (-1.5, 3.5))


def _is_one(s, tol=1e-8):
    return np.max(np.abs(s.values - 1)) <= tol


def test_sharp_inverse_constant_and_singular():
    inv = sharp_inverse(sample_symbol(constant(2, 2), G2), A1)
    assert np.max(np.abs(inv.values - 0.5)) <= 1e-12
    with pytest.raises(NotInvertible):
        sharp_inverse(sample_symbol(expression("x_1", 1), G1))


def test_sharp_inverse_weight():
    a = find_weight_shift(2, G2, A1)
    p = sample_symbol(p_ma(2, a, 2), G2)
    inv = sharp_inverse(p, A1)
    assert _is_one(compose_operator_route(p, inv, A1))
    assert _is_one(compose_operator_route(inv, p, A1))


def test_make_s_m():
    assert np.all(make_s_m(0, G2, A1).values == 1)
    s2, sm2 = make_s_m(2, G1), make_s_m(-2, G1)
    # free case: multipliers, so the inverse is the pointwise reciprocal
    assert np.max(np.abs(sm2.values - 1 / s2.values)) <= 1e-8
    assert _is_one(compose_operator_route(sm2, s2))
    for m in (1, 2):
        assert _is_one(compose_operator_route(make_s_m(m, G2, A1), make_s_m(-m, G2, A1), A1))
    assert make_s_m(-1, G2, A1).order == -1.0


def test_resolvent_multiplier_and_conjugate():
    K = sample_symbol(kinetic(1), G1)
    R = resolvent_symbol(K, 1j)
    assert np.max(np.abs(R.values - 1 / (K.values - 1j))) <= 1e-8
    K2 = sample_symbol(kinetic(2), G2)
    z = 0.7 + 0.4j
    Rz, Rc = resolvent_symbol(K2, z, A1), resolvent_symbol(K2, np.conj(z), A1)
    # (H - z)^{-1}* = (H - conj z)^{-1}, and Op(f)* = Op(conj f)
    assert np.max(np.abs(quantize(Rc, A1).entries - quantize(Rz, A1).entries.conj().T)) <= 1e-10
    assert _is_one(compose_operator_route(K2 - z, Rz, A1))


def test_resolvent_trace_landau():
    K = sample_symbol(kinetic(2), G2)
    T = quantize(K, A1).entries
    ev = sla.eigvalsh(T)
    R = quantize(resolvent_symbol(K, -1.0, A1), A1).entries
    assert np.trace(R).real == pytest.approx(np.sum(1 / (ev + 1)), rel=1e-6)


def test_resolvent_hits_spectrum():
    K = sample_symbol(kinetic(1), G1)
    with pytest.raises(SpectrumHit):
        resolvent_symbol(K, 0.0)


@settings(max_examples=5, deadline=None)
@given(st.floats(-3, -0.5), st.floats(0.1, 2), st.floats(-3, -0.5), st.floats(-2, -0.1))
def test_resolvent_identity(a1, b1, a2, b2):
    K = sample_symbol(kinetic(2), G2)
    z1, z2 = complex(a1, b1), complex(a2, b2)
    R1, R2 = resolvent_symbol(K, z1, A1), resolvent_symbol(K, z2, A1)
    rhs = compose_operator_route(R1, R2, A1).values * (z1 - z2)
    assert np.max(np.abs((R1 - R2).values - rhs)) <= 1e-8


def test_quasi_analytic_extension():
    x = np.linspace(-1.5, 3.5, 201)
    assert np.max(np.abs(BUMP.extension(x, np.zeros_like(x)) - BUMP(x))) <= 1e-12
    assert BUMP.decay_ratio(0.01) == pytest.approx(2**BUMP.order, rel=0.05)
    # closed-form d-bar against central differences of the extension
    x0, y0, h = 0.8, 0.3, 1e-5
    fd = 0.5 * ((BUMP.extension(x0 + h, y0) - BUMP.extension(x0 - h, y0)) / (2 * h)
                + 1j * (BUMP.extension(x0, y0 + h) - BUMP.extension(x0, y0 - h)) / (2 * h))
    assert abs(complex(BUMP.dbar(np.array(x0), np.array(y0))) - fd) <= 1e-6


def test_hs_zero_and_linear():
    K = sample_symbol(kinetic(1), G1)
    zero = QuasiAnalyticExtension("0", (-1.0, 1.0))
    assert np.max(np.abs(hs_functional_calculus(zero, K).values)) == 0
    other = QuasiAnalyticExtension("(t+1.5)**4*(3.5-t)**4/300", (-1.5, 3.5))
    both = QuasiAnalyticExtension(f"2*({BUMP.expr}) - ({other.expr})", (-1.5, 3.5))
    lhs = hs_functional_calculus(both, K).values
    rhs = 2 * hs_functional_calculus(BUMP, K).values - hs_functional_calculus(other, K).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-3


def test_hs_multiplier():
    K = sample_symbol(kinetic(1), G1)
    res = hs_functional_calculus(BUMP, K, full=True)
    assert np.max(np.abs(res.symbol.values - BUMP(K.values.real))) <= 1e-3
    assert res.change <= 1e-4


def test_hs_matches_spectral_oracle():
    K = sample_symbol(kinetic(2), G2)
    hs = quantize(hs_functional_calculus(BUMP, K, A1), A1).entries
    oracle = spectral_function(BUMP, K, A1)
    assert np.linalg.norm(hs - oracle, 2) <= 1e-3


def test_hs_solve_route_matches_eig_route():
    g = SpatialGrid(1, 16, 8.0)
    K = sample_symbol(kinetic(1), g)
    a = hs_functional_calculus(BUMP, K, mesh=32, max_mesh=32, method="eig").values
    b = hs_functional_calculus(BUMP, K, mesh=32, max_mesh=32, method="solve").values
    assert np.max(np.abs(a - b)) <= 1e-10


def test_hs_rejects_coarse_mesh():
    # at mesh 2 the first node sits where the cutoff already bends the d-bar profile
    with pytest.raises(MeshTooCoarse):
        hs_functional_calculus(BUMP, sample_symbol(kinetic(1), G1), mesh=2)


def test_fractional_powers():
    K = sample_symbol(kinetic(2), G2)
    t0 = default_t0(K, A1)
    assert t0 >= 1.0
    Kt = K + t0
    assert np.max(np.abs(fractional_power(K, 1, t0, A1).values - Kt.values)) <= 1e-10
    sq = compose_operator_route(Kt, Kt, A1).values
    assert np.max(np.abs(fractional_power(K, 2, t0, A1).values - sq)) <= 1e-8 * np.max(np.abs(sq))
    half = fractional_power(K, 0.5, t0, A1)
    assert np.max(np.abs(compose_operator_route(half, half, A1).values - Kt.values)) <= 1e-8
    third, two_thirds = fractional_power(K, 1 / 3, t0, A1), fractional_power(K, 2 / 3, t0, A1)
    assert np.max(np.abs(compose_operator_route(third, two_thirds, A1).values - Kt.values)) <= 1e-8
    with pytest.raises(NotPositive):
        fractional_power(K, 0.5, -100.0, A1)


def test_garding_style_weight_positive():
    g = SpatialGrid(1, 32, 8.0)
    s = sample_symbol(p_m(2, 1), g)
    assert find_weight_shift(2, g) == 1.0
    assert np.all(np.isfinite(s.values))
