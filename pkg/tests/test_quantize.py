import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from magweyl.errors import GridMismatch, InconsistentPair, OffLattice
from magweyl.field import (GaugeFunction, MagneticField, cocycle, gauge_transform, landau_gauge, symmetric_gauge,
                           uniform_2d, zero_potential)
from magweyl.quantize import (OperatorMatrix, WaveFunction, covariance_residuals, dequantize,
                              gauge_covariance_residual, magnetic_translation, momentum_operator, operator_norm,
                              pi_operator, position_operator, quantize, sobolev_norm, weyl_system)
from magweyl.symbols import Plateau, SpatialGrid, constant, expression, kinetic, p_m, sample_symbol, xsyms

G1 = SpatialGrid(1, 32, 8.0)
G2 = SpatialGrid(2, 16, 8.0)
A1 = symmetric_gauge(1.0)


def _rand_field(g, seed):
    rng = np.random.default_rng(seed)
    return sample_symbol(constant(0, g.n), g) + (rng.normal(size=g.field_shape) + 1j * rng.normal(size=g.field_shape))


def test_constant_and_multiplication():
    assert np.max(np.abs(quantize(sample_symbol(constant(1, 2), G2), A1).entries - np.eye(256))) <= 1e-12
    v = sample_symbol(expression("exp(-x_1^2)*cos(x_2)", 2), G2)
    T = quantize(v, A1).entries
    ref = np.exp(-G2.points[:, 0] ** 2) * np.cos(G2.points[:, 1])
    assert np.max(np.abs(T - np.diag(ref))) <= 1e-12


def test_xi_is_fourier_multiplier():
    T = quantize(sample_symbol(expression("xi_1", 1), G1)).entries
    F = np.fft.fft(np.eye(G1.N), axis=0)
    k = 2 * np.pi * np.fft.fftfreq(G1.N, G1.h)
    oracle = np.linalg.solve(F, np.diag(k) @ F)
    assert np.max(np.abs(T - oracle)) <= 1e-10
    assert np.max(np.abs(momentum_operator(G1, 0).entries - oracle)) <= 1e-10


def test_pi_operator():
    P = pi_operator(G2, A1, 1).entries
    D = momentum_operator(G2, 1).entries
    assert np.max(np.abs(P - D + np.diag(0.5 * G2.points[:, 0]))) <= 1e-14
    assert np.max(np.abs(P - P.conj().T)) <= 1e-12


@pytest.mark.parametrize("A", [None, A1])
def test_round_trips(A):
    f = _rand_field(G2, 0)
    T = quantize(f, A)
    assert np.max(np.abs(dequantize(T, A).values - f.values)) <= 1e-10
    M = OperatorMatrix(G2, np.random.default_rng(1).normal(size=(256, 256)))
    assert np.max(np.abs(quantize(dequantize(M, A), A).entries - M.entries)) <= 1e-10
    one = dequantize(OperatorMatrix(G2, np.eye(256)), A)
    assert np.max(np.abs(one.values - 1)) <= 1e-12
    p2 = sample_symbol(p_m(2, 2), G2)
    assert np.max(np.abs(dequantize(quantize(p2, A), A).values - p2.values)) <= 1e-10


def test_product_of_monomials_on_core():
    # x_1 # xi_1 = x_1 xi_1 + i/2, windowed so the product is meaningful on a periodic grid
    g = SpatialGrid(1, 128, 16.0)
    P = Plateau(g, 0.05, 0.10, 4.5)
    w = sample_symbol(P.descriptor(), g)
    x = sample_symbol(expression("x_1", 1), g) * w
    k = sample_symbol(expression("xi_1", 1), g) * w
    s = dequantize(quantize(x) @ quantize(k)).values - x.values * k.values
    core = P.core_mask()
    assert np.max(np.abs(s[core] - 0.5j)) <= 1e-8


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_adjoint_hermitian_linear(seed):
    f, g = _rand_field(G2, seed), _rand_field(G2, seed + 1)
    F = quantize(f, A1).entries
    assert np.max(np.abs(quantize(f.conj(), A1).entries - F.conj().T)) <= 1e-10
    assert quantize(f + f.conj(), A1).hermiticity() <= 1e-10
    lin = quantize(f * (2 - 1j) + g, A1).entries
    assert np.max(np.abs(lin - (2 - 1j) * F - quantize(g, A1).entries)) <= 1e-12


def test_hermiticity_recorded():
    T = quantize(sample_symbol(kinetic(2), G2), A1)
    assert T.hermiticity_residual is not None and T.hermiticity_residual <= 1e-10
    assert quantize(_rand_field(G2, 3), A1).hermiticity_residual is None


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        quantize(sample_symbol(kinetic(1), G1), A1)
    with pytest.raises(GridMismatch):
        OperatorMatrix(G2, np.eye(3))


def test_weyl_system_unitary_and_identity():
    W0 = weyl_system(np.zeros(4), A1, G2).entries
    assert np.max(np.abs(W0 - np.eye(256))) <= 1e-14
    W = weyl_system(np.array([0.3, -0.6, 1.1, 0.4]), A1, G2).entries
    assert np.max(np.abs(W @ W.conj().T - np.eye(256))) <= 1e-8
    u = WaveFunction(G2, np.random.default_rng(2).normal(size=256))
    assert (OperatorMatrix(G2, W) @ u).norm() == pytest.approx(u.norm(), rel=1e-8)


@pytest.mark.parametrize("n,N,L,A", [(1, 64, 16.0, None), (2, 32, 12.0, None), (2, 32, 12.0, A1)])
def test_weyl_group_law_phase(n, N, L, A):
    # W(X)W(Y) = e^{i sigma(X,Y)/2} omega(x, y) W(X+Y) on packets far from the box edge
    g = SpatialGrid(n, N, L)
    rng = np.random.default_rng(n)
    X, Y = rng.uniform(-0.5, 0.5, 2 * n), rng.uniform(-0.5, 0.5, 2 * n)
    W = lambda Z: weyl_system(Z, A, g).entries  # noqa: E731
    u = np.exp(-(g.points**2).sum(axis=1) / 2)
    lhs, rhs = W(X) @ (W(Y) @ u), W(X + Y) @ u
    c = np.vdot(rhs, lhs) / np.vdot(rhs, rhs)
    sigma = Y[:n] @ X[n:] - X[:n] @ Y[n:]
    expected = np.exp(0.5j * sigma)
    if A is not None:
        expected *= cocycle(uniform_2d(1.0), np.zeros(2), X[:2], Y[:2])
    assert abs(c - expected) <= 1e-6
    assert np.linalg.norm(lhs - c * rhs) <= 1e-6 * np.linalg.norm(u)


def test_magnetic_translation():
    assert np.max(np.abs(magnetic_translation(np.zeros(2), A1, G2).entries - np.eye(256))) == 0
    T = magnetic_translation(np.array([G2.h, 0.0]), None, G2).entries
    u = np.arange(256.0)
    ref = u.reshape(16, 16)[np.r_[1:16, 0]].ravel()
    assert np.array_equal(T @ u, ref)
    Tm = magnetic_translation(np.array([3 * G2.h, -2 * G2.h]), A1, G2).entries
    assert np.max(np.abs(Tm @ Tm.conj().T - np.eye(256))) <= 1e-12
    with pytest.raises(OffLattice):
        magnetic_translation(np.array([0.3 * G2.h, 0.0]), A1, G2)


def test_covariance():
    rep0 = covariance_residuals(zero_potential(2), MagneticField(2, "constant", {}), G2, n_pairs=20)
    assert rep0.composition <= 1e-12 and rep0.intertwining <= 1e-12
    rep = covariance_residuals(A1, uniform_2d(1.0), G2, n_pairs=50)
    assert rep.composition <= 1e-8 and rep.intertwining <= 1e-10
    assert rep.rows_checked > 0
    with pytest.raises(InconsistentPair):
        covariance_residuals(A1, uniform_2d(2.0), G2)


def test_gauge_covariance():
    y1, y2 = xsyms(2)
    p2 = sample_symbol(p_m(2, 2), G2)
    assert gauge_covariance_residual(p2, A1, GaugeFunction(sp.Integer(0), 2)) == 0
    assert gauge_covariance_residual(p2, A1, GaugeFunction(y1 * y2 / 2, 2)) <= 1e-8
    k = sample_symbol(expression("xi_1", 2), G2)
    phi = GaugeFunction(sp.sin(2 * sp.pi * y1 / G2.L), 2)
    assert gauge_covariance_residual(k, None, phi) <= 1e-8


def test_sobolev_norm():
    g = SpatialGrid(1, 64, 16.0)
    u = WaveFunction(g, np.exp(-g.x**2 / 2) * (1 + 0.3j * g.x))
    assert sobolev_norm(u, 0) == u.norm()
    uh = np.fft.fft(u.values)
    k = 2 * np.pi * np.fft.fftfreq(g.N, g.h)
    # Parseval on the grid: ||u|| = h^{1/2} |u|_2 = (h/N)^{1/2} |u_hat|_2
    ref = np.sqrt(g.h / g.N) * np.sqrt(np.sum(np.abs((1 + k**2) * uh) ** 2) + np.sum(np.abs(uh) ** 2))
    assert sobolev_norm(u, 2) == pytest.approx(ref, rel=1e-10)
    phi = GaugeFunction(xsyms(2)[0] * xsyms(2)[1] / 2, 2)
    w = WaveFunction(G2, np.exp(-(G2.points**2).sum(axis=1) / 2))
    lhs = sobolev_norm(w, 2, gauge_transform(A1, phi))
    rhs = sobolev_norm(WaveFunction(G2, np.exp(-1j * phi(G2.points)) * w.values), 2, A1)
    assert lhs == pytest.approx(rhs, rel=1e-8)
    with pytest.raises(ValueError):
        sobolev_norm(u, -1)


def test_norm_bound_tracks_seminorms():
    # ||Op(f)|| / max seminorm stays bounded under refinement for a bounded smooth symbol
    from magweyl.symbols import seminorm

    ratios = []
    for N in (16, 32, 64):
        g = SpatialGrid(1, N, 4 * np.pi)
        f = sample_symbol(expression("sin(x_1)*cos(xi_1/2)", 1), g) * 3.0
        semis = [seminorm(f, 0, 0, 0, a, al) for a, al in [((0,), (0,)), ((1,), (0,)), ((0,), (1,)), ((1,), (1,))]]
        ratios.append(quantize(f).norm() / max(semis))
    assert max(ratios) <= 2.0
    assert max(ratios) / min(ratios) <= 1.5


def test_binary_and_csv_io(tmp_path):
    T = quantize(_rand_field(G2, 4), landau_gauge(1.0))
    p = tmp_path / "m.mwop"
    T.to_binary(p)
    back = OperatorMatrix.from_binary(p)
    assert back.gauge_tag == T.gauge_tag and np.array_equal(back.entries, T.entries)
    raw = p.read_bytes()
    assert raw[:4] == b"MWOP"
    u = WaveFunction(G2, np.arange(256) * (1 + 1j))
    u.to_csv(tmp_path / "u.csv")
    rows = (tmp_path / "u.csv").read_text().splitlines()
    assert rows[0] == "index,re,im" and len(rows) == 257
    assert float(rows[3].split(",")[2]) == 2.0


def test_operator_norm_routes():
    rng = np.random.default_rng(7)
    M = rng.normal(size=(1100, 1100))
    H = M + M.T
    assert operator_norm(H) == pytest.approx(np.linalg.norm(H, 2), rel=1e-8)
    assert operator_norm(M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-8)
    assert operator_norm(np.zeros((1100, 1100))) == 0.0


def test_position_operator():
    Q = position_operator(G2, 1).entries
    assert np.array_equal(np.diag(Q).real, G2.points[:, 1])
