import os
import subprocess
import sys

import numpy as np
import pytest

from magweyl import _kernels_py as pyk
from magweyl._backend import BACKEND, kernels
from magweyl.field import MagneticField, flux_triangle, symmetric_gauge, circulation
from magweyl.symbols import SpatialGrid, xsyms


def _affine_inputs(seed, M=40, n=2):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3, 3, (M, n))
    return pts, rng.normal(size=n), rng.normal(size=(n, n))


def test_affine_phase_matches_circulation():
    g = SpatialGrid(2, 8, 4.0)
    A = symmetric_gauge(0.7)
    a0, G = A.affine_coefficients
    P = pyk.affine_phase(g.points, a0, G)
    ref = np.exp(-1j * circulation(A, g.points[:, None, :], g.points[None, :, :]))
    assert np.max(np.abs(P - ref)) <= 1e-12


@pytest.mark.skipif(BACKEND != "cython", reason="compiled extension not built")
def test_compiled_matches_fallback():
    from magweyl import _kernels as ck

    pts, a0, G = _affine_inputs(0)
    assert np.max(np.abs(ck.affine_phase(pts, a0, G) - pyk.affine_phase(pts, a0, G))) <= 1e-13
    rng = np.random.default_rng(1)
    n, M = 2, 30
    ys, zs = rng.uniform(-1, 1, (M, n)), rng.uniform(-1, 1, (M, n))
    x = rng.uniform(-1, 1, n)
    B0 = np.array([[0.0, 1.2], [-1.2, 0.0]])
    Bg = np.zeros((n, n, n))
    Bg[0, 1] = [0.3, -0.1]
    Bg[1, 0] = -Bg[0, 1]
    F = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    Gm = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    a = ck.flux_sum(ys, zs, x, B0, Bg, F, Gm)
    b = pyk.flux_sum(ys, zs, x, B0, Bg, F, Gm)
    assert abs(a - b) <= 1e-12 * np.sum(np.abs(F) * np.abs(Gm.T))


def test_flux_sum_matches_flux_triangle():
    y1, y2 = xsyms(2)
    B = MagneticField(2, "affine", {(1, 2): 1.2 + 0.3 * y1 - 0.1 * y2})
    rng = np.random.default_rng(2)
    ys, zs, x = rng.uniform(-1, 1, (5, 2)), rng.uniform(-1, 1, (5, 2)), rng.uniform(-1, 1, 2)
    F = np.ones((5, 5), complex)
    B0 = np.array([[0.0, 1.2], [-1.2, 0.0]])
    Bg = np.zeros((2, 2, 2))
    Bg[0, 1] = [0.3, -0.1]
    Bg[1, 0] = -Bg[0, 1]
    got = kernels.flux_sum(ys, zs, x, B0, Bg, F, F)
    Y, Z = ys[:, None, :], zs[None, :, :]
    gam = flux_triangle(B, x - Y - Z, x + Y - Z, x - Y + Z)
    assert abs(got - np.sum(np.exp(-1j * gam))) <= 1e-12


def test_fallback_selected_by_env():
    env = dict(os.environ, MAGWEYL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import magweyl; print(magweyl.BACKEND)"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
