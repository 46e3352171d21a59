"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def affine_phase(pts, a0, G):
    """``exp(-i A(mid).(p_b - p_a))`` for ``A(x) = a0 + G x``."""
    pts = np.ascontiguousarray(pts, dtype=float)
    M = pts.shape[0]
    out = np.empty((M, M), dtype=complex)
    step = max(1, 2**22 // max(M, 1))
    for s in range(0, M, step):
        P = pts[s:s + step, None, :]
        mid = 0.5 * (P + pts[None, :, :])
        A = a0 + mid @ G.T
        circ = np.einsum("abj,abj->ab", A, pts[None, :, :] - P)
        out[s:s + step] = np.exp(-1j * circ)
    return out


def flux_sum(ys, zs, x, B0, Bg, F, Gm):
    """``sum_{y,z} exp(-i Gamma_B(x, y, z)) F[y, z] Gm[z, y]`` for affine ``B``."""
    acc = 0.0 + 0.0j
    step = max(1, 2**20 // max(zs.shape[0], 1))
    for s in range(0, ys.shape[0], step):
        Y = ys[s:s + step, None, :]
        Z = zs[None, :, :]
        cen = x - (Y + Z) / 3.0
        Bc = B0 + np.einsum("jkl,abl->abjk", Bg, cen)
        gam = 2.0 * np.einsum("abj,abjk,abk->ab", np.broadcast_to(Y, cen.shape), Bc, np.broadcast_to(Z, cen.shape))
        acc += np.sum(np.exp(-1j * gam) * F[s:s + step] * Gm[:, s:s + step].T)
    return acc
