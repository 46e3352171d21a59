"""Exact bijection between sampled symbols and grid kernels.

A matrix entry ``(a, b)`` is addressed by its displacement ``d = a - b``
(mod N) and midpoint ``s = b + d/2``.  For even ``d`` the midpoint is a grid
node and the entry reads the inverse DFT (in xi) of the symbol there.  For
odd ``d`` it sits half a step off the grid and reads the same data shifted by
half a step with a real trigonometric interpolant (the Nyquist multiplier is
set to 1 so that real symbols stay real and Hermitian kernels stay
Hermitian).  The Nyquist displacement ``d = N/2`` is shared by two midpoints;
the pair is split with the weights ``alpha = (1+i)/2`` and ``conj(alpha)``,
which keeps the map invertible (2x2 determinant ``i``) and
Hermiticity-preserving.  In n dimensions the map is the tensor product over
coordinate pairs.
"""
from functools import lru_cache

import numpy as np

ALPHA = (1 + 1j) / 2


@lru_cache(maxsize=16)
def _maps(N):
    a, b = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    diff = (a - b) % N
    d = np.where(diff >= N // 2, diff - N, diff)
    nyq = diff == N // 2
    j = np.where(d % 2 == 0, (b + d // 2) % N, (b + (d - 1) // 2) % N)
    i0 = j * N + diff
    i1 = np.zeros_like(i0)
    c0 = np.ones((N, N), complex)
    c1 = np.zeros((N, N), complex)
    jp = (b + N // 4) % N
    jm = (b + 3 * N // 4) % N
    i0 = np.where(nyq, jp * N + N // 2, i0)
    i1 = np.where(nyq, jm * N + N // 2, i1)
    c0[nyq] = ALPHA
    c1[nyq] = np.conj(ALPHA)

    jj, dd = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    dr = np.where(dd >= N // 2, dd - N, dd)
    bb = np.where(dr % 2 == 0, jj - dr // 2, jj - (dr - 1) // 2) % N
    aa = (bb + dr) % N
    k0 = aa * N + bb
    k1 = np.zeros_like(k0)
    e0 = np.ones((N, N), complex)
    e1 = np.zeros((N, N), complex)
    ny = dd == N // 2
    b1 = (jj - N // 4) % N
    b2 = (jj + N // 4) % N
    k0 = np.where(ny, ((b1 + N // 2) % N) * N + b1, k0)
    k1 = np.where(ny, ((b2 + N // 2) % N) * N + b2, k1)
    e0[ny] = ALPHA / 1j
    e1[ny] = -np.conj(ALPHA) / 1j
    return (i0.ravel(), i1.ravel(), c0.ravel(), c1.ravel()), (k0.ravel(), k1.ravel(), e0.ravel(), e1.ravel())


@lru_cache(maxsize=16)
def _halfshift(N, sign):
    p = np.fft.fftfreq(N, 1.0 / N)
    mu = np.exp(1j * np.pi * p / N * sign)
    mu[p == -N // 2] = 1.0
    return mu


def _apply_pair(arr, ax0, ax1, idx0, idx1, c0, c1):
    N = arr.shape[ax0]
    x = np.moveaxis(arr, (ax0, ax1), (0, 1))
    rest = x.shape[2:]
    x = x.reshape(N * N, -1)
    out = c0[:, None] * x[idx0] + c1[:, None] * x[idx1]
    return np.moveaxis(out.reshape((N, N) + rest), (0, 1), (ax0, ax1))


def _bshape(n, axis, N):
    s = [1] * (2 * n)
    s[axis] = N
    return s


def _shift_odd(G, n, N, sign):
    mu = _halfshift(N, sign)
    odd = np.arange(N) % 2 == 1
    for i in range(n):
        sh = np.fft.ifft(np.fft.fft(G, axis=i) * mu.reshape(_bshape(n, i, N)), axis=i)
        G = np.where(odd.reshape(_bshape(n, n + i, N)), sh, G)
    return G


def encode(f, n, N):
    """Symbol samples ``f[x_1..x_n, xi_1..xi_n]`` -> phase-free kernel ``(N**n, N**n)``."""
    fwd, _ = _maps(N)
    ax = tuple(range(n, 2 * n))
    G = np.fft.ifftn(np.fft.ifftshift(np.asarray(f, dtype=complex), axes=ax), axes=ax)
    G = _shift_odd(G, n, N, +1)
    for i in range(n):
        G = _apply_pair(G, i, n + i, *fwd)
    return G.reshape(N**n, N**n)


def decode(K, n, N):
    """Inverse of :func:`encode`."""
    _, bwd = _maps(N)
    G = np.asarray(K, dtype=complex).reshape((N,) * (2 * n))
    for i in range(n):
        G = _apply_pair(G, i, n + i, *bwd)
    G = _shift_odd(G, n, N, -1)
    ax = tuple(range(n, 2 * n))
    return np.fft.fftshift(np.fft.fftn(G, axes=ax), axes=ax)
