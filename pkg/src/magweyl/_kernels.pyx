# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; numpy equivalents live in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()


def affine_phase(double[:, ::1] pts, double[::1] a0, double[:, ::1] G):
    """``exp(-i A(mid).(p_b - p_a))`` for ``A(x) = a0 + G x``."""
    cdef Py_ssize_t M = pts.shape[0], n = pts.shape[1]
    cdef Py_ssize_t a, b, j, l
    cdef double circ, Aj, mid
    out = np.empty((M, M), dtype=np.complex128)
    cdef double complex[:, ::1] o = out
    for a in range(M):
        for b in range(M):
            circ = 0.0
            for j in range(n):
                Aj = a0[j]
                for l in range(n):
                    mid = 0.5 * (pts[a, l] + pts[b, l])
                    Aj = Aj + G[j, l] * mid
                circ = circ + Aj * (pts[b, j] - pts[a, j])
            o[a, b] = cos(circ) - 1j * sin(circ)
    return out


def flux_sum(double[:, ::1] ys, double[:, ::1] zs, double[::1] x,
             double[:, ::1] B0, double[:, :, ::1] Bg,
             double complex[:, ::1] F, double complex[:, ::1] Gm):
    """``sum_{y,z} exp(-i Gamma_B(x, y, z)) F[y, z] Gm[z, y]`` for affine ``B``.

    ``Gamma_B`` is the flux through the triangle with corners
    ``x-y-z, x+y-z, x-y+z``, i.e. ``2 B(c)(y, z)`` at the centroid ``c``.
    """
    cdef Py_ssize_t My = ys.shape[0], Mz = zs.shape[0], n = ys.shape[1]
    cdef Py_ssize_t iy, iz, j, k, l
    cdef double gam, bjk, cl
    cdef double complex acc = 0.0
    for iy in range(My):
        for iz in range(Mz):
            gam = 0.0
            for j in range(n):
                for k in range(n):
                    if j == k:
                        continue
                    bjk = B0[j, k]
                    for l in range(n):
                        cl = x[l] - (ys[iy, l] + zs[iz, l]) / 3.0
                        bjk = bjk + Bg[j, k, l] * cl
                    gam = gam + bjk * ys[iy, j] * zs[iz, k]
            gam = 2.0 * gam
            acc = acc + (cos(gam) - 1j * sin(gam)) * F[iy, iz] * Gm[iz, iy]
    return acc
