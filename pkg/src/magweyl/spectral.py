"""Eigenanalysis of quantized symbols and finite-volume essential-spectrum proxies."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import HypothesisViolated, NonConvergence, ProfileMismatch
from .field import transversal_gauge
from .funcalc import min_eigenvalue
from .quantize import operator_norm, quantize
from .symbols import SymbolDescriptor, p_m, sample_symbol, xsyms

DELOCALIZED = 0.2


# ---------------------------------------------------------------------------
# eigensolver
# ---------------------------------------------------------------------------
@dataclass
class SpectralReport:
    """Sorted eigenvalues with the normalized participation ratio of each eigenvector.

    ``localization[k] = 1 / (M sum_i |u_k(i)|^4)`` for unit ``u_k`` on ``M``
    grid points: 1 for a fully spread state, ``1/M`` for a single site.
    """

    eigenvalues: np.ndarray
    localization: np.ndarray | None
    hermiticity_residual: float
    metadata: dict = field(default_factory=dict)
    vectors: np.ndarray | None = field(default=None, repr=False)

    def delocalized(self, threshold=DELOCALIZED):
        return self.eigenvalues[self.localization > threshold]

    def localized(self, threshold=DELOCALIZED):
        return self.eigenvalues[self.localization <= threshold]

    def to_csv(self, path, header=None):
        with open(path, "w") as fh:
            for line in header or []:
                fh.write(f"# {line}\n")
            fh.write("index,eigenvalue,localization\n")
            loc = self.localization if self.localization is not None else [np.nan] * len(self.eigenvalues)
            for i, (e, l) in enumerate(zip(self.eigenvalues, loc)):
                fh.write(f"{i},{np.real(e):.16e},{l:.16e}\n")


def participation_ratio(U):
    p = np.abs(U) ** 2
    p /= p.sum(axis=0, keepdims=True)
    return 1.0 / (U.shape[0] * (p**2).sum(axis=0))


def eigensolve(T, vectors=True, herm_tol=1e-8):
    """Dense eigendecomposition of an :class:`OperatorMatrix`.

    Hermitian input (residual ``<= herm_tol``) is symmetrized and solved
    with ``eigh``; anything else goes through ``eig`` and is sorted by real
    part.
    """
    M = T.entries
    res = float(np.max(np.abs(M - M.conj().T)))
    meta = {"grid": T.grid.tag(), "gauge": T.gauge_tag}
    try:
        if res <= herm_tol * max(1.0, float(np.max(np.abs(M)))):
            H = 0.5 * (M + M.conj().T)
            if vectors:
                ev, U = sla.eigh(H)
            else:
                ev, U = sla.eigvalsh(H), None
        else:
            ev, U = sla.eig(M) if vectors else (sla.eigvals(M), None)
            order = np.argsort(ev.real, kind="stable")
            ev = ev[order]
            U = U[:, order] if U is not None else None
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise NonConvergence(str(exc)) from None
    loc = participation_ratio(U) if U is not None else None
    return SpectralReport(ev, loc, res, meta, U)


def cluster_levels(values, gap=1e-3, min_size=4):
    """Runs of sorted values with consecutive gaps ``<= gap*max(1,|v|)`` and at least ``min_size`` members.

    Returns ``[(mean, count), ...]``.  Isolated values (e.g. edge states of a
    finite box) are dropped.
    """
    v = np.sort(np.real(np.asarray(values)))
    out, start = [], 0
    for i in range(1, len(v) + 1):
        if i == len(v) or v[i] - v[i - 1] > gap * max(1.0, abs(v[i])):
            if i - start >= min_size:
                out.append((float(v[start:i].mean()), i - start))
            start = i
    return out


def garding_floor(f, A=None):
    """Smallest eigenvalue of ``Op^A(f)``."""
    T = quantize(f, A).entries
    return min_eigenvalue(0.5 * (T + T.conj().T))


# ---------------------------------------------------------------------------
# critical values
# ---------------------------------------------------------------------------
def _xi_values(f0, g):
    """``f0`` on the dual grid, shape ``(N,)*n``."""
    n = g.n
    coords = [np.zeros((1,) * (2 * n))] * n + g.mesh()[n:]
    return np.real(np.broadcast_to(f0(*coords), (1,) * n + (g.N,) * n).reshape((g.N,) * n))


def critical_values(f0, g, threshold=None, tol=1e-8):
    """Values of ``f0`` at dual-grid points where ``|grad f0|`` is a local minimum below ``threshold``.

    The gradient is a central difference on the dual grid; the default
    threshold is ``10*h``.  Values closer than ``tol*max(1,|v|)`` are merged.
    """
    n = g.n
    F = _xi_values(f0, g)
    dk = 2 * np.pi / g.L
    grads = np.gradient(F, dk)
    grads = grads if isinstance(grads, (list, tuple)) else [grads]
    G = np.sqrt(sum(gr**2 for gr in grads))
    thr = 10 * g.h if threshold is None else threshold
    interior = tuple(slice(1, -1) for _ in range(n))
    core = G[interior]
    is_min = np.ones(core.shape, dtype=bool)
    for off in np.ndindex(*(3,) * n):
        if all(o == 1 for o in off):
            continue
        sl = tuple(slice(o, o + g.N - 2) for o in off)
        is_min &= core <= G[sl]
    vals = np.sort(F[interior][is_min & (core <= thr)])
    out = []
    for v in vals:
        if not out or abs(v - out[-1][-1]) > tol * max(1.0, abs(v)):
            out.append([v])
        else:
            out[-1].append(v)
    return [float(np.mean(c)) for c in out]


# ---------------------------------------------------------------------------
# essential spectrum, decaying perturbations
# ---------------------------------------------------------------------------
@dataclass
class PerturbationSplit:
    """``f = f0 + f_S + f_L`` with ``f0`` depending on ``xi`` only."""

    f0: SymbolDescriptor
    f_S: SymbolDescriptor | None = None
    f_L: SymbolDescriptor | None = None
    eps: float = 0.5

    def __post_init__(self):
        if not self.f0.is_xi_only():
            rng = np.random.default_rng(0)
            n = self.f0.dim
            xi = [np.full(16, v) for v in rng.normal(size=n)]
            xs = [rng.uniform(-5, 5, 16) for _ in range(n)]
            vals = self.f0(*xs, *xi)
            if np.max(np.abs(vals - vals[0])) > 1e-12:
                raise ValueError("f0 must depend on xi only")

    def total(self):
        out = self.f0
        for part in (self.f_S, self.f_L):
            if part is not None:
                out = out + part
        return out


def _edge_mask(g):
    x = g.points
    return np.any(np.isclose(np.abs(x), g.L / 2) | np.isclose(x, g.L / 2 - g.h), axis=1)


def check_decay(split, B, g, edge_tol=1e-6):
    """Sampled decay hypotheses: ``B``, ``f_S``, ``f_L`` negligible at the box edge.

    Also checks that ``<x>^(1+eps)|B|`` and ``<x>^(1+eps)|f_S|`` are not larger at
    the edge than in the bulk.  Raises :class:`HypothesisViolated`.
    """
    pts = g.points
    edge = _edge_mask(g)
    jx = np.sqrt(1 + (pts**2).sum(axis=1))
    checks = []
    if B is not None:
        Bv = np.sqrt((B(pts) ** 2).sum(axis=(-1, -2)))
        checks.append(("B", Bv, 1 + split.eps))
    n = g.n
    for name, d, w in (("f_S", split.f_S, 1 + split.eps), ("f_L", split.f_L, split.eps)):
        if d is None:
            continue
        cols = [pts[:, j] for j in range(n)] + [np.zeros(len(pts))] * n
        checks.append((name, np.abs(d(*cols)), w))
    for name, v, w in checks:
        top = float(np.max(v))
        if top == 0:
            continue
        if float(np.max(v[edge])) > edge_tol * top:
            raise HypothesisViolated(f"{name} at the box edge is {np.max(v[edge]) / top:.2e} of its maximum")
        weighted = v * jx**w
        if float(np.max(weighted[edge])) > float(np.max(weighted[~edge])):
            raise HypothesisViolated(f"<x>^{w:g}|{name}| does not decay towards the box edge")


def hausdorff_on_window(a, b, lo, hi):
    """``max(sup_{a in W} d(a, B), sup_{b in W} d(b, A))`` for the window ``W=[lo,hi]``."""
    a = np.sort(np.real(np.asarray(a)))
    b = np.sort(np.real(np.asarray(b)))

    def one_sided(u, v):
        u = u[(u >= lo) & (u <= hi)]
        if u.size == 0:
            return 0.0
        if v.size == 0:
            return np.inf
        idx = np.clip(np.searchsorted(v, u), 1, len(v) - 1) if len(v) > 1 else np.zeros(len(u), int)
        d = np.abs(u - v[idx])
        if len(v) > 1:
            d = np.minimum(d, np.abs(u - v[idx - 1]))
        return float(d.max())

    return max(one_sided(a, b), one_sided(b, a))


def window_top(f0, g):
    """``min f0`` over dual-grid points with ``|xi| >= xi_max/2`` (anti-aliasing margin 2)."""
    F = _xi_values(f0, g)
    K = np.sqrt(sum(m**2 for m in np.meshgrid(*([g.k] * g.n), indexing="ij")))
    return float(np.min(F[K >= g.xi_max / 2]))


def _group(values, tol=1e-6):
    out = []
    for v in np.sort(np.real(values)):
        if out and abs(v - out[-1][0]) <= tol * max(1.0, abs(v)):
            out[-1][1] += 1
        else:
            out.append([float(v), 1])
    return [tuple(x) for x in out]


@dataclass
class ComparisonReport:
    window: tuple
    hausdorff: float
    hausdorff_rel: float
    localized_states: list
    delocalized_count: int
    verdict: bool
    extra: dict = field(default_factory=dict)

    def to_json(self, path=None, **meta):
        d = asdict(self)
        d.update(meta)
        s = json.dumps(d, indent=2, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s


def ess_spectrum_decaying(split, B, A, g, threshold=DELOCALIZED, tol=0.05, check=True):
    """Delocalized spectrum of ``Op^A(f0 + f_S + f_L)`` against the range of ``f0``.

    Localized states (participation ratio ``<= threshold``) outside the range
    of ``f0`` are reported with multiplicities; ``sub_threshold`` counts those
    below ``inf f0``.
    """
    if check:
        check_decay(split, B, g)
    f = sample_symbol(split.total(), g)
    rep = eigensolve(quantize(f, A))
    F0 = _xi_values(split.f0, g).ravel()
    lo, hi = float(F0.min()), window_top(split.f0, g)
    deloc = rep.delocalized(threshold)
    H = hausdorff_on_window(deloc, F0, lo, hi)
    rel = H / (hi - lo)
    loc = rep.localized(threshold)
    outside = loc[(loc < lo) | (loc > F0.max())]
    states = _group(outside)
    below = int(np.sum(loc < lo))
    return ComparisonReport((lo, hi), H, rel, states, int(deloc.size), bool(rel <= tol),
                            {"sub_threshold": below, "n_localized": int(loc.size)})


def lap_probe(f, A, lam, eps_list=None, gamma=1.0, m=0.0):
    """``|| <D>^{m/2} <Q>^{-gamma} (H - lam - i eps)^{-1} <Q>^{-gamma} <D>^{m/2} ||`` for each ``eps``.

    The default ``eps_list`` is ``{1, 1/2, 1/4, 1/8, 1/16}`` times the local
    eigenvalue spacing at ``lam``.
    """
    if gamma <= 0.5:
        raise ValueError("gamma must exceed 1/2")
    g = f.grid
    T = quantize(f, A).entries
    H = 0.5 * (T + T.conj().T)
    if eps_list is None:
        ev = sla.eigvalsh(H)
        i = np.searchsorted(ev, lam)
        lo = ev[i - 1] if i > 0 else ev[0] - 1.0
        hi = ev[i] if i < len(ev) else ev[-1] + 1.0
        eps_list = [(hi - lo) * s for s in (1, 0.5, 0.25, 0.125, 0.0625)]
    w = (1 + (g.points**2).sum(axis=1)) ** (-gamma / 2)
    P = quantize(sample_symbol(p_m(m / 2, g.n), g), A).entries if m else None
    out = []
    I = np.eye(H.shape[0])
    for eps in eps_list:
        R = np.linalg.solve(H - (lam + 1j * eps) * I, np.diag(w))
        M = w[:, None] * R
        if P is not None:
            M = P @ M @ P
        out.append(operator_norm(M, hermitian=False))
    return out


# ---------------------------------------------------------------------------
# anisotropic limits
# ---------------------------------------------------------------------------
@dataclass
class AnisotropyProfile:
    """Two-sided directional limits of a symbol and a magnetic field.

    ``direction`` is a unit lattice vector; ``limit_symbols = (f_minus,
    f_plus)`` and ``limit_fields = (B_minus, B_plus)`` describe the limits
    along ``-direction`` and ``+direction``.  ``field``/``potential`` are the
    full field and the gauge used for the full operator; limit potentials
    default to transversal gauges of the (constant) limit fields.
    """

    direction: tuple
    limit_symbols: tuple
    limit_fields: tuple = (None, None)
    transition: float = 1.0
    field: object = None
    potential: object = None
    limit_potentials: tuple | None = None

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if not np.isclose(np.linalg.norm(d), 1.0) or np.count_nonzero(d) != 1:
            raise ValueError("direction must be a unit lattice vector")
        self.direction = tuple(d)

    def potentials(self):
        if self.limit_potentials is not None:
            return self.limit_potentials
        return tuple(None if B is None else transversal_gauge(B) for B in self.limit_fields)


def _edge_slices(g, direction):
    """Phase-space index sets of the first / last grid layer along ``direction``."""
    axis = int(np.flatnonzero(direction)[0])
    sgn = np.sign(direction[axis])
    lo = [slice(None)] * (2 * g.n)
    hi = [slice(None)] * (2 * g.n)
    lo[axis], hi[axis] = 0, g.N - 1
    return (tuple(lo), tuple(hi)) if sgn > 0 else (tuple(hi), tuple(lo))


def check_profile(profile, f, g, tol=1e-6):
    """Raise :class:`ProfileMismatch` unless ``f`` (and the field) match the limits at the box edges."""
    mesh = g.mesh()
    full = np.broadcast_to(f(*mesh), g.field_shape)
    sl_minus, sl_plus = _edge_slices(g, profile.direction)
    for sl, lim, name in ((sl_minus, profile.limit_symbols[0], "f_minus"), (sl_plus, profile.limit_symbols[1], "f_plus")):
        ref = np.broadcast_to(lim(*mesh), g.field_shape)
        err = float(np.max(np.abs(full[sl] - ref[sl])))
        if err > tol * max(1.0, float(np.max(np.abs(ref[sl])))):
            raise ProfileMismatch(f"symbol differs from {name} by {err:.3e} at the box edge")
    if profile.field is not None:
        axis = int(np.flatnonzero(profile.direction)[0])
        pts = g.points
        first = np.isclose(pts[:, axis], g.x[0])
        last = np.isclose(pts[:, axis], g.x[-1])
        if profile.direction[axis] < 0:
            first, last = last, first
        Bfull = profile.field(pts)
        for mask, lim, name in ((first, profile.limit_fields[0], "B_minus"), (last, profile.limit_fields[1], "B_plus")):
            ref = np.zeros_like(Bfull[mask]) if lim is None else lim(pts[mask])
            err = float(np.max(np.abs(Bfull[mask] - ref)))
            if err > tol * max(1.0, float(np.max(np.abs(ref)))):
                raise ProfileMismatch(f"field differs from {name} by {err:.3e} at the box edge")


def anisotropic_ess(profile, f, g, threshold=DELOCALIZED, tol=0.05, window=None):
    """Delocalized spectrum of the full operator against the union of the two limit-operator spectra."""
    check_profile(profile, f, g)
    A = profile.potential
    if A is None and profile.field is not None:
        A = transversal_gauge(profile.field)
    rep = eigensolve(quantize(sample_symbol(f, g), A))
    Am, Ap = profile.potentials()
    spectra = []
    for lim, Al in zip(profile.limit_symbols, (Am, Ap)):
        T = quantize(sample_symbol(lim, g), Al).entries
        spectra.append(sla.eigvalsh(0.5 * (T + T.conj().T)))
    union = np.sort(np.concatenate(spectra))
    if window is None:
        lo = float(union[0])
        hi = min(window_top(_at_origin(lim, g), g) for lim in profile.limit_symbols)
    else:
        lo, hi = window
    deloc = rep.delocalized(threshold)
    H = hausdorff_on_window(deloc, union, lo, hi)
    rel = H / (hi - lo)
    loc = rep.localized(threshold)
    return ComparisonReport((lo, hi), H, rel, _group(loc[(loc < lo)]), int(deloc.size), bool(rel <= tol),
                            {"limit_minima": [float(s[0]) for s in spectra]})


def _at_origin(d, g):
    """Descriptor of ``d`` restricted to ``x = 0`` (for window bounds)."""
    return SymbolDescriptor(d.expr.subs({s: 0 for s in xsyms(g.n)}), g.n)


__all__ = [
    "SpectralReport", "eigensolve", "participation_ratio", "cluster_levels", "garding_floor", "critical_values",
    "PerturbationSplit", "check_decay", "hausdorff_on_window", "window_top", "ComparisonReport",
    "ess_spectrum_decaying", "lap_probe", "AnisotropyProfile", "check_profile", "anisotropic_ess",
]
