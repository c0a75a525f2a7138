"""Invariant paralleletopes via linearly transformed coordinates.

A paralleletope is the preimage of a box under an invertible T (the set of x
with Tx inside the box). The closed loop is analyzed in y = Tx coordinates
with Jacobian bounds taken in the original coordinates; certificates then
transfer to the paralleletope. The float inverse of T is wrapped in a
rigorous interval enclosure (Neumann-series bound on ||I - T Tinv||), so the
coordinate round trip never silently breaks soundness.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse import csgraph, csr_matrix

from .embedding import EmbeddingSystem, InvarianceCertificate, check_invariance
from .inclusions import (
    ClosedLoopSystem,
    LocalizedInclusion,
    closed_loop_jacobians,
    closed_loop_remainder,
    jacobian_inclusion_for,
    simulate_closed_loop,
)
from .intervals import (
    IntervalMatrix,
    IntervalVector,
    _down,
    _up,
)
from .networks import (
    LocalizationError,
    compose_input_transform,
    crown_affine_bounds,
)

__all__ = [
    "Paralleletope",
    "TransformedSystem",
    "SpectrumReport",
    "transformed_inclusion",
    "transformed_inclusion_for",
    "embedding_for_transformed",
    "check_paralleletope_invariance",
    "choose_transform",
    "find_equilibrium",
]

_COND_LIMIT = 1e12


def _check_invertible(t: np.ndarray) -> float:
    cond = float(np.linalg.cond(t, np.inf))
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise ValueError(f"transform is numerically singular (cond {cond:.3g})")
    resid = float(np.max(np.abs(t @ np.linalg.inv(t) - np.eye(t.shape[0]))))
    if resid > 1e-10 * cond:
        raise ValueError(f"transform inverse residual {resid:.3g} too large")
    return cond


@dataclass(frozen=True)
class Paralleletope:
    """The set {x : T x in ybox} for an invertible T."""

    T: np.ndarray
    ybox: IntervalVector

    def __post_init__(self):
        t = np.asarray(self.T, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] != self.ybox.dim:
            raise ValueError(f"transform shape {t.shape} does not match box dim")
        _check_invertible(t)
        t.setflags(write=False)
        object.__setattr__(self, "T", t)

    @property
    def dim(self) -> int:
        return self.ybox.dim

    def contains_point(self, x) -> bool:
        return self.ybox.contains_point(self.T @ np.asarray(x, dtype=float))

    def x_vertices(self) -> np.ndarray:
        """Images of the 2^n box vertices; rows are vertices in x coordinates."""
        n = self.dim
        if n > 20:
            raise ValueError("vertex enumeration is limited to 20 dimensions")
        tinv = np.linalg.inv(self.T)
        corners = np.array(list(itertools.product(*zip(self.ybox.lo, self.ybox.hi))))
        return corners @ tinv.T


class TransformedSystem:
    """A closed loop viewed in y = Tx coordinates."""

    def __init__(self, sys: ClosedLoopSystem, t: np.ndarray):
        t = np.asarray(t, dtype=float)
        n = sys.field.n
        if t.shape != (n, n):
            raise ValueError(f"transform shape {t.shape} != ({n}, {n})")
        _check_invertible(t)
        t.setflags(write=False)
        self.sys = sys
        self.T = t
        self.identity = bool(np.array_equal(t, np.eye(n)))
        self.tinv = np.linalg.inv(t)
        self.tinv.setflags(write=False)
        self.tinv_enclosure = self._enclose_inverse()
        self.net_t = (sys.net if self.identity
                      else compose_input_transform(sys.net, self.tinv))
        self.net_lipschitz = self._net_lipschitz()

    def _enclose_inverse(self) -> IntervalMatrix:
        n = self.T.shape[0]
        if self.identity:
            return IntervalMatrix.thin(np.eye(n))
        # E = I - T M in interval arithmetic; ||exact inverse - M|| <= ||M|| e/(1-e)
        e_iv = IntervalMatrix.thin(np.eye(n)) + (
            -(IntervalMatrix.thin(self.T) @ IntervalMatrix.thin(self.tinv)))
        e = float(np.max(np.sum(np.maximum(np.abs(e_iv.lo), np.abs(e_iv.hi)), axis=1)))
        if e >= 0.5:
            raise ValueError(f"inverse enclosure failed: ||I - T Tinv|| = {e:.3g}")
        m_norm = float(np.max(np.sum(np.abs(self.tinv), axis=1)))
        delta = float(_up(_up(m_norm * e) / (1.0 - e)))
        return IntervalMatrix(_down(self.tinv - delta), _up(self.tinv + delta))

    def _net_lipschitz(self) -> float:
        lip = 1.0
        for ly in self.sys.net.layers:
            lip = float(_up(lip * float(np.max(np.sum(np.abs(ly.weights), axis=1)))))
        return lip

    def hull_x(self, ybox: IntervalVector) -> IntervalVector:
        """Sound interval hull of the paralleletope slice Tinv(ybox)."""
        if self.identity:
            return ybox
        return self.tinv_enclosure @ ybox

    def g_closed(self, y, w=None) -> np.ndarray:
        """Transformed field T f(Tinv y, N'(y), w); batches over leading axes."""
        y = np.asarray(y, dtype=float)
        x = y @ self.tinv.T
        u = self.net_t.forward(y)
        return self.sys.field(x, u, w) @ self.T.T


def transformed_inclusion(ts: TransformedSystem, ybox: IntervalVector,
                          jac_region_x: IntervalVector, wbox: IntervalVector,
                          jacobians=None) -> IntervalVector:
    """Enclosure of the transformed field over a y-box:
    T (Jx + Ju C' T) Tinv [ybox] + T Ju [d'] + T R, with Jacobians in original
    coordinates and (C', d') from the transformed network on the y-box.
    """
    sys = ts.sys
    if ts.identity:
        from .inclusions import closed_loop_jacobian_inclusion
        rel = crown_affine_bounds(sys.net, ybox)
        return closed_loop_jacobian_inclusion(sys, rel, jac_region_x, wbox,
                                              jacobians=jacobians)
    hull = ts.hull_x(ybox)
    if not jac_region_x.contains(hull):
        raise LocalizationError("paralleletope escapes the Jacobian region")
    if jacobians is None:
        jacobians = closed_loop_jacobians(sys, jac_region_x, wbox)
    jx, ju, jw = jacobians

    rel = crown_affine_bounds(ts.net_t, ybox)
    # (C', d') bounds N(Tinv y); widen the offsets so they also cover the exact
    # inverse: |N(Texact^-1 y) - N(Tinv y)| <= Lip * ||Texact^-1 - Tinv|| * ||y||
    y_scale = float(np.max(np.maximum(np.abs(ybox.lo), np.abs(ybox.hi))))
    inv_gap = float(np.max(ts.tinv_enclosure.hi - ts.tinv))
    eps = float(_up(_up(ts.net_lipschitz * inv_gap) * y_scale))
    d = IntervalVector(_down(rel.d_lo - eps), _up(rel.d_hi + eps))

    tmat = IntervalMatrix.thin(ts.T)
    inner = jx + ju @ (IntervalMatrix.thin(rel.C) @ tmat)
    lin = ((tmat @ inner) @ ts.tinv_enclosure) @ ybox
    dterm = (tmat @ ju) @ d

    y0 = ybox.midpoint()
    x0 = ts.tinv @ y0
    if not jac_region_x.contains_point(x0):
        raise LocalizationError("expansion center escaped the Jacobian region")
    rem = tmat @ closed_loop_remainder(sys, jacobians, x0, wbox)
    return lin + dterm + rem


def transformed_inclusion_for(ts: TransformedSystem, jac_region_x: IntervalVector,
                              wbox: IntervalVector) -> LocalizedInclusion:
    """Localized inclusion for the transformed field, with per-box network
    relaxations and shared interval Jacobians."""
    if ts.identity:
        return jacobian_inclusion_for(ts.sys, jac_region_x, wbox)
    jacobians = closed_loop_jacobians(ts.sys, jac_region_x, wbox)

    def fn(ybox: IntervalVector, wb: IntervalVector) -> IntervalVector:
        if not np.array_equal(wb.lo, wbox.lo) or not np.array_equal(wb.hi, wbox.hi):
            raise ValueError("disturbance box differs from the localized one")
        return transformed_inclusion(ts, ybox, jac_region_x, wbox,
                                     jacobians=jacobians)

    return LocalizedInclusion(region=None, tag="transformed-jacobian", _fn=fn)


def embedding_for_transformed(ts: TransformedSystem, wbox: IntervalVector,
                              jac_region_x: IntervalVector) -> EmbeddingSystem:
    """Embedding system in y coordinates with per-step re-localization
    through the x-space hull of the current y-box."""
    builder = lambda ybox: transformed_inclusion_for(ts, ts.hull_x(ybox), wbox)
    return EmbeddingSystem(
        incl=transformed_inclusion_for(ts, jac_region_x, wbox),
        wbox=wbox, builder=builder,
        transform=None if ts.identity else ts.T,
        tinv_enclosure=None if ts.identity else ts.tinv_enclosure)


def check_paralleletope_invariance(ts: TransformedSystem, ptope: Paralleletope,
                                   wbox: IntervalVector,
                                   jac_region_x: IntervalVector | None = None,
                                   config_hash: str = "") -> InvarianceCertificate:
    """Invariance certificate for a paralleletope via the transformed embedding."""
    if not np.array_equal(ptope.T, ts.T):
        raise ValueError("paralleletope transform differs from the system transform")
    hull = ts.hull_x(ptope.ybox)
    if jac_region_x is None:
        jac_region_x = hull
    elif not jac_region_x.contains(hull):
        raise LocalizationError("paralleletope escapes the requested Jacobian region")
    es = embedding_for_transformed(ts, wbox, jac_region_x)
    return check_invariance(es, ptope.ybox, config_hash=config_hash)


# ---------------------------------------------------------------------------
# transform selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray  # complex, sorted by (real, imag)
    stable: bool
    method: str  # "eig" | "schur"
    condition: float
    off_block_residual: float


def _block_eigvals(block: np.ndarray) -> list[complex]:
    m = block.shape[0]
    if m == 1:
        return [complex(block[0, 0])]
    if m == 2:
        # stable quadratic formula; exact for exactly-representable roots
        tr = block[0, 0] + block[1, 1]
        det = block[0, 0] * block[1, 1] - block[0, 1] * block[1, 0]
        disc = tr * tr - 4.0 * det
        if disc >= 0.0:
            root = np.sqrt(disc)
            l1 = 0.5 * (tr + root) if tr >= 0.0 else 0.5 * (tr - root)
            if l1 == 0.0:
                return [complex(0.0), complex(tr)]
            return [complex(l1), complex(det / l1)]
        half = 0.5 * np.sqrt(-disc)
        return [complex(0.5 * tr, -half), complex(0.5 * tr, half)]
    return [complex(v) for v in np.linalg.eigvals(block)]


def _scc_topological_blocks(a: np.ndarray) -> list[np.ndarray]:
    """Index sets of the strongly connected components of the sparsity graph,
    ordered so every block only depends on earlier ones (block triangular)."""
    n = a.shape[0]
    adj = csr_matrix((np.abs(a) > 0.0).astype(np.int8))
    ncomp, labels = csgraph.connected_components(adj, directed=True,
                                                 connection="strong")
    deps = [set() for _ in range(ncomp)]
    rows, cols = np.nonzero(np.abs(a) > 0.0)
    for i, j in zip(rows, cols):
        if labels[i] != labels[j]:
            deps[labels[i]].add(labels[j])
    order: list[int] = []
    remaining = {b: set(d) for b, d in enumerate(deps)}
    ready = sorted(b for b, d in remaining.items() if not d)
    while ready:
        b = ready.pop(0)  # smallest label first keeps the order deterministic
        order.append(b)
        del remaining[b]
        freed = sorted(o for o, d in remaining.items()
                       if b in d and len(d) == 1)
        for o in remaining:
            remaining[o].discard(b)
        ready = sorted(set(ready) | set(freed))
    if len(order) != ncomp:
        raise np.linalg.LinAlgError("dependency cycle in block ordering")
    return [np.flatnonzero(labels == b) for b in order]


def _block_eigvec(block: np.ndarray, lam: complex) -> np.ndarray:
    m = block.shape[0]
    if m == 1:
        return np.array([1.0 + 0.0j])
    if m == 2:
        a, b = block[0]
        c, d = block[1]
        v1 = np.array([b, lam - a])
        v2 = np.array([lam - d, c])
        v = v1 if np.max(np.abs(v1)) >= np.max(np.abs(v2)) else v2
        if np.max(np.abs(v)) == 0.0:
            v = np.array([1.0, 0.0])
        return v.astype(complex)
    shifted = block.astype(complex) - lam * np.eye(m)
    _, _, vt = np.linalg.svd(shifted)
    return vt[-1].conj()


def _cascade_eigvectors(a: np.ndarray, blocks: list[np.ndarray],
                        tol: float) -> list[tuple[complex, np.ndarray]]:
    """Eigenpairs of a block-triangular matrix by per-block decomposition and
    back-substitution of the couplings; exact block sparsity is preserved."""
    n = a.shape[0]
    pairs: list[tuple[complex, np.ndarray]] = []
    for k, idx in enumerate(blocks):
        sub = a[np.ix_(idx, idx)]
        for lam in _block_eigvals(sub):
            full = np.zeros(n, dtype=complex)
            full[idx] = _block_eigvec(sub, lam)
            for midx in blocks[k + 1:]:
                coupling = a[np.ix_(midx, np.arange(n))] @ full
                if np.max(np.abs(coupling)) == 0.0:
                    continue
                shifted = a[np.ix_(midx, midx)].astype(complex) - lam * np.eye(len(midx))
                if np.min(np.abs(np.linalg.eigvals(shifted))) <= tol:
                    raise np.linalg.LinAlgError(
                        "resonant eigenvalue across coupled blocks")
                full[midx] = np.linalg.solve(shifted, -coupling)
            nrm = np.max(np.abs(full))
            pairs.append((lam, full / nrm))
    return pairs


def _realified_basis(pairs: list[tuple[complex, np.ndarray]],
                     tol: float) -> tuple[list[complex], np.ndarray]:
    """Sort eigenpairs by (re, im) and convert conjugate pairs to real 2x2
    rotation blocks; returns the sorted eigenvalues and the basis matrix."""
    pairs = sorted(pairs, key=lambda p: (p[0].real, abs(p[0].imag), p[0].imag))
    vals: list[complex] = []
    cols: list[np.ndarray] = []
    skip = False
    for i, (lam, vec) in enumerate(pairs):
        if skip:
            skip = False
            continue
        if abs(lam.imag) <= tol:
            vals.append(complex(lam.real))
            cols.append(vec.real if np.max(np.abs(vec.real)) > 0 else vec.imag)
        else:
            # conjugate partner is adjacent by the sort key
            vals.extend([complex(lam.real, -abs(lam.imag)),
                         complex(lam.real, abs(lam.imag))])
            cols.append(vec.real)
            cols.append(vec.imag)
            skip = True
    v = np.column_stack(cols)
    if v.shape[0] != v.shape[1]:
        raise np.linalg.LinAlgError("eigenbasis is rank deficient")
    return vals, v


def _off_block_residual(j: np.ndarray, vals: list[complex], tol: float) -> float:
    mask = np.zeros_like(j, dtype=bool)
    pos = 0
    while pos < len(vals):
        m = 2 if vals[pos].imag != 0.0 else 1
        mask[pos:pos + m, pos:pos + m] = True
        pos += m
    return float(np.max(np.abs(np.where(mask, 0.0, j))))


def choose_transform(sys: ClosedLoopSystem, x_star: np.ndarray,
                     region: IntervalVector,
                     stationary_tol: float = 1e-6) -> tuple[np.ndarray, SpectrumReport]:
    """Transform aligned with the eigenstructure of the relaxed closed-loop
    linearization A = Jx + Ju C at the equilibrium, with C from the affine
    network bounds over the region.

    Falls back to a real Schur basis when the eigenbasis is defective or
    ill-conditioned. Rows of T are scaled to unit max-norm.
    """
    x_star = np.asarray(x_star, dtype=float)
    u_star = sys.net.forward(x_star)
    resid = float(np.max(np.abs(sys.f_closed(x_star))))
    if resid > stationary_tol:
        raise ValueError(f"point is not stationary: residual {resid:.3g}")
    jx = sys.field.jacobian_point("x", x_star, u_star)
    ju = sys.field.jacobian_point("u", x_star, u_star)
    c = crown_affine_bounds(sys.net, region).C
    a_cl = jx + ju @ c

    scale = max(1.0, float(np.max(np.abs(a_cl))))
    tol = 1e-9 * scale
    blocks = _scc_topological_blocks(a_cl)
    vals = sorted((lam for idx in blocks
                   for lam in _block_eigvals(a_cl[np.ix_(idx, idx)])),
                  key=lambda z: (z.real, abs(z.imag), z.imag))
    method = "eig"
    try:
        pairs = _cascade_eigvectors(a_cl, blocks, tol)
        vals, v = _realified_basis(pairs, tol)
        t = np.linalg.inv(v)
        cond = float(np.linalg.cond(t, np.inf))
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise np.linalg.LinAlgError(f"eigenbasis condition {cond:.3g}")
    except np.linalg.LinAlgError as exc:
        warnings.warn(f"eigenbasis unusable ({exc}); falling back to a real "
                      "Schur transform", RuntimeWarning)
        method = "schur"
        _, q = scipy.linalg.schur(a_cl, output="real")
        t = q.T
    # scale rows to unit max-norm, jointly over each complex pair so real
    # rotation blocks keep their form
    pos = 0
    while pos < t.shape[0]:
        m = 2 if (method == "eig" and vals[pos].imag != 0.0) else 1
        t[pos:pos + m] /= np.max(np.abs(t[pos:pos + m]))
        pos += m
    cond = _check_invertible(t)
    j = t @ a_cl @ np.linalg.inv(t)
    report = SpectrumReport(
        eigenvalues=np.array(vals, dtype=complex),
        stable=bool(all(z.real < 0.0 for z in vals)),
        method=method,
        condition=cond,
        off_block_residual=(_off_block_residual(j, vals, tol)
                            if method == "eig" else 0.0),
    )
    return t, report


def find_equilibrium(sys: ClosedLoopSystem, x0, horizon: float = 100.0,
                     tol: float = 1e-9, h: float = 0.01) -> np.ndarray:
    """Follow the undisturbed closed loop until the field is below tol."""
    x = np.asarray(x0, dtype=float)
    steps = int(np.ceil(horizon / h))
    for _ in range(steps):
        resid = float(np.max(np.abs(sys.f_closed(x))))
        if resid < tol:
            return x
        x = simulate_closed_loop(sys, x, h, 1)[-1]
    resid = float(np.max(np.abs(sys.f_closed(x))))
    if resid < tol:
        return x
    raise RuntimeError(f"no equilibrium within horizon {horizon}: "
                       f"residual {resid:.3g}")
