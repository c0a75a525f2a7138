"""Brute-force validation oracles, independent of the certification path.

Boundary sampling (the Nagumo sign test), grid-based approximate minimal
inclusion at small dimension, and Monte-Carlo trajectory bundles. These are
the falsifiers every certificate is held against: a set certified invariant
must never produce a boundary witness.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .inclusions import ClosedLoopSystem
from .intervals import IntervalVector, interval_matvec_batch, k_add
from .networks import FeedforwardNetwork, _act_interval
from .paralleletopes import Paralleletope

__all__ = [
    "BoundaryReport",
    "Witness",
    "TrajectoryBundle",
    "boundary_check",
    "replay_witness",
    "grid_minimal_inclusion",
    "monte_carlo_trajectories",
]

_GRID_BUDGET = 10_000_000


def _net_enclosure_batch(net: FeedforwardNetwork, x: np.ndarray):
    """Thin-input interval forward pass, batched over rows of x."""
    lo = np.asarray(x, dtype=float)
    hi = lo
    for ly in net.layers:
        lo, hi = interval_matvec_batch(ly.weights, lo, hi)
        lo, hi = k_add(lo, hi, ly.bias, ly.bias)
        lo, hi = _act_interval(ly.activation, lo, hi)
    return lo, hi


def closed_loop_enclosure_batch(sys: ClosedLoopSystem, x: np.ndarray,
                                w: np.ndarray):
    """Outward-rounded enclosure of f(x, N(x), w) at sample points (batched)."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    ulo, uhi = _net_enclosure_batch(sys.net, x)
    env = ((x, x), (ulo, uhi), (w, w))
    los, his = [], []
    for comp in sys.field.components:
        lo, hi = comp.eval_interval_arrays(env)
        los.append(np.broadcast_to(np.asarray(lo, dtype=float), x.shape[:-1]))
        his.append(np.broadcast_to(np.asarray(hi, dtype=float), x.shape[:-1]))
    return np.stack(los, axis=-1), np.stack(his, axis=-1)


@dataclass(frozen=True)
class Witness:
    """A boundary point where the field provably points outward."""

    face_index: int
    side: str  # "lower" | "upper"
    x: np.ndarray
    w: np.ndarray
    outward_component: float

    def to_dict(self) -> dict:
        return {"face_index": self.face_index, "side": self.side,
                "x": [float(v) for v in self.x],
                "w": [float(v) for v in self.w],
                "outward_component": float(self.outward_component)}


@dataclass
class BoundaryReport:
    n_samples: int
    margins_lower: np.ndarray  # worst certified inward margin per lower face
    margins_upper: np.ndarray
    witnesses: list[Witness] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.witnesses

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "passed": self.passed,
            "margins_lower": [float(v) for v in self.margins_lower],
            "margins_upper": [float(v) for v in self.margins_upper],
            "witnesses": [w.to_dict() for w in self.witnesses],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _disturbance_set(wbox: IntervalVector, w_samples: int,
                     rng: np.random.Generator) -> np.ndarray:
    q = wbox.dim
    if q == 0:
        return np.zeros((1, 0))
    if q <= 10:
        corners = np.array(list(itertools.product(*zip(wbox.lo, wbox.hi))))
    else:
        signs = rng.integers(0, 2, size=(1024, q))
        corners = np.where(signs == 0, wbox.lo, wbox.hi)
    extra = rng.uniform(wbox.lo, wbox.hi, size=(w_samples, q)) if w_samples else \
        np.zeros((0, q))
    return np.vstack([corners, extra])


def _facet_points(box: IntervalVector, face: int, side: str, m: int,
                  rng: np.random.Generator) -> np.ndarray:
    # stratified (Latin hypercube) samples on the facet
    n = box.dim
    pts = np.empty((m, n))
    for d in range(n):
        if d == face:
            pts[:, d] = box.lo[d] if side == "lower" else box.hi[d]
        else:
            strata = (rng.permutation(m) + rng.uniform(size=m)) / m
            pts[:, d] = box.lo[d] + strata * (box.hi[d] - box.lo[d])
    return pts


def boundary_check(sys: ClosedLoopSystem, region, wbox: IntervalVector,
                   n_samples: int = 100_000, w_samples: int = 3,
                   seed: int = 0) -> BoundaryReport:
    """Sample every facet of a box or paralleletope and sign-test the field.

    Facet points get stratified coverage; disturbances run over the corners
    of wbox plus uniform draws. The field is evaluated with outward-rounded
    interval arithmetic, so a reported witness has a strictly outward normal
    component in real arithmetic; margins are conservative inward bounds.
    Each facet draws from a Philox stream keyed (seed, facet), keeping
    reports deterministic even if facets are processed in parallel.
    """
    if isinstance(region, Paralleletope):
        box, tmat, tinv = region.ybox, region.T, np.linalg.inv(region.T)
    elif isinstance(region, IntervalVector):
        box, tmat, tinv = region, None, None
    else:
        raise TypeError(f"unsupported region type {type(region).__name__}")
    n = box.dim
    if np.any(box.width() == 0.0):
        raise ValueError("boundary_check needs a nondegenerate region")
    m = max(1, n_samples // (2 * n))
    margins_lower = np.full(n, np.inf)
    margins_upper = np.full(n, np.inf)
    witnesses: list[Witness] = []
    for face in range(n):
        for si, side in enumerate(("lower", "upper")):
            rng = np.random.Generator(np.random.Philox(key=[seed, 2 * face + si]))
            wset = _disturbance_set(wbox, w_samples, rng)
            pts = _facet_points(box, face, side, m, rng)
            xpts = pts if tinv is None else pts @ tinv.T
            for w in wset:
                wrep = np.broadcast_to(w, (m, wbox.dim))
                flo, fhi = closed_loop_enclosure_batch(sys, xpts, wrep)
                if tmat is not None:
                    flo, fhi = interval_matvec_batch(tmat, flo, fhi)
                if side == "lower":
                    # inward means component `face` nonnegative
                    margin = float(np.min(flo[:, face]))
                    margins_lower[face] = min(margins_lower[face], margin)
                    bad = np.flatnonzero(fhi[:, face] < 0.0)
                    if bad.size:
                        j = int(bad[np.argmin(fhi[bad, face])])
                        witnesses.append(Witness(face, side, xpts[j].copy(),
                                                 np.array(w, dtype=float),
                                                 float(fhi[j, face])))
                else:
                    margin = float(np.min(-fhi[:, face]))
                    margins_upper[face] = min(margins_upper[face], margin)
                    bad = np.flatnonzero(flo[:, face] > 0.0)
                    if bad.size:
                        j = int(bad[np.argmax(flo[bad, face])])
                        witnesses.append(Witness(face, side, xpts[j].copy(),
                                                 np.array(w, dtype=float),
                                                 float(flo[j, face])))
    return BoundaryReport(n_samples=2 * n * m * len(wset),
                          margins_lower=margins_lower,
                          margins_upper=margins_upper,
                          witnesses=witnesses)


def replay_witness(sys: ClosedLoopSystem, witness: Witness,
                   transform: np.ndarray | None = None) -> bool:
    """Re-evaluate a witness point exactly; True if it still violates."""
    x = np.asarray(witness.x, dtype=float)[None, :]
    w = np.asarray(witness.w, dtype=float)[None, :]
    flo, fhi = closed_loop_enclosure_batch(sys, x, w)
    if transform is not None:
        flo, fhi = interval_matvec_batch(np.asarray(transform, dtype=float),
                                         flo, fhi)
    if witness.side == "lower":
        return bool(fhi[0, witness.face_index] < 0.0)
    return bool(flo[0, witness.face_index] > 0.0)


def grid_minimal_inclusion(sys: ClosedLoopSystem, box: IntervalVector,
                           wbox: IntervalVector, grid_per_dim: int,
                           w_grid_per_dim: int = 2) -> IntervalVector:
    """Component-wise min/max of f(x, N(x), w) over a regular grid.

    An inner approximation of the minimal inclusion function, converging as
    the grid refines. Guarded to small dimension by an evaluation budget.
    """
    n, q = box.dim, wbox.dim
    total = grid_per_dim ** n * max(1, w_grid_per_dim) ** q
    if total > _GRID_BUDGET:
        raise ValueError(f"grid budget exceeded: {total} > {_GRID_BUDGET} points")
    axes = [np.linspace(box.lo[d], box.hi[d], grid_per_dim) for d in range(n)]
    xgrid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    if q:
        waxes = [np.linspace(wbox.lo[d], wbox.hi[d], max(2, w_grid_per_dim))
                 for d in range(q)]
        wgrid = np.stack(np.meshgrid(*waxes, indexing="ij"), axis=-1).reshape(-1, q)
    else:
        wgrid = np.zeros((1, 0))
    lo = np.full(n, np.inf)
    hi = np.full(n, -np.inf)
    chunk = max(1, _GRID_BUDGET // (10 * max(1, len(wgrid))))
    for start in range(0, len(xgrid), chunk):
        xs = xgrid[start:start + chunk]
        for w in wgrid:
            vals = sys.f_closed(xs, np.broadcast_to(w, (len(xs), q)))
            lo = np.minimum(lo, vals.min(axis=0))
            hi = np.maximum(hi, vals.max(axis=0))
    return IntervalVector(lo, hi)


@dataclass
class TrajectoryBundle:
    times: np.ndarray  # (steps+1,)
    states: np.ndarray  # (count, steps+1, n)
    divergent: np.ndarray  # (count,) bool

    def inside(self, box: IntervalVector, step: int) -> np.ndarray:
        x = self.states[:, step, :]
        return np.all((x >= box.lo) & (x <= box.hi), axis=1)


def monte_carlo_trajectories(sys: ClosedLoopSystem, box0: IntervalVector,
                             wbox: IntervalVector, count: int, horizon: float,
                             h: float, substeps: int = 10, seed: int = 0,
                             starts: np.ndarray | None = None) -> TrajectoryBundle:
    """RK4 trajectory bundle with piecewise-constant random disturbances.

    Disturbances are resampled every h (Philox stream keyed (seed, block)),
    the integrator takes ``substeps`` RK4 steps per block, and states are
    recorded on the h-grid so they align with embedding trajectories.
    Starts are uniform in box0 unless supplied explicitly.
    """
    n, q = sys.field.n, wbox.dim
    steps = int(np.ceil(horizon / h))
    if starts is None:
        start_rng = np.random.Generator(np.random.Philox(key=[seed, 2 ** 32]))
        x = start_rng.uniform(box0.lo, box0.hi, size=(count, n))
    else:
        x = np.array(starts, dtype=float)
        count = x.shape[0]
    states = np.empty((count, steps + 1, n))
    states[:, 0, :] = x
    alive = np.ones(count, dtype=bool)
    hs = h / substeps
    for k in range(steps):
        rng = np.random.Generator(np.random.Philox(key=[seed, k]))
        w = rng.uniform(wbox.lo, wbox.hi, size=(count, q)) if q else \
            np.zeros((count, 0))
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(substeps):
                k1 = sys.f_closed(x, w)
                k2 = sys.f_closed(x + 0.5 * hs * k1, w)
                k3 = sys.f_closed(x + 0.5 * hs * k2, w)
                k4 = sys.f_closed(x + hs * k3, w)
                step = (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                x = np.where(alive[:, None], x + step, x)
        finite = np.all(np.isfinite(x), axis=1)
        alive &= finite
        x = np.where(alive[:, None], x, states[:, k, :])
        states[:, k + 1, :] = x
    return TrajectoryBundle(times=np.arange(steps + 1) * h, states=states,
                            divergent=~alive)
