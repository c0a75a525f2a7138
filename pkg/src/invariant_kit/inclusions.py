"""Inclusion functions for closed-loop systems.

Combines interval Jacobians of the open-loop field with local affine
network bounds into first-order enclosures of f(x, N(x), w), plus the
plain natural-inclusion route for fields without usable Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .expressions import VectorField
from .intervals import (
    DomainError,
    IntervalMatrix,
    IntervalVector,
)
from .networks import (
    AffineRelaxation,
    FeedforwardNetwork,
    LocalizationError,
    crown_affine_bounds,
    nn_inclusion,
)

__all__ = [
    "ClosedLoopSystem",
    "LocalizedInclusion",
    "jacobian_based",
    "closed_loop_jacobians",
    "closed_loop_remainder",
    "closed_loop_jacobian_inclusion",
    "closed_loop_natural_inclusion",
    "natural_inclusion_for",
    "jacobian_inclusion_for",
    "make_inclusion",
    "simulate_closed_loop",
]


@dataclass(frozen=True)
class ClosedLoopSystem:
    """An open-loop vector field in feedback with a network controller."""

    field: VectorField
    net: FeedforwardNetwork

    def __post_init__(self):
        if self.net.input_dim != self.field.n or self.net.output_dim != self.field.p:
            raise ValueError(
                f"network {self.net!r} does not match field dims "
                f"(n={self.field.n}, p={self.field.p})")

    def f_closed(self, x, w=None) -> np.ndarray:
        """f(x, N(x), w); batches over leading axes."""
        x = np.asarray(x, dtype=float)
        return self.field(x, self.net.forward(x), w)


@dataclass(frozen=True)
class LocalizedInclusion:
    """An inclusion function valid for boxes inside its region (None = global).

    ``evaluate(box, wbox)`` returns an interval enclosure of the closed-loop
    field image over box x wbox. The tag names the construction for
    certificates.
    """

    region: IntervalVector | None
    tag: str
    _fn: Callable[[IntervalVector, IntervalVector], IntervalVector] = field(repr=False)

    def evaluate(self, box: IntervalVector, wbox: IntervalVector) -> IntervalVector:
        if self.region is not None and not self.region.contains(box):
            raise LocalizationError(
                f"box {box!r} escapes inclusion region {self.region!r}")
        return self._fn(box, wbox)


def jacobian_based(vf: VectorField, box: IntervalVector,
                   center: np.ndarray | None = None) -> IntervalVector:
    """First-order enclosure J(box) (box - c) + f(c) for a field of x alone."""
    if vf.p or vf.q:
        raise ValueError("jacobian_based expects an autonomous field (p = q = 0)")
    center = box.midpoint() if center is None else np.asarray(center, dtype=float)
    if not box.contains_point(center):
        raise ValueError("expansion center must lie inside the box")
    jx = vf.jacobian_interval("x", box)
    f0 = vf.eval_interval(IntervalVector.thin(center))
    return jx @ (box - center) + f0


def closed_loop_jacobians(sys: ClosedLoopSystem, region: IntervalVector,
                          wbox: IntervalVector):
    """Interval Jacobians of f over (region, network range on region, wbox)."""
    rel = crown_affine_bounds(sys.net, region)
    urange = nn_inclusion(rel, region)
    jx = sys.field.jacobian_interval("x", region, urange, wbox)
    ju = sys.field.jacobian_interval("u", region, urange, wbox)
    jw = sys.field.jacobian_interval("w", region, urange, wbox)
    return jx, ju, jw


def closed_loop_remainder(sys: ClosedLoopSystem, jacobians, x0: np.ndarray,
                          wbox: IntervalVector) -> IntervalVector:
    """Zeroth-order remainder -Jx x0 - Ju N(x0) + Jw (wbox - w0) + f(x0, N(x0), w0)
    expanded around x0 and the disturbance midpoint."""
    jx, ju, jw = jacobians
    x0 = np.asarray(x0, dtype=float)
    u0 = sys.net.forward(x0)
    w0 = wbox.midpoint()
    f0 = sys.field.eval_interval(IntervalVector.thin(x0), IntervalVector.thin(u0),
                                 IntervalVector.thin(w0))
    r = -(jx @ IntervalVector.thin(x0))
    r = r + -(ju @ IntervalVector.thin(u0))
    r = r + (jw @ (wbox - w0))
    return r + f0


def closed_loop_jacobian_inclusion(sys: ClosedLoopSystem, rel: AffineRelaxation,
                                   jac_region: IntervalVector, wbox: IntervalVector,
                                   box: IntervalVector | None = None,
                                   jacobians=None) -> IntervalVector:
    """First-order closed-loop enclosure (Jx + Ju C)[box] + Ju [d] + remainder.

    ``rel`` is the affine relaxation for the box (its region by default);
    Jacobian intervals are shared across boxes inside ``jac_region`` and may
    be passed precomputed.
    """
    box = rel.region if box is None else box
    if not rel.region.contains(box):
        raise LocalizationError("box escapes the affine relaxation region")
    if not jac_region.contains(box):
        raise LocalizationError("box escapes the Jacobian localization region")
    if jacobians is None:
        jacobians = closed_loop_jacobians(sys, jac_region, wbox)
    jx, ju, jw = jacobians
    lin = (jx + ju @ IntervalMatrix.thin(rel.C)) @ box
    dterm = ju @ IntervalVector(rel.d_lo, rel.d_hi)
    rem = closed_loop_remainder(sys, jacobians, box.midpoint(), wbox)
    return lin + dterm + rem


def closed_loop_natural_inclusion(sys: ClosedLoopSystem, box: IntervalVector,
                                  wbox: IntervalVector) -> IntervalVector:
    """Natural inclusion of f with the network bounded over the box itself."""
    rel = crown_affine_bounds(sys.net, box)
    ubox = nn_inclusion(rel, box)
    return sys.field.eval_interval(box, ubox, wbox)


# ---------------------------------------------------------------------------
# factories used by the embedding machinery
# ---------------------------------------------------------------------------

def natural_inclusion_for(sys: ClosedLoopSystem) -> LocalizedInclusion:
    return LocalizedInclusion(
        region=None, tag="natural",
        _fn=lambda box, wbox: closed_loop_natural_inclusion(sys, box, wbox))


def jacobian_inclusion_for(sys: ClosedLoopSystem, region: IntervalVector,
                           wbox: IntervalVector) -> LocalizedInclusion:
    """Jacobian-based inclusion localized to region, with per-box network
    relaxations; reuses one set of interval Jacobians for the region."""
    jacobians = closed_loop_jacobians(sys, region, wbox)

    def fn(box: IntervalVector, wb: IntervalVector) -> IntervalVector:
        if not np.array_equal(wb.lo, wbox.lo) or not np.array_equal(wb.hi, wbox.hi):
            raise ValueError("disturbance box differs from the localized one")
        rel = crown_affine_bounds(sys.net, box)
        return closed_loop_jacobian_inclusion(sys, rel, region, wb,
                                              jacobians=jacobians)

    return LocalizedInclusion(region=region, tag="jacobian", _fn=fn)


def make_inclusion(sys: ClosedLoopSystem, construction: str,
                   region: IntervalVector | None,
                   wbox: IntervalVector) -> LocalizedInclusion:
    """Build the requested inclusion; falls back to the natural form when the
    symbolic Jacobians cannot be evaluated on the region."""
    if construction == "natural":
        return natural_inclusion_for(sys)
    if construction != "jacobian":
        raise ValueError(f"unknown construction {construction!r}")
    if region is None:
        raise ValueError("jacobian construction needs a localization region")
    try:
        return jacobian_inclusion_for(sys, region, wbox)
    except DomainError:
        incl = natural_inclusion_for(sys)
        return LocalizedInclusion(region=None, tag="natural(jacobian-fallback)",
                                  _fn=incl._fn)


# ---------------------------------------------------------------------------
# plain simulation (shared by the equilibrium search and the oracles)
# ---------------------------------------------------------------------------

def simulate_closed_loop(sys: ClosedLoopSystem, x0, h: float, steps: int,
                         w_of_step=None) -> np.ndarray:
    """RK4 trajectory of the closed loop; disturbance held constant per step.

    ``w_of_step(k)`` supplies the disturbance for step k (default zero).
    Batches over leading axes of x0. Returns (steps+1, ...) states.
    """
    x = np.asarray(x0, dtype=float)
    q = sys.field.q
    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    for k in range(steps):
        w = np.zeros(x.shape[:-1] + (q,)) if w_of_step is None else w_of_step(k)
        k1 = sys.f_closed(x, w)
        k2 = sys.f_closed(x + 0.5 * h * k1, w)
        k3 = sys.f_closed(x + 0.5 * h * k2, w)
        k4 = sys.f_closed(x + h * k3, w)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return out
