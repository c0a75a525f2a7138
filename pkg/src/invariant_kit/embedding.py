"""Face-wise embedding dynamics, invariance certificates, and nested families.

The embedding system doubles the state into lower/upper corners and evaluates
the closed-loop inclusion function separately on every face of the box. One
evaluation at a corner pair certifies forward invariance; integrating the
corner dynamics forward yields a family of nested certified boxes shrinking
toward an attracting set, and integrating backward enlarges the family while
the certificate condition survives.

Each emitted box is re-certified independently, so the guarantees never rest
on the accuracy of the Euler steps in between.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .inclusions import ClosedLoopSystem, LocalizedInclusion, make_inclusion
from .intervals import (
    EmbeddingState,
    IntervalError,
    IntervalVector,
    replace_index,
    rounding_mode,
    se_leq,
)
from .networks import LocalizationError

__all__ = [
    "EmbeddingSystem",
    "EmbeddingRates",
    "InvarianceCertificate",
    "FamilyMember",
    "NestedFamily",
    "embedding_system",
    "embedding_rhs",
    "check_invariance",
    "integrate_forward",
    "integrate_backward",
    "refine_localization",
    "family_to_csv",
    "family_to_json",
]


@dataclass(frozen=True)
class EmbeddingSystem:
    """The corner-pair dynamics induced by a localized inclusion function.

    ``builder`` rebuilds the inclusion for a new localization box and enables
    per-step refinement during integration. For transformed systems the state
    lives in y = T x coordinates and ``transform``/``tinv_enclosure`` let
    certificates name the set in original coordinates.
    """

    incl: LocalizedInclusion
    wbox: IntervalVector
    builder: Callable[[IntervalVector], LocalizedInclusion] | None = None
    transform: np.ndarray | None = None
    tinv_enclosure: object | None = None  # IntervalMatrix when transform is set

    @property
    def dim(self) -> int:
        return self.wbox.dim if self.incl.region is None else self.incl.region.dim


def embedding_system(sys: ClosedLoopSystem, wbox: IntervalVector,
                     construction: str = "jacobian",
                     region: IntervalVector | None = None) -> EmbeddingSystem:
    """Embedding system for the closed loop in original coordinates."""
    incl = make_inclusion(sys, construction, region, wbox)
    builder = lambda box: make_inclusion(sys, construction, box, wbox)
    return EmbeddingSystem(incl=incl, wbox=wbox, builder=builder)


@dataclass(frozen=True)
class EmbeddingRates:
    """Per-face rates: d/dt of the lower and upper corners."""

    lower: np.ndarray
    upper: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.lower, self.upper])

    def max_norm(self) -> float:
        return float(max(np.max(np.abs(self.lower)), np.max(np.abs(self.upper))))

    def se_nonnegative(self) -> bool:
        return bool(np.all(self.lower >= 0.0) and np.all(self.upper <= 0.0))


def embedding_rhs(es: EmbeddingSystem, s: EmbeddingState) -> EmbeddingRates:
    """Evaluate the inclusion function on each lower and upper face."""
    n = s.dim
    lower = np.empty(n)
    upper = np.empty(n)
    for i in range(n):
        lo_face = IntervalVector(s.lower, replace_index(s.upper, i, s.lower))
        lower[i] = float(es.incl.evaluate(lo_face, es.wbox).lo[i])
        hi_face = IntervalVector(replace_index(s.lower, i, s.upper), s.upper)
        upper[i] = float(es.incl.evaluate(hi_face, es.wbox).hi[i])
    return EmbeddingRates(lower, upper)


@dataclass(frozen=True)
class InvarianceCertificate:
    """Outcome of the corner-pair invariance test on one box."""

    box: IntervalVector
    rhs_lower: np.ndarray
    rhs_upper: np.ndarray
    verdict: str  # "invariant" | "inconclusive"
    construction: str
    localization: IntervalVector | None
    rounding: str
    config_hash: str = ""
    transform: np.ndarray | None = None
    x_hull: IntervalVector | None = None

    @property
    def invariant(self) -> bool:
        return self.verdict == "invariant"

    def rates(self) -> EmbeddingRates:
        return EmbeddingRates(self.rhs_lower, self.rhs_upper)

    def to_dict(self) -> dict:
        def box_dict(b):
            return None if b is None else {"lo": [float(v) for v in b.lo],
                                           "hi": [float(v) for v in b.hi]}
        return {
            "kind": "hyperrectangle" if self.transform is None else "paralleletope",
            "verdict": self.verdict,
            "construction": self.construction,
            "rounding": self.rounding,
            "config_hash": self.config_hash,
            "box": box_dict(self.box),
            "rhs_lower": [float(v) for v in self.rhs_lower],
            "rhs_upper": [float(v) for v in self.rhs_upper],
            "localization": box_dict(self.localization),
            "transform": None if self.transform is None else
                         [[float(v) for v in row] for row in self.transform],
            "x_hull": box_dict(self.x_hull),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def check_invariance(es: EmbeddingSystem, box,
                     config_hash: str = "") -> InvarianceCertificate:
    """Certify a box (or corner pair) via one embedding evaluation.

    The verdict is "invariant" when every lower-face rate is nonnegative and
    every upper-face rate is nonpositive; otherwise "inconclusive" (the test
    is sufficient, not necessary, for non-minimal inclusion functions).
    """
    s = box if isinstance(box, EmbeddingState) else EmbeddingState.from_box(box)
    rates = embedding_rhs(es, s)
    verdict = "invariant" if rates.se_nonnegative() else "inconclusive"
    x_hull = None
    if es.transform is not None and es.tinv_enclosure is not None:
        x_hull = es.tinv_enclosure @ s.to_box()
    return InvarianceCertificate(
        box=s.to_box(), rhs_lower=rates.lower, rhs_upper=rates.upper,
        verdict=verdict, construction=es.incl.tag, localization=es.incl.region,
        rounding=rounding_mode(), config_hash=config_hash,
        transform=es.transform, x_hull=x_hull)


@dataclass(frozen=True)
class FamilyMember:
    t: float
    state: EmbeddingState
    certificate: InvarianceCertificate


@dataclass
class NestedFamily:
    """A time-indexed family of certified boxes, nested along increasing t."""

    members: list[FamilyMember] = field(default_factory=list)
    converged: bool = False
    equilibrium: EmbeddingState | None = None
    aborted_reason: str | None = None

    def times(self) -> list[float]:
        return [m.t for m in self.members]

    def is_nested(self) -> bool:
        return all(se_leq(a.state, b.state)
                   for a, b in zip(self.members, self.members[1:]))

    @staticmethod
    def merge(backward: "NestedFamily", forward: "NestedFamily") -> "NestedFamily":
        """Concatenate a backward and a forward run from the same start box."""
        back = [m for m in backward.members if m.t < 0.0]
        merged = NestedFamily(members=back + forward.members,
                              converged=forward.converged,
                              equilibrium=forward.equilibrium,
                              aborted_reason=forward.aborted_reason)
        return merged


def refine_localization(es: EmbeddingSystem, s: EmbeddingState) -> EmbeddingSystem:
    """Re-localize the inclusion to the current box (sound: regions only shrink
    relative to where the trajectory lives)."""
    box = s.to_box()
    if es.builder is not None:
        return EmbeddingSystem(incl=es.builder(box), wbox=es.wbox,
                               builder=es.builder, transform=es.transform,
                               tinv_enclosure=es.tinv_enclosure)
    if es.incl.region is None:
        narrowed = LocalizedInclusion(region=box, tag=es.incl.tag, _fn=es.incl._fn)
        return EmbeddingSystem(incl=narrowed, wbox=es.wbox, builder=None,
                               transform=es.transform,
                               tinv_enclosure=es.tinv_enclosure)
    raise ValueError("inclusion carries no builder and cannot be re-localized")


def integrate_forward(es: EmbeddingSystem, s0: EmbeddingState, h: float,
                      max_steps: int, conv_tol: float = 1e-8,
                      refine: bool = True, config_hash: str = "") -> NestedFamily:
    """Euler-integrate the embedding dynamics forward, re-certifying each box.

    Stops at convergence of the corner rates (max-norm below conv_tol) or
    after max_steps. Monotonicity or certificate failures abort the run and
    keep the family built so far.
    """
    cert = check_invariance(es, s0, config_hash=config_hash)
    if not cert.invariant:
        raise ValueError("initial box does not certify as invariant; "
                         "forward integration requires a certified start")
    fam = NestedFamily(members=[FamilyMember(0.0, s0, cert)])
    s = s0
    cur = es
    for k in range(1, max_steps + 1):
        rates = fam.members[-1].certificate.rates()
        if rates.max_norm() < conv_tol:
            fam.converged = True
            fam.equilibrium = s
            return fam
        try:
            s_next = EmbeddingState(s.lower + h * rates.lower,
                                    s.upper + h * rates.upper)
        except IntervalError:
            fam.aborted_reason = (f"corner order violated at step {k} "
                                  f"(step size {h} too large)")
            return fam
        if not se_leq(s, s_next):
            fam.aborted_reason = f"southeast monotonicity violated at step {k}"
            return fam
        if refine:
            cur = refine_localization(cur, s_next)
        try:
            cert = check_invariance(cur, s_next, config_hash=config_hash)
        except LocalizationError as exc:
            fam.aborted_reason = f"localization violated at step {k}: {exc}"
            return fam
        if not cert.invariant:
            fam.aborted_reason = f"certificate failed at step {k}"
            return fam
        fam.members.append(FamilyMember(k * h, s_next, cert))
        s = s_next
    return fam


def integrate_backward(es: EmbeddingSystem, s0: EmbeddingState, h: float,
                       region: IntervalVector | None = None,
                       max_back_steps: int = 2000, refine: bool = True,
                       config_hash: str = "") -> NestedFamily:
    """Grow the family by integrating the embedding dynamics backward.

    Retains boxes only while they certify and stay inside ``region``; stops at
    the first failure. A start box that fails to certify yields an empty
    family rather than an error.
    """
    cert = check_invariance(es, s0, config_hash=config_hash)
    if not cert.invariant:
        return NestedFamily(members=[], aborted_reason="start box does not certify")
    collected = [FamilyMember(0.0, s0, cert)]
    s = s0
    cur = es
    for k in range(1, max_back_steps + 1):
        rates = collected[-1].certificate.rates()
        try:
            s_prev = EmbeddingState(s.lower - h * rates.lower,
                                    s.upper - h * rates.upper)
        except IntervalError:
            break
        if region is not None and not region.contains(s_prev.to_box()):
            break
        if refine:
            try:
                cur = refine_localization(cur, s_prev)
            except ValueError:
                pass
        try:
            cert = check_invariance(cur, s_prev, config_hash=config_hash)
        except LocalizationError:
            break
        if not cert.invariant:
            break
        collected.append(FamilyMember(-k * h, s_prev, cert))
        s = s_prev
    collected.reverse()
    return NestedFamily(members=collected)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def family_to_csv(fam: NestedFamily, path) -> None:
    """Write rows t, x1_lo..xn_lo, x1_hi..xn_hi, certified."""
    if not fam.members:
        raise ValueError("cannot serialize an empty family")
    n = fam.members[0].state.dim
    header = (["t"] + [f"x{i+1}_lo" for i in range(n)]
              + [f"x{i+1}_hi" for i in range(n)] + ["certified"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for m in fam.members:
            row = ([repr(float(m.t))]
                   + [repr(float(v)) for v in m.state.lower]
                   + [repr(float(v)) for v in m.state.upper]
                   + [str(int(m.certificate.invariant))])
            writer.writerow(row)


def family_to_json(fam: NestedFamily, path) -> None:
    doc = {
        "converged": fam.converged,
        "aborted_reason": fam.aborted_reason,
        "members": [
            {"t": float(m.t), "certificate": m.certificate.to_dict()}
            for m in fam.members
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
