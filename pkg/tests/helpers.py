"""Shared builders for test systems: small closed loops with known behavior."""

from __future__ import annotations

import numpy as np

from invariant_kit import (
    ClosedLoopSystem,
    FeedforwardNetwork,
    IntervalVector,
    Layer,
    build_linear_relu_net,
    parse_vector_field,
)

LEADER_FOLLOWER_F = [
    "x3",
    "x4",
    "20*tanh(u1/20) + w1",
    "20*tanh(u2/20) + w2",
    "x7",
    "x8",
    "20*tanh((6*(x1-x5) + 7*(x3-x7))/20) + w3",
    "20*tanh((6*(x2-x6) + 7*(x4-x8))/20) + w4",
]

LEADER_GAIN = 8.0, 6.0  # per-axis position/velocity feedback of the leader net

LEADER_FOLLOWER_YBOX_HALFWIDTHS = [0.03, 0.03, 0.006, 0.006, 0.006, 0.006, 0.03, 0.03]


def leader_follower_gain() -> np.ndarray:
    k1, k2 = LEADER_GAIN
    gain = np.zeros((2, 8))
    gain[0, 0] = -k1
    gain[0, 2] = -k2
    gain[1, 1] = -k1
    gain[1, 3] = -k2
    return gain


def leader_follower_system() -> tuple[ClosedLoopSystem, IntervalVector]:
    """The 8-D leader-follower closed loop with the surrogate leader net."""
    field = parse_vector_field(LEADER_FOLLOWER_F, (8, 2, 4))
    net = build_linear_relu_net(leader_follower_gain())
    wbox = IntervalVector.from_center_halfwidth(np.zeros(4), [0.01] * 4)
    return ClosedLoopSystem(field, net), wbox


def linear_identity_net(gain: np.ndarray) -> FeedforwardNetwork:
    """Single identity-activation layer computing exactly K x (CROWN-exact)."""
    gain = np.atleast_2d(np.asarray(gain, dtype=float))
    return FeedforwardNetwork([Layer(gain, np.zeros(gain.shape[0]), "identity")])


def scalar_decay_system() -> tuple[ClosedLoopSystem, IntervalVector]:
    """dx/dt = -x with an inert controller input."""
    field = parse_vector_field(["0 - x1 + 0*u1"], (1, 1, 0))
    net = build_linear_relu_net(np.zeros((1, 1)))
    return ClosedLoopSystem(field, net), IntervalVector(np.zeros(0), np.zeros(0))


def scalar_growth_system() -> tuple[ClosedLoopSystem, IntervalVector]:
    """dx/dt = +x: nothing is invariant around the origin except {0}."""
    field = parse_vector_field(["x1 + 0*u1"], (1, 1, 0))
    net = build_linear_relu_net(np.zeros((1, 1)))
    return ClosedLoopSystem(field, net), IntervalVector(np.zeros(0), np.zeros(0))


def planar_relu_loop() -> tuple[ClosedLoopSystem, IntervalVector]:
    """2-D loop x' = Ax + u + w with u = Kx through an exact ReLU net.

    A + K is diagonally dominant enough to certify axis-aligned boxes even
    with the ReLU relaxation gap, and the cross gains keep that gap strictly
    positive on every face so Euler-time boxes stay conservative.
    """
    field = parse_vector_field(
        ["0.25*x2 - 0.5*x1 + u1 + w1", "0.25*x1 - 0.5*x2 + u2 + w2"], (2, 2, 2))
    net = build_linear_relu_net(np.array([[-2.0, 0.75], [0.75, -2.0]]))
    wbox = IntervalVector.from_center_halfwidth(np.zeros(2), [0.01, 0.01])
    return ClosedLoopSystem(field, net), wbox


def skew_linear_system() -> tuple[ClosedLoopSystem, IntervalVector]:
    """Stable 2-D system with skewed eigenvectors: A = [[-1, 8], [0, -5]].

    Axis-aligned boxes around the origin are never invariant (the x1 face
    sees +8 x2), while eigen-aligned paralleletopes certify.
    """
    field = parse_vector_field(["8*x2 - x1 + 0*u1", "0 - 5*x2"], (2, 1, 0))
    net = build_linear_relu_net(np.zeros((1, 2)))
    return ClosedLoopSystem(field, net), IntervalVector(np.zeros(0), np.zeros(0))
